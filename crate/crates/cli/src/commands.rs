//! Command dispatch: forward, invert, xray, smatrix, verify.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use relscat_core::inverse::{layer_strip, StripOptions};
use relscat_core::potential::WINDOW_R1;
use relscat_core::scatter::{
    amplitude_table, apply_smatrix, born_prefactor, born_table, measure_convention, AmplitudeMethod,
    AmplitudeTable,
};
use relscat_core::sphere::{sh_synthesize, SphereGrid};
use relscat_core::verify::{run_verify, VerifyOptions, VerifyReport};
use relscat_core::xray::{line_integral, plane_radon_invert, weighted_geodesic, LineSpec, PlaneSpec};
use relscat_core::Error;
use serde_json::{json, Value};

use crate::config::{coefficient_map, expansion, parse_config, ConfigDoc};
use crate::output::{config_hash, error_value, exit_code, num, Sink};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Forward,
    Invert,
    Xray,
    Smatrix,
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Invert => "invert",
            Command::Xray => "xray",
            Command::Smatrix => "smatrix",
            Command::Verify => "verify",
        }
    }
}

/// A failed run: exit status plus the serialized error.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Value,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: exit_code(e.kind()), error: error_value(&e) }
    }
}

fn io_failure(context: &str, e: std::io::Error) -> Failure {
    Failure {
        code: 2,
        error: json!({ "kind": "validation", "variant": "Io", "message": format!("{context}: {e}") }),
    }
}

/// Files written and the exit status of a completed run.
#[derive(Debug)]
pub struct Completed {
    pub code: i32,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

struct Context {
    doc: ConfigDoc,
    config_dir: PathBuf,
    hash: String,
    seed: u64,
    command: Command,
}

impl Context {
    fn envelope(&self, convention: &Value, result: Value) -> Value {
        json!({
            "command": self.command.name(),
            "config_sha256": self.hash,
            "seed": self.seed,
            "energy": self.doc.energy,
            "convention": convention,
            "result": result,
        })
    }

    fn grid(&self) -> Result<Arc<SphereGrid>, Failure> {
        Ok(Arc::new(SphereGrid::with_exactness(self.doc.sphere_degree())?))
    }

    // Constant used to read amplitudes as transforms, with its record.
    fn convention(&self) -> Result<(Complex64, Value), Failure> {
        let lambda = self.doc.energy;
        if self.doc.run.measure_convention.unwrap_or(true) {
            let rec = measure_convention(lambda, &self.doc.born_config())?;
            let v = json!({ "source": "measured", "constant": [rec.measured.re, rec.measured.im], "record": rec });
            Ok((rec.measured, v))
        } else {
            let c = born_prefactor(lambda);
            Ok((Complex64::new(c, 0.0), json!({ "source": "reference", "constant": [c, 0.0] })))
        }
    }

    fn table(&self) -> Result<AmplitudeTable, Failure> {
        let grid = self.grid()?;
        let v = self.doc.potential()?;
        let lambda = self.doc.energy;
        let t = match self.doc.method() {
            AmplitudeMethod::BornAnalytic => born_table(&v, lambda, grid.clone(), grid)?,
            m => amplitude_table(&v, lambda, grid.clone(), grid, m, &self.doc.born_config())?,
        };
        Ok(t)
    }
}

/// Reads the config at `config`, runs `command`, writes artifacts into `out`.
pub fn run(command: Command, config: &Path, out: &Path, seed: u64) -> Result<Completed, Failure> {
    let text = std::fs::read_to_string(config).map_err(|e| io_failure("reading config", e))?;
    let doc = parse_config(&text)?;
    let ctx = Context {
        hash: config_hash(&doc),
        config_dir: config.parent().map(Path::to_path_buf).unwrap_or_default(),
        doc,
        seed,
        command,
    };
    let mut sink = Sink::new(out).map_err(|e| io_failure("creating output directory", e))?;
    let (code, summary) = match command {
        Command::Forward => forward(&ctx, &mut sink)?,
        Command::Invert => invert(&ctx, &mut sink)?,
        Command::Xray => xray(&ctx, &mut sink)?,
        Command::Smatrix => smatrix(&ctx, &mut sink)?,
        Command::Verify => verify(&ctx, &mut sink)?,
    };
    Ok(Completed { code, files: sink.written, summary })
}

fn write_err(e: std::io::Error) -> Failure {
    io_failure("writing artifact", e)
}

fn forward(ctx: &Context, sink: &mut Sink) -> Result<(i32, String), Failure> {
    let (_, convention) = ctx.convention()?;
    let t = ctx.table()?;
    sink.json("amplitude_table.json", ctx.envelope(&convention, t.to_json())).map_err(write_err)?;
    sink.text("amplitude_table.csv", &table_csv(&t)).map_err(write_err)?;
    let peak = t.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    Ok((0, format!("{} x {} table, provenance {}, max |f| {}", t.outgoing.len(), t.incident.len(), t.provenance.tag(), num(peak))))
}

fn table_csv(t: &AmplitudeTable) -> String {
    let mut out = String::from("i,j,theta_x,theta_y,theta_z,w_x,w_y,w_z,re,im\n");
    for (i, th) in t.outgoing.nodes().iter().enumerate() {
        for (j, w) in t.incident.nodes().iter().enumerate() {
            let f = t.get(i, j);
            let cols = [th[0], th[1], th[2], w[0], w[1], w[2], f.re, f.im].map(num);
            out.push_str(&format!("{i},{j},{}\n", cols.join(",")));
        }
    }
    out
}

fn read_table(ctx: &Context, rel: &str) -> Result<AmplitudeTable, Failure> {
    let path = ctx.config_dir.join(rel);
    let text = std::fs::read_to_string(&path).map_err(|e| io_failure(&format!("reading {}", path.display()), e))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::from(Error::Structural(format!("{}: {e}", path.display()))))?;
    let inner = value.get("result").unwrap_or(&value);
    let t = AmplitudeTable::from_json(inner)?;
    if (t.lambda - ctx.doc.energy).abs() > 1e-12 * ctx.doc.energy {
        return Err(Error::config("/run/table", format!("table energy {} differs from config energy", t.lambda)).into());
    }
    Ok(t)
}

fn invert(ctx: &Context, sink: &mut Sink) -> Result<(i32, String), Failure> {
    let (constant, convention) = ctx.convention()?;
    let t = match &ctx.doc.run.table {
        Some(rel) => read_table(ctx, rel)?,
        None => ctx.table()?,
    };
    let opts = StripOptions { binning_radius: ctx.doc.run.binning_radius, ..StripOptions::default() };
    let res = layer_strip(&t, constant, ctx.doc.run.stages.unwrap_or(2), &opts)?;
    let l_max = ctx.doc.l_max();
    let mut csv = String::from("layer,order,l,m,re,im\n");
    let layers: Vec<Value> = res
        .layers
        .iter()
        .enumerate()
        .map(|(k, layer)| {
            let a = layer.angular.resized(l_max.min(layer.angular.lmax));
            for l in 0..=a.lmax {
                for m in -(l as i64)..=(l as i64) {
                    let c = a.get(l, m);
                    csv.push_str(&format!("{k},{},{l},{m},{},{}\n", num(layer.order), num(c.re), num(c.im)));
                }
            }
            json!({ "order": layer.order, "sh_coefficients": coefficient_map(&a), "diagnostics": layer.diagnostics })
        })
        .collect();
    let summary = format!("{} layers; {}", layers.len(), res.stop_reason);
    let result = json!({ "layers": layers, "stop_reason": res.stop_reason });
    sink.json("layers.json", ctx.envelope(&convention, result)).map_err(write_err)?;
    sink.text("layers.csv", &csv).map_err(write_err)?;
    Ok((0, summary))
}

fn xray(ctx: &Context, sink: &mut Sink) -> Result<(i32, String), Failure> {
    let (_, convention) = ctx.convention()?;
    let v = ctx.doc.potential()?;
    let lines = ctx.doc.run.lines.clone().unwrap_or_default();
    let planes = ctx.doc.run.planes.clone().unwrap_or_default();
    let mut csv = String::from("index,dir_x,dir_y,dir_z,off_x,off_y,off_z,value,error,window_contaminated,homogeneous_part\n");
    let mut line_rows = Vec::new();
    for (k, lc) in lines.iter().enumerate() {
        let spec = LineSpec::new(lc.direction, lc.offset)
            .map_err(|e| Error::config(format!("/run/lines/{k}"), e.to_string()))?;
        let li = line_integral(&v, &spec)?;
        // sum over layers of |b|^{1-m} I(theta, b/|b|), exact once the line clears the window
        let o = lc.offset;
        let r = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt();
        let homogeneous = if r > WINDOW_R1 {
            let w = [lc.offset[0] / r, lc.offset[1] / r, lc.offset[2] / r];
            let mut s = 0.0;
            for layer in &v.layers {
                s += r.powf(1.0 - layer.order) * weighted_geodesic(&layer.angular, layer.order, lc.direction, w)?;
            }
            Some(s)
        } else {
            None
        };
        let d = lc.direction;
        csv.push_str(&format!(
            "{k},{},{},{},{},{},{},{},{},{},{}\n",
            num(d[0]),
            num(d[1]),
            num(d[2]),
            num(o[0]),
            num(o[1]),
            num(o[2]),
            num(li.value),
            num(li.error),
            li.window_contaminated,
            homogeneous.map(num).unwrap_or_default()
        ));
        line_rows.push(json!({ "line": spec, "integral": li, "homogeneous_part": homogeneous }));
    }
    sink.text("lines.csv", &csv).map_err(write_err)?;
    let mut plane_rows = Vec::new();
    for (k, pc) in planes.iter().enumerate() {
        let spec = PlaneSpec::new(pc.normal, pc.offset)
            .map_err(|e| Error::config(format!("/run/planes/{k}"), e.to_string()))?;
        let rec = plane_radon_invert(&v, &spec, pc.resolution)?;
        let n = rec.coords.len();
        let mut pcsv = String::from("u,v,reconstructed,direct\n");
        for (row, vv) in rec.coords.iter().enumerate() {
            for (col, uu) in rec.coords.iter().enumerate() {
                let idx = row * n + col;
                pcsv.push_str(&format!("{},{},{},{}\n", num(*uu), num(*vv), num(rec.values[idx]), num(rec.direct[idx])));
            }
        }
        sink.text(&format!("plane_{k}.csv"), &pcsv).map_err(write_err)?;
        plane_rows.push(json!({
            "plane": spec,
            "resolution": pc.resolution,
            "rel_l2_error": rec.rel_l2_error,
            "patch_radius": rec.patch_radius,
        }));
    }
    let summary = format!("{} lines, {} planes", line_rows.len(), plane_rows.len());
    sink.json("xray.json", ctx.envelope(&convention, json!({ "lines": line_rows, "planes": plane_rows })))
        .map_err(write_err)?;
    Ok((0, summary))
}

fn smatrix(ctx: &Context, sink: &mut Sink) -> Result<(i32, String), Failure> {
    let (_, convention) = ctx.convention()?;
    let t = ctx.table()?;
    let density = ctx.doc.run.density.clone().unwrap_or_default();
    let e = expansion(&density, "/run/density")?;
    let h = sh_synthesize(&e, t.incident.clone());
    let sh = apply_smatrix(&t, &h)?;
    let mut csv = String::from("i,theta_x,theta_y,theta_z,h_re,h_im,sh_re,sh_im\n");
    for (i, th) in t.outgoing.nodes().iter().enumerate() {
        let (a, b) = (h.values[i], sh.values[i]);
        let cols = [th[0], th[1], th[2], a.re, a.im, b.re, b.im].map(num);
        csv.push_str(&format!("{i},{}\n", cols.join(",")));
    }
    sink.text("smatrix.csv", &csv).map_err(write_err)?;
    let result = json!({
        "grid": t.outgoing.spec(),
        "provenance": t.provenance.tag(),
        "h": h.values.iter().map(|v| [v.re, v.im]).collect::<Vec<_>>(),
        "s_h": sh.values.iter().map(|v| [v.re, v.im]).collect::<Vec<_>>(),
    });
    sink.json("smatrix.json", ctx.envelope(&convention, result)).map_err(write_err)?;
    Ok((0, format!("S h on {} directions, |h| {}, |S h| {}", h.values.len(), num(h.l2_norm()), num(sh.l2_norm()))))
}

fn verify(ctx: &Context, sink: &mut Sink) -> Result<(i32, String), Failure> {
    let mut opts = VerifyOptions::default_for(ctx.doc.energy);
    opts.seed = ctx.seed;
    opts.born = ctx.doc.born_config();
    opts.checks = ctx.doc.run.checks.clone();
    let report: VerifyReport = run_verify(&opts)?;
    let convention = match &report.convention {
        Some(rec) => json!({ "source": "measured", "constant": [rec.measured.re, rec.measured.im], "record": rec }),
        None => ctx.convention()?.1,
    };
    let mut csv = String::from("name,passed,value,tolerance\n");
    for c in &report.checks {
        csv.push_str(&format!("{},{},{},{}\n", c.name, c.passed, num(c.value), num(c.tolerance)));
    }
    let value = serde_json::to_value(&report).expect("report serializes");
    sink.json("verify.json", ctx.envelope(&convention, value)).map_err(write_err)?;
    sink.text("verify.csv", &csv).map_err(write_err)?;
    let summary = report.summary();
    sink.text("verify.txt", &summary).map_err(write_err)?;
    Ok((if report.passed { 0 } else { 4 }, summary))
}
