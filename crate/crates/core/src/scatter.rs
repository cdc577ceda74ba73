//! Forward scattering: Born series on the grid, amplitude extraction by the
//! far-field and volume-integral routes, scattering matrix and the boundary
//! pairing check.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freefield::{
    farfield_fit, free_resolvent_plus, radiate, shell_radii, source_window, FarField,
    RadialSamples, ResolventParams, VolumeField, FIT_TERMS, SOURCE_RADIUS,
};
use crate::potential::{norm, GaussianBump, PolyhomPotential};
use crate::quad::gl_panel;
use crate::sphere::{sh_analyze, sh_synthesize, GridSpec, SphereFn, SphereGrid, Vec3};

/// Born prefactor c in f(theta, w) = c Vhat(lambda (theta - w)).
pub fn born_prefactor(lambda: f64) -> f64 {
    -lambda / (2.0 * PI)
}

/// Grid and series settings shared by the grid-based routes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BornConfig {
    pub n: usize,
    pub half_width: f64,
    /// Largest accepted contraction ratio.
    pub gate: f64,
    /// Far-field shell lambda r in [shell.0, shell.1].
    pub shell: (f64, f64),
    pub shell_radii: usize,
    pub fit_tolerance: f64,
    /// Absorption schedule; None uses the resolvent default.
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
}

impl BornConfig {
    /// N = 256, L = 24 / lambda.
    pub fn default_for(lambda: f64) -> Self {
        BornConfig {
            n: 256,
            half_width: 24.0 / lambda,
            gate: 0.5,
            shell: (40.0, 80.0),
            shell_radii: 12,
            fit_tolerance: 1e-3,
            epsilons: None,
        }
    }

    pub fn with_grid(mut self, n: usize, half_width: f64) -> Self {
        self.n = n;
        self.half_width = half_width;
        self
    }

    pub fn resolvent_params(&self, lambda: f64) -> Result<ResolventParams> {
        match &self.epsilons {
            None => Ok(ResolventParams::default_for(lambda, self.half_width)),
            Some(eps) => {
                let p = ResolventParams { lambda, epsilons: eps.clone(), order: eps.len().saturating_sub(1) };
                p.validate(self.half_width)?;
                Ok(p)
            }
        }
    }
}

/// Diagnostics of a truncated Born series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BornReport {
    pub order: usize,
    /// ||t_j|| on the source ball, t_j = (R0+ V)^{j-1} R0+ V Phi0.
    pub term_norms: Vec<f64>,
    /// Largest ratio of consecutive term norms (None for N = 1).
    pub contraction: Option<f64>,
    pub accepted: bool,
    /// Largest extrapolation residual over the resolvent calls.
    pub resolvent_residual: f64,
}

fn plane_wave(n: usize, l: f64, lambda: f64, w: Vec3) -> Result<VolumeField> {
    VolumeField::from_fn(n, l, |x| {
        Complex64::from_polar(1.0, lambda * (x[0] * w[0] + x[1] * w[1] + x[2] * w[2]))
    })
}

/// chi V sampled on the grid, chi the resolvent source window.
pub fn windowed_potential(v: &PolyhomPotential, n: usize, l: f64) -> Result<VolumeField> {
    VolumeField::from_fn(n, l, |x| Complex64::new(v.eval(x) * source_window(x, l), 0.0))
}

fn unit(w: Vec3) -> Result<Vec3> {
    let r = norm(w);
    if !(r.is_finite() && (r - 1.0).abs() < 1e-9) {
        return Err(Error::Invalid("incident direction must be a unit vector".into()));
    }
    Ok(w)
}

/// Series terms and their partial sum w_N for incident direction w.
struct BornSeries {
    vw: VolumeField,
    phi0: VolumeField,
    /// Partial sums w_0 = 0, w_1, ..., w_N.
    sums: Vec<VolumeField>,
    report: BornReport,
}

fn born_series(
    v: &PolyhomPotential,
    lambda: f64,
    w: Vec3,
    order: usize,
    cfg: &BornConfig,
    keep_sums: bool,
) -> Result<BornSeries> {
    if order == 0 {
        return Err(Error::Invalid("Born order must be at least 1".into()));
    }
    let w = unit(w)?;
    let l = cfg.half_width;
    let vw = windowed_potential(v, cfg.n, l)?;
    let phi0 = plane_wave(cfg.n, l, lambda, w)?;
    vw.check_resolution(lambda)?;
    let params = cfg.resolvent_params(lambda)?;
    let ball = SOURCE_RADIUS * l;
    let mut term = phi0.clone();
    let mut sum = VolumeField::zeros(cfg.n, l)?;
    let mut sums = vec![sum.clone()];
    let mut norms = Vec::with_capacity(order);
    let mut resolvent_residual: f64 = 0.0;
    for j in 1..=order {
        let out = free_resolvent_plus(&vw.mul(&term)?, &params)?;
        resolvent_residual = resolvent_residual.max(out.residual);
        term = out.field;
        norms.push(term.norm_in_ball(ball));
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        sum = sum.axpby(Complex64::new(1.0, 0.0), &term, Complex64::new(sign, 0.0))?;
        if keep_sums || j == order {
            sums.push(sum.clone());
        }
        if j >= 2 {
            let ratio = norms[j - 1] / norms[j - 2];
            if ratio.is_finite() && ratio >= 1.0 {
                return Err(Error::Divergence(format!(
                    "Born term ratio {ratio:.3} >= 1; scale the potential down or check for an eigenvalue"
                )));
            }
        }
    }
    let contraction = (order >= 2).then(|| {
        norms
            .windows(2)
            .map(|p| if p[0] > 0.0 { p[1] / p[0] } else { 0.0 })
            .fold(0.0, f64::max)
    });
    let accepted = contraction.map_or(true, |c| c < cfg.gate);
    Ok(BornSeries {
        vw,
        phi0,
        sums,
        report: BornReport { order, term_norms: norms, contraction, accepted, resolvent_residual },
    })
}

/// w_N = sum_{j=1}^N (-1)^{j-1} (R0+ V)^{j-1} R0+ V Phi0 with the report;
/// the distorted wave is Phi0 - w_N. V is windowed to the source ball.
pub fn born_field(
    v: &PolyhomPotential,
    lambda: f64,
    w: Vec3,
    order: usize,
    cfg: &BornConfig,
) -> Result<(VolumeField, BornReport)> {
    let mut s = born_series(v, lambda, w, order, cfg, false)?;
    let field = s.sums.pop().expect("series has a final sum");
    Ok((field, s.report))
}

/// Phi0 - w_N on the grid.
pub fn distorted_wave(
    v: &PolyhomPotential,
    lambda: f64,
    w: Vec3,
    order: usize,
    cfg: &BornConfig,
) -> Result<(VolumeField, BornReport)> {
    let s = born_series(v, lambda, w, order, cfg, false)?;
    let wn = s.sums.last().expect("series has a final sum");
    Ok((s.phi0.axpby(Complex64::new(1.0, 0.0), wn, Complex64::new(-1.0, 0.0))?, s.report))
}

/// Amplitude on an outgoing grid with fit diagnostics.
#[derive(Debug, Clone)]
pub struct AmplitudeColumn {
    pub values: SphereFn,
    pub fit_residual: f64,
    pub report: BornReport,
}

/// Scattering amplitude f(., w) as minus the outgoing coefficient of the
/// order-N scattered field, radiated to the shell and fitted.
pub fn amplitude_farfield(
    v: &PolyhomPotential,
    lambda: f64,
    w: Vec3,
    order: usize,
    out_grid: Arc<SphereGrid>,
    cfg: &BornConfig,
) -> Result<AmplitudeColumn> {
    if order == 0 {
        return Err(Error::Invalid("Born order must be at least 1".into()));
    }
    let w = unit(w)?;
    // the order-N field is R0+ s with s = chi V (Phi0 - w_{N-1})
    let (source, report) = if order == 1 {
        let l = cfg.half_width;
        let src = VolumeField::from_fn(cfg.n, l, |x| {
            let phase = lambda * (x[0] * w[0] + x[1] * w[1] + x[2] * w[2]);
            Complex64::from_polar(v.eval(x) * source_window(x, l), phase)
        })?;
        src.check_resolution(lambda)?;
        let report = BornReport {
            order: 1,
            term_norms: Vec::new(),
            contraction: None,
            accepted: true,
            resolvent_residual: 0.0,
        };
        (src, report)
    } else {
        let s = born_series(v, lambda, w, order - 1, cfg, false)?;
        let wn = s.sums.last().expect("series has a final sum");
        let dist = s.phi0.axpby(Complex64::new(1.0, 0.0), wn, Complex64::new(-1.0, 0.0))?;
        let mut report = s.report;
        report.order = order;
        (s.vw.mul(&dist)?, report)
    };
    if !report.accepted {
        return Err(Error::Divergence(format!(
            "contraction ratio {:.3} above the gate {}",
            report.contraction.unwrap_or(f64::NAN),
            cfg.gate
        )));
    }
    let radii = shell_radii(lambda, cfg.shell.0, cfg.shell.1, cfg.shell_radii);
    let samples = RadialSamples::from_fn(out_grid, radii, |p| radiate(&source, lambda, p))?;
    let ff = farfield_fit(&samples, lambda, FIT_TERMS)?;
    if ff.residual > cfg.fit_tolerance {
        return Err(Error::Precision(format!(
            "far-field fit residual {:e} above {:e}",
            ff.residual, cfg.fit_tolerance
        )));
    }
    let values = SphereFn::new(ff.g_plus.grid.clone(), ff.g_plus.values.iter().map(|g| -g).collect())?;
    Ok(AmplitudeColumn { values, fit_residual: ff.residual, report })
}

/// Volume-integral amplitude with its truncation bound.
#[derive(Debug, Clone)]
pub struct IntegralAmplitude {
    pub values: SphereFn,
    /// Bound on the contribution of (1 - chi) V dropped by the grid.
    pub tail_bound: f64,
}

/// sup |V| integrated outside radius r0, by the decay bound or the Gaussian.
fn tail_integral(v: &PolyhomPotential, r0: f64) -> f64 {
    let mut total = 0.0;
    if let Some(m) = v.leading_order() {
        let c: f64 = v.layers.iter().map(|l| 2f64.powf(m / 2.0) * l.angular_bound()).sum();
        total += if m > 3.0 { 4.0 * PI * c * r0.powf(3.0 - m) / (m - 3.0) } else { f64::INFINITY };
    }
    if let Some(b) = &v.remainder {
        let cn = norm(b.center);
        let start = (r0 - cn).max(0.0);
        let s = b.width;
        total += b.amplitude.abs()
            * 4.0
            * PI
            * gl_panel(start, start + 12.0 * s, 80, |t: f64| {
                (t + cn).powi(2) * (-t * t / (2.0 * s * s)).exp()
            });
    }
    total
}

/// f(theta) = -(lambda / 2 pi) sum h^3 e^{-i lambda theta.y} chi V Phi.
pub fn amplitude_integral(
    v: &PolyhomPotential,
    phi: &VolumeField,
    lambda: f64,
    out_grid: Arc<SphereGrid>,
    tolerance: f64,
) -> Result<IntegralAmplitude> {
    let l = phi.half_width();
    let h3 = phi.spacing().powi(3);
    let src: Vec<(Vec3, Complex64)> = (0..phi.values.len())
        .into_par_iter()
        .filter_map(|i| {
            let x = phi.point(i);
            let chi = source_window(x, l);
            if chi == 0.0 {
                return None;
            }
            let s = phi.values[i] * (v.eval(x) * chi * h3);
            (s.norm() > 0.0).then_some((x, s))
        })
        .collect();
    let c = born_prefactor(lambda);
    let values: Vec<Complex64> = out_grid
        .nodes()
        .par_iter()
        .map(|t| {
            let s: Complex64 = src
                .iter()
                .map(|(y, s)| s * Complex64::from_polar(1.0, -lambda * (t[0] * y[0] + t[1] * y[1] + t[2] * y[2])))
                .sum();
            s * c
        })
        .collect();
    let phi_max = phi.values.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let tail_bound = c.abs() * phi_max * tail_integral(v, 0.35 * l);
    let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if tail_bound > tolerance * scale.max(f64::MIN_POSITIVE) && tail_bound > 0.0 {
        return Err(Error::Precision(format!(
            "truncation tail bound {tail_bound:e} exceeds {tolerance} of the amplitude scale {scale:e}"
        )));
    }
    Ok(IntegralAmplitude { values: SphereFn::new(out_grid, values)?, tail_bound })
}

/// How table entries were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Analytic Born approximation c Vhat(lambda (theta - w)).
    Born1,
    /// Volume integral against the order-N distorted wave.
    BornN(usize),
    /// Far-field fit of the order-N scattered field.
    FarFieldFit(usize),
}

impl Provenance {
    pub fn tag(&self) -> String {
        match self {
            Provenance::Born1 => "born-1".into(),
            Provenance::BornN(n) => format!("born-{n}"),
            Provenance::FarFieldFit(_) => "farfield-fit".into(),
        }
    }
}

/// Route used by `amplitude_table`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum AmplitudeMethod {
    BornAnalytic,
    Integral { order: usize },
    FarField { order: usize },
}

/// f(theta_i, w_j) on outgoing x incident grids, stored row-major in theta.
#[derive(Debug, Clone)]
pub struct AmplitudeTable {
    pub lambda: f64,
    pub outgoing: Arc<SphereGrid>,
    pub incident: Arc<SphereGrid>,
    pub values: Vec<Complex64>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct TableJson {
    energy: f64,
    provenance: String,
    outgoing: GridSpec,
    incident: GridSpec,
    /// values[i][j] = [re, im] of f(theta_i, w_j).
    values: Vec<Vec<[f64; 2]>>,
}

impl AmplitudeTable {
    pub fn new(
        lambda: f64,
        outgoing: Arc<SphereGrid>,
        incident: Arc<SphereGrid>,
        values: Vec<Complex64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if values.len() != outgoing.len() * incident.len() {
            return Err(Error::Structural("table size does not match its grids".into()));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Structural("table has non-finite entries".into()));
        }
        Ok(AmplitudeTable { lambda, outgoing, incident, values, provenance })
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.incident.len() + j]
    }

    pub fn to_json(&self) -> serde_json::Value {
        let nj = self.incident.len();
        let t = TableJson {
            energy: self.lambda,
            provenance: self.provenance.tag(),
            outgoing: self.outgoing.spec(),
            incident: self.incident.spec(),
            values: self.values.chunks(nj).map(|row| row.iter().map(|v| [v.re, v.im]).collect()).collect(),
        };
        serde_json::to_value(t).expect("table serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let t: TableJson = serde_json::from_value(value.clone())
            .map_err(|e| Error::Structural(format!("amplitude table: {e}")))?;
        let provenance = match t.provenance.as_str() {
            "born-1" => Provenance::Born1,
            "farfield-fit" => Provenance::FarFieldFit(0),
            tag => match tag.strip_prefix("born-").and_then(|n| n.parse().ok()) {
                Some(n) => Provenance::BornN(n),
                None => return Err(Error::Structural(format!("unknown provenance {tag}"))),
            },
        };
        let outgoing = Arc::new(SphereGrid::from_spec(&t.outgoing)?);
        let incident = Arc::new(SphereGrid::from_spec(&t.incident)?);
        if t.values.len() != outgoing.len() || t.values.iter().any(|r| r.len() != incident.len()) {
            return Err(Error::Structural("table rows do not match its grids".into()));
        }
        let values = t.values.iter().flatten().map(|v| Complex64::new(v[0], v[1])).collect();
        Self::new(t.energy, outgoing, incident, values, provenance)
    }

    /// Flat theta, w, re, im rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta_x,theta_y,theta_z,w_x,w_y,w_z,re,im\n");
        for (i, t) in self.outgoing.nodes().iter().enumerate() {
            for (j, w) in self.incident.nodes().iter().enumerate() {
                let f = self.get(i, j);
                out.push_str(&format!(
                    "{},{},{},{},{},{},{:e},{:e}\n",
                    t[0], t[1], t[2], w[0], w[1], w[2], f.re, f.im
                ));
            }
        }
        out
    }

    /// max |f(theta, w) - f(-w, -theta)| relative to max |f|; needs equal
    /// antipodal grids.
    pub fn reciprocity_defect(&self) -> Result<f64> {
        same_grid(&self.outgoing, &self.incident)?;
        let anti = self
            .incident
            .antipode()
            .ok_or_else(|| Error::Structural("grid has no antipodal map".into()))?;
        let n = self.incident.len();
        let scale = self.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return Ok(0.0);
        }
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.get(i, j) - self.get(anti[j], anti[i])).norm());
            }
        }
        Ok(worst / scale)
    }
}

fn same_grid(a: &SphereGrid, b: &SphereGrid) -> Result<()> {
    if a != b {
        return Err(Error::Structural("outgoing and incident grids differ".into()));
    }
    Ok(())
}

/// Born-level table c Vhat(lambda (theta_i - w_j)).
pub fn born_table(
    v: &PolyhomPotential,
    lambda: f64,
    incident: Arc<SphereGrid>,
    outgoing: Arc<SphereGrid>,
) -> Result<AmplitudeTable> {
    let mut xis = Vec::with_capacity(outgoing.len() * incident.len());
    for t in outgoing.nodes() {
        for w in incident.nodes() {
            xis.push([lambda * (t[0] - w[0]), lambda * (t[1] - w[1]), lambda * (t[2] - w[2])]);
        }
    }
    let c = born_prefactor(lambda);
    let values = v.fourier_hat_many(&xis)?.into_iter().map(|f| f * c).collect();
    AmplitudeTable::new(lambda, outgoing, incident, values, Provenance::Born1)
}

/// Assembles f over incident directions; failed columns are listed in the error.
pub fn amplitude_table(
    v: &PolyhomPotential,
    lambda: f64,
    incident: Arc<SphereGrid>,
    outgoing: Arc<SphereGrid>,
    method: AmplitudeMethod,
    cfg: &BornConfig,
) -> Result<AmplitudeTable> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Invalid("energy must be positive".into()));
    }
    let (columns, provenance) = match method {
        AmplitudeMethod::BornAnalytic => return born_table(v, lambda, incident, outgoing),
        AmplitudeMethod::FarField { order } => {
            let cols: Vec<Result<Vec<Complex64>>> = incident
                .nodes()
                .iter()
                .map(|w| amplitude_farfield(v, lambda, *w, order, outgoing.clone(), cfg).map(|c| c.values.values))
                .collect();
            (cols, Provenance::FarFieldFit(order))
        }
        AmplitudeMethod::Integral { order } => {
            let cols = incident
                .nodes()
                .iter()
                .map(|w| {
                    let (phi, _) = if order == 1 {
                        let p = plane_wave(cfg.n, cfg.half_width, lambda, *w)?;
                        (p, None)
                    } else {
                        let (p, r) = distorted_wave(v, lambda, *w, order - 1, cfg)?;
                        (p, Some(r))
                    };
                    amplitude_integral(v, &phi, lambda, outgoing.clone(), cfg.fit_tolerance.max(1e-2))
                        .map(|a| a.values.values)
                })
                .collect();
            (cols, Provenance::BornN(order))
        }
    };
    let failures: Vec<String> = columns
        .iter()
        .enumerate()
        .filter_map(|(j, c)| c.as_ref().err().map(|e| format!("column {j}: {e}")))
        .collect();
    if !failures.is_empty() {
        let first = columns.into_iter().find_map(|c| c.err()).expect("a failure exists");
        let summary = format!("{} of {} columns failed; {}", failures.len(), incident.len(), failures.join("; "));
        return Err(match first.kind() {
            crate::error::ErrorKind::Validation => Error::Invalid(summary),
            _ => Error::NonConvergence(summary),
        });
    }
    let ni = outgoing.len();
    let nj = incident.len();
    let cols: Vec<Vec<Complex64>> = columns.into_iter().map(|c| c.expect("checked")).collect();
    let mut values = vec![Complex64::new(0.0, 0.0); ni * nj];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..ni {
            values[i * nj + j] = col[i];
        }
    }
    AmplitudeTable::new(lambda, outgoing, incident, values, provenance)
}

/// h'(theta) = -h(-theta) + sum_j w_j f(theta, w_j) h(-w_j).
pub fn apply_smatrix(table: &AmplitudeTable, h: &SphereFn) -> Result<SphereFn> {
    same_grid(&table.outgoing, &table.incident)?;
    same_grid(&h.grid, &table.incident)?;
    let hr = h.reflect()?;
    let weights = table.incident.weights();
    let nj = table.incident.len();
    let values = (0..table.outgoing.len())
        .map(|i| {
            let s: Complex64 = (0..nj).map(|j| table.get(i, j) * hr.values[j] * weights[j]).sum();
            s - hr.values[i]
        })
        .collect();
    SphereFn::new(h.grid.clone(), values)
}

/// Measured amplitude convention and the candidate constants it is compared to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConventionRecord {
    pub lambda: f64,
    /// Least-squares c in f_farfield = c Vhat(lambda (theta - w)).
    pub measured: Complex64,
    /// Constant used downstream, -lambda / (2 pi).
    pub reference: f64,
    /// -i lambda / (2 pi)^2.
    pub reference_candidate: Complex64,
    /// Relative L2 misfit of f_farfield - c Vhat outside the forward cone.
    pub route_error: f64,
    /// Relative L2 difference between the far-field and integral routes.
    pub route_agreement: f64,
    pub fit_residual: f64,
}

/// Nodes at least `cone_deg` degrees away from w.
pub fn outside_cone(grid: &SphereGrid, w: Vec3, cone_deg: f64) -> Vec<usize> {
    let c = cone_deg.to_radians().cos();
    grid.nodes()
        .iter()
        .enumerate()
        .filter(|(_, t)| t[0] * w[0] + t[1] * w[1] + t[2] * w[2] < c)
        .map(|(i, _)| i)
        .collect()
}

/// Relative weighted L2 distance of a from b over the listed nodes.
pub fn relative_l2(grid: &SphereGrid, a: &[Complex64], b: &[Complex64], idx: &[usize]) -> f64 {
    let w = grid.weights();
    let num: f64 = idx.iter().map(|&i| (a[i] - b[i]).norm_sqr() * w[i]).sum();
    let den: f64 = idx.iter().map(|&i| b[i].norm_sqr() * w[i]).sum();
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}

/// Off-center Gaussian used to fix the convention.
pub fn convention_probe_potential(lambda: f64) -> PolyhomPotential {
    let s = 1.0 / lambda;
    PolyhomPotential::new(
        Vec::new(),
        Some(GaussianBump { center: [0.4 * s, -0.3 * s, 0.2 * s], width: s, amplitude: 0.05 * lambda }),
    )
    .expect("probe potential is valid")
}

/// Measures the Born prefactor on the probe Gaussian: far-field route at
/// N = 1 against the analytic transform and against the integral route.
pub fn measure_convention(lambda: f64, cfg: &BornConfig) -> Result<ConventionRecord> {
    let v = convention_probe_potential(lambda);
    let grid = Arc::new(SphereGrid::with_exactness(10)?);
    let w = [0.0, 0.0, 1.0];
    let ff = amplitude_farfield(&v, lambda, w, 1, grid.clone(), cfg)?;
    let xis: Vec<Vec3> = grid
        .nodes()
        .iter()
        .map(|t| [lambda * (t[0] - w[0]), lambda * (t[1] - w[1]), lambda * (t[2] - w[2])])
        .collect();
    let vhat = v.fourier_hat_many(&xis)?;
    let idx = outside_cone(&grid, w, 10.0);
    let weights = grid.weights();
    let num: Complex64 = idx.iter().map(|&i| ff.values.values[i] * vhat[i].conj() * weights[i]).sum();
    let den: f64 = idx.iter().map(|&i| vhat[i].norm_sqr() * weights[i]).sum();
    let measured = num / den;
    let model: Vec<Complex64> = vhat.iter().map(|f| f * measured).collect();
    let route_error = relative_l2(&grid, &model, &ff.values.values, &idx);
    let phi = plane_wave(cfg.n, cfg.half_width, lambda, w)?;
    let integral = amplitude_integral(&v, &phi, lambda, grid.clone(), 1e-2)?;
    let route_agreement = relative_l2(&grid, &integral.values.values, &ff.values.values, &idx);
    Ok(ConventionRecord {
        lambda,
        measured,
        reference: born_prefactor(lambda),
        reference_candidate: Complex64::new(0.0, -lambda / (4.0 * PI * PI)),
        route_error,
        route_agreement,
        fit_residual: ff.fit_residual,
    })
}

/// Settings for `boundary_pairing_residual`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingConfig {
    pub n: usize,
    /// Half width in units of 1/lambda.
    pub half_width: f64,
    pub shell: (f64, f64),
    pub shell_radii: usize,
    /// Angular degree of the far-field sampling grid.
    pub far_degree: usize,
}

impl Default for PairingConfig {
    fn default() -> Self {
        PairingConfig { n: 64, half_width: 16.0, shell: (40.0, 80.0), shell_radii: 14, far_degree: 16 }
    }
}

/// Both sides of the pairing identity and their relative mismatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingReport {
    pub lhs: Complex64,
    pub rhs: Complex64,
    pub delta: f64,
    pub residual: f64,
    pub fit_residual: f64,
    pub shift_constant: f64,
}

// Phi0 h at the given points, with h resampled on a grid exact to 2 lambda r_max.
fn herglotz_band_limited(lambda: f64, h: &SphereFn, points: &[Vec3]) -> Result<Vec<Complex64>> {
    let lmax = h.grid.max_analysis_degree();
    let e = sh_analyze(h, lmax)?;
    let scale = e.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let e = e.resized(e.effective_degree(1e-13 * scale));
    let rmax = points.iter().map(|p| norm(*p)).fold(0.0, f64::max);
    let degree = (2.0 * lambda * rmax).ceil() as usize + 2 * e.lmax + 2;
    let fine = Arc::new(SphereGrid::with_exactness(degree)?);
    let hf = sh_synthesize(&e, fine);
    crate::freefield::herglotz(lambda, &hf, points)
}

fn inner_sphere(grid: &SphereGrid, a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).zip(grid.weights()).map(|((x, y), w)| x * y.conj() * *w).sum()
}

/// |LHS - RHS| / (|LHS| + |RHS| + delta) for u+- = Phi0 h+- - R0+(V Phi0 h+-),
/// LHS = <u+, (H0 - lambda) u-> - <(H0 - lambda) u+, u->,
/// RHS = 2 i lambda c (<g++, g-+> - <g+-, g-->), c the shifted-resolvent constant.
pub fn boundary_pairing_residual(
    h_plus: &SphereFn,
    h_minus: &SphereFn,
    v: &PolyhomPotential,
    lambda: f64,
    shift_constant: f64,
    cfg: &PairingConfig,
) -> Result<PairingReport> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Invalid("energy must be positive".into()));
    }
    let zero = Complex64::new(0.0, 0.0);
    if h_plus.values.iter().chain(&h_minus.values).all(|v| v.norm() == 0.0) {
        return Ok(PairingReport {
            lhs: zero,
            rhs: zero,
            delta: 0.0,
            residual: 0.0,
            fit_residual: 0.0,
            shift_constant,
        });
    }
    let l = cfg.half_width / lambda;
    let n = cfg.n;
    let vw = windowed_potential(v, n, l)?;
    vw.check_resolution(lambda)?;
    let support: Vec<usize> = (0..vw.values.len()).filter(|&i| vw.values[i].norm() > 0.0).collect();
    let far_grid = Arc::new(SphereGrid::with_exactness(cfg.far_degree)?);
    let radii = shell_radii(lambda, cfg.shell.0, cfg.shell.1, cfg.shell_radii);
    let shell = RadialSamples::points(&far_grid, &radii);
    let params = ResolventParams::default_for(lambda, l);

    struct Side {
        u: Vec<Complex64>,
        f: Vec<Complex64>,
        far: FarField,
    }
    let side = |h: &SphereFn| -> Result<Side> {
        let pts: Vec<Vec3> = support.iter().map(|&i| vw.point(i)).collect();
        let phi = herglotz_band_limited(lambda, h, &pts)?;
        let mut src = VolumeField::zeros(n, l)?;
        for (k, &i) in support.iter().enumerate() {
            src.values[i] = vw.values[i] * phi[k];
        }
        let mut far_vals = herglotz_band_limited(lambda, h, &shell)?;
        let mut u: Vec<Complex64> = phi.clone();
        let f: Vec<Complex64> = support.iter().map(|&i| -src.values[i]).collect();
        if !support.is_empty() {
            let r = free_resolvent_plus(&src, &params)?;
            for (k, &i) in support.iter().enumerate() {
                u[k] -= r.field.values[i];
            }
            let rad = radiate(&src, lambda, &shell)?;
            for (a, b) in far_vals.iter_mut().zip(rad) {
                *a -= b;
            }
        }
        let far = farfield_fit(
            &RadialSamples { grid: far_grid.clone(), radii: radii.clone(), values: far_vals },
            lambda,
            FIT_TERMS,
        )?;
        Ok(Side { u, f, far })
    };
    let p = side(h_plus)?;
    let m = side(h_minus)?;
    let h3 = vw.spacing().powi(3);
    let dot = |a: &[Complex64], b: &[Complex64]| -> Complex64 {
        a.iter().zip(b).map(|(x, y)| x * y.conj()).sum::<Complex64>() * h3
    };
    let lhs = dot(&p.u, &m.f) - dot(&p.f, &m.u);
    let g = &far_grid;
    let out = inner_sphere(g, &p.far.g_plus.values, &m.far.g_plus.values);
    let inc = inner_sphere(g, &p.far.g_minus.values, &m.far.g_minus.values);
    let rhs = Complex64::new(0.0, 2.0 * lambda * shift_constant) * (out - inc);
    let scale = p.far.g_plus.l2_norm() * m.far.g_plus.l2_norm()
        + p.far.g_minus.l2_norm() * m.far.g_minus.l2_norm();
    let delta = 1e-3 * scale;
    let den = lhs.norm() + rhs.norm() + delta;
    let residual = if den == 0.0 { 0.0 } else { (lhs - rhs).norm() / den };
    Ok(PairingReport {
        lhs,
        rhs,
        delta,
        residual,
        fit_residual: p.far.residual.max(m.far.residual),
        shift_constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::ShExpansion;

    fn small_cfg(lambda: f64) -> BornConfig {
        BornConfig::default_for(lambda).with_grid(64, 14.0 / lambda)
    }

    fn gaussian(amp: f64) -> PolyhomPotential {
        PolyhomPotential::new(
            Vec::new(),
            Some(GaussianBump { center: [0.3, 0.0, -0.2], width: 0.8, amplitude: amp }),
        )
        .unwrap()
    }

    #[test]
    fn zero_potential_scatters_nothing() {
        let cfg = small_cfg(1.0);
        let (w, rep) = born_field(&PolyhomPotential::zero(), 1.0, [0.0, 0.0, 1.0], 2, &cfg).unwrap();
        assert!(w.values.iter().all(|v| v.norm() == 0.0));
        assert_eq!(rep.term_norms, vec![0.0, 0.0]);
        let g = Arc::new(SphereGrid::with_exactness(4).unwrap());
        let t = born_table(&PolyhomPotential::zero(), 1.0, g.clone(), g).unwrap();
        assert!(t.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn first_order_is_one_resolvent() {
        let cfg = small_cfg(1.0);
        let v = gaussian(0.2);
        let (w1, _) = born_field(&v, 1.0, [1.0, 0.0, 0.0], 1, &cfg).unwrap();
        let vw = windowed_potential(&v, 64, cfg.half_width).unwrap();
        let phi = plane_wave(64, cfg.half_width, 1.0, [1.0, 0.0, 0.0]).unwrap();
        let direct =
            free_resolvent_plus(&vw.mul(&phi).unwrap(), &ResolventParams::default_for(1.0, cfg.half_width)).unwrap();
        assert_eq!(w1.values, direct.field.values);
    }

    #[test]
    fn series_tail_follows_contraction() {
        let cfg = small_cfg(1.0);
        let v = gaussian(0.3);
        let s = born_series(&v, 1.0, [0.0, 1.0, 0.0], 3, &cfg, true).unwrap();
        let rho = s.report.contraction.unwrap();
        assert!(rho < 0.5 && rho > 0.0);
        let ball = SOURCE_RADIUS * cfg.half_width;
        let d = s.sums[3].axpby(Complex64::new(1.0, 0.0), &s.sums[2], Complex64::new(-1.0, 0.0)).unwrap();
        let ratio = d.norm_in_ball(ball) / s.sums[2].norm_in_ball(ball);
        assert!(ratio <= 2.0 * rho * rho, "{ratio} vs {rho}");
    }

    #[test]
    fn strong_potential_diverges() {
        let cfg = small_cfg(1.0);
        let r = born_field(&gaussian(40.0), 1.0, [0.0, 0.0, 1.0], 3, &cfg);
        assert!(matches!(r, Err(Error::Divergence(_))));
    }

    #[test]
    fn born_routes_agree_on_small_grid() {
        let lambda = 1.0;
        let cfg = small_cfg(lambda);
        let v = gaussian(0.1);
        let grid = Arc::new(SphereGrid::with_exactness(6).unwrap());
        let w = [0.0, 0.0, 1.0];
        let ff = amplitude_farfield(&v, lambda, w, 1, grid.clone(), &cfg).unwrap();
        let bt = born_table(&v, lambda, Arc::new(SphereGrid::from_nodes(vec![w], vec![4.0 * PI], 0).unwrap()), grid.clone())
            .unwrap();
        let idx = outside_cone(&grid, w, 10.0);
        assert!(relative_l2(&grid, &ff.values.values, &bt.values, &idx) < 0.02);
        let phi = plane_wave(cfg.n, cfg.half_width, lambda, w).unwrap();
        let ia = amplitude_integral(&v, &phi, lambda, grid.clone(), 1e-2).unwrap();
        assert!(relative_l2(&grid, &ia.values.values, &ff.values.values, &idx) < 0.03);
    }

    #[test]
    fn higher_order_routes_agree() {
        let lambda = 1.0;
        let cfg = small_cfg(lambda);
        let v = gaussian(0.3);
        let grid = Arc::new(SphereGrid::with_exactness(6).unwrap());
        let w = [0.0, 0.0, 1.0];
        let ff = amplitude_farfield(&v, lambda, w, 3, grid.clone(), &cfg).unwrap();
        let (phi, _) = distorted_wave(&v, lambda, w, 2, &cfg).unwrap();
        let ia = amplitude_integral(&v, &phi, lambda, grid.clone(), 1e-2).unwrap();
        let idx = outside_cone(&grid, w, 10.0);
        assert!(relative_l2(&grid, &ia.values.values, &ff.values.values, &idx) < 0.03);
    }

    fn layer(order: f64, c00: f64, c10: f64) -> crate::potential::HomLayer {
        let mut e = ShExpansion::zeros(1);
        e.set(0, 0, Complex64::new(c00, 0.0));
        e.set(1, 0, Complex64::new(c10, 0.0));
        crate::potential::HomLayer::new(order, e).unwrap()
    }

    #[test]
    fn born_table_is_linear_and_reciprocal() {
        let g = Arc::new(SphereGrid::with_exactness(5).unwrap());
        let (l1, l2) = (layer(4.5, 1.0, 0.3), layer(5.5, -0.4, 0.2));
        let bump = GaussianBump { center: [0.3, 0.0, -0.2], width: 0.8, amplitude: 0.2 };
        let v1 = PolyhomPotential::new(vec![l1.clone()], Some(bump)).unwrap();
        let v2 = PolyhomPotential::new(vec![l2.clone()], None).unwrap();
        let v12 = PolyhomPotential::new(vec![l1, l2], Some(bump)).unwrap();
        let t1 = born_table(&v1, 1.2, g.clone(), g.clone()).unwrap();
        let t2 = born_table(&v2, 1.2, g.clone(), g.clone()).unwrap();
        let t12 = born_table(&v12, 1.2, g.clone(), g.clone()).unwrap();
        let scale = t12.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for ((a, b), c) in t1.values.iter().zip(&t2.values).zip(&t12.values) {
            assert!((a + b - c).norm() < 1e-8 * scale);
        }
        let scaled = born_table(&v1.scaled(2.0), 1.2, g.clone(), g.clone()).unwrap();
        for (s, x) in scaled.values.iter().zip(&t1.values) {
            assert!((s - 2.0 * x).norm() < 1e-12 * scale);
        }
        assert!(t12.reciprocity_defect().unwrap() < 1e-10);
    }

    #[test]
    fn table_json_round_trip() {
        let g = Arc::new(SphereGrid::with_exactness(3).unwrap());
        let t = born_table(&gaussian(0.2), 1.0, g.clone(), g).unwrap();
        let back = AmplitudeTable::from_json(&t.to_json()).unwrap();
        assert_eq!(back.values, t.values);
        assert_eq!(back.provenance, Provenance::Born1);
        assert_eq!(t.to_csv().lines().count(), 1 + t.values.len());
    }

    #[test]
    fn free_smatrix_is_reflection_with_minus_sign() {
        let g = Arc::new(SphereGrid::with_exactness(6).unwrap());
        let zero = AmplitudeTable::new(1.0, g.clone(), g.clone(), vec![Complex64::new(0.0, 0.0); g.len() * g.len()], Provenance::Born1)
            .unwrap();
        let one = SphereFn::from_fn(g.clone(), |_| Complex64::new(1.0, 0.0));
        assert!(apply_smatrix(&zero, &one).unwrap().values.iter().all(|v| (v + 1.0).norm() < 1e-15));
        let mut e = ShExpansion::zeros(1);
        e.set(1, 0, Complex64::new(1.0, 0.0));
        let y10 = sh_synthesize(&e, g.clone());
        let out = apply_smatrix(&zero, &y10).unwrap();
        for (a, b) in out.values.iter().zip(&y10.values) {
            assert!((a - b).norm() < 1e-14);
        }
        let other = Arc::new(SphereGrid::with_exactness(4).unwrap());
        let h = SphereFn::from_fn(other, |_| Complex64::new(1.0, 0.0));
        assert!(matches!(apply_smatrix(&zero, &h), Err(Error::Structural(_))));
    }

    #[test]
    fn smatrix_perturbation_bound() {
        let g = Arc::new(SphereGrid::with_exactness(6).unwrap());
        let t = born_table(&gaussian(0.05), 1.0, g.clone(), g.clone()).unwrap();
        let h = SphereFn::from_fn(g.clone(), |d| Complex64::new(1.0 + d[0], d[2]));
        let sv = apply_smatrix(&t, &h).unwrap();
        let s0 = h.reflect().unwrap();
        let diff = SphereFn::new(g.clone(), sv.values.iter().zip(&s0.values).map(|(a, b)| a + b).collect()).unwrap();
        let fmax = t.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(diff.l2_norm() <= fmax * h.l2_norm() * 4.0 * PI);
    }

    #[test]
    fn pairing_zero_inputs() {
        let g = Arc::new(SphereGrid::with_exactness(4).unwrap());
        let z = SphereFn::from_fn(g, |_| Complex64::new(0.0, 0.0));
        let r = boundary_pairing_residual(&z, &z, &PolyhomPotential::zero(), 1.0, 0.5, &PairingConfig::default()).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn pairing_identity_for_perturbed_pair() {
        let g = Arc::new(SphereGrid::with_exactness(8).unwrap());
        let hp = SphereFn::from_fn(g.clone(), |d| Complex64::new(1.0 + 0.5 * d[2], 0.2 * d[0]));
        let hm = SphereFn::from_fn(g.clone(), |d| Complex64::new(0.5 - d[1], 0.3));
        let v = gaussian(0.3);
        let r = boundary_pairing_residual(&hp, &hm, &v, 1.0, 0.5, &PairingConfig::default()).unwrap();
        assert!(r.lhs.norm() > 10.0 * r.delta, "{r:?}");
        assert!(r.residual < 0.05, "{r:?}");
        let free = boundary_pairing_residual(&hp, &hm, &PolyhomPotential::zero(), 1.0, 0.5, &PairingConfig::default())
            .unwrap();
        assert!(free.residual < 0.02, "{free:?}");
    }
}
