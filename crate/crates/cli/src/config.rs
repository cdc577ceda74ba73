//! Run configuration: JSON document, defaults, validation.
//!
//! Defaults filled when a field is absent:
//!
//! | field                  | default                        |
//! |------------------------|--------------------------------|
//! | grid.n                 | 256                            |
//! | grid.half_width        | 24 / energy                    |
//! | grid.sphere_degree     | 25 (26 x 26 direction grid)    |
//! | grid.l_max             | 8                              |
//! | run.method             | born_analytic                  |
//! | run.born_order         | 1                              |
//! | run.gate               | 0.5                            |
//! | run.shell              | [40, 80] (units of 1/energy)   |
//! | run.shell_radii        | 12                             |
//! | run.fit_tolerance      | 1e-3                           |
//! | run.binning_radius     | 1e-6                           |
//! | run.epsilons           | resolvent default schedule     |
//! | run.stages             | 2                              |
//! | run.measure_convention | true                           |
//! | run.density            | {"0,0": [1, 0]}                |
//! | run.lines, run.planes  | one line at offset 2, one plane at distance 2 |
//! | run.checks             | every check                    |

use std::collections::BTreeMap;

use num_complex::Complex64;
use relscat_core::potential::{GaussianBump, HomLayer, PolyhomPotential};
use relscat_core::scatter::{AmplitudeMethod, BornConfig};
use relscat_core::sphere::ShExpansion;
use relscat_core::verify::CHECKS;
use relscat_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub energy: f64,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    #[serde(default)]
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub remainder: Option<GaussianBump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub order: f64,
    /// "l,m" -> [re, im]
    pub sh_coefficients: BTreeMap<String, [f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: Option<usize>,
    pub half_width: Option<f64>,
    pub sphere_degree: Option<usize>,
    pub l_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineConfig {
    pub direction: [f64; 3],
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneConfig {
    pub normal: [f64; 3],
    pub offset: f64,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_resolution() -> usize {
    256
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    BornAnalytic,
    Integral,
    FarField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Option<MethodName>,
    pub born_order: Option<usize>,
    pub gate: Option<f64>,
    pub shell: Option<[f64; 2]>,
    pub shell_radii: Option<usize>,
    pub fit_tolerance: Option<f64>,
    pub binning_radius: Option<f64>,
    pub epsilons: Option<Vec<f64>>,
    pub stages: Option<usize>,
    pub measure_convention: Option<bool>,
    /// Amplitude table read by `invert`, relative to the config file.
    pub table: Option<String>,
    pub density: Option<BTreeMap<String, [f64; 2]>>,
    pub lines: Option<Vec<LineConfig>>,
    pub planes: Option<Vec<PlaneConfig>>,
    pub checks: Option<Vec<String>>,
}

/// Parses and validates a config, filling every default.
pub fn parse_config(text: &str) -> Result<ConfigDoc> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut doc: ConfigDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = json_pointer(e.path());
        Error::config(pointer, e.into_inner().to_string())
    })?;
    doc.fill_defaults();
    doc.validate()?;
    Ok(doc)
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut s = String::new();
    for seg in path.iter() {
        s.push('/');
        match seg {
            Segment::Seq { index } => s.push_str(&index.to_string()),
            Segment::Map { key } => s.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => s.push_str(variant),
            Segment::Unknown => s.push('?'),
        }
    }
    s
}

fn parse_key(key: &str) -> Option<(usize, i64)> {
    let (l, m) = key.split_once(',')?;
    let l: usize = l.trim().parse().ok()?;
    let m: i64 = m.trim().parse().ok()?;
    (m.unsigned_abs() as usize <= l).then_some((l, m))
}

/// Expansion from an "l,m" -> [re, im] map.
pub fn expansion(map: &BTreeMap<String, [f64; 2]>, pointer: &str) -> Result<ShExpansion> {
    let mut entries = Vec::new();
    for (k, v) in map {
        let (l, m) = parse_key(k)
            .ok_or_else(|| Error::config(format!("{pointer}/{k}"), "key must read \"l,m\" with |m| <= l"))?;
        if !(v[0].is_finite() && v[1].is_finite()) {
            return Err(Error::config(format!("{pointer}/{k}"), "coefficient must be finite"));
        }
        entries.push((l, m, Complex64::new(v[0], v[1])));
    }
    let lmax = entries.iter().map(|e| e.0).max().unwrap_or(0);
    let mut e = ShExpansion::zeros(lmax);
    for (l, m, c) in entries {
        e.set(l, m, c);
    }
    Ok(e)
}

/// "l,m" -> [re, im] map of an expansion, zero entries dropped.
pub fn coefficient_map(e: &ShExpansion) -> BTreeMap<String, [f64; 2]> {
    let mut out = BTreeMap::new();
    for l in 0..=e.lmax {
        for m in -(l as i64)..=(l as i64) {
            let c = e.get(l, m);
            if c.norm() > 0.0 {
                out.insert(format!("{l},{m}"), [c.re, c.im]);
            }
        }
    }
    out
}

impl ConfigDoc {
    fn fill_defaults(&mut self) {
        let lambda = self.energy;
        let g = &mut self.grid;
        g.n.get_or_insert(256);
        if lambda > 0.0 {
            g.half_width.get_or_insert(24.0 / lambda);
        }
        g.sphere_degree.get_or_insert(25);
        g.l_max.get_or_insert(8);
        let r = &mut self.run;
        r.method.get_or_insert(MethodName::BornAnalytic);
        r.born_order.get_or_insert(1);
        r.gate.get_or_insert(0.5);
        r.shell.get_or_insert([40.0, 80.0]);
        r.shell_radii.get_or_insert(12);
        r.fit_tolerance.get_or_insert(1e-3);
        r.binning_radius.get_or_insert(relscat_core::inverse::BINNING_RADIUS);
        r.stages.get_or_insert(2);
        r.measure_convention.get_or_insert(true);
        r.density.get_or_insert_with(|| BTreeMap::from([("0,0".to_string(), [1.0, 0.0])]));
        r.lines.get_or_insert_with(|| vec![LineConfig { direction: [0.0, 0.0, 1.0], offset: [2.0, 0.0, 0.0] }]);
        r.planes.get_or_insert_with(|| vec![PlaneConfig { normal: [0.0, 0.0, 1.0], offset: 2.0, resolution: 256 }]);
        r.checks.get_or_insert_with(|| CHECKS.iter().map(|s| s.to_string()).collect());
    }

    fn validate(&self) -> Result<()> {
        if !(self.energy > 0.0 && self.energy.is_finite()) {
            return Err(Error::config("/energy", "energy must satisfy lambda > 0"));
        }
        for (i, layer) in self.potential.layers.iter().enumerate() {
            if !(layer.order > 3.0 && layer.order.is_finite()) {
                return Err(Error::config(
                    format!("/potential/layers/{i}/order"),
                    format!("layer order {} violates order > 3", layer.order),
                ));
            }
            expansion(&layer.sh_coefficients, &format!("/potential/layers/{i}/sh_coefficients"))?;
        }
        self.potential().map_err(|e| Error::config("/potential", e.to_string()))?;
        let n = self.n();
        if !n.is_power_of_two() || n < 8 {
            return Err(Error::config("/grid/n", format!("N = {n} must be a power of two, at least 8")));
        }
        if !(self.half_width() > 0.0 && self.half_width().is_finite()) {
            return Err(Error::config("/grid/half_width", "half width must be positive"));
        }
        if self.sphere_degree() == 0 {
            return Err(Error::config("/grid/sphere_degree", "exactness degree must be at least 1"));
        }
        let r = &self.run;
        if r.born_order == Some(0) {
            return Err(Error::config("/run/born_order", "Born order must be at least 1"));
        }
        if r.stages == Some(0) {
            return Err(Error::config("/run/stages", "at least one stage is needed"));
        }
        if let Some(s) = r.shell {
            if !(s[0] > 0.0 && s[1] > s[0]) {
                return Err(Error::config("/run/shell", "shell must satisfy 0 < a < b"));
            }
        }
        if let Some(b) = r.binning_radius {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::config("/run/binning_radius", "binning radius must be positive"));
            }
        }
        if let Some(eps) = &r.epsilons {
            self.born_config()
                .resolvent_params(self.energy)
                .map_err(|e| Error::config("/run/epsilons", e.to_string()))?;
            if eps.is_empty() {
                return Err(Error::config("/run/epsilons", "schedule must not be empty"));
            }
        }
        if let Some(d) = &r.density {
            expansion(d, "/run/density")?;
        }
        if let Some(checks) = &r.checks {
            for (i, c) in checks.iter().enumerate() {
                if !CHECKS.contains(&c.as_str()) {
                    return Err(Error::config(format!("/run/checks/{i}"), format!("unknown check {c:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn potential(&self) -> Result<PolyhomPotential> {
        let layers = self
            .potential
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                HomLayer::new(l.order, expansion(&l.sh_coefficients, &format!("/potential/layers/{i}/sh_coefficients"))?)
            })
            .collect::<Result<Vec<_>>>()?;
        PolyhomPotential::new(layers, self.potential.remainder)
    }

    pub fn n(&self) -> usize {
        self.grid.n.unwrap_or(256)
    }

    pub fn half_width(&self) -> f64 {
        self.grid.half_width.unwrap_or(24.0 / self.energy)
    }

    pub fn sphere_degree(&self) -> usize {
        self.grid.sphere_degree.unwrap_or(25)
    }

    pub fn l_max(&self) -> usize {
        self.grid.l_max.unwrap_or(8)
    }

    pub fn born_config(&self) -> BornConfig {
        let r = &self.run;
        let mut cfg = BornConfig::default_for(self.energy).with_grid(self.n(), self.half_width());
        if let Some(g) = r.gate {
            cfg.gate = g;
        }
        if let Some(s) = r.shell {
            cfg.shell = (s[0], s[1]);
        }
        if let Some(k) = r.shell_radii {
            cfg.shell_radii = k;
        }
        if let Some(t) = r.fit_tolerance {
            cfg.fit_tolerance = t;
        }
        cfg.epsilons = r.epsilons.clone();
        cfg
    }

    pub fn method(&self) -> AmplitudeMethod {
        let order = self.run.born_order.unwrap_or(1);
        match self.run.method.unwrap_or(MethodName::BornAnalytic) {
            MethodName::BornAnalytic => AmplitudeMethod::BornAnalytic,
            MethodName::Integral => AmplitudeMethod::Integral { order },
            MethodName::FarField => AmplitudeMethod::FarField { order },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str =
        r#"{"energy": 1.0, "potential": {"layers": [{"order": 3.5, "sh_coefficients": {"0,0": [3.5449, 0]}}]}}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.grid.n, Some(256));
        assert_eq!(c.grid.half_width, Some(24.0));
        assert_eq!(c.grid.l_max, Some(8));
        assert_eq!(c.run.stages, Some(2));
        assert_eq!(c.potential().unwrap().layers.len(), 1);
    }

    #[test]
    fn low_order_is_rejected() {
        let text = MINIMAL.replace("3.5,", "2.5,");
        let err = parse_config(&text).unwrap_err();
        match err {
            Error::Config { pointer, message } => {
                assert_eq!(pointer, "/potential/layers/0/order");
                assert!(message.contains("order > 3"), "{message}");
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn grid_must_be_power_of_two() {
        let text = MINIMAL.replace("{\"energy\": 1.0,", "{\"energy\": 1.0, \"grid\": {\"n\": 100},");
        assert!(matches!(parse_config(&text), Err(Error::Config { pointer, .. }) if pointer == "/grid/n"));
    }

    #[test]
    fn schema_errors_carry_a_pointer() {
        let text = r#"{"energy": 1.0, "potential": {"layers": [{"order": "x", "sh_coefficients": {}}]}}"#;
        match parse_config(text).unwrap_err() {
            Error::Config { pointer, .. } => assert_eq!(pointer, "/potential/layers/0/order"),
            e => panic!("{e:?}"),
        }
        let text = r#"{"energy": 1.0, "potential": {}, "grid": {"nn": 4}}"#;
        assert!(matches!(parse_config(text), Err(Error::Config { .. })));
    }

    #[test]
    fn bad_keys_and_asymmetric_coefficients() {
        let text = MINIMAL.replace("\"0,0\"", "\"1,2\"");
        assert!(matches!(parse_config(&text), Err(Error::Config { .. })));
        let text = MINIMAL.replace("[3.5449, 0]", "[3.5449, 1]");
        assert!(matches!(parse_config(&text), Err(Error::Config { pointer, .. }) if pointer == "/potential"));
    }

    #[test]
    fn nonpositive_energy() {
        let text = MINIMAL.replace("1.0", "-1.0");
        assert!(matches!(parse_config(&text), Err(Error::Config { pointer, .. }) if pointer == "/energy"));
    }
}
