//! Quadrature on the unit sphere and spherical harmonic analysis.
//!
//! Harmonics are the orthonormal complex Y_l^m with Condon-Shortley phase
//! (see `special::ylm_all`); expansions are indexed by l^2 + l + m.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::gauss_legendre;
use crate::special::{lm_count, lm_index, ylm_all_angles};

pub type Vec3 = [f64; 3];

/// Quadrature nodes on S^2 with positive weights.
pub struct SphereGrid {
    nodes: Vec<Vec3>,
    weights: Vec<f64>,
    exactness: usize,
    antipode: Option<Vec<usize>>,
    shape: Option<(usize, usize)>,
    harmonics: Mutex<HashMap<usize, Arc<Vec<Complex64>>>>,
}

impl fmt::Debug for SphereGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SphereGrid")
            .field("nodes", &self.nodes.len())
            .field("exactness", &self.exactness)
            .field("shape", &self.shape)
            .finish()
    }
}

impl Clone for SphereGrid {
    fn clone(&self) -> Self {
        SphereGrid {
            nodes: self.nodes.clone(),
            weights: self.weights.clone(),
            exactness: self.exactness,
            antipode: self.antipode.clone(),
            shape: self.shape,
            harmonics: Mutex::new(HashMap::new()),
        }
    }
}

impl PartialEq for SphereGrid {
    fn eq(&self, other: &Self) -> bool {
        self.exactness == other.exactness && self.nodes == other.nodes && self.weights == other.weights
    }
}

/// Serializable description of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    Product { n_polar: usize, n_azimuth: usize },
    Nodes { nodes: Vec<Vec3>, weights: Vec<f64>, exactness: usize },
}

impl SphereGrid {
    pub fn spec(&self) -> GridSpec {
        match self.shape {
            Some((n_polar, n_azimuth)) => GridSpec::Product { n_polar, n_azimuth },
            None => GridSpec::Nodes {
                nodes: self.nodes.clone(),
                weights: self.weights.clone(),
                exactness: self.exactness,
            },
        }
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        match spec {
            GridSpec::Product { n_polar, n_azimuth } => Self::gauss_product(*n_polar, *n_azimuth),
            GridSpec::Nodes { nodes, weights, exactness } => {
                Self::from_nodes(nodes.clone(), weights.clone(), *exactness)
            }
        }
    }

    /// Gauss-Legendre in cos(theta) times a uniform azimuthal rule.
    /// Exact for harmonics of degree <= min(2 n_polar - 1, n_azimuth - 1).
    pub fn gauss_product(n_polar: usize, n_azimuth: usize) -> Result<Self> {
        if n_polar < 2 || n_azimuth < 2 {
            return Err(Error::Structural("product grid needs at least 2 x 2 nodes".into()));
        }
        let rule = gauss_legendre(n_polar);
        let mut nodes = Vec::with_capacity(n_polar * n_azimuth);
        let mut weights = Vec::with_capacity(n_polar * n_azimuth);
        let dphi = 2.0 * PI / n_azimuth as f64;
        for &(ct, w) in rule.iter() {
            let st = (1.0 - ct * ct).max(0.0).sqrt();
            for k in 0..n_azimuth {
                let (sp, cp) = (k as f64 * dphi).sin_cos();
                nodes.push([st * cp, st * sp, ct]);
                weights.push(w * dphi);
            }
        }
        let antipode = (n_azimuth % 2 == 0).then(|| {
            let half = n_azimuth / 2;
            (0..n_polar * n_azimuth)
                .map(|idx| {
                    let (i, k) = (idx / n_azimuth, idx % n_azimuth);
                    (n_polar - 1 - i) * n_azimuth + (k + half) % n_azimuth
                })
                .collect()
        });
        let exactness = (2 * n_polar - 1).min(n_azimuth - 1);
        let grid = SphereGrid {
            nodes,
            weights,
            exactness,
            antipode,
            shape: Some((n_polar, n_azimuth)),
            harmonics: Mutex::new(HashMap::new()),
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Smallest square-ish product grid with the requested exactness degree:
    /// (D+1) polar nodes and D+1 azimuthal nodes, rounded up to even so the
    /// antipodal map exists.
    pub fn with_exactness(degree: usize) -> Result<Self> {
        let n_az = if (degree + 1) % 2 == 0 { degree + 1 } else { degree + 2 };
        Self::gauss_product(degree + 1, n_az)
    }

    /// Arbitrary node set with a declared exactness degree, checked against
    /// the harmonic orthonormality relations.
    pub fn from_nodes(nodes: Vec<Vec3>, weights: Vec<f64>, exactness: usize) -> Result<Self> {
        if nodes.len() != weights.len() {
            return Err(Error::Structural("node and weight counts differ".into()));
        }
        let grid = SphereGrid {
            nodes,
            weights,
            exactness,
            antipode: None,
            shape: None,
            harmonics: Mutex::new(HashMap::new()),
        };
        grid.validate()?;
        let l = exactness / 2;
        let y = grid.harmonics(l);
        let n = lm_count(l);
        for a in 0..n {
            for b in 0..n {
                let s: Complex64 = (0..grid.len())
                    .map(|i| y[i * n + a] * y[i * n + b].conj() * grid.weights[i])
                    .sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                if (s - expect).norm() > 1e-10 {
                    return Err(Error::Structural(format!(
                        "grid is not exact to degree {exactness}"
                    )));
                }
            }
        }
        Ok(grid)
    }

    fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            let r = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if (r - 1.0).abs() > 1e-12 {
                return Err(Error::Structural(format!("node {i} is not a unit vector")));
            }
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Structural("weights must be strictly positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 4.0 * PI).abs() > 1e-10 {
            return Err(Error::Structural(format!("weights sum to {total}, expected 4 pi")));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn exactness(&self) -> usize {
        self.exactness
    }

    /// (n_polar, n_azimuth) for product grids.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.shape
    }

    /// Index of -x_i for every node, if the grid is antipodally symmetric.
    pub fn antipode(&self) -> Option<&[usize]> {
        self.antipode.as_deref()
    }

    /// Largest harmonic degree that `sh_analyze` accepts on this grid.
    pub fn max_analysis_degree(&self) -> usize {
        self.exactness / 2
    }

    /// Harmonic table, node-major: entry i * (lmax+1)^2 + lm_index(l, m).
    pub fn harmonics(&self, lmax: usize) -> Arc<Vec<Complex64>> {
        let mut cache = self.harmonics.lock().expect("harmonic cache poisoned");
        cache
            .entry(lmax)
            .or_insert_with(|| {
                let mut table = Vec::with_capacity(self.len() * lm_count(lmax));
                for n in &self.nodes {
                    let st = (n[0] * n[0] + n[1] * n[1]).sqrt();
                    table.extend(ylm_all_angles(lmax, n[2], st, n[1].atan2(n[0])));
                }
                Arc::new(table)
            })
            .clone()
    }
}

/// Complex values attached to the nodes of a grid.
#[derive(Debug, Clone)]
pub struct SphereFn {
    pub grid: Arc<SphereGrid>,
    pub values: Vec<Complex64>,
}

impl SphereFn {
    pub fn new(grid: Arc<SphereGrid>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Structural(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(SphereFn { grid, values })
    }

    pub fn from_fn(grid: Arc<SphereGrid>, f: impl Fn(Vec3) -> Complex64) -> Self {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        SphereFn { grid, values }
    }

    /// x -> f(-x); requires an antipodally symmetric grid.
    pub fn reflect(&self) -> Result<Self> {
        let map = self
            .grid
            .antipode()
            .ok_or_else(|| Error::Structural("grid has no antipodal map".into()))?;
        let values = map.iter().map(|&j| self.values[j]).collect();
        Ok(SphereFn { grid: self.grid.clone(), values })
    }

    /// Weighted L2 norm on the sphere.
    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(v, w)| v.norm_sqr() * w)
            .sum::<f64>()
            .sqrt()
    }
}

/// Spherical harmonic coefficients c_{l,m}, 0 <= l <= lmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShExpansion {
    pub lmax: usize,
    pub coeffs: Vec<Complex64>,
}

impl ShExpansion {
    pub fn zeros(lmax: usize) -> Self {
        ShExpansion { lmax, coeffs: vec![Complex64::new(0.0, 0.0); lm_count(lmax)] }
    }

    pub fn get(&self, l: usize, m: i64) -> Complex64 {
        if l > self.lmax || m.unsigned_abs() as usize > l {
            return Complex64::new(0.0, 0.0);
        }
        self.coeffs[lm_index(l, m)]
    }

    pub fn set(&mut self, l: usize, m: i64, v: Complex64) {
        assert!(l <= self.lmax && m.unsigned_abs() as usize <= l, "(l, m) out of range");
        self.coeffs[lm_index(l, m)] = v;
    }

    /// Sum_m |c_{l,m}|^2 for every l.
    pub fn degree_power(&self) -> Vec<f64> {
        (0..=self.lmax)
            .map(|l| (0..2 * l + 1).map(|k| self.coeffs[l * l + k].norm_sqr()).sum())
            .collect()
    }

    /// Value at a direction (need not be normalized).
    pub fn eval(&self, dir: Vec3) -> Complex64 {
        let y = crate::special::ylm_all(self.lmax, dir);
        y.iter().zip(&self.coeffs).map(|(y, c)| y * c).sum()
    }

    /// Largest violation of c_{l,-m} = (-1)^m conj(c_{l,m}).
    pub fn real_symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for l in 0..=self.lmax {
            for m in 0..=l as i64 {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let d = self.get(l, -m) - self.get(l, m).conj() * sign;
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    /// Same coefficients padded or truncated to a new degree.
    pub fn resized(&self, lmax: usize) -> Self {
        let mut out = Self::zeros(lmax);
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            if i < self.coeffs.len() {
                *c = self.coeffs[i];
            }
        }
        out
    }

    /// Highest degree carrying a coefficient above `tol`.
    pub fn effective_degree(&self, tol: f64) -> usize {
        (0..=self.lmax)
            .rev()
            .find(|&l| (0..2 * l + 1).any(|k| self.coeffs[l * l + k].norm() > tol))
            .unwrap_or(0)
    }
}

pub fn integrate(f: &SphereFn) -> Result<Complex64> {
    if f.values.len() != f.grid.len() {
        return Err(Error::Structural("value count does not match grid".into()));
    }
    Ok(f.values.iter().zip(f.grid.weights()).map(|(v, w)| v * w).sum())
}

pub fn sh_analyze(f: &SphereFn, lmax: usize) -> Result<ShExpansion> {
    let grid = &f.grid;
    if f.values.len() != grid.len() {
        return Err(Error::Structural("value count does not match grid".into()));
    }
    if 2 * lmax > grid.exactness() {
        return Err(Error::Precision(format!(
            "degree {lmax} needs exactness {} but grid has {}",
            2 * lmax,
            grid.exactness()
        )));
    }
    let y = grid.harmonics(lmax);
    let n = lm_count(lmax);
    let mut out = ShExpansion::zeros(lmax);
    for (i, (v, w)) in f.values.iter().zip(grid.weights()).enumerate() {
        let vw = v * w;
        let row = &y[i * n..(i + 1) * n];
        for (c, yy) in out.coeffs.iter_mut().zip(row) {
            *c += vw * yy.conj();
        }
    }
    Ok(out)
}

pub fn sh_synthesize(e: &ShExpansion, grid: Arc<SphereGrid>) -> SphereFn {
    let y = grid.harmonics(e.lmax);
    let n = lm_count(e.lmax);
    let values = (0..grid.len())
        .map(|i| y[i * n..(i + 1) * n].iter().zip(&e.coeffs).map(|(y, c)| y * c).sum())
        .collect();
    SphereFn { grid, values }
}

/// Outcome of the coefficient-decay regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TailSlope {
    /// Slope of log S_l against log(1 + l), with kappa = (-slope - 1)/2.
    Slope { slope: f64, kappa: f64 },
    /// Every tail coefficient is below 1e-14.
    SmoothTail,
}

impl TailSlope {
    pub fn kappa(&self) -> Option<f64> {
        match self {
            TailSlope::Slope { kappa, .. } => Some(*kappa),
            TailSlope::SmoothTail => None,
        }
    }
}

const TAIL_FLOOR: f64 = 1e-14;

/// Least-squares decay rate of the degree power S_l = sum_m |c_{l,m}|^2 over
/// l in [l_min, lmax].
pub fn tail_slope(e: &ShExpansion, l_min: usize) -> Result<TailSlope> {
    if e.lmax < l_min + 8 {
        return Err(Error::Invalid(format!(
            "tail needs lmax >= l_min + 8 (lmax {}, l_min {l_min})",
            e.lmax
        )));
    }
    let power = e.degree_power();
    let floor = TAIL_FLOOR * TAIL_FLOOR;
    let pts: Vec<(f64, f64)> = (l_min..=e.lmax)
        .filter(|&l| power[l] > floor)
        .map(|l| ((1.0 + l as f64).ln(), power[l].ln()))
        .collect();
    if pts.len() < 3 {
        return Ok(TailSlope::SmoothTail);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    Ok(TailSlope::Slope { slope, kappa: (-slope - 1.0) / 2.0 })
}
