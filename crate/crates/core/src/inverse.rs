//! Layer stripping: homogeneity orders and angular parts of the asymptotic
//! layers from a fixed-energy amplitude table, and the smoothness test for
//! amplitude differences.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{hom_ft_multiplier, norm, HomLayer, PolyhomPotential};
use crate::scatter::AmplitudeTable;
use crate::special::{lm_count, lm_from_index, ylm_all};
use crate::sphere::{sh_analyze, tail_slope, ShExpansion, SphereFn, TailSlope, Vec3};

/// One binned sample of Vhat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallSample {
    pub xi: Vec3,
    pub value: Complex64,
    pub count: usize,
}

/// Vhat on the ball |xi| <= 2 lambda, recovered from an amplitude table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierBallData {
    pub lambda: f64,
    /// Prefactor the amplitudes were divided by.
    pub constant: Complex64,
    pub binning_radius: f64,
    pub samples: Vec<BallSample>,
    /// Median Sobolev order of f(., w) over incident directions, from the
    /// harmonic tail; None when every column has a smooth tail.
    pub diagonal_kappa: Option<f64>,
}

impl FourierBallData {
    /// Averaged value of the bin containing xi, if any sample lies within
    /// the binning radius.
    pub fn value_at(&self, xi: Vec3) -> Option<Complex64> {
        self.samples
            .iter()
            .filter(|s| norm([s.xi[0] - xi[0], s.xi[1] - xi[1], s.xi[2] - xi[2]]) <= self.binning_radius)
            .min_by(|a, b| {
                let da = norm([a.xi[0] - xi[0], a.xi[1] - xi[1], a.xi[2] - xi[2]]);
                let db = norm([b.xi[0] - xi[0], b.xi[1] - xi[1], b.xi[2] - xi[2]]);
                da.total_cmp(&db)
            })
            .map(|s| s.value)
    }

    /// Number of samples with rho / lambda in [a, b].
    pub fn count_in(&self, a: f64, b: f64) -> usize {
        self.samples
            .iter()
            .filter(|s| {
                let t = norm(s.xi) / self.lambda;
                t >= a && t <= b
            })
            .count()
    }

    /// max |Vhat(-xi) - conj Vhat(xi)| over bins present at both points,
    /// relative to max |Vhat|.
    pub fn conjugate_symmetry_defect(&self) -> f64 {
        let scale = self.samples.iter().map(|s| s.value.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        let key = |x: Vec3| bin_key(x, self.binning_radius);
        let map: HashMap<[i64; 3], Complex64> = self.samples.iter().map(|s| (key(s.xi), s.value)).collect();
        let mut worst: f64 = 0.0;
        for s in &self.samples {
            if let Some(v) = map.get(&key([-s.xi[0], -s.xi[1], -s.xi[2]])) {
                worst = worst.max((v - s.value.conj()).norm());
            }
        }
        worst / scale
    }
}

fn bin_key(x: Vec3, radius: f64) -> [i64; 3] {
    [(x[0] / radius).round() as i64, (x[1] / radius).round() as i64, (x[2] / radius).round() as i64]
}

/// Median kappa of the outgoing harmonic tails of the columns of a table.
pub fn column_kappas(table: &AmplitudeTable, l_min: usize) -> Result<Vec<TailSlope>> {
    let lmax = table.outgoing.max_analysis_degree();
    let nj = table.incident.len();
    (0..nj)
        .into_par_iter()
        .map(|j| {
            let col: Vec<Complex64> = (0..table.outgoing.len()).map(|i| table.get(i, j)).collect();
            let f = SphereFn::new(table.outgoing.clone(), col)?;
            tail_slope(&sh_analyze(&f, lmax)?, l_min)
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Default binning radius as a fraction of lambda.
pub const BINNING_RADIUS: f64 = 1e-6;

/// Vhat(lambda (theta_i - w_j)) = f(theta_i, w_j) / constant, averaged over
/// coincident frequencies.
pub fn fourier_from_amplitude(
    table: &AmplitudeTable,
    constant: Complex64,
    binning_radius: Option<f64>,
) -> Result<FourierBallData> {
    if constant.norm() == 0.0 || !constant.re.is_finite() || !constant.im.is_finite() {
        return Err(Error::Invalid("amplitude constant must be finite and nonzero".into()));
    }
    let lambda = table.lambda;
    let radius = binning_radius.unwrap_or(BINNING_RADIUS * lambda);
    if !(radius > 0.0) {
        return Err(Error::Invalid("binning radius must be positive".into()));
    }
    let mut bins: HashMap<[i64; 3], (Vec3, Complex64, usize)> = HashMap::new();
    let mut order: Vec<[i64; 3]> = Vec::new();
    for (i, t) in table.outgoing.nodes().iter().enumerate() {
        for (j, w) in table.incident.nodes().iter().enumerate() {
            let xi = [lambda * (t[0] - w[0]), lambda * (t[1] - w[1]), lambda * (t[2] - w[2])];
            let k = bin_key(xi, radius);
            let e = bins.entry(k).or_insert_with(|| {
                order.push(k);
                ([0.0; 3], Complex64::new(0.0, 0.0), 0)
            });
            e.0 = [e.0[0] + xi[0], e.0[1] + xi[1], e.0[2] + xi[2]];
            e.1 += table.get(i, j) / constant;
            e.2 += 1;
        }
    }
    let samples = order
        .iter()
        .map(|k| {
            let (x, v, c) = bins[k];
            let n = c as f64;
            BallSample { xi: [x[0] / n, x[1] / n, x[2] / n], value: v / n, count: c }
        })
        .collect();
    let diagonal_kappa = if table.outgoing.max_analysis_degree() >= 10 {
        median(column_kappas(table, 2)?.iter().filter_map(|t| t.kappa()).collect())
    } else {
        None
    };
    Ok(FourierBallData { lambda, constant, binning_radius: radius, samples, diagonal_kappa })
}

/// Settings for the small-frequency exponent fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderFitOptions {
    /// Fit window in rho / lambda.
    pub window: (f64, f64),
    /// Upper end used when the window holds too few samples.
    pub widened: f64,
    /// Harmonic degree of the fit basis.
    pub degree: usize,
    /// Exponent range p = m - 3 searched.
    pub regime: (f64, f64),
    /// Include the next ladder term rho^{p+1}.
    pub next_term: bool,
}

impl Default for OrderFitOptions {
    fn default() -> Self {
        OrderFitOptions { window: (0.02, 0.3), widened: 0.6, degree: 4, regime: (0.0, 1.0), next_term: true }
    }
}

/// Result of the exponent fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub order: f64,
    /// Coefficients B_lm of |xi|^{m-3} Y_lm(xi^).
    pub singular: ShExpansion,
    /// Coefficients of |xi|^{m-2} Y_lm(xi^).
    pub next: Option<ShExpansion>,
    /// Relative misfit of the full model.
    pub residual: f64,
    /// |B| evaluated at the top of the window, relative to the data scale.
    pub singular_strength: f64,
    pub samples: usize,
    /// Order implied by the harmonic tail of the table columns.
    pub tail_order: Option<f64>,
    /// The two estimates differ by more than 0.2.
    pub inconsistent: bool,
}

struct FitProblem {
    rho: Vec<f64>,
    ylm: Vec<Vec<Complex64>>,
    y: DVector<Complex64>,
    /// Orthonormal basis of the analytic columns.
    q: DMatrix<Complex64>,
    rho_top: f64,
    nh: usize,
    a: DMatrix<Complex64>,
}

fn analytic_powers(l: usize) -> [i32; 4] {
    let l = l as i32;
    [l, l + 2, l + 4, l + 6]
}

impl FitProblem {
    fn new(data: &FourierBallData, opts: &OrderFitOptions) -> Result<Self> {
        let nh = lm_count(opts.degree);
        let cols = nh * (4 + if opts.next_term { 2 } else { 1 });
        let mut hi = opts.window.1;
        let mut chosen: Vec<&BallSample> = Vec::new();
        for top in [opts.window.1, opts.widened] {
            hi = top;
            chosen = data
                .samples
                .iter()
                .filter(|s| {
                    let t = norm(s.xi) / data.lambda;
                    t >= opts.window.0 && t <= top
                })
                .collect();
            if chosen.len() >= 2 * cols {
                break;
            }
        }
        if chosen.len() < 6 {
            return Err(Error::Conditioning(format!(
                "{} samples in rho / lambda in [{}, {hi}]; at least 6 are needed",
                chosen.len(),
                opts.window.0
            )));
        }
        if chosen.len() < 2 * cols {
            return Err(Error::Conditioning(format!(
                "{} samples for {cols} basis functions",
                chosen.len()
            )));
        }
        let rho_top = hi * data.lambda;
        let rho: Vec<f64> = chosen.iter().map(|s| norm(s.xi) / rho_top).collect();
        let ylm: Vec<Vec<Complex64>> = chosen.par_iter().map(|s| ylm_all(opts.degree, s.xi)).collect();
        let y = DVector::from_iterator(chosen.len(), chosen.iter().map(|s| s.value));
        let n = chosen.len();
        let a = DMatrix::from_fn(n, nh * 4, |i, c| {
            let (h, k) = (c / 4, c % 4);
            let (l, _) = lm_from_index(h);
            ylm[i][h] * rho[i].powi(analytic_powers(l)[k])
        });
        let q = a.clone().qr().q();
        Ok(FitProblem { rho, ylm, y, q, rho_top, nh, a })
    }

    fn singular_columns(&self, p: f64, next: bool) -> DMatrix<Complex64> {
        let per = if next { 2 } else { 1 };
        DMatrix::from_fn(self.rho.len(), self.nh * per, |i, c| {
            let (h, k) = (c / per, c % per);
            self.ylm[i][h] * self.rho[i].powf(p + k as f64)
        })
    }

    fn project(&self, m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        m - &self.q * (self.q.adjoint() * m)
    }

    /// Residual norm with the analytic part projected out.
    fn misfit(&self, p: f64, next: bool) -> f64 {
        let x = self.project(&self.singular_columns(p, next));
        let y = self.project(&DMatrix::from_column_slice(self.y.len(), 1, self.y.as_slice()));
        // explicit residual vector; Householder Q stays orthonormal even when
        // the columns are nearly dependent
        let q = x.qr().q();
        (&y - &q * (q.adjoint() * &y)).norm()
    }

    /// Full least squares at fixed p: (singular, next, relative residual).
    fn solve(&self, p: f64, next: bool) -> (Vec<Complex64>, Option<Vec<Complex64>>, f64) {
        let s = self.singular_columns(p, next);
        let full = DMatrix::from_fn(self.rho.len(), s.ncols() + self.a.ncols(), |i, c| {
            if c < s.ncols() {
                s[(i, c)]
            } else {
                self.a[(i, c - s.ncols())]
            }
        });
        let coef = least_squares(&full, &self.y);
        let resid = (&self.y - &full * &coef).norm() / self.y.norm().max(f64::MIN_POSITIVE);
        let per = if next { 2 } else { 1 };
        let scale_b = self.rho_top.powf(-p);
        let sing = (0..self.nh).map(|h| coef[h * per] * scale_b).collect();
        let nxt = next.then(|| {
            let scale = self.rho_top.powf(-p - 1.0);
            (0..self.nh).map(|h| coef[h * per + 1] * scale).collect()
        });
        (sing, nxt, resid)
    }
}

// Householder QR solve, SVD when R is numerically singular.
fn least_squares(a: &DMatrix<Complex64>, y: &DVector<Complex64>) -> DVector<Complex64> {
    let qr = a.clone().qr();
    let r = qr.r();
    let d: Vec<f64> = (0..r.ncols()).map(|i| r[(i, i)].norm()).collect();
    let dmax = d.iter().cloned().fold(0.0, f64::max);
    if d.iter().all(|&x| x > 1e-11 * dmax) {
        let rhs = qr.q().adjoint() * y;
        if let Some(c) = r.solve_upper_triangular(&rhs) {
            return c;
        }
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(y, 1e-13 * smax).expect("svd solve")
}

fn expansion(degree: usize, coeffs: Vec<Complex64>) -> ShExpansion {
    ShExpansion { lmax: degree, coeffs }
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Variable-projection fit of Vhat(rho eta) = sum_lm Y_lm(eta) [B rho^p +
/// B' rho^{p+1} + analytic(rho^l, rho^{l+2}, ...)] with p scanned over the
/// regime; m = 3 + p.
pub fn estimate_order(data: &FourierBallData, opts: &OrderFitOptions) -> Result<OrderFit> {
    let (lo, hi) = opts.regime;
    if !(hi > lo) {
        return Err(Error::Invalid("empty exponent regime".into()));
    }
    let scale = data.samples.iter().map(|s| s.value.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::OutOfRegime("zero data carries no singular part".into()));
    }
    let prob = FitProblem::new(data, opts)?;
    let margin = 0.02;
    let steps = ((hi - lo) / 0.05).round().max(4.0) as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| lo + margin + (hi - lo - 2.0 * margin) * k as f64 / steps as f64).collect();
    let values: Vec<f64> = grid.par_iter().map(|&p| prob.misfit(p, opts.next_term)).collect();
    let best = (0..grid.len()).min_by(|&a, &b| values[a].total_cmp(&values[b])).expect("nonempty scan");
    let step = grid[1] - grid[0];
    let p = golden_min(
        |p| prob.misfit(p, opts.next_term),
        (grid[best] - step).max(lo + margin / 2.0),
        (grid[best] + step).min(hi - margin / 2.0),
        1e-4,
    );
    let (sing, next, residual) = prob.solve(p, opts.next_term);
    let singular = expansion(opts.degree, sing);
    let strength = singular.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
        * prob.rho_top.powf(p)
        / scale;
    if best == 0 || best == grid.len() - 1 {
        return Err(Error::OutOfRegime(format!(
            "exponent fit pinned at the regime edge (p = {p:.3} in ({lo}, {hi}))"
        )));
    }
    if strength < 1e-9 {
        return Err(Error::OutOfRegime("no singular term above the data noise".into()));
    }
    let order = 3.0 + p;
    let tail_order = data.diagonal_kappa.map(|k| k + 2.0);
    let inconsistent = lo == 0.0 && tail_order.is_some_and(|t| (t - order).abs() > 0.2);
    Ok(OrderFit {
        order,
        singular,
        next: next.map(|c| expansion(opts.degree, c)),
        residual,
        singular_strength: strength,
        samples: prob.rho.len(),
        tail_order,
        inconsistent,
    })
}

/// Angular expansion with degrees whose multiplier vanishes flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularRecovery {
    pub angular: ShExpansion,
    pub unrecoverable: Vec<usize>,
}

/// c_lm = B_lm / gamma_{l,m} with B the singular coefficients.
pub fn angular_from_singular(singular: &ShExpansion, m: f64) -> Result<AngularRecovery> {
    let mut out = ShExpansion::zeros(singular.lmax);
    let mut unrecoverable = Vec::new();
    for l in 0..=singular.lmax {
        let g = hom_ft_multiplier(m, l)?;
        if g.norm() < 1e-8 {
            unrecoverable.push(l);
            continue;
        }
        for mm in -(l as i64)..=l as i64 {
            out.set(l, mm, singular.get(l, mm) / g);
        }
    }
    Ok(AngularRecovery { angular: real_part(&out), unrecoverable })
}

// Nearest expansion of a real function: c_{l,-m} = (-1)^m conj(c_{l,m}).
fn real_part(e: &ShExpansion) -> ShExpansion {
    let mut out = ShExpansion::zeros(e.lmax);
    for l in 0..=e.lmax {
        for m in 0..=l as i64 {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            let a = e.get(l, m);
            let b = e.get(l, -m).conj() * sign;
            let c = 0.5 * (a + b);
            if m == 0 {
                out.set(l, 0, Complex64::new(c.re, 0.0));
            } else {
                out.set(l, m, c);
                out.set(l, -m, c.conj() * sign);
            }
        }
    }
    out
}

/// Singular coefficients at the fixed order m, divided by the multipliers.
pub fn recover_angular(data: &FourierBallData, m: f64, l_max: usize) -> Result<AngularRecovery> {
    let opts = OrderFitOptions { degree: l_max, ..OrderFitOptions::default() };
    let prob = FitProblem::new(data, &opts)?;
    let (sing, _, _) = prob.solve(m - 3.0, opts.next_term);
    angular_from_singular(&expansion(l_max, sing), m)
}

/// One recovered layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEstimate {
    pub order: f64,
    pub angular: ShExpansion,
    pub diagnostics: LayerDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub residual: f64,
    pub singular_strength: f64,
    pub samples: usize,
    pub tail_order: Option<f64>,
    pub inconsistent: bool,
    pub unrecoverable_degrees: Vec<usize>,
}

/// Layers recovered so far and why the iteration stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripResult {
    pub layers: Vec<LayerEstimate>,
    pub stop_reason: String,
}

/// Settings for `layer_strip`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripOptions {
    pub fit: OrderFitOptions,
    /// Stop once the residual singular strength falls below this fraction
    /// of the stage-0 strength.
    pub smooth_fraction: f64,
    pub binning_radius: Option<f64>,
}

impl Default for StripOptions {
    fn default() -> Self {
        StripOptions { fit: OrderFitOptions::default(), smooth_fraction: 1e-2, binning_radius: None }
    }
}

/// Vhat of a layer at the sample points.
fn subtract_layer(data: &mut FourierBallData, layer: &HomLayer, window_top: f64) -> Result<()> {
    let idx: Vec<usize> = (0..data.samples.len())
        .filter(|&i| norm(data.samples[i].xi) <= window_top * data.lambda)
        .collect();
    let xis: Vec<Vec3> = idx.iter().map(|&i| data.samples[i].xi).collect();
    let pot = PolyhomPotential::new(vec![layer.clone()], None)?;
    let hat = pot.fourier_hat_many(&xis)?;
    for (k, &i) in idx.iter().enumerate() {
        data.samples[i].value -= hat[k];
    }
    data.samples.retain(|s| norm(s.xi) <= window_top * data.lambda);
    data.diagonal_kappa = None;
    Ok(())
}

/// Estimates the leading layer, subtracts its Born data, and repeats on the
/// residual one order higher, for at most `stages` layers.
pub fn layer_strip(
    table: &AmplitudeTable,
    constant: Complex64,
    stages: usize,
    opts: &StripOptions,
) -> Result<StripResult> {
    if stages == 0 {
        return Err(Error::Invalid("layer_strip needs at least one stage".into()));
    }
    let mut data = fourier_from_amplitude(table, constant, opts.binning_radius)?;
    if data.samples.iter().all(|s| s.value.norm() == 0.0) {
        return Ok(StripResult { layers: Vec::new(), stop_reason: "zero table".into() });
    }
    let mut layers: Vec<LayerEstimate> = Vec::new();
    let mut base_strength = 0.0;
    for stage in 0..stages {
        let regime = match layers.first() {
            None => opts.fit.regime,
            Some(first) => {
                let p = first.order - 3.0 + stage as f64;
                (p - 0.5, p + 0.5)
            }
        };
        let fit_opts = OrderFitOptions { regime, ..opts.fit.clone() };
        let fit = match estimate_order(&data, &fit_opts) {
            Ok(f) => f,
            Err(e) if stage > 0 && matches!(e, Error::OutOfRegime(_)) => {
                return Ok(StripResult { layers, stop_reason: format!("stage {stage}: {e}") });
            }
            Err(e) => return Err(e),
        };
        if stage == 0 {
            base_strength = fit.singular_strength;
        } else if fit.singular_strength < opts.smooth_fraction * base_strength {
            return Ok(StripResult {
                layers,
                stop_reason: format!(
                    "stage {stage}: residual singular strength {:.2e} is smooth relative to {:.2e}",
                    fit.singular_strength, base_strength
                ),
            });
        }
        if let Some(first) = layers.first() {
            if fit.order > first.order + stages as f64 {
                return Ok(StripResult {
                    layers,
                    stop_reason: format!("stage {stage}: order {:.3} beyond the ladder", fit.order),
                });
            }
        }
        let rec = angular_from_singular(&fit.singular, fit.order)?;
        let estimate = LayerEstimate {
            order: fit.order,
            angular: rec.angular.clone(),
            diagnostics: LayerDiagnostics {
                residual: fit.residual,
                singular_strength: fit.singular_strength,
                samples: fit.samples,
                tail_order: fit.tail_order,
                inconsistent: fit.inconsistent,
                unrecoverable_degrees: rec.unrecoverable,
            },
        };
        let inconsistent = estimate.diagnostics.inconsistent;
        if stage + 1 < stages {
            let layer = HomLayer::new(fit.order, rec.angular)?;
            subtract_layer(&mut data, &layer, opts.fit.widened.max(opts.fit.window.1))?;
        }
        layers.push(estimate);
        if inconsistent {
            return Ok(StripResult {
                layers,
                stop_reason: format!("stage {stage}: exponent and harmonic-tail estimates disagree"),
            });
        }
    }
    Ok(StripResult { layers, stop_reason: format!("completed {stages} stages") })
}

/// Outcome of the smoothness test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Smoothness {
    Smooth,
    Singular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub verdict: Smoothness,
    /// Order of the difference's leading singular layer (SINGULAR only).
    pub order: Option<f64>,
    /// Smallest per-column kappa (None if every column has a smooth tail).
    pub min_kappa: Option<f64>,
}

/// Sobolev order at or above which a column counts as smooth.
pub const KAPPA_THRESHOLD: f64 = 6.0;

/// Harmonic-tail test on tableA - tableB; a singular difference also gets an
/// order from a single-term exponent fit over p in (0, 3).
pub fn smoothness_test(a: &AmplitudeTable, b: &AmplitudeTable, constant: Complex64) -> Result<SmoothnessReport> {
    if a.outgoing != b.outgoing || a.incident != b.incident || a.lambda != b.lambda {
        return Err(Error::GridMismatch("tables live on different grids or energies".into()));
    }
    let values = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    let diff = AmplitudeTable::new(a.lambda, a.outgoing.clone(), a.incident.clone(), values, a.provenance)?;
    let slopes = column_kappas(&diff, 2)?;
    let kappas: Vec<f64> = slopes.iter().filter_map(|s| s.kappa()).collect();
    let min_kappa = kappas.iter().cloned().reduce(f64::min);
    if kappas.iter().all(|&k| k >= KAPPA_THRESHOLD) {
        return Ok(SmoothnessReport { verdict: Smoothness::Smooth, order: None, min_kappa });
    }
    let data = fourier_from_amplitude(&diff, constant, None)?;
    let opts = OrderFitOptions { regime: (0.0, 3.0), next_term: false, ..OrderFitOptions::default() };
    let order = estimate_order(&data, &opts).ok().map(|f| f.order);
    Ok(SmoothnessReport { verdict: Smoothness::Singular, order, min_kappa })
}

/// Potential assembled from recovered layers.
pub fn synthesize(layers: &[LayerEstimate]) -> Result<PolyhomPotential> {
    let hl = layers.iter().map(|l| HomLayer::new(l.order, l.angular.clone())).collect::<Result<Vec<_>>>()?;
    PolyhomPotential::new(hl, None)
}
