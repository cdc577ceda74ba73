//! Spectral operators for the free Hamiltonian sqrt(-Delta) on a periodic
//! N^3 grid: Fourier multipliers and the outgoing free resolvent.

mod farfield;

pub use farfield::*;

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::smooth_step;
use crate::sphere::Vec3;

/// Complex samples on the uniform periodic grid x_j = -L + j h, h = 2L/N.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeField {
    n: usize,
    half_width: f64,
    pub values: Vec<Complex64>,
}

impl VolumeField {
    pub fn zeros(n: usize, half_width: f64) -> Result<Self> {
        Self::new(n, half_width, vec![Complex64::new(0.0, 0.0); n * n * n])
    }

    pub fn new(n: usize, half_width: f64, values: Vec<Complex64>) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Invalid(format!("grid size {n} must be a power of two >= 4")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::Invalid("grid half width must be positive".into()));
        }
        if values.len() != n * n * n {
            return Err(Error::Structural(format!("{} values for an {n}^3 grid", values.len())));
        }
        Ok(VolumeField { n, half_width, values })
    }

    pub fn from_fn(
        n: usize,
        half_width: f64,
        f: impl Fn(Vec3) -> Complex64 + Sync,
    ) -> Result<Self> {
        let mut field = Self::zeros(n, half_width)?;
        let h = field.spacing();
        let l = half_width;
        field.values.par_chunks_mut(n * n).enumerate().for_each(|(i, slab)| {
            for j in 0..n {
                for k in 0..n {
                    let x = [-l + i as f64 * h, -l + j as f64 * h, -l + k as f64 * h];
                    slab[j * n + k] = f(x);
                }
            }
        });
        Ok(field)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn point(&self, idx: usize) -> Vec3 {
        let n = self.n;
        let h = self.spacing();
        let l = self.half_width;
        let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
        [-l + i as f64 * h, -l + j as f64 * h, -l + k as f64 * h]
    }

    /// Wavenumber of lattice index i along one axis.
    pub fn wavenumber(&self, i: usize) -> f64 {
        let n = self.n as i64;
        let i = i as i64;
        let s = if i < n / 2 { i } else { i - n };
        std::f64::consts::PI * s as f64 / self.half_width
    }

    /// At least 4 points per wavelength and lambda L >= 4 pi.
    pub fn check_resolution(&self, lambda: f64) -> Result<()> {
        if lambda * self.spacing() > std::f64::consts::FRAC_PI_2 {
            return Err(Error::Resolution(format!(
                "spacing {} under-resolves wavelength {}",
                self.spacing(),
                2.0 * std::f64::consts::PI / lambda
            )));
        }
        if lambda * self.half_width < 4.0 * std::f64::consts::PI {
            return Err(Error::Resolution(format!(
                "half width {} holds fewer than 2 wavelengths",
                self.half_width
            )));
        }
        Ok(())
    }

    fn same_grid(&self, other: &VolumeField) -> Result<()> {
        if self.n != other.n || self.half_width != other.half_width {
            return Err(Error::GridMismatch("volume fields live on different grids".into()));
        }
        Ok(())
    }

    /// Pointwise product.
    pub fn mul(&self, other: &VolumeField) -> Result<VolumeField> {
        self.same_grid(other)?;
        let values = self.values.par_iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Ok(VolumeField { n: self.n, half_width: self.half_width, values })
    }

    /// a * self + b * other.
    pub fn axpby(&self, a: Complex64, other: &VolumeField, b: Complex64) -> Result<VolumeField> {
        self.same_grid(other)?;
        let values =
            self.values.par_iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(VolumeField { n: self.n, half_width: self.half_width, values })
    }

    /// Discrete L2 norm over points with |x| <= radius.
    pub fn norm_in_ball(&self, radius: f64) -> f64 {
        let h3 = self.spacing().powi(3);
        let r2 = radius * radius;
        let sum: f64 = (0..self.values.len())
            .into_par_iter()
            .map(|idx| {
                let x = self.point(idx);
                if x[0] * x[0] + x[1] * x[1] + x[2] * x[2] <= r2 {
                    self.values[idx].norm_sqr()
                } else {
                    0.0
                }
            })
            .sum();
        (sum * h3).sqrt()
    }

    /// sum_x a(x) conj(b(x)) h^3.
    pub fn inner(&self, other: &VolumeField) -> Result<Complex64> {
        self.same_grid(other)?;
        let h3 = self.spacing().powi(3);
        let s: Complex64 =
            self.values.par_iter().zip(&other.values).map(|(a, b)| a * b.conj()).sum();
        Ok(s * h3)
    }

    /// Tensor-product 6-point Lagrange interpolation, periodic.
    pub fn sample(&self, x: Vec3) -> Complex64 {
        let n = self.n as i64;
        let h = self.spacing();
        let mut idx = [0i64; 3];
        let mut w = [[0.0f64; 6]; 3];
        for d in 0..3 {
            let t = (x[d] + self.half_width) / h;
            let base = t.floor() as i64 - 2;
            idx[d] = base;
            for a in 0..6 {
                let xa = (base + a as i64) as f64;
                let mut c = 1.0;
                for b in 0..6 {
                    if a != b {
                        let xb = (base + b as i64) as f64;
                        c *= (t - xb) / (xa - xb);
                    }
                }
                w[d][a] = c;
            }
        }
        let wrap = |i: i64| i.rem_euclid(n) as usize;
        let nn = self.n;
        let mut acc = Complex64::new(0.0, 0.0);
        for a in 0..6 {
            let ia = wrap(idx[0] + a as i64);
            for b in 0..6 {
                let jb = wrap(idx[1] + b as i64);
                let wab = w[0][a] * w[1][b];
                for c in 0..6 {
                    let kc = wrap(idx[2] + c as i64);
                    acc += self.values[(ia * nn + jb) * nn + kc] * (wab * w[2][c]);
                }
            }
        }
        acc
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
}

// new[(k n + i) n + j] = old[(i n + j) n + k]
fn rotate(data: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    out.par_chunks_mut(n * n).enumerate().for_each(|(k, slab)| {
        for i in 0..n {
            for j in 0..n {
                slab[i * n + j] = data[(i * n + j) * n + k];
            }
        }
    });
    out
}

/// In-place 3-D DFT (unnormalized forward, 1/N^3 inverse).
pub(crate) fn fft3(data: &mut Vec<Complex64>, n: usize, inverse: bool) {
    let p = plans(n);
    let fft = if inverse { p.inverse } else { p.forward };
    for _ in 0..3 {
        data.par_chunks_mut(n).for_each(|line| fft.process(line));
        *data = rotate(data, n);
    }
    if inverse {
        let s = 1.0 / (n * n * n) as f64;
        data.par_iter_mut().for_each(|v| *v *= s);
    }
}

/// Applies a Fourier multiplier: transform, multiply by symbol(k), invert.
pub fn apply_multiplier<F>(u: &VolumeField, symbol: F) -> Result<VolumeField>
where
    F: Fn(Vec3) -> Complex64 + Sync,
{
    let n = u.n;
    let mut spec = u.values.clone();
    fft3(&mut spec, n, false);
    let ks: Vec<f64> = (0..n).map(|i| u.wavenumber(i)).collect();
    let bad = spec
        .par_chunks_mut(n * n)
        .enumerate()
        .map(|(i, slab)| {
            let mut bad = false;
            for j in 0..n {
                for k in 0..n {
                    let s = symbol([ks[i], ks[j], ks[k]]);
                    if !(s.re.is_finite() && s.im.is_finite()) {
                        bad = true;
                    }
                    slab[j * n + k] *= s;
                }
            }
            bad
        })
        .reduce(|| false, |a, b| a || b);
    if bad {
        return Err(Error::Domain("multiplier symbol is singular on the frequency lattice".into()));
    }
    fft3(&mut spec, n, true);
    Ok(VolumeField { n, half_width: u.half_width, values: spec })
}

/// Energy, absorption schedule and extrapolation order for the resolvent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventParams {
    pub lambda: f64,
    pub epsilons: Vec<f64>,
    /// Polynomial degree of the extrapolation in epsilon (number of
    /// epsilons used minus one).
    pub order: usize,
}

impl ResolventParams {
    /// Schedule {0.02, 0.01, 0.005} (2 pi / L) with second-order extrapolation.
    pub fn default_for(lambda: f64, half_width: f64) -> Self {
        let base = 2.0 * std::f64::consts::PI / half_width;
        ResolventParams { lambda, epsilons: vec![0.02 * base, 0.01 * base, 0.005 * base], order: 2 }
    }

    pub fn validate(&self, half_width: f64) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Invalid("energy must be positive".into()));
        }
        if self.order < 1 || self.epsilons.len() < self.order + 1 {
            return Err(Error::Invalid("extrapolation order needs order + 1 epsilons".into()));
        }
        let floor = 1e-3 * 2.0 * std::f64::consts::PI / half_width;
        for pair in self.epsilons.windows(2) {
            if !(pair[1] < pair[0]) {
                return Err(Error::Invalid("epsilons must be strictly decreasing".into()));
            }
        }
        if self.epsilons.iter().any(|e| !(*e >= floor)) {
            return Err(Error::Invalid(format!("epsilons must be at least {floor:.4}")));
        }
        Ok(())
    }
}

/// Resolvent output with extrapolation diagnostics.
#[derive(Debug, Clone)]
pub struct ResolventOutput {
    pub field: VolumeField,
    /// Relative difference between the top two extrapolation orders.
    pub residual: f64,
    /// Relative differences between consecutive epsilon solutions.
    pub differences: Vec<f64>,
}

/// Source support radius (fraction of L) accepted by the resolvent.
pub const SOURCE_RADIUS: f64 = 0.45;
/// Radius (fraction of L) inside which the resolvent output is exact.
pub const VALID_RADIUS: f64 = 0.55;

/// Smooth cutoff: 1 for r <= a, 0 for r >= b.
pub fn cutoff(r: f64, a: f64, b: f64) -> f64 {
    1.0 - smooth_step((r - a) / (b - a))
}

/// Window applied to resolvent inputs: 1 inside 0.35 L, 0 beyond 0.45 L.
pub fn source_window(x: Vec3, half_width: f64) -> f64 {
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    cutoff(r, 0.35 * half_width, SOURCE_RADIUS * half_width)
}

/// Fourier transform of the outgoing Helmholtz kernel e^{izr}/(4 pi r)
/// truncated to r <= R, at |k| = kappa.
pub fn truncated_helmholtz_hat(kappa: f64, z: Complex64, big_r: f64) -> Complex64 {
    let i = Complex64::i();
    let e = (i * z * big_r).exp();
    if kappa * big_r < 1e-6 {
        return (Complex64::new(1.0, 0.0) - e * (1.0 - i * z * big_r)) / (-z * z);
    }
    let (s, c) = (kappa * big_r).sin_cos();
    let den = kappa * kappa - z * z;
    if den.norm() > 1e-7 * z.norm_sqr() {
        return (Complex64::new(1.0, 0.0) - e * (c - i * z * s / kappa)) / den;
    }
    // removable singularity at kappa = z: ratio of kappa-derivatives
    let dnum = -e * (-big_r * s - i * z * (big_r * c / kappa - s / (kappa * kappa)));
    dnum / (2.0 * kappa)
}

/// Symbol of R0(z) = (|D| - z)^{-1}: (|k| + z)^{-1} + 2 z (k^2 - z^2)^{-1},
/// the second term with the kernel truncated at radius R.
pub fn resolvent_symbol(kappa: f64, z: Complex64, big_r: f64) -> Complex64 {
    1.0 / (kappa + z) + 2.0 * z * truncated_helmholtz_hat(kappa, z, big_r)
}

// Lagrange weights for extrapolating samples at xs to x = 0.
fn extrapolation_weights(xs: &[f64]) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            let mut w = 1.0;
            for (j, &xj) in xs.iter().enumerate() {
                if j != i {
                    w *= xj / (xj - xs[i]);
                }
            }
            w
        })
        .collect()
}

/// Outgoing free resolvent R0+(lambda) u by absorption extrapolation.
///
/// The input is multiplied by `source_window`; the output is exact (up to
/// discretization and extrapolation) for |x| <= 0.55 L.
pub fn free_resolvent_plus(u: &VolumeField, p: &ResolventParams) -> Result<ResolventOutput> {
    p.validate(u.half_width)?;
    u.check_resolution(p.lambda)?;
    let n = u.n;
    let l = u.half_width;
    let mut spec: Vec<Complex64> = (0..u.values.len())
        .into_par_iter()
        .map(|idx| u.values[idx] * source_window(u.point(idx), l))
        .collect();
    fft3(&mut spec, n, false);
    let eps = &p.epsilons[p.epsilons.len() - p.order - 1..];
    let hi = extrapolation_weights(eps);
    let lo = extrapolation_weights(&eps[1..]);
    let zs: Vec<Complex64> = eps.iter().map(|e| Complex64::new(p.lambda, *e)).collect();
    let ks: Vec<f64> = (0..n).map(|i| u.wavenumber(i)).collect();
    let k_count = eps.len();
    // per-slab accumulators: |P_hi - P_lo|^2, |P_hi|^2, |M_{i+1} - M_i|^2
    let stats = spec
        .par_chunks_mut(n * n)
        .enumerate()
        .map(|(i, slab)| {
            let mut acc = vec![0.0; 2 + k_count - 1];
            let mut m = vec![Complex64::new(0.0, 0.0); k_count];
            for j in 0..n {
                for k in 0..n {
                    let kappa = (ks[i] * ks[i] + ks[j] * ks[j] + ks[k] * ks[k]).sqrt();
                    for (q, z) in zs.iter().enumerate() {
                        m[q] = resolvent_symbol(kappa, *z, l);
                    }
                    let p_hi: Complex64 = hi.iter().zip(&m).map(|(w, v)| v * *w).sum();
                    let p_lo: Complex64 = lo.iter().zip(&m[1..]).map(|(w, v)| v * *w).sum();
                    let s = &mut slab[j * n + k];
                    let s2 = s.norm_sqr();
                    acc[0] += (p_hi - p_lo).norm_sqr() * s2;
                    acc[1] += p_hi.norm_sqr() * s2;
                    for q in 0..k_count - 1 {
                        acc[2 + q] += (m[q + 1] - m[q]).norm_sqr() * s2;
                    }
                    *s *= p_hi;
                }
            }
            acc
        })
        .reduce(
            || vec![0.0; 2 + k_count - 1],
            |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect(),
        );
    let total = stats[1].sqrt();
    let rel = |x: f64| if total > 0.0 { x.sqrt() / total } else { 0.0 };
    let residual = rel(stats[0]);
    let differences: Vec<f64> = stats[2..].iter().map(|&d| rel(d)).collect();
    for pair in differences.windows(2) {
        if pair[0] > 1e-13 && pair[1] >= pair[0] {
            return Err(Error::NonConvergence(format!(
                "absorption differences do not decrease: {:e} then {:e}",
                pair[0], pair[1]
            )));
        }
    }
    fft3(&mut spec, n, true);
    Ok(ResolventOutput {
        field: VolumeField { n, half_width: l, values: spec },
        residual,
        differences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn on_grid_wave(n: usize, l: f64, m: [i64; 3]) -> (VolumeField, Vec3) {
        let k = [PI * m[0] as f64 / l, PI * m[1] as f64 / l, PI * m[2] as f64 / l];
        let f = VolumeField::from_fn(n, l, |x| {
            Complex64::from_polar(1.0, k[0] * x[0] + k[1] * x[1] + k[2] * x[2])
        })
        .unwrap();
        (f, k)
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(VolumeField::zeros(12, 1.0).is_err());
        assert!(VolumeField::new(8, 1.0, vec![]).is_err());
    }

    #[test]
    fn fft_round_trip() {
        let f = VolumeField::from_fn(16, 3.0, |x| Complex64::new(x[0].sin(), x[1] * x[2])).unwrap();
        let mut d = f.values.clone();
        fft3(&mut d, 16, false);
        fft3(&mut d, 16, true);
        for (a, b) in d.iter().zip(&f.values) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn abs_symbol_on_plane_wave() {
        let (f, k) = on_grid_wave(16, 5.0, [2, -3, 1]);
        let kn = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
        let g = apply_multiplier(&f, |q| {
            Complex64::new((q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt(), 0.0)
        })
        .unwrap();
        for (a, b) in g.values.iter().zip(&f.values) {
            assert!((a - b * kn).norm() < 1e-11);
        }
    }

    #[test]
    fn composition_and_inverse_pair() {
        let f = VolumeField::from_fn(16, 4.0, |x| {
            Complex64::new((-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp(), 0.2 * x[0])
        })
        .unwrap();
        let abs = |q: Vec3| Complex64::new((q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt(), 0.0);
        let twice = apply_multiplier(&apply_multiplier(&f, abs).unwrap(), abs).unwrap();
        let lap = apply_multiplier(&f, |q| Complex64::new(q[0] * q[0] + q[1] * q[1] + q[2] * q[2], 0.0))
            .unwrap();
        let scale = lap.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in twice.values.iter().zip(&lap.values) {
            assert!((a - b).norm() < 1e-12 * scale);
        }
        let z = Complex64::new(1.0, 0.1);
        let inv = apply_multiplier(&f, |q| 1.0 / (abs(q) - z)).unwrap();
        let back = apply_multiplier(&inv, |q| abs(q) - z).unwrap();
        for (a, b) in back.values.iter().zip(&f.values) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn singular_symbol_is_domain_error() {
        let f = VolumeField::zeros(8, 1.0).unwrap();
        let r = apply_multiplier(&f, |q| Complex64::new(1.0 / (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]), 0.0));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn abs_is_self_adjoint() {
        let a = VolumeField::from_fn(16, 4.0, |x| Complex64::new((-x[0] * x[0]).exp(), x[1].sin())).unwrap();
        let b = VolumeField::from_fn(16, 4.0, |x| Complex64::new(x[2].cos(), (-x[1] * x[1]).exp())).unwrap();
        let abs = |q: Vec3| Complex64::new((q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt(), 0.0);
        let lhs = apply_multiplier(&a, abs).unwrap().inner(&b).unwrap();
        let rhs = a.inner(&apply_multiplier(&b, abs).unwrap()).unwrap();
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0));
    }

    #[test]
    fn interpolation_is_accurate_for_smooth_fields() {
        let f = VolumeField::from_fn(32, 6.0, |x| Complex64::from_polar(1.0, 0.7 * x[0] - 0.4 * x[2])).unwrap();
        let p = [0.123, -1.77, 2.31];
        let exact = Complex64::from_polar(1.0, 0.7 * p[0] - 0.4 * p[2]);
        assert!((f.sample(p) - exact).norm() < 1e-5);
    }

    #[test]
    fn truncated_kernel_limits() {
        let z = Complex64::new(1.3, 0.0);
        let r = 10.0;
        // continuity across the removable singularity
        let a = truncated_helmholtz_hat(1.3 + 1e-5, z, r);
        let b = truncated_helmholtz_hat(1.3, z, r);
        assert!((a - b).norm() < 1e-3 * b.norm());
        // k -> 0 agrees with the direct radial integral int_0^R r e^{izr} dr
        let direct = crate::quad::gl_panel(0.0, r, 60, |t: f64| Complex64::from_polar(t, z.re * t));
        assert!((truncated_helmholtz_hat(0.0, z, r) - direct).norm() < 1e-10);
    }

    #[test]
    fn zero_source_gives_zero() {
        let u = VolumeField::zeros(32, 14.0).unwrap();
        let p = ResolventParams::default_for(1.0, 14.0);
        let out = free_resolvent_plus(&u, &p).unwrap();
        assert!(out.field.values.iter().all(|v| v.norm() == 0.0));
    }

    // R0+ u at radius r for u = exp(-|x|^2 / 2): with uhat(k) = (2 pi)^{3/2} e^{-k^2/2},
    // (R0+ u)(r) = (2 pi^2)^{-1} int_0^inf f(k) / (k - lambda - i0) dk, f = k^2 j0(k r) uhat(k).
    fn radial_oracle(lambda: f64, r: f64) -> Complex64 {
        let f = |k: f64| {
            let j0 = if k * r < 1e-8 { 1.0 } else { (k * r).sin() / (k * r) };
            k * k * j0 * (2.0 * PI).powf(1.5) * (-k * k / 2.0).exp()
        };
        let fl = f(lambda);
        let pv = crate::quad::gl_panel(0.0, 2.0 * lambda, 200, |k: f64| {
            if (k - lambda).abs() < 1e-12 { 0.0 } else { (f(k) - fl) / (k - lambda) }
        }) + crate::quad::gl_panel(2.0 * lambda, 14.0, 400, |k: f64| f(k) / (k - lambda));
        Complex64::new(pv, PI * fl) / (2.0 * PI * PI)
    }

    #[test]
    fn resolvent_matches_radial_oracle() {
        let l = 14.0;
        let lambda = 1.0;
        let u = VolumeField::from_fn(64, l, |x| {
            Complex64::new((-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp(), 0.0)
        })
        .unwrap();
        let p = ResolventParams::default_for(lambda, l);
        let out = free_resolvent_plus(&u, &p).unwrap();
        assert!(out.residual < 1e-3, "{}", out.residual);
        assert!(out.differences[1] < out.differences[0]);
        for r in [0.0, 1.5, 3.0, 5.0, 7.5] {
            let got = out.field.sample([r, 0.0, 0.0]);
            let want = radial_oracle(lambda, r);
            assert!((got - want).norm() < 1e-3 * radial_oracle(lambda, 0.0).norm(), "r={r}: {got} vs {want}");
        }
    }

    #[test]
    fn schedule_validation() {
        let mut p = ResolventParams::default_for(1.0, 10.0);
        assert!(p.validate(10.0).is_ok());
        p.epsilons = vec![0.1, 0.2, 0.3];
        assert!(p.validate(10.0).is_err());
    }
}
