//! Polyhomogeneous potentials: windowed homogeneous layers plus a smooth
//! Gaussian remainder, their pointwise values and Fourier transforms.
//!
//! Fourier convention: Vhat(xi) = int e^{-i x.xi} V(x) dx.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::gl_panel;
use crate::special::{
    gamma, hankel_coefficients, minus_i_pow, oscillatory_tail, spherical_bessel_all,
    ylm_all,
};
use crate::sphere::{ShExpansion, Vec3};

/// Inner radius where the layers start to switch on.
pub const WINDOW_R0: f64 = 1.0;
/// Width of the smooth transition.
pub const WINDOW_DELTA: f64 = 0.25;
/// Radius beyond which every layer is exactly homogeneous.
pub const WINDOW_R1: f64 = WINDOW_R0 + WINDOW_DELTA;

// Switch from panel quadrature to the asymptotic tail in z = rho r.
const TAIL_SWITCH: f64 = 40.0;

pub(crate) fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a / (a + b)
    }
}

/// C-infinity window: 0 for r <= r0, 1 for r >= r0 + delta.
pub fn window(r: f64) -> f64 {
    smooth_step((r - WINDOW_R0) / WINDOW_DELTA)
}

/// |x|^{-order} v(x/|x|), windowed inside |x| < r0 + delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomLayer {
    pub order: f64,
    pub angular: ShExpansion,
}

impl HomLayer {
    pub fn new(order: f64, angular: ShExpansion) -> Result<Self> {
        if !(order.is_finite() && order > 2.0) {
            return Err(Error::Invalid(format!("layer order {order} must exceed 2")));
        }
        let scale = angular.coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
        if angular.real_symmetry_defect() > 1e-12 * scale {
            return Err(Error::Invalid(
                "angular coefficients violate c(l,-m) = (-1)^m conj(c(l,m))".into(),
            ));
        }
        Ok(HomLayer { order, angular })
    }

    /// Real part of the angular profile at a direction.
    pub fn angular_value(&self, dir: Vec3) -> f64 {
        self.angular.eval(dir).re
    }

    pub fn eval(&self, x: Vec3) -> f64 {
        let r = norm(x);
        let w = window(r);
        if w == 0.0 {
            return 0.0;
        }
        w * r.powf(-self.order) * self.angular_value(x)
    }

    /// Upper bound for |v| on the sphere.
    pub fn angular_bound(&self) -> f64 {
        let mut b = 0.0;
        for l in 0..=self.angular.lmax {
            let ymax = ((2 * l + 1) as f64 / (4.0 * PI)).sqrt();
            for k in 0..2 * l + 1 {
                b += self.angular.coeffs[l * l + k].norm() * ymax;
            }
        }
        b
    }
}

/// A e^{-|x - c|^2 / (2 s^2)}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub center: Vec3,
    pub width: f64,
    pub amplitude: f64,
}

impl GaussianBump {
    pub fn eval(&self, x: Vec3) -> f64 {
        let d = sub(x, self.center);
        self.amplitude * (-dot(d, d) / (2.0 * self.width * self.width)).exp()
    }

    /// Fourier transform by radial quadrature of the isotropic profile.
    pub fn fourier_hat(&self, xi: Vec3) -> Complex64 {
        let rho = norm(xi);
        let s = self.width;
        let mut radial = 0.0;
        let panels = 24;
        let h = 12.0 * s / panels as f64;
        for p in 0..panels {
            let a = p as f64 * h;
            radial += gl_panel(a, a + h, 16, |r: f64| {
                let j0 = if rho * r < 1e-8 { 1.0 } else { (rho * r).sin() / (rho * r) };
                r * r * (-r * r / (2.0 * s * s)).exp() * j0
            });
        }
        Complex64::from_polar(1.0, -dot(xi, self.center)) * (4.0 * PI * self.amplitude * radial)
    }
}

/// Sum of windowed homogeneous layers plus an optional Gaussian remainder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyhomPotential {
    pub layers: Vec<HomLayer>,
    pub remainder: Option<GaussianBump>,
}

impl PolyhomPotential {
    pub fn new(layers: Vec<HomLayer>, remainder: Option<GaussianBump>) -> Result<Self> {
        for pair in layers.windows(2) {
            if !(pair[1].order > pair[0].order) {
                return Err(Error::Invalid("layer orders must be strictly increasing".into()));
            }
        }
        if let Some(b) = &remainder {
            if !(b.width > 0.0 && b.width.is_finite() && b.amplitude.is_finite()) {
                return Err(Error::Invalid("remainder width must be positive".into()));
            }
        }
        Ok(PolyhomPotential { layers, remainder })
    }

    pub fn zero() -> Self {
        PolyhomPotential { layers: Vec::new(), remainder: None }
    }

    /// Leading order m, or None for a pure remainder.
    pub fn leading_order(&self) -> Option<f64> {
        self.layers.first().map(|l| l.order)
    }

    pub fn eval(&self, x: Vec3) -> f64 {
        let mut v: f64 = self.layers.iter().map(|l| l.eval(x)).sum();
        if let Some(b) = &self.remainder {
            v += b.eval(x);
        }
        v
    }

    /// Same potential multiplied by s.
    pub fn scaled(&self, s: f64) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let mut a = l.angular.clone();
                a.coeffs.iter_mut().for_each(|c| *c *= s);
                HomLayer { order: l.order, angular: a }
            })
            .collect();
        let remainder = self.remainder.map(|b| GaussianBump { amplitude: b.amplitude * s, ..b });
        PolyhomPotential { layers, remainder }
    }

    /// C with |V(x)| <= C <x>^{-m}, m the leading order (0 for a pure remainder).
    pub fn decay_constant(&self) -> f64 {
        let m = self.leading_order().unwrap_or(0.0);
        let mut c: f64 = self.layers.iter().map(|l| 2f64.powf(m / 2.0) * l.angular_bound()).sum();
        if let Some(b) = &self.remainder {
            let cn = norm(b.center);
            let mut sup: f64 = 0.0;
            for k in 0..=4000 {
                let t = k as f64 * 40.0 * b.width / 4000.0;
                let r = cn + t;
                let env = (1.0 + r * r).powf(m / 2.0) * (-t * t / (2.0 * b.width * b.width)).exp();
                sup = sup.max(env);
            }
            // grid sup plus slack for the sampling step
            c += b.amplitude.abs() * sup * 1.01;
        }
        c
    }

    /// Vhat at one frequency.
    pub fn fourier_hat(&self, xi: Vec3) -> Result<Complex64> {
        Ok(self.fourier_hat_many(&[xi])?[0])
    }

    /// Vhat at many frequencies; radial profiles are shared between
    /// frequencies of equal length.
    pub fn fourier_hat_many(&self, xis: &[Vec3]) -> Result<Vec<Complex64>> {
        for layer in &self.layers {
            if layer.order <= 3.0 {
                return Err(Error::Divergence(format!(
                    "layer of order {} has no absolutely convergent transform",
                    layer.order
                )));
            }
        }
        let mut keys: HashMap<i64, f64> = HashMap::new();
        let key = |rho: f64| (rho * 1e12).round() as i64;
        for &xi in xis {
            let rho = norm(xi);
            keys.entry(key(rho)).or_insert(rho);
        }
        let mut distinct: Vec<(i64, f64)> = keys.into_iter().collect();
        distinct.sort_by_key(|p| p.0);
        let profiles: Vec<Vec<Vec<f64>>> = distinct
            .par_iter()
            .map(|&(_, rho)| {
                self.layers
                    .iter()
                    .map(|layer| radial_profile(layer.order, layer.angular.lmax, rho))
                    .collect()
            })
            .collect();
        let index: HashMap<i64, usize> =
            distinct.iter().enumerate().map(|(i, &(k, _))| (k, i)).collect();
        let out: Vec<Complex64> = xis
            .par_iter()
            .map(|&xi| {
                let rho = norm(xi);
                let prof = &profiles[index[&key(rho)]];
                let mut v = Complex64::new(0.0, 0.0);
                for (layer, jl) in self.layers.iter().zip(prof) {
                    v += layer_transform(layer, xi, rho, jl);
                }
                if let Some(b) = &self.remainder {
                    v += b.fourier_hat(xi);
                }
                v
            })
            .collect();
        if out.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Precision("non-finite transform value".into()));
        }
        Ok(out)
    }
}

fn layer_transform(layer: &HomLayer, xi: Vec3, rho: f64, jl: &[f64]) -> Complex64 {
    if rho == 0.0 {
        return layer.angular.get(0, 0) * (4.0 * PI).sqrt() * jl[0];
    }
    let y = ylm_all(layer.angular.lmax, xi);
    let mut v = Complex64::new(0.0, 0.0);
    for l in 0..=layer.angular.lmax {
        let mut s = Complex64::new(0.0, 0.0);
        for k in 0..2 * l + 1 {
            s += layer.angular.coeffs[l * l + k] * y[l * l + k];
        }
        v += minus_i_pow(l) * s * jl[l];
    }
    v * (4.0 * PI)
}

/// J_l(rho) = int_0^inf W(r) r^{2-m} j_l(rho r) dr for l = 0..=lmax.
pub fn radial_profile(m: f64, lmax: usize, rho: f64) -> Vec<f64> {
    let mut out = vec![0.0; lmax + 1];
    // window shell [r0, r1]
    let panels = 4 + (rho * WINDOW_DELTA) as usize;
    let h = WINDOW_DELTA / panels as f64;
    for p in 0..panels {
        let a = WINDOW_R0 + p as f64 * h;
        let rule = crate::quad::gauss_legendre(20);
        for &(x, w) in rule.iter() {
            let r = a + 0.5 * h * (1.0 + x);
            let f = window(r) * r.powf(2.0 - m) * 0.5 * h * w;
            let j = spherical_bessel_all(lmax, rho * r);
            for l in 0..=lmax {
                out[l] += f * j[l];
            }
        }
    }
    if rho == 0.0 {
        out[0] += WINDOW_R1.powf(3.0 - m) / (m - 3.0);
        return out;
    }
    let t = hom_tail(m, lmax, rho * WINDOW_R1);
    let s = rho.powf(m - 3.0);
    for l in 0..=lmax {
        out[l] += s * t[l];
    }
    out
}

/// T_l(a) = int_a^inf z^{2-m} j_l(z) dz for l = 0..=lmax, a > 0, m > 3.
pub fn hom_tail(m: f64, lmax: usize, a: f64) -> Vec<f64> {
    let mut out = vec![0.0; lmax + 1];
    let z_end = a.max(TAIL_SWITCH);
    let mut edges = vec![a];
    let mut z = a;
    while z < 1.0 {
        z = (2.0 * z).min(1.0);
        edges.push(z);
    }
    let n_uniform = (z_end - z).ceil() as usize;
    if n_uniform > 0 {
        let h = (z_end - z) / n_uniform as f64;
        for k in 1..=n_uniform {
            edges.push(z + k as f64 * h);
        }
    }
    let rule = crate::quad::gauss_legendre(20);
    for e in edges.windows(2) {
        let (lo, hi) = (e[0], e[1]);
        for &(x, w) in rule.iter() {
            let zz = lo + 0.5 * (hi - lo) * (1.0 + x);
            let f = zz.powf(2.0 - m) * 0.5 * (hi - lo) * w;
            let j = spherical_bessel_all(lmax, zz);
            for l in 0..=lmax {
                out[l] += f * j[l];
            }
        }
    }
    for (l, o) in out.iter_mut().enumerate() {
        let coeffs = hankel_coefficients(l);
        let mut s = Complex64::new(0.0, 0.0);
        for (k, ak) in coeffs.iter().enumerate() {
            s += ak * oscillatory_tail(m - 1.0 + k as f64, z_end);
        }
        *o += (minus_i_pow(l + 1) * s).re;
    }
    out
}

/// gamma_{l,a} with FT(|x|^{-a} Y_l(x^)) = gamma_{l,a} |xi|^{a-3} Y_l(xi^).
pub fn hom_ft_multiplier(a: f64, l: usize) -> Result<Complex64> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Domain(format!("homogeneity degree {a} must be positive")));
    }
    let num_arg = (3.0 - a + l as f64) / 2.0;
    if num_arg <= 0.0 && (num_arg - num_arg.round()).abs() < 1e-9 {
        return Err(Error::DegenerateOrder(format!(
            "degree a = {a}, l = {l} hits a Gamma pole; the transform carries a log term"
        )));
    }
    let den_arg = (a + l as f64) / 2.0;
    let inv_den = if den_arg <= 0.0 && (den_arg - den_arg.round()).abs() < 1e-12 {
        0.0
    } else {
        1.0 / gamma(den_arg)
    };
    let mag = PI.powf(1.5) * 2f64.powf(3.0 - a) * gamma(num_arg) * inv_den;
    Ok(minus_i_pow(l) * mag)
}

pub(crate) fn norm(x: Vec3) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::adaptive_gk;

    fn iso_layer(order: f64, c00: f64) -> HomLayer {
        let mut e = ShExpansion::zeros(0);
        e.set(0, 0, Complex64::new(c00 * (4.0 * PI).sqrt(), 0.0));
        HomLayer::new(order, e).unwrap()
    }

    fn fixture() -> PolyhomPotential {
        let mut e = ShExpansion::zeros(2);
        e.set(0, 0, Complex64::new((4.0 * PI).sqrt(), 0.0));
        e.set(1, 0, Complex64::new(0.5, 0.0));
        e.set(2, 1, Complex64::new(0.15, 0.0));
        e.set(2, -1, Complex64::new(-0.15, 0.0));
        PolyhomPotential::new(vec![HomLayer::new(3.5, e).unwrap()], None).unwrap()
    }

    #[test]
    fn single_layer_value() {
        let v = PolyhomPotential::new(vec![iso_layer(4.0, 1.0)], None).unwrap();
        assert!((v.eval([0.0, 2.0, 0.0]) - 0.0625).abs() < 1e-14);
        assert_eq!(v.eval([0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn homogeneity_ratio() {
        let v = fixture();
        let x = [3.0, -4.0, 5.0];
        let s = 10.0 / norm(x);
        let a = v.eval([x[0] * s, x[1] * s, x[2] * s]);
        let b = v.eval([x[0] * 2.0 * s, x[1] * 2.0 * s, x[2] * 2.0 * s]);
        assert!((b / a - 2f64.powf(-3.5)).abs() < 1e-13);
    }

    #[test]
    fn remainder_at_center() {
        let b = GaussianBump { center: [0.5, 0.0, -1.0], width: 0.7, amplitude: 1.3 };
        let v = PolyhomPotential::new(vec![], Some(b)).unwrap();
        assert!((v.eval(b.center) - 1.3).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_increasing_orders() {
        assert!(PolyhomPotential::new(vec![iso_layer(4.0, 1.0), iso_layer(4.0, 1.0)], None).is_err());
    }

    #[test]
    fn gaussian_transform_matches_closed_form() {
        let b = GaussianBump { center: [0.0; 3], width: 1.0, amplitude: 1.0 };
        for &r in &[0.0, 0.3, 1.0, 2.5] {
            let v = b.fourier_hat([r, 0.0, 0.0]);
            let exact = (2.0 * PI).powf(1.5) * (-r * r / 2.0).exp();
            assert!((v.re - exact).abs() < 1e-6 && v.im.abs() < 1e-12);
        }
    }

    #[test]
    fn divergent_order_is_rejected() {
        let v = PolyhomPotential::new(vec![iso_layer(3.0, 1.0)], None).unwrap();
        assert!(matches!(v.fourier_hat([1.0, 0.0, 0.0]), Err(Error::Divergence(_))));
    }

    // Direct r-quadrature of the radial integral with an explicit large cutoff
    // and the leading asymptotic remainder, an independent route to J_l.
    fn radial_direct(m: f64, l: usize, rho: f64) -> f64 {
        let r_max = 4000.0 / rho.max(1e-3);
        let f = |r: f64| window(r) * r.powf(2.0 - m) * spherical_bessel_all(l, rho * r)[l];
        let mut total = adaptive_gk(f, WINDOW_R0, WINDOW_R1, 1e-15, 1e-13, 500).value;
        let mut a = WINDOW_R1;
        let step = 0.5 / rho.max(0.05);
        while a < r_max {
            let b = (a + step).min(r_max);
            total += gl_panel(a, b, 16, f);
            a = b;
        }
        total
    }

    #[test]
    fn radial_profile_matches_direct_quadrature() {
        for &(m, rho) in &[(3.5, 0.7), (4.5, 1.3), (3.5, 2.0)] {
            let prof = radial_profile(m, 2, rho);
            for l in 0..=2 {
                let d = radial_direct(m, l, rho);
                // direct route truncates the r^{2-m} j_l tail at 4000/rho
                assert!((prof[l] - d).abs() < 2e-5, "m={m} rho={rho} l={l}: {} vs {d}", prof[l]);
            }
        }
    }

    #[test]
    fn zero_frequency_is_total_integral() {
        let v = PolyhomPotential::new(vec![iso_layer(4.5, 1.0)], None).unwrap();
        let direct = 4.0 * PI
            * (adaptive_gk(|r| window(r) * r.powf(-2.5), 1.0, 1.25, 1e-15, 1e-13, 200).value
                + 1.25f64.powf(-1.5) / 1.5);
        let v0 = v.fourier_hat([0.0; 3]).unwrap();
        assert!((v0.re - direct).abs() < 1e-12 && v0.im == 0.0);
        let near = v.fourier_hat([1e-7, 0.0, 0.0]).unwrap();
        assert!((near.re - v0.re).abs() < 1e-4);
    }

    #[test]
    fn conjugate_symmetry() {
        let v = fixture();
        for xi in [[0.3, -0.2, 0.5], [1.0, 0.4, 0.0], [0.01, 0.02, -0.015]] {
            let a = v.fourier_hat(xi).unwrap();
            let b = v.fourier_hat([-xi[0], -xi[1], -xi[2]]).unwrap();
            assert!((a - b.conj()).norm() < 1e-10 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn multiplier_riesz_value() {
        let g = hom_ft_multiplier(2.0, 0).unwrap();
        assert!((g.re - 2.0 * PI * PI).abs() < 1e-12 && g.im == 0.0);
        let g1 = hom_ft_multiplier(3.5, 1).unwrap();
        assert!(g1.re.abs() < 1e-15 && g1.im < 0.0);
        assert!(matches!(hom_ft_multiplier(5.0, 0), Err(Error::DegenerateOrder(_))));
    }

    // Fit Vhat(rho e) on small rho to {rho^l, rho^{l+2}, rho^{l+4}, rho^{a-3}} and
    // compare the singular coefficient with gamma_{l,a} c Y(e).
    fn singular_coefficient(v: &PolyhomPotential, dir: Vec3, l: usize, a: f64) -> Complex64 {
        let rhos: Vec<f64> = (0..40).map(|k| 0.02 + 0.01 * k as f64).collect();
        let pts: Vec<Vec3> = rhos.iter().map(|r| [dir[0] * r, dir[1] * r, dir[2] * r]).collect();
        let vals = v.fourier_hat_many(&pts).unwrap();
        let cols = 4;
        let mut m = nalgebra::DMatrix::<f64>::zeros(rhos.len(), cols);
        for (i, &r) in rhos.iter().enumerate() {
            m[(i, 0)] = r.powi(l as i32);
            m[(i, 1)] = r.powi(l as i32 + 2);
            m[(i, 2)] = r.powi(l as i32 + 4);
            m[(i, 3)] = r.powf(a - 3.0);
        }
        let svd = m.svd(true, true);
        let re = nalgebra::DVector::from_iterator(rhos.len(), vals.iter().map(|v| v.re));
        let im = nalgebra::DVector::from_iterator(rhos.len(), vals.iter().map(|v| v.im));
        let sr = svd.solve(&re, 1e-14).unwrap();
        let si = svd.solve(&im, 1e-14).unwrap();
        Complex64::new(sr[3], si[3])
    }

    #[test]
    fn multiplier_matches_transform_of_truncated_layer() {
        let a = 3.5;
        let v = PolyhomPotential::new(vec![iso_layer(a, 1.0)], None).unwrap();
        let b = singular_coefficient(&v, [0.0, 0.0, 1.0], 0, a);
        let gamma0 = hom_ft_multiplier(a, 0).unwrap();
        assert!((b - gamma0).norm() < 0.02 * gamma0.norm(), "{b} vs {gamma0}");

        let mut e = ShExpansion::zeros(1);
        e.set(1, 0, Complex64::new(1.0, 0.0));
        let v1 = PolyhomPotential::new(vec![HomLayer::new(a, e).unwrap()], None).unwrap();
        let dir = [0.6, 0.0, 0.8];
        let y = ylm_all(1, dir)[crate::special::lm_index(1, 0)];
        let b1 = singular_coefficient(&v1, dir, 1, a);
        let gamma1 = hom_ft_multiplier(a, 1).unwrap() * y;
        assert!((b1 - gamma1).norm() < 0.02 * gamma1.norm(), "{b1} vs {gamma1}");
        // phase factor (-i) relative to the real l = 0 value
        assert!(b1.re.abs() < 1e-3 * b1.norm());
    }

    #[test]
    fn transform_decays() {
        let v = fixture();
        let a = v.fourier_hat([0.0, 0.0, 5.0]).unwrap().norm();
        let b = v.fourier_hat([0.0, 0.0, 40.0]).unwrap().norm();
        assert!(b < a);
    }

    #[test]
    fn decay_constant_bounds_samples() {
        let mut v = fixture();
        v.remainder = Some(GaussianBump { center: [1.0, 0.0, 0.0], width: 0.8, amplitude: -0.7 });
        let c = v.decay_constant();
        let m = 3.5;
        for k in 0..200 {
            let t = k as f64 * 0.1;
            let x = [t * 0.6, -t * 0.3, t * 0.742];
            let bound = c * (1.0 + dot(x, x)).powf(-m / 2.0);
            assert!(v.eval(x).abs() <= bound);
        }
    }
}
