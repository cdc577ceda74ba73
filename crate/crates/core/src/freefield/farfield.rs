//! Herglotz waves, exterior radiation and spherical-wave coefficient fits.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply_multiplier, cutoff, VolumeField};
use crate::error::{Error, Result};
use crate::potential::norm;
use crate::special::{shift_kernel_factor, shift_kernel_factor_asymptotic};
use crate::sphere::{sh_analyze, SphereFn, SphereGrid, Vec3};

/// Phi0(lambda) h (x) = int e^{i lambda x.w} h(w) dw by the grid quadrature.
pub fn herglotz(lambda: f64, h: &SphereFn, points: &[Vec3]) -> Result<Vec<Complex64>> {
    let rmax = points.iter().map(|p| norm(*p)).fold(0.0, f64::max);
    let need = 2.0 * lambda * rmax;
    if (h.grid.exactness() as f64) < need {
        return Err(Error::Precision(format!(
            "grid exactness {} below 2 lambda |x| = {need:.1}",
            h.grid.exactness()
        )));
    }
    let nodes = h.grid.nodes();
    let hw: Vec<Complex64> =
        h.values.iter().zip(h.grid.weights()).map(|(v, w)| v * *w).collect();
    Ok(points
        .par_iter()
        .map(|x| {
            nodes
                .iter()
                .zip(&hw)
                .map(|(w, c)| {
                    let ph = lambda * (x[0] * w[0] + x[1] * w[1] + x[2] * w[2]);
                    c * Complex64::from_polar(1.0, ph)
                })
                .sum()
        })
        .collect())
}

/// Phi0(lambda) h* with h*(w) = h(-w); its far field is
/// g- = (2 pi i / lambda) h(theta), g+ = -(2 pi i / lambda) h(-theta).
pub fn herglotz_reflected(lambda: f64, h: &SphereFn, points: &[Vec3]) -> Result<Vec<Complex64>> {
    herglotz(lambda, &h.reflect()?, points)
}

/// Kernel of R0+(lambda) = (|D| - lambda - i0)^{-1} at distance r.
pub fn outgoing_kernel(lambda: f64, r: f64) -> Complex64 {
    let a = lambda * r;
    let g = if a >= 20.0 { shift_kernel_factor_asymptotic(a) } else { shift_kernel_factor(a) };
    Complex64::from_polar(2.0 * lambda / (4.0 * PI * r), a) + g / (2.0 * PI * PI * r * r)
}

/// R0+(lambda) s evaluated at points outside the support of s, by direct
/// quadrature of the exact kernel over the grid.
pub fn radiate(source: &VolumeField, lambda: f64, points: &[Vec3]) -> Result<Vec<Complex64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Invalid("energy must be positive".into()));
    }
    let h3 = source.spacing().powi(3);
    let peak = source.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let support: Vec<(Vec3, Complex64)> = source
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.norm() > 1e-15 * peak)
        .map(|(i, v)| (source.point(i), v * h3))
        .collect();
    let reach = support.iter().map(|(y, _)| norm(*y)).fold(0.0, f64::max);
    if let Some(p) = points.iter().find(|p| norm(**p) <= reach + source.spacing()) {
        return Err(Error::Invalid(format!(
            "radiation point at radius {} meets the source support (radius {reach})",
            norm(*p)
        )));
    }
    Ok(points
        .par_iter()
        .map(|x| {
            support
                .iter()
                .map(|(y, s)| {
                    let r = norm([x[0] - y[0], x[1] - y[1], x[2] - y[2]]);
                    s * outgoing_kernel(lambda, r)
                })
                .sum()
        })
        .collect())
}

/// Field values on rays r theta, theta in a sphere grid, stored
/// direction-major: values[d * radii.len() + k].
#[derive(Debug, Clone)]
pub struct RadialSamples {
    pub grid: Arc<SphereGrid>,
    pub radii: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl RadialSamples {
    /// Sample points in the storage order.
    pub fn points(grid: &SphereGrid, radii: &[f64]) -> Vec<Vec3> {
        let mut pts = Vec::with_capacity(grid.len() * radii.len());
        for d in grid.nodes() {
            for r in radii {
                pts.push([r * d[0], r * d[1], r * d[2]]);
            }
        }
        pts
    }

    pub fn from_fn(
        grid: Arc<SphereGrid>,
        radii: Vec<f64>,
        f: impl Fn(&[Vec3]) -> Result<Vec<Complex64>>,
    ) -> Result<Self> {
        let values = f(&Self::points(&grid, &radii))?;
        Ok(RadialSamples { grid, radii, values })
    }

    /// Interpolates a grid field; all radii must lie inside the grid.
    pub fn from_volume(u: &VolumeField, grid: Arc<SphereGrid>, radii: Vec<f64>) -> Result<Self> {
        let limit = u.half_width() - 3.0 * u.spacing();
        if radii.iter().any(|r| *r > limit) {
            return Err(Error::Invalid(format!("sample radius beyond the grid interior {limit}")));
        }
        let pts = Self::points(&grid, &radii);
        let values = pts.par_iter().map(|p| u.sample(*p)).collect();
        Ok(RadialSamples { grid, radii, values })
    }
}

/// Equispaced radii lambda r in [a, b].
pub fn shell_radii(lambda: f64, a: f64, b: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| (a + (b - a) * k as f64 / (count - 1) as f64) / lambda).collect()
}

/// Incoming and outgoing leading far-field coefficients.
#[derive(Debug, Clone)]
pub struct FarField {
    /// Coefficient of e^{-i lambda r}/r.
    pub g_minus: SphereFn,
    /// Coefficient of e^{+i lambda r}/r.
    pub g_plus: SphereFn,
    /// Max over directions of the relative least-squares misfit.
    pub residual: f64,
}

/// Number of inverse powers of r kept in the default fit model.
pub const FIT_TERMS: usize = 3;

/// Per-direction least squares in the model
/// sum_{k=1..terms} (a_k e^{-i lambda r} + b_k e^{i lambda r}) r^{-k};
/// g- = a_1, g+ = b_1.
pub fn farfield_fit(s: &RadialSamples, lambda: f64, terms: usize) -> Result<FarField> {
    let nr = s.radii.len();
    if s.values.len() != nr * s.grid.len() {
        return Err(Error::Structural("sample count does not match grid x radii".into()));
    }
    if terms == 0 {
        return Err(Error::Invalid("fit needs at least one term".into()));
    }
    let rmin = s.radii.iter().cloned().fold(f64::INFINITY, f64::min);
    let rmax = s.radii.iter().cloned().fold(0.0, f64::max);
    if !(rmin > 0.0) {
        return Err(Error::Invalid("fit radii must be positive".into()));
    }
    let wavelength = 2.0 * PI / lambda;
    if rmax - rmin < wavelength {
        return Err(Error::Conditioning(format!(
            "radii span {:.3} is under one wavelength",
            rmax - rmin
        )));
    }
    if rmax - rmin < 4.0 * wavelength || nr < 8 {
        return Err(Error::Invalid(format!(
            "fit needs >= 8 radii over >= 4 wavelengths (got {nr} over {:.2})",
            (rmax - rmin) / wavelength
        )));
    }
    let cols = 2 * terms;
    if nr < cols + 2 {
        return Err(Error::Invalid(format!("{nr} radii for {cols} unknowns")));
    }
    let a = DMatrix::from_fn(nr, cols, |i, j| {
        let r = s.radii[i];
        let k = (j / 2 + 1) as i32;
        let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
        Complex64::from_polar((rmin / r).powi(k), sign * lambda * r)
    });
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::Conditioning(format!("design matrix condition {:e}", smax / smin)));
    }
    let pinv = svd
        .pseudo_inverse(1e-12 * smax)
        .map_err(|e| Error::Conditioning(e.to_string()))?;
    let per_dir: Vec<(Complex64, Complex64, f64)> = s
        .values
        .par_chunks(nr)
        .map(|y| {
            let y = nalgebra::DVector::from_column_slice(y);
            let c = &pinv * &y;
            let fit = &a * &c;
            let ny = y.norm();
            let res = if ny > 0.0 { (fit - &y).norm() / ny } else { 0.0 };
            (c[0] * rmin, c[1] * rmin, res)
        })
        .collect();
    let residual = per_dir.iter().map(|t| t.2).fold(0.0, f64::max);
    Ok(FarField {
        g_minus: SphereFn::new(s.grid.clone(), per_dir.iter().map(|t| t.0).collect())?,
        g_plus: SphereFn::new(s.grid.clone(), per_dir.iter().map(|t| t.1).collect())?,
        residual,
    })
}

/// Grid and fit settings for `shifted_resolvent_asymp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftedOptions {
    pub n: usize,
    /// Half width in units of 1/lambda.
    pub half_width: f64,
    pub radii: usize,
    pub tolerance: f64,
}

impl Default for ShiftedOptions {
    fn default() -> Self {
        ShiftedOptions { n: 256, half_width: 64.0, radii: 24, tolerance: 0.05 }
    }
}

/// Which candidate constant the measured ratios agree with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignVerdict {
    Plus,
    Minus,
    Neither,
    NoData,
}

/// Measured ratios (coefficient out)/(coefficient in) for (|D| + lambda)^{-1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftedMeasurement {
    pub lambda: f64,
    pub ratio_plus: Option<Complex64>,
    pub ratio_minus: Option<Complex64>,
    /// Max of the fit residual and the angular deviation from a pure ratio.
    pub residual: f64,
    pub candidate_plus: f64,
    pub candidate_minus: f64,
    pub verdict: SignVerdict,
    pub conclusive: bool,
}

impl ShiftedMeasurement {
    /// Real part of the measured constant (mean over the available sides).
    pub fn constant(&self) -> Option<f64> {
        let v: Vec<f64> = [self.ratio_plus, self.ratio_minus].iter().flatten().map(|c| c.re).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn inner(a: &SphereFn, b: &SphereFn) -> Complex64 {
    a.values
        .iter()
        .zip(&b.values)
        .zip(a.grid.weights())
        .map(|((x, y), w)| x * y.conj() * *w)
        .sum()
}

/// Applies (|D| + lambda)^{-1} to chi(r) [e^{i lambda r} h+ + e^{-i lambda r} h-] / r
/// and fits the output far field on the shell 0.25 L..0.7 L.
pub fn shifted_resolvent_asymp(
    h_plus: &SphereFn,
    h_minus: &SphereFn,
    lambda: f64,
    opts: &ShiftedOptions,
) -> Result<ShiftedMeasurement> {
    if h_plus.grid != h_minus.grid {
        return Err(Error::GridMismatch("h+ and h- live on different grids".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Invalid("energy must be positive".into()));
    }
    let candidate_plus = 0.5 / lambda;
    let np = h_plus.l2_norm();
    let nm = h_minus.l2_norm();
    if np == 0.0 && nm == 0.0 {
        return Ok(ShiftedMeasurement {
            lambda,
            ratio_plus: None,
            ratio_minus: None,
            residual: 0.0,
            candidate_plus,
            candidate_minus: -candidate_plus,
            verdict: SignVerdict::NoData,
            conclusive: true,
        });
    }
    let grid = h_plus.grid.clone();
    let lmax = grid.max_analysis_degree();
    let ep = sh_analyze(h_plus, lmax)?;
    let em = sh_analyze(h_minus, lmax)?;
    let scale = ep.coeffs.iter().chain(&em.coeffs).map(|c| c.norm()).fold(0.0, f64::max);
    let deg = ep.effective_degree(1e-12 * scale).max(em.effective_degree(1e-12 * scale));
    let (ep, em) = (ep.resized(deg), em.resized(deg));
    if 2 * deg > lmax {
        return Err(Error::Invalid(format!(
            "inputs of degree {deg} are not band-limited on a grid resolving degree {lmax}"
        )));
    }
    let l = opts.half_width / lambda;
    let field = VolumeField::from_fn(opts.n, l, |x| {
        let r = norm(x);
        let chi = (1.0 - cutoff(r, 0.05 * l, 0.15 * l)) * cutoff(r, 0.8 * l, 0.95 * l);
        if chi == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let out = Complex64::from_polar(chi / r, lambda * r);
        out * ep.eval(x) + out.conj() * em.eval(x)
    })?;
    field.check_resolution(lambda)?;
    let image = apply_multiplier(&field, |q| {
        Complex64::new(1.0 / ((q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt() + lambda), 0.0)
    })?;
    let radii: Vec<f64> = (0..opts.radii)
        .map(|k| l * (0.25 + 0.45 * k as f64 / (opts.radii - 1) as f64))
        .collect();
    let samples = RadialSamples::from_volume(&image, grid, radii)?;
    let ff = farfield_fit(&samples, lambda, FIT_TERMS)?;
    let mut residual = ff.residual;
    let mut side = |g: &SphereFn, h: &SphereFn, nh: f64| -> Option<Complex64> {
        if nh == 0.0 {
            return None;
        }
        let ratio = inner(g, h) / (nh * nh);
        let dev: f64 = g
            .values
            .iter()
            .zip(&h.values)
            .zip(g.grid.weights())
            .map(|((a, b), w)| (a - ratio * b).norm_sqr() * w)
            .sum::<f64>()
            .sqrt();
        residual = residual.max(dev / (ratio.norm() * nh));
        Some(ratio)
    };
    let ratio_plus = side(&ff.g_plus, h_plus, np);
    let ratio_minus = side(&ff.g_minus, h_minus, nm);
    let conclusive = residual <= opts.tolerance;
    let close = |c: f64| {
        [ratio_plus, ratio_minus]
            .iter()
            .flatten()
            .all(|r| (r - c).norm() <= 2.0 * opts.tolerance * c.abs())
    };
    let verdict = if close(candidate_plus) {
        SignVerdict::Plus
    } else if close(-candidate_plus) {
        SignVerdict::Minus
    } else {
        SignVerdict::Neither
    };
    Ok(ShiftedMeasurement {
        lambda,
        ratio_plus,
        ratio_minus,
        residual,
        candidate_plus,
        candidate_minus: -candidate_plus,
        verdict,
        conclusive,
    })
}
