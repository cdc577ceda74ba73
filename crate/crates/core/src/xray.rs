//! X-ray transform of potentials, the weighted great-circle transform of the
//! angular profile, and filtered backprojection on planes outside the unit ball.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{dot, norm, PolyhomPotential, WINDOW_R1};
use crate::quad::{adaptive_gk, gauss_jacobi};
use crate::sphere::{ShExpansion, Vec3};

/// The line {offset + t direction}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSpec {
    pub direction: Vec3,
    pub offset: Vec3,
}

impl LineSpec {
    pub fn new(direction: Vec3, offset: Vec3) -> Result<Self> {
        if (norm(direction) - 1.0).abs() > 1e-12 {
            return Err(Error::Domain("line direction must be a unit vector".into()));
        }
        if dot(direction, offset).abs() > 1e-12 {
            return Err(Error::Domain("line offset must be orthogonal to its direction".into()));
        }
        Ok(LineSpec { direction, offset })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineIntegral {
    pub value: f64,
    /// Quadrature error estimate plus the analytic tail bound.
    pub error: f64,
    /// The line meets |x| <= r0 + delta, where layers are not homogeneous.
    pub window_contaminated: bool,
}

/// Integral of V along a line, to an absolute error of about 1e-13 times the
/// potential's decay constant.
pub fn line_integral(v: &PolyhomPotential, line: &LineSpec) -> Result<LineIntegral> {
    line_integral_tol(v, line, 1e-13)
}

/// `line_integral` with a relative tolerance of the adaptive quadrature.
pub fn line_integral_tol(v: &PolyhomPotential, line: &LineSpec, tol: f64) -> Result<LineIntegral> {
    // canonical orientation makes X(theta) and X(-theta) bitwise equal
    let mut theta = line.direction;
    let first = theta.iter().copied().find(|c| *c != 0.0).unwrap_or(1.0);
    if first < 0.0 {
        theta = [-theta[0], -theta[1], -theta[2]];
    }
    let x = line.offset;
    let s = norm(x).max(0.5);
    let c = v.decay_constant();
    let m = v.leading_order().unwrap_or(0.0);
    let mut t_max: f64 = 10.0 * s;
    let mut tail = 0.0;
    if !v.layers.is_empty() {
        if m <= 1.0 {
            return Err(Error::Divergence(format!("order {m} is not integrable along lines")));
        }
        let target = 1e-16 * c.max(1e-300);
        t_max = t_max.max((2.0 * c / ((m - 1.0) * target)).powf(1.0 / (m - 1.0)));
        tail = 2.0 * c * t_max.powf(1.0 - m) / (m - 1.0);
    }
    if let Some(b) = &v.remainder {
        let reach = norm(b.center) + 40.0 * b.width;
        t_max = t_max.max(reach);
    }
    let u_max = (t_max / s).asinh();
    let f = |u: f64| {
        let t = s * u.sinh();
        let p = [x[0] + t * theta[0], x[1] + t * theta[1], x[2] + t * theta[2]];
        v.eval(p) * s * u.cosh()
    };
    let scale = c.max(1e-300) * s.powf(1.0 - m.max(1.0));
    let res = adaptive_gk(f, -u_max, u_max, tol * 1e-2 * scale, tol, 4000);
    let error = res.error + tail;
    if error > 1e-8 * scale.max(1.0) {
        return Err(Error::Precision(format!(
            "line integral error estimate {error:e} exceeds 1e-8"
        )));
    }
    Ok(LineIntegral {
        value: res.value,
        error,
        window_contaminated: norm(x) <= WINDOW_R1,
    })
}

/// I(theta, w) = int_0^pi sin(a)^{m-2} v0(sin(a) w - cos(a) theta) da.
pub fn weighted_geodesic(v0: &ShExpansion, m: f64, theta: Vec3, w: Vec3) -> Result<f64> {
    if !(m > 2.0) {
        return Err(Error::Domain(format!("weight exponent needs m > 2, got {m}")));
    }
    if (norm(theta) - 1.0).abs() > 1e-10 || (norm(w) - 1.0).abs() > 1e-10 {
        return Err(Error::Domain("theta and w must be unit vectors".into()));
    }
    if dot(theta, w).abs() > 1e-10 {
        return Err(Error::Domain("w must be orthogonal to theta".into()));
    }
    // alpha = pi (1 + t)/2; sin(alpha) = (1 - t^2) q(t) with q smooth and positive
    let rule = gauss_jacobi(32 + 2 * v0.lmax, m - 2.0, m - 2.0);
    let mut acc = 0.0;
    for &(t, wt) in &rule {
        let alpha = 0.5 * PI * (1.0 + t);
        let (sa, ca) = alpha.sin_cos();
        let q = (0.5 * PI * t).cos() / ((1.0 - t) * (1.0 + t));
        let dir = [sa * w[0] - ca * theta[0], sa * w[1] - ca * theta[1], sa * w[2] - ca * theta[2]];
        acc += wt * q.powf(m - 2.0) * v0.eval(dir).re;
    }
    Ok(0.5 * PI * acc)
}

/// A plane {y : y.normal = offset} with |offset| beyond the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub normal: Vec3,
    pub offset: f64,
}

impl PlaneSpec {
    pub fn new(normal: Vec3, offset: f64) -> Result<Self> {
        if (norm(normal) - 1.0).abs() > 1e-12 {
            return Err(Error::Domain("plane normal must be a unit vector".into()));
        }
        if !(offset.abs() > 1.0) {
            return Err(Error::Domain("plane must avoid the unit ball (|d| > 1)".into()));
        }
        Ok(PlaneSpec { normal, offset })
    }

    /// Orthonormal in-plane basis (e1, e2).
    pub fn basis(&self) -> (Vec3, Vec3) {
        let n = self.normal;
        let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let k = dot(helper, n);
        let e1 = [helper[0] - k * n[0], helper[1] - k * n[1], helper[2] - k * n[2]];
        let l = norm(e1);
        let e1 = [e1[0] / l, e1[1] / l, e1[2] / l];
        let e2 = [n[1] * e1[2] - n[2] * e1[1], n[2] * e1[0] - n[0] * e1[2], n[0] * e1[1] - n[1] * e1[0]];
        (e1, e2)
    }

    /// Point d n + u e1 + v e2.
    pub fn point(&self, u: f64, v: f64) -> Vec3 {
        let (e1, e2) = self.basis();
        let d = self.offset;
        let n = self.normal;
        [
            d * n[0] + u * e1[0] + v * e2[0],
            d * n[1] + u * e1[1] + v * e2[1],
            d * n[2] + u * e1[2] + v * e2[2],
        ]
    }
}

/// Filtered-backprojection reconstruction on the central patch of a plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneReconstruction {
    pub plane: PlaneSpec,
    /// Patch coordinates along each in-plane axis.
    pub coords: Vec<f64>,
    /// Reconstructed values, row-major with rows along e2.
    pub values: Vec<f64>,
    /// Direct evaluation at the same points.
    pub direct: Vec<f64>,
    /// Relative L2 error over the disk of radius `patch_radius`.
    pub rel_l2_error: f64,
    pub patch_radius: f64,
}

pub const FBP_ANGLES: usize = 180;
const PATCH_POINTS: usize = 41;

/// Radon data of V restricted to the plane, reconstructed by filtered
/// backprojection with the Shepp-Logan kernel.
pub fn plane_radon_invert(
    v: &PolyhomPotential,
    plane: &PlaneSpec,
    resolution: usize,
) -> Result<PlaneReconstruction> {
    if plane.offset.abs() <= WINDOW_R1 {
        return Err(Error::Domain("plane meets the window region".into()));
    }
    let d = plane.offset.abs();
    let patch = 3.0 * d;
    let s_max = 4.0 * patch;
    if resolution < 2 {
        return Err(Error::Precision("resolution must be at least 2".into()));
    }
    let tau = 2.0 * s_max / (resolution - 1) as f64;
    if tau > d / 4.0 {
        return Err(Error::Precision(format!(
            "offset spacing {tau:.3} too coarse for plane distance {d}; need resolution >= {}",
            (8.0 * s_max / d).ceil() as usize + 1
        )));
    }
    let (e1, e2) = plane.basis();
    let offsets: Vec<f64> = (0..resolution).map(|j| -s_max + j as f64 * tau).collect();
    let kernel: Vec<f64> = (0..resolution)
        .map(|n| {
            let n = n as f64;
            -2.0 / (PI * PI * tau * tau * (4.0 * n * n - 1.0))
        })
        .collect();
    let filtered: Vec<Vec<f64>> = (0..FBP_ANGLES)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let phi = PI * k as f64 / FBP_ANGLES as f64;
            let (sp, cp) = phi.sin_cos();
            let nu = [cp * e1[0] + sp * e2[0], cp * e1[1] + sp * e2[1], cp * e1[2] + sp * e2[2]];
            let dir = [-sp * e1[0] + cp * e2[0], -sp * e1[1] + cp * e2[1], -sp * e1[2] + cp * e2[2]];
            let mut proj = Vec::with_capacity(resolution);
            for &s in &offsets {
                let dn = plane.offset;
                let n = plane.normal;
                let x = [dn * n[0] + s * nu[0], dn * n[1] + s * nu[1], dn * n[2] + s * nu[2]];
                let line = LineSpec { direction: dir, offset: x };
                proj.push(line_integral_tol(v, &line, 1e-10)?.value);
            }
            Ok((0..resolution)
                .map(|j| {
                    tau * (0..resolution)
                        .map(|i| kernel[j.abs_diff(i)] * proj[i])
                        .sum::<f64>()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let coords: Vec<f64> = (0..PATCH_POINTS)
        .map(|i| -patch + 2.0 * patch * i as f64 / (PATCH_POINTS - 1) as f64)
        .collect();
    let mut values = Vec::with_capacity(PATCH_POINTS * PATCH_POINTS);
    let mut direct = Vec::with_capacity(PATCH_POINTS * PATCH_POINTS);
    let mut num = 0.0;
    let mut den = 0.0;
    for &b in &coords {
        for &a in &coords {
            let mut acc = 0.0;
            for (k, q) in filtered.iter().enumerate() {
                let phi = PI * k as f64 / FBP_ANGLES as f64;
                let s = a * phi.cos() + b * phi.sin();
                let pos = (s + s_max) / tau;
                let i = (pos.floor() as usize).min(resolution - 2);
                let frac = pos - i as f64;
                acc += q[i] * (1.0 - frac) + q[i + 1] * frac;
            }
            let rec = acc * PI / FBP_ANGLES as f64;
            let exact = v.eval(plane.point(a, b));
            if a * a + b * b <= patch * patch {
                num += (rec - exact).powi(2);
                den += exact * exact;
            }
            values.push(rec);
            direct.push(exact);
        }
    }
    let rel_l2_error = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    Ok(PlaneReconstruction {
        plane: *plane,
        coords,
        values,
        direct,
        rel_l2_error,
        patch_radius: patch,
    })
}
