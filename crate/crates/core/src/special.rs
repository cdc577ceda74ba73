//! Special functions: spherical Bessel functions, spherical harmonics and the
//! auxiliary function behind the (|D| + lambda)^{-1} kernel.

use num_complex::Complex64;
use std::f64::consts::PI;

pub use statrs::function::gamma::gamma;

/// Index of (l, m) in a flat harmonic array.
#[inline]
pub fn lm_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Number of (l, m) pairs with l <= lmax.
#[inline]
pub fn lm_count(lmax: usize) -> usize {
    (lmax + 1) * (lmax + 1)
}

/// (l, m) for a flat index.
pub fn lm_from_index(idx: usize) -> (usize, i64) {
    let l = (idx as f64).sqrt().floor() as usize;
    let l = if (l + 1) * (l + 1) <= idx { l + 1 } else { l };
    (l, idx as i64 - (l * l + l) as i64)
}

/// j_0 .. j_lmax at z >= 0.
pub fn spherical_bessel_all(lmax: usize, z: f64) -> Vec<f64> {
    let mut out = vec![0.0; lmax + 1];
    if z == 0.0 {
        out[0] = 1.0;
        return out;
    }
    if z < 0.5 {
        for (l, o) in out.iter_mut().enumerate() {
            *o = bessel_series(l, z);
        }
        return out;
    }
    let (s, c) = z.sin_cos();
    let j0 = s / z;
    let j1 = s / (z * z) - c / z;
    if z >= lmax as f64 {
        out[0] = j0;
        if lmax >= 1 {
            out[1] = j1;
        }
        for l in 1..lmax {
            out[l + 1] = (2 * l + 1) as f64 / z * out[l] - out[l - 1];
        }
        return out;
    }
    // Miller's downward recurrence
    let start = lmax + 20 + (z.sqrt() * 4.0) as usize;
    let mut fp1 = 0.0;
    let mut f = 1e-300;
    let mut vals = vec![0.0; lmax + 2];
    for n in (1..=start).rev() {
        let fm1 = (2 * n + 1) as f64 / z * f - fp1;
        fp1 = f;
        f = fm1;
        if n - 1 <= lmax + 1 {
            vals[n - 1] = f;
            if n <= lmax + 1 {
                vals[n] = fp1;
            }
        }
        if f.abs() > 1e250 {
            f *= 1e-250;
            fp1 *= 1e-250;
            for v in vals.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let scale = if j0.abs() >= j1.abs() { j0 / vals[0] } else { j1 / vals[1] };
    for l in 0..=lmax {
        out[l] = vals[l] * scale;
    }
    out
}

fn bessel_series(l: usize, z: f64) -> f64 {
    // z^l / (2l+1)!!
    let mut pref = 1.0;
    for k in 0..l {
        pref *= z / (2 * k + 3) as f64;
    }
    let x = -0.5 * z * z;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..40 {
        term *= x / (k as f64 * (2 * l + 2 * k + 1) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    pref * sum
}

/// Single spherical Bessel function j_l(z).
pub fn spherical_bessel(l: usize, z: f64) -> f64 {
    spherical_bessel_all(l, z)[l]
}

/// Orthonormal complex spherical harmonics Y_l^m (Condon-Shortley phase) for
/// l <= lmax at a direction given in Cartesian form. The input need not be
/// normalized. Output is indexed by `lm_index`.
pub fn ylm_all(lmax: usize, dir: [f64; 3]) -> Vec<Complex64> {
    let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    let (x, y, z) = if n > 0.0 { (dir[0] / n, dir[1] / n, dir[2] / n) } else { (0.0, 0.0, 1.0) };
    let ct = z.clamp(-1.0, 1.0);
    let st = (x * x + y * y).sqrt();
    let phi = y.atan2(x);
    ylm_all_angles(lmax, ct, st, phi)
}

/// Same as `ylm_all` given cos(theta), sin(theta) and phi.
pub fn ylm_all_angles(lmax: usize, ct: f64, st: f64, phi: f64) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); lm_count(lmax)];
    let plm = legendre_normalized(lmax, ct, st);
    for m in 0..=lmax {
        let e = Complex64::from_polar(1.0, m as f64 * phi);
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        for l in m..=lmax {
            let p = plm[l * (l + 1) / 2 + m];
            let v = e * p;
            out[lm_index(l, m as i64)] = v;
            if m > 0 {
                out[lm_index(l, -(m as i64))] = v.conj() * sign;
            }
        }
    }
    out
}

/// Normalized associated Legendre values with Condon-Shortley phase, packed
/// as index l(l+1)/2 + m for 0 <= m <= l. Normalization makes
/// P(l,m)(cos t) e^{i m phi} orthonormal on the sphere.
pub fn legendre_normalized(lmax: usize, ct: f64, st: f64) -> Vec<f64> {
    let mut p = vec![0.0; (lmax + 1) * (lmax + 2) / 2];
    let idx = |l: usize, m: usize| l * (l + 1) / 2 + m;
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for m in 0..=lmax {
        if m > 0 {
            pmm *= -((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * st;
        }
        p[idx(m, m)] = pmm;
        if m < lmax {
            p[idx(m + 1, m)] = ct * ((2 * m + 3) as f64).sqrt() * pmm;
        }
        for l in (m + 2)..=lmax {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            p[idx(l, m)] = a * (ct * p[idx(l - 1, m)] - b * p[idx(l - 2, m)]);
        }
    }
    p
}

/// Coefficients a_k (k = 0..=l) of the finite Hankel expansion
/// j_l(z) = Re[(-i)^{l+1} e^{iz} sum_k a_k z^{-k-1}].
pub fn hankel_coefficients(l: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(l + 1);
    let mut c = 1.0f64;
    for k in 0..=l {
        if k > 0 {
            // (l+k)!/(k!(l-k)! 2^k) from the previous term
            c *= ((l + k) * (l - k + 1)) as f64 / (2 * k) as f64;
        }
        out.push(Complex64::i().powu(k as u32) * c);
    }
    out
}

/// (-i)^n as an exact complex number.
pub fn minus_i_pow(n: usize) -> Complex64 {
    match n % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    }
}

/// int_Z^inf z^{-mu} e^{iz} dz for Z large, by the asymptotic series of the
/// incomplete gamma function. Requires mu > 0 and Z >= 20.
pub fn oscillatory_tail(mu: f64, big_z: f64) -> Complex64 {
    let lead = Complex64::i() * Complex64::from_polar(big_z.powf(-mu), big_z);
    let mut sum = Complex64::new(1.0, 0.0);
    let mut term = Complex64::new(1.0, 0.0);
    let step = Complex64::new(0.0, -1.0 / big_z);
    let mut prev = f64::INFINITY;
    for n in 0..200 {
        term = term * step * (mu + n as f64);
        let t = term.norm();
        if t > prev {
            break;
        }
        sum += term;
        if t < 1e-18 {
            break;
        }
        prev = t;
    }
    lead * sum
}

/// g(a) = int_0^inf e^{-v} v^2 / (a^2 + v^2) dv = 1 - a f(a), where f is the
/// auxiliary sine integral function.
pub fn shift_kernel_factor(a: f64) -> f64 {
    if a >= 40.0 {
        return shift_kernel_factor_asymptotic(a);
    }
    let f = |v: f64| (-v).exp() * v * v / (a * a + v * v);
    let mut total = 0.0;
    let mut lo = 0.0;
    for hi in [a.max(1e-3), a.max(1e-3) * 4.0 + 4.0, 80.0] {
        if hi > lo {
            total += crate::quad::adaptive_gk(f, lo, hi, 1e-16, 1e-14, 200).value;
            lo = hi;
        }
    }
    total
}

/// Asymptotic series sum_k (-1)^{k+1} (2k)!/a^{2k} of `shift_kernel_factor`,
/// truncated at the smallest term. Absolute error is about sqrt(2 pi a) e^{-a}.
pub fn shift_kernel_factor_asymptotic(a: f64) -> f64 {
    let inv = 1.0 / (a * a);
    let mut term = 1.0;
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    for k in 1..30 {
        term *= (2 * k - 1) as f64 * (2 * k) as f64 * inv;
        if term > prev {
            break;
        }
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 * sum.abs() {
            break;
        }
        prev = term;
    }
    sum
}
