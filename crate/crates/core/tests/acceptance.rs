//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line each, and exits nonzero if any fails.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relscat_core::freefield::{farfield_fit, herglotz_reflected, shell_radii, RadialSamples, FIT_TERMS};
use relscat_core::inverse::{layer_strip, smoothness_test, Smoothness, StripOptions};
use relscat_core::potential::{hom_ft_multiplier, GaussianBump, HomLayer, PolyhomPotential};
use relscat_core::scatter::{
    amplitude_farfield, born_prefactor, born_table, measure_convention, outside_cone, relative_l2,
    BornConfig,
};
use relscat_core::special::{lm_index, ylm_all};
use relscat_core::sphere::{ShExpansion, SphereFn, SphereGrid, Vec3};
use relscat_core::verify::{run_verify, VerifyOptions};
use relscat_core::xray::{line_integral, plane_radon_invert, weighted_geodesic, LineSpec, PlaneSpec};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sqrt4pi() -> f64 {
    (4.0 * PI).sqrt()
}

// v0 = 1 + 0.5 Re Y_1^0 + 0.3 Re Y_2^1
fn leading_angular() -> ShExpansion {
    let mut e = ShExpansion::zeros(2);
    e.set(0, 0, Complex64::new(sqrt4pi(), 0.0));
    e.set(1, 0, Complex64::new(0.5, 0.0));
    e.set(2, 1, Complex64::new(0.15, 0.0));
    e.set(2, -1, Complex64::new(-0.15, 0.0));
    e
}

// v = 0.8 + 0.6 Re Y_1^1
fn second_angular() -> ShExpansion {
    let mut e = ShExpansion::zeros(1);
    e.set(0, 0, Complex64::new(0.8 * sqrt4pi(), 0.0));
    e.set(1, 1, Complex64::new(0.3, 0.0));
    e.set(1, -1, Complex64::new(-0.3, 0.0));
    e
}

fn leading_layer() -> HomLayer {
    HomLayer::new(3.5, leading_angular()).unwrap()
}

fn second_layer() -> HomLayer {
    HomLayer::new(4.5, second_angular()).unwrap()
}

fn grid26() -> Arc<SphereGrid> {
    Arc::new(SphereGrid::with_exactness(25).unwrap())
}

fn born_c(lambda: f64) -> Complex64 {
    Complex64::new(born_prefactor(lambda), 0.0)
}

fn rel_l2(grid: &SphereGrid, a: &[Complex64], b: &[Complex64]) -> f64 {
    let idx: Vec<usize> = (0..grid.len()).collect();
    relative_l2(grid, a, b, &idx)
}

fn criterion_1() -> Outcome {
    let lambda = 1.0;
    let radii = shell_radii(lambda, 40.0, 80.0, 14);
    let fine = Arc::new(SphereGrid::with_exactness(170).unwrap());
    let coarse = Arc::new(SphereGrid::with_exactness(8).unwrap());
    let c = Complex64::new(0.0, 2.0 * PI / lambda);
    let mut worst: f64 = 0.0;
    let cases: [(&str, Box<dyn Fn(Vec3) -> Complex64 + Sync>); 3] = [
        ("1", Box::new(|_| Complex64::new(1.0, 0.0))),
        ("Y10", Box::new(|d| ylm_all(1, d)[lm_index(1, 0)])),
        ("Y21", Box::new(|d| ylm_all(2, d)[lm_index(2, 1)])),
    ];
    let mut parts = Vec::new();
    for (name, h) in cases.iter() {
        let hf = SphereFn::from_fn(fine.clone(), |d| h(d));
        let s = RadialSamples::from_fn(coarse.clone(), radii.clone(), |p| herglotz_reflected(lambda, &hf, p))
            .map_err(|e| e.to_string())?;
        let ff = farfield_fit(&s, lambda, FIT_TERMS).map_err(|e| e.to_string())?;
        let gm: Vec<Complex64> = coarse.nodes().iter().map(|&d| c * h(d)).collect();
        let gp: Vec<Complex64> = coarse.nodes().iter().map(|&d| -c * h([-d[0], -d[1], -d[2]])).collect();
        let em = rel_l2(&coarse, &ff.g_minus.values, &gm);
        let ep = rel_l2(&coarse, &ff.g_plus.values, &gp);
        worst = worst.max(em).max(ep);
        parts.push(format!("{name}: {em:.1e}/{ep:.1e}"));
    }
    check(worst <= 0.01, format!("max rel L2 {worst:.2e} (tol 1e-2); {}", parts.join(", ")))
}

fn criterion_2() -> Outcome {
    let lambda = 1.0;
    let cfg = BornConfig::default_for(lambda);
    let rec = measure_convention(lambda, &cfg).map_err(|e| e.to_string())?;
    let v = PolyhomPotential::new(
        Vec::new(),
        Some(GaussianBump { center: [-0.25, 0.35, 0.1], width: 0.9, amplitude: 0.04 }),
    )
    .unwrap();
    let grid = Arc::new(SphereGrid::with_exactness(12).unwrap());
    let w = [0.48, -0.6, 0.64];
    let col = amplitude_farfield(&v, lambda, w, 1, grid.clone(), &cfg).map_err(|e| e.to_string())?;
    let xis: Vec<Vec3> = grid
        .nodes()
        .iter()
        .map(|t| [lambda * (t[0] - w[0]), lambda * (t[1] - w[1]), lambda * (t[2] - w[2])])
        .collect();
    let model: Vec<Complex64> =
        v.fourier_hat_many(&xis).map_err(|e| e.to_string())?.iter().map(|f| f * rec.measured).collect();
    let idx = outside_cone(&grid, w, 10.0);
    let err = relative_l2(&grid, &col.values.values, &model, &idx);
    let sign_ok = rec.measured.re.signum() == rec.reference.signum();
    check(
        err <= 0.02 && sign_ok,
        format!(
            "rel L2 {err:.2e} outside 10 deg (tol 2e-2); measured constant {:.6}{:+.6}i, reference {:.6}",
            rec.measured.re, rec.measured.im, rec.reference
        ),
    )
}

fn random_pair(rng: &mut ChaCha8Rng) -> (Vec3, Vec3) {
    let unit = |rng: &mut ChaCha8Rng| loop {
        let v: Vec3 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n < 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    };
    let theta = unit(rng);
    let a = unit(rng);
    let d = a[0] * theta[0] + a[1] * theta[1] + a[2] * theta[2];
    let p = [a[0] - d * theta[0], a[1] - d * theta[1], a[2] - d * theta[2]];
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    (theta, [p[0] / n, p[1] / n, p[2] / n])
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs: Vec<(Vec3, Vec3)> = (0..20).map(|_| random_pair(&mut rng)).collect();
    let one = {
        let mut e = ShExpansion::zeros(1);
        e.set(0, 0, Complex64::new(sqrt4pi(), 0.0));
        e
    };
    let tilted = {
        let mut e = one.clone();
        e.set(1, 0, Complex64::new(0.5, 0.0));
        e
    };
    let mut worst: f64 = 0.0;
    for m in [3.5, 4.0] {
        for v0 in [&one, &tilted] {
            let v = PolyhomPotential::new(vec![HomLayer::new(m, v0.clone()).unwrap()], None).unwrap();
            for &(theta, w) in &pairs {
                let i = weighted_geodesic(v0, m, theta, w).map_err(|e| e.to_string())?;
                for r in [2.0, 4.0, 8.0] {
                    let line = LineSpec::new(theta, [r * w[0], r * w[1], r * w[2]]).map_err(|e| e.to_string())?;
                    let x = line_integral(&v, &line).map_err(|e| e.to_string())?;
                    worst = worst.max((x.value * r.powf(m - 1.0) - i).abs());
                }
            }
        }
    }
    let wallis = weighted_geodesic(&one, 4.0, [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]).map_err(|e| e.to_string())?;
    let wd = (wallis - PI / 2.0).abs();
    check(
        worst <= 1e-6 && wd <= 1e-8,
        format!("max homogeneity defect {worst:.2e} (tol 1e-6); Wallis defect {wd:.1e} (tol 1e-8)"),
    )
}

fn criterion_4() -> Outcome {
    let v = PolyhomPotential::new(vec![leading_layer()], None).unwrap();
    let n = [0.3f64, -0.4, 0.866];
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    let plane = PlaneSpec::new([n[0] / len, n[1] / len, n[2] / len], 2.0).map_err(|e| e.to_string())?;
    let rec = plane_radon_invert(&v, &plane, 256).map_err(|e| e.to_string())?;
    check(
        rec.rel_l2_error <= 0.05,
        format!("rel L2 {:.2e} on patch radius {:.2} (tol 5e-2)", rec.rel_l2_error, rec.patch_radius),
    )
}

// Relative error of each nonzero coefficient; zero coefficients (l <= lmax)
// are measured against the expansion norm.
fn coefficient_errors(got: &ShExpansion, want: &ShExpansion) -> f64 {
    let total = want.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let mut worst: f64 = 0.0;
    for l in 0..=want.lmax {
        for m in -(l as i64)..=(l as i64) {
            let w = want.get(l, m);
            let g = if l <= got.lmax { got.get(l, m) } else { Complex64::new(0.0, 0.0) };
            let e = if w.norm() > 0.0 { (g - w).norm() / w.norm() } else { g.norm() / total };
            worst = worst.max(e);
        }
    }
    worst
}

fn criterion_5() -> Outcome {
    let g = grid26();
    let v = PolyhomPotential::new(vec![leading_layer(), second_layer()], None).unwrap();
    let t = born_table(&v, 1.0, g.clone(), g).map_err(|e| e.to_string())?;
    let res = layer_strip(&t, born_c(1.0), 2, &StripOptions::default()).map_err(|e| e.to_string())?;
    if res.layers.len() != 2 {
        return Err(format!("{} layers recovered: {}", res.layers.len(), res.stop_reason));
    }
    let (a, b) = (&res.layers[0], &res.layers[1]);
    let da = (a.order - 3.5).abs();
    let db = (b.order - 4.5).abs();
    let ea = coefficient_errors(&a.angular, &leading_angular());
    let eb = coefficient_errors(&b.angular, &second_angular());
    check(
        da <= 0.05 && db <= 0.1 && ea <= 0.05 && eb <= 0.1,
        format!(
            "orders {:.4} / {:.4} (tol 0.05 / 0.1); coefficient errors {ea:.2e} / {eb:.2e} (tol 5e-2 / 1e-1)",
            a.order, b.order
        ),
    )
}

fn criterion_6() -> Outcome {
    let g = grid26();
    let c = born_c(1.0);
    let base = PolyhomPotential::new(vec![leading_layer()], None).unwrap();
    let bumped = PolyhomPotential::new(
        vec![leading_layer()],
        Some(GaussianBump { center: [0.2, -0.1, 0.3], width: 0.7, amplitude: 0.5 }),
    )
    .unwrap();
    let layered = PolyhomPotential::new(vec![leading_layer(), second_layer()], None).unwrap();
    let table = |v: &PolyhomPotential| born_table(v, 1.0, g.clone(), g.clone()).map_err(|e| e.to_string());
    let t0 = table(&base)?;
    let smooth = smoothness_test(&t0, &table(&bumped)?, c).map_err(|e| e.to_string())?;
    let singular = smoothness_test(&t0, &table(&layered)?, c).map_err(|e| e.to_string())?;
    let order_ok = singular.order.map_or(false, |m| (m - 4.5).abs() <= 0.1);
    check(
        smooth.verdict == Smoothness::Smooth && singular.verdict == Smoothness::Singular && order_ok,
        format!(
            "bump {:?} (min kappa {:?}); extra layer {:?} order {:?} (tol 4.5 +- 0.1)",
            smooth.verdict, smooth.min_kappa, singular.verdict, singular.order
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut opts = VerifyOptions::default_for(1.0);
    opts.checks = Some(vec!["shifted_resolvent_sign".into(), "boundary_pairing".into()]);
    let report = run_verify(&opts).map_err(|e| e.to_string())?;
    let pairing = report.pairing.as_ref().ok_or("pairing not recorded")?;
    let shifted = report.shifted.as_ref().ok_or("shifted measurement not recorded")?;
    let json = serde_json::to_value(&report).map_err(|e| e.to_string())?;
    let recorded = json.get("shifted").map_or(false, |s| !s.is_null());
    check(
        pairing.residual <= 0.02 && shifted.residual <= 0.05 && recorded,
        format!(
            "free pairing residual {:.2e} (tol 2e-2); shifted verdict {:?}, constant {:?}, fit residual {:.2e} (tol 5e-2)",
            pairing.residual,
            shifted.verdict,
            shifted.constant(),
            shifted.residual
        ),
    )
}

// Singular coefficient of the windowed layer |x|^{-a} Y_l^0 read off its
// transform on a radial frequency grid, fitted against analytic powers.
fn windowed_singular_coefficient(a: f64, l: usize) -> Result<Complex64, String> {
    let mut e = ShExpansion::zeros(l);
    e.set(l, 0, Complex64::new(1.0, 0.0));
    let v = PolyhomPotential::new(vec![HomLayer::new(a, e).map_err(|e| e.to_string())?], None).unwrap();
    let dir = [0.6, 0.0, 0.8];
    let rhos: Vec<f64> = (0..40).map(|k| 0.02 + 0.01 * k as f64).collect();
    let pts: Vec<Vec3> = rhos.iter().map(|r| [dir[0] * r, dir[1] * r, dir[2] * r]).collect();
    let vals = v.fourier_hat_many(&pts).map_err(|e| e.to_string())?;
    let mut m = nalgebra::DMatrix::<f64>::zeros(rhos.len(), 4);
    for (i, &r) in rhos.iter().enumerate() {
        m[(i, 0)] = r.powi(l as i32);
        m[(i, 1)] = r.powi(l as i32 + 2);
        m[(i, 2)] = r.powi(l as i32 + 4);
        m[(i, 3)] = r.powf(a - 3.0);
    }
    let svd = m.svd(true, true);
    let re = nalgebra::DVector::from_iterator(rhos.len(), vals.iter().map(|v| v.re));
    let im = nalgebra::DVector::from_iterator(rhos.len(), vals.iter().map(|v| v.im));
    let sr = svd.solve(&re, 1e-14)?;
    let si = svd.solve(&im, 1e-14)?;
    let y = ylm_all(l, dir)[lm_index(l, 0)];
    Ok(Complex64::new(sr[3], si[3]) / y)
}

fn criterion_8() -> Outcome {
    let g = hom_ft_multiplier(2.0, 0).map_err(|e| e.to_string())?;
    let closed = (g - 2.0 * PI * PI).norm();
    let mut worst: f64 = 0.0;
    for a in [3.5, 4.5] {
        for l in 0..=2 {
            let want = hom_ft_multiplier(a, l).map_err(|e| e.to_string())?;
            let got = windowed_singular_coefficient(a, l)?;
            worst = worst.max((got - want).norm() / want.norm());
        }
    }
    check(
        closed <= 1e-10 && worst <= 0.02,
        format!("closed form defect {closed:.1e} (tol 1e-10); max oracle defect {worst:.2e} (tol 2e-2)"),
    )
}

fn criterion_9() -> Outcome {
    let report = run_verify(&VerifyOptions::default_for(1.0)).map_err(|e| e.to_string())?;
    let required = [
        "quadrature_exactness",
        "parseval",
        "harmonic_round_trip",
        "multiplier_composition",
        "born_linearity",
        "reciprocity",
        "scaling_covariance",
    ];
    let missing: Vec<&str> = required.iter().copied().filter(|n| report.check(n).is_none()).collect();
    let failed: Vec<String> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    check(
        missing.is_empty() && report.passed,
        format!("{} checks run, failed {:?}, missing {:?}", report.checks.len(), failed, missing),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("free scattering matrix", criterion_1),
        ("Born amplitude constant", criterion_2),
        ("X-ray homogeneity", criterion_3),
        ("plane injectivity cross-check", criterion_4),
        ("layer recovery", criterion_5),
        ("smoothness dichotomy", criterion_6),
        ("boundary pairing", criterion_7),
        ("homogeneous multiplier oracle", criterion_8),
        ("invariant suites", criterion_9),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(k + 1)) {
            continue;
        }
        let t = Instant::now();
        let out = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(d) => println!("criterion {}: PASS  {name}: {d} [{secs:.1} s]", k + 1),
            Err(d) => {
                failures += 1;
                println!("criterion {}: FAIL  {name}: {d} [{secs:.1} s]", k + 1);
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
