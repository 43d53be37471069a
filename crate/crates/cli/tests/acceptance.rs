//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p loggas-cli --test acceptance`.

use loggas::covariance::{kernel_multi_cut, kernel_one_cut, krawtchouk_endpoints, omega_matrix, upsilon_apply};
use loggas::equilibrium::{solve_equilibrium, spectral_data};
use loggas::exact::{build_exact, build_rational, krawtchouk_partition_closed_form};
use loggas::fluctuations::{collect_samples, estimate_cumulants, tail_check, tail_point, Observable, ObservableSet, Pseudodistance};
use loggas::models::build;
use loggas::{ChainOptions, ContourSet, CovarianceKernel, KernelMode, LinearStatSample, ModelPreset, SolverOptions, C64};
use loggas_cli::config::ExperimentConfig;
use loggas_cli::stages::{decreasing_within_se, krawtchouk_sup_error, mean_pseudodistance};
use loggas_cli::{run_config, Command, ModelArgs};
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

type Outcome = Result<String, String>;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_abs = 0.0f64;
    let mut rational_ok = true;
    let mut cases = 0;
    for theta in [0.5, 1.0, 2.0] {
        let presets = [
            (ModelPreset::Krawtchouk { m: 2.5, big_m: None, theta }, 1),
            // two intervals need at least two particles
            (
                ModelPreset::MulticutKrawtchouk {
                    theta,
                    a_hat: vec![0.0, 2.5],
                    b_hat: vec![1.5, 4.0],
                    n_hat: vec![0.5, 0.5],
                    c_hat: vec![],
                },
                2,
            ),
            (ModelPreset::HahnHexagon { theta, a: 8.0, b: 5.0, c: 6.0, t: 7.0 }, 1),
        ];
        for (p, n_min) in presets {
            for n in n_min..=5 {
                let (spec, model) = build(&p, n).map_err(err)?;
                let ens = build_exact(&spec, &model).map_err(err)?;
                for r in ens.residues() {
                    worst = worst.max(r.relative);
                    worst_abs = worst_abs.max(r.residue.norm());
                }
                if theta == 1.0 {
                    let rat = build_rational(&spec, &model).map_err(err)?;
                    rational_ok &= rat.residues().iter().all(|(_, r)| r.is_zero());
                }
                cases += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-10 && rational_ok && secs < 120.0,
        format!("{cases} cases, max relative residue {worst:.2e} (absolute {worst_abs:.2e}), rational zero {rational_ok}, {secs:.1}s"),
    )
}

fn criterion_2() -> Outcome {
    let (spec, model) = build(&ModelPreset::Krawtchouk { m: 0.0, big_m: Some(2), theta: 1.0 }, 1).map_err(err)?;
    let ens = build_exact(&spec, &model).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let xi = c(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        worst = worst.max((ens.nekrasov_r(xi).map_err(err)? - 1.0).norm());
    }
    check(worst < 1e-12, format!("max |R_1 - 1| = {worst:.2e} over 20 points"))
}

fn criterion_3() -> Outcome {
    let mut count = 0;
    for n in 1..=5u32 {
        for m in n..=12u32 {
            let (spec, model) =
                build(&ModelPreset::Krawtchouk { m: 0.0, big_m: Some(m as i64), theta: 1.0 }, n as usize).map_err(err)?;
            let ens = build_rational(&spec, &model).map_err(err)?;
            if ens.partition_function() != &krawtchouk_partition_closed_form(n, m) {
                return Err(format!("Z({n}, {m}) differs from the closed form"));
            }
            count += 1;
        }
    }
    Ok(format!("{count} partition functions equal exactly"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for m in [1.5, 2.0, 3.0] {
        let (_, model) = build(&ModelPreset::krawtchouk(m), 100).map_err(err)?;
        let meas = solve_equilibrium(&model, &[1.0], &SolverOptions::with_grid(2000)).map_err(err)?;
        let e = krawtchouk_sup_error(&meas, m);
        let saturated = !meas.saturated().is_empty();
        ok &= e < 1e-3 && saturated == (m < 2.0);
        parts.push(format!("m={m}: sup {e:.2e}, saturated {saturated}"));
    }
    let secs = start.elapsed().as_secs_f64();
    check(ok && secs < 60.0, format!("{}; {secs:.1}s", parts.join("; ")))
}

fn criterion_5() -> Outcome {
    let mut worst = 0.0f64;
    for m in [2.0, 2.5, 3.0] {
        let (_, model) = build(&ModelPreset::krawtchouk(m), 100).map_err(err)?;
        let meas = solve_equilibrium(&model, &[1.0], &SolverOptions::with_grid(2000)).map_err(err)?;
        let sd = spectral_data(&meas, &model).map_err(err)?;
        for i in 0..=12 {
            let x = -1.0 + (m + 2.0) * i as f64 / 12.0;
            for y in [-3.0, -1.0, -0.2, 0.2, 1.0, 3.0] {
                worst = worst.max((sd.r_mu(c(x, y)) - (m - 2.0)).norm());
            }
        }
    }
    // R_μ of the (z, w)-measure is z² + 2(w∞ − z∞)z + const with
    // const = |z∞|² + |w∞|² − 2θ Re(z∞ + w∞) + θ²
    let (zr, zi, wr, wi) = (0.8, 0.6, 0.9, -0.4);
    let mut worst_zw = 0.0f64;
    for theta in [0.5, 1.0] {
        let p = ModelPreset::ZwMeasure { theta, z_re: zr, z_im: zi, w_re: wr, w_im: wi, eps: 0.1, safety: 1.5 };
        let (_, model) = build(&p, 100).map_err(err)?;
        let meas = solve_equilibrium(&model, model.fillings_hat(), &SolverOptions::with_grid(1000)).map_err(err)?;
        let sd = spectral_data(&meas, &model).map_err(err)?;
        let coef = sd.r_polynomial(3);
        let b = zr * zr + zi * zi + wr * wr + wi * wi - 2.0 * theta * (zr + wr) + theta * theta;
        for (got, want) in coef.iter().zip([b, 2.0 * (wr - zr), 2.0, 0.0]) {
            worst_zw = worst_zw.max((got - want).norm());
        }
    }
    check(worst < 1e-6 && worst_zw < 1e-6, format!("krawtchouk grid {worst:.2e}, (z,w) coefficients {worst_zw:.2e}"))
}

fn criterion_6() -> Outcome {
    let eps = [(-2.0, -1.0), (0.0, 0.5), (1.5, 3.0)];
    let cs = ContourSet::around(&eps, 0.4).map_err(err)?;
    let z0 = c(0.7, 2.0);
    let f = move |z: C64| 1.0 / ((z - z0) * (z - z0)) + 0.3 / ((z - 0.25) * (z - 0.25));
    let ups = upsilon_apply(f, &eps, &cs).map_err(err)?;
    let mut loops = 0.0f64;
    for i in 0..eps.len() {
        loops = loops.max(cs.loop_integral(i, |z| ups.eval(z)).map_err(err)?.norm());
    }
    let mut sums = 0.0f64;
    for bands in [&eps[..2], &eps[..]] {
        let cs = ContourSet::around(bands, 0.4).map_err(err)?;
        let om = omega_matrix(bands, &cs).map_err(err)?;
        for d in 0..om.matrix.ncols() {
            sums = sums.max(om.matrix.column(d).iter().sum::<C64>().norm());
        }
    }
    let one = [(0.0, 2.0)];
    let cs1 = ContourSet::around(&one, 0.5).map_err(err)?;
    let g = |z: C64| 1.0 / (z * z * z) + (0.2 * z).exp();
    let u1 = upsilon_apply(g, &one, &cs1).map_err(err)?;
    let identity = [c(3.0, 0.2), c(-1.0, -1.5), c(1.0, 2.0)].iter().all(|&z| u1.eval(z) == g(z));
    check(
        loops < 1e-8 && sums < 1e-10 && identity,
        format!("loop integrals {loops:.2e}, column sums {sums:.2e}, one-band identity {identity}"),
    )
}

fn ng(points: &[C64]) -> ObservableSet {
    ObservableSet { polynomials: Vec::new(), points: points.to_vec() }
}

/// Quadratic in 1/N through three points, evaluated at 1/n.
fn extrapolate(data: &[(usize, f64)], n: usize) -> f64 {
    let x = 1.0 / n as f64;
    let xs: Vec<f64> = data.iter().map(|&(k, _)| 1.0 / k as f64).collect();
    (0..3)
        .map(|i| {
            let l: f64 = (0..3).filter(|&j| j != i).map(|j| (x - xs[j]) / (xs[i] - xs[j])).product();
            l * data[i].1
        })
        .sum()
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let (u, v) = (c(3.0, 0.0), c(4.0, 0.0));
    let (a, b) = krawtchouk_endpoints(2.0);
    let kernel = CovarianceKernel::new(&[(a, b)], 1.0, KernelMode::OneCutClosedForm).map_err(err)?.covariance(u, v).map_err(err)?.re;
    let mut exact = Vec::new();
    for n in [4usize, 6, 8] {
        let (spec, model) = build(&ModelPreset::krawtchouk(2.0), n).map_err(err)?;
        let ens = build_exact(&spec, &model).map_err(err)?;
        let nf = n as f64;
        let gu = move |x: &[f64]| x.iter().map(|&l| 1.0 / (u - l / nf)).sum::<C64>();
        let gv = move |x: &[f64]| x.iter().map(|&l| 1.0 / (v - l / nf)).sum::<C64>();
        exact.push((n, ens.joint_cumulant(&[&gu, &gv]).map_err(err)?.re));
    }
    let extrap = extrapolate(&exact, 200);

    let (spec, model) = build(&ModelPreset::krawtchouk(2.0), 200).map_err(err)?;
    let opts = ChainOptions { burn_in_sweeps: Some(50_000), samples: 1_400_000, thinning_sweeps: 20, seed: 7 };
    let s = collect_samples(&spec, &model, &opts, &ng(&[u, v]), false).map_err(err)?;
    let e = estimate_cumulants(&s, &[Observable::Stieltjes(0), Observable::Stieltjes(1)]).map_err(err)?;
    let mc = e.value.re;
    let se = e.standard_error;
    let secs = start.elapsed().as_secs_f64();
    let ok = (kernel - 0.010310).abs() < 5e-7
        && e.effective_samples >= 1e5
        && (mc - kernel).abs() <= 3.0 * se
        && (mc - extrap).abs() <= 3.0 * se
        && secs < 600.0;
    check(
        ok,
        format!(
            "MC {mc:.6} ± {se:.1e} (ESS {:.0}), kernel {kernel:.6}, extrapolated {extrap:.6}, {secs:.0}s",
            e.effective_samples
        ),
    )
}

/// Samples at N = 50, 100, 200. Higher cumulants of N·G_N sit far below the
/// Monte Carlo noise at these sizes, so the sweep budget grows like N³ to
/// make the standard error shrink with N roughly as the cumulants do.
fn run_trend(preset: &ModelPreset, keep: bool, seed: u64) -> Result<Vec<LinearStatSample>, String> {
    [(50usize, 10_000, 10), (100, 40_000, 20), (200, 80_000, 80)]
        .iter()
        .map(|&(n, samples, thinning_sweeps)| {
            let (spec, model) = build(preset, n).map_err(err)?;
            let opts = ChainOptions { burn_in_sweeps: Some(20_000), samples, thinning_sweeps, seed: seed + n as u64 };
            collect_samples(&spec, &model, &opts, &ng(&[c(3.0, 0.0)]), keep).map_err(err)
        })
        .collect()
}

fn criterion_8(convex: &[LinearStatSample]) -> Outcome {
    let kraw = run_trend(&ModelPreset::krawtchouk(2.0), false, 80)?;
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, samples) in [("krawtchouk", &kraw[..]), ("convex", convex)] {
        for order in [3, 4] {
            let vals: Vec<(f64, f64)> = samples
                .iter()
                .map(|s| estimate_cumulants(s, &vec![Observable::Stieltjes(0); order]).map(|e| (e.value.norm(), e.standard_error)))
                .collect::<loggas::Result<_>>()
                .map_err(err)?;
            let dec = decreasing_within_se(&vals);
            ok &= dec;
            let shown: Vec<String> = vals.iter().map(|(v, s)| format!("{v:.1e}±{s:.0e}")).collect();
            parts.push(format!("{name} k{order} [{}]", shown.join(", ")));
        }
    }
    check(ok, parts.join("; "))
}

fn criterion_9() -> Outcome {
    let one = [(0.0, 2.0)];
    let k = CovarianceKernel::new(&one, 1.0, KernelMode::MultiCutUpsilon).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut point = |k: &CovarianceKernel| loop {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let z = c(rng.random_range(-3.0..5.0), sign * rng.random_range(0.05..3.0));
        if !k.contours().encloses(z) {
            return z;
        }
    };
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (z, w) = (point(&k), point(&k));
        let a = kernel_multi_cut(z, w, &k).map_err(err)?;
        let b = kernel_one_cut(z, w, 0.0, 2.0).map_err(err)?;
        worst = worst.max((a - b).norm());
    }
    let two = [(0.2, 1.3), (2.1, 3.4)];
    let wide = CovarianceKernel::new(&two, 1.0, KernelMode::MultiCutUpsilon).map_err(err)?;
    let tight = wide.clone().with_contours(ContourSet::around(&two, 0.25).map_err(err)?).map_err(err)?;
    let mut drift = 0.0f64;
    for _ in 0..20 {
        let (z, w) = (point(&wide), point(&wide));
        drift = drift.max((wide.kernel(z, w).map_err(err)? - tight.kernel(z, w).map_err(err)?).norm());
    }
    check(worst < 1e-8 && drift < 1e-6, format!("one-band gap {worst:.2e}, two-band contour drift {drift:.2e}"))
}

fn criterion_10(convex: &[LinearStatSample], preset: &ModelPreset) -> Outcome {
    let (_, model) = build(preset, 200).map_err(err)?;
    let meas = solve_equilibrium(&model, model.fillings_hat(), &SolverOptions::default()).map_err(err)?;
    let (lo, hi) = meas.support_hull();
    let radius = 2.0 * lo.abs().max(hi.abs());
    let rep = tail_check(convex.iter().map(|s| tail_point(s, radius)).collect());
    let pd = Pseudodistance::new(&meas);
    let dists = convex.iter().map(|s| mean_pseudodistance(s, &pd, 50)).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let pd_dec = dists.windows(2).all(|w| w[1] < w[0]);
    let freqs: Vec<String> = rep.points.iter().map(|p| format!("{}/{}", p.exceed, p.samples)).collect();
    let shown: Vec<String> = dists.iter().map(|d| format!("{d:.3e}")).collect();
    check(
        rep.decreasing && pd_dec,
        format!("radius {radius:.3}, exceedances [{}], pseudodistance [{}]", freqs.join(", "), shown.join(", ")),
    )
}

const SMALL: &str = r#"
n = [16, 32]

[model]
preset = "krawtchouk"
m = 2.0

[chain]
samples = 1200
burn_in_sweeps = 500
thinning_sweeps = 2
seed = 5
chains = 2

[analysis]
pseudodistance_samples = 10
nekrasov_verify = false
"#;

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut names = Vec::new();
    for (sub, threads) in [("a", 1), ("b", 2)] {
        let mut cfg = ExperimentConfig::parse(SMALL).map_err(err)?;
        cfg.output.dir = dir.path().join(sub);
        let rep = run_config(cfg, &Command::Pipeline(ModelArgs::default()), threads).map_err(err)?;
        names = rep.written.iter().map(|p| p.file_name().unwrap().to_owned()).collect();
    }
    let mut differing = Vec::new();
    for n in &names {
        let a = std::fs::read(dir.path().join("a").join(n)).map_err(err)?;
        let b = std::fs::read(dir.path().join("b").join(n)).map_err(err)?;
        if a != b {
            differing.push(n.to_string_lossy().into_owned());
        }
    }
    check(
        differing.is_empty() && names.len() > 10,
        format!("{} artifacts compared, differing: {differing:?}", names.len()),
    )
}

fn main() {
    let convex_preset = ModelPreset::convex(vec![0.0, 0.0, 1.0]);
    let convex = run_trend(&convex_preset, true, 100);
    let shared = |f: &dyn Fn(&[LinearStatSample]) -> Outcome| match &convex {
        Ok(s) => f(s),
        Err(e) => Err(format!("convex sampling failed: {e}")),
    };
    let criteria: Vec<Box<dyn Fn() -> Outcome + '_>> = vec![
        Box::new(criterion_1),
        Box::new(criterion_2),
        Box::new(criterion_3),
        Box::new(criterion_4),
        Box::new(criterion_5),
        Box::new(criterion_6),
        Box::new(criterion_7),
        Box::new(|| shared(&criterion_8)),
        Box::new(criterion_9),
        Box::new(|| shared(&|s| criterion_10(s, &convex_preset))),
        Box::new(criterion_11),
    ];
    let mut failed = 0;
    for (k, f) in criteria.iter().enumerate() {
        match f() {
            Ok(d) => println!("PASS criterion {}: {d}", k + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {}: {d}", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
