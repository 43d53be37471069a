//! Pipeline stages. Each returns its artifacts through the sink and appends
//! failed checks to `Context::failures`.

use crate::config::ExperimentConfig;
use crate::output::{Cell, Sink, Table};
use crate::CliError;
use loggas::covariance::{linear_stat_covariance, KernelMode};
use loggas::equilibrium::{krawtchouk_density, solve_equilibrium, spectral_data};
use loggas::exact::{build_exact, build_rational};
use loggas::fluctuations::{
    collect_samples, estimate_cumulants, lln_check, lln_point, tail_check, tail_point, Observable, ObservableSet, Pseudodistance,
};
use loggas::models::build;
use loggas::poly::horner;
use loggas::{CovarianceKernel, EquilibriumMeasure, Error, LinearStatSample, ModelPreset};
use serde::Serialize;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub struct Context {
    pub cfg: ExperimentConfig,
    pub threads: usize,
    pub sink: Sink,
    pub failures: Vec<String>,
}

impl Context {
    fn fail(&mut self, msg: String) {
        self.failures.push(msg);
    }
}

/// Maps `f` over `items` on up to `threads` workers, preserving order.
pub fn par_map<T: Sync, R: Send, F: Fn(&T) -> R + Sync>(items: &[T], threads: usize, f: F) -> Vec<R> {
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every slot filled")).collect()
}

#[derive(Serialize)]
struct NekrasovEntry {
    n: usize,
    theta: f64,
    status: &'static str,
    poles: usize,
    max_relative_residue: f64,
    max_abs_residue: f64,
    rational_exact_zero: Option<bool>,
    pass: bool,
}

/// With `require`, having no enumerable N is an error rather than a skip.
pub fn verify_nekrasov(ctx: &mut Context, require: bool) -> Result<(), CliError> {
    let model_preset = ctx.cfg.model.clone();
    let tol = ctx.cfg.analysis.nekrasov_tol;
    let mut table = Table::new(&["N", "point", "residue_re", "residue_im", "relative"]);
    let mut entries = Vec::new();
    for &n in &ctx.cfg.n.clone() {
        let (spec, model) = build(&model_preset, n)?;
        let ens = match build_exact(&spec, &model) {
            Ok(e) => e,
            Err(Error::TooLarge { .. }) => {
                entries.push(NekrasovEntry {
                    n,
                    theta: spec.theta(),
                    status: "skipped_too_large",
                    poles: 0,
                    max_relative_residue: 0.0,
                    max_abs_residue: 0.0,
                    rational_exact_zero: None,
                    pass: true,
                });
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let res = ens.residues();
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for r in &res {
            max_rel = max_rel.max(r.relative);
            max_abs = max_abs.max(r.residue.norm());
            table.push(vec![n.into(), r.point.into(), r.residue.re.into(), r.residue.im.into(), r.relative.into()]);
        }
        let rational = if (spec.theta() - 1.0).abs() < 1e-12 && model.rational_ratio().is_some() {
            let re = build_rational(&spec, &model)?;
            Some(re.residues().iter().all(|(_, r)| num_traits_zero(r)))
        } else {
            None
        };
        let pass = max_rel < tol && rational != Some(false);
        if !pass {
            ctx.fail(format!("nekrasov: N={n} largest relative residue {max_rel:.3e}"));
        }
        entries.push(NekrasovEntry {
            n,
            theta: spec.theta(),
            status: "checked",
            poles: res.len(),
            max_relative_residue: max_rel,
            max_abs_residue: max_abs,
            rational_exact_zero: rational,
            pass,
        });
    }
    if require && entries.iter().all(|e| e.status != "checked") {
        return Err(CliError::Stage("no particle count is small enough to enumerate".into()));
    }
    ctx.sink.csv("nekrasov_residues.csv", &table)?;
    ctx.sink.json("nekrasov.json", &serde_json::json!({ "tolerance": tol, "entries": entries }))?;
    Ok(())
}

fn num_traits_zero(r: &num_rational::BigRational) -> bool {
    use num_traits::Zero;
    r.is_zero()
}

/// Reference particle count for the limit objects.
fn reference_n(cfg: &ExperimentConfig) -> usize {
    *cfg.n.iter().max().expect("validated")
}

#[derive(Serialize)]
struct EquilibriumReport {
    theta: f64,
    grid_size: usize,
    intervals: Vec<(f64, f64)>,
    fillings: Vec<f64>,
    bands: Vec<(f64, f64)>,
    voids: Vec<(f64, f64)>,
    saturated: Vec<(f64, f64)>,
    lagrange_constants: Vec<f64>,
    kkt_residual: f64,
    iterations: usize,
    support_hull: (f64, f64),
    reference_sup_error: Option<f64>,
}

pub fn equilibrium(ctx: &mut Context) -> Result<EquilibriumMeasure, CliError> {
    let (_, model) = build(&ctx.cfg.model, reference_n(&ctx.cfg))?;
    let meas = solve_equilibrium(&model, model.fillings_hat(), &ctx.cfg.equilibrium)?;
    let mut table = Table::new(&["x", "mu", "band_label"]);
    for (j, (&d, c)) in meas.density().iter().zip(meas.cell_classes()).enumerate() {
        let (l, r) = meas.cell_edges(j);
        table.push(vec![(0.5 * (l + r)).into(), d.into(), c.label().into()]);
    }
    let reference = match ctx.cfg.model {
        ModelPreset::Krawtchouk { m, big_m: None, theta } if theta == 1.0 => {
            let err = krawtchouk_sup_error(&meas, m);
            if err >= 1e-3 {
                ctx.fail(format!("equilibrium: distance {err:.3e} to the closed-form density"));
            }
            Some(err)
        }
        _ => None,
    };
    let report = EquilibriumReport {
        theta: meas.theta(),
        grid_size: ctx.cfg.equilibrium.grid_size,
        intervals: meas.intervals().to_vec(),
        fillings: meas.fillings().to_vec(),
        bands: meas.bands().to_vec(),
        voids: meas.voids().to_vec(),
        saturated: meas.saturated().to_vec(),
        lagrange_constants: meas.lagrange_constants().to_vec(),
        kkt_residual: meas.kkt_residual(),
        iterations: meas.iterations(),
        support_hull: meas.support_hull(),
        reference_sup_error: reference,
    };
    ctx.sink.csv("equilibrium.csv", &table)?;
    ctx.sink.json("equilibrium.json", &report)?;
    Ok(meas)
}

/// Largest gap between solver cells and cell averages of the closed form.
pub fn krawtchouk_sup_error(meas: &EquilibriumMeasure, m: f64) -> f64 {
    let mut worst = 0.0f64;
    for (j, &d) in meas.density().iter().enumerate() {
        let (l, r) = meas.cell_edges(j);
        let k = 64;
        let avg = (0..k).map(|t| krawtchouk_density(m, l + (r - l) * (t as f64 + 0.5) / k as f64)).sum::<f64>() / k as f64;
        worst = worst.max((d - avg).abs());
    }
    worst
}

#[derive(Serialize)]
struct CovarianceReport {
    theta: f64,
    mode: &'static str,
    endpoints: Vec<(f64, f64)>,
    endpoint_source: &'static str,
    polynomial_covariance: Vec<Vec<f64>>,
}

pub fn covariance(ctx: &mut Context, meas: &EquilibriumMeasure) -> Result<CovarianceKernel, CliError> {
    let (kernel, source) = match spectral_data(meas, meas.model()) {
        Ok(sd) => (CovarianceKernel::from_spectral(&sd)?, "spectral"),
        Err(_) => {
            let bands = meas.bands();
            let mode = if bands.len() == 1 { KernelMode::OneCutClosedForm } else { KernelMode::MultiCutUpsilon };
            (CovarianceKernel::new(bands, meas.theta(), mode)?, "grid_bands")
        }
    };
    let points = ctx.cfg.observables.complex_points();
    let mut table = Table::new(&["u_re", "u_im", "v_re", "v_im", "c_re", "c_im"]);
    for &u in &points {
        for &v in &points {
            let c = kernel.covariance(u, v)?;
            table.push(vec![u.re.into(), u.im.into(), v.re.into(), v.im.into(), c.re.into(), c.im.into()]);
        }
    }
    let polys = ctx.cfg.observables.polynomials.clone();
    let mut pc = vec![vec![0.0; polys.len()]; polys.len()];
    for i in 0..polys.len() {
        for j in i..polys.len() {
            let (p, q) = (&polys[i], &polys[j]);
            let v = linear_stat_covariance(|z| horner(p, z), |z| horner(q, z), &kernel)?;
            pc[i][j] = v;
            pc[j][i] = v;
        }
    }
    let report = CovarianceReport {
        theta: kernel.theta(),
        mode: match kernel.mode() {
            KernelMode::OneCutClosedForm => "one_cut_closed_form",
            KernelMode::MultiCutUpsilon => "multi_cut_upsilon",
        },
        endpoints: kernel.endpoints().to_vec(),
        endpoint_source: source,
        polynomial_covariance: pc,
    };
    ctx.sink.csv("covariance.csv", &table)?;
    ctx.sink.json("covariance.json", &report)?;
    Ok(kernel)
}

fn observable_set(cfg: &ExperimentConfig) -> ObservableSet {
    ObservableSet { polynomials: cfg.observables.polynomials.clone(), points: cfg.observables.complex_points() }
}

/// Runs every chain of every particle count and merges per N.
pub fn sample(ctx: &mut Context, keep_configs: bool, write: bool) -> Result<Vec<LinearStatSample>, CliError> {
    let cfg = &ctx.cfg;
    let obs = observable_set(cfg);
    let jobs: Vec<(usize, usize, usize)> =
        cfg.n.iter().enumerate().flat_map(|(i, &n)| (0..cfg.chain.chains).map(move |c| (i, n, c))).collect();
    let results = par_map(&jobs, ctx.threads, |&(i, n, c)| -> loggas::Result<LinearStatSample> {
        let (spec, model) = build(&cfg.model, n)?;
        collect_samples(&spec, &model, &cfg.chain.chain_options(i, c), &obs, keep_configs)
    });
    let mut per_n: Vec<Vec<LinearStatSample>> = vec![Vec::new(); cfg.n.len()];
    for (&(i, _, _), r) in jobs.iter().zip(results) {
        per_n[i].push(r?);
    }
    let merged: Vec<LinearStatSample> = per_n.into_iter().map(LinearStatSample::merge).collect::<loggas::Result<_>>()?;
    if write {
        write_samples(ctx, &merged)?;
    }
    Ok(merged)
}

#[derive(Serialize)]
struct SampleSummary {
    n: usize,
    samples: usize,
    chains: usize,
    seeds: Vec<u64>,
    burn_in_sweeps: u64,
    thinning_sweeps: u64,
    acceptance_rate: f64,
}

fn write_samples(ctx: &mut Context, merged: &[LinearStatSample]) -> Result<(), CliError> {
    let np = ctx.cfg.observables.polynomials.len();
    let nz = ctx.cfg.observables.points.len();
    let mut summary = Vec::new();
    for (i, s) in merged.iter().enumerate() {
        let mut header: Vec<String> = vec!["sample".into()];
        header.extend((0..np).map(|j| format!("L{j}")));
        for j in 0..nz {
            header.push(format!("G{j}_re"));
            header.push(format!("G{j}_im"));
        }
        header.push("max_abs".into());
        let hdr: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let mut t = Table::new(&hdr);
        for k in 0..s.len() {
            let mut row: Vec<Cell> = vec![k.into()];
            row.extend(s.linear[k].iter().map(|&v| Cell::from(v)));
            for g in &s.stieltjes[k] {
                row.push(g.re.into());
                row.push(g.im.into());
            }
            row.push(s.max_abs[k].into());
            t.push(row);
        }
        ctx.sink.csv(&format!("samples_N{}.csv", s.n), &t)?;
        summary.push(SampleSummary {
            n: s.n,
            samples: s.len(),
            chains: ctx.cfg.chain.chains,
            seeds: (0..ctx.cfg.chain.chains).map(|c| ctx.cfg.chain.seed_for(i, c)).collect(),
            burn_in_sweeps: s.burn_in_sweeps,
            thinning_sweeps: s.thinning_sweeps,
            acceptance_rate: s.acceptance_rate,
        });
    }
    ctx.sink.json("samples.json", &summary)?;
    Ok(())
}

#[derive(Serialize)]
struct CumulantRow {
    n: usize,
    observable: String,
    order: usize,
    value: (f64, f64),
    standard_error: f64,
    effective_samples: f64,
}

#[derive(Serialize)]
struct CrossRow {
    n: usize,
    u: (f64, f64),
    v: (f64, f64),
    mc: (f64, f64),
    standard_error: f64,
    kernel: Option<(f64, f64)>,
}

#[derive(Serialize)]
struct TrendFlag {
    observable: String,
    order: usize,
    decreasing_within_one_se: bool,
}

fn observable_name(o: Observable) -> String {
    match o {
        Observable::Linear(j) => format!("L{j}"),
        Observable::Stieltjes(j) => format!("NG{j}"),
    }
}

/// |k_N| nonincreasing in N, each step allowed the larger of the two SEs.
pub fn decreasing_within_se(values: &[(f64, f64)]) -> bool {
    values.windows(2).all(|w| w[1].0 <= w[0].0 + w[0].1.max(w[1].1))
}

pub fn clt(ctx: &mut Context, samples: &[LinearStatSample], kernel: Option<&CovarianceKernel>) -> Result<(), CliError> {
    let np = ctx.cfg.observables.polynomials.len();
    let points = ctx.cfg.observables.complex_points();
    let observables: Vec<Observable> =
        (0..np).map(Observable::Linear).chain((0..points.len()).map(Observable::Stieltjes)).collect();
    let max_order = ctx.cfg.analysis.max_order;
    let mut table = Table::new(&["N", "observable", "cumulant_order", "value", "value_im", "stderr", "ess"]);
    let mut rows = Vec::new();
    let mut flags = Vec::new();
    for &o in &observables {
        let mut mags: Vec<Vec<(f64, f64)>> = vec![Vec::new(); max_order + 1];
        for s in samples {
            for order in 1..=max_order {
                let e = estimate_cumulants(s, &vec![o; order])?;
                table.push(vec![
                    s.n.into(),
                    observable_name(o).into(),
                    order.into(),
                    e.value.re.into(),
                    e.value.im.into(),
                    e.standard_error.into(),
                    e.effective_samples.into(),
                ]);
                mags[order].push((e.value.norm(), e.standard_error));
                rows.push(CumulantRow {
                    n: s.n,
                    observable: observable_name(o),
                    order,
                    value: (e.value.re, e.value.im),
                    standard_error: e.standard_error,
                    effective_samples: e.effective_samples,
                });
            }
        }
        for (order, m) in mags.iter().enumerate().skip(3) {
            let ok = decreasing_within_se(m);
            if !ok {
                ctx.fail(format!("clt: |cumulant {order}| of {} does not decrease in N", observable_name(o)));
            }
            flags.push(TrendFlag { observable: observable_name(o), order, decreasing_within_one_se: ok });
        }
    }
    let mut cross = Vec::new();
    for s in samples {
        for a in 0..points.len() {
            for b in a..points.len() {
                let e = estimate_cumulants(s, &[Observable::Stieltjes(a), Observable::Stieltjes(b)])?;
                let k = match kernel {
                    Some(k) => Some(k.covariance(points[a], points[b])?),
                    None => None,
                };
                cross.push(CrossRow {
                    n: s.n,
                    u: (points[a].re, points[a].im),
                    v: (points[b].re, points[b].im),
                    mc: (e.value.re, e.value.im),
                    standard_error: e.standard_error,
                    kernel: k.map(|c| (c.re, c.im)),
                });
            }
        }
    }
    ctx.sink.csv("clt_trend.csv", &table)?;
    ctx.sink.json("clt.json", &serde_json::json!({ "cumulants": rows, "trend": flags, "stieltjes_covariance": cross }))?;
    Ok(())
}

pub fn lln(ctx: &mut Context, samples: &[LinearStatSample], meas: &EquilibriumMeasure) -> Result<(), CliError> {
    let np = ctx.cfg.observables.polynomials.len();
    let mut table = Table::new(&["N", "observable", "limit", "mc_mean", "mean_abs_deviation", "scaled"]);
    let mut reports = Vec::new();
    for j in 0..np {
        let pts = samples.iter().map(|s| lln_point(s, j, meas)).collect::<loggas::Result<Vec<_>>>()?;
        for p in &pts {
            table.push(vec![
                p.n.into(),
                format!("L{j}").into(),
                p.limit.into(),
                p.mc_mean.into(),
                p.mean_abs_deviation.into(),
                p.scaled.into(),
            ]);
        }
        let rep = lln_check(pts);
        if !rep.scaled_nonincreasing {
            ctx.fail(format!("lln: scaled deviation of L{j} increases in N"));
        }
        reports.push(rep);
    }
    ctx.sink.csv("lln.csv", &table)?;
    ctx.sink.json("lln.json", &reports)?;
    Ok(())
}

/// Mean pseudodistance over evenly spaced stored configurations.
pub fn mean_pseudodistance(s: &LinearStatSample, pd: &Pseudodistance, count: usize) -> Result<f64, CliError> {
    let cfgs = s.configs.as_ref().ok_or_else(|| CliError::Stage("configurations were not kept".into()))?;
    let count = count.clamp(1, cfgs.len());
    let step = cfgs.len() / count;
    let mut acc = 0.0;
    for k in 0..count {
        acc += pd.eval(&cfgs[k * step])?;
    }
    Ok(acc / count as f64)
}

pub fn tails(ctx: &mut Context, samples: &[LinearStatSample], meas: &EquilibriumMeasure) -> Result<(), CliError> {
    let (lo, hi) = meas.support_hull();
    let radius = ctx.cfg.analysis.tail_factor * lo.abs().max(hi.abs());
    let pd = Pseudodistance::new(meas);
    let mut table = Table::new(&["N", "radius", "exceed", "samples", "frequency", "pseudodistance"]);
    let mut dists = Vec::new();
    let mut points = Vec::new();
    for s in samples {
        let tp = tail_point(s, radius);
        let d = mean_pseudodistance(s, &pd, ctx.cfg.analysis.pseudodistance_samples)?;
        table.push(vec![tp.n.into(), tp.radius.into(), tp.exceed.into(), tp.samples.into(), tp.frequency.into(), d.into()]);
        dists.push(d);
        points.push(tp);
    }
    let rep = tail_check(points);
    let pd_decreasing = dists.windows(2).all(|w| w[1] < w[0]);
    if !rep.decreasing {
        ctx.fail("tails: exceedance frequency does not decrease in N".into());
    }
    if !pd_decreasing {
        ctx.fail("tails: pseudodistance does not decrease in N".into());
    }
    ctx.sink.csv("tails.csv", &table)?;
    ctx.sink.json(
        "tails.json",
        &serde_json::json!({ "report": rep, "pseudodistance": dists, "pseudodistance_decreasing": pd_decreasing }),
    )?;
    Ok(())
}
