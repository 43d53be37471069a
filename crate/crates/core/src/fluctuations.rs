//! Monte Carlo statistics of linear statistics and Stieltjes transforms:
//! joint cumulants with batch-means errors, law-of-large-numbers trends,
//! the log-energy pseudodistance, and tail frequencies.

use crate::equilibrium::EquilibriumMeasure;
use crate::error::{Error, Result};
use crate::lattice::StateSpaceSpec;
use crate::mcmc::{run_chain_with, ChainOptions};
use crate::models::WeightModel;
use crate::poly::horner_real;
use crate::quad::{gauss_legendre, integrate};
use crate::C64;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BATCHES: usize = 50;
pub const MIN_BATCHES: usize = 20;
pub const MIN_SAMPLES: usize = 1000;
pub const LLN_EPSILON: f64 = 0.1;
pub const SMOOTHING_POWER: f64 = 3.0;

/// Observables recorded along a chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservableSet {
    /// Polynomials f(x) = Σ c_k x^k in the rescaled variable x = ℓ/N; the
    /// recorded value is L_f = Σ_i f(ℓ_i/N).
    #[serde(default)]
    pub polynomials: Vec<Vec<f64>>,
    /// Points z at which G_N(z) = (1/N) Σ 1/(z − ℓ_i/N) is recorded.
    #[serde(default)]
    pub points: Vec<C64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearStatSample {
    pub n: usize,
    pub observables: ObservableSet,
    /// `linear[s][j]` = L_{f_j} on sample s.
    pub linear: Vec<Vec<f64>>,
    /// `stieltjes[s][j]` = G_N(z_j) on sample s.
    pub stieltjes: Vec<Vec<C64>>,
    /// max_i |ℓ_i|/N on each sample.
    pub max_abs: Vec<f64>,
    /// Rescaled positions, kept only on request.
    pub configs: Option<Vec<Vec<f64>>>,
    pub thinning_sweeps: u64,
    pub burn_in_sweeps: u64,
    pub seed: u64,
    pub acceptance_rate: f64,
}

/// Which recorded quantity enters a cumulant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum Observable {
    /// L_f for polynomial j.
    Linear(usize),
    /// N·G_N(z_j).
    Stieltjes(usize),
}

impl LinearStatSample {
    pub fn len(&self) -> usize {
        self.linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linear.is_empty()
    }

    fn record(&mut self, x: &[f64], keep: bool) {
        let n = self.n as f64;
        let scaled: Vec<f64> = x.iter().map(|&l| l / n).collect();
        self.linear.push(self.observables.polynomials.iter().map(|p| scaled.iter().map(|&y| horner_real(p, y)).sum()).collect());
        self.stieltjes.push(stieltjes_of(&scaled, &self.observables.points));
        self.max_abs.push(scaled.iter().fold(0.0f64, |m, &y| m.max(y.abs())));
        if keep {
            self.configs.get_or_insert_with(Vec::new).push(scaled);
        }
    }

    /// Per-sample series of an observable.
    pub fn series(&self, obs: Observable) -> Result<Vec<C64>> {
        let n = self.n as f64;
        match obs {
            Observable::Linear(j) if j < self.observables.polynomials.len() => {
                Ok(self.linear.iter().map(|v| C64::new(v[j], 0.0)).collect())
            }
            Observable::Stieltjes(j) if j < self.observables.points.len() => Ok(self.stieltjes.iter().map(|v| v[j] * n).collect()),
            _ => Err(Error::Contract(format!("observable {obs:?} was not recorded"))),
        }
    }

    /// Concatenates samples from independent chains with the same setup.
    pub fn merge(parts: Vec<LinearStatSample>) -> Result<LinearStatSample> {
        let mut it = parts.into_iter();
        let mut out = it.next().ok_or_else(|| Error::InsufficientData("no chains to merge".into()))?;
        let mut rates = vec![out.acceptance_rate];
        for p in it {
            if p.n != out.n || p.observables != out.observables {
                return Err(Error::Contract("merged samples must share N and observables".into()));
            }
            out.linear.extend(p.linear);
            out.stieltjes.extend(p.stieltjes);
            out.max_abs.extend(p.max_abs);
            if let (Some(a), Some(b)) = (out.configs.as_mut(), p.configs) {
                a.extend(b);
            }
            rates.push(p.acceptance_rate);
        }
        out.acceptance_rate = rates.iter().sum::<f64>() / rates.len() as f64;
        Ok(out)
    }
}

/// G_N(z) for rescaled positions.
pub fn stieltjes_of(scaled: &[f64], points: &[C64]) -> Vec<C64> {
    let n = scaled.len() as f64;
    points.iter().map(|&z| scaled.iter().map(|&y| 1.0 / (z - y)).sum::<C64>() / n).collect()
}

/// Runs one chain and records the observables on every retained sample.
pub fn collect_samples(
    spec: &StateSpaceSpec,
    model: &WeightModel,
    opts: &ChainOptions,
    observables: &ObservableSet,
    keep_configs: bool,
) -> Result<LinearStatSample> {
    let n = spec.n();
    let mut out = LinearStatSample {
        n,
        observables: observables.clone(),
        linear: Vec::with_capacity(opts.samples),
        stieltjes: Vec::with_capacity(opts.samples),
        max_abs: Vec::with_capacity(opts.samples),
        configs: None,
        thinning_sweeps: opts.thinning_sweeps,
        burn_in_sweeps: opts.burn_in_steps(n) / n.max(1) as u64,
        seed: opts.seed,
        acceptance_rate: 0.0,
    };
    let state = run_chain_with(spec, model, opts, |_, st| out.record(&st.positions, keep_configs))?;
    out.acceptance_rate = state.acceptance_rate();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulantEstimate {
    pub order: usize,
    pub value: C64,
    pub standard_error: f64,
    pub batches: usize,
    /// Sample count divided by the integrated autocorrelation time of the
    /// estimator, from the batch-means variance.
    pub effective_samples: f64,
}

/// Joint k-statistic of the given series (orders 1 to 4).
pub fn joint_k_statistic(series: &[&[C64]]) -> Result<C64> {
    let order = series.len();
    if !(1..=4).contains(&order) {
        return Err(Error::Contract(format!("cumulant order must be 1 to 4, got {order}")));
    }
    let n = series[0].len();
    if series.iter().any(|s| s.len() != n) {
        return Err(Error::Contract("series lengths differ".into()));
    }
    if n < order + 1 {
        return Err(Error::InsufficientData(format!("{n} samples for a cumulant of order {order}")));
    }
    let nf = n as f64;
    let centered: Vec<Vec<C64>> = series
        .iter()
        .map(|s| {
            let m = s.iter().sum::<C64>() / nf;
            s.iter().map(|&x| x - m).collect()
        })
        .collect();
    let m = |idx: &[usize]| -> C64 { (0..n).map(|t| idx.iter().map(|&i| centered[i][t]).product::<C64>()).sum::<C64>() / nf };
    Ok(match order {
        1 => series[0].iter().sum::<C64>() / nf,
        2 => m(&[0, 1]) * nf / (nf - 1.0),
        3 => m(&[0, 1, 2]) * nf * nf / ((nf - 1.0) * (nf - 2.0)),
        _ => {
            let pairs = m(&[0, 1]) * m(&[2, 3]) + m(&[0, 2]) * m(&[1, 3]) + m(&[0, 3]) * m(&[1, 2]);
            (m(&[0, 1, 2, 3]) * (nf + 1.0) - pairs * (nf - 1.0)) * nf * nf / ((nf - 1.0) * (nf - 2.0) * (nf - 3.0))
        }
    })
}

/// Joint cumulant of the listed observables with a batch-means standard error.
pub fn estimate_cumulants(samples: &LinearStatSample, observables: &[Observable]) -> Result<CumulantEstimate> {
    estimate_cumulants_with(samples, observables, DEFAULT_BATCHES)
}

pub fn estimate_cumulants_with(samples: &LinearStatSample, observables: &[Observable], batches: usize) -> Result<CumulantEstimate> {
    let n = samples.len();
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!("{n} samples, need at least {MIN_SAMPLES}")));
    }
    if batches < MIN_BATCHES {
        return Err(Error::InsufficientData(format!("{batches} batches, need at least {MIN_BATCHES}")));
    }
    let series: Vec<Vec<C64>> = observables.iter().map(|&o| samples.series(o)).collect::<Result<_>>()?;
    let refs: Vec<&[C64]> = series.iter().map(|s| s.as_slice()).collect();
    let value = joint_k_statistic(&refs)?;
    let size = n / batches;
    let per_batch: Vec<C64> = (0..batches)
        .map(|b| {
            let sl: Vec<&[C64]> = series.iter().map(|s| &s[b * size..(b + 1) * size]).collect();
            joint_k_statistic(&sl)
        })
        .collect::<Result<_>>()?;
    let bm = per_batch.iter().sum::<C64>() / batches as f64;
    let var_b = per_batch.iter().map(|v| (v - bm).norm_sqr()).sum::<f64>() / (batches - 1) as f64;
    let standard_error = (var_b / batches as f64).sqrt();
    // i.i.d. variance of the estimator from the per-sample contributions
    let effective_samples = match observables.len() {
        1 => {
            let m = refs[0].iter().sum::<C64>() / n as f64;
            let v = refs[0].iter().map(|x| (x - m).norm_sqr()).sum::<f64>() / (n - 1) as f64;
            v / standard_error.powi(2).max(1e-300)
        }
        _ => {
            let means: Vec<C64> = refs.iter().map(|s| s.iter().sum::<C64>() / n as f64).collect();
            let prod: Vec<C64> = (0..n).map(|t| refs.iter().zip(&means).map(|(s, m)| s[t] - m).product()).collect();
            let pm = prod.iter().sum::<C64>() / n as f64;
            let v = prod.iter().map(|x| (x - pm).norm_sqr()).sum::<f64>() / (n - 1) as f64;
            v / standard_error.powi(2).max(1e-300)
        }
    };
    Ok(CumulantEstimate { order: observables.len(), value, standard_error, batches, effective_samples: effective_samples.min(n as f64) })
}

/// One N of the law-of-large-numbers check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlnPoint {
    pub n: usize,
    pub limit: f64,
    pub mc_mean: f64,
    /// Sample mean of |∫f dμ_N − ∫f dμ|.
    pub mean_abs_deviation: f64,
    /// N^{1/2−ε} times the above.
    pub scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlnReport {
    pub epsilon: f64,
    pub points: Vec<LlnPoint>,
    pub scaled_nonincreasing: bool,
    pub deviation_decreasing: bool,
}

pub fn lln_point(samples: &LinearStatSample, poly: usize, meas: &EquilibriumMeasure) -> Result<LlnPoint> {
    let p = samples
        .observables
        .polynomials
        .get(poly)
        .ok_or_else(|| Error::Contract(format!("polynomial {poly} was not recorded")))?;
    let limit = meas.integrate(|x| horner_real(p, x));
    let n = samples.n as f64;
    let devs: Vec<f64> = samples.linear.iter().map(|v| v[poly] / n - limit).collect();
    if devs.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let mc_mean = limit + devs.iter().sum::<f64>() / devs.len() as f64;
    let mad = devs.iter().map(|d| d.abs()).sum::<f64>() / devs.len() as f64;
    Ok(LlnPoint { n: samples.n, limit, mc_mean, mean_abs_deviation: mad, scaled: n.powf(0.5 - LLN_EPSILON) * mad })
}

pub fn lln_check(points: Vec<LlnPoint>) -> LlnReport {
    let scaled_nonincreasing = points.windows(2).all(|w| w[1].scaled <= w[0].scaled);
    let deviation_decreasing = points.windows(2).all(|w| w[1].mean_abs_deviation < w[0].mean_abs_deviation);
    LlnReport { epsilon: LLN_EPSILON, points, scaled_nonincreasing, deviation_decreasing }
}

/// Uniform mass on [l, r].
#[derive(Debug, Clone, Copy, PartialEq)]
struct Slab {
    l: f64,
    r: f64,
    mass: f64,
}

fn phi2(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        0.5 * x * x * x.abs().ln() - 0.75 * x * x
    }
}

fn a1(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * t.abs().ln() - t
    }
}

/// ∬ ln|x − y| dσ(x) dτ(y) for two uniform slabs.
fn slab_energy(s: &Slab, t: &Slab, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let ws = s.r - s.l;
    let wt = t.r - t.l;
    let d = 0.5 * (s.l + s.r) - 0.5 * (t.l + t.r);
    let wide = ws.max(wt);
    if d.abs() > 10.0 * wide {
        let (a2, b2) = (ws * ws, wt * wt);
        let m2 = (a2 + b2) / 12.0;
        let m4 = (a2 * a2 + b2 * b2) / 80.0 + a2 * b2 / 24.0;
        let d2 = d * d;
        return s.mass * t.mass * (d.abs().ln() - m2 / (2.0 * d2) - m4 / (4.0 * d2 * d2));
    }
    if ws < 1e-2 * wt || wt < 1e-2 * ws {
        // average the potential of the wide slab over the narrow one
        let (nar, wid) = if ws < wt { (s, t) } else { (t, s) };
        let w = wid.r - wid.l;
        let pot = integrate(|x| a1(x - wid.l) - a1(x - wid.r), nar.l, nar.r, rule) / (nar.r - nar.l);
        return nar.mass * wid.mass * pot / w;
    }
    let i = phi2(s.r - t.l) - phi2(s.l - t.l) - phi2(s.r - t.r) + phi2(s.l - t.r);
    s.mass * t.mass * i / (ws * wt)
}

/// 𝒟(ν̃, μ)² = −∬ ln|x − y| d(ν̃ − μ) d(ν̃ − μ) against a fixed density.
///
/// ν̃ spreads each atom uniformly over [x, x + N^{−3}].
#[derive(Debug, Clone)]
pub struct Pseudodistance {
    cells: Vec<Slab>,
    self_energy: f64,
    rule: (Vec<f64>, Vec<f64>),
}

impl Pseudodistance {
    pub fn new(meas: &EquilibriumMeasure) -> Self {
        let cells: Vec<Slab> = meas
            .density()
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(j, &m)| {
                let (l, r) = meas.cell_edges(j);
                Slab { l, r, mass: m * (r - l) }
            })
            .collect();
        Self::from_slabs(cells)
    }

    /// Piecewise-constant density given by cell edges and values.
    pub fn from_density(edges: &[f64], values: &[f64]) -> Self {
        let cells = values
            .iter()
            .enumerate()
            .filter(|(_, &m)| m != 0.0)
            .map(|(j, &m)| Slab { l: edges[j], r: edges[j + 1], mass: m * (edges[j + 1] - edges[j]) })
            .collect();
        Self::from_slabs(cells)
    }

    fn from_slabs(cells: Vec<Slab>) -> Self {
        let rule = gauss_legendre(4);
        let mut e = 0.0;
        for (i, s) in cells.iter().enumerate() {
            e += slab_energy(s, s, &rule);
            for t in &cells[i + 1..] {
                e += 2.0 * slab_energy(s, t, &rule);
            }
        }
        Self { cells, self_energy: e, rule }
    }

    pub fn total_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.mass).sum()
    }

    /// Distance from the smoothed empirical measure of `atoms` (rescaled
    /// positions, mass 1/len each); the smoothing width is len^{−3}.
    pub fn eval(&self, atoms: &[f64]) -> Result<f64> {
        let width = (atoms.len() as f64).powf(-SMOOTHING_POWER);
        self.eval_with_width(atoms, width)
    }

    pub fn eval_with_width(&self, atoms: &[f64], width: f64) -> Result<f64> {
        if atoms.iter().any(|x| !x.is_finite()) {
            return Err(Error::Contract("atoms must be finite".into()));
        }
        let m = 1.0 / atoms.len() as f64;
        let slabs: Vec<Slab> = atoms.iter().map(|&x| Slab { l: x, r: x + width, mass: m }).collect();
        let mut nn = 0.0;
        for (i, s) in slabs.iter().enumerate() {
            nn += slab_energy(s, s, &self.rule);
            for t in &slabs[i + 1..] {
                nn += 2.0 * slab_energy(s, t, &self.rule);
            }
        }
        let mut nr = 0.0;
        for s in &slabs {
            for c in &self.cells {
                nr += slab_energy(s, c, &self.rule);
            }
        }
        let d2 = -(nn - 2.0 * nr + self.self_energy);
        Ok(d2.max(0.0).sqrt())
    }
}

/// Fourier form ∫ |η̂(t)|²/t dt over [t_min, t_max] by Simpson's rule, for
/// cross-checking the real-space evaluation.
pub fn pseudodistance_fourier(atoms: &[f64], width: f64, edges: &[f64], values: &[f64], t_min: f64, t_max: f64, panels: usize) -> f64 {
    let m = 1.0 / atoms.len() as f64;
    let box_ft = |l: f64, r: f64, t: f64| -> C64 {
        // ∫_l^r e^{itx} dx / (r − l)
        let w = r - l;
        if (t * w).abs() < 1e-8 {
            C64::new(0.0, t * (l + r) / 2.0).exp()
        } else {
            (C64::new(0.0, t * r).exp() - C64::new(0.0, t * l).exp()) / (C64::new(0.0, t) * w)
        }
    };
    let integrand = |t: f64| -> f64 {
        let mut eta = C64::new(0.0, 0.0);
        for &x in atoms {
            eta += m * box_ft(x, x + width, t);
        }
        for j in 0..values.len() {
            if values[j] != 0.0 {
                eta -= values[j] * (edges[j + 1] - edges[j]) * box_ft(edges[j], edges[j + 1], t);
            }
        }
        eta.norm_sqr() / t
    };
    // logarithmic substitution t = e^s resolves both ends
    let (s0, s1) = (t_min.ln(), t_max.ln());
    crate::quad::simpson(|s| integrand(s.exp()) * s.exp(), s0, s1, panels).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub n: usize,
    pub radius: f64,
    pub exceed: usize,
    pub samples: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub points: Vec<TailPoint>,
    /// Least-squares slope of ln(frequency + 1/(2·samples)) against N.
    pub slope: f64,
    pub decreasing: bool,
}

/// Frequency of max_i |ℓ_i|/N > radius.
pub fn tail_point(samples: &LinearStatSample, radius: f64) -> TailPoint {
    let exceed = samples.max_abs.iter().filter(|&&m| m > radius).count();
    let total = samples.max_abs.len();
    TailPoint { n: samples.n, radius, exceed, samples: total, frequency: exceed as f64 / total.max(1) as f64 }
}

pub fn tail_check(points: Vec<TailPoint>) -> TailReport {
    let xs: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| (p.frequency + 0.5 / p.samples.max(1) as f64).ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let decreasing = points.windows(2).all(|w| w[1].frequency < w[0].frequency || (w[0].frequency == 0.0 && w[1].frequency == 0.0));
    TailReport { points, slope, decreasing }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_equilibrium, SolverOptions};
    use crate::exact::build_exact;
    use crate::models::{build, ModelPreset};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn real(v: &[f64]) -> Vec<C64> {
        v.iter().map(|&x| C64::new(x, 0.0)).collect()
    }

    #[test]
    fn k_statistics_unbiased_for_small_samples() {
        // average over many tiny exponential samples: κ2 = 1, κ3 = 2, κ4 = 6
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reps = 40000;
        let mut acc = [0.0; 3];
        for _ in 0..reps {
            let xs: Vec<f64> = (0..8).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let s = real(&xs);
            acc[0] += joint_k_statistic(&[&s, &s]).unwrap().re;
            acc[1] += joint_k_statistic(&[&s, &s, &s]).unwrap().re;
            acc[2] += joint_k_statistic(&[&s, &s, &s, &s]).unwrap().re;
        }
        let m: Vec<f64> = acc.iter().map(|a| a / reps as f64).collect();
        assert!((m[0] - 1.0).abs() < 0.03, "{m:?}");
        assert!((m[1] - 2.0).abs() < 0.15, "{m:?}");
        assert!((m[2] - 6.0).abs() < 0.8, "{m:?}");
    }

    #[test]
    fn joint_statistic_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<C64> = (0..50).map(|_| C64::new(rng.random(), rng.random())).collect();
        let b: Vec<C64> = (0..50).map(|_| C64::new(rng.random(), 0.0)).collect();
        let x = joint_k_statistic(&[&a, &b, &a]).unwrap();
        let y = joint_k_statistic(&[&b, &a, &a]).unwrap();
        assert!((x - y).norm() < 1e-14);
        assert!(joint_k_statistic(&[&a, &b, &a, &b, &a]).is_err());
    }

    fn kraw_samples(n: usize, samples: usize, seed: u64) -> LinearStatSample {
        let (spec, model) = build(&ModelPreset::krawtchouk(2.0), n).unwrap();
        let obs = ObservableSet { polynomials: vec![vec![1.0], vec![0.0, 1.0]], points: vec![C64::new(3.0, 0.0), C64::new(4.0, 0.0), C64::new(3.0, 1.0)] };
        let mut opts = ChainOptions::new(samples, seed);
        opts.thinning_sweeps = 2;
        collect_samples(&spec, &model, &opts, &obs, true).unwrap()
    }

    #[test]
    fn constant_statistic_is_deterministic() {
        let s = kraw_samples(6, 2000, 1);
        let e = estimate_cumulants(&s, &[Observable::Linear(0)]).unwrap();
        assert_eq!(e.value, C64::new(6.0, 0.0));
        let v = estimate_cumulants(&s, &[Observable::Linear(0), Observable::Linear(0)]).unwrap();
        assert!(v.value.norm() < 1e-12);
    }

    #[test]
    fn recorded_stieltjes_recomputes() {
        let s = kraw_samples(5, 1000, 2);
        let cfgs = s.configs.as_ref().unwrap();
        for (t, c) in cfgs.iter().enumerate().step_by(97) {
            let g = stieltjes_of(c, &s.observables.points);
            for j in 0..g.len() {
                assert!((g[j] - s.stieltjes[t][j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn mc_covariance_matches_exact_oracle() {
        let n = 4;
        let (spec, model) = build(&ModelPreset::krawtchouk(2.0), n).unwrap();
        let ens = build_exact(&spec, &model).unwrap();
        let nf = n as f64;
        let g = |z: f64| move |x: &[f64]| x.iter().map(|&l| C64::new(1.0 / (z - l / nf), 0.0)).sum::<C64>();
        let (g3, g4) = (g(3.0), g(4.0));
        let exact = ens.joint_cumulant(&[&g3, &g4]).unwrap();
        let exact3 = ens.joint_cumulant(&[&g3, &g3, &g3]).unwrap();
        let s = kraw_samples(n, 200_000, 5);
        let est = estimate_cumulants(&s, &[Observable::Stieltjes(0), Observable::Stieltjes(1)]).unwrap();
        assert!((est.value - exact).norm() < 3.0 * est.standard_error, "{} {} {}", est.value, exact, est.standard_error);
        let est3 = estimate_cumulants(&s, &[Observable::Stieltjes(0); 3]).unwrap();
        assert!((est3.value - exact3).norm() < 3.0 * est3.standard_error + 1e-9);
        assert!(est.effective_samples > 1000.0 && est.effective_samples <= 200_000.0);
    }

    #[test]
    fn conjugate_points_give_real_covariance() {
        let mut s = kraw_samples(6, 20_000, 8);
        s.observables.points.push(C64::new(3.0, -1.0));
        for (row, c) in s.stieltjes.iter_mut().zip(s.configs.as_ref().unwrap()) {
            row.push(stieltjes_of(c, &[C64::new(3.0, -1.0)])[0]);
        }
        let e = estimate_cumulants(&s, &[Observable::Stieltjes(2), Observable::Stieltjes(3)]).unwrap();
        assert!(e.value.im.abs() < 1e-12);
    }

    #[test]
    fn too_few_samples_rejected() {
        let s = kraw_samples(3, 500, 1);
        assert!(matches!(estimate_cumulants(&s, &[Observable::Stieltjes(0)]), Err(Error::InsufficientData(_))));
        let s = kraw_samples(3, 1000, 1);
        assert!(estimate_cumulants_with(&s, &[Observable::Stieltjes(0)], 10).is_err());
    }

    #[test]
    fn lln_constant_is_exact() {
        let s = kraw_samples(6, 1000, 4);
        let (_, model) = build(&ModelPreset::krawtchouk(2.0), 6).unwrap();
        let meas = solve_equilibrium(&model, &[1.0], &SolverOptions::with_grid(200)).unwrap();
        let p = lln_point(&s, 0, &meas).unwrap();
        assert!(p.mean_abs_deviation < 1e-12);
        let q = lln_point(&s, 1, &meas).unwrap();
        assert_relative_eq!(q.limit, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn slab_energy_regimes_agree() {
        let rule = gauss_legendre(4);
        let exact = |s: &Slab, t: &Slab| {
            s.mass * t.mass * (phi2(s.r - t.l) - phi2(s.l - t.l) - phi2(s.r - t.r) + phi2(s.l - t.r)) / ((s.r - s.l) * (t.r - t.l))
        };
        let a = Slab { l: 0.0, r: 0.01, mass: 1.0 };
        let b = Slab { l: 0.5, r: 0.52, mass: 2.0 };
        assert_relative_eq!(slab_energy(&a, &b, &rule), exact(&a, &b), epsilon = 1e-10);
        let c = Slab { l: 0.013, r: 0.0130001, mass: 1.0 };
        let d = Slab { l: 0.0, r: 0.05, mass: 1.0 };
        let x = 0.5 * (c.l + c.r);
        let pot = a1(x - d.l) - a1(x - d.r);
        assert_relative_eq!(slab_energy(&c, &d, &rule), pot / (d.r - d.l), epsilon = 1e-6);
        let w = 0.2;
        let s = Slab { l: 1.0, r: 1.0 + w, mass: 1.0 };
        assert_relative_eq!(slab_energy(&s, &s, &rule), w.ln() - 1.5, epsilon = 1e-12);
    }

    #[test]
    fn pseudodistance_properties() {
        let edges: Vec<f64> = (0..=100).map(|j| j as f64 * 0.02).collect();
        let vals = vec![0.5; 100];
        let pd = Pseudodistance::from_density(&edges, &vals);
        assert_relative_eq!(pd.total_mass(), 1.0, epsilon = 1e-12);
        // ρ against itself, written as 100 wide slabs of mass 1/100
        let atoms: Vec<f64> = edges[..100].to_vec();
        let d = pd.eval_with_width(&atoms, 0.02).unwrap();
        assert!(d < 1e-6, "{d}");
        // Fourier cross-check with a visible smoothing width
        let atoms = [0.3, 0.9, 1.1, 1.7];
        let real = pd.eval_with_width(&atoms, 0.05).unwrap();
        let four = pseudodistance_fourier(&atoms, 0.05, &edges, &vals, 1e-4, 4e4, 40000);
        assert!((real - four).abs() < 2e-3 * real, "{real} {four}");
        // symmetry: swap roles of the two measures
        let pd2 = Pseudodistance::from_density(&[0.3, 0.35, 0.9, 0.95, 1.1, 1.15, 1.7, 1.75], &[5.0, 0.0, 5.0, 0.0, 5.0, 0.0, 5.0]);
        let back = pd2.eval_with_width(&edges[..100], 0.02).unwrap();
        assert!((back - real).abs() < 1e-9, "{back} {real}");
    }

    #[test]
    fn tail_frequencies() {
        let s = kraw_samples(6, 1000, 7);
        let low = tail_point(&s, 0.1);
        assert_eq!(low.frequency, 1.0);
        let mut last = 1.0;
        for r in [0.5, 1.0, 1.5, 2.0, 2.5] {
            let f = tail_point(&s, r).frequency;
            assert!(f <= last);
            last = f;
        }
        let rep = tail_check(vec![
            TailPoint { n: 50, radius: 1.0, exceed: 10, samples: 100, frequency: 0.1 },
            TailPoint { n: 100, radius: 1.0, exceed: 1, samples: 100, frequency: 0.01 },
        ]);
        assert!(rep.decreasing && rep.slope < 0.0);
    }
}
