//! Metropolis sampler with single-site ±1 moves.
//!
//! For integer θ on an integer lattice the chain keeps a field
//! Φ(y) = Σ_j g(|y − ℓ_j|) over all sites, so a proposal costs O(1) and an
//! accepted move costs one slice update. Otherwise each proposal is O(N).

use crate::error::{Error, Result};
use crate::exact::log_mass;
use crate::lattice::{ParticleConfig, StateSpaceSpec};
use crate::models::WeightModel;
use crate::special::{as_integer, log_pair};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Identity of the generator, recorded in run manifests.
pub const RNG_NAME: &str = "rand_chacha::ChaCha8Rng (seed_from_u64)";

const RECOMPUTE_EVERY: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainOptions {
    /// Burn-in length in sweeps of N proposals; `None` means 50·N².
    #[serde(default)]
    pub burn_in_sweeps: Option<u64>,
    pub samples: usize,
    /// Sweeps between recorded samples.
    #[serde(default = "one_u64")]
    pub thinning_sweeps: u64,
    #[serde(default)]
    pub seed: u64,
}

fn one_u64() -> u64 {
    1
}

impl ChainOptions {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self { burn_in_sweeps: None, samples, thinning_sweeps: 1, seed }
    }

    pub fn burn_in_steps(&self, n: usize) -> u64 {
        let sweeps = self.burn_in_sweeps.unwrap_or(50 * (n as u64) * (n as u64));
        sweeps * n as u64
    }
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub config: ParticleConfig,
    pub positions: Vec<f64>,
    pub log_mass: f64,
    pub step_count: u64,
    pub accepted: u64,
    rng: ChaCha8Rng,
}

impl ChainState {
    pub fn new(spec: &StateSpaceSpec, model: &WeightModel, config: ParticleConfig, seed: u64) -> Result<Self> {
        if !spec.contains(&config) {
            return Err(Error::StateSpace("initial configuration is not in the state space".into()));
        }
        let positions = spec.positions(&config);
        let log_mass = log_mass(spec.theta(), model, &positions);
        if !log_mass.is_finite() {
            return Err(Error::Model("initial configuration has zero mass".into()));
        }
        Ok(Self { config, positions, log_mass, step_count: 0, accepted: 0, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.step_count == 0 {
            0.0
        } else {
            self.accepted as f64 / self.step_count as f64
        }
    }

    pub fn recompute_log_mass(&self, spec: &StateSpaceSpec, model: &WeightModel) -> f64 {
        log_mass(spec.theta(), model, &spec.positions(&self.config))
    }
}

/// Configuration with each group spread evenly over its interval.
pub fn spread_config(spec: &StateSpaceSpec) -> ParticleConfig {
    let mut lambda = Vec::with_capacity(spec.n());
    for (&l, &n) in spec.holes().iter().zip(spec.fillings()) {
        for i in 0..n {
            lambda.push(((l as f64) * (i as f64 + 0.5) / n as f64).floor() as i64);
        }
    }
    ParticleConfig { lambda }
}

/// Whether moving particle `i` by `dir` stays in the state space.
pub fn move_allowed(spec: &StateSpaceSpec, config: &ParticleConfig, i: usize, dir: i64) -> bool {
    let j = spec.group_of(i);
    let first = spec.group_starts()[j];
    let last = first + spec.fillings()[j] - 1;
    let new = config.lambda[i] + dir;
    if new < 0 || new > spec.holes()[j] {
        return false;
    }
    if dir < 0 && i > first && new < config.lambda[i - 1] {
        return false;
    }
    if dir > 0 && i < last && new > config.lambda[i + 1] {
        return false;
    }
    true
}

/// Log mass ratio mass(ℓ')/mass(ℓ) for moving particle `i` by `dir`, or
/// `None` when the move leaves the state space.
pub fn move_log_ratio(spec: &StateSpaceSpec, model: &WeightModel, positions: &[f64], config: &ParticleConfig, i: usize, dir: i64) -> Option<f64> {
    if !move_allowed(spec, config, i, dir) {
        return None;
    }
    let theta = spec.theta();
    let x = positions[i];
    let mut prod = 1.0;
    for (j, &r) in positions.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = (r - x).abs();
        // moving away from r when the step points away from it
        let away = (dir > 0) == (x > r);
        let f = (d + 1.0) * (d + theta) / (d * (d + 1.0 - theta));
        let g = if away {
            f
        } else {
            let e = d - 1.0;
            (e * (e + 1.0 - theta)) / ((e + 1.0) * (e + theta))
        };
        prod *= g;
    }
    let w = if dir > 0 { model.log_weight_ratio(x + 1.0) } else { model.log_weight_ratio(x).map(|v| -v) };
    let w = w.ok()?;
    Some(prod.ln() + w)
}

/// One generic O(N) Metropolis step; returns whether the move was accepted.
pub fn propose_and_accept(state: &mut ChainState, spec: &StateSpaceSpec, model: &WeightModel) -> bool {
    let n = spec.n();
    let u = state.rng.next_u64();
    let i = (((u >> 32) * n as u64) >> 32) as usize;
    let dir = if u & 1 == 1 { 1 } else { -1 };
    state.step_count += 1;
    let Some(lr) = move_log_ratio(spec, model, &state.positions, &state.config, i, dir) else { return false };
    // one uniform per admissible proposal keeps both paths on the same stream
    let u: f64 = state.rng.random();
    if lr < 0.0 && u >= lr.exp() {
        return false;
    }
    state.config.lambda[i] += dir;
    state.positions[i] += dir as f64;
    state.log_mass += lr;
    state.accepted += 1;
    true
}

/// Transition probability P(from → to) of the ±1 Metropolis kernel.
pub fn transition_probability(spec: &StateSpaceSpec, model: &WeightModel, from: &ParticleConfig, to: &ParticleConfig) -> f64 {
    let n = spec.n();
    let diff: Vec<usize> = (0..n).filter(|&i| from.lambda[i] != to.lambda[i]).collect();
    let pos = spec.positions(from);
    if diff.is_empty() {
        let mut stay = 1.0;
        for i in 0..n {
            for dir in [-1, 1] {
                if let Some(lr) = move_log_ratio(spec, model, &pos, from, i, dir) {
                    stay -= lr.exp().min(1.0) / (2 * n) as f64;
                }
            }
        }
        return stay;
    }
    if diff.len() != 1 {
        return 0.0;
    }
    let i = diff[0];
    let dir = to.lambda[i] - from.lambda[i];
    if dir.abs() != 1 {
        return 0.0;
    }
    match move_log_ratio(spec, model, &pos, from, i, dir) {
        Some(lr) => lr.exp().min(1.0) / (2 * n) as f64,
        None => 0.0,
    }
}

struct Field {
    origin: i64,
    phi: Vec<f64>,
    /// g̃(|k − span|) for k in 0..2·span+1, zero for gaps below θ.
    table: Vec<f64>,
    /// table[k+1] − table[k], so a ±1 move is a single slice update.
    delta: Vec<f64>,
    logw: Vec<f64>,
    span: usize,
    theta: usize,
    /// Per particle: current site, lowest and highest admissible site, and
    /// whether it has a left/right neighbour in its group.
    site: Vec<usize>,
    lo: Vec<usize>,
    hi: Vec<usize>,
    left: Vec<bool>,
    right: Vec<bool>,
}

impl Field {
    fn new(spec: &StateSpaceSpec, model: &WeightModel) -> Option<Self> {
        let theta = as_integer(spec.theta(), 1e-12)?;
        let ints: Option<Vec<(i64, i64)>> = spec
            .intervals()
            .iter()
            .map(|&(a, b)| Some((as_integer(a, 1e-9)?, as_integer(b, 1e-9)?)))
            .collect();
        let ints = ints?;
        let origin = ints[0].0;
        let top = ints.last().unwrap().1;
        let sites = (top - origin + 1) as usize;
        let span = sites + 1;
        let table: Vec<f64> = (0..2 * span + 1)
            .map(|k| {
                let d = (k as i64 - span as i64).abs();
                if d < theta {
                    0.0
                } else {
                    log_pair(d as f64, theta as f64)
                }
            })
            .collect();
        let delta = table.windows(2).map(|w| w[1] - w[0]).collect();
        let mut logw = vec![f64::NEG_INFINITY; sites];
        for &(a, b) in &ints {
            let mut acc = 0.0;
            logw[(a - origin) as usize] = 0.0;
            for x in a + 1..=b {
                acc += model.log_weight_ratio(x as f64).ok()?;
                logw[(x - origin) as usize] = acc;
            }
        }
        let n = spec.n();
        let mut lo = Vec::with_capacity(n);
        let mut hi = Vec::with_capacity(n);
        let mut left = Vec::with_capacity(n);
        let mut right = Vec::with_capacity(n);
        for i in 0..n {
            let j = spec.group_of(i);
            let first = spec.group_starts()[j];
            let s0 = (spec.base(i).round() as i64 - origin) as usize;
            lo.push(s0);
            hi.push(s0 + spec.holes()[j] as usize);
            left.push(i > first);
            right.push(i + 1 < first + spec.fillings()[j]);
        }
        Some(Field {
            origin,
            phi: vec![0.0; sites],
            table,
            delta,
            logw,
            span,
            theta: theta as usize,
            site: vec![0; n],
            lo,
            hi,
            left,
            right,
        })
    }

    fn rebuild(&mut self, positions: &[f64]) {
        self.phi.iter_mut().for_each(|v| *v = 0.0);
        for (s, &p) in self.site.iter_mut().zip(positions) {
            *s = (p.round() as i64 - self.origin) as usize;
        }
        let sites = self.phi.len();
        for &p in positions {
            let x = p.round() as i64 - self.origin;
            let off = self.span - x as usize;
            for (v, t) in self.phi.iter_mut().zip(&self.table[off..off + sites]) {
                *v += t;
            }
        }
    }

    /// Shift the contribution of a particle from site x to x + dir.
    #[inline]
    fn shift(&mut self, x: usize, dir: i64) {
        let sites = self.phi.len();
        // g̃(|y − x − dir|) − g̃(|y − x|) as y runs over sites
        let off = if dir > 0 { self.span - x - 1 } else { self.span - x };
        let d = &self.delta[off..off + sites];
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx2") {
                // SAFETY: the feature was detected at runtime.
                unsafe { axpy_avx2(&mut self.phi, d, -dir as f64) };
                return;
            }
        }
        axpy(&mut self.phi, d, -dir as f64);
    }
}

/// y += s·x for s = ±1; exact in floating point, so results do not depend on
/// the instruction set used.
#[inline]
fn axpy(y: &mut [f64], x: &[f64], s: f64) {
    if s > 0.0 {
        y.iter_mut().zip(x).for_each(|(v, t)| *v += t);
    } else {
        y.iter_mut().zip(x).for_each(|(v, t)| *v -= t);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn axpy_avx2(y: &mut [f64], x: &[f64], s: f64) {
    axpy(y, x, s)
}

/// A Metropolis chain bound to its state space and model.
pub struct Chain<'a> {
    spec: &'a StateSpaceSpec,
    model: &'a WeightModel,
    state: ChainState,
    field: Option<Field>,
    until_recompute: u64,
}

impl<'a> Chain<'a> {
    pub fn new(spec: &'a StateSpaceSpec, model: &'a WeightModel, config: ParticleConfig, seed: u64) -> Result<Self> {
        let state = ChainState::new(spec, model, config, seed)?;
        let mut field = Field::new(spec, model);
        if let Some(f) = field.as_mut() {
            f.rebuild(&state.positions);
        }
        Ok(Self { spec, model, state, field, until_recompute: RECOMPUTE_EVERY })
    }

    /// Uses the generic O(N) proposal even when the field path is available.
    pub fn without_field(mut self) -> Self {
        self.field = None;
        self
    }

    pub fn uses_field(&self) -> bool {
        self.field.is_some()
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn into_state(self) -> ChainState {
        self.state
    }

    pub fn step(&mut self) -> bool {
        let accepted = match self.field.as_mut() {
            None => propose_and_accept(&mut self.state, self.spec, self.model),
            Some(f) => field_step(&mut self.state, self.spec, f),
        };
        self.until_recompute -= 1;
        if self.until_recompute == 0 {
            self.until_recompute = RECOMPUTE_EVERY;
            self.state.log_mass = self.state.recompute_log_mass(self.spec, self.model);
            if let Some(f) = self.field.as_mut() {
                f.rebuild(&self.state.positions);
            }
        }
        accepted
    }

    pub fn run(&mut self, steps: u64) {
        for _ in 0..steps {
            self.step();
        }
    }
}

#[inline]
fn field_step(state: &mut ChainState, spec: &StateSpaceSpec, f: &mut Field) -> bool {
    let n = spec.n();
    let u = state.rng.next_u64();
    let i = (((u >> 32) * n as u64) >> 32) as usize;
    let up = u & 1 == 1;
    state.step_count += 1;
    let x = f.site[i];
    let xn = if up {
        if x == f.hi[i] || (f.right[i] && f.site[i + 1] - x <= f.theta) {
            return false;
        }
        x + 1
    } else {
        if x == f.lo[i] || (f.left[i] && x - f.site[i - 1] <= f.theta) {
            return false;
        }
        x - 1
    };
    // the particle's own term g̃(1) is zero for every integer θ
    let lr = f.phi[xn] - f.phi[x] + f.logw[xn] - f.logw[x];
    let r: f64 = state.rng.random();
    if lr < 0.0 && r >= lr.exp() {
        return false;
    }
    let dir = if up { 1 } else { -1 };
    f.shift(x, dir);
    f.site[i] = xn;
    state.config.lambda[i] += dir;
    state.positions[i] += dir as f64;
    state.log_mass += lr;
    state.accepted += 1;
    true
}

/// Runs burn-in and then calls `visit` on every recorded sample.
pub fn run_chain_with<F: FnMut(u64, &ChainState)>(
    spec: &StateSpaceSpec,
    model: &WeightModel,
    opts: &ChainOptions,
    mut visit: F,
) -> Result<ChainState> {
    if opts.thinning_sweeps == 0 {
        return Err(Error::Model("thinning must be at least one sweep".into()));
    }
    let mut chain = Chain::new(spec, model, spread_config(spec), opts.seed)?;
    let n = spec.n() as u64;
    chain.run(opts.burn_in_steps(spec.n()));
    for s in 0..opts.samples {
        chain.run(opts.thinning_sweeps * n);
        visit(s as u64, chain.state());
    }
    Ok(chain.into_state())
}

/// Collects `samples` configurations with their step indices.
pub fn run_chain(spec: &StateSpaceSpec, model: &WeightModel, opts: &ChainOptions) -> Result<Vec<(u64, ParticleConfig)>> {
    let mut out = Vec::with_capacity(opts.samples);
    run_chain_with(spec, model, opts, |_, st| out.push((st.step_count, st.config.clone())))?;
    Ok(out)
}
