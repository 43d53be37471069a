//! Constrained equilibrium measure on a uniform midpoint grid, its Stieltjes
//! transform and the derived functions R_μ, Q_μ, H.
//!
//! The discrete problem maximizes θ Σ μ_j μ_k K_jk − h Σ V̄_j μ_j with cell
//! integrals K of the log kernel and cell averages V̄ of the potential, under
//! 0 ≤ μ ≤ 1/θ and fixed mass per interval. It is solved by a primal-dual
//! active set iteration whose inner equality-constrained problems are handled
//! by projected conjugate gradients with an FFT Toeplitz product.

use crate::error::{Error, Result};
use crate::models::WeightModel;
use crate::quad::gauss_legendre;
use crate::C64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default = "default_outer")]
    pub max_iter: usize,
    #[serde(default = "default_kkt")]
    pub kkt_tol: f64,
    /// Subdivision factor for cells near band edges; 1 disables.
    #[serde(default = "default_refine")]
    pub edge_refine: usize,
    /// Coarse cells on each side of an edge that get refined.
    #[serde(default = "default_window")]
    pub edge_window: usize,
}

fn default_grid() -> usize {
    2000
}
fn default_outer() -> usize {
    200
}
fn default_kkt() -> f64 {
    1e-8
}
fn default_refine() -> usize {
    32
}
fn default_window() -> usize {
    8
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            grid_size: default_grid(),
            max_iter: default_outer(),
            kkt_tol: default_kkt(),
            edge_refine: default_refine(),
            edge_window: default_window(),
        }
    }
}

impl SolverOptions {
    pub fn with_grid(grid_size: usize) -> Self {
        Self { grid_size, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellClass {
    Gap,
    Void,
    Band,
    Saturated,
}

impl CellClass {
    pub fn label(self) -> &'static str {
        match self {
            CellClass::Gap => "gap",
            CellClass::Void => "void",
            CellClass::Band => "band",
            CellClass::Saturated => "saturated",
        }
    }
}

/// ∫₀¹∫₀¹ ln|m + s − t| ds dt.
fn cell_log(m: usize) -> f64 {
    if m > 20 {
        // E ln(m + u) for the triangular u on [−1, 1]
        let m2 = 1.0 / (m as f64 * m as f64);
        return (m as f64).ln() - m2 / 12.0 - m2 * m2 / 60.0 - m2 * m2 * m2 / 168.0 - m2.powi(4) / 360.0;
    }
    let p = |x: f64| if x == 0.0 { 0.0 } else { 0.5 * x * x * x.abs().ln() - 0.75 * x * x };
    let m = m as f64;
    p(m + 1.0) - 2.0 * p(m) + p(m - 1.0)
}

/// Symmetric Toeplitz product by circulant embedding.
struct Toeplitz {
    n: usize,
    spectrum: Vec<C64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Toeplitz {
    fn new(col: &[f64]) -> Self {
        let n = col.len();
        let p = (2 * n).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(p);
        let inv = planner.plan_fft_inverse(p);
        let mut c = vec![C64::new(0.0, 0.0); p];
        for k in 0..n {
            c[k] = C64::new(col[k], 0.0);
            if k > 0 {
                c[p - k] = C64::new(col[k], 0.0);
            }
        }
        fwd.process(&mut c);
        Self { n, spectrum: c, fwd, inv }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let p = self.spectrum.len();
        let mut buf = vec![C64::new(0.0, 0.0); p];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.fwd.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.inv.process(&mut buf);
        buf[..self.n].iter().map(|c| c.re / p as f64).collect()
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumMeasure {
    theta: f64,
    h: f64,
    edges: Vec<f64>,
    density: Vec<f64>,
    owner: Vec<Option<usize>>,
    class: Vec<CellClass>,
    intervals: Vec<(f64, f64)>,
    fillings: Vec<f64>,
    lagrange: Vec<f64>,
    bands: Vec<(f64, f64)>,
    voids: Vec<(f64, f64)>,
    saturated: Vec<(f64, f64)>,
    kkt_residual: f64,
    iterations: usize,
    model: WeightModel,
}

/// Maximizes the discretized energy functional for the given filling
/// fractions over the model's limit intervals.
pub fn solve_equilibrium(model: &WeightModel, fillings: &[f64], opts: &SolverOptions) -> Result<EquilibriumMeasure> {
    let theta = model.theta();
    let intervals = model.support_hint().to_vec();
    let k = intervals.len();
    if fillings.len() != k {
        return Err(Error::Dimension { expected: k, got: fillings.len() });
    }
    if (fillings.iter().sum::<f64>() - 1.0).abs() > 1e-9 || fillings.iter().any(|&f| f <= 0.0) {
        return Err(Error::Model(format!("filling fractions must be positive and sum to 1, got {fillings:?}")));
    }
    let g = opts.grid_size;
    if g < 8 {
        return Err(Error::Solver("grid_size must be at least 8".into()));
    }
    let x0 = intervals[0].0;
    let h = (intervals[k - 1].1 - x0) / g as f64;
    let mut owner = vec![None; g];
    let mut counts = vec![0usize; k];
    for (j, o) in owner.iter_mut().enumerate() {
        let c = x0 + (j as f64 + 0.5) * h;
        if let Some(i) = intervals.iter().position(|&(a, b)| c >= a && c <= b) {
            *o = Some(i);
            counts[i] += 1;
        }
    }
    let cap = 1.0 / theta;
    for i in 0..k {
        if fillings[i] >= counts[i] as f64 * h * cap * (1.0 - 1e-9) {
            return Err(Error::Model(format!(
                "filling {} exceeds capacity {:.6} of interval {i}",
                fillings[i],
                counts[i] as f64 * h * cap
            )));
        }
    }
    let vbar: Vec<f64> = (0..g).map(|j| model.potential_cell_average(x0 + j as f64 * h, x0 + (j + 1) as f64 * h)).collect();
    let op = Toeplitz::new(&kernel_column(theta, h, g));
    let mut mu: Vec<f64> = owner.iter().map(|o| o.map_or(0.0, |i| fillings[i] / (counts[i] as f64 * h))).collect();
    let mut class: Vec<CellClass> = owner.iter().map(|o| if o.is_some() { CellClass::Band } else { CellClass::Gap }).collect();
    let coarse = active_set(&op, h, &vbar, &owner, fillings, cap, &mut mu, &mut class, opts.max_iter, None)?;
    if !coarse.converged || coarse.kkt > opts.kkt_tol {
        return Err(Error::Solver(format!(
            "active-set iteration stopped after {} rounds with KKT residual {:.3e}",
            coarse.iterations, coarse.kkt
        )));
    }
    let mut edges: Vec<f64> = (0..=g).map(|j| x0 + j as f64 * h).collect();
    let mut kkt = coarse.kkt;
    if opts.edge_refine > 1 {
        let windows = edge_windows(&owner, &class, opts.edge_window);
        let mut pieces = Vec::with_capacity(windows.len());
        for &(lo, hi) in &windows {
            let level = coarse.lagrange[owner[lo].unwrap()];
            let piece = refine_window(model, &edges, &mu, lo, hi, &class, level, opts)?;
            kkt = kkt.max(piece.kkt);
            pieces.push(piece);
        }
        // splice the window interiors into the coarse arrays; the outer
        // cells next to coarse neighbours carry a junction layer
        let trim = 2.min(opts.edge_window / 2);
        let kept: Vec<(usize, usize)> = windows
            .iter()
            .map(|&(lo, hi)| {
                let inner = |j: Option<usize>| j.is_some_and(|j| j < g && owner[j] == owner[lo]);
                let a = if inner(lo.checked_sub(1)) { lo + trim } else { lo };
                let b = if inner(Some(hi)) { hi - trim } else { hi };
                (a, b)
            })
            .collect();
        let r = opts.edge_refine;
        let (mut e2, mut m2, mut o2, mut c2) = (vec![edges[0]], Vec::new(), Vec::new(), Vec::new());
        let mut j = 0;
        let mut w = 0;
        while j < g {
            if w < kept.len() && kept[w].0 == j {
                let p = &pieces[w];
                let (s0, s1) = ((kept[w].0 - windows[w].0) * r, (kept[w].1 - windows[w].0) * r);
                e2.extend_from_slice(&p.edges[s0 + 1..=s1]);
                m2.extend_from_slice(&p.mu[s0..s1]);
                c2.extend_from_slice(&p.class[s0..s1]);
                o2.extend(std::iter::repeat_n(owner[j], s1 - s0));
                j = kept[w].1;
                w += 1;
            } else {
                e2.push(edges[j + 1]);
                m2.push(mu[j]);
                c2.push(class[j]);
                o2.push(owner[j]);
                j += 1;
            }
        }
        edges = e2;
        mu = m2;
        owner = o2;
        class = c2;
        restore_masses(&edges, &mut mu, &owner, &class, fillings, cap);
    }
    let mut meas = EquilibriumMeasure {
        theta,
        h,
        edges,
        density: mu,
        owner,
        class,
        intervals,
        fillings: fillings.to_vec(),
        lagrange: coarse.lagrange,
        bands: Vec::new(),
        voids: Vec::new(),
        saturated: Vec::new(),
        kkt_residual: kkt,
        iterations: coarse.iterations,
        model: model.clone(),
    };
    meas.bands = meas.runs(CellClass::Band);
    meas.voids = meas.runs(CellClass::Void);
    meas.saturated = meas.runs(CellClass::Saturated);
    Ok(meas)
}

/// Spreads the small mass defect left by edge refinement over the band
/// cells of each interval.
fn restore_masses(edges: &[f64], mu: &mut [f64], owner: &[Option<usize>], class: &[CellClass], fillings: &[f64], cap: f64) {
    for (i, &target) in fillings.iter().enumerate() {
        let cells: Vec<usize> = (0..mu.len()).filter(|&j| owner[j] == Some(i)).collect();
        let mass: f64 = cells.iter().map(|&j| mu[j] * (edges[j + 1] - edges[j])).sum();
        let band: Vec<usize> = cells.iter().copied().filter(|&j| class[j] == CellClass::Band).collect();
        let width: f64 = band.iter().map(|&j| edges[j + 1] - edges[j]).sum();
        if width > 0.0 {
            let shift = (target - mass) / width;
            for &j in &band {
                mu[j] = (mu[j] + shift).clamp(0.0, cap);
            }
        }
    }
}

/// Per-unit-mass potential of unit density on cell 0 seen from cell m, for a
/// uniform grid of spacing h, times 2θ.
fn kernel_column(theta: f64, h: f64, n: usize) -> Vec<f64> {
    (0..n).map(|m| 2.0 * theta * h * (h.ln() + cell_log(m))).collect()
}

/// Coarse cell ranges [lo, hi) around every band edge that is not an
/// interval wall, merged when they overlap.
fn edge_windows(owner: &[Option<usize>], class: &[CellClass], half: usize) -> Vec<(usize, usize)> {
    let g = class.len();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for j in 0..g.saturating_sub(1) {
        let (a, b) = (class[j], class[j + 1]);
        if owner[j].is_none() || owner[j] != owner[j + 1] || a == b || (a != CellClass::Band && b != CellClass::Band) {
            continue;
        }
        let mut lo = (j + 1).saturating_sub(half);
        let mut hi = (j + 1 + half).min(g);
        while owner[lo] != owner[j] {
            lo += 1;
        }
        while owner[hi - 1] != owner[j] {
            hi -= 1;
        }
        match out.last_mut() {
            Some(last) if last.1 >= lo && owner[last.0] == owner[lo] => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out
}

struct Refined {
    edges: Vec<f64>,
    mu: Vec<f64>,
    class: Vec<CellClass>,
    kkt: f64,
}

/// Re-solves the coarse cells [lo, hi) on a finer grid with the density
/// outside and the Lagrange constant held fixed.
#[allow(clippy::too_many_arguments)]
fn refine_window(
    model: &WeightModel,
    edges: &[f64],
    mu: &[f64],
    lo: usize,
    hi: usize,
    class: &[CellClass],
    level: f64,
    opts: &SolverOptions,
) -> Result<Refined> {
    let theta = model.theta();
    let cap = 1.0 / theta;
    let r = opts.edge_refine;
    let n = (hi - lo) * r;
    let start = edges[lo];
    let d = (edges[hi] - start) / n as f64;
    let fine: Vec<f64> = (0..=n).map(|s| start + s as f64 * d).collect();
    let rule = gauss_legendre(4);
    let a = |t: f64| if t == 0.0 { 0.0 } else { t * t.abs().ln() - t };
    let vbar: Vec<f64> = (0..n)
        .map(|s| {
            let outside = crate::quad::integrate(
                |x| {
                    (0..mu.len())
                        .filter(|&t| (t < lo || t >= hi) && mu[t] != 0.0)
                        .map(|t| mu[t] * (a(x - edges[t]) - a(x - edges[t + 1])))
                        .sum::<f64>()
                },
                fine[s],
                fine[s + 1],
                &rule,
            ) / d;
            model.potential_cell_average(fine[s], fine[s + 1]) - 2.0 * theta * outside
        })
        .collect();
    let mass: f64 = (lo..hi).map(|j| mu[j] * (edges[j + 1] - edges[j])).sum();
    let mut fmu: Vec<f64> = (0..n).map(|s| mu[lo + s / r]).collect();
    let mut fclass: Vec<CellClass> = (0..n).map(|s| class[lo + s / r]).collect();
    let owner = vec![Some(0); n];
    let op = Toeplitz::new(&kernel_column(theta, d, n));
    let res = if fclass.contains(&CellClass::Band) {
        active_set(&op, d, &vbar, &owner, &[mass], cap, &mut fmu, &mut fclass, opts.max_iter, Some(&[level]))?
    } else {
        return Ok(Refined { edges: fine, mu: fmu, class: fclass, kkt: 0.0 });
    };
    if !res.converged {
        return Err(Error::Solver(format!("edge refinement near x = {start:.6} did not settle")));
    }
    Ok(Refined { edges: fine, mu: fmu, class: fclass, kkt: res.kkt })
}

struct ActiveSetResult {
    lagrange: Vec<f64>,
    iterations: usize,
    kkt: f64,
    converged: bool,
}

/// Primal-dual active set iteration on a uniform grid of spacing h.
#[allow(clippy::too_many_arguments)]
fn active_set(
    op: &Toeplitz,
    h: f64,
    vbar: &[f64],
    owner: &[Option<usize>],
    masses: &[f64],
    cap: f64,
    mu: &mut [f64],
    class: &mut [CellClass],
    max_iter: usize,
    fixed: Option<&[f64]>,
) -> Result<ActiveSetResult> {
    let g = mu.len();
    let k = masses.len();
    let mut lagrange = fixed.map_or(vec![0.0; k], |f| f.to_vec());
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..max_iter {
        iterations = it + 1;
        solve_free(op, vbar, owner, class, masses, h, cap, mu, fixed)?;
        let grad = gradient(op, mu, vbar);
        if fixed.is_none() {
            lagrange = multipliers(&grad, owner, class, k);
        }
        let mut changed = false;
        for j in 0..g {
            let Some(i) = owner[j] else { continue };
            let t = mu[j] + grad[j] - lagrange[i];
            let new = if t < 0.0 {
                CellClass::Void
            } else if t > cap {
                CellClass::Saturated
            } else {
                CellClass::Band
            };
            if new != class[j] {
                class[j] = new;
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
        for j in 0..g {
            match class[j] {
                CellClass::Void => mu[j] = 0.0,
                CellClass::Saturated => mu[j] = cap,
                _ => {}
            }
        }
    }
    let grad = gradient(op, mu, vbar);
    let kkt = kkt_residual(&grad, mu, owner, class, &lagrange, cap);
    Ok(ActiveSetResult { lagrange, iterations, kkt, converged })
}

fn gradient(op: &Toeplitz, mu: &[f64], vbar: &[f64]) -> Vec<f64> {
    op.apply(mu).iter().zip(vbar).map(|(a, v)| a - v).collect()
}

fn multipliers(grad: &[f64], owner: &[Option<usize>], class: &[CellClass], k: usize) -> Vec<f64> {
    let mut sum = vec![0.0; k];
    let mut cnt = vec![0usize; k];
    for j in 0..grad.len() {
        if let (Some(i), CellClass::Band) = (owner[j], class[j]) {
            sum[i] += grad[j];
            cnt[i] += 1;
        }
    }
    (0..k)
        .map(|i| {
            if cnt[i] > 0 {
                sum[i] / cnt[i] as f64
            } else {
                // no free cell: any value between the active bounds works
                let vals: Vec<f64> = (0..grad.len()).filter(|&j| owner[j] == Some(i)).map(|j| grad[j]).collect();
                vals.iter().sum::<f64>() / vals.len().max(1) as f64
            }
        })
        .collect()
}

fn kkt_residual(grad: &[f64], mu: &[f64], owner: &[Option<usize>], class: &[CellClass], lag: &[f64], cap: f64) -> f64 {
    let mut r = 0.0f64;
    for j in 0..grad.len() {
        let Some(i) = owner[j] else { continue };
        let lam = grad[j] - lag[i];
        let v = match class[j] {
            CellClass::Band => lam.abs().max(-mu[j]).max(mu[j] - cap),
            CellClass::Void => lam.max(0.0),
            CellClass::Saturated => (-lam).max(0.0),
            CellClass::Gap => 0.0,
        };
        r = r.max(v);
    }
    r
}

const CG_TOL: f64 = 1e-12;

/// Solves the equality-constrained problem on the free cells, keeping active
/// cells at their bounds.
#[allow(clippy::too_many_arguments)]
fn solve_free(
    op: &Toeplitz,
    vbar: &[f64],
    owner: &[Option<usize>],
    class: &[CellClass],
    fillings: &[f64],
    h: f64,
    cap: f64,
    mu: &mut [f64],
    lagrange: Option<&[f64]>,
) -> Result<()> {
    let g = mu.len();
    let k = fillings.len();
    let free: Vec<bool> = class.iter().map(|&c| c == CellClass::Band).collect();
    let mut fixed = vec![0.0; g];
    let mut left = fillings.to_vec();
    let mut nfree = vec![0usize; k];
    for j in 0..g {
        let Some(i) = owner[j] else { continue };
        match class[j] {
            CellClass::Saturated => {
                fixed[j] = cap;
                left[i] -= cap * h;
            }
            CellClass::Band => nfree[i] += 1,
            _ => {}
        }
    }
    // particular solution: the current iterate shifted to the right mass
    let mut base = fixed.clone();
    let mut have = vec![0.0; k];
    for j in 0..g {
        if free[j] {
            have[owner[j].unwrap()] += mu[j] * h;
        }
    }
    for j in 0..g {
        if free[j] {
            let i = owner[j].unwrap();
            base[j] = mu[j] + (left[i] - have[i]) / (nfree[i] as f64 * h);
        }
    }
    let project = |v: &mut [f64]| {
        if lagrange.is_some() {
            for j in 0..g {
                if !free[j] {
                    v[j] = 0.0;
                }
            }
            return;
        }
        let mut s = vec![0.0; k];
        for j in 0..g {
            if free[j] {
                s[owner[j].unwrap()] += v[j];
            } else {
                v[j] = 0.0;
            }
        }
        for j in 0..g {
            if free[j] {
                let i = owner[j].unwrap();
                v[j] -= s[i] / nfree[i] as f64;
            }
        }
    };
    // CG on −P M P v = P(M base − V̄)
    let mb = op.apply(&base);
    let mut r: Vec<f64> = (0..g)
        .map(|j| mb[j] - vbar[j] - lagrange.map_or(0.0, |f| owner[j].map_or(0.0, |i| f[i])))
        .collect();
    project(&mut r);
    let mut v = vec![0.0; g];
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|x| x * x).sum();
    let max_cg = 4 * g + 100;
    let mut it = 0;
    while r.iter().fold(0.0f64, |m, x| m.max(x.abs())) > CG_TOL && it < max_cg {
        let mut ap: Vec<f64> = op.apply(&p).iter().map(|x| -x).collect();
        project(&mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::Solver("log-kernel operator lost definiteness on the free set".into()));
        }
        let alpha = rr / pap;
        for j in 0..g {
            v[j] += alpha * p[j];
            r[j] -= alpha * ap[j];
        }
        let rr_new: f64 = r.iter().map(|x| x * x).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for j in 0..g {
            p[j] = r[j] + beta * p[j];
        }
        it += 1;
    }
    for j in 0..g {
        mu[j] = base[j] + v[j];
    }
    Ok(())
}

impl EquilibriumMeasure {
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Cell centers; cells near band edges are narrower than `spacing`.
    pub fn grid(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn cell_classes(&self) -> &[CellClass] {
        &self.class
    }

    pub fn cell_edges(&self, j: usize) -> (f64, f64) {
        (self.edges[j], self.edges[j + 1])
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn fillings(&self) -> &[f64] {
        &self.fillings
    }

    pub fn lagrange_constants(&self) -> &[f64] {
        &self.lagrange
    }

    pub fn bands(&self) -> &[(f64, f64)] {
        &self.bands
    }

    pub fn voids(&self) -> &[(f64, f64)] {
        &self.voids
    }

    pub fn saturated(&self) -> &[(f64, f64)] {
        &self.saturated
    }

    pub fn kkt_residual(&self) -> f64 {
        self.kkt_residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn model(&self) -> &WeightModel {
        &self.model
    }

    /// Mass of interval `i`.
    pub fn mass(&self, i: usize) -> f64 {
        (0..self.density.len()).filter(|&j| self.owner[j] == Some(i)).map(|j| self.density[j] * (self.edges[j + 1] - self.edges[j])).sum()
    }

    /// Piecewise-constant density at x (0 outside the grid).
    pub fn density_at(&self, x: f64) -> f64 {
        let n = self.density.len();
        if !(x >= self.edges[0] && x < self.edges[n]) {
            return 0.0;
        }
        let j = self.edges.partition_point(|&e| e <= x) - 1;
        self.density[j.min(n - 1)]
    }

    pub fn interval_of(&self, x: f64) -> Option<usize> {
        self.intervals.iter().position(|&(a, b)| x >= a && x <= b)
    }

    fn runs(&self, kind: CellClass) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut start: Option<usize> = None;
        for j in 0..=self.class.len() {
            let hit = j < self.class.len()
                && self.class[j] == kind
                && (start.is_none() || self.owner[j] == self.owner[start.unwrap()]);
            match (start, hit) {
                (None, true) => start = Some(j),
                (Some(s), false) => {
                    out.push((self.cell_edges(s).0, self.cell_edges(j - 1).1));
                    start = if j < self.class.len() && self.class[j] == kind { Some(j) } else { None };
                }
                _ => {}
            }
        }
        out
    }

    /// Bands lying inside interval `i`.
    pub fn bands_in(&self, i: usize) -> Vec<(f64, f64)> {
        let (a, b) = self.intervals[i];
        self.bands.iter().copied().filter(|&(l, r)| l >= a - 1e-12 && r <= b + 1e-12).collect()
    }

    /// Support hull (first to last cell with positive density).
    pub fn support_hull(&self) -> (f64, f64) {
        let first = self.density.iter().position(|&m| m > 0.0).unwrap_or(0);
        let last = self.density.iter().rposition(|&m| m > 0.0).unwrap_or(self.density.len() - 1);
        (self.cell_edges(first).0, self.cell_edges(last).1)
    }

    fn near_support(&self, z: C64) -> bool {
        let (lo, hi) = self.support_hull();
        z.im.abs() < 0.5 * self.h && z.re > lo - 0.5 * self.h && z.re < hi + 0.5 * self.h
    }

    /// G_μ(z) = ∫ μ(x) dx / (z − x); fails within h/2 of the support.
    pub fn stieltjes(&self, z: C64) -> Result<C64> {
        if self.near_support(z) {
            return Err(Error::Domain(format!("z = {z} is within h/2 of the support")));
        }
        Ok(self.stieltjes_unchecked(z))
    }

    /// Exact transform of the piecewise-constant density.
    pub fn stieltjes_unchecked(&self, z: C64) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for (j, &m) in self.density.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let (l, r) = self.cell_edges(j);
            let w = (r - l) / (z - r);
            let term = if w.norm() < 0.5 { ln_1p(w) } else { (z - l).ln() - (z - r).ln() };
            s += m * term;
        }
        s
    }

    /// G_μ′(z).
    pub fn stieltjes_deriv(&self, z: C64) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for (j, &m) in self.density.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let (l, r) = self.cell_edges(j);
            s += m * (1.0 / (z - l) - 1.0 / (z - r));
        }
        s
    }

    /// F_V(x) = 2θ ∫ ln|x − y| μ(y) dy − V(x).
    pub fn effective_potential(&self, x: f64) -> f64 {
        let a = |t: f64| if t == 0.0 { 0.0 } else { t * t.abs().ln() - t };
        let mut s = 0.0;
        for (j, &m) in self.density.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let (l, r) = self.cell_edges(j);
            s += m * (a(x - l) - a(x - r));
        }
        2.0 * self.theta * s - self.model.potential(x)
    }

    /// ∫ f dμ by Gauss–Legendre on each cell.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let rule = gauss_legendre(4);
        let mut s = 0.0;
        for (j, &m) in self.density.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let (l, r) = self.cell_edges(j);
            s += m * crate::quad::integrate(&f, l, r, &rule);
        }
        s
    }
}

/// ln(1 + w) for |w| < 1/2.
fn ln_1p(w: C64) -> C64 {
    if w.norm() > 1e-3 {
        return (1.0 + w).ln();
    }
    let mut term = w;
    let mut s = C64::new(0.0, 0.0);
    for k in 1..12 {
        s += term / k as f64 * if k % 2 == 1 { 1.0 } else { -1.0 };
        term *= w;
    }
    s
}

/// Limit density of the θ = 1 Krawtchouk ensemble with parameter 𝔪 > 1.
pub fn krawtchouk_density(m: f64, x: f64) -> f64 {
    let r2 = m - 1.0 - (x - m / 2.0).powi(2);
    if r2 > 0.0 {
        let y = (m - 2.0) / (2.0 * r2.sqrt());
        0.5 - y.atan() / PI
    } else if m < 2.0 && (x - m / 2.0).abs() <= m / 2.0 {
        1.0
    } else {
        0.0
    }
}

/// Taylor data of a function on a disc, from samples on its boundary.
#[derive(Debug, Clone)]
struct DiscSeries {
    center: f64,
    radius: f64,
    coef: Vec<C64>,
}

impl DiscSeries {
    fn fit<F: Fn(C64) -> C64>(center: f64, radius: f64, m: usize, f: F) -> Self {
        let mut buf: Vec<C64> = (0..m)
            .map(|k| f(center + C64::from_polar(radius, 2.0 * PI * k as f64 / m as f64)))
            .collect();
        let mut planner = FftPlanner::new();
        planner.plan_fft_forward(m).process(&mut buf);
        let coef = buf.iter().take(m / 2).map(|c| c / m as f64).collect();
        Self { center, radius, coef }
    }

    fn eval(&self, z: C64) -> C64 {
        let u = (z - self.center) / self.radius;
        self.coef.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * u + c)
    }

    fn inside(&self, z: C64) -> bool {
        (z - self.center).norm() < 0.9 * self.radius
    }
}

/// Π over bands of hw·√(u − 1)·√(u + 1), u = (z − mid)/hw; ~ z^k at ∞.
pub fn sqrt_product(endpoints: &[(f64, f64)], z: C64) -> C64 {
    endpoints.iter().fold(C64::new(1.0, 0.0), |acc, &(a, b)| {
        let mid = 0.5 * (a + b);
        let hw = 0.5 * (b - a);
        let u = (z - mid) / hw;
        acc * hw * (u - 1.0).sqrt() * (u + 1.0).sqrt()
    })
}

#[derive(Debug, Clone)]
pub struct SpectralData {
    theta: f64,
    endpoints: Vec<(f64, f64)>,
    r: DiscSeries,
    /// R_μ as a polynomial when φ± are polynomials.
    r_poly: Option<Vec<C64>>,
    hfun: DiscSeries,
    meas: EquilibriumMeasure,
    h_margin: f64,
}

/// Builds R_μ, Q_μ, H and refined band endpoints.
pub fn spectral_data(meas: &EquilibriumMeasure, model: &WeightModel) -> Result<SpectralData> {
    let theta = meas.theta;
    let mut coarse = Vec::new();
    for i in 0..meas.intervals.len() {
        let b = meas.bands_in(i);
        if b.len() != 1 {
            return Err(Error::Solver(format!("interval {i} has {} bands; exactly one is required", b.len())));
        }
        coarse.push(b[0]);
    }
    let (lo, hi) = meas.support_hull();
    let center = 0.5 * (lo + hi);
    let radius = 1.6 * 0.5 * (hi - lo);
    let direct_r = |z: C64| {
        let g = meas.stieltjes_unchecked(z);
        model.phi_minus(z) * (-theta * g).exp() + model.phi_plus(z) * (theta * g).exp()
    };
    let r = DiscSeries::fit(center, radius, 256, direct_r);
    let d = |x: f64| {
        let xc = C64::new(x, 0.0);
        let rv = r.eval(xc);
        (rv * rv - 4.0 * model.phi_plus(xc) * model.phi_minus(xc)).re
    };
    let mut endpoints = Vec::with_capacity(coarse.len());
    for &(a, b) in &coarse {
        let ea = refine_edge(&d, a, meas.h, true).unwrap_or(a);
        let eb = refine_edge(&d, b, meas.h, false).unwrap_or(b);
        endpoints.push((ea, eb));
    }
    let eps = endpoints.clone();
    let direct_h = |z: C64| {
        let g = meas.stieltjes_unchecked(z);
        let q = model.phi_minus(z) * (-theta * g).exp() - model.phi_plus(z) * (theta * g).exp();
        q / sqrt_product(&eps, z)
    };
    let hfun = DiscSeries::fit(center, radius, 256, direct_h);
    let mut sd = SpectralData { theta, endpoints, r, r_poly: None, hfun, meas: meas.clone(), h_margin: 0.0 };
    sd.r_poly = model.phi_degree().map(|d| sd.r_polynomial(d));
    let mut margin = f64::INFINITY;
    for &(a, b) in meas.intervals() {
        for t in 0..=400 {
            let x = a + (b - a) * t as f64 / 400.0;
            margin = margin.min(sd.h(C64::new(x, 0.0)).norm());
        }
    }
    if !(margin > 0.0) {
        return Err(Error::Solver("H vanishes on the support intervals".into()));
    }
    sd.h_margin = margin;
    Ok(sd)
}

/// Locates a sign change of `d` near `x` (negative on the band side) and
/// bisects it.
fn refine_edge<F: Fn(f64) -> f64>(d: &F, x: f64, h: f64, left: bool) -> Option<f64> {
    let inward = if left { 1.0 } else { -1.0 };
    for width in [3.0, 10.0, 30.0] {
        let steps = (2.0 * width) as usize * 4;
        let start = x - inward * width * h;
        let mut prev_x = start;
        let mut prev = d(start);
        for s in 1..=steps {
            let xx = start + inward * h * s as f64 / 4.0;
            let v = d(xx);
            if prev >= 0.0 && v < 0.0 {
                let (mut lo, mut hi) = if prev_x < xx { (prev_x, xx) } else { (xx, prev_x) };
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    let outside_is_lo = left;
                    let dm = d(mid);
                    if (dm >= 0.0) == outside_is_lo {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
            prev = v;
            prev_x = xx;
        }
    }
    None
}

impl SpectralData {
    pub fn endpoints(&self) -> &[(f64, f64)] {
        &self.endpoints
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn measure(&self) -> &EquilibriumMeasure {
        &self.meas
    }

    /// min |H| sampled over the support intervals.
    pub fn h_margin(&self) -> f64 {
        self.h_margin
    }

    fn direct_r(&self, z: C64) -> C64 {
        let m = self.meas.model();
        let g = self.meas.stieltjes_unchecked(z);
        m.phi_minus(z) * (-self.theta * g).exp() + m.phi_plus(z) * (self.theta * g).exp()
    }

    fn direct_q(&self, z: C64) -> C64 {
        let m = self.meas.model();
        let g = self.meas.stieltjes_unchecked(z);
        m.phi_minus(z) * (-self.theta * g).exp() - m.phi_plus(z) * (self.theta * g).exp()
    }

    /// R_μ(z): Taylor series inside the sampling disc; outside it, the fitted
    /// polynomial when φ± are polynomials and the direct formula otherwise.
    pub fn r_mu(&self, z: C64) -> C64 {
        if self.r.inside(z) {
            self.r.eval(z)
        } else if let Some(p) = &self.r_poly {
            crate::poly::horner_complex(p, z)
        } else {
            self.direct_r(z)
        }
    }

    /// R_μ evaluated directly from G_μ; only meaningful off the support.
    pub fn r_mu_direct(&self, z: C64) -> C64 {
        self.direct_r(z)
    }

    pub fn h(&self, z: C64) -> C64 {
        if self.hfun.inside(z) {
            self.hfun.eval(z)
        } else {
            self.direct_q(z) / sqrt_product(&self.endpoints, z)
        }
    }

    pub fn sqrt_factor(&self, z: C64) -> C64 {
        sqrt_product(&self.endpoints, z)
    }

    pub fn q_mu(&self, z: C64) -> C64 {
        self.h(z) * self.sqrt_factor(z)
    }

    /// Monomial coefficients of R_μ up to degree `deg`, by least squares on
    /// a circle inside the sampling disc.
    pub fn r_polynomial(&self, deg: usize) -> Vec<C64> {
        let c = self.r.center;
        let rad = 0.5 * self.r.radius;
        let xs: Vec<C64> = (0..64).map(|k| c + C64::from_polar(rad, 2.0 * PI * k as f64 / 64.0)).collect();
        let ys: Vec<C64> = xs.iter().map(|&x| self.r.eval(x)).collect();
        crate::poly::fit(&xs, &ys, deg)
    }
}
