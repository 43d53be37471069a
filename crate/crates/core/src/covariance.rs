//! Limit covariance kernels, the Ω and Υ maps on hyperelliptic contours, and
//! the first-order mean correction of the Stieltjes transform.
//!
//! Normalization: `kernel_one_cut` and `CovarianceKernel::kernel` return the
//! θ-free kernel 𝒞 with cov(N G_N(u), N G_N(v)) → θ⁻¹ 𝒞(u, v). The multi-cut
//! Υ expression equals −2𝒞 and is rescaled accordingly.

use crate::equilibrium::{sqrt_product, SpectralData};
use crate::error::{Error, Result};
use crate::C64;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const REL_TOL: f64 = 1e-9;
const MIN_NODES: usize = 32;
const MAX_NODES: usize = 1 << 14;
const MAX_DOUBLE_NODES: usize = 1 << 11;

/// Ellipse with foci at the ends of `[center − half, center + half]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: f64,
    pub half: f64,
    pub rho: f64,
}

impl Ellipse {
    fn at(&self, t: f64) -> (C64, C64) {
        let w = C64::new(self.rho, t);
        (self.center + self.half * w.cosh(), C64::i() * self.half * w.sinh())
    }

    pub fn contains(&self, z: C64) -> bool {
        let a = self.half * self.rho.cosh();
        let b = self.half * self.rho.sinh();
        ((z.re - self.center) / a).powi(2) + (z.im / b).powi(2) < 1.0
    }

    pub fn semi_axes(&self) -> (f64, f64) {
        (self.half * self.rho.cosh(), self.half * self.rho.sinh())
    }
}

/// One positively oriented confocal ellipse per segment, each enclosing its
/// segment and no other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourSet {
    segments: Vec<(f64, f64)>,
    margin: f64,
    ellipses: Vec<Ellipse>,
}

impl ContourSet {
    /// `margin` in (0, 1): the real semi-axis exceeds the half-width by
    /// margin·min(half-width, distance to the nearest other segment).
    pub fn around(segments: &[(f64, f64)], margin: f64) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Contour("no segments".into()));
        }
        if !(margin > 0.0 && margin < 1.0) {
            return Err(Error::Contour(format!("margin must lie in (0, 1), got {margin}")));
        }
        for w in segments.windows(2) {
            if !(w[0].1 < w[1].0) {
                return Err(Error::Contour(format!("segments {:?} and {:?} overlap", w[0], w[1])));
            }
        }
        let ellipses = segments
            .iter()
            .enumerate()
            .map(|(i, &(l, r))| {
                let half = 0.5 * (r - l);
                let gap = segments
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &(a, b))| if a > r { a - r } else { l - b })
                    .fold(f64::INFINITY, f64::min);
                let delta = margin * half.min(gap);
                Ellipse { center: 0.5 * (l + r), half, rho: (1.0 + delta / half).acosh() }
            })
            .collect();
        Ok(Self { segments: segments.to_vec(), margin, ellipses })
    }

    /// Same segments with a different margin.
    pub fn with_margin(&self, margin: f64) -> Result<Self> {
        Self::around(&self.segments, margin)
    }

    pub fn len(&self) -> usize {
        self.ellipses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ellipses.is_empty()
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn ellipses(&self) -> &[Ellipse] {
        &self.ellipses
    }

    /// Length scale of the configuration.
    pub fn scale(&self) -> f64 {
        self.segments[self.segments.len() - 1].1 - self.segments[0].0
    }

    pub fn encloses(&self, z: C64) -> bool {
        self.ellipses.iter().any(|e| e.contains(z))
    }

    /// Nodes z_j and weights with (1/2πi)∮ f dz ≈ Σ w_j f(z_j).
    pub fn nodes(&self, i: usize, n: usize) -> Vec<(C64, C64)> {
        let e = &self.ellipses[i];
        (0..n)
            .map(|j| {
                let (z, dz) = e.at(2.0 * PI * j as f64 / n as f64);
                (z, dz / (C64::i() * n as f64))
            })
            .collect()
    }

    /// (1/2πi)∮_{γ_i} f dz with node doubling.
    pub fn loop_integral<F: Fn(C64) -> C64>(&self, i: usize, f: F) -> Result<C64> {
        let e = self.ellipses[i];
        let mut n = MIN_NODES;
        let mut sum = C64::new(0.0, 0.0);
        let mut l1 = 0.0;
        for j in 0..n {
            let (z, dz) = e.at(2.0 * PI * j as f64 / n as f64);
            let v = f(z) * dz;
            sum += v;
            l1 += v.norm();
        }
        let mut prev = sum / (C64::i() * n as f64);
        while n < MAX_NODES {
            for j in 0..n {
                let (z, dz) = e.at(2.0 * PI * (2 * j + 1) as f64 / (2 * n) as f64);
                let v = f(z) * dz;
                sum += v;
                l1 += v.norm();
            }
            n *= 2;
            let cur = sum / (C64::i() * n as f64);
            if !cur.re.is_finite() || !cur.im.is_finite() {
                return Err(Error::Contour(format!("non-finite integrand on contour {i}")));
            }
            if (cur - prev).norm() <= REL_TOL * cur.norm().max(l1 / n as f64) {
                return Ok(cur);
            }
            prev = cur;
        }
        Err(Error::Contour(format!("trapezoid rule on contour {i} did not converge with {MAX_NODES} nodes")))
    }
}

/// Ω(P)_i = (1/2πi)∮_{γ_i} P(z) dz / Π√((z − α_j)(z − β_j)).
pub fn omega_map(p: &[C64], endpoints: &[(f64, f64)], contours: &ContourSet) -> Result<Vec<C64>> {
    let k = endpoints.len();
    if k < 2 {
        return Err(Error::Contract("the Ω map needs at least two segments".into()));
    }
    if p.len() > k - 1 {
        return Err(Error::Contract(format!("polynomial degree must be at most {}", k - 2)));
    }
    check_contours(endpoints, contours)?;
    (0..k)
        .map(|i| contours.loop_integral(i, |z| horner(p, z) / sqrt_product(endpoints, z)))
        .collect()
}

/// Matrix of Ω on the monomial basis (k × (k − 1)) and its condition number.
#[derive(Debug, Clone)]
pub struct OmegaMatrix {
    pub matrix: DMatrix<C64>,
    pub condition: f64,
}

pub fn omega_matrix(endpoints: &[(f64, f64)], contours: &ContourSet) -> Result<OmegaMatrix> {
    let k = endpoints.len();
    let mut m = DMatrix::zeros(k, k.saturating_sub(1));
    for d in 0..k.saturating_sub(1) {
        let mut p = vec![C64::new(0.0, 0.0); d + 1];
        p[d] = C64::new(1.0, 0.0);
        for (i, v) in omega_map(&p, endpoints, contours)?.into_iter().enumerate() {
            m[(i, d)] = v;
        }
    }
    let sv = m.clone().svd(false, false).singular_values;
    let condition = if sv.is_empty() { 1.0 } else { sv.max() / sv.min() };
    Ok(OmegaMatrix { matrix: m, condition })
}

fn horner(p: &[C64], z: C64) -> C64 {
    p.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

fn check_contours(endpoints: &[(f64, f64)], contours: &ContourSet) -> Result<()> {
    if contours.len() != endpoints.len() {
        return Err(Error::Contour(format!("{} contours for {} segments", contours.len(), endpoints.len())));
    }
    for (i, e) in contours.ellipses().iter().enumerate() {
        for (j, &(a, b)) in endpoints.iter().enumerate() {
            let inside = e.contains(C64::new(a, 0.0)) && e.contains(C64::new(b, 0.0));
            let touches = e.contains(C64::new(a, 0.0)) || e.contains(C64::new(b, 0.0));
            if (i == j && !inside) || (i != j && touches) {
                return Err(Error::Contour(format!("contour {i} does not separate segment {j}")));
            }
        }
    }
    Ok(())
}

/// Υ_z[f] = f(z) + P(z)/Π√(...) with all loop integrals vanishing.
#[derive(Debug, Clone)]
pub struct Upsilon<F> {
    f: F,
    endpoints: Vec<(f64, f64)>,
    poly: Vec<C64>,
}

impl<F: Fn(C64) -> C64> Upsilon<F> {
    pub fn eval(&self, z: C64) -> C64 {
        self.correction(z) + (self.f)(z)
    }

    /// P(z)/Π√(...) alone.
    pub fn correction(&self, z: C64) -> C64 {
        if self.poly.is_empty() {
            C64::new(0.0, 0.0)
        } else {
            horner(&self.poly, z) / sqrt_product(&self.endpoints, z)
        }
    }

    pub fn polynomial(&self) -> &[C64] {
        &self.poly
    }
}

pub fn upsilon_apply<F: Fn(C64) -> C64>(f: F, endpoints: &[(f64, f64)], contours: &ContourSet) -> Result<Upsilon<F>> {
    let k = endpoints.len();
    check_contours(endpoints, contours)?;
    if k == 1 {
        return Ok(Upsilon { f, endpoints: endpoints.to_vec(), poly: Vec::new() });
    }
    let loops: Vec<C64> = (0..k).map(|i| contours.loop_integral(i, &f)).collect::<Result<_>>()?;
    let total: C64 = loops.iter().sum();
    let size = loops.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if total.norm() > 1e-8 * size.max(1e-300) && total.norm() > 1e-13 {
        return Err(Error::Contract(format!("loop integrals of the input sum to {total:.3e}, not 0")));
    }
    let om = omega_matrix(endpoints, contours)?;
    let rhs = DVector::from_iterator(k, loops.iter().map(|&c| -c));
    let sol = om
        .matrix
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Contour(format!("Ω inversion failed: {e}")))?;
    Ok(Upsilon { f, endpoints: endpoints.to_vec(), poly: sol.iter().copied().collect() })
}

/// θ-free one-cut kernel 𝒞(u, v) for the band [a_minus, a_plus].
///
/// Uses −1/(2(u−v)²)(1 − p/(s_u s_v)) = d²/(8 s_u s_v (s_u s_v + p)), which
/// has no cancellation near the diagonal.
pub fn kernel_one_cut(u: C64, v: C64, a_minus: f64, a_plus: f64) -> Result<C64> {
    let on_cut = |z: C64| z.im == 0.0 && z.re >= a_minus && z.re <= a_plus;
    if on_cut(u) || on_cut(v) {
        return Err(Error::Domain(format!("kernel evaluated on the cut [{a_minus}, {a_plus}]")));
    }
    let band = [(a_minus, a_plus)];
    let su = sqrt_product(&band, u);
    let sv = sqrt_product(&band, v);
    let p = u * v - 0.5 * (a_minus + a_plus) * (u + v) + a_minus * a_plus;
    let d = a_plus - a_minus;
    Ok(d * d / (8.0 * su * sv * (su * sv + p)))
}

/// Band endpoints m/2 ± √(m − 1) of the θ = 1 Krawtchouk ensemble.
pub fn krawtchouk_endpoints(m: f64) -> (f64, f64) {
    let r = (m - 1.0).sqrt();
    (m / 2.0 - r, m / 2.0 + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    OneCutClosedForm,
    MultiCutUpsilon,
}

#[derive(Debug, Clone)]
pub struct CovarianceKernel {
    theta: f64,
    endpoints: Vec<(f64, f64)>,
    contours: ContourSet,
    mode: KernelMode,
}

/// Υ-corrected kernel with the first argument frozen.
struct KernelRow {
    z: C64,
    sz: C64,
    trace: C64,
    endpoints: Vec<(f64, f64)>,
    poly: Vec<C64>,
}

impl KernelRow {
    fn bracket(z: C64, sz: C64, trace: C64, endpoints: &[(f64, f64)], w: C64) -> C64 {
        let d = z - w;
        1.0 / (d * d) - sz / sqrt_product(endpoints, w) * (1.0 / (d * d) - trace / (2.0 * d))
    }

    /// θ-free kernel value 𝒞(z, w).
    fn eval(&self, w: C64) -> C64 {
        let f = Self::bracket(self.z, self.sz, self.trace, &self.endpoints, w);
        let corr = if self.poly.is_empty() { C64::new(0.0, 0.0) } else { horner(&self.poly, w) / sqrt_product(&self.endpoints, w) };
        -0.5 * (f + corr)
    }
}

impl CovarianceKernel {
    pub fn new(endpoints: &[(f64, f64)], theta: f64, mode: KernelMode) -> Result<Self> {
        if mode == KernelMode::OneCutClosedForm && endpoints.len() != 1 {
            return Err(Error::Contract("closed-form kernel needs exactly one band".into()));
        }
        if !(theta > 0.0) {
            return Err(Error::Model(format!("theta must be positive, got {theta}")));
        }
        let contours = ContourSet::around(endpoints, 0.5)?;
        Ok(Self { theta, endpoints: endpoints.to_vec(), contours, mode })
    }

    /// One-cut closed form for a single band, Υ evaluation otherwise.
    pub fn from_spectral(sd: &SpectralData) -> Result<Self> {
        let mode = if sd.endpoints().len() == 1 { KernelMode::OneCutClosedForm } else { KernelMode::MultiCutUpsilon };
        Self::new(sd.endpoints(), sd.theta(), mode)
    }

    pub fn with_contours(mut self, contours: ContourSet) -> Result<Self> {
        check_contours(&self.endpoints, &contours)?;
        self.contours = contours;
        Ok(self)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn endpoints(&self) -> &[(f64, f64)] {
        &self.endpoints
    }

    pub fn contours(&self) -> &ContourSet {
        &self.contours
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    fn row(&self, z: C64) -> Result<KernelRow> {
        let sz = sqrt_product(&self.endpoints, z);
        let trace: C64 = self.endpoints.iter().map(|&(a, b)| 1.0 / (z - a) + 1.0 / (z - b)).sum();
        let mut row = KernelRow { z, sz, trace, endpoints: self.endpoints.clone(), poly: Vec::new() };
        if self.endpoints.len() > 1 {
            let eps = self.endpoints.clone();
            let ups = upsilon_apply(move |w| KernelRow::bracket(z, sz, trace, &eps, w), &self.endpoints, &self.contours)?;
            row.poly = ups.polynomial().to_vec();
        }
        Ok(row)
    }

    fn check_outside(&self, z: C64) -> Result<()> {
        if self.contours.encloses(z) {
            return Err(Error::Contour(format!("evaluation point {z} lies inside a contour")));
        }
        Ok(())
    }

    /// θ-free kernel 𝒞(z, w).
    pub fn kernel(&self, z: C64, w: C64) -> Result<C64> {
        self.check_outside(z)?;
        self.check_outside(w)?;
        match self.mode {
            KernelMode::OneCutClosedForm => {
                let (a, b) = self.endpoints[0];
                kernel_one_cut(z, w, a, b)
            }
            KernelMode::MultiCutUpsilon => kernel_multi_cut(z, w, self),
        }
    }

    /// Limit of cov(N G_N(z), N G_N(w)) = θ⁻¹ 𝒞(z, w).
    pub fn covariance(&self, z: C64, w: C64) -> Result<C64> {
        Ok(self.kernel(z, w)? / self.theta)
    }
}

/// θ-free multi-cut kernel through Υ; agrees with `kernel_one_cut` for one band.
pub fn kernel_multi_cut(z: C64, w: C64, kernel: &CovarianceKernel) -> Result<C64> {
    kernel.check_outside(z)?;
    kernel.check_outside(w)?;
    let row = kernel.row(z)?;
    let scale = kernel.contours.scale();
    if (z - w).norm() < 1e-4 * scale {
        // mean value over a small circle around w
        let r = 1e-2 * scale;
        let n = 32;
        let s: C64 = (0..n).map(|j| row.eval(w + C64::from_polar(r, 2.0 * PI * j as f64 / n as f64))).sum();
        return Ok(s / n as f64);
    }
    Ok(row.eval(w))
}

/// Limit covariance of Σ f(ℓ_i/N) and Σ g(ℓ_i/N): θ⁻¹(2πi)⁻²∮∮ f(u) g(v) 𝒞(u, v) du dv.
pub fn linear_stat_covariance<F, G>(f: F, g: G, kernel: &CovarianceKernel) -> Result<f64>
where
    F: Fn(C64) -> C64,
    G: Fn(C64) -> C64,
{
    let base = kernel.contours.margin();
    let outer = kernel.contours.with_margin((base + 1.0) / 2.0)?;
    let inner = kernel.contours.with_margin(base / 2.0)?;
    let k = kernel.endpoints.len();
    let mut n = MIN_NODES;
    let mut prev: Option<C64> = None;
    while n <= MAX_DOUBLE_NODES {
        let us: Vec<(C64, C64)> = (0..k).flat_map(|i| outer.nodes(i, n)).collect();
        let vs: Vec<(C64, C64)> = (0..k).flat_map(|i| inner.nodes(i, n)).collect();
        let gv: Vec<C64> = vs.iter().map(|&(v, wv)| g(v) * wv).collect();
        let mut total = C64::new(0.0, 0.0);
        let mut l1 = 0.0;
        for &(u, wu) in &us {
            let fu = f(u) * wu;
            if fu == C64::new(0.0, 0.0) {
                continue;
            }
            let mut acc = C64::new(0.0, 0.0);
            match kernel.mode {
                KernelMode::OneCutClosedForm => {
                    let (a, b) = kernel.endpoints[0];
                    for (j, &(v, _)) in vs.iter().enumerate() {
                        let t = kernel_one_cut(u, v, a, b)? * gv[j];
                        acc += t;
                        l1 += (t * fu).norm();
                    }
                }
                KernelMode::MultiCutUpsilon => {
                    let row = kernel.row(u)?;
                    for (j, &(v, _)) in vs.iter().enumerate() {
                        let t = row.eval(v) * gv[j];
                        acc += t;
                        l1 += (t * fu).norm();
                    }
                }
            }
            total += fu * acc;
        }
        if !total.re.is_finite() {
            return Err(Error::Contour("non-finite covariance integrand".into()));
        }
        if let Some(p) = prev {
            if (total - p).norm() <= REL_TOL * total.norm().max(1e-3 * l1) {
                return Ok(total.re / kernel.theta);
            }
        }
        prev = Some(total);
        n *= 2;
    }
    Err(Error::Contour(format!(
        "double contour quadrature did not converge with {MAX_DOUBLE_NODES} nodes per contour; \
         the observables may lack an analytic margin around the bands"
    )))
}

/// First-order correction to E[N(G_N(u) − G_μ(u))].
pub fn mean_correction(kernel: &CovarianceKernel, sd: &SpectralData, u: C64) -> Result<C64> {
    let meas = sd.measure();
    let model = meas.model();
    let theta = sd.theta();
    let endpoints = sd.endpoints().to_vec();
    if endpoints != kernel.endpoints {
        return Err(Error::Contract("kernel and spectral data have different band endpoints".into()));
    }
    // hulls of the support inside each interval: bands plus saturated runs
    let mut hulls = Vec::new();
    for &(a, b) in &endpoints {
        let (lo, hi) = meas
            .saturated()
            .iter()
            .filter(|&&(l, r)| meas.interval_of(0.5 * (l + r)) == meas.interval_of(0.5 * (a + b)))
            .fold((a, b), |(lo, hi), &(l, r)| (lo.min(l), hi.max(r)));
        hulls.push((lo, hi));
    }
    let inner = ContourSet::around(&hulls, 0.3)?;
    let outer = ContourSet::around(&hulls, 0.6)?;
    if outer.encloses(u) {
        return Err(Error::Contour(format!("u = {u} lies inside the integration contours")));
    }
    let psi = |z: C64| -> C64 {
        let g = meas.stieltjes_unchecked(z);
        let dg = meas.stieltjes_deriv(z);
        let em = (-theta * g).exp();
        let ep = (theta * g).exp();
        let val = model.varphi_minus_n(z) * em
            + model.varphi_plus_n(z) * ep
            + model.phi_minus(z) * em * (0.5 * theta * theta) * dg
            + model.phi_plus(z) * ep * (0.5 * theta * theta - theta) * dg;
        val / sd.h(z)
    };
    // inner quadrature: node doubling until the value at u settles
    let k = hulls.len();
    let mut n = MIN_NODES;
    let mut table: Vec<(C64, C64)>;
    let mut prev: Option<C64> = None;
    let eval = |table: &[(C64, C64)], x: C64| -> C64 {
        let s: C64 = table.iter().map(|&(z, wpsi)| wpsi / (x - z)).sum();
        s / (theta * sqrt_product(&endpoints, x))
    };
    loop {
        table = (0..k).flat_map(|i| inner.nodes(i, n)).map(|(z, w)| (z, w * psi(z))).collect();
        let cur = eval(&table, u);
        if let Some(p) = prev {
            let l1: f64 = table.iter().map(|&(z, w)| (w / (u - z)).norm()).sum::<f64>() / (theta * sqrt_product(&endpoints, u).norm());
            if (cur - p).norm() <= REL_TOL * cur.norm().max(1e-3 * l1) {
                break;
            }
        }
        prev = Some(cur);
        n *= 2;
        if n > MAX_NODES {
            return Err(Error::Contour("mean-correction contour quadrature did not converge".into()));
        }
    }
    let ups = upsilon_apply(|x| eval(&table, x), &endpoints, &outer)?;
    Ok(ups.eval(u))
}
