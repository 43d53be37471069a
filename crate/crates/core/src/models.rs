//! Model zoo: weights w(x;N), the ratio functions φ±_N, their limits and
//! 1/N corrections.
//!
//! Lattice convention: every interval `[a, b]` is inclusive and the weight is
//! positive on it, with φ⁻_N(a) = 0 and φ⁺_N(b + 1) = 0 so that boundary terms
//! vanish.

use crate::error::{Error, Result};
use crate::lattice::StateSpaceSpec;
use crate::poly::{antiderivative, derivative, horner, horner_real, root_product};
use crate::special::{as_integer, ln_gamma, ln_gamma_complex};
use crate::C64;
use serde::{Deserialize, Serialize};

fn one() -> f64 {
    1.0
}
fn default_eps() -> f64 {
    0.1
}
fn default_safety() -> f64 {
    1.5
}
fn default_half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelPreset {
    /// Binomial weight C(M, ℓ) with M = ⌊𝔪N⌋ (or `big_m` when given).
    Krawtchouk {
        m: f64,
        #[serde(default)]
        big_m: Option<i64>,
        #[serde(default = "one")]
        theta: f64,
    },
    /// k-interval extension with ratio −Π(x − b_i − 1)/(x − a_i).
    MulticutKrawtchouk {
        #[serde(default = "one")]
        theta: f64,
        a_hat: Vec<f64>,
        b_hat: Vec<f64>,
        n_hat: Vec<f64>,
        #[serde(default)]
        c_hat: Vec<f64>,
    },
    /// Hahn weight (A+B+C+1−t−ℓ)_{t−B}(ℓ)_{t−C} on 1..A+B+C−t.
    HahnHexagon {
        #[serde(default = "one")]
        theta: f64,
        a: f64,
        b: f64,
        c: f64,
        t: f64,
    },
    /// Hahn weight times (H−ℓ)_D², two intervals around the hole.
    HexagonHole {
        #[serde(default = "one")]
        theta: f64,
        a: f64,
        b: f64,
        c: f64,
        t: f64,
        h: f64,
        d: f64,
        #[serde(default = "default_half")]
        n1_hat: f64,
    },
    /// exp(−κN V(ℓ/N)) with polynomial convex V, ℓ_i = λ_i + θi.
    ConvexPotential {
        #[serde(default = "one")]
        theta: f64,
        #[serde(default = "one")]
        kappa: f64,
        coeffs: Vec<f64>,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_safety")]
        safety: f64,
    },
    /// 1/(Γ(𝐳−ℓ)Γ(𝐳̄−ℓ)Γ(𝐰+ℓ)Γ(𝐰̄+ℓ)) with 𝐳 = N𝐳_∞, 𝐰 = N𝐰_∞.
    ZwMeasure {
        #[serde(default = "one")]
        theta: f64,
        z_re: f64,
        z_im: f64,
        w_re: f64,
        w_im: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_safety")]
        safety: f64,
    },
}

impl ModelPreset {
    pub fn name(&self) -> &'static str {
        match self {
            ModelPreset::Krawtchouk { .. } => "krawtchouk",
            ModelPreset::MulticutKrawtchouk { .. } => "multicut_krawtchouk",
            ModelPreset::HahnHexagon { .. } => "hahn_hexagon",
            ModelPreset::HexagonHole { .. } => "hexagon_hole",
            ModelPreset::ConvexPotential { .. } => "convex_potential",
            ModelPreset::ZwMeasure { .. } => "zw_measure",
        }
    }

    pub fn theta(&self) -> f64 {
        match *self {
            ModelPreset::Krawtchouk { theta, .. }
            | ModelPreset::MulticutKrawtchouk { theta, .. }
            | ModelPreset::HahnHexagon { theta, .. }
            | ModelPreset::HexagonHole { theta, .. }
            | ModelPreset::ConvexPotential { theta, .. }
            | ModelPreset::ZwMeasure { theta, .. } => theta,
        }
    }

    pub fn with_theta(&self, th: f64) -> Self {
        let mut p = self.clone();
        match &mut p {
            ModelPreset::Krawtchouk { theta, .. }
            | ModelPreset::MulticutKrawtchouk { theta, .. }
            | ModelPreset::HahnHexagon { theta, .. }
            | ModelPreset::HexagonHole { theta, .. }
            | ModelPreset::ConvexPotential { theta, .. }
            | ModelPreset::ZwMeasure { theta, .. } => *theta = th,
        }
        p
    }

    pub fn krawtchouk(m: f64) -> Self {
        ModelPreset::Krawtchouk { m, big_m: None, theta: 1.0 }
    }

    pub fn convex(coeffs: Vec<f64>) -> Self {
        ModelPreset::ConvexPotential { theta: 1.0, kappa: 1.0, coeffs, eps: 0.1, safety: 1.5 }
    }
}

/// φ_N(x) = sign·N^{−pow}·Π(x − r_i) with limit roots r̂_i = lim r_i/N.
#[derive(Debug, Clone, PartialEq)]
struct RootForm {
    sign: f64,
    pow: i32,
    roots: Vec<C64>,
    roots_hat: Vec<C64>,
}

impl RootForm {
    fn scale(&self, n: f64) -> f64 {
        self.sign * n.powi(-self.pow)
    }

    fn eval_n(&self, n: f64, xi: C64) -> C64 {
        root_product(C64::new(self.scale(n), 0.0), &self.roots, xi)
    }

    fn eval_limit(&self, z: C64) -> C64 {
        root_product(C64::new(self.sign, 0.0), &self.roots_hat, z)
    }

    /// First-order coefficient of φ_N(Nz) − φ(z) in 1/N.
    fn correction(&self, n: f64, z: C64) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..self.roots.len() {
            let delta = self.roots[i] - self.roots_hat[i] * n;
            let mut prod = C64::new(self.sign, 0.0);
            for (j, &r) in self.roots_hat.iter().enumerate() {
                if j != i {
                    prod *= z - r;
                }
            }
            acc -= delta * prod;
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Ratio { plus: RootForm, minus: RootForm, offsets: Vec<f64> },
    Convex { kappa: f64, coeffs: Vec<f64> },
}

/// Weight evaluators for one value of N.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightModel {
    preset: ModelPreset,
    n: usize,
    theta: f64,
    kind: Kind,
    intervals: Vec<(f64, f64)>,
    support_hint: Vec<(f64, f64)>,
    fillings_hat: Vec<f64>,
    truncation: Option<f64>,
}

/// Exact data for rational-arithmetic evaluation of a polynomial-ratio model.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalRatio {
    pub plus_sign: i64,
    pub plus_pow: i32,
    pub plus_roots: Vec<i64>,
    pub minus_sign: i64,
    pub minus_pow: i32,
    pub minus_roots: Vec<i64>,
}

fn fillings_from_fractions(n: usize, fr: &[f64]) -> Result<Vec<usize>> {
    let total: f64 = fr.iter().sum();
    if fr.iter().any(|&f| f <= 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Model(format!("filling fractions must be positive and sum to 1, got {fr:?}")));
    }
    let raw: Vec<f64> = fr.iter().map(|f| f * n as f64).collect();
    let mut out: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut rem: Vec<(usize, f64)> = raw.iter().enumerate().map(|(i, r)| (i, r - r.floor())).collect();
    rem.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    let mut left = n - out.iter().sum::<usize>();
    for (i, _) in rem {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    if out.iter().any(|&x| x == 0) {
        return Err(Error::Model(format!("N = {n} too small for {} intervals", fr.len())));
    }
    Ok(out)
}

/// Largest admissible right endpoint ≤ `target` for a group starting at `a`.
fn snap_right(a: f64, n: usize, theta: f64, target: f64) -> Result<f64> {
    let l = (target - a - theta * (n as f64 - 1.0) + 1e-9).floor();
    if l < 0.0 {
        return Err(Error::Model(format!("interval starting at {a} cannot hold {n} particles")));
    }
    Ok(a + theta * (n as f64 - 1.0) + l)
}

fn real_roots(v: &[f64]) -> Vec<C64> {
    v.iter().map(|&r| C64::new(r, 0.0)).collect()
}

fn hahn_forms(n: f64, a: f64, b: f64, c: f64, t: f64) -> (RootForm, RootForm) {
    let plus = RootForm {
        sign: -1.0,
        pow: 2,
        roots: real_roots(&[c + 1.0 - t, a + b + c + 1.0 - t]),
        roots_hat: real_roots(&[(c - t) / n, (a + b + c - t) / n]),
    };
    let minus = RootForm {
        sign: -1.0,
        pow: 2,
        roots: real_roots(&[1.0, a + c + 1.0]),
        roots_hat: real_roots(&[0.0, (a + c) / n]),
    };
    (plus, minus)
}

/// Builds the lattice and weight model of a preset at size N.
pub fn build(preset: &ModelPreset, n: usize) -> Result<(StateSpaceSpec, WeightModel)> {
    if n == 0 {
        return Err(Error::Model("N must be at least 1".into()));
    }
    let theta = preset.theta();
    if !(theta > 0.0) {
        return Err(Error::Model(format!("theta must be positive, got {theta}")));
    }
    let nf = n as f64;
    let (intervals, fillings, kind, hint, fill_hat, trunc) = match preset {
        ModelPreset::Krawtchouk { m, big_m, .. } => {
            let target = match big_m {
                Some(mm) => *mm as f64,
                None => {
                    if *m <= theta.max(1.0) {
                        return Err(Error::Model(format!("krawtchouk requires m > max(1, theta), got {m}")));
                    }
                    (m * nf + 1e-9).floor()
                }
            };
            let m_lim = if big_m.is_some() { target / nf } else { *m };
            let b = snap_right(0.0, n, theta, target)?;
            let plus = RootForm {
                sign: -1.0,
                pow: 1,
                roots: vec![C64::new(b + 1.0, 0.0)],
                roots_hat: vec![C64::new(m_lim, 0.0)],
            };
            let minus = RootForm { sign: 1.0, pow: 1, roots: vec![C64::new(0.0, 0.0)], roots_hat: vec![C64::new(0.0, 0.0)] };
            let kind = Kind::Ratio { plus, minus, offsets: vec![ln_gamma(b + 1.0)] };
            (vec![(0.0, b)], vec![n], kind, vec![(0.0, m_lim)], vec![1.0], None)
        }
        ModelPreset::MulticutKrawtchouk { a_hat, b_hat, n_hat, c_hat, .. } => {
            let k = a_hat.len();
            if k == 0 || b_hat.len() != k || n_hat.len() != k || (!c_hat.is_empty() && c_hat.len() != k) {
                return Err(Error::Model("multicut_krawtchouk needs equal-length a_hat, b_hat, n_hat".into()));
            }
            for i in 0..k {
                if !(a_hat[i] < b_hat[i]) || (i + 1 < k && !(b_hat[i] < a_hat[i + 1])) {
                    return Err(Error::Model("intervals must satisfy a_1 < b_1 < a_2 < …".into()));
                }
                if n_hat[i] >= (b_hat[i] - a_hat[i]) / theta {
                    return Err(Error::Model(format!("n_hat[{i}] exceeds the capacity of its interval")));
                }
            }
            let fillings = fillings_from_fractions(n, n_hat)?;
            let mut iv = Vec::with_capacity(k);
            for i in 0..k {
                let a = (a_hat[i] * nf).round();
                let b = snap_right(a, fillings[i], theta, b_hat[i] * nf - 1.0)?;
                iv.push((a, b));
            }
            let plus = RootForm {
                sign: -1.0,
                pow: k as i32,
                roots: iv.iter().map(|&(_, b)| C64::new(b + 1.0, 0.0)).collect(),
                roots_hat: real_roots(b_hat),
            };
            let minus = RootForm {
                sign: 1.0,
                pow: k as i32,
                roots: iv.iter().map(|&(a, _)| C64::new(a, 0.0)).collect(),
                roots_hat: real_roots(a_hat),
            };
            let ch: Vec<f64> = if c_hat.is_empty() { vec![0.0; k] } else { c_hat.clone() };
            let mut kind = Kind::Ratio { plus, minus, offsets: vec![0.0; k] };
            // gauge: w(a_i) = exp(N ĉ_i)
            let base: Vec<f64> = iv.iter().enumerate().map(|(j, &(a, _))| raw_ratio_log_weight(&kind, &iv, j, a)).collect();
            if let Kind::Ratio { offsets, .. } = &mut kind {
                for j in 0..k {
                    offsets[j] = nf * ch[j] - base[j];
                }
            }
            let hint = a_hat.iter().zip(b_hat).map(|(&a, &b)| (a, b)).collect();
            (iv, fillings, kind, hint, n_hat.clone(), None)
        }
        ModelPreset::HahnHexagon { a, b, c, t, .. } => {
            if !(*t > b.max(*c)) || *a <= 0.0 {
                return Err(Error::Model("hahn_hexagon requires t > max(B, C) and A > 0".into()));
            }
            let top = a + b + c - t;
            let right = snap_right(1.0, n, theta, top)?;
            let a_eff = a - (top - right);
            let (plus, minus) = hahn_forms(nf, a_eff, *b, *c, *t);
            let kind = Kind::Ratio { plus, minus, offsets: vec![0.0] };
            (vec![(1.0, right)], vec![n], kind, vec![(0.0, right / nf)], vec![1.0], None)
        }
        ModelPreset::HexagonHole { a, b, c, t, h, d, n1_hat, .. } => {
            if !(*t > b.max(*c)) || *h <= 1.0 || *d <= 0.0 || h + d >= a + b + c - t {
                return Err(Error::Model("hexagon_hole requires t > max(B,C), H > 1, D > 0, H + D < A+B+C−t".into()));
            }
            let fillings = fillings_from_fractions(n, &[*n1_hat, 1.0 - n1_hat])?;
            let b1 = snap_right(1.0, fillings[0], theta, h - 1.0)?;
            let a2 = h + d;
            if b1 + theta > a2 + 1e-9 {
                return Err(Error::Model("hole too thin for theta".into()));
            }
            let top = a + b + c - t;
            let b2 = snap_right(a2, fillings[1], theta, top)?;
            let a_eff = a - (top - b2);
            let h_eff = b1 + 1.0;
            let (mut plus, mut minus) = hahn_forms(nf, a_eff, *b, *c, *t);
            plus.pow += 2;
            minus.pow += 2;
            plus.roots.extend(real_roots(&[h_eff, h_eff]));
            plus.roots_hat.extend(real_roots(&[h / nf, h / nf]));
            minus.roots.extend(real_roots(&[a2, a2]));
            minus.roots_hat.extend(real_roots(&[a2 / nf, a2 / nf]));
            let kind = Kind::Ratio { plus, minus, offsets: vec![0.0, 0.0] };
            let hint = vec![(0.0, h / nf), (a2 / nf, b2 / nf)];
            let fh = vec![fillings[0] as f64 / nf, fillings[1] as f64 / nf];
            (vec![(1.0, b1), (a2, b2)], fillings, kind, hint, fh, None)
        }
        ModelPreset::ConvexPotential { kappa, coeffs, .. } => {
            check_convex(coeffs)?;
            if *kappa <= 0.0 {
                return Err(Error::Model("kappa must be positive".into()));
            }
            let dt = truncation_radius(preset)?;
            let (a, b) = truncated_interval(n, theta, dt)?;
            let kind = Kind::Convex { kappa: *kappa, coeffs: coeffs.clone() };
            (vec![(a, b)], vec![n], kind, vec![(-dt, dt)], vec![1.0], Some(dt))
        }
        ModelPreset::ZwMeasure { z_re, z_im, w_re, w_im, .. } => {
            check_zw(*z_re, *z_im, *w_re, *w_im)?;
            let dt = truncation_radius(preset)?;
            let (a, b) = truncated_interval(n, theta, dt)?;
            let z = C64::new(*z_re, *z_im);
            let w = C64::new(*w_re, *w_im);
            let plus = RootForm { sign: 1.0, pow: 2, roots: vec![z * nf, (z * nf).conj()], roots_hat: vec![z, z.conj()] };
            let minus = RootForm {
                sign: 1.0,
                pow: 2,
                roots: vec![1.0 - w * nf, 1.0 - (w * nf).conj()],
                roots_hat: vec![-w, -w.conj()],
            };
            let kind = Kind::Ratio { plus, minus, offsets: vec![0.0] };
            (vec![(a, b)], vec![n], kind, vec![(-dt, dt)], vec![1.0], Some(dt))
        }
    };
    let spec = StateSpaceSpec::new(theta, intervals.clone(), fillings)?;
    let model = WeightModel {
        preset: preset.clone(),
        n,
        theta,
        kind,
        intervals,
        support_hint: hint,
        fillings_hat: fill_hat,
        truncation: trunc,
    };
    model.check_signs()?;
    Ok((spec, model))
}

fn truncated_interval(n: usize, theta: f64, dt: f64) -> Result<(f64, f64)> {
    let nf = n as f64;
    // lattice ℓ_i = λ_i + θ i, first position ≥ −D N
    let a = theta + (-dt * nf - theta).ceil();
    let b = snap_right(a, n, theta, dt * nf)?;
    Ok((a, b))
}

fn check_convex(coeffs: &[f64]) -> Result<()> {
    let deg = crate::poly::degree(coeffs).unwrap_or(0);
    if deg < 2 || deg % 2 == 1 || coeffs[deg] <= 0.0 {
        return Err(Error::Model("convex potential must have even degree ≥ 2 and positive leading coefficient".into()));
    }
    let d2 = derivative(&derivative(coeffs));
    // beyond |x| = 1 + Σ|c_i/c_top| the leading term of V'' dominates
    let top = d2[d2.len() - 1];
    let r = 1.0 + d2.iter().map(|c| (c / top).abs()).sum::<f64>();
    let steps = 20_000;
    for i in 0..=steps {
        let x = -r + 2.0 * r * i as f64 / steps as f64;
        if horner_real(&d2, x) < 0.0 {
            return Err(Error::Model(format!("potential is not convex near x = {x}")));
        }
    }
    Ok(())
}

fn check_zw(z_re: f64, z_im: f64, w_re: f64, w_im: f64) -> Result<()> {
    if z_im == 0.0 || w_im == 0.0 {
        return Err(Error::Model("zw_measure needs non-real z and w".into()));
    }
    if z_re + w_re <= 1.0 {
        return Err(Error::Model(format!("zw_measure requires Re(z + w) > 1, got {}", z_re + w_re)));
    }
    Ok(())
}

/// Log-weight from the Gamma-function realisation of the ratio, without offset.
fn raw_ratio_log_weight(kind: &Kind, intervals: &[(f64, f64)], j: usize, x: f64) -> f64 {
    let Kind::Ratio { plus, minus, .. } = kind else { unreachable!() };
    let (a, _) = intervals[j];
    let mut s = x * (plus.sign.abs() / minus.sign.abs()).ln();
    for &p in &plus.roots {
        if p.im != 0.0 {
            s -= ln_gamma_complex(p - x).re;
        } else if p.re < a + 1.0 {
            s += ln_gamma(x - p.re + 1.0);
        } else {
            s -= ln_gamma(p.re - x);
        }
    }
    for &q in &minus.roots {
        if q.im != 0.0 {
            s -= ln_gamma_complex(C64::new(x + 1.0, 0.0) - q).re;
        } else if q.re < a + 1.0 {
            s -= ln_gamma(x - q.re + 1.0);
        } else {
            s += ln_gamma(q.re - x);
        }
    }
    s
}

impl WeightModel {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn preset(&self) -> &ModelPreset {
        &self.preset
    }

    pub fn name(&self) -> &'static str {
        self.preset.name()
    }

    /// Lattice intervals the weight lives on.
    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    /// Limit support intervals [â_i, b̂_i].
    pub fn support_hint(&self) -> &[(f64, f64)] {
        &self.support_hint
    }

    pub fn fillings_hat(&self) -> &[f64] {
        &self.fillings_hat
    }

    pub fn truncation_radius(&self) -> Option<f64> {
        self.truncation
    }

    fn interval_of(&self, x: f64) -> Option<usize> {
        self.intervals.iter().position(|&(a, b)| x >= a - 1e-9 && x <= b + 1e-9)
    }

    fn check_signs(&self) -> Result<()> {
        let Kind::Ratio { plus, minus, .. } = &self.kind else { return Ok(()) };
        for &(a, b) in &self.intervals {
            let mut sign = plus.sign * minus.sign;
            for r in plus.roots.iter().chain(&minus.roots) {
                if r.im != 0.0 {
                    continue;
                }
                if r.re >= a + 1.0 && r.re <= b {
                    return Err(Error::Model(format!("weight has an interior zero or pole at {}", r.re)));
                }
                if r.re > b {
                    sign = -sign;
                }
            }
            if sign < 0.0 {
                return Err(Error::Model(format!("weight ratio is negative on [{a}, {b}]")));
            }
        }
        Ok(())
    }

    /// ln w(x;N); −∞ off the lattice intervals.
    pub fn log_weight(&self, x: f64) -> f64 {
        let Some(j) = self.interval_of(x) else { return f64::NEG_INFINITY };
        match &self.kind {
            Kind::Ratio { offsets, .. } => offsets[j] + raw_ratio_log_weight(&self.kind, &self.intervals, j, x),
            Kind::Convex { kappa, coeffs } => {
                let nf = self.n as f64;
                -kappa * nf * horner_real(coeffs, x / nf)
            }
        }
    }

    /// ln(w(x)/w(x−1)) = ln φ⁺_N(x) − ln φ⁻_N(x).
    pub fn log_weight_ratio(&self, x: f64) -> Result<f64> {
        let xi = C64::new(x, 0.0);
        match &self.kind {
            Kind::Convex { kappa, coeffs } => {
                let nf = self.n as f64;
                Ok(kappa * nf * (horner_real(coeffs, (x - 1.0) / nf) - horner_real(coeffs, x / nf)))
            }
            Kind::Ratio { .. } => {
                let pm = self.phi_minus_n(xi);
                if pm.norm() == 0.0 {
                    return Err(Error::Boundary(x));
                }
                let r = self.phi_plus_n(xi) / pm;
                Ok(r.re.ln())
            }
        }
    }

    pub fn phi_plus_n(&self, xi: C64) -> C64 {
        let nf = self.n as f64;
        match &self.kind {
            Kind::Ratio { plus, .. } => plus.eval_n(nf, xi),
            Kind::Convex { kappa, coeffs } => {
                (kappa * nf * (horner(coeffs, (xi - 1.0) / nf) - horner(coeffs, xi / nf))).exp()
            }
        }
    }

    pub fn phi_minus_n(&self, xi: C64) -> C64 {
        match &self.kind {
            Kind::Ratio { minus, .. } => minus.eval_n(self.n as f64, xi),
            Kind::Convex { .. } => C64::new(1.0, 0.0),
        }
    }

    pub fn phi_plus(&self, z: C64) -> C64 {
        match &self.kind {
            Kind::Ratio { plus, .. } => plus.eval_limit(z),
            Kind::Convex { kappa, coeffs } => (-*kappa * horner(&derivative(coeffs), z)).exp(),
        }
    }

    pub fn phi_minus(&self, z: C64) -> C64 {
        match &self.kind {
            Kind::Ratio { minus, .. } => minus.eval_limit(z),
            Kind::Convex { .. } => C64::new(1.0, 0.0),
        }
    }

    pub fn varphi_plus_n(&self, z: C64) -> C64 {
        match &self.kind {
            Kind::Ratio { plus, .. } => plus.correction(self.n as f64, z),
            Kind::Convex { kappa, coeffs } => {
                let d1 = derivative(coeffs);
                let d2 = derivative(&d1);
                0.5 * kappa * horner(&d2, z) * (-*kappa * horner(&d1, z)).exp()
            }
        }
    }

    pub fn varphi_minus_n(&self, z: C64) -> C64 {
        match &self.kind {
            Kind::Ratio { minus, .. } => minus.correction(self.n as f64, z),
            Kind::Convex { .. } => C64::new(0.0, 0.0),
        }
    }

    /// Whether φ±_N are polynomials.
    pub fn is_polynomial(&self) -> bool {
        matches!(self.kind, Kind::Ratio { .. })
    }

    /// Degree bound d for polynomial φ±_N.
    pub fn phi_degree(&self) -> Option<usize> {
        match &self.kind {
            Kind::Ratio { plus, minus, .. } => Some(plus.roots.len().max(minus.roots.len())),
            Kind::Convex { .. } => None,
        }
    }

    /// True when the weight is cut off at the lattice boundary rather than
    /// vanishing there (so Nekrasov boundary terms need not cancel).
    pub fn is_truncated(&self) -> bool {
        self.truncation.is_some()
    }

    /// Integer root data for exact rational evaluation, if available.
    pub fn rational_ratio(&self) -> Option<RationalRatio> {
        let Kind::Ratio { plus, minus, .. } = &self.kind else { return None };
        let ints = |v: &[C64]| -> Option<Vec<i64>> {
            v.iter().map(|r| if r.im == 0.0 { as_integer(r.re, 1e-12) } else { None }).collect()
        };
        Some(RationalRatio {
            plus_sign: plus.sign as i64,
            plus_pow: plus.pow,
            plus_roots: ints(&plus.roots)?,
            minus_sign: minus.sign as i64,
            minus_pow: minus.pow,
            minus_roots: ints(&minus.roots)?,
        })
    }

    /// Effective potential V with φ⁺/φ⁻ = exp(−V′) on the limit support.
    pub fn potential(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Convex { kappa, coeffs } => kappa * horner_real(coeffs, x),
            Kind::Ratio { plus, minus, .. } => {
                let j = |y: C64| (y * y.ln() - y).re;
                let mut s = -x * (plus.sign.abs() / minus.sign.abs()).ln();
                for &p in &plus.roots_hat {
                    s -= j(C64::new(x, 0.0) - p);
                }
                for &q in &minus.roots_hat {
                    s += j(C64::new(x, 0.0) - q);
                }
                s
            }
        }
    }

    pub fn potential_deriv(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Convex { kappa, coeffs } => kappa * horner_real(&derivative(coeffs), x),
            Kind::Ratio { plus, minus, .. } => {
                let mut s = -(plus.sign.abs() / minus.sign.abs()).ln();
                for &p in &plus.roots_hat {
                    s -= (C64::new(x, 0.0) - p).norm().ln();
                }
                for &q in &minus.roots_hat {
                    s += (C64::new(x, 0.0) - q).norm().ln();
                }
                s
            }
        }
    }

    /// Mean of V over [x0, x1].
    pub fn potential_cell_average(&self, x0: f64, x1: f64) -> f64 {
        let h = x1 - x0;
        match &self.kind {
            Kind::Convex { kappa, coeffs } => {
                let a = antiderivative(coeffs);
                kappa * (horner_real(&a, x1) - horner_real(&a, x0)) / h
            }
            Kind::Ratio { plus, minus, .. } => {
                // antiderivative of Re[y ln y − y] is Re[y² ln y / 2 − 3y²/4]
                let k = |y: C64| {
                    if y.norm() == 0.0 {
                        0.0
                    } else {
                        (y * y * y.ln() * 0.5 - 0.75 * y * y).re
                    }
                };
                let cell = |r: C64| (k(C64::new(x1, 0.0) - r) - k(C64::new(x0, 0.0) - r)) / h;
                let mut s = -0.5 * (x0 + x1) * (plus.sign.abs() / minus.sign.abs()).ln();
                for &p in &plus.roots_hat {
                    s -= cell(p);
                }
                for &q in &minus.roots_hat {
                    s += cell(q);
                }
                s
            }
        }
    }
}

/// Radius D such that configurations leaving [−DN, DN] are exponentially
/// unlikely, times the preset's safety factor.
///
/// D₀ is the smallest integer ≥ 1 with V(x) − min V ≥ 2θ(1+ε)(1 + ln 2|x|) for
/// all |x| ≥ D₀, which dominates the log-energy a unit mass can gain.
pub fn truncation_radius(preset: &ModelPreset) -> Result<f64> {
    let (theta, eps, safety, v): (f64, f64, f64, Box<dyn Fn(f64) -> f64>) = match preset {
        ModelPreset::ConvexPotential { theta, kappa, coeffs, eps, safety } => {
            check_convex(coeffs)?;
            let c = coeffs.clone();
            let k = *kappa;
            (*theta, *eps, *safety, Box::new(move |x| k * horner_real(&c, x)))
        }
        ModelPreset::ZwMeasure { theta, z_re, z_im, w_re, w_im, eps, safety } => {
            check_zw(*z_re, *z_im, *w_re, *w_im)?;
            let z = C64::new(*z_re, *z_im);
            let w = C64::new(*w_re, *w_im);
            let growth = 2.0 * (z_re + w_re);
            if growth <= 2.0 * theta * (1.0 + eps) {
                return Err(Error::Model(format!(
                    "potential grows like {growth:.3} ln|x|, needs more than 2θ(1+ε) = {:.3}",
                    2.0 * theta * (1.0 + eps)
                )));
            }
            let j = |y: C64| (y * y.ln() - y).re;
            let v = move |x: f64| {
                let xc = C64::new(x, 0.0);
                -j(xc - z) - j(xc - z.conj()) + j(xc + w) + j(xc + w.conj())
            };
            (*theta, *eps, *safety, Box::new(v))
        }
        _ => return Err(Error::Model(format!("{} has bounded support; no truncation", preset.name()))),
    };
    if safety < 1.0 {
        return Err(Error::Model("truncation safety factor must be ≥ 1".into()));
    }
    // minimum of V on a coarse grid refined locally
    let mut vmin = f64::INFINITY;
    for i in -4000..=4000 {
        vmin = vmin.min(v(i as f64 * 0.01));
    }
    let c = 2.0 * theta * (1.0 + eps);
    let holds = |x: f64| v(x) - vmin >= c * (1.0 + (2.0 * x.abs()).ln());
    let holds_beyond = |d: f64| {
        let mut x = d;
        while x < 1e7 {
            if !holds(x) || !holds(-x) {
                return false;
            }
            x *= 1.01;
        }
        true
    };
    for d in 1..=100_000 {
        if holds_beyond(d as f64) {
            return Ok(safety * d as f64);
        }
    }
    Err(Error::Model("growth condition fails: no finite truncation radius".into()))
}
