//! Brute-force oracle for small N: exact masses, expectations, joint
//! cumulants and residue checks of the discrete loop observable R_N.

use crate::error::{Error, Result};
use crate::lattice::{ParticleConfig, StateSpaceSpec, DEFAULT_ENUMERATION_CAP};
use crate::models::WeightModel;
use crate::special::{as_integer, log_pair, log_pair_q, qpow};
use crate::C64;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::f64::consts::PI;

/// Log of the unnormalized mass of a configuration given by its positions.
pub fn log_mass(theta: f64, model: &WeightModel, pos: &[f64]) -> f64 {
    let mut s: f64 = pos.iter().map(|&x| model.log_weight(x)).sum();
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            s += log_pair(pos[j] - pos[i], theta);
        }
    }
    s
}

fn log_mass_q(theta: f64, q: f64, model: &WeightModel, pos: &[f64]) -> f64 {
    let mut s: f64 = pos.iter().map(|&x| model.log_weight(x)).sum();
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            s += log_pair_q(pos[j] - pos[i], theta, q);
        }
    }
    s
}

/// Fully enumerated ensemble with log masses and normalized probabilities.
#[derive(Debug, Clone)]
pub struct ExactEnsemble {
    spec: StateSpaceSpec,
    model: WeightModel,
    table: Vec<(ParticleConfig, f64)>,
    positions: Vec<Vec<f64>>,
    probs: Vec<f64>,
    log_z: f64,
    q: Option<f64>,
}

/// One residue measurement at a candidate pole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidueReport {
    pub point: f64,
    pub residue: C64,
    /// |residue| / (r · max|R| on the circle).
    pub relative: f64,
}

pub fn build_exact(spec: &StateSpaceSpec, model: &WeightModel) -> Result<ExactEnsemble> {
    build_inner(spec, model, None, DEFAULT_ENUMERATION_CAP)
}

pub fn build_exact_with_cap(spec: &StateSpaceSpec, model: &WeightModel, cap: f64) -> Result<ExactEnsemble> {
    build_inner(spec, model, None, cap)
}

/// Ensemble with q-deformed pairwise factors and the same one-particle weight.
pub fn build_exact_q(spec: &StateSpaceSpec, model: &WeightModel, q: f64) -> Result<ExactEnsemble> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("q must lie in (0, 1), got {q}")));
    }
    build_inner(spec, model, Some(q), DEFAULT_ENUMERATION_CAP)
}

fn build_inner(spec: &StateSpaceSpec, model: &WeightModel, q: Option<f64>, cap: f64) -> Result<ExactEnsemble> {
    let theta = spec.theta();
    let mut table = Vec::new();
    let mut positions = Vec::new();
    for c in spec.enumerate_with_cap(cap)? {
        let pos = spec.positions(&c);
        let lm = match q {
            None => log_mass(theta, model, &pos),
            Some(q) => log_mass_q(theta, q, model, &pos),
        };
        table.push((c, lm));
        positions.push(pos);
    }
    let max = table.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Model("every configuration has zero mass".into()));
    }
    let sum: f64 = table.iter().map(|t| (t.1 - max).exp()).sum();
    let log_z = max + sum.ln();
    let probs = table.iter().map(|t| (t.1 - log_z).exp()).collect();
    Ok(ExactEnsemble { spec: spec.clone(), model: model.clone(), table, positions, probs, log_z, q })
}

impl ExactEnsemble {
    pub fn spec(&self) -> &StateSpaceSpec {
        &self.spec
    }

    pub fn model(&self) -> &WeightModel {
        &self.model
    }

    pub fn table(&self) -> &[(ParticleConfig, f64)] {
        &self.table
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn positions(&self, idx: usize) -> &[f64] {
        &self.positions[idx]
    }

    pub fn probability(&self, config: &ParticleConfig) -> f64 {
        self.table.iter().position(|(c, _)| c == config).map_or(0.0, |i| self.probs[i])
    }

    /// Σ f(ℓ) P(ℓ).
    pub fn expectation<F: Fn(&[f64]) -> C64>(&self, f: F) -> C64 {
        self.positions.iter().zip(&self.probs).map(|(p, &w)| f(p) * w).sum()
    }

    /// The pair of multiplicative expectations entering R_N (or R^q_N).
    pub fn loop_expectations(&self, xi: C64) -> (C64, C64) {
        let th = self.spec.theta();
        let mut e1 = C64::new(0.0, 0.0);
        let mut e2 = C64::new(0.0, 0.0);
        match self.q {
            None => {
                for (pos, &w) in self.positions.iter().zip(&self.probs) {
                    let mut p1 = C64::new(w, 0.0);
                    let mut p2 = C64::new(w, 0.0);
                    for &l in pos {
                        p1 *= 1.0 - th / (xi - l);
                        p2 *= 1.0 + th / (xi - l - 1.0);
                    }
                    e1 += p1;
                    e2 += p2;
                }
            }
            Some(q) => {
                let h = q.powf(th / 2.0);
                for (pos, &w) in self.positions.iter().zip(&self.probs) {
                    let mut p1 = C64::new(w, 0.0);
                    let mut p2 = C64::new(w, 0.0);
                    for &l in pos {
                        p1 *= h * (1.0 - qpow(q, xi - l - th)) / (1.0 - qpow(q, xi - l));
                        p2 *= (1.0 - qpow(q, xi - l - 1.0 + th)) / (h * (1.0 - qpow(q, xi - l - 1.0)));
                    }
                    e1 += p1;
                    e2 += p2;
                }
            }
        }
        (e1, e2)
    }

    fn loop_raw(&self, xi: C64) -> C64 {
        let (e1, e2) = self.loop_expectations(xi);
        self.model.phi_minus_n(xi) * e1 + self.model.phi_plus_n(xi) * e2
    }

    /// R_N(ξ) (or R^q_N for a q-built ensemble). Points on a candidate pole are
    /// evaluated through the mean value over a small circle; a non-removable
    /// pole there is reported as a verification failure.
    pub fn nekrasov_r(&self, xi: C64) -> Result<C64> {
        let poles = self.pole_candidates();
        let near = poles.iter().find(|&&m| (xi - m).norm() < 1e-9);
        match near {
            None => Ok(self.loop_raw(xi)),
            Some(&m) => {
                let r = self.circle_radius(&poles);
                let rep = self.residue_at(m, r);
                if rep.relative > 1e-8 {
                    return Err(Error::Verification(format!("R_N has a pole at {m} (residue {})", rep.residue)));
                }
                let pts = 64;
                let s: C64 = (0..pts)
                    .map(|k| self.loop_raw(m + C64::from_polar(r, 2.0 * PI * k as f64 / pts as f64)))
                    .sum();
                Ok(s / pts as f64)
            }
        }
    }

    /// All points ℓ and ℓ+1 that a particle can occupy.
    pub fn pole_candidates(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for i in 0..self.spec.n() {
            let hole = self.spec.holes()[self.spec.group_of(i)];
            for l in 0..=hole + 1 {
                v.push(self.spec.position(i, l));
            }
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        v
    }

    fn circle_radius(&self, poles: &[f64]) -> f64 {
        let gap = poles.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        0.1f64.min(0.4 * gap)
    }

    fn residue_at(&self, m: f64, r: f64) -> ResidueReport {
        let pts = 64;
        let mut res = C64::new(0.0, 0.0);
        let mut max = 0.0f64;
        for k in 0..pts {
            let e = C64::from_polar(1.0, 2.0 * PI * k as f64 / pts as f64);
            let val = self.loop_raw(m + r * e);
            max = max.max(val.norm());
            res += val * e * r;
        }
        res /= pts as f64;
        let relative = if max == 0.0 { 0.0 } else { res.norm() / (r * max) };
        ResidueReport { point: m, residue: res, relative }
    }

    /// Residues of R_N at every candidate lattice pole by 64-point circular
    /// quadrature.
    pub fn residues(&self) -> Vec<ResidueReport> {
        let poles = self.pole_candidates();
        let r = self.circle_radius(&poles);
        poles.iter().map(|&m| self.residue_at(m, r)).collect()
    }

    /// Joint cumulant of up to six observables, via the moment expansion over
    /// set partitions.
    pub fn joint_cumulant(&self, observables: &[&dyn Fn(&[f64]) -> C64]) -> Result<C64> {
        let values: Vec<Vec<C64>> =
            observables.iter().map(|f| self.positions.iter().map(|p| f(p)).collect()).collect();
        joint_cumulant_weighted(&values, &self.probs)
    }
}

/// Joint cumulant κ(X_1, …, X_n) of variables given by their values on a
/// finite probability space.
pub fn joint_cumulant_weighted(values: &[Vec<C64>], probs: &[f64]) -> Result<C64> {
    let n = values.len();
    if n == 0 || n > 6 {
        return Err(Error::Domain(format!("joint cumulant supports 1 to 6 observables, got {n}")));
    }
    if values.iter().any(|v| v.len() != probs.len()) {
        return Err(Error::Dimension { expected: probs.len(), got: values.iter().map(|v| v.len()).max().unwrap_or(0) });
    }
    let moment = |mask: u32| -> C64 {
        probs
            .iter()
            .enumerate()
            .map(|(s, &p)| {
                let mut prod = C64::new(p, 0.0);
                for (i, v) in values.iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        prod *= v[s];
                    }
                }
                prod
            })
            .sum()
    };
    let mut moments = vec![C64::new(0.0, 0.0); 1 << n];
    for (mask, m) in moments.iter_mut().enumerate().skip(1) {
        *m = moment(mask as u32);
    }
    let mut total = C64::new(0.0, 0.0);
    for part in set_partitions(n) {
        let b = part.len();
        let coef = (if b % 2 == 1 { 1.0 } else { -1.0 }) * (1..b).map(|x| x as f64).product::<f64>();
        let prod: C64 = part.iter().map(|&mask| moments[mask as usize]).product();
        total += prod * coef;
    }
    Ok(total)
}

/// All set partitions of {0..n−1} as lists of block bitmasks.
fn set_partitions(n: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut blocks: Vec<u32> = Vec::new();
    fn rec(i: usize, n: usize, blocks: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i == n {
            out.push(blocks.clone());
            return;
        }
        for b in 0..blocks.len() {
            blocks[b] |= 1 << i;
            rec(i + 1, n, blocks, out);
            blocks[b] &= !(1 << i);
        }
        blocks.push(1 << i);
        rec(i + 1, n, blocks, out);
        blocks.pop();
    }
    rec(0, n, &mut blocks, &mut out);
    out
}

/// Exact rational ensemble for integer θ and integer-rooted polynomial ratios.
///
/// Weights are built by telescoping w(x) = w(x−1)·φ⁺_N(x)/φ⁻_N(x) from
/// w(a_j) = 1 on each interval; a per-interval constant does not change the
/// distribution once fillings are fixed.
#[derive(Debug, Clone)]
pub struct RationalEnsemble {
    theta: i64,
    n_big: i64,
    ratio: crate::models::RationalRatio,
    positions: Vec<Vec<i64>>,
    masses: Vec<BigRational>,
    z: BigRational,
}

fn rat(x: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(x))
}

fn root_poly(sign: i64, pow: i32, roots: &[i64], n: i64, x: i64) -> BigRational {
    let mut p = BigInt::from(sign);
    for &r in roots {
        p *= BigInt::from(x - r);
    }
    BigRational::new(p, BigInt::from(n).pow(pow as u32))
}

pub fn build_rational(spec: &StateSpaceSpec, model: &WeightModel) -> Result<RationalEnsemble> {
    let theta = as_integer(spec.theta(), 1e-12)
        .ok_or_else(|| Error::Domain("rational mode needs integer theta".into()))?;
    let ratio = model
        .rational_ratio()
        .ok_or_else(|| Error::Domain(format!("{} has no integer polynomial ratio", model.name())))?;
    let n_big = model.n() as i64;
    let mut weights: Vec<std::collections::HashMap<i64, BigRational>> = Vec::new();
    for &(a, b) in spec.intervals() {
        let a = as_integer(a, 1e-12).ok_or_else(|| Error::Domain("non-integer interval endpoint".into()))?;
        let b = as_integer(b, 1e-12).ok_or_else(|| Error::Domain("non-integer interval endpoint".into()))?;
        let mut map = std::collections::HashMap::new();
        let mut w = BigRational::one();
        map.insert(a, w.clone());
        for x in a + 1..=b {
            let num = root_poly(ratio.plus_sign, ratio.plus_pow, &ratio.plus_roots, n_big, x);
            let den = root_poly(ratio.minus_sign, ratio.minus_pow, &ratio.minus_roots, n_big, x);
            if den.is_zero() {
                return Err(Error::Boundary(x as f64));
            }
            w = w * num / den;
            map.insert(x, w.clone());
        }
        weights.push(map);
    }
    let mut positions = Vec::new();
    let mut masses = Vec::new();
    let mut z = BigRational::zero();
    for c in spec.enumerate()? {
        let pos: Vec<i64> = spec.positions(&c).iter().map(|&x| x.round() as i64).collect();
        let mut m = BigRational::one();
        for (i, &x) in pos.iter().enumerate() {
            m *= weights[spec.group_of(i)][&x].clone();
        }
        for i in 0..pos.len() {
            for j in i + 1..pos.len() {
                m *= BigRational::from_integer(pair_factor_int(pos[j] - pos[i], theta));
            }
        }
        z += m.clone();
        positions.push(pos);
        masses.push(m);
    }
    Ok(RationalEnsemble { theta, n_big, ratio, positions, masses, z })
}

/// d · Π_{j=d−θ+1}^{d+θ−1} j, the integer-θ pairwise factor.
pub fn pair_factor_int(d: i64, theta: i64) -> BigInt {
    if d < theta {
        return BigInt::zero();
    }
    let mut p = BigInt::from(d);
    for j in d - theta + 1..=d + theta - 1 {
        p *= BigInt::from(j);
    }
    p
}

impl RationalEnsemble {
    pub fn partition_function(&self) -> &BigRational {
        &self.z
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn probability(&self, idx: usize) -> BigRational {
        &self.masses[idx] / &self.z
    }

    fn phi_minus(&self, x: i64) -> BigRational {
        let r = &self.ratio;
        root_poly(r.minus_sign, r.minus_pow, &r.minus_roots, self.n_big, x)
    }

    fn phi_plus(&self, x: i64) -> BigRational {
        let r = &self.ratio;
        root_poly(r.plus_sign, r.plus_pow, &r.plus_roots, self.n_big, x)
    }

    /// Exact residue of Σ_ℓ mass(ℓ)·(R_N integrand) at every integer point
    /// that could carry a pole.
    pub fn residues(&self) -> Vec<(i64, BigRational)> {
        let th = rat(self.theta);
        let mut cands: Vec<i64> = self.positions.iter().flat_map(|p| p.iter().flat_map(|&x| [x, x + 1])).collect();
        cands.sort_unstable();
        cands.dedup();
        cands
            .into_iter()
            .map(|m| {
                let pm = self.phi_minus(m);
                let pp = self.phi_plus(m);
                let mut total = BigRational::zero();
                for (pos, mass) in self.positions.iter().zip(&self.masses) {
                    for (i, &li) in pos.iter().enumerate() {
                        if li == m {
                            let mut t = -&th * &pm * mass;
                            for (j, &lj) in pos.iter().enumerate() {
                                if j != i {
                                    t *= BigRational::one() - &th / rat(m - lj);
                                }
                            }
                            total += t;
                        } else if li == m - 1 {
                            let mut t = &th * &pp * mass;
                            for (j, &lj) in pos.iter().enumerate() {
                                if j != i {
                                    t *= BigRational::one() + &th / rat(m - lj - 1);
                                }
                            }
                            total += t;
                        }
                    }
                }
                (m, total)
            })
            .collect()
    }
}

/// Closed-form Krawtchouk partition function at θ = 1 with w = C(M, ℓ):
/// 2^{N(M−N+1)} (M!)^N Π_{j<N} j!/(M−j)!.
pub fn krawtchouk_partition_closed_form(n: u32, m: u32) -> BigRational {
    let fact = |k: u32| (1..=k).fold(BigInt::one(), |acc, i| acc * BigInt::from(i));
    let mut num = BigInt::from(2).pow(n * (m + 1 - n)) * fact(m).pow(n);
    let mut den = BigInt::one();
    for j in 0..n {
        num *= fact(j);
        den *= fact(m - j);
    }
    BigRational::new(num, den)
}

/// Lossy conversion used in reports.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    let n = r.numer().to_f64().unwrap_or(f64::NAN);
    let d = r.denom().to_f64().unwrap_or(f64::NAN);
    if n.is_finite() && d.is_finite() {
        n / d
    } else {
        let sign = if r.is_negative() { -1.0 } else { 1.0 };
        let bits = r.numer().bits() as f64 - r.denom().bits() as f64;
        sign * 2f64.powf(bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build, ModelPreset};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kraw(n: usize, big_m: i64, theta: f64) -> ExactEnsemble {
        let (spec, model) = build(&ModelPreset::Krawtchouk { m: 0.0, big_m: Some(big_m), theta }, n).unwrap();
        build_exact(&spec, &model).unwrap()
    }

    #[test]
    fn krawtchouk_small_partition_functions() {
        assert_relative_eq!(kraw(1, 2, 1.0).log_z().exp(), 4.0, epsilon = 1e-12);
        assert_relative_eq!(kraw(2, 2, 1.0).log_z().exp(), 8.0, epsilon = 1e-12);
        assert_eq!(krawtchouk_partition_closed_form(1, 2), rat(4));
        assert_eq!(krawtchouk_partition_closed_form(2, 2), rat(8));
    }

    #[test]
    fn single_config_has_probability_one() {
        let ens = kraw(3, 2, 1.0);
        assert_eq!(ens.len(), 1);
        assert_relative_eq!(ens.probabilities()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn expectations() {
        let ens = kraw(1, 2, 1.0);
        assert_relative_eq!(ens.expectation(|_| C64::new(1.0, 0.0)).re, 1.0, epsilon = 1e-14);
        assert_relative_eq!(ens.expectation(|p| C64::new(p[0], 0.0)).re, 1.0, epsilon = 1e-14);
        let c = ens.table()[1].0.clone();
        let ind = ens.expectation(|p| C64::new(if p[0] == 1.0 { 1.0 } else { 0.0 }, 0.0));
        assert_relative_eq!(ind.re, ens.probability(&c), epsilon = 1e-15);
        assert_relative_eq!(ens.probability(&c), 0.5, epsilon = 1e-14);
        let total: f64 = kraw(4, 9, 1.0).probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn krawtchouk_loop_observable_is_one() {
        let ens = kraw(1, 2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let xi = C64::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let r = ens.nekrasov_r(xi).unwrap();
            assert!((r - 1.0).norm() < 1e-12, "{xi} {r}");
        }
        assert!((ens.nekrasov_r(C64::new(1.0, 0.0)).unwrap() - 1.0).norm() < 1e-10);
    }

    #[test]
    fn loop_observable_is_polynomial() {
        let presets = [
            ModelPreset::Krawtchouk { m: 2.5, big_m: None, theta: 1.0 },
            ModelPreset::HahnHexagon { theta: 1.0, a: 3.0, b: 2.0, c: 3.0, t: 4.0 },
            ModelPreset::HahnHexagon { theta: 0.5, a: 3.0, b: 2.0, c: 3.0, t: 4.0 },
        ];
        for p in presets {
            let (spec, model) = build(&p, 3).unwrap();
            let ens = build_exact(&spec, &model).unwrap();
            let d = model.phi_degree().unwrap();
            let xs: Vec<C64> = (0..d + 2).map(|i| C64::new(0.37 * i as f64 - 1.1, 0.9 + 0.21 * i as f64)).collect();
            let ys: Vec<C64> = xs.iter().map(|&x| ens.nekrasov_r(x).unwrap()).collect();
            let c = crate::poly::fit(&xs, &ys, d);
            let scale = ys.iter().map(|y| y.norm()).fold(0.0, f64::max);
            for (x, y) in xs.iter().zip(&ys) {
                assert!((crate::poly::horner_complex(&c, *x) - y).norm() < 1e-10 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn residues_vanish_for_general_theta() {
        for &theta in &[0.5, 1.0, 2.0] {
            for n in 1..=4 {
                let (spec, model) = build(&ModelPreset::Krawtchouk { m: 2.5, big_m: None, theta }, n).unwrap();
                let ens = build_exact(&spec, &model).unwrap();
                for r in ens.residues() {
                    assert!(r.relative < 1e-10, "theta {theta} N {n}: {r:?}");
                }
            }
        }
    }

    #[test]
    fn q_deformation_tends_to_classical() {
        let (spec, model) = build(&ModelPreset::Krawtchouk { m: 2.0, big_m: Some(5), theta: 0.5 }, 2).unwrap();
        let ens = build_exact(&spec, &model).unwrap();
        let ensq = build_exact_q(&spec, &model, 1.0 - 1e-4).unwrap();
        for xi in [C64::new(0.3, 0.7), C64::new(2.2, -0.4), C64::new(-1.0, 1.5)] {
            let a = ens.nekrasov_r(xi).unwrap();
            let b = ensq.nekrasov_r(xi).unwrap();
            assert!((a - b).norm() < 1e-6 * a.norm().max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn q_residues_vanish() {
        for &theta in &[0.5, 1.0, 2.0] {
            let (spec, model) = build(&ModelPreset::Krawtchouk { m: 2.5, big_m: None, theta }, 3).unwrap();
            let ens = build_exact_q(&spec, &model, 0.6).unwrap();
            for r in ens.residues() {
                assert!(r.relative < 1e-10, "theta {theta}: {r:?}");
            }
        }
    }

    #[test]
    fn cumulant_basics() {
        let ens = kraw(2, 4, 1.0);
        let f = |p: &[f64]| C64::new(p[0] + 2.0 * p[1], 0.0);
        let g = |p: &[f64]| C64::new(p[1] * p[1], 0.0);
        let mean = ens.expectation(f);
        assert!((ens.joint_cumulant(&[&f]).unwrap() - mean).norm() < 1e-12);
        let cov = ens.expectation(|p| f(p) * g(p)) - mean * ens.expectation(g);
        assert!((ens.joint_cumulant(&[&f, &g]).unwrap() - cov).norm() < 1e-10);
    }

    #[test]
    fn cumulant_of_independent_variables_vanishes() {
        // product of three independent biased coins
        let p = [0.2, 0.7, 0.4];
        let mut probs = Vec::new();
        let mut vals = vec![Vec::new(); 3];
        for s in 0..8u32 {
            let mut pr = 1.0;
            for i in 0..3 {
                let bit = (s >> i) & 1;
                pr *= if bit == 1 { p[i] } else { 1.0 - p[i] };
                vals[i].push(C64::new(bit as f64 * (i as f64 + 1.5), 0.0));
            }
            probs.push(pr);
        }
        assert!(joint_cumulant_weighted(&vals, &probs).unwrap().norm() < 1e-12);
        let same = vec![vals[0].clone(); 3];
        // third cumulant of Bernoulli(0.2) scaled by 1.5
        let k3 = 1.5f64.powi(3) * 0.2 * 0.8 * (1.0 - 2.0 * 0.2);
        assert_relative_eq!(joint_cumulant_weighted(&same, &probs).unwrap().re, k3, epsilon = 1e-12);
    }

    #[test]
    fn set_partition_counts_are_bell_numbers() {
        let bell = [1, 2, 5, 15, 52, 203];
        for n in 1..=6 {
            assert_eq!(set_partitions(n).len(), bell[n - 1]);
        }
    }

    #[test]
    fn rational_partition_function_matches_closed_form() {
        for n in 1..=3u32 {
            for m in n..=6u32 {
                let (spec, model) = build(&ModelPreset::Krawtchouk { m: 0.0, big_m: Some(m as i64), theta: 1.0 }, n as usize).unwrap();
                let ens = build_rational(&spec, &model).unwrap();
                assert_eq!(ens.partition_function(), &krawtchouk_partition_closed_form(n, m), "N={n} M={m}");
            }
        }
    }

    #[test]
    fn rational_residues_are_zero() {
        let p = ModelPreset::HahnHexagon { theta: 1.0, a: 3.0, b: 2.0, c: 3.0, t: 4.0 };
        let (spec, model) = build(&p, 3).unwrap();
        let ens = build_rational(&spec, &model).unwrap();
        assert!(ens.residues().iter().all(|(_, r)| r.is_zero()));
    }

    #[test]
    fn rational_mode_rejects_non_integer_theta() {
        let (spec, model) = build(&ModelPreset::Krawtchouk { m: 2.0, big_m: None, theta: 0.5 }, 2).unwrap();
        assert!(build_rational(&spec, &model).is_err());
    }

    #[test]
    fn pair_factor_matches_float() {
        for theta in 1..=3 {
            for d in theta..30 {
                let exact = pair_factor_int(d, theta).to_f64().unwrap().ln();
                assert_relative_eq!(exact, log_pair(d as f64, theta as f64), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn enumeration_cap_propagates() {
        let (spec, model) = build(&ModelPreset::krawtchouk(3.0), 40).unwrap();
        assert!(matches!(build_exact(&spec, &model), Err(Error::TooLarge { .. })));
    }
}
