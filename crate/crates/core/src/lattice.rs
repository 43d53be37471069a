//! The multi-interval lattice state space and its enumeration.
//!
//! A configuration is stored as integer offsets: particle `i` of group `j`
//! sits at `a_j + λ_i + θ·(i − first_j)` with `0 ≤ λ_first ≤ … ≤ λ_last ≤ L_j`,
//! where `L_j = b_j − a_j − θ(n_j − 1)` is the number of holes in the group.

use crate::error::{Error, Result};
use crate::special::as_integer;
use serde::{Deserialize, Serialize};

pub const DEFAULT_ENUMERATION_CAP: f64 = 1e8;
const TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceSpec {
    theta: f64,
    intervals: Vec<(f64, f64)>,
    fillings: Vec<usize>,
    holes: Vec<i64>,
    first: Vec<usize>,
}

/// A point of the state space in exact integer form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParticleConfig {
    pub lambda: Vec<i64>,
}

impl StateSpaceSpec {
    pub fn new(theta: f64, intervals: Vec<(f64, f64)>, fillings: Vec<usize>) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::StateSpace(format!("theta must be positive, got {theta}")));
        }
        if intervals.is_empty() || intervals.len() != fillings.len() {
            return Err(Error::StateSpace(format!(
                "{} intervals but {} fillings",
                intervals.len(),
                fillings.len()
            )));
        }
        let mut holes = Vec::with_capacity(intervals.len());
        let mut first = Vec::with_capacity(intervals.len());
        let mut acc = 0;
        for (j, (&(a, b), &n)) in intervals.iter().zip(&fillings).enumerate() {
            if n == 0 {
                return Err(Error::StateSpace(format!("filling of interval {j} is zero")));
            }
            if j > 0 && intervals[j - 1].1 + theta > a + TOL {
                return Err(Error::StateSpace(format!(
                    "intervals {} and {j} closer than theta",
                    j - 1
                )));
            }
            let l = b - a - theta * (n as f64 - 1.0);
            let li = as_integer(l, TOL).ok_or_else(|| {
                Error::StateSpace(format!("b - a - theta(n - 1) = {l} is not an integer in interval {j}"))
            })?;
            if li < 0 {
                return Err(Error::StateSpace(format!("interval {j} cannot hold {n} particles")));
            }
            holes.push(li);
            first.push(acc);
            acc += n;
        }
        Ok(Self { theta, intervals, fillings, holes, first })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn n(&self) -> usize {
        self.fillings.iter().sum()
    }

    pub fn k(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn fillings(&self) -> &[usize] {
        &self.fillings
    }

    /// Number of holes `L_j` per interval.
    pub fn holes(&self) -> &[i64] {
        &self.holes
    }

    /// Index of the first particle of each group.
    pub fn group_starts(&self) -> &[usize] {
        &self.first
    }

    pub fn group_of(&self, i: usize) -> usize {
        match self.first.binary_search(&i) {
            Ok(j) => j,
            Err(j) => j - 1,
        }
    }

    /// Position offset of particle `i` when λ_i = 0.
    pub fn base(&self, i: usize) -> f64 {
        let j = self.group_of(i);
        self.intervals[j].0 + self.theta * (i - self.first[j]) as f64
    }

    pub fn position(&self, i: usize, lambda: i64) -> f64 {
        self.base(i) + lambda as f64
    }

    pub fn positions(&self, config: &ParticleConfig) -> Vec<f64> {
        config.lambda.iter().enumerate().map(|(i, &l)| self.position(i, l)).collect()
    }

    /// Exact membership test on the integer representation.
    pub fn contains(&self, config: &ParticleConfig) -> bool {
        if config.lambda.len() != self.n() {
            return false;
        }
        for (j, &start) in self.first.iter().enumerate() {
            let grp = &config.lambda[start..start + self.fillings[j]];
            if grp[0] < 0 || *grp.last().unwrap() > self.holes[j] {
                return false;
            }
            if grp.windows(2).any(|w| w[1] < w[0]) {
                return false;
            }
        }
        true
    }

    /// Converts real positions to the integer form, `None` when off-lattice.
    pub fn to_config(&self, positions: &[f64]) -> Result<Option<ParticleConfig>> {
        if positions.len() != self.n() {
            return Err(Error::Dimension { expected: self.n(), got: positions.len() });
        }
        let mut lambda = Vec::with_capacity(positions.len());
        for (i, &x) in positions.iter().enumerate() {
            match as_integer(x - self.base(i), TOL) {
                Some(l) => lambda.push(l),
                None => return Ok(None),
            }
        }
        let c = ParticleConfig { lambda };
        Ok(if self.contains(&c) { Some(c) } else { None })
    }

    /// Checks the three membership rules on real positions.
    pub fn validate(&self, positions: &[f64]) -> Result<bool> {
        Ok(self.to_config(positions)?.is_some())
    }

    /// Number of configurations, as a float.
    pub fn cardinality(&self) -> f64 {
        self.holes
            .iter()
            .zip(&self.fillings)
            .map(|(&l, &n)| binomial_f64(l as u64 + n as u64, n as u64))
            .product()
    }

    /// Streams every configuration once, in lexicographic order.
    pub fn enumerate(&self) -> Result<Enumerator<'_>> {
        self.enumerate_with_cap(DEFAULT_ENUMERATION_CAP)
    }

    pub fn enumerate_with_cap(&self, cap: f64) -> Result<Enumerator<'_>> {
        let estimate = self.cardinality();
        if estimate > cap {
            return Err(Error::TooLarge { estimate, cap });
        }
        Ok(Enumerator { spec: self, current: Some(vec![0; self.n()]) })
    }

    /// Same space shifted by `shift` along the real line.
    pub fn translated(&self, shift: f64) -> Result<Self> {
        let iv = self.intervals.iter().map(|&(a, b)| (a + shift, b + shift)).collect();
        Self::new(self.theta, iv, self.fillings.clone())
    }

    /// The configuration packed towards the middle of each interval.
    pub fn central_config(&self) -> ParticleConfig {
        let mut lambda = Vec::with_capacity(self.n());
        for (&l, &n) in self.holes.iter().zip(&self.fillings) {
            lambda.extend(std::iter::repeat(l / 2).take(n));
        }
        ParticleConfig { lambda }
    }
}

pub struct Enumerator<'a> {
    spec: &'a StateSpaceSpec,
    current: Option<Vec<i64>>,
}

impl Iterator for Enumerator<'_> {
    type Item = ParticleConfig;

    fn next(&mut self) -> Option<ParticleConfig> {
        let cur = self.current.take()?;
        let out = ParticleConfig { lambda: cur.clone() };
        let mut next = cur;
        let s = self.spec;
        let mut i = next.len();
        let mut advanced = false;
        while i > 0 {
            i -= 1;
            let j = s.group_of(i);
            if next[i] < s.holes[j] {
                next[i] += 1;
                let end = s.first[j] + s.fillings[j];
                for t in i + 1..end {
                    next[t] = next[i];
                }
                for t in next.iter_mut().skip(end) {
                    *t = 0;
                }
                advanced = true;
                break;
            }
        }
        if advanced {
            self.current = Some(next);
        }
        Some(out)
    }
}

pub fn binomial_f64(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r.round()
}
