//! Gamma-type special functions and the pairwise interaction factor.

use num_complex::Complex64;
use std::f64::consts::PI;

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Complex log-gamma (Lanczos, with reflection for Re z < 1/2). Only the real
/// part is branch independent.
pub fn ln_gamma_complex(z: Complex64) -> Complex64 {
    if z.re < 0.5 {
        let s = (Complex64::new(PI, 0.0) * z).sin();
        return Complex64::new(PI.ln(), 0.0) - s.ln() - ln_gamma_complex(1.0 - z);
    }
    let z = z - 1.0;
    let mut x = Complex64::new(LANCZOS[0], 0.0);
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        x += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + x.ln()
}

/// Returns `Some(n)` when `x` is within `tol` of the integer `n`.
pub fn as_integer(x: f64, tol: f64) -> Option<i64> {
    let r = x.round();
    if (x - r).abs() <= tol && r.abs() < 9.0e15 {
        Some(r as i64)
    } else {
        None
    }
}

/// Log of Γ(d+1)Γ(d+θ)/(Γ(d)Γ(d+1−θ)) for a gap d ≥ θ; −∞ for forbidden gaps.
pub fn log_pair(d: f64, theta: f64) -> f64 {
    if d < theta - 1e-9 {
        return f64::NEG_INFINITY;
    }
    if let Some(t) = as_integer(theta, 1e-12) {
        // d · (d+θ−1)!/(d−θ)! as a sum of logs
        let mut s = d.ln();
        let mut j = d - t as f64 + 1.0;
        while j <= d + t as f64 - 1.0 + 1e-9 {
            s += j.ln();
            j += 1.0;
        }
        return s;
    }
    d.ln() + ln_gamma(d + theta) - ln_gamma(d + 1.0 - theta)
}

/// ln (q^x; q)_∞ summed until q^{x+n} < 1e-17.
pub fn ln_qpoch_inf(x: f64, q: f64) -> f64 {
    let lq = q.ln();
    let mut s = 0.0;
    let mut n = 0.0;
    loop {
        let t = ((x + n) * lq).exp();
        if t < 1e-17 {
            break;
        }
        s += (-t).ln_1p();
        n += 1.0;
    }
    s
}

/// ln of the q-deformed pairwise factor q^{−θd}Γ_q(d+1)Γ_q(d+θ)/(Γ_q(d)Γ_q(d+1−θ)).
pub fn log_pair_q(d: f64, theta: f64, q: f64) -> f64 {
    if d < theta - 1e-9 {
        return f64::NEG_INFINITY;
    }
    let lq = q.ln();
    let a = d + 1.0 - theta;
    let b = d + theta;
    // ln (q^a;q)_∞ − ln (q^b;q)_∞, finite when b − a is a nonnegative integer
    let bracket = match as_integer(b - a, 1e-12) {
        Some(m) if m >= 0 => (0..m).map(|n| (-((a + n as f64) * lq).exp()).ln_1p()).sum(),
        _ => {
            let mut s = 0.0;
            let mut n = 0.0;
            loop {
                let ta = ((a + n) * lq).exp();
                let tb = ((b + n) * lq).exp();
                if ta.max(tb) < 1e-17 {
                    break;
                }
                s += (-ta).ln_1p() - (-tb).ln_1p();
                n += 1.0;
            }
            s
        }
    };
    -theta * d * lq - 2.0 * theta * (1.0 - q).ln() + (-(d * lq).exp()).ln_1p() + bracket
}

/// q^w for real q in (0,1) and complex w.
pub fn qpow(q: f64, w: Complex64) -> Complex64 {
    (w * q.ln()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn complex_lgamma_matches_real() {
        for &x in &[0.3, 1.0, 2.5, 7.25, 40.0, 300.5] {
            let z = ln_gamma_complex(Complex64::new(x, 0.0));
            assert_relative_eq!(z.re, ln_gamma(x), epsilon = 1e-11, max_relative = 1e-12);
        }
    }

    #[test]
    fn complex_lgamma_recurrence() {
        let z = Complex64::new(2.3, 1.7);
        let lhs = ln_gamma_complex(z + 1.0).re;
        let rhs = ln_gamma_complex(z).re + z.norm().ln();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn pair_factor_theta_one_is_square() {
        for d in 1..=50 {
            assert_relative_eq!(log_pair(d as f64, 1.0), 2.0 * (d as f64).ln(), epsilon = 1e-14);
        }
    }

    #[test]
    fn pair_factor_general_theta_matches_gamma() {
        let th = 0.37;
        for &d in &[0.37, 1.37, 5.37, 20.37] {
            let direct = ln_gamma(d + 1.0) + ln_gamma(d + th) - ln_gamma(d) - ln_gamma(d + 1.0 - th);
            assert_relative_eq!(log_pair(d, th), direct, epsilon = 1e-11);
        }
        assert_eq!(log_pair(0.2, th), f64::NEG_INFINITY);
    }

    #[test]
    fn pair_factor_theta_two() {
        // d^2 (d^2 - 1)
        for d in 2..20 {
            let d = d as f64;
            assert_relative_eq!(log_pair(d, 2.0), (d * d * (d * d - 1.0)).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn q_pair_tends_to_classical() {
        for &th in &[0.5, 1.0, 2.0, 0.7] {
            for &d in &[th, th + 1.0, th + 3.0] {
                let a = log_pair_q(d, th, 1.0 - 1e-5);
                assert!((a - log_pair(d, th)).abs() < 1e-3, "theta {th} d {d}: {a}");
            }
        }
    }

    #[test]
    fn q_pair_infinite_series_matches_finite_path() {
        // near θ = 1 through the infinite series
        let q = 0.9;
        let d = 3.0;
        let th = 1.0 + 1e-9;
        assert_relative_eq!(log_pair_q(d, th, q), log_pair_q(d, 1.0, q), epsilon = 1e-6);
    }
}
