//! Small polynomial helpers.

use crate::C64;

/// Evaluates `c[0] + c[1] x + …` at a complex point.
pub fn horner(coeffs: &[f64], x: C64) -> C64 {
    coeffs.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * x + c)
}

pub fn horner_real(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

pub fn horner_complex(coeffs: &[C64], x: C64) -> C64 {
    coeffs.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * x + c)
}

pub fn derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs.iter().enumerate().skip(1).map(|(i, &c)| c * i as f64).collect()
}

pub fn antiderivative(coeffs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0];
    out.extend(coeffs.iter().enumerate().map(|(i, &c)| c / (i + 1) as f64));
    out
}

/// s·Π(x − r_i).
pub fn root_product(scale: C64, roots: &[C64], x: C64) -> C64 {
    roots.iter().fold(scale, |acc, &r| acc * (x - r))
}

/// Degree of the polynomial after dropping trailing zeros (None for zero).
pub fn degree(coeffs: &[f64]) -> Option<usize> {
    coeffs.iter().rposition(|&c| c != 0.0)
}

/// Least-squares polynomial fit in the monomial basis (normal equations via QR).
pub fn fit(xs: &[C64], ys: &[C64], deg: usize) -> Vec<C64> {
    let m = xs.len();
    let a = nalgebra::DMatrix::from_fn(m, deg + 1, |i, j| xs[i].powu(j as u32));
    let b = nalgebra::DVector::from_column_slice(ys);
    let qr = a.qr();
    let qtb = qr.q().adjoint() * b;
    let r = qr.r();
    let sol = r.solve_upper_triangular(&qtb).unwrap_or_else(|| nalgebra::DVector::zeros(deg + 1));
    sol.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horner_and_calculus() {
        let p = [1.0, -2.0, 3.0];
        assert_eq!(horner_real(&p, 2.0), 9.0);
        assert_eq!(derivative(&p), vec![-2.0, 6.0]);
        let q = antiderivative(&p);
        assert_eq!(horner_real(&q, 1.0), 1.0 - 1.0 + 1.0);
        assert_eq!(degree(&[1.0, 0.0, 2.0, 0.0]), Some(2));
    }

    #[test]
    fn fit_recovers_quadratic() {
        let xs: Vec<C64> = (0..6).map(|i| C64::new(i as f64 * 0.7 - 1.0, 0.3 * i as f64)).collect();
        let ys: Vec<C64> = xs.iter().map(|&x| 2.0 * x * x - 3.0 * x + 0.5).collect();
        let c = fit(&xs, &ys, 2);
        assert!((c[0] - 0.5).norm() < 1e-10 && (c[1] + 3.0).norm() < 1e-10 && (c[2] - 2.0).norm() < 1e-10);
    }
}
