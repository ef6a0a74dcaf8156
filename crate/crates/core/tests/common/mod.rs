#![allow(dead_code)]

use splitting::dirac::CourantSection;
use splitting::expr::Expr;

/// Coefficients of a quadratic polynomial in `n` variables.
pub fn quad_len(n: usize) -> usize {
    1 + n + n * (n + 1) / 2
}

/// `c0 + sum c_i x_i + sum_{i <= j} c_ij x_i x_j`.
pub fn quadratic(c: &[f64], n: usize) -> Expr {
    let mut terms = vec![Expr::constant(c[0])];
    let mut k = 1;
    for i in 0..n {
        terms.push(Expr::var(i).scale(c[k]));
        k += 1;
    }
    for i in 0..n {
        for j in i..n {
            terms.push(Expr::var(i).mul(&Expr::var(j)).scale(c[k]));
            k += 1;
        }
    }
    Expr::sum(&terms)
}

/// Section of `TM + T*M` with quadratic components.
pub fn section(c: &[f64], n: usize) -> CourantSection {
    let l = quad_len(n);
    let comps = (0..2 * n).map(|i| quadratic(&c[i * l..(i + 1) * l], n)).collect();
    CourantSection::from_components(n, comps).unwrap()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
