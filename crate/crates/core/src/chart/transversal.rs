use super::{
    pair_index, pairs, sample_ball, triple_index, triples, Bivector, Chart, Field, OneForm,
    ScalarField, SmoothMap, ThreeForm, TwoForm, VectorField,
};
use crate::error::{Error, Result};
use crate::expr::{Expr, Scalar};
use nalgebra::{DMatrix, DVector};

/// Adapted chart: coordinates `(y^1..y^p, x^1..x^k)` with `N = {x = 0}`.
///
/// The normal bundle is the trivial bundle `N x R^k`, the tubular
/// projection is `(y, x) -> y`, and `kappa_t(y, x) = (y, t x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transversal {
    pub chart: Chart,
    pub p: usize,
}

impl Transversal {
    pub fn new(chart: Chart, p: usize) -> Result<Transversal> {
        if p > chart.dim {
            return Err(Error::Dimension(format!(
                "submanifold of dimension {p} in R^{}",
                chart.dim
            )));
        }
        Ok(Transversal { chart, p })
    }
    /// Adapted chart on R^n without a guard.
    pub fn standard(n: usize, p: usize) -> Result<Transversal> {
        Transversal::new(Chart::new(n)?, p)
    }
    pub fn n(&self) -> usize {
        self.chart.dim
    }
    pub fn k(&self) -> usize {
        self.chart.dim - self.p
    }
    /// The point `(y, 0)` below `w`.
    pub fn base_point<T: Scalar>(&self, w: &[T]) -> Vec<T> {
        w.iter()
            .enumerate()
            .map(|(i, v)| if i < self.p { *v } else { T::zero() })
            .collect()
    }
    pub fn kappa<T: Scalar>(&self, t: T, w: &[T]) -> Vec<T> {
        w.iter()
            .enumerate()
            .map(|(i, v)| if i < self.p { *v } else { t * *v })
            .collect()
    }
    /// Euler field of the normal coordinates.
    pub fn euler(&self) -> VectorField {
        VectorField::euler(self.n(), self.p)
    }
    /// Points of the ball of the given radius around the origin.
    pub fn sample(&self, radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
        sample_ball(&vec![0.0; self.n()], radius, count, seed)
    }
    /// Points `(y, 0)` of `N` with `|y| <= radius`.
    pub fn sample_base(&self, radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
        if self.p == 0 {
            return vec![vec![0.0; self.n()]; count.min(1)];
        }
        sample_ball(&vec![0.0; self.p], radius, count, seed)
            .into_iter()
            .map(|mut y| {
                y.resize(self.n(), 0.0);
                y
            })
            .collect()
    }
}

/// `kappa_t` as a smooth map.
#[derive(Clone, Copy, Debug)]
pub struct Kappa {
    pub n: usize,
    pub p: usize,
    pub t: f64,
}

impl SmoothMap for Kappa {
    fn source_dim(&self) -> usize {
        self.n
    }
    fn target_dim(&self) -> usize {
        self.n
    }
    fn apply<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(x.iter()
            .enumerate()
            .map(|(i, v)| if i < self.p { *v } else { v.scale(self.t) })
            .collect())
    }
}

/// `(y, x) -> (y, 0)`, the tubular projection followed by the inclusion of `N`.
#[derive(Clone, Copy, Debug)]
pub struct ZeroSectionProjection {
    pub n: usize,
    pub p: usize,
}

impl SmoothMap for ZeroSectionProjection {
    fn source_dim(&self) -> usize {
        self.n
    }
    fn target_dim(&self) -> usize {
        self.n
    }
    fn apply<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(x.iter()
            .enumerate()
            .map(|(i, v)| if i < self.p { *v } else { T::zero() })
            .collect())
    }
}

/// Affine change of coordinates `u = offset + A w` from adapted coordinates
/// `w` to the original coordinates `u`, used to move a submanifold that is an
/// affine subspace onto a coordinate subspace.
#[derive(Clone, Debug)]
pub struct AffineAdapter {
    offset: DVector<f64>,
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
}

fn lincomb(terms: impl IntoIterator<Item = (f64, Expr)>) -> Expr {
    terms
        .into_iter()
        .filter(|(c, e)| *c != 0.0 && !e.is_zero())
        .fold(Expr::zero(), |acc, (c, e)| acc.add(&e.scale(c)))
}

impl AffineAdapter {
    pub fn new(offset: Vec<f64>, matrix: DMatrix<f64>) -> Result<AffineAdapter> {
        let n = offset.len();
        if matrix.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "adapter matrix {:?} for offset of length {n}",
                matrix.shape()
            )));
        }
        let a_inv = matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Precondition("adapter matrix is singular".into()))?;
        Ok(AffineAdapter {
            offset: DVector::from_vec(offset),
            a: matrix,
            a_inv,
        })
    }
    /// Pure translation.
    pub fn shift(offset: Vec<f64>) -> AffineAdapter {
        let n = offset.len();
        AffineAdapter::new(offset, DMatrix::identity(n, n)).expect("identity")
    }
    /// Adapted coordinate `j` is original coordinate `order[j]`, shifted by `offset`.
    pub fn permutation(order: &[usize], offset: Vec<f64>) -> Result<AffineAdapter> {
        let n = order.len();
        let mut a = DMatrix::zeros(n, n);
        for (j, &i) in order.iter().enumerate() {
            if i >= n {
                return Err(Error::Dimension(format!("permutation entry {i} >= {n}")));
            }
            a[(i, j)] = 1.0;
        }
        AffineAdapter::new(offset, a)
    }
    pub fn dim(&self) -> usize {
        self.offset.len()
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn to_original(&self, w: &[f64]) -> Vec<f64> {
        (&self.offset + &self.a * DVector::from_column_slice(w))
            .iter()
            .copied()
            .collect()
    }
    pub fn to_adapted(&self, u: &[f64]) -> Vec<f64> {
        (&self.a_inv * (DVector::from_column_slice(u) - &self.offset))
            .iter()
            .copied()
            .collect()
    }

    fn vars(&self) -> Vec<Expr> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let lin = lincomb((0..n).map(|j| (self.a[(i, j)], Expr::var(j))));
                Expr::constant(self.offset[i]).add(&lin)
            })
            .collect()
    }
    fn moved(&self, comps: &[Expr]) -> Vec<Expr> {
        let v = self.vars();
        comps.iter().map(|e| e.subst(&v)).collect()
    }

    pub fn scalar(&self, f: &ScalarField) -> ScalarField {
        ScalarField::new(self.dim(), f.expr().subst(&self.vars())).expect("scalar")
    }
    /// Components `A^{-1} X(offset + A w)`.
    pub fn vector(&self, x: &VectorField) -> VectorField {
        let n = self.dim();
        let c = self.moved(x.components());
        let out = (0..n)
            .map(|a| lincomb((0..n).map(|i| (self.a_inv[(a, i)], c[i].clone()))))
            .collect();
        VectorField::from_components(n, out).expect("vector")
    }
    /// Components `A^T alpha(offset + A w)`.
    pub fn one_form(&self, alpha: &OneForm) -> OneForm {
        let n = self.dim();
        let c = self.moved(alpha.components());
        let out = (0..n)
            .map(|a| lincomb((0..n).map(|i| (self.a[(i, a)], c[i].clone()))))
            .collect();
        OneForm::from_components(n, out).expect("one-form")
    }
    pub fn two_form(&self, w: &TwoForm) -> TwoForm {
        let n = self.dim();
        let c = self.moved(w.components());
        let comp = |i: usize, j: usize| -> (f64, Expr) {
            match i.cmp(&j) {
                std::cmp::Ordering::Less => (1.0, c[pair_index(n, i, j)].clone()),
                std::cmp::Ordering::Greater => (-1.0, c[pair_index(n, j, i)].clone()),
                std::cmp::Ordering::Equal => (0.0, Expr::zero()),
            }
        };
        let out = pairs(n)
            .map(|(a, b)| {
                lincomb((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| {
                    let (s, e) = comp(i, j);
                    (s * self.a[(i, a)] * self.a[(j, b)], e)
                }))
            })
            .collect();
        TwoForm::from_components(n, out).expect("two-form")
    }
    pub fn three_form(&self, eta: &ThreeForm) -> ThreeForm {
        let n = self.dim();
        let c = self.moved(eta.components());
        let mut out = vec![Expr::zero(); c.len()];
        for (a, b, d) in triples(n) {
            let mut terms = Vec::new();
            for (i, j, k) in triples(n) {
                let e = &c[triple_index(n, i, j, k)];
                if e.is_zero() {
                    continue;
                }
                // Sum over the 6 orderings of (i, j, k) with signs.
                let perms = [
                    (i, j, k, 1.0),
                    (j, k, i, 1.0),
                    (k, i, j, 1.0),
                    (j, i, k, -1.0),
                    (i, k, j, -1.0),
                    (k, j, i, -1.0),
                ];
                let coef: f64 = perms
                    .iter()
                    .map(|&(p, q, r, s)| s * self.a[(p, a)] * self.a[(q, b)] * self.a[(r, d)])
                    .sum();
                terms.push((coef, e.clone()));
            }
            out[triple_index(n, a, b, d)] = lincomb(terms);
        }
        ThreeForm::from_components(n, out).expect("three-form")
    }
    /// Components `A^{-1} pi A^{-T}`.
    pub fn bivector(&self, pi: &Bivector) -> Bivector {
        let n = self.dim();
        let c = self.moved(pi.components());
        let comp = |i: usize, j: usize| -> (f64, Expr) {
            match i.cmp(&j) {
                std::cmp::Ordering::Less => (1.0, c[pair_index(n, i, j)].clone()),
                std::cmp::Ordering::Greater => (-1.0, c[pair_index(n, j, i)].clone()),
                std::cmp::Ordering::Equal => (0.0, Expr::zero()),
            }
        };
        let out = pairs(n)
            .map(|(a, b)| {
                lincomb((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| {
                    let (s, e) = comp(i, j);
                    (s * self.a_inv[(a, i)] * self.a_inv[(b, j)], e)
                }))
            })
            .collect();
        Bivector::from_components(n, out).expect("bivector")
    }
}

/// Check that a transversal and a field live on the same chart.
pub fn check_chart<F: Field>(tr: &Transversal, f: &F) -> Result<()> {
    if f.dim() != tr.n() {
        return Err(Error::Dimension(format!(
            "field on R^{} with transversal in R^{}",
            f.dim(),
            tr.n()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn so3_in_adapted_coordinates() {
        let pi = Bivector::parse_entries(3, &[(0, 1, "x3"), (1, 2, "x1"), (2, 0, "x2")]).unwrap();
        // adapted (z - 1, x, y)
        let ad = AffineAdapter::permutation(&[2, 0, 1], vec![0.0, 0.0, 1.0]).unwrap();
        let pw = ad.bivector(&pi);
        let w = [0.1, 0.2, 0.3];
        let v: Vec<f64> = pw.eval(&w).unwrap();
        // pi_w^{12} = w3, pi_w^{13} = -w2, pi_w^{23} = w1 + 1
        assert!((v[0] - 0.3).abs() < 1e-15);
        assert!((v[1] + 0.2).abs() < 1e-15);
        assert!((v[2] - 1.1).abs() < 1e-15);
        let back = ad.to_adapted(&ad.to_original(&w));
        assert!(back.iter().zip(&w).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn two_and_three_form_transform() {
        let ad = AffineAdapter::new(vec![0.0, 0.0, 0.0], DMatrix::from_diagonal_element(3, 3, 2.0))
            .unwrap();
        let w = TwoForm::parse_entries(3, &[(0, 1, "x3")]).unwrap();
        let v: Vec<f64> = ad.two_form(&w).eval(&[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(v, vec![8.0, 0.0, 0.0]);
        let e = ThreeForm::parse_entries(3, &[(0, 1, 2, "1")]).unwrap();
        let v: Vec<f64> = ad.three_form(&e).eval(&[0.0; 3]).unwrap();
        assert_eq!(v, vec![8.0]);
    }
}
