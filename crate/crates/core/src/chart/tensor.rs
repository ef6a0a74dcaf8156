use super::{get2, get3, pair_index, pairs, triple_index, triples, Field, Kind};
use crate::error::{Error, Result};
use crate::expr::{parse, Expr, Scalar};

/// Tensor field whose stored components are expressions.
#[derive(Clone, Debug)]
pub struct ExprTensor {
    dim: usize,
    kind: Kind,
    comps: Vec<Expr>,
}

impl ExprTensor {
    pub fn new(dim: usize, kind: Kind, comps: Vec<Expr>) -> Result<ExprTensor> {
        if dim == 0 {
            return Err(Error::Dimension("tensor on a 0-dimensional chart".into()));
        }
        if comps.len() != kind.len(dim) {
            return Err(Error::Dimension(format!(
                "{kind:?} on R^{dim} has {} components, got {}",
                kind.len(dim),
                comps.len()
            )));
        }
        if let Some(e) = comps.iter().find(|e| e.arity() > dim) {
            return Err(Error::Dimension(format!(
                "component `{e}` uses a variable beyond x{dim}"
            )));
        }
        Ok(ExprTensor { dim, kind, comps })
    }
    pub fn components(&self) -> &[Expr] {
        &self.comps
    }
}

impl Field for ExprTensor {
    fn dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> Kind {
        self.kind
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        self.comps
            .iter()
            .map(|e| e.eval(x).map_err(Error::from))
            .collect()
    }
}

macro_rules! expr_field {
    ($(#[$m:meta])* $name:ident, $kind:expr) => {
        $(#[$m])*
        #[derive(Clone, Debug)]
        pub struct $name(ExprTensor);

        impl $name {
            pub const KIND: Kind = $kind;

            /// Build from the stored components.
            pub fn from_components(dim: usize, comps: Vec<Expr>) -> Result<Self> {
                ExprTensor::new(dim, $kind, comps).map($name)
            }
            pub fn zero(dim: usize) -> Self {
                $name(
                    ExprTensor::new(dim, $kind, vec![Expr::zero(); $kind.len(dim)])
                        .expect("zero tensor"),
                )
            }
            pub fn components(&self) -> &[Expr] {
                self.0.components()
            }
            pub fn tensor(&self) -> &ExprTensor {
                &self.0
            }
            pub fn is_zero(&self) -> bool {
                self.components().iter().all(Expr::is_zero)
            }
        }

        impl Field for $name {
            fn dim(&self) -> usize {
                self.0.dim
            }
            fn kind(&self) -> Kind {
                $kind
            }
            fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
                self.0.eval(x)
            }
        }
    };
}

expr_field!(ScalarField, Kind::Scalar);
expr_field!(VectorField, Kind::Vector);
expr_field!(OneForm, Kind::OneForm);
expr_field!(
    /// Stores `omega_ij` for `i < j`.
    TwoForm,
    Kind::TwoForm
);
expr_field!(
    /// Stores `eta_ijk` for `i < j < k`.
    ThreeForm,
    Kind::ThreeForm
);
expr_field!(
    /// Stores `pi^ij = pi(dx^i, dx^j)` for `i < j`.
    Bivector,
    Kind::Bivector
);

fn parse_all(src: &[&str], dim: usize) -> Result<Vec<Expr>> {
    src.iter()
        .map(|s| parse(s, dim).map_err(Error::from))
        .collect()
}

fn accumulate2(dim: usize, entries: &[(usize, usize, Expr)]) -> Result<Vec<Expr>> {
    let mut c = vec![Expr::zero(); Kind::TwoForm.len(dim)];
    for (i, j, e) in entries {
        let (i, j) = (*i, *j);
        if i >= dim || j >= dim || i == j {
            return Err(Error::Dimension(format!("bad index pair ({i}, {j}) on R^{dim}")));
        }
        if i < j {
            let k = pair_index(dim, i, j);
            c[k] = c[k].add(e);
        } else {
            let k = pair_index(dim, j, i);
            c[k] = c[k].sub(e);
        }
    }
    Ok(c)
}

fn accumulate3(dim: usize, entries: &[(usize, usize, usize, Expr)]) -> Result<Vec<Expr>> {
    let mut c = vec![Expr::zero(); Kind::ThreeForm.len(dim)];
    for (i, j, k, e) in entries {
        let mut idx = [*i, *j, *k];
        if idx.iter().any(|&a| a >= dim) || idx[0] == idx[1] || idx[1] == idx[2] || idx[0] == idx[2]
        {
            return Err(Error::Dimension(format!("bad index triple {idx:?} on R^{dim}")));
        }
        let mut odd = false;
        for a in 0..3 {
            for b in 0..2 - a {
                if idx[b] > idx[b + 1] {
                    idx.swap(b, b + 1);
                    odd = !odd;
                }
            }
        }
        let t = triple_index(dim, idx[0], idx[1], idx[2]);
        c[t] = if odd { c[t].sub(e) } else { c[t].add(e) };
    }
    Ok(c)
}

impl ScalarField {
    pub fn new(dim: usize, e: Expr) -> Result<Self> {
        Self::from_components(dim, vec![e])
    }
    pub fn parse(dim: usize, src: &str) -> Result<Self> {
        Self::new(dim, parse(src, dim)?)
    }
    pub fn expr(&self) -> &Expr {
        &self.components()[0]
    }
}

impl VectorField {
    pub fn parse(dim: usize, src: &[&str]) -> Result<Self> {
        Self::from_components(dim, parse_all(src, dim)?)
    }
    /// `sum_{i >= from} x^i d/dx^i`: the Euler field of the last
    /// `dim - from` coordinates.
    pub fn euler(dim: usize, from: usize) -> Self {
        let c = (0..dim)
            .map(|i| if i >= from { Expr::var(i) } else { Expr::zero() })
            .collect();
        Self::from_components(dim, c).expect("euler field")
    }
    /// The coordinate field `d/dx^i`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        let c = (0..dim)
            .map(|j| if j == i { Expr::one() } else { Expr::zero() })
            .collect();
        Self::from_components(dim, c).expect("coordinate field")
    }
}

impl OneForm {
    pub fn parse(dim: usize, src: &[&str]) -> Result<Self> {
        Self::from_components(dim, parse_all(src, dim)?)
    }
    /// The coordinate differential `dx^i`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        let c = (0..dim)
            .map(|j| if j == i { Expr::one() } else { Expr::zero() })
            .collect();
        Self::from_components(dim, c).expect("coordinate form")
    }
}

impl TwoForm {
    /// Sum of `e * dx^i ^ dx^j` over the entries (indices zero-based, any order).
    pub fn from_entries(dim: usize, entries: &[(usize, usize, Expr)]) -> Result<Self> {
        Self::from_components(dim, accumulate2(dim, entries)?)
    }
    pub fn parse_entries(dim: usize, entries: &[(usize, usize, &str)]) -> Result<Self> {
        let e = entries
            .iter()
            .map(|(i, j, s)| Ok((*i, *j, parse(s, dim)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(dim, &e)
    }
    /// Component `omega(d_i, d_j)`.
    pub fn component(&self, i: usize, j: usize) -> Expr {
        let n = self.dim();
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.components()[pair_index(n, i, j)].clone(),
            std::cmp::Ordering::Greater => self.components()[pair_index(n, j, i)].neg(),
            std::cmp::Ordering::Equal => Expr::zero(),
        }
    }
    /// `iota_{d_i} omega = omega(d_i, .)`.
    pub fn flat_basis(&self, i: usize) -> OneForm {
        let n = self.dim();
        OneForm::from_components(n, (0..n).map(|k| self.component(i, k)).collect())
            .expect("contraction")
    }
}

impl ThreeForm {
    pub fn from_entries(dim: usize, entries: &[(usize, usize, usize, Expr)]) -> Result<Self> {
        Self::from_components(dim, accumulate3(dim, entries)?)
    }
    pub fn parse_entries(dim: usize, entries: &[(usize, usize, usize, &str)]) -> Result<Self> {
        let e = entries
            .iter()
            .map(|(i, j, k, s)| Ok((*i, *j, *k, parse(s, dim)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(dim, &e)
    }
}

impl Bivector {
    /// Sum of `e * d_i ^ d_j` over the entries (indices zero-based, any order).
    pub fn from_entries(dim: usize, entries: &[(usize, usize, Expr)]) -> Result<Self> {
        Self::from_components(dim, accumulate2(dim, entries)?)
    }
    pub fn parse_entries(dim: usize, entries: &[(usize, usize, &str)]) -> Result<Self> {
        let e = entries
            .iter()
            .map(|(i, j, s)| Ok((*i, *j, parse(s, dim)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(dim, &e)
    }
    /// Component `pi(dx^i, dx^j)`.
    pub fn component(&self, i: usize, j: usize) -> Expr {
        let n = self.dim();
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.components()[pair_index(n, i, j)].clone(),
            std::cmp::Ordering::Greater => self.components()[pair_index(n, j, i)].neg(),
            std::cmp::Ordering::Equal => Expr::zero(),
        }
    }
    /// `pi^#(dx^i) = pi(dx^i, .)`.
    pub fn sharp_basis(&self, i: usize) -> VectorField {
        let n = self.dim();
        VectorField::from_components(n, (0..n).map(|j| self.component(i, j)).collect())
            .expect("contraction")
    }
    /// `-sum_i d/dq_i ^ d/dp^i` on R^{2k} with coordinates `(q_1, p^1, q_2, p^2, ...)`
    /// placed after `offset` leading coordinates.
    pub fn canonical(dim: usize, offset: usize) -> Self {
        let entries: Vec<_> = (0..(dim - offset) / 2)
            .map(|i| (offset + 2 * i, offset + 2 * i + 1, Expr::constant(-1.0)))
            .collect();
        Self::from_entries(dim, &entries).expect("canonical bivector")
    }
}

/// Expand stored 2-tensor components into a dense row-major matrix.
pub fn dense2_generic<T: Scalar>(c: &[T], n: usize) -> Vec<Vec<T>> {
    (0..n)
        .map(|i| (0..n).map(|j| get2(c, n, i, j)).collect())
        .collect()
}

/// Expand stored 3-tensor components into `n^3` entries, index `(i*n + j)*n + k`.
pub fn dense3_generic<T: Scalar>(c: &[T], n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out.push(get3(c, n, i, j, k));
            }
        }
    }
    out
}

/// Stored components of a totally antisymmetric 3-tensor given as a closure.
pub fn pack3<T: Scalar>(n: usize, f: impl Fn(usize, usize, usize) -> T) -> Vec<T> {
    triples(n).map(|(i, j, k)| f(i, j, k)).collect()
}

pub fn pack2_fn<T: Scalar>(n: usize, f: impl Fn(usize, usize) -> T) -> Vec<T> {
    pairs(n).map(|(i, j)| f(i, j)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_accumulate_with_sign() {
        let w = TwoForm::parse_entries(3, &[(1, 0, "2"), (0, 1, "x1")]).unwrap();
        let v: Vec<f64> = w.eval(&[5.0, 0.0, 0.0]).unwrap();
        assert_eq!(v, vec![3.0, 0.0, 0.0]);
        assert_eq!(w.component(1, 0).eval(&[5.0, 0.0, 0.0]).unwrap(), -3.0);
        let e = ThreeForm::parse_entries(3, &[(2, 0, 1, "1")]).unwrap();
        assert_eq!(e.eval(&[0.0; 3]).unwrap(), vec![1.0]);
    }

    #[test]
    fn arity_checked() {
        let bad = VectorField::from_components(1, vec![Expr::var(1)]);
        assert!(bad.is_err());
        assert!(VectorField::parse(2, &["x1"]).is_err());
    }

    #[test]
    fn canonical_bivector_sharp() {
        let pi = Bivector::canonical(2, 0);
        let dq: Vec<f64> = pi.sharp_basis(0).eval(&[0.0, 0.0]).unwrap();
        let dp: Vec<f64> = pi.sharp_basis(1).eval(&[0.0, 0.0]).unwrap();
        assert_eq!(dq, vec![0.0, -1.0]);
        assert_eq!(dp, vec![1.0, 0.0]);
    }
}
