//! Lazy differential operators. Each result is itself a [`Field`]; first
//! derivatives of the inputs are taken by evaluating them over [`Dual`]
//! numbers seeded with the coordinate directions.

use super::{get2, get3, pack2_fn, pack3, Field, Kind, SmoothMap};
use crate::error::{Error, Result};
use crate::expr::{Dual, Scalar, MAX_DIRS};

fn check_dim(n: usize) -> Result<()> {
    if n > MAX_DIRS {
        return Err(Error::Dimension(format!(
            "differentiation supports charts up to dimension {MAX_DIRS}, got {n}"
        )));
    }
    Ok(())
}

fn expect_kind<F: Field>(f: &F, kinds: &[Kind], what: &str) -> Result<()> {
    if kinds.contains(&f.kind()) {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what}: expected one of {kinds:?}, got {:?}",
            f.kind()
        )))
    }
}

fn same_dim<A: Field, B: Field>(a: &A, b: &B) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "fields on R^{} and R^{}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Exterior derivative of a function, 1-form or 2-form.
#[derive(Clone, Debug)]
pub struct ExteriorDerivative<F> {
    inner: F,
    kind: Kind,
}

pub fn exterior_derivative<F: Field>(form: F) -> Result<ExteriorDerivative<F>> {
    check_dim(form.dim())?;
    let kind = match form.kind() {
        Kind::Scalar => Kind::OneForm,
        Kind::OneForm => Kind::TwoForm,
        Kind::TwoForm => Kind::ThreeForm,
        k => {
            return Err(Error::Dimension(format!(
                "exterior derivative of {k:?} is not supported"
            )))
        }
    };
    Ok(ExteriorDerivative { inner: form, kind })
}

impl<F: Field> Field for ExteriorDerivative<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn kind(&self) -> Kind {
        self.kind
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let n = x.len();
        let c = self.inner.eval(&Dual::coords(x))?;
        Ok(match self.kind {
            Kind::OneForm => (0..n).map(|i| c[0].grad(i)).collect(),
            Kind::TwoForm => pack2_fn(n, |i, j| c[j].grad(i) - c[i].grad(j)),
            _ => {
                let d = |a: usize, i: usize, j: usize| get2(&c, n, i, j).grad(a);
                pack3(n, |i, j, k| d(i, j, k) - d(j, i, k) + d(k, i, j))
            }
        })
    }
}

/// Contraction `iota_X form` in the first slot.
#[derive(Clone, Debug)]
pub struct Interior<V, F> {
    v: V,
    form: F,
    kind: Kind,
}

pub fn interior_product<V: Field, F: Field>(v: V, form: F) -> Result<Interior<V, F>> {
    expect_kind(&v, &[Kind::Vector], "interior product")?;
    same_dim(&v, &form)?;
    let kind = match form.kind() {
        Kind::OneForm => Kind::Scalar,
        Kind::TwoForm => Kind::OneForm,
        Kind::ThreeForm => Kind::TwoForm,
        k => {
            return Err(Error::Dimension(format!(
                "interior product into {k:?} is not supported"
            )))
        }
    };
    Ok(Interior { v, form, kind })
}

/// Contraction of a vector into the first slot of stored form components.
pub fn contract<T: Scalar>(v: &[T], form: &[T], form_kind: Kind) -> Vec<T> {
    let n = v.len();
    match form_kind {
        Kind::OneForm => vec![(0..n).fold(T::zero(), |a, i| a + v[i] * form[i])],
        Kind::TwoForm => (0..n)
            .map(|k| (0..n).fold(T::zero(), |a, i| a + v[i] * get2(form, n, i, k)))
            .collect(),
        Kind::ThreeForm => pack2_fn(n, |j, k| {
            (0..n).fold(T::zero(), |a, i| a + v[i] * get3(form, n, i, j, k))
        }),
        k => panic!("contraction into {k:?}"),
    }
}

impl<V: Field, F: Field> Field for Interior<V, F> {
    fn dim(&self) -> usize {
        self.v.dim()
    }
    fn kind(&self) -> Kind {
        self.kind
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let v = self.v.eval(x)?;
        let f = self.form.eval(x)?;
        Ok(contract(&v, &f, self.form.kind()))
    }
}

/// Lie bracket of vector fields.
#[derive(Clone, Debug)]
pub struct LieBracket<A, B> {
    a: A,
    b: B,
}

pub fn lie_bracket<A: Field, B: Field>(a: A, b: B) -> Result<LieBracket<A, B>> {
    expect_kind(&a, &[Kind::Vector], "lie bracket")?;
    expect_kind(&b, &[Kind::Vector], "lie bracket")?;
    same_dim(&a, &b)?;
    check_dim(a.dim())?;
    Ok(LieBracket { a, b })
}

/// `[X, Y]` from dual-number evaluations of both fields.
pub fn bracket_values<T: Scalar>(xa: &[Dual<T>], xb: &[Dual<T>]) -> Vec<T> {
    let n = xa.len();
    (0..n)
        .map(|i| {
            (0..n).fold(T::zero(), |acc, j| {
                acc + xa[j].value() * xb[i].grad(j) - xb[j].value() * xa[i].grad(j)
            })
        })
        .collect()
}

impl<A: Field, B: Field> Field for LieBracket<A, B> {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn kind(&self) -> Kind {
        Kind::Vector
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let xs = Dual::coords(x);
        Ok(bracket_values(&self.a.eval(&xs)?, &self.b.eval(&xs)?))
    }
}

/// `pi^#(alpha) = pi(alpha, .)`.
#[derive(Clone, Debug)]
pub struct Sharp<P, A> {
    pi: P,
    alpha: A,
}

pub fn sharp<P: Field, A: Field>(pi: P, alpha: A) -> Result<Sharp<P, A>> {
    expect_kind(&pi, &[Kind::Bivector], "sharp")?;
    expect_kind(&alpha, &[Kind::OneForm], "sharp")?;
    same_dim(&pi, &alpha)?;
    Ok(Sharp { pi, alpha })
}

pub fn sharp_values<T: Scalar>(pi: &[T], alpha: &[T]) -> Vec<T> {
    let n = alpha.len();
    (0..n)
        .map(|j| (0..n).fold(T::zero(), |a, i| a + alpha[i] * get2(pi, n, i, j)))
        .collect()
}

impl<P: Field, A: Field> Field for Sharp<P, A> {
    fn dim(&self) -> usize {
        self.pi.dim()
    }
    fn kind(&self) -> Kind {
        Kind::Vector
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(sharp_values(&self.pi.eval(x)?, &self.alpha.eval(x)?))
    }
}

/// `a + c * b` for fields of the same kind.
#[derive(Clone, Debug)]
pub struct Sum<A, B> {
    a: A,
    b: B,
    c: f64,
}

pub fn combine<A: Field, B: Field>(a: A, b: B, c: f64) -> Result<Sum<A, B>> {
    same_dim(&a, &b)?;
    if a.kind() != b.kind() {
        return Err(Error::Dimension(format!(
            "sum of {:?} and {:?}",
            a.kind(),
            b.kind()
        )));
    }
    Ok(Sum { a, b, c })
}

pub fn add<A: Field, B: Field>(a: A, b: B) -> Result<Sum<A, B>> {
    combine(a, b, 1.0)
}

pub fn sub<A: Field, B: Field>(a: A, b: B) -> Result<Sum<A, B>> {
    combine(a, b, -1.0)
}

impl<A: Field, B: Field> Field for Sum<A, B> {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn kind(&self) -> Kind {
        self.a.kind()
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let a = self.a.eval(x)?;
        let b = self.b.eval(x)?;
        Ok(a.into_iter()
            .zip(b)
            .map(|(p, q)| p + q.scale(self.c))
            .collect())
    }
}

/// Constant multiple of a field.
#[derive(Clone, Debug)]
pub struct Scaled<A> {
    a: A,
    c: f64,
}

pub fn scaled<A: Field>(a: A, c: f64) -> Scaled<A> {
    Scaled { a, c }
}

impl<A: Field> Field for Scaled<A> {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn kind(&self) -> Kind {
        self.a.kind()
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.a.eval(x)?.into_iter().map(|v| v.scale(self.c)).collect())
    }
}

/// Lie derivative of a form by Cartan's formula `d iota_X + iota_X d`.
pub type LieDerivative<V, F> =
    Sum<ExteriorDerivative<Interior<V, F>>, Interior<V, ExteriorDerivative<F>>>;

pub fn lie_derivative<V: Field + Clone, F: Field + Clone>(
    v: V,
    form: F,
) -> Result<LieDerivative<V, F>> {
    let a = exterior_derivative(interior_product(v.clone(), form.clone())?)?;
    let b = interior_product(v, exterior_derivative(form)?)?;
    add(a, b)
}

/// Pullback of a form (or function) along a smooth map.
#[derive(Clone, Debug)]
pub struct Pullback<M, F> {
    map: M,
    form: F,
}

pub fn pullback_form<M: SmoothMap, F: Field>(map: M, form: F) -> Result<Pullback<M, F>> {
    if map.target_dim() != form.dim() {
        return Err(Error::Dimension(format!(
            "map into R^{} but form on R^{}",
            map.target_dim(),
            form.dim()
        )));
    }
    expect_kind(
        &form,
        &[Kind::Scalar, Kind::OneForm, Kind::TwoForm, Kind::ThreeForm],
        "pullback",
    )?;
    check_dim(map.source_dim())?;
    Ok(Pullback { map, form })
}

/// Pull back stored form components through a Jacobian `j[i][a]`.
pub fn pullback_values<T: Scalar>(form: &[T], kind: Kind, j: &[Vec<T>], src: usize) -> Vec<T> {
    let n = j.len();
    let col = |i: usize, a: usize| j[i][a];
    match kind {
        Kind::Scalar => form.to_vec(),
        Kind::OneForm => (0..src)
            .map(|a| (0..n).fold(T::zero(), |s, i| s + form[i] * col(i, a)))
            .collect(),
        Kind::TwoForm => pack2_fn(src, |a, b| {
            let mut s = T::zero();
            for i in 0..n {
                for k in 0..n {
                    if i != k {
                        s = s + get2(form, n, i, k) * col(i, a) * col(k, b);
                    }
                }
            }
            s
        }),
        Kind::ThreeForm => pack3(src, |a, b, c| {
            let mut s = T::zero();
            for i in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let e = get3(form, n, i, k, l);
                        if e.mag() != 0.0 {
                            s = s + e * col(i, a) * col(k, b) * col(l, c);
                        }
                    }
                }
            }
            s
        }),
        k => panic!("pullback of {k:?}"),
    }
}

impl<M: SmoothMap, F: Field> Field for Pullback<M, F> {
    fn dim(&self) -> usize {
        self.map.source_dim()
    }
    fn kind(&self) -> Kind {
        self.form.kind()
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let (y, j) = super::jacobian_generic(&self.map, x)?;
        let f = self.form.eval(&y)?;
        Ok(pullback_values(&f, self.form.kind(), &j, x.len()))
    }
}

/// The Jacobi tensor of a bivector,
/// `J^{ijk} = sum_l pi^{li} d_l pi^{jk} + pi^{lj} d_l pi^{ki} + pi^{lk} d_l pi^{ij}`.
///
/// Only `i < j < k` is computed; other index orders are read off by
/// antisymmetry, so the tensor is exactly antisymmetric.
#[derive(Clone, Debug)]
pub struct Jacobiator<P> {
    pi: P,
}

pub fn jacobiator<P: Field>(pi: P) -> Result<Jacobiator<P>> {
    expect_kind(&pi, &[Kind::Bivector], "jacobiator")?;
    check_dim(pi.dim())?;
    Ok(Jacobiator { pi })
}

impl<P: Field> Jacobiator<P> {
    /// All `n^3` entries at a point, index `(i*n + j)*n + k`.
    pub fn tensor_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        let c = self.eval(x)?;
        Ok(super::dense3_generic(&c, x.len()))
    }
    /// Largest absolute entry at a point.
    pub fn max_abs_at(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval(x)?.iter().fold(0.0, |m: f64, v| m.max(v.abs())))
    }
}

impl<P: Field> Field for Jacobiator<P> {
    fn dim(&self) -> usize {
        self.pi.dim()
    }
    fn kind(&self) -> Kind {
        Kind::Trivector
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let n = x.len();
        let c = self.pi.eval(&Dual::coords(x))?;
        let p = |i: usize, j: usize| get2(&c, n, i, j);
        Ok(pack3(n, |i, j, k| {
            (0..n).fold(T::zero(), |acc, l| {
                acc + p(l, i).value() * p(j, k).grad(l)
                    + p(l, j).value() * p(k, i).grad(l)
                    + p(l, k).value() * p(i, j).grad(l)
            })
        }))
    }
}

/// Identity map of R^n.
#[derive(Clone, Copy, Debug)]
pub struct IdentityMap(pub usize);

impl SmoothMap for IdentityMap {
    fn source_dim(&self) -> usize {
        self.0
    }
    fn target_dim(&self) -> usize {
        self.0
    }
    fn apply<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(x.to_vec())
    }
}

/// Map given by one expression per target coordinate.
#[derive(Clone, Debug)]
pub struct ExprMap {
    source: usize,
    comps: Vec<crate::expr::Expr>,
}

impl ExprMap {
    pub fn new(source: usize, comps: Vec<crate::expr::Expr>) -> Result<ExprMap> {
        if comps.iter().any(|e| e.arity() > source) {
            return Err(Error::Dimension("map component uses too many variables".into()));
        }
        Ok(ExprMap { source, comps })
    }
    pub fn parse(source: usize, src: &[&str]) -> Result<ExprMap> {
        let comps = src
            .iter()
            .map(|s| crate::expr::parse(s, source).map_err(Error::from))
            .collect::<Result<Vec<_>>>()?;
        ExprMap::new(source, comps)
    }
}

impl SmoothMap for ExprMap {
    fn source_dim(&self) -> usize {
        self.source
    }
    fn target_dim(&self) -> usize {
        self.comps.len()
    }
    fn apply<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        self.comps
            .iter()
            .map(|e| e.eval(x).map_err(Error::from))
            .collect()
    }
}
