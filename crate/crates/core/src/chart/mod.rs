//! Coordinate tensor calculus on an open subset of R^n.
//!
//! Every tensor field implements [`Field`]: a list of components evaluable
//! over any [`Scalar`]. Antisymmetric tensors store only the components with
//! strictly increasing indices, in lexicographic order. Derived fields
//! (exterior derivatives, brackets, pullbacks, ...) are lazy structs that
//! differentiate their inputs with dual numbers when evaluated.

mod ops;
mod tensor;
mod transversal;

pub use ops::*;
pub use tensor::*;
pub use transversal::*;

use crate::error::{Error, Result};
use crate::expr::{Dual, Scalar};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Scalar,
    Vector,
    OneForm,
    TwoForm,
    ThreeForm,
    Bivector,
    Trivector,
    /// A section `X + alpha` of `TM + T*M`: `n` vector then `n` form components.
    Courant,
}

impl Kind {
    /// Number of stored components on an `n`-dimensional chart.
    pub fn len(self, n: usize) -> usize {
        match self {
            Kind::Scalar => 1,
            Kind::Vector | Kind::OneForm => n,
            Kind::TwoForm | Kind::Bivector => n * n.saturating_sub(1) / 2,
            Kind::ThreeForm | Kind::Trivector => {
                n * n.saturating_sub(1) * n.saturating_sub(2) / 6
            }
            Kind::Courant => 2 * n,
        }
    }
}

/// A tensor field on an `n`-dimensional chart.
pub trait Field: Sync {
    fn dim(&self) -> usize;
    fn kind(&self) -> Kind;
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>>;
}

impl<F: Field + ?Sized> Field for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> Kind {
        (**self).kind()
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        (**self).eval(x)
    }
}

/// A smooth map between charts, evaluable over any [`Scalar`].
pub trait SmoothMap: Sync {
    fn source_dim(&self) -> usize;
    fn target_dim(&self) -> usize;
    fn apply<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>>;
}

impl<M: SmoothMap + ?Sized> SmoothMap for &M {
    fn source_dim(&self) -> usize {
        (**self).source_dim()
    }
    fn target_dim(&self) -> usize {
        (**self).target_dim()
    }
    fn apply<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        (**self).apply(x)
    }
}

/// Value and Jacobian (`target x source`) of a map at a real point.
pub fn jacobian<M: SmoothMap>(map: &M, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let xs = Dual::coords(x);
    let y = map.apply(&xs)?;
    let v = y.iter().map(|d| d.value()).collect();
    let j = DMatrix::from_fn(y.len(), x.len(), |i, a| y[i].grad(a));
    Ok((v, j))
}

/// Jacobian in generic arithmetic: returns the value and `J[i][a]`.
pub fn jacobian_generic<M: SmoothMap, T: Scalar>(
    map: &M,
    x: &[T],
) -> Result<(Vec<T>, Vec<Vec<T>>)> {
    let xs = Dual::coords(x);
    let y = map.apply(&xs)?;
    let v = y.iter().map(|d| d.value()).collect();
    let j = y
        .iter()
        .map(|d| (0..x.len()).map(|a| d.grad(a)).collect())
        .collect();
    Ok((v, j))
}

/// Domain restriction of a chart. Flows that leave it are stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Guard {
    #[default]
    None,
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl Guard {
    pub fn contains(&self, x: &[f64]) -> bool {
        if x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            Guard::None => true,
            Guard::Ball { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                d2 <= radius * radius
            }
            Guard::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub dim: usize,
    pub guard: Guard,
}

impl Chart {
    pub fn new(dim: usize) -> Result<Chart> {
        if dim == 0 {
            return Err(Error::Dimension("a chart needs dim >= 1".into()));
        }
        Ok(Chart {
            dim,
            guard: Guard::None,
        })
    }
    pub fn with_guard(mut self, guard: Guard) -> Chart {
        self.guard = guard;
        self
    }
}

/// Index of the pair `(i, j)`, `i < j`, among lexicographically ordered pairs.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// Index of the triple `(i, j, k)`, `i < j < k`, among ordered triples.
pub fn triple_index(n: usize, i: usize, j: usize, k: usize) -> usize {
    debug_assert!(i < j && j < k && k < n);
    let choose2 = |m: usize| m * m.saturating_sub(1) / 2;
    let mut idx = 0;
    for a in 0..i {
        idx += choose2(n - a - 1);
    }
    for b in i + 1..j {
        idx += n - b - 1;
    }
    idx + (k - j - 1)
}

pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

pub fn triples(n: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..n).flat_map(move |i| {
        (i + 1..n).flat_map(move |j| (j + 1..n).map(move |k| (i, j, k)))
    })
}

/// Component `(i, j)` of an antisymmetric 2-tensor stored as `i < j`.
pub fn get2<T: Scalar>(c: &[T], n: usize, i: usize, j: usize) -> T {
    use std::cmp::Ordering::*;
    match i.cmp(&j) {
        Less => c[pair_index(n, i, j)],
        Greater => -c[pair_index(n, j, i)],
        Equal => T::zero(),
    }
}

/// Component `(i, j, k)` of an antisymmetric 3-tensor stored as `i < j < k`.
pub fn get3<T: Scalar>(c: &[T], n: usize, i: usize, j: usize, k: usize) -> T {
    if i == j || j == k || i == k {
        return T::zero();
    }
    let mut idx = [i, j, k];
    let mut sign = false;
    for a in 0..3 {
        for b in 0..2 - a {
            if idx[b] > idx[b + 1] {
                idx.swap(b, b + 1);
                sign = !sign;
            }
        }
    }
    let v = c[triple_index(n, idx[0], idx[1], idx[2])];
    if sign {
        -v
    } else {
        v
    }
}

/// Dense antisymmetric matrix of a 2-tensor at a real point.
pub fn dense2(c: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| get2(c, n, i, j))
}

/// Stored components of an antisymmetric matrix (upper triangle).
pub fn pack2<T: Scalar>(m: &[Vec<T>]) -> Vec<T> {
    let n = m.len();
    pairs(n).map(|(i, j)| m[i][j]).collect()
}

/// Evaluate a field at a real point, checking the component count.
pub fn eval_at<F: Field>(f: &F, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != f.dim() {
        return Err(Error::Dimension(format!(
            "point of length {} on a {}-dimensional chart",
            x.len(),
            f.dim()
        )));
    }
    f.eval(x)
}

/// Uniform samples from the ball of the given radius around `center`
/// (rejection from the enclosing cube, deterministic in `seed`).
pub fn sample_ball(center: &[f64], radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = center.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        if v.iter().map(|a| a * a).sum::<f64>() <= 1.0 {
            out.push(v.iter().zip(center).map(|(a, c)| c + radius * a).collect());
        }
    }
    out
}
