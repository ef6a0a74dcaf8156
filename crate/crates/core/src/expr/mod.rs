//! Expression language for coefficient functions.
//!
//! Expressions are parsed from text (see [`parse`]) or assembled with the
//! builder methods on [`Expr`], and evaluated over any [`Scalar`]. Evaluating
//! over [`Jet`] gives exact first and second directional derivatives.

mod parse;
mod scalar;

pub use parse::{parse, ParseError, ParseErrorKind};
pub use scalar::{Dual, Jet, Scalar, Taylor2, MAX_DIRS};

use num_complex::Complex64;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Source position of a guarded node, when it came from parsed text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Site {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.col)
    }
}

fn at(site: &Option<Site>) -> String {
    site.map(|s| format!(" at {s}")).unwrap_or_default()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("division by zero{}", at(.0))]
    DivisionByZero(Option<Site>),
    #[error("log of non-positive value {v}{loc}", v = .1, loc = at(.0))]
    LogDomain(Option<Site>, f64),
    #[error("log of zero{}", at(.0))]
    LogZero(Option<Site>),
    #[error("sqrt of negative value {v}{loc}", v = .1, loc = at(.0))]
    SqrtDomain(Option<Site>, f64),
    #[error("non-finite value produced{}", at(.0))]
    NonFinite(Option<Site>),
    #[error("complex constant in real evaluation")]
    ComplexInRealMode,
    #[error("variable index {0} (zero-based) used with a {1}-dimensional point")]
    VariableOutOfRange(usize, usize),
    #[error("{0}")]
    Domain(String),
}

#[derive(Debug)]
pub enum Node {
    Const(Complex64),
    Var(usize),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr, Option<Site>),
    Neg(Expr),
    Pow(Expr, i32, Option<Site>),
    Exp(Expr),
    Log(Expr, Option<Site>),
    Sin(Expr),
    Cos(Expr),
    Sqrt(Expr, Option<Site>),
}

/// Immutable, cheaply clonable expression tree.
#[derive(Clone, Debug)]
pub struct Expr(Arc<Node>);

impl Expr {
    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(v: f64) -> Expr {
        Expr(Arc::new(Node::Const(Complex64::new(v, 0.0))))
    }
    pub fn complex(v: Complex64) -> Expr {
        Expr(Arc::new(Node::Const(v)))
    }
    pub fn zero() -> Expr {
        Expr::constant(0.0)
    }
    pub fn one() -> Expr {
        Expr::constant(1.0)
    }
    /// The coordinate `x{i+1}` (zero-based index).
    pub fn var(i: usize) -> Expr {
        Expr(Arc::new(Node::Var(i)))
    }

    /// Constant value, if this node is a literal.
    pub fn as_const(&self) -> Option<Complex64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }
    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(Complex64::new(0.0, 0.0))
    }
    fn is_one(&self) -> bool {
        self.as_const() == Some(Complex64::new(1.0, 0.0))
    }

    pub fn add(&self, o: &Expr) -> Expr {
        if self.is_zero() {
            return o.clone();
        }
        if o.is_zero() {
            return self.clone();
        }
        Expr(Arc::new(Node::Add(self.clone(), o.clone())))
    }
    pub fn sub(&self, o: &Expr) -> Expr {
        if o.is_zero() {
            return self.clone();
        }
        if self.is_zero() {
            return o.neg();
        }
        Expr(Arc::new(Node::Sub(self.clone(), o.clone())))
    }
    pub fn mul(&self, o: &Expr) -> Expr {
        if self.is_zero() || o.is_zero() {
            return Expr::zero();
        }
        if self.is_one() {
            return o.clone();
        }
        if o.is_one() {
            return self.clone();
        }
        Expr(Arc::new(Node::Mul(self.clone(), o.clone())))
    }
    pub fn div(&self, o: &Expr) -> Expr {
        if self.is_zero() {
            return Expr::zero();
        }
        if o.is_one() {
            return self.clone();
        }
        Expr(Arc::new(Node::Div(self.clone(), o.clone(), None)))
    }
    pub fn neg(&self) -> Expr {
        if self.is_zero() {
            return Expr::zero();
        }
        Expr(Arc::new(Node::Neg(self.clone())))
    }
    pub fn scale(&self, c: f64) -> Expr {
        Expr::constant(c).mul(self)
    }
    pub fn powi(&self, n: i32) -> Expr {
        match n {
            0 => Expr::one(),
            1 => self.clone(),
            _ => Expr(Arc::new(Node::Pow(self.clone(), n, None))),
        }
    }
    pub fn exp(&self) -> Expr {
        Expr(Arc::new(Node::Exp(self.clone())))
    }
    pub fn ln(&self) -> Expr {
        Expr(Arc::new(Node::Log(self.clone(), None)))
    }
    pub fn sin(&self) -> Expr {
        Expr(Arc::new(Node::Sin(self.clone())))
    }
    pub fn cos(&self) -> Expr {
        Expr(Arc::new(Node::Cos(self.clone())))
    }
    pub fn sqrt(&self) -> Expr {
        Expr(Arc::new(Node::Sqrt(self.clone(), None)))
    }

    pub(crate) fn from_node(n: Node) -> Expr {
        Expr(Arc::new(n))
    }

    /// Sum of a list, `0` when empty.
    pub fn sum<'a>(terms: impl IntoIterator<Item = &'a Expr>) -> Expr {
        terms.into_iter().fold(Expr::zero(), |acc, t| acc.add(t))
    }

    /// Largest variable index used, plus one.
    pub fn arity(&self) -> usize {
        match self.node() {
            Node::Const(_) => 0,
            Node::Var(i) => i + 1,
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b, _) => {
                a.arity().max(b.arity())
            }
            Node::Neg(a)
            | Node::Pow(a, _, _)
            | Node::Exp(a)
            | Node::Log(a, _)
            | Node::Sin(a)
            | Node::Cos(a)
            | Node::Sqrt(a, _) => a.arity(),
        }
    }

    /// Replace every variable `x{i+1}` by `vars[i]`.
    pub fn subst(&self, vars: &[Expr]) -> Expr {
        let rec = |e: &Expr| e.subst(vars);
        match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(i) => vars[*i].clone(),
            Node::Add(a, b) => rec(a).add(&rec(b)),
            Node::Sub(a, b) => rec(a).sub(&rec(b)),
            Node::Mul(a, b) => rec(a).mul(&rec(b)),
            Node::Div(a, b, s) => Expr::from_node(Node::Div(rec(a), rec(b), *s)),
            Node::Neg(a) => rec(a).neg(),
            Node::Pow(a, n, s) => Expr::from_node(Node::Pow(rec(a), *n, *s)),
            Node::Exp(a) => rec(a).exp(),
            Node::Log(a, s) => Expr::from_node(Node::Log(rec(a), *s)),
            Node::Sin(a) => rec(a).sin(),
            Node::Cos(a) => rec(a).cos(),
            Node::Sqrt(a, s) => Expr::from_node(Node::Sqrt(rec(a), *s)),
        }
    }

    /// Evaluate at `x`. Domain guards (division by zero, log of a
    /// non-positive real, sqrt of a negative real) are reported as errors.
    pub fn eval<T: Scalar>(&self, x: &[T]) -> Result<T, EvalError> {
        let r = self.eval_inner(x)?;
        if !r.mag().is_finite() {
            return Err(EvalError::NonFinite(None));
        }
        Ok(r)
    }

    fn eval_inner<T: Scalar>(&self, x: &[T]) -> Result<T, EvalError> {
        Ok(match self.node() {
            Node::Const(c) => T::from_complex(*c).ok_or(EvalError::ComplexInRealMode)?,
            Node::Var(i) => *x
                .get(*i)
                .ok_or(EvalError::VariableOutOfRange(*i, x.len()))?,
            Node::Add(a, b) => a.eval_inner(x)? + b.eval_inner(x)?,
            Node::Sub(a, b) => a.eval_inner(x)? - b.eval_inner(x)?,
            Node::Mul(a, b) => a.eval_inner(x)? * b.eval_inner(x)?,
            Node::Div(a, b, s) => {
                let den = b.eval_inner(x)?;
                if den.base() == Complex64::new(0.0, 0.0) {
                    return Err(EvalError::DivisionByZero(*s));
                }
                let r = a.eval_inner(x)? / den;
                if !r.mag().is_finite() {
                    return Err(EvalError::NonFinite(*s));
                }
                r
            }
            Node::Neg(a) => -a.eval_inner(x)?,
            Node::Pow(a, n, s) => {
                let b = a.eval_inner(x)?;
                if *n < 0 && b.base() == Complex64::new(0.0, 0.0) {
                    return Err(EvalError::DivisionByZero(*s));
                }
                b.powi(*n)
            }
            Node::Exp(a) => {
                let r = a.eval_inner(x)?.exp();
                if !r.mag().is_finite() {
                    return Err(EvalError::NonFinite(None));
                }
                r
            }
            Node::Log(a, s) => {
                let v = a.eval_inner(x)?;
                let b = v.base();
                if T::COMPLEX {
                    if b == Complex64::new(0.0, 0.0) {
                        return Err(EvalError::LogZero(*s));
                    }
                } else if b.re <= 0.0 {
                    return Err(EvalError::LogDomain(*s, b.re));
                }
                v.ln()
            }
            Node::Sin(a) => a.eval_inner(x)?.sin(),
            Node::Cos(a) => a.eval_inner(x)?.cos(),
            Node::Sqrt(a, s) => {
                let v = a.eval_inner(x)?;
                let b = v.base();
                if !T::COMPLEX && b.re < 0.0 {
                    return Err(EvalError::SqrtDomain(*s, b.re));
                }
                let r = v.sqrt();
                if !r.mag().is_finite() {
                    return Err(EvalError::NonFinite(*s));
                }
                r
            }
        })
    }
}

impl fmt::Display for Expr {
    /// Prints in the parser's grammar, fully parenthesized.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(c) => {
                if c.im == 0.0 {
                    if c.re < 0.0 {
                        write!(f, "(-{:?})", -c.re)
                    } else {
                        write!(f, "{:?}", c.re)
                    }
                } else {
                    write!(f, "({:?} + {:?}*i)", c.re, c.im)
                }
            }
            Node::Var(i) => write!(f, "x{}", i + 1),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Sub(a, b) => write!(f, "({a} - {b})"),
            Node::Mul(a, b) => write!(f, "({a} * {b})"),
            Node::Div(a, b, _) => write!(f, "({a} / {b})"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Pow(a, n, _) => write!(f, "pow({a}, {n})"),
            Node::Exp(a) => write!(f, "exp({a})"),
            Node::Log(a, _) => write!(f, "log({a})"),
            Node::Sin(a) => write!(f, "sin({a})"),
            Node::Cos(a) => write!(f, "cos({a})"),
            Node::Sqrt(a, _) => write!(f, "sqrt({a})"),
        }
    }
}

/// Order-2 jet of a real expression at `point`, seeded along `dirs`.
pub type JetValue = Jet<f64>;

/// Evaluate `e` at `point` as a jet along the given directions.
pub fn eval_jet(e: &Expr, point: &[f64], dirs: &[Vec<f64>]) -> Result<JetValue, EvalError> {
    let x = seed_point(point, dirs);
    e.eval(&x)
}

/// Complex-mode counterpart of [`eval_jet`].
pub fn eval_jet_complex(
    e: &Expr,
    point: &[Complex64],
    dirs: &[Vec<Complex64>],
) -> Result<Jet<Complex64>, EvalError> {
    let x = seed_point(point, dirs);
    e.eval(&x)
}

fn seed_point<T: Scalar>(point: &[T], dirs: &[Vec<T>]) -> Vec<Jet<T>> {
    assert!(dirs.len() <= MAX_DIRS, "at most {MAX_DIRS} jet directions");
    (0..point.len())
        .map(|i| {
            let d: Vec<T> = dirs.iter().map(|v| v[i]).collect();
            Jet::seed(point[i], &d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_examples() {
        let e = parse("x1*x1", 1).unwrap();
        let j = eval_jet(&e, &[3.0], &[vec![1.0]]).unwrap();
        assert_eq!((j.value(), j.grad(0), j.hess(0, 0)), (9.0, 6.0, 2.0));

        let e = parse("exp(x1)", 1).unwrap();
        let j = eval_jet(&e, &[0.0], &[vec![1.0]]).unwrap();
        assert_eq!((j.value(), j.grad(0), j.hess(0, 0)), (1.0, 1.0, 1.0));

        let e = parse("x1*x2", 2).unwrap();
        let j = eval_jet(&e, &[1.0, 2.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!((j.grad(0), j.grad(1), j.hess(0, 1)), (2.0, 1.0, 1.0));

        let e = parse("x1*x1 + sin(x2)", 2).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]).unwrap(), 0.0);

        let e = parse("x1*x2 - x2*x1", 2).unwrap();
        assert_eq!(e.eval(&[0.3, -1.7]).unwrap(), 0.0);
    }

    #[test]
    fn guards_are_errors() {
        let e = parse("1/(x1 - 1)", 1).unwrap();
        assert!(matches!(
            e.eval(&[1.0]),
            Err(EvalError::DivisionByZero(Some(Site { line: 1, col: 2 })))
        ));
        let e = parse("log(x1)", 1).unwrap();
        assert!(matches!(e.eval(&[-1.0]), Err(EvalError::LogDomain(..))));
        assert!(matches!(e.eval(&[0.0]), Err(EvalError::LogDomain(..))));
        let e = parse("sqrt(x1)", 1).unwrap();
        assert!(matches!(e.eval(&[-1.0]), Err(EvalError::SqrtDomain(..))));
        let j = Jet::seed(0.0, &[1.0]);
        assert!(matches!(e.eval(&[j]), Err(EvalError::NonFinite(_))));
        let e = parse("pow(x1, -2)", 1).unwrap();
        assert!(matches!(e.eval(&[0.0]), Err(EvalError::DivisionByZero(_))));
    }

    #[test]
    fn complex_mode() {
        let e = parse("exp(i*x1)", 1).unwrap();
        assert_eq!(e.eval(&[0.5]), Err(EvalError::ComplexInRealMode));
        let z = e.eval(&[Complex64::new(std::f64::consts::PI, 0.0)]).unwrap();
        assert!((z - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
        let e = parse("log(x1)", 1).unwrap();
        let z = e.eval(&[Complex64::new(-1.0, 0.0)]).unwrap();
        assert!((z.im - std::f64::consts::PI).abs() < 1e-15);
        let j = eval_jet_complex(
            &parse("x1*x1", 1).unwrap(),
            &[Complex64::new(0.0, 1.0)],
            &[vec![Complex64::new(1.0, 0.0)]],
        )
        .unwrap();
        assert_eq!(j.value(), Complex64::new(-1.0, 0.0));
        assert_eq!(j.grad(0), Complex64::new(0.0, 2.0));
    }

    #[test]
    fn display_round_trips() {
        let e = parse("-x1^2 + 3.5*sin(x2)/x1 - pow(x2, -3) + sqrt(log(x1))", 2).unwrap();
        let again = parse(&e.to_string(), 2).unwrap();
        let p = [1.7, 0.4];
        assert_eq!(e.eval(&p).unwrap(), again.eval(&p).unwrap());
    }

    #[test]
    fn substitution() {
        let e = parse("x1*x2 + x2", 2).unwrap();
        let s = e.subst(&[Expr::var(1), Expr::var(0).scale(2.0)]);
        assert_eq!(s.eval(&[3.0, 5.0]).unwrap(), 5.0 * 6.0 + 6.0);
    }
}
