//! Number types that expression trees can be evaluated over.
//!
//! Besides `f64` and `Complex64`, three truncated Taylor types implement
//! [`Scalar`]: [`Jet`] (order 2, several directions), [`Dual`] (order 1,
//! several directions) and [`Taylor2`] (order 2, one direction). They nest,
//! so `Dual<Jet<f64>>` carries a first derivative of a second-order jet.

use num_complex::Complex64;
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Maximum number of seeded directions in a [`Jet`] or [`Dual`].
pub const MAX_DIRS: usize = 6;
const MAX_HESS: usize = MAX_DIRS * (MAX_DIRS + 1) / 2;

pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// True when the innermost number type is complex.
    const COMPLEX: bool;

    fn from_f64(v: f64) -> Self;
    /// `None` when `v` has a nonzero imaginary part and the type is real.
    fn from_complex(v: Complex64) -> Option<Self>;
    /// Innermost value, with all derivative data dropped.
    fn base(&self) -> Complex64;
    /// Largest modulus among all stored coefficients.
    fn mag(&self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn recip(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn scale(self, c: f64) -> Self {
        self * Self::from_f64(c)
    }
    fn re(&self) -> f64 {
        self.base().re
    }

    fn powi(self, n: i32) -> Self {
        if n < 0 {
            return self.powi(-n).recip();
        }
        let mut acc = Self::one();
        let mut b = self;
        let mut e = n as u32;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * b;
            }
            e >>= 1;
            if e > 0 {
                b = b * b;
            }
        }
        acc
    }
}

impl Scalar for f64 {
    const COMPLEX: bool = false;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn from_complex(v: Complex64) -> Option<Self> {
        (v.im == 0.0).then_some(v.re)
    }
    fn base(&self) -> Complex64 {
        Complex64::new(*self, 0.0)
    }
    fn mag(&self) -> f64 {
        self.abs()
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn recip(self) -> Self {
        1.0 / self
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

impl Scalar for Complex64 {
    const COMPLEX: bool = true;
    fn from_f64(v: f64) -> Self {
        Complex64::new(v, 0.0)
    }
    fn from_complex(v: Complex64) -> Option<Self> {
        Some(v)
    }
    fn base(&self) -> Complex64 {
        *self
    }
    fn mag(&self) -> f64 {
        self.norm()
    }
    fn exp(self) -> Self {
        Complex64::exp(self)
    }
    fn ln(self) -> Self {
        Complex64::ln(self)
    }
    fn sin(self) -> Self {
        Complex64::sin(self)
    }
    fn cos(self) -> Self {
        Complex64::cos(self)
    }
    fn sqrt(self) -> Self {
        Complex64::sqrt(self)
    }
    fn recip(self) -> Self {
        Complex64::new(1.0, 0.0) / self
    }
    fn powi(self, n: i32) -> Self {
        Complex64::powi(&self, n)
    }
}

#[inline]
fn hidx(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    b * (b + 1) / 2 + a
}

/// Value, gradient and Hessian along `k <= MAX_DIRS` seeded directions.
///
/// The Hessian is stored as its upper triangle, so it is symmetric by
/// construction.
#[derive(Clone, Copy, Debug)]
pub struct Jet<T> {
    k: usize,
    v: T,
    g: [T; MAX_DIRS],
    h: [T; MAX_HESS],
}

impl<T: Scalar> Jet<T> {
    pub fn constant(v: T) -> Self {
        Jet {
            k: 0,
            v,
            g: [T::zero(); MAX_DIRS],
            h: [T::zero(); MAX_HESS],
        }
    }

    /// A linear jet `v + sum_i d[i] e_i` over `d.len()` directions.
    pub fn seed(v: T, d: &[T]) -> Self {
        assert!(d.len() <= MAX_DIRS, "at most {MAX_DIRS} jet directions");
        let mut j = Self::constant(v);
        j.k = d.len();
        j.g[..d.len()].copy_from_slice(d);
        j
    }

    pub fn dirs(&self) -> usize {
        self.k
    }
    pub fn value(&self) -> T {
        self.v
    }
    pub fn grad(&self, i: usize) -> T {
        self.g[i]
    }
    pub fn hess(&self, i: usize, j: usize) -> T {
        self.h[hidx(i, j)]
    }
    pub fn grad_vec(&self) -> Vec<T> {
        self.g[..self.k].to_vec()
    }

    /// First partial along direction `i`, as a first-order object.
    pub fn partial(&self, i: usize) -> Dual<T> {
        let mut d = Dual::constant(self.g[i]);
        d.k = self.k;
        for j in 0..self.k {
            d.g[j] = self.h[hidx(i, j)];
        }
        d
    }

    fn chain(self, f0: T, f1: T, f2: T) -> Self {
        let mut r = Self::constant(f0);
        r.k = self.k;
        for i in 0..self.k {
            r.g[i] = f1 * self.g[i];
        }
        for j in 0..self.k {
            for i in 0..=j {
                let x = hidx(i, j);
                r.h[x] = f1 * self.h[x] + f2 * self.g[i] * self.g[j];
            }
        }
        r
    }
}

impl<T: Scalar> Add for Jet<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let k = self.k.max(o.k);
        let mut r = self;
        r.k = k;
        r.v = self.v + o.v;
        for i in 0..k {
            r.g[i] = self.g[i] + o.g[i];
        }
        for x in 0..k * (k + 1) / 2 {
            r.h[x] = self.h[x] + o.h[x];
        }
        r
    }
}

impl<T: Scalar> Sub for Jet<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let k = self.k.max(o.k);
        let mut r = self;
        r.k = k;
        r.v = self.v - o.v;
        for i in 0..k {
            r.g[i] = self.g[i] - o.g[i];
        }
        for x in 0..k * (k + 1) / 2 {
            r.h[x] = self.h[x] - o.h[x];
        }
        r
    }
}

impl<T: Scalar> Neg for Jet<T> {
    type Output = Self;
    fn neg(self) -> Self {
        let mut r = self;
        r.v = -self.v;
        for i in 0..self.k {
            r.g[i] = -self.g[i];
        }
        for x in 0..self.k * (self.k + 1) / 2 {
            r.h[x] = -self.h[x];
        }
        r
    }
}

impl<T: Scalar> Mul for Jet<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let k = self.k.max(o.k);
        let mut r = Self::constant(self.v * o.v);
        r.k = k;
        for i in 0..k {
            r.g[i] = self.v * o.g[i] + self.g[i] * o.v;
        }
        for j in 0..k {
            for i in 0..=j {
                let x = hidx(i, j);
                r.h[x] = self.v * o.h[x]
                    + self.h[x] * o.v
                    + self.g[i] * o.g[j]
                    + self.g[j] * o.g[i];
            }
        }
        r
    }
}

impl<T: Scalar> Div for Jet<T> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl<T: Scalar> Scalar for Jet<T> {
    const COMPLEX: bool = T::COMPLEX;
    fn from_f64(v: f64) -> Self {
        Self::constant(T::from_f64(v))
    }
    fn from_complex(v: Complex64) -> Option<Self> {
        T::from_complex(v).map(Self::constant)
    }
    fn base(&self) -> Complex64 {
        self.v.base()
    }
    fn mag(&self) -> f64 {
        let mut m = self.v.mag();
        for i in 0..self.k {
            m = m.max(self.g[i].mag());
        }
        for x in 0..self.k * (self.k + 1) / 2 {
            m = m.max(self.h[x].mag());
        }
        m
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }
    fn ln(self) -> Self {
        let r = self.v.recip();
        self.chain(self.v.ln(), r, -(r * r))
    }
    fn sin(self) -> Self {
        let (s, c) = (self.v.sin(), self.v.cos());
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = (self.v.sin(), self.v.cos());
        self.chain(c, -s, -c)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let d1 = s.recip().scale(0.5);
        let d2 = -(d1 / self.v).scale(0.5);
        self.chain(s, d1, d2)
    }
    fn recip(self) -> Self {
        let r = self.v.recip();
        self.chain(r, -(r * r), (r * r * r).scale(2.0))
    }
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::one(),
            1 => self,
            _ if n < 0 => self.powi(-n).recip(),
            _ => {
                let pm2 = self.v.powi(n - 2);
                let pm1 = pm2 * self.v;
                let nf = n as f64;
                self.chain(pm1 * self.v, pm1.scale(nf), pm2.scale(nf * (nf - 1.0)))
            }
        }
    }
}

/// Value and gradient along `k <= MAX_DIRS` seeded directions.
#[derive(Clone, Copy, Debug)]
pub struct Dual<T> {
    k: usize,
    v: T,
    g: [T; MAX_DIRS],
}

impl<T: Scalar> Dual<T> {
    pub fn constant(v: T) -> Self {
        Dual {
            k: 0,
            v,
            g: [T::zero(); MAX_DIRS],
        }
    }
    pub fn seed(v: T, d: &[T]) -> Self {
        assert!(d.len() <= MAX_DIRS, "at most {MAX_DIRS} dual directions");
        let mut r = Self::constant(v);
        r.k = d.len();
        r.g[..d.len()].copy_from_slice(d);
        r
    }
    /// Coordinate seeding: component `i` of `x` gets the unit gradient `e_i`.
    pub fn coords(x: &[T]) -> Vec<Self> {
        let n = x.len();
        assert!(n <= MAX_DIRS, "at most {MAX_DIRS} dual directions");
        (0..n)
            .map(|i| {
                let mut r = Self::constant(x[i]);
                r.k = n;
                r.g[i] = T::one();
                r
            })
            .collect()
    }
    pub fn value(&self) -> T {
        self.v
    }
    pub fn grad(&self, i: usize) -> T {
        if i < self.k {
            self.g[i]
        } else {
            T::zero()
        }
    }
    fn chain(self, f0: T, f1: T) -> Self {
        let mut r = Self::constant(f0);
        r.k = self.k;
        for i in 0..self.k {
            r.g[i] = f1 * self.g[i];
        }
        r
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let k = self.k.max(o.k);
        let mut r = Self::constant(self.v + o.v);
        r.k = k;
        for i in 0..k {
            r.g[i] = self.g[i] + o.g[i];
        }
        r
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let k = self.k.max(o.k);
        let mut r = Self::constant(self.v - o.v);
        r.k = k;
        for i in 0..k {
            r.g[i] = self.g[i] - o.g[i];
        }
        r
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        let mut r = Self::constant(-self.v);
        r.k = self.k;
        for i in 0..self.k {
            r.g[i] = -self.g[i];
        }
        r
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let k = self.k.max(o.k);
        let mut r = Self::constant(self.v * o.v);
        r.k = k;
        for i in 0..k {
            r.g[i] = self.v * o.g[i] + self.g[i] * o.v;
        }
        r
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    const COMPLEX: bool = T::COMPLEX;
    fn from_f64(v: f64) -> Self {
        Self::constant(T::from_f64(v))
    }
    fn from_complex(v: Complex64) -> Option<Self> {
        T::from_complex(v).map(Self::constant)
    }
    fn base(&self) -> Complex64 {
        self.v.base()
    }
    fn mag(&self) -> f64 {
        let mut m = self.v.mag();
        for i in 0..self.k {
            m = m.max(self.g[i].mag());
        }
        m
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), self.v.recip())
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, s.recip().scale(0.5))
    }
    fn recip(self) -> Self {
        let r = self.v.recip();
        self.chain(r, -(r * r))
    }
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::one(),
            1 => self,
            _ if n < 0 => self.powi(-n).recip(),
            _ => {
                let pm1 = self.v.powi(n - 1);
                self.chain(pm1 * self.v, pm1.scale(n as f64))
            }
        }
    }
}

/// Univariate Taylor data `(f, f', f'')` at a point.
#[derive(Clone, Copy, Debug)]
pub struct Taylor2<T> {
    pub d0: T,
    pub d1: T,
    pub d2: T,
}

impl<T: Scalar> Taylor2<T> {
    pub fn constant(v: T) -> Self {
        Taylor2 {
            d0: v,
            d1: T::zero(),
            d2: T::zero(),
        }
    }
    pub fn linear(v: T, slope: T) -> Self {
        Taylor2 {
            d0: v,
            d1: slope,
            d2: T::zero(),
        }
    }
    fn chain(self, f0: T, f1: T, f2: T) -> Self {
        Taylor2 {
            d0: f0,
            d1: f1 * self.d1,
            d2: f1 * self.d2 + f2 * self.d1 * self.d1,
        }
    }
}

impl<T: Scalar> Add for Taylor2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Taylor2 {
            d0: self.d0 + o.d0,
            d1: self.d1 + o.d1,
            d2: self.d2 + o.d2,
        }
    }
}

impl<T: Scalar> Sub for Taylor2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Taylor2 {
            d0: self.d0 - o.d0,
            d1: self.d1 - o.d1,
            d2: self.d2 - o.d2,
        }
    }
}

impl<T: Scalar> Neg for Taylor2<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Taylor2 {
            d0: -self.d0,
            d1: -self.d1,
            d2: -self.d2,
        }
    }
}

impl<T: Scalar> Mul for Taylor2<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Taylor2 {
            d0: self.d0 * o.d0,
            d1: self.d0 * o.d1 + self.d1 * o.d0,
            d2: self.d0 * o.d2 + (self.d1 * o.d1).scale(2.0) + self.d2 * o.d0,
        }
    }
}

impl<T: Scalar> Div for Taylor2<T> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl<T: Scalar> Scalar for Taylor2<T> {
    const COMPLEX: bool = T::COMPLEX;
    fn from_f64(v: f64) -> Self {
        Self::constant(T::from_f64(v))
    }
    fn from_complex(v: Complex64) -> Option<Self> {
        T::from_complex(v).map(Self::constant)
    }
    fn base(&self) -> Complex64 {
        self.d0.base()
    }
    fn mag(&self) -> f64 {
        self.d0.mag().max(self.d1.mag()).max(self.d2.mag())
    }
    fn exp(self) -> Self {
        let e = self.d0.exp();
        self.chain(e, e, e)
    }
    fn ln(self) -> Self {
        let r = self.d0.recip();
        self.chain(self.d0.ln(), r, -(r * r))
    }
    fn sin(self) -> Self {
        let (s, c) = (self.d0.sin(), self.d0.cos());
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = (self.d0.sin(), self.d0.cos());
        self.chain(c, -s, -c)
    }
    fn sqrt(self) -> Self {
        let s = self.d0.sqrt();
        let d1 = s.recip().scale(0.5);
        let d2 = -(d1 / self.d0).scale(0.5);
        self.chain(s, d1, d2)
    }
    fn recip(self) -> Self {
        let r = self.d0.recip();
        self.chain(r, -(r * r), (r * r * r).scale(2.0))
    }
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::one(),
            1 => self,
            _ if n < 0 => self.powi(-n).recip(),
            _ => {
                let pm2 = self.d0.powi(n - 2);
                let pm1 = pm2 * self.d0;
                let nf = n as f64;
                self.chain(pm1 * self.d0, pm1.scale(nf), pm2.scale(nf * (nf - 1.0)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_product_rule() {
        let x = Jet::seed(3.0, &[1.0, 0.0]);
        let y = Jet::seed(2.0, &[0.0, 1.0]);
        let p = x * x * y;
        assert_eq!(p.value(), 18.0);
        assert_eq!(p.grad(0), 12.0);
        assert_eq!(p.grad(1), 9.0);
        assert_eq!(p.hess(0, 0), 4.0);
        assert_eq!(p.hess(0, 1), 6.0);
        assert_eq!(p.hess(1, 0), p.hess(0, 1));
        assert_eq!(p.hess(1, 1), 0.0);
    }

    #[test]
    fn jet_quotient_and_sqrt() {
        let x = Jet::seed(4.0, &[1.0]);
        let s = x.sqrt();
        assert!((s.value() - 2.0).abs() < 1e-15);
        assert!((s.grad(0) - 0.25).abs() < 1e-15);
        assert!((s.hess(0, 0) + 1.0 / 32.0).abs() < 1e-15);
        let q = Jet::<f64>::one() / x;
        assert!((q.hess(0, 0) - 2.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn nested_dual_gives_second_derivative() {
        let x = Dual::<Dual<f64>>::seed(Dual::seed(0.5, &[1.0]), &[Dual::constant(1.0)]);
        let f = x.sin() * x;
        let second = f.grad(0).grad(0);
        let exact = 2.0 * 0.5f64.cos() - 0.5 * 0.5f64.sin();
        assert!((second - exact).abs() < 1e-14);
    }

    #[test]
    fn taylor_powers() {
        let t = Taylor2::linear(2.0, 1.0);
        let c = t.powi(3);
        assert_eq!((c.d0, c.d1, c.d2), (8.0, 12.0, 12.0));
        let r = t.powi(-1);
        assert!((r.d2 - 2.0 / 8.0).abs() < 1e-15);
    }
}
