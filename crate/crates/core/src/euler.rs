//! Euler-like vector fields and their tubular neighbourhood embeddings.
//!
//! For `X` Euler-like along `N = {x = 0}`, the embedding `psi` with
//! `psi_* E = X` is the time-one map of the time-dependent field
//! `Z_t = (1/t) kappa_t^* (X - E)`, integrated from `t = 0`.

use crate::chart::{jacobian, Field, Kind, SmoothMap, Transversal};
use crate::error::{Error, Result};
use crate::expr::{Dual, Scalar, Taylor2};
use crate::flow::{flow_generic, lambda_t, timedep_flow, FlowConfig};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Below this `t`, `Z_t` is evaluated through its Taylor limit.
pub const T_MIN: f64 = 1e-4;

const VANISH_TOL: f64 = 1e-10;

/// Normal derivative of a section vanishing on `N`, at each given point of `N`.
///
/// Entry `(a, j)` is `d sigma_a / d x^j` at `(y, 0)`.
pub fn normal_derivative<F: Field>(
    sigma: &F,
    tr: &Transversal,
    base_points: &[Vec<f64>],
) -> Result<Vec<DMatrix<f64>>> {
    let (n, p, k) = (tr.n(), tr.p, tr.k());
    if sigma.dim() != n {
        return Err(Error::Dimension(format!(
            "section on R^{} along a transversal in R^{n}",
            sigma.dim()
        )));
    }
    if k > crate::expr::MAX_DIRS {
        return Err(Error::Dimension(format!("codimension {k} is too large")));
    }
    base_points
        .iter()
        .map(|b| {
            let pt: Vec<Dual<f64>> = (0..n)
                .map(|i| {
                    let mut d = vec![0.0; k];
                    let v = if i < p {
                        b[i]
                    } else {
                        d[i - p] = 1.0;
                        0.0
                    };
                    Dual::seed(v, &d)
                })
                .collect();
            let s = sigma.eval(&pt)?;
            let worst = s.iter().fold(0.0f64, |m, d| m.max(d.value().abs()));
            if worst > VANISH_TOL {
                return Err(Error::Precondition(format!(
                    "section does not vanish on N: |sigma| = {worst:.3e} at {b:?}"
                )));
            }
            Ok(DMatrix::from_fn(s.len(), k, |a, j| s[a].grad(j)))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerVerdict {
    pub euler_like: bool,
    /// Largest `|X|` on sampled points of `N`.
    pub vanishing: f64,
    /// Largest deviation of the normal block of `d^N X` from the identity.
    pub linear: f64,
}

/// Points of `N` used for verdicts when none are supplied.
pub fn default_base_points(tr: &Transversal) -> Vec<Vec<f64>> {
    tr.sample_base(0.3, 20, 7)
}

pub fn is_euler_like<F: Field>(x: &F, tr: &Transversal, tol: f64) -> EulerVerdict {
    is_euler_like_at(x, tr, tol, &default_base_points(tr))
}

pub fn is_euler_like_at<F: Field>(
    x: &F,
    tr: &Transversal,
    tol: f64,
    base_points: &[Vec<f64>],
) -> EulerVerdict {
    let fail = EulerVerdict {
        euler_like: false,
        vanishing: f64::INFINITY,
        linear: f64::INFINITY,
    };
    if x.dim() != tr.n() || x.kind() != Kind::Vector {
        return fail;
    }
    let (p, k) = (tr.p, tr.k());
    let mut vanishing = 0.0f64;
    let mut linear = 0.0f64;
    for b in base_points {
        let Ok(v) = x.eval(b.as_slice()) else {
            return fail;
        };
        vanishing = vanishing.max(v.iter().fold(0.0f64, |m, c| m.max(c.abs())));
    }
    if vanishing < tol {
        let Ok(ds) = normal_derivative(x, tr, base_points) else {
            return fail;
        };
        for d in ds {
            let block = d.rows(p, k).into_owned() - DMatrix::identity(k, k);
            linear = linear.max(block.amax());
        }
    } else {
        linear = f64::NAN;
    }
    EulerVerdict {
        euler_like: vanishing < tol && linear < tol,
        vanishing,
        linear,
    }
}

/// `Z_t(w)` for a field `Z` whose normal components vanish to second order
/// and leaf components to first order along `N`.
pub fn evaluate_zt<F: Field, T: Scalar>(z: &F, p: usize, t: f64, w: &[T]) -> Result<Vec<T>> {
    if t >= T_MIN {
        let pt: Vec<T> = w
            .iter()
            .enumerate()
            .map(|(i, v)| if i < p { *v } else { v.scale(t) })
            .collect();
        let v = z.eval(&pt)?;
        let (a, b) = (1.0 / t, 1.0 / (t * t));
        Ok(v.into_iter()
            .enumerate()
            .map(|(i, c)| c.scale(if i < p { a } else { b }))
            .collect())
    } else {
        let pt: Vec<Taylor2<T>> = w
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if i < p {
                    Taylor2::constant(*v)
                } else {
                    Taylor2::linear(T::zero(), *v)
                }
            })
            .collect();
        let v = z.eval(&pt)?;
        Ok(v.into_iter()
            .enumerate()
            .map(|(i, c)| {
                if i < p {
                    c.d1 + c.d2.scale(0.5 * t)
                } else {
                    c.d2.scale(0.5)
                }
            })
            .collect())
    }
}

/// Checks the vanishing orders that make `Z_t` smooth at `t = 0`.
pub fn check_zt_precondition<F: Field>(z: &F, tr: &Transversal, base_points: &[Vec<f64>]) -> Result<()> {
    let ds = normal_derivative(z, tr, base_points)?;
    for d in ds {
        let block = d.rows(tr.p, tr.k()).amax();
        if block > VANISH_TOL {
            return Err(Error::Precondition(format!(
                "normal components of Z do not vanish to second order (|d^N Z| = {block:.3e})"
            )));
        }
    }
    Ok(())
}

/// `X - E`, the field whose rescalings generate the embedding.
#[derive(Clone, Debug)]
pub struct EulerDefect<F> {
    x: F,
    p: usize,
}

impl<F: Field> Field for EulerDefect<F> {
    fn dim(&self) -> usize {
        self.x.dim()
    }
    fn kind(&self) -> Kind {
        Kind::Vector
    }
    fn eval<T: Scalar>(&self, w: &[T]) -> Result<Vec<T>> {
        let mut v = self.x.eval(w)?;
        for (i, c) in v.iter_mut().enumerate().skip(self.p) {
            *c = *c - w[i];
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainRecord {
    /// Radius of the largest sampled ball (around the origin) on which all residuals passed.
    pub radius: f64,
    pub samples: usize,
    pub max_pushforward: f64,
    pub max_equivariance: f64,
    pub max_zero_section: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearizeConfig {
    pub flow: FlowConfig,
    pub euler_tol: f64,
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    /// Pass threshold for the residuals in the domain record.
    pub tol: f64,
    /// Skip the sampled domain check (the record is then empty).
    pub check_domain: bool,
}

impl Default for LinearizeConfig {
    fn default() -> Self {
        LinearizeConfig {
            flow: FlowConfig::default(),
            euler_tol: 1e-8,
            radius: 0.3,
            samples: 100,
            seed: 0,
            tol: 1e-6,
            check_domain: true,
        }
    }
}

/// Tubular neighbourhood embedding `psi` of the normal bundle with `psi_* E = X`.
#[derive(Clone, Debug)]
pub struct TubularEmbedding<F> {
    pub transversal: Transversal,
    pub generator: F,
    defect: EulerDefect<F>,
    pub cfg: FlowConfig,
    pub domain: Option<DomainRecord>,
}

/// Builds the embedding of an Euler-like field.
pub fn linearize<F: Field + Clone>(
    x: &F,
    tr: &Transversal,
    cfg: &LinearizeConfig,
) -> Result<TubularEmbedding<F>> {
    let verdict = is_euler_like(x, tr, cfg.euler_tol);
    if !verdict.euler_like {
        return Err(Error::Precondition(format!(
            "vector field is not Euler-like along N (|X| on N = {:.3e}, linear part defect = {:.3e})",
            verdict.vanishing, verdict.linear
        )));
    }
    let mut flow = cfg.flow.clone();
    if flow.guard == Default::default() {
        flow.guard = tr.chart.guard.clone();
    }
    let mut emb = TubularEmbedding {
        transversal: tr.clone(),
        generator: x.clone(),
        defect: EulerDefect { x: x.clone(), p: tr.p },
        cfg: flow,
        domain: None,
    };
    if cfg.check_domain {
        let mut r = cfg.radius;
        for _ in 0..3 {
            let rec = emb.residuals(r, cfg.samples, cfg.seed);
            if let Ok(rec) = rec {
                if rec.max_pushforward < cfg.tol
                    && rec.max_equivariance < cfg.tol
                    && rec.max_zero_section < cfg.tol
                {
                    emb.domain = Some(rec);
                    break;
                }
            }
            r *= 0.5;
        }
        if emb.domain.is_none() {
            return Err(Error::Precondition(format!(
                "embedding residuals exceed {:.1e} on every sampled ball down to radius {:.3}",
                cfg.tol,
                cfg.radius / 4.0
            )));
        }
    }
    Ok(emb)
}

impl<F: Field> TubularEmbedding<F> {
    pub fn n(&self) -> usize {
        self.transversal.n()
    }

    /// `psi(w)` in generic arithmetic.
    pub fn psi<T: Scalar>(&self, w: &[T]) -> Result<Vec<T>> {
        if w.len() != self.n() {
            return Err(Error::Dimension(format!(
                "point of length {} for an embedding of R^{}",
                w.len(),
                self.n()
            )));
        }
        let p = self.transversal.p;
        timedep_flow(
            |t, v: &[T]| evaluate_zt(&self.defect, p, t, v),
            w,
            0.0,
            1.0,
            &self.cfg,
        )
    }

    pub fn psi_jacobian(&self, w: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        jacobian(self, w)
    }

    /// `|D psi(w) E(w) - X(psi(w))|`.
    pub fn pushforward_residual(&self, w: &[f64]) -> Result<f64> {
        let (m, j) = self.psi_jacobian(w)?;
        let e = DVector::from_iterator(
            self.n(),
            w.iter().enumerate().map(|(i, v)| if i < self.transversal.p { 0.0 } else { *v }),
        );
        let xm = DVector::from_vec(self.generator.eval(&m)?);
        Ok((j * e - xm).amax())
    }

    /// `|psi(kappa_t w) - lambda_t(psi(w))|`.
    pub fn equivariance_residual(&self, w: &[f64], t: f64) -> Result<f64> {
        let lhs = self.psi(&self.transversal.kappa(t, w))?;
        let rhs = lambda_t(&self.generator, &self.psi(w)?, t, &self.cfg)?;
        Ok(lhs.iter().zip(&rhs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// `|psi(y, 0) - (y, 0)|` and the deviation of the normal block of
    /// `D psi(y, 0)` from the identity.
    pub fn zero_section_residual(&self, w: &[f64]) -> Result<f64> {
        let b = self.transversal.base_point(w);
        let (m, j) = self.psi_jacobian(&b)?;
        let (p, k) = (self.transversal.p, self.transversal.k());
        let moved = m.iter().zip(&b).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        let nu = (j.view((p, p), (k, k)).into_owned() - DMatrix::identity(k, k)).amax();
        Ok(moved.max(nu))
    }

    /// Residuals of the defining properties on a sampled ball.
    pub fn residuals(&self, radius: f64, samples: usize, seed: u64) -> Result<DomainRecord> {
        let pts = self.transversal.sample(radius, samples, seed);
        let res: Vec<(f64, f64, f64)> = pts
            .par_iter()
            .map(|w| {
                let push = self.pushforward_residual(w)?;
                let mut eq = 0.0f64;
                for t in [0.25, 0.5, 0.75] {
                    eq = eq.max(self.equivariance_residual(w, t)?);
                }
                let zs = self.zero_section_residual(w)?;
                Ok((push, eq, zs))
            })
            .collect::<Result<_>>()?;
        let fold = |f: fn(&(f64, f64, f64)) -> f64| res.iter().map(f).fold(0.0f64, f64::max);
        Ok(DomainRecord {
            radius,
            samples,
            max_pushforward: fold(|r| r.0),
            max_equivariance: fold(|r| r.1),
            max_zero_section: fold(|r| r.2),
        })
    }

    /// `psi^{-1}(m)` by damped Newton iteration.
    pub fn psi_inverse(&self, m: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let target = DVector::from_column_slice(m);
        let scale = 1.0 + target.amax();
        let (mut w, v, mut jac) = self.newton_start(m)?;
        let mut r = DVector::from_vec(v) - &target;
        for _ in 0..60 {
            if r.amax() <= 1e-13 * scale {
                return Ok(w.as_slice().to_vec());
            }
            let Some(delta) = jac.clone().lu().solve(&r) else {
                return Err(Error::Singular);
            };
            let mut lam = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let cand = &w - &delta * lam;
                if let Ok((v, j)) = self.psi_jacobian(cand.as_slice()) {
                    let rc = DVector::from_vec(v) - &target;
                    if rc.norm() < r.norm() {
                        w = cand;
                        r = rc;
                        jac = j;
                        accepted = true;
                        break;
                    }
                }
                lam *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let res = r.amax();
        // Adaptive steps make psi only piecewise smooth at the 1e-12 level.
        if res <= 1e-9 * scale {
            debug_assert_eq!(w.len(), n);
            Ok(w.as_slice().to_vec())
        } else {
            Err(Error::Newton(res))
        }
    }

    /// Starting point for Newton: `m` itself, else the flow-limit inverse,
    /// else `m` pulled toward `N` until `psi` is defined.
    fn newton_start(&self, m: &[f64]) -> Result<(DVector<f64>, Vec<f64>, DMatrix<f64>)> {
        let first = self.psi_jacobian(m);
        if let Ok((v, j)) = first {
            return Ok((DVector::from_column_slice(m), v, j));
        }
        if let Ok((w, _)) = self.psi_inverse_flow(m) {
            if let Ok((v, j)) = self.psi_jacobian(&w) {
                return Ok((DVector::from_vec(w), v, j));
            }
        }
        let p = self.transversal.p;
        let mut w = m.to_vec();
        for _ in 0..30 {
            w.iter_mut().skip(p).for_each(|x| *x *= 0.5);
            if let Ok((v, j)) = self.psi_jacobian(&w) {
                return Ok((DVector::from_vec(w), v, j));
            }
        }
        first.map(|(v, j)| (DVector::from_column_slice(m), v, j))
    }

    /// `psi^{-1}(m)` from the limit of `lambda_t(m)`: the base point is
    /// `lim lambda_t(m)` and the fibre coordinate is `lim x(lambda_t(m)) / t`.
    /// Returns the estimate and the last Richardson correction.
    pub fn psi_inverse_flow(&self, m: &[f64]) -> Result<(Vec<f64>, f64)> {
        let p = self.transversal.p;
        let mut seq = Vec::new();
        let mut t = 0.05;
        for _ in 0..5 {
            let l = lambda_t(&self.generator, m, t, &self.cfg).map_err(|e| {
                Error::Precondition(format!("lambda_t(m) has no limit on N: {e}"))
            })?;
            seq.push(
                l.iter()
                    .enumerate()
                    .map(|(i, v)| if i < p { *v } else { v / t })
                    .collect(),
            );
            t *= 0.5;
        }
        Ok(richardson(&seq))
    }

    /// Second construction of `psi` from the equivariance alone:
    /// `psi(w) = lim_{t -> 0} lambda_t^{-1}(kappa_t w)`.
    pub fn psi_direct(&self, w: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut seq = Vec::new();
        let mut t = 0.125;
        for _ in 0..5 {
            let start = self.transversal.kappa(t, w);
            let v = flow_generic(&self.generator, &start, -t.ln(), &self.cfg)?.finish()?;
            seq.push(v);
            t *= 0.5;
        }
        Ok(richardson(&seq))
    }
}

impl<F: Field> SmoothMap for TubularEmbedding<F> {
    fn source_dim(&self) -> usize {
        self.n()
    }
    fn target_dim(&self) -> usize {
        self.n()
    }
    fn apply<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        self.psi(x)
    }
}

/// Richardson extrapolation of a sequence with `h` halving at each entry and
/// an error expansion in integer powers of `h`.
pub fn richardson(seq: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let mut table: Vec<Vec<f64>> = seq.to_vec();
    let mut last_change = f64::INFINITY;
    let mut best = table.last().cloned().unwrap_or_default();
    for order in 1..seq.len() {
        let f = 2f64.powi(order as i32);
        let next: Vec<Vec<f64>> = table
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| (f * a - b) / (f - 1.0)).collect())
            .collect();
        let cand = next.last().unwrap().clone();
        let change = cand.iter().zip(&best).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if order > 1 && change > last_change {
            // Rounding now dominates.
            break;
        }
        last_change = change;
        best = cand;
        table = next;
    }
    (best, last_change)
}

/// Tangent lift `X_T(m, v) = (X(m), DX(m) v)` on the doubled chart, in
/// coordinates `(y, dy, x, dx)` so that `TN = {x = 0, dx = 0}`.
#[derive(Clone, Debug)]
pub struct TangentLift<F> {
    pub field: F,
    pub p: usize,
}

impl<F: Field> TangentLift<F> {
    pub fn new(field: F, tr: &Transversal) -> Result<(TangentLift<F>, Transversal)> {
        let n = field.dim();
        if n != tr.n() {
            return Err(Error::Dimension("tangent lift of a field on another chart".into()));
        }
        let lifted = Transversal::standard(2 * n, 2 * tr.p)?;
        Ok((TangentLift { field, p: tr.p }, lifted))
    }

    /// Doubled-chart coordinates of `(m, v)`.
    pub fn pack(&self, m: &[f64], v: &[f64]) -> Vec<f64> {
        let p = self.p;
        [&m[..p], &v[..p], &m[p..], &v[p..]].concat()
    }

    /// Splits doubled-chart coordinates into `(m, v)`.
    pub fn unpack(&self, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, p) = (w.len() / 2, self.p);
        let k = n - p;
        let m = [&w[..p], &w[2 * p..2 * p + k]].concat();
        let v = [&w[p..2 * p], &w[2 * p + k..]].concat();
        (m, v)
    }
}

impl<F: Field> Field for TangentLift<F> {
    fn dim(&self) -> usize {
        2 * self.field.dim()
    }
    fn kind(&self) -> Kind {
        Kind::Vector
    }
    fn eval<T: Scalar>(&self, w: &[T]) -> Result<Vec<T>> {
        let n = self.field.dim();
        let (p, k) = (self.p, n - self.p);
        let idx_m = |i: usize| if i < p { i } else { 2 * p + (i - p) };
        let idx_v = |i: usize| if i < p { p + i } else { 2 * p + k + (i - p) };
        let pt: Vec<Dual<T>> = (0..n).map(|i| Dual::seed(w[idx_m(i)], &[w[idx_v(i)]])).collect();
        let x = self.field.eval(&pt)?;
        let mut out = vec![T::zero(); 2 * n];
        for i in 0..n {
            out[idx_m(i)] = x[i].value();
            out[idx_v(i)] = x[i].grad(0);
        }
        Ok(out)
    }
}
