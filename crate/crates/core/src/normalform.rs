//! Normal forms along a submanifold `N` and their numerical verifiers.
//!
//! Given a section `eps = X + alpha` of a Dirac structure `E` that vanishes
//! on `N` and has Euler-like vector part, the tubular embedding `psi` of `X`
//! identifies `psi^! E` with `(p^! i^! E)^omega`, where
//! `omega = int_0^1 tau^{-1} kappa_tau^* psi^* (d alpha + iota_X eta) dtau`.
//! Everything here is pointwise: frames, forms and bivectors are evaluated at
//! sample points of the normal bundle and compared by principal angles or
//! entrywise residuals.

use crate::chart::{
    get2, get3, pack3, pullback_values, sharp_values, triples, Bivector, Field, Kind, ScalarField,
    ThreeForm, Transversal,
};
use crate::dirac::{bfield_frame, frame_angle, pullback_frame, DiracFrame, GCSData, TwistedCourant};
use crate::error::{Error, Result};
use crate::euler::{default_base_points, is_euler_like, linearize, LinearizeConfig, TubularEmbedding};
use crate::expr::{Dual, Scalar};
use crate::linalg::{column_basis, quadrature, singular_values, solve, to_complex, CMatrix};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest condition number accepted for the conormal pairing and Darboux frames.
pub const COND_GUARD: f64 = 1e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    /// Gauss–Legendre nodes of the first pass; doubled until stable.
    pub nodes: usize,
    /// Largest accepted change under node doubling, relative to `max(1, |value|)`.
    pub tol: f64,
    pub max_nodes: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            nodes: 16,
            tol: 1e-9,
            max_nodes: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub point: Vec<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub anchor: String,
    pub max_residual: f64,
    pub tol: f64,
    pub pass: bool,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub residuals: Vec<Sample>,
}

impl Check {
    /// Passes iff every residual is finite and at most `tol`.
    pub fn new(name: &str, anchor: &str, tol: f64, residuals: Vec<Sample>) -> Check {
        let max = residuals.iter().map(|s| s.residual).fold(0.0f64, |a, r| {
            if r.is_nan() || a.is_nan() {
                f64::NAN
            } else {
                a.max(r)
            }
        });
        let pass = max.is_finite() && max <= tol;
        Check::with_verdict(name, anchor, tol, residuals, pass)
    }
    /// Passes iff some residual exceeds `tol` (negative tests).
    pub fn exceeds(name: &str, anchor: &str, tol: f64, residuals: Vec<Sample>) -> Check {
        let pass = residuals.iter().any(|s| s.residual > tol);
        Check::with_verdict(name, anchor, tol, residuals, pass)
    }
    pub fn with_verdict(name: &str, anchor: &str, tol: f64, residuals: Vec<Sample>, pass: bool) -> Check {
        let max = residuals
            .iter()
            .map(|s| s.residual)
            .fold(f64::NEG_INFINITY, |a, r| if r.is_nan() { f64::NAN } else { a.max(r) });
        Check {
            name: name.into(),
            anchor: anchor.into(),
            max_residual: if residuals.is_empty() { 0.0 } else { max },
            tol,
            pass,
            samples: residuals.len(),
            note: None,
            residuals,
        }
    }
    pub fn with_note(mut self, note: impl Into<String>) -> Check {
        self.note = Some(note.into());
        self
    }
    /// A single scalar outcome.
    pub fn scalar(name: &str, anchor: &str, tol: f64, point: Vec<f64>, residual: f64) -> Check {
        Check::new(name, anchor, tol, vec![Sample { point, residual }])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplittingReport {
    pub scenario: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub verdict: bool,
}

impl SplittingReport {
    pub fn new(scenario: &str, seed: u64) -> SplittingReport {
        SplittingReport {
            scenario: scenario.into(),
            seed,
            checks: Vec::new(),
            verdict: true,
        }
    }
    pub fn push(&mut self, c: Check) {
        self.verdict &= c.pass;
        self.checks.push(c);
    }
    pub fn extend(&mut self, cs: impl IntoIterator<Item = Check>) {
        for c in cs {
            self.push(c);
        }
    }
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Evaluates `f` at every point in parallel.
pub fn sample_residuals<F>(points: &[Vec<f64>], f: F) -> Result<Vec<Sample>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    points
        .par_iter()
        .map(|w| {
            Ok(Sample {
                point: w.clone(),
                residual: f(w)?,
            })
        })
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

// ---------------------------------------------------------------------------
// Cosymplectic transversals

/// `P_ab = pi(dx^a, dx^b)` on the conormal directions at `(y, 0)`.
pub fn conormal_pairing<T: Scalar>(pi: &Bivector, tr: &Transversal, w: &[T]) -> Result<Vec<Vec<T>>> {
    let (n, p) = (tr.n(), tr.p);
    let v = pi.eval(&tr.base_point(w))?;
    Ok((p..n)
        .map(|a| (p..n).map(|b| get2(&v, n, a, b)).collect())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosymplecticVerdict {
    pub cosymplectic: bool,
    /// Largest condition number of the conormal pairing over the points.
    pub max_condition: f64,
    pub min_singular: f64,
}

/// Nondegeneracy of `pi` on `ann(TN)` at the points `(y, 0)`.
pub fn cosymplectic_check(pi: &Bivector, tr: &Transversal, points: &[Vec<f64>], tol: f64) -> Result<CosymplecticVerdict> {
    let k = tr.k();
    let mut out = CosymplecticVerdict {
        cosymplectic: true,
        max_condition: 1.0,
        min_singular: f64::INFINITY,
    };
    if k == 0 {
        return Ok(out);
    }
    for w in points {
        let pm = conormal_pairing(pi, tr, w.as_slice())?;
        let m = DMatrix::from_fn(k, k, |a, b| pm[a][b]);
        let s = singular_values(&to_complex(&m));
        let (smax, smin) = (s[0], s[k - 1]);
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        out.max_condition = out.max_condition.max(cond);
        out.min_singular = out.min_singular.min(smin);
    }
    out.cosymplectic = out.min_singular > tol && out.max_condition <= COND_GUARD;
    Ok(out)
}

/// `alpha(y, x) = sum_j x^j mu^j(y)` with `mu^j` conormal and the normal part
/// of `pi^#(mu^j)` equal to `e_j`, i.e. `alpha_normal = P(y)^{-T} x`.
#[derive(Clone, Debug)]
pub struct CosymplecticAlpha {
    pub pi: Bivector,
    pub transversal: Transversal,
}

pub fn alpha_for_cosymplectic(pi: &Bivector, tr: &Transversal, points: &[Vec<f64>]) -> Result<CosymplecticAlpha> {
    if pi.dim() != tr.n() {
        return Err(Error::Dimension("bivector and transversal on different charts".into()));
    }
    let v = cosymplectic_check(pi, tr, points, 1e-12)?;
    if !v.cosymplectic {
        return Err(Error::Precondition(format!(
            "N is not a cosymplectic transversal (conormal pairing condition {:.3e})",
            v.max_condition
        )));
    }
    Ok(CosymplecticAlpha {
        pi: pi.clone(),
        transversal: tr.clone(),
    })
}

impl Field for CosymplecticAlpha {
    fn dim(&self) -> usize {
        self.pi.dim()
    }
    fn kind(&self) -> Kind {
        Kind::OneForm
    }
    fn eval<T: Scalar>(&self, w: &[T]) -> Result<Vec<T>> {
        let tr = &self.transversal;
        let (n, p, k) = (tr.n(), tr.p, tr.k());
        let mut out = vec![T::zero(); n];
        if k == 0 {
            return Ok(out);
        }
        let pm = conormal_pairing(&self.pi, tr, w)?;
        let pt: Vec<Vec<T>> = (0..k).map(|a| (0..k).map(|b| pm[b][a]).collect()).collect();
        let rhs: Vec<Vec<T>> = (0..k).map(|a| vec![w[p + a]]).collect();
        let mu = solve(&pt, &rhs)?;
        for a in 0..k {
            out[p + a] = mu[a][0];
        }
        Ok(out)
    }
}

/// The section `pi^#(alpha) + alpha` of `Gr(pi)`.
#[derive(Clone, Debug)]
pub struct SharpSection<P, A> {
    pub pi: P,
    pub alpha: A,
}

impl<P: Field, A: Field> Field for SharpSection<P, A> {
    fn dim(&self) -> usize {
        self.pi.dim()
    }
    fn kind(&self) -> Kind {
        Kind::Courant
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let a = self.alpha.eval(x)?;
        let mut v = sharp_values(&self.pi.eval(x)?, &a);
        v.extend(a);
        Ok(v)
    }
}

/// Vector part of a section of `TM + T*M`.
#[derive(Clone, Debug)]
pub struct VectorPart<S>(pub S);

impl<S: Field> Field for VectorPart<S> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn kind(&self) -> Kind {
        Kind::Vector
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let mut v = self.0.eval(x)?;
        v.truncate(self.dim());
        Ok(v)
    }
}

// ---------------------------------------------------------------------------
// Gauge forms

/// `tau^{-1} kappa_tau^* psi^* theta` at `w`, row-major `n x n`, with
/// `theta = d(form part) + iota_X eta` of `section`.
fn gauge_integrand<F: Field, S: Field, T: Scalar>(
    emb: &TubularEmbedding<F>,
    section: &S,
    eta: &ThreeForm,
    w: &[T],
    tau: f64,
) -> Result<Vec<T>> {
    let n = emb.n();
    let p = emb.transversal.p;
    let wt = emb.transversal.kappa(T::from_f64(tau), w);
    let m = emb.psi(&Dual::coords(&wt))?;
    let pt: Vec<T> = m.iter().map(|v| v.value()).collect();
    let th = crate::dirac::theta_matrix(section, eta, &pt)?;
    let a: Vec<Vec<T>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|c| if c < p { m[i].grad(c) } else { m[i].grad(c).scale(tau) })
                .collect()
        })
        .collect();
    // (A^T th A) / tau
    let mut tha = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for d in 0..n {
            tha[i][d] = (0..n).fold(T::zero(), |s, j| s + th[i][j] * a[j][d]);
        }
    }
    let inv = 1.0 / tau;
    let mut out = vec![T::zero(); n * n];
    for c in 0..n {
        for d in 0..n {
            out[c * n + d] = (0..n).fold(T::zero(), |s, i| s + a[i][c] * tha[i][d]).scale(inv);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuadratureStats {
    pub nodes: usize,
    pub change: f64,
}

/// `int_lo^1 tau^{-1} kappa_tau^* psi^* theta dtau` at `w`, row-major `n x n`.
pub fn gauge_form<F: Field, S: Field, T: Scalar>(
    emb: &TubularEmbedding<F>,
    section: &S,
    eta: &ThreeForm,
    w: &[T],
    lo: f64,
    cfg: &QuadratureConfig,
) -> Result<(Vec<T>, QuadratureStats)> {
    let n = emb.n();
    if lo >= 1.0 {
        return Ok((vec![T::zero(); n * n], QuadratureStats::default()));
    }
    let (v, nodes, change) = quadrature(
        |tau| gauge_integrand(emb, section, eta, w, tau),
        lo,
        1.0,
        cfg.nodes,
        cfg.tol,
        cfg.max_nodes,
    )?;
    Ok((v, QuadratureStats { nodes, change }))
}

/// One contribution `weight * int tau^{-1} kappa^* psi^* theta(section, eta)`.
#[derive(Clone, Debug)]
pub struct GaugeTerm<S> {
    pub weight: Complex64,
    pub section: S,
    pub eta: ThreeForm,
}

/// Exterior derivative of a dense two-form whose entries carry first derivatives.
fn d_dense(om: &[Dual<f64>], n: usize) -> Vec<f64> {
    let e = |i: usize, j: usize| om[i * n + j];
    pack3(n, |a, b, c| e(b, c).grad(a) - e(a, c).grad(b) + e(a, b).grad(c))
}

fn jac_rows(j: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..j.nrows()).map(|i| j.row(i).iter().copied().collect()).collect()
}

fn zero_section_jacobian(tr: &Transversal) -> DMatrix<f64> {
    let n = tr.n();
    DMatrix::from_fn(n, n, |i, j| if i == j && i < tr.p { 1.0 } else { 0.0 })
}

// ---------------------------------------------------------------------------
// Dirac normal form

/// `psi^! E` compared with `(p^! i^! E)^omega` pointwise.
#[derive(Clone, Debug)]
pub struct DiracNormalForm<S> {
    pub frame: DiracFrame,
    pub background: TwistedCourant,
    pub terms: Vec<GaugeTerm<S>>,
    pub embedding: TubularEmbedding<VectorPart<S>>,
    pub quad: QuadratureConfig,
}

/// Largest distance of the section values from the frame of `E` over the points.
pub fn membership_residual<S: Field>(e: &DiracFrame, s: &S, points: &[Vec<f64>]) -> Result<f64> {
    let mut worst = 0.0f64;
    for m in points {
        let f = e.frame_at(m)?;
        let v = crate::dirac::section_values(s, m, e.complex)?;
        let q = column_basis(&f, 1e-10);
        let v = DVector::from_vec(v);
        worst = worst.max((&v - &q * (q.adjoint() * &v)).norm());
    }
    Ok(worst)
}

/// `max |s(y, 0)|` over base points.
pub fn vanishing_residual<S: Field>(s: &S, points: &[Vec<f64>], complex: bool) -> Result<f64> {
    let mut worst = 0.0f64;
    for y in points {
        let v = crate::dirac::section_values(s, y, complex)?;
        worst = v.iter().fold(worst, |a, z| a.max(z.norm()));
    }
    Ok(worst)
}

impl<S: Field + Clone> DiracNormalForm<S> {
    /// `generator` is a real section whose vector part is `X`; `terms` give
    /// the gauge form. Preconditions on membership are the caller's.
    pub fn build(
        frame: DiracFrame,
        background: TwistedCourant,
        tr: &Transversal,
        generator: S,
        terms: Vec<GaugeTerm<S>>,
        lin: &LinearizeConfig,
        quad: &QuadratureConfig,
    ) -> Result<DiracNormalForm<S>> {
        let n = tr.n();
        if frame.dim != n || background.dim != n || generator.dim() != n {
            return Err(Error::Dimension("frame, background and section on different charts".into()));
        }
        let embedding = linearize(&VectorPart(generator), tr, lin)?;
        Ok(DiracNormalForm {
            frame,
            background,
            terms,
            embedding,
            quad: quad.clone(),
        })
    }

    pub fn transversal(&self) -> &Transversal {
        &self.embedding.transversal
    }

    pub fn n(&self) -> usize {
        self.embedding.n()
    }

    /// Radius on which the embedding was certified.
    pub fn radius(&self) -> Option<f64> {
        self.embedding.domain.as_ref().map(|d| d.radius)
    }

    /// The gauge form `int_lo^1 ...` at `w` as a complex `n x n` matrix.
    pub fn omega(&self, w: &[f64], lo: f64) -> Result<(CMatrix, QuadratureStats)> {
        let n = self.n();
        let mut out = CMatrix::zeros(n, n);
        let mut stats = QuadratureStats::default();
        for t in &self.terms {
            let (v, s) = gauge_form(&self.embedding, &t.section, &t.eta, w, lo, &self.quad)?;
            for r in 0..n {
                for c in 0..n {
                    out[(r, c)] += t.weight * v[r * n + c];
                }
            }
            stats.nodes = stats.nodes.max(s.nodes);
            stats.change = stats.change.max(s.change);
        }
        Ok((out, stats))
    }

    /// `(p^! i^! E)^omega` at `w`.
    pub fn model_frame(&self, w: &[f64]) -> Result<CMatrix> {
        let tr = self.transversal();
        let b = tr.base_point(w);
        let g = pullback_frame(&zero_section_jacobian(tr), &self.frame.frame_at(&b)?, 1e-10)?;
        let (om, _) = self.omega(w, 0.0)?;
        Ok(bfield_frame(&om, &g))
    }

    /// `psi^! E` at `w`.
    pub fn pulled_frame(&self, w: &[f64]) -> Result<CMatrix> {
        let (m, j) = self.embedding.psi_jacobian(w)?;
        pullback_frame(&j, &self.frame.frame_at(&m)?, 1e-10)
    }

    /// `(kappa_t^! psi^! E)^{omega_t}` with `omega_t = int_t^1 ...`; equals
    /// `psi^! E` for every `t`.
    pub fn family_frame(&self, w: &[f64], t: f64) -> Result<CMatrix> {
        let tr = self.transversal();
        let p = tr.p;
        let wt = tr.kappa(t, w);
        let (m, j) = self.embedding.psi_jacobian(&wt)?;
        let jk = DMatrix::from_fn(j.nrows(), j.ncols(), |r, c| if c < p { j[(r, c)] } else { t * j[(r, c)] });
        let g = pullback_frame(&jk, &self.frame.frame_at(&m)?, 1e-10)?;
        let (om, _) = self.omega(w, t)?;
        Ok(bfield_frame(&om, &g))
    }

    /// Largest principal angle between `psi^! E` and the model at `w`.
    pub fn angle(&self, w: &[f64]) -> Result<f64> {
        Ok(frame_angle(&self.pulled_frame(w)?, &self.model_frame(w)?))
    }

    /// Pairwise angles between the family frames at the given `t`.
    pub fn family_residual(&self, w: &[f64], ts: &[f64]) -> Result<f64> {
        let frames = ts
            .iter()
            .map(|&t| if t == 1.0 { self.pulled_frame(w) } else { self.family_frame(w, t) })
            .collect::<Result<Vec<_>>>()?;
        let mut worst = 0.0f64;
        for i in 0..frames.len() {
            for j in i + 1..frames.len() {
                worst = worst.max(frame_angle(&frames[i], &frames[j]));
            }
        }
        Ok(worst)
    }

    /// `|d omega - (psi^* eta - p^* i^* eta)|` at `w`, with `d omega` from
    /// first derivatives carried through the quadrature.
    pub fn closedness_residual(&self, w: &[f64]) -> Result<f64> {
        let n = self.n();
        let mut d = vec![Complex64::new(0.0, 0.0); Kind::ThreeForm.len(n)];
        for t in &self.terms {
            let (v, _) = gauge_form(&self.embedding, &t.section, &t.eta, &Dual::coords(w), 0.0, &self.quad)?;
            for (acc, x) in d.iter_mut().zip(d_dense(&v, n)) {
                *acc += t.weight * x;
            }
        }
        let eta = &self.background.eta;
        let (m, j) = self.embedding.psi_jacobian(w)?;
        let up = pullback_values(&eta.eval(&m)?, Kind::ThreeForm, &jac_rows(&j), n);
        let tr = self.transversal();
        let b = tr.base_point(w);
        let down = pullback_values(&eta.eval(&b)?, Kind::ThreeForm, &jac_rows(&zero_section_jacobian(tr)), n);
        Ok(d.iter()
            .zip(up.iter().zip(&down))
            .fold(0.0f64, |a, (x, (u, v))| a.max((x - (u - v)).norm())))
    }

    /// Residuals of the embedding itself: pushforward of the Euler field,
    /// `psi kappa_t = lambda_t psi` for `t` in {1/4, 1/2, 3/4}, and agreement
    /// of the Newton and flow-limit inverses.
    pub fn embedding_checks(&self, points: &[Vec<f64>]) -> Result<Vec<Check>> {
        embedding_checks(&self.embedding, points)
    }

    /// Closedness, angle and family checks.
    pub fn checks(&self, points: &[Vec<f64>], closed_points: &[Vec<f64>], family_points: &[Vec<f64>]) -> Result<Vec<Check>> {
        let mut out = Vec::new();
        out.push(Check::new(
            "omega_closedness",
            "gauge form: d omega = psi^* eta - p^* i^* eta",
            1e-7,
            sample_residuals(closed_points, |w| self.closedness_residual(w))?,
        ));
        out.push(Check::new(
            "dirac_normal_form",
            "Dirac normal form: psi^! E = (p^! i^! E)^omega",
            1e-6,
            sample_residuals(points, |w| self.angle(w))?,
        ));
        out.push(Check::new(
            "t_family",
            "Dirac normal form: (kappa_t^! psi^! E)^{omega_t} independent of t",
            1e-6,
            sample_residuals(family_points, |w| self.family_residual(w, &[1.0, 0.5, 0.25]))?,
        ));
        Ok(out)
    }
}

/// Pushforward, equivariance and inverse-agreement checks of an embedding.
pub fn embedding_checks<F: Field>(emb: &TubularEmbedding<F>, points: &[Vec<f64>]) -> Result<Vec<Check>> {
    let push = sample_residuals(points, |w| emb.pushforward_residual(w))?;
    let equi = sample_residuals(points, |w| {
        let mut r = 0.0f64;
        for t in [0.25, 0.5, 0.75] {
            r = r.max(emb.equivariance_residual(w, t)?);
        }
        Ok(r)
    })?;
    let inv = sample_residuals(points, |w| {
        let m = emb.psi(w)?;
        let a = emb.psi_inverse(&m)?;
        let (b, _) = emb.psi_inverse_flow(&m)?;
        Ok(max_abs_diff(&a, &b))
    })?;
    Ok(vec![
        Check::new("pushforward", "linearization: T psi(E) = X o psi", 1e-6, push),
        Check::new("equivariance", "psi o kappa_t = lambda_t o psi", 1e-6, equi),
        Check::new("inverse_agreement", "Newton inverse vs flow-limit inverse", 1e-4, inv),
    ])
}

/// Dirac normal form from a section of `E` that vanishes on `N`.
pub fn dirac_normal_form<S: Field + Clone>(
    frame: &DiracFrame,
    background: &TwistedCourant,
    tr: &Transversal,
    section: S,
    lin: &LinearizeConfig,
    quad: &QuadratureConfig,
) -> Result<DiracNormalForm<S>> {
    if section.kind() != Kind::Courant {
        return Err(Error::Dimension(format!("section is a {:?}", section.kind())));
    }
    let base = default_base_points(tr);
    let van = vanishing_residual(&section, &base, frame.complex)?;
    if van > 1e-10 {
        return Err(Error::Precondition(format!("section does not vanish on N (|eps| = {van:.3e})")));
    }
    let pts = tr.sample(lin.radius, 20, lin.seed);
    let off = membership_residual(frame, &section, &pts)?;
    if off > 1e-8 {
        return Err(Error::Precondition(format!(
            "section is not in the Dirac structure (distance {off:.3e})"
        )));
    }
    let terms = vec![GaugeTerm {
        weight: Complex64::new(1.0, 0.0),
        section: section.clone(),
        eta: background.eta.clone(),
    }];
    DiracNormalForm::build(frame.clone(), background.clone(), tr, section, terms, lin, quad)
}

// ---------------------------------------------------------------------------
// Poisson splitting

pub type PoissonSection = SharpSection<Bivector, CosymplecticAlpha>;

/// Splitting of a Poisson structure along a cosymplectic transversal.
#[derive(Clone, Debug)]
pub struct PoissonSplitting {
    pub pi: Bivector,
    pub alpha: CosymplecticAlpha,
    pub normal_form: DiracNormalForm<PoissonSection>,
}

/// Darboux change of the fibre coordinates at a base point.
#[derive(Clone, Debug, PartialEq)]
pub struct Darboux {
    /// `x' = D x` puts the fibre bivector into the form of `pi_0`.
    pub matrix: DMatrix<f64>,
    pub residual: f64,
    pub condition: f64,
}

/// The standard `pi_0 = -sum d_q ^ d_p` block on `R^{2k}` in `(q_1, p_1, ...)` order.
pub fn standard_block(k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k / 2 {
        m[(2 * i, 2 * i + 1)] = -1.0;
        m[(2 * i + 1, 2 * i)] = 1.0;
    }
    m
}

/// Symplectic Gram–Schmidt: `D` with `D P D^T` equal to the `pi_0` block.
pub fn darboux_matrix(p: &DMatrix<f64>) -> Result<Darboux> {
    let k = p.nrows();
    if k % 2 == 1 {
        return Err(Error::Precondition("odd-dimensional fibre has no Darboux frame".into()));
    }
    let form = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * p * b)[(0, 0)];
    let mut rest: Vec<DVector<f64>> = (0..k).map(|i| DVector::from_fn(k, |r, _| if r == i { 1.0 } else { 0.0 })).collect();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(k);
    while !rest.is_empty() {
        let u = rest.remove(0);
        let (idx, val) = rest
            .iter()
            .enumerate()
            .map(|(i, v)| (i, form(&u, v)))
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .ok_or_else(|| Error::Precondition("fibre pairing is degenerate".into()))?;
        if val.abs() < 1e-12 {
            return Err(Error::Precondition("fibre pairing is degenerate".into()));
        }
        // u^T P v = -1
        let v = rest.remove(idx) * (-1.0 / val);
        let c = form(&u, &v);
        rest = rest
            .into_iter()
            .map(|w| {
                let a = form(&v, &w) / c;
                let b = -form(&u, &w) / c;
                w + &u * a + &v * b
            })
            .collect();
        basis.push(u);
        basis.push(v);
    }
    let b = DMatrix::from_columns(&basis);
    let d = b.transpose();
    let residual = (&d * p * d.transpose() - standard_block(k)).amax();
    let s = singular_values(&to_complex(&d));
    let condition = s[0] / s[k - 1];
    Ok(Darboux {
        matrix: d,
        residual,
        condition,
    })
}

/// Bivector matrix `Pi` of a frame that is a graph: columns `(Pi^T mu; mu)`.
pub fn graph_bivector(f: &CMatrix) -> Result<DMatrix<f64>> {
    let n = f.nrows() / 2;
    let v = f.rows(0, n).into_owned();
    let mu = f.rows(n, n).into_owned();
    let s = singular_values(&mu);
    if s.last().copied().unwrap_or(0.0) < 1e-10 * s.first().copied().unwrap_or(1.0).max(1.0) {
        return Err(Error::Precondition("Dirac structure is not the graph of a bivector".into()));
    }
    let inv = mu.try_inverse().ok_or(Error::Singular)?;
    Ok((v * inv).transpose().map(|z| z.re))
}

impl PoissonSplitting {
    pub fn transversal(&self) -> &Transversal {
        self.normal_form.transversal()
    }

    /// `P(y)`, the conormal pairing at `(y, 0)`.
    pub fn pairing(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        let k = self.transversal().k();
        let pm = conormal_pairing(&self.pi, self.transversal(), w)?;
        Ok(DMatrix::from_fn(k, k, |a, b| pm[a][b]))
    }

    /// `pi_N` at `(y, 0)` from the Dirac pullback `i^! Gr(pi)`.
    pub fn transverse_poisson(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        let tr = self.transversal();
        let (n, p) = (tr.n(), tr.p);
        if p == 0 {
            return Ok(DMatrix::zeros(0, 0));
        }
        let j = DMatrix::from_fn(n, p, |i, a| if i == a { 1.0 } else { 0.0 });
        let f = pullback_frame(&j, &self.normal_form.frame.frame_at(&tr.base_point(w))?, 1e-10)?;
        graph_bivector(&f)
    }

    /// Bivector of `(p^! Gr(pi_N))^omega` at `w`.
    pub fn model_bivector(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        graph_bivector(&self.normal_form.model_frame(w)?)
    }

    /// `psi^* pi` at `w`.
    pub fn pulled_bivector(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.transversal().n();
        let (m, j) = self.normal_form.embedding.psi_jacobian(w)?;
        let pv = self.pi.eval(&m)?;
        let pim = DMatrix::from_fn(n, n, |a, b| get2(&pv, n, a, b));
        let ji = j.try_inverse().ok_or(Error::Singular)?;
        Ok(&ji * pim * ji.transpose())
    }

    /// `|T psi(pi_model) - pi o psi|` at `w`.
    pub fn pushforward_residual(&self, w: &[f64]) -> Result<f64> {
        let n = self.transversal().n();
        let model = self.model_bivector(w)?;
        let (m, j) = self.normal_form.embedding.psi_jacobian(w)?;
        let pv = self.pi.eval(&m)?;
        let pim = DMatrix::from_fn(n, n, |a, b| get2(&pv, n, a, b));
        Ok((&j * model * j.transpose() - pim).amax())
    }

    /// Largest leaf-normal entry of `psi^* pi` at `w`.
    pub fn mixed_block(&self, w: &[f64]) -> Result<f64> {
        let p = self.transversal().p;
        let b = self.pulled_bivector(w)?;
        let n = b.nrows();
        Ok((0..p).flat_map(|i| (p..n).map(move |j| (i, j))).fold(0.0f64, |a, (i, j)| a.max(b[(i, j)].abs())))
    }

    /// At `(y, 0)`: the model is `pi_N` on the leaf block and `P(y)` on the
    /// fibre block, and the Darboux change takes `P(y)` to `pi_0`. Returns the
    /// largest deviation and the Darboux condition number.
    pub fn zero_section_model(&self, w: &[f64]) -> Result<(f64, f64)> {
        let tr = self.transversal();
        let (p, k) = (tr.p, tr.k());
        let b = tr.base_point(w);
        let model = self.model_bivector(&b)?;
        let pn = self.transverse_poisson(&b)?;
        let pk = self.pairing(&b)?;
        let mut r = (model.view((0, 0), (p, p)) - &pn).amax();
        r = r.max((model.view((p, p), (k, k)) - &pk).amax());
        r = r.max(model.view((0, p), (p, k)).amax());
        let dar = if k > 0 {
            darboux_matrix(&pk)?
        } else {
            Darboux {
                matrix: DMatrix::zeros(0, 0),
                residual: 0.0,
                condition: 1.0,
            }
        };
        Ok((r.max(dar.residual), dar.condition))
    }

    /// Change of the Darboux matrix under a small move of the base point,
    /// divided by the step.
    pub fn darboux_variation(&self, w: &[f64]) -> Result<f64> {
        let tr = self.transversal();
        let b = tr.base_point(w);
        let d0 = darboux_matrix(&self.pairing(&b)?)?.matrix;
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..tr.p {
            let mut bh = b.clone();
            bh[i] += h;
            let d1 = darboux_matrix(&self.pairing(&bh)?)?.matrix;
            worst = worst.max((d1 - &d0).amax() / h);
        }
        Ok(worst)
    }

    /// `|pi_model^#(d (C o psi))|` at `w` for a Casimir `C` of `pi`.
    pub fn casimir_residual(&self, c: &ScalarField, w: &[f64]) -> Result<f64> {
        let n = self.transversal().n();
        let model = self.model_bivector(w)?;
        let m = self.normal_form.embedding.psi(&Dual::coords(w))?;
        let cv = c.eval(&m)?[0];
        let grad = DVector::from_fn(n, |i, _| cv.grad(i));
        Ok((model.transpose() * grad).amax())
    }

    /// Checks specific to the Poisson case. `casimir` is optional.
    pub fn checks(&self, points: &[Vec<f64>], base: &[Vec<f64>], casimir: Option<&ScalarField>) -> Result<Vec<Check>> {
        let tr = self.transversal();
        let (p, k) = (tr.p, tr.k());
        let mut out = vec![
            Check::new(
                "poisson_pushforward",
                "Poisson splitting: T psi(pi_model) = pi o psi",
                1e-6,
                sample_residuals(points, |w| self.pushforward_residual(w))?,
            ),
            Check::new(
                "mixed_block",
                "Poisson splitting: leaf-normal block of psi^* pi vanishes",
                1e-6,
                sample_residuals(points, |w| self.mixed_block(w))?,
            ),
        ];
        let zs = sample_residuals(base, |w| Ok(self.zero_section_model(w)?.0))?;
        out.push(Check::new(
            "darboux_model",
            "model on N is pi_N + pi_0 after a Darboux change of fibre coordinates",
            1e-8,
            zs,
        ));
        let cond = sample_residuals(base, |w| Ok(self.zero_section_model(w)?.1))?;
        out.push(Check::new("darboux_condition", "Darboux frame conditioning", COND_GUARD, cond));
        if p > 0 && k > 0 {
            out.push(Check::new(
                "darboux_smoothness",
                "Darboux frame varies smoothly along N",
                1e4,
                sample_residuals(base, |w| self.darboux_variation(w))?,
            ));
        }
        out.push(Check::new(
            "omega_boundary",
            "omega on N: kernel TN, fibre block inverse to the conormal pairing",
            1e-6,
            sample_residuals(base, |w| self.boundary_residual(w))?,
        ));
        if let Some(c) = casimir {
            out.push(Check::new(
                "casimir",
                "Casimir o psi constant along symplectic model directions",
                1e-6,
                sample_residuals(points, |w| self.casimir_residual(c, w))?,
            ));
        }
        Ok(out)
    }

    /// At `(y, 0)`: `omega(TN, .) = 0` and the fibre block equals `P(y)^{-1}`.
    pub fn boundary_residual(&self, w: &[f64]) -> Result<f64> {
        let tr = self.transversal();
        let (n, p, k) = (tr.n(), tr.p, tr.k());
        let b = tr.base_point(w);
        let (om, _) = self.normal_form.omega(&b, 0.0)?;
        let mut r = 0.0f64;
        for i in 0..p {
            for j in 0..n {
                r = r.max(om[(i, j)].norm());
            }
        }
        if k > 0 {
            let inv = self.pairing(&b)?.try_inverse().ok_or(Error::Singular)?;
            for a in 0..k {
                for c in 0..k {
                    r = r.max((om[(p + a, p + c)] - inv[(a, c)]).norm());
                }
            }
        }
        Ok(r)
    }
}

/// Splitting of `pi` along a cosymplectic transversal of even codimension,
/// using `eps = pi^#(alpha) + alpha`.
pub fn weinstein_split(pi: &Bivector, tr: &Transversal, lin: &LinearizeConfig, quad: &QuadratureConfig) -> Result<PoissonSplitting> {
    if tr.k() % 2 == 1 {
        return Err(Error::Precondition(format!(
            "codimension {} is odd; no cosymplectic transversal",
            tr.k()
        )));
    }
    let base = default_base_points(tr);
    let alpha = alpha_for_cosymplectic(pi, tr, &base)?;
    let mut check_pts = base.clone();
    check_pts.extend(tr.sample(lin.radius, 10, lin.seed));
    let frame = crate::dirac::graph_of_bivector(pi, &check_pts)?;
    let section = SharpSection {
        pi: pi.clone(),
        alpha: alpha.clone(),
    };
    let nf = dirac_normal_form(&frame, &TwistedCourant::untwisted(tr.n()), tr, section, lin, quad)?;
    Ok(PoissonSplitting {
        pi: pi.clone(),
        alpha,
        normal_form: nf,
    })
}

// ---------------------------------------------------------------------------
// Generalized complex splitting

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcsPart {
    /// `X + beta`
    Real,
    /// `X + alpha`
    Imag,
    /// `X + beta + i alpha`
    Full,
}

/// `eps = (J + i) alpha = X + beta + i alpha` and its parts.
#[derive(Clone, Debug)]
pub struct GcsSection {
    pub data: GCSData,
    pub alpha: CosymplecticAlpha,
    pub part: GcsPart,
}

impl GcsSection {
    pub fn with_part(&self, part: GcsPart) -> GcsSection {
        GcsSection { part, ..self.clone() }
    }
}

impl Field for GcsSection {
    fn dim(&self) -> usize {
        self.data.dim
    }
    fn kind(&self) -> Kind {
        Kind::Courant
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let n = self.data.dim;
        let a = self.alpha.eval(x)?;
        let j = self.data.matrix_at(x)?;
        let mut out: Vec<T> = (0..2 * n)
            .map(|r| (0..n).fold(T::zero(), |s, c| s + j[r][n + c] * a[c]))
            .collect();
        match self.part {
            GcsPart::Real => {}
            GcsPart::Imag => out[n..].copy_from_slice(&a),
            GcsPart::Full => {
                let i = T::from_complex(Complex64::new(0.0, 1.0)).ok_or_else(|| {
                    Error::Precondition("the complex section needs complex arithmetic".into())
                })?;
                for c in 0..n {
                    out[n + c] = out[n + c] + i * a[c];
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct GcsSplitting {
    pub data: GCSData,
    pub section: GcsSection,
    pub normal_form: DiracNormalForm<GcsSection>,
}

/// Splitting of a generalized complex structure along a cosymplectic
/// transversal of its induced Poisson structure.
pub fn gcs_normal_form(
    data: &GCSData,
    background: &TwistedCourant,
    tr: &Transversal,
    lin: &LinearizeConfig,
    quad: &QuadratureConfig,
) -> Result<GcsSplitting> {
    let n = data.dim;
    let pi = data.induced_poisson();
    let base = default_base_points(tr);
    let alpha = alpha_for_cosymplectic(&pi, tr, &base)?;
    let origin = vec![0.0; n];
    let frame = data.eigenframe(&origin)?;
    let pts = tr.sample(lin.radius, 20, lin.seed);
    let rep = frame.report(background, &pts)?;
    if rep.real_index.is_none_or(|s| s < 1e-8) {
        return Err(Error::Precondition("eigenbundle meets its conjugate".into()));
    }
    let section = GcsSection {
        data: data.clone(),
        alpha,
        part: GcsPart::Full,
    };
    let off = membership_residual(&frame, &section, &pts)?;
    if off > 1e-8 {
        return Err(Error::Precondition(format!(
            "eps is not in the +i eigenbundle (distance {off:.3e})"
        )));
    }
    let terms = vec![
        GaugeTerm {
            weight: Complex64::new(1.0, 0.0),
            section: section.with_part(GcsPart::Real),
            eta: background.eta.clone(),
        },
        GaugeTerm {
            weight: Complex64::new(0.0, 1.0),
            section: section.with_part(GcsPart::Imag),
            eta: ThreeForm::zero(n),
        },
    ];
    let nf = DiracNormalForm::build(
        frame,
        background.clone(),
        tr,
        section.with_part(GcsPart::Real),
        terms,
        lin,
        quad,
    )?;
    Ok(GcsSplitting {
        data: data.clone(),
        section,
        normal_form: nf,
    })
}

impl GcsSplitting {
    /// `|J eps - i eps|` at `m`.
    pub fn eigen_residual(&self, m: &[f64]) -> Result<f64> {
        let mc: Vec<Complex64> = m.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        let eps = self.section.eval(&mc)?;
        let je = self.data.apply(&mc, &eps)?;
        Ok(je.iter().zip(&eps).fold(0.0f64, |a, (x, y)| a.max((x - Complex64::new(0.0, 1.0) * y).norm())))
    }

    /// Real gauge form `gamma` (from `beta`) at `w`.
    pub fn gamma(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.data.dim;
        let t = &self.normal_form.terms[0];
        let (v, _) = gauge_form(&self.normal_form.embedding, &t.section, &t.eta, w, 0.0, &self.normal_form.quad)?;
        Ok(DMatrix::from_row_slice(n, n, &v))
    }

    /// Form `omega` (from `alpha`) at `w`.
    pub fn omega(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.data.dim;
        let t = &self.normal_form.terms[1];
        let (v, _) = gauge_form(&self.normal_form.embedding, &t.section, &t.eta, w, 0.0, &self.normal_form.quad)?;
        Ok(DMatrix::from_row_slice(n, n, &v))
    }

    pub fn checks(&self, points: &[Vec<f64>]) -> Result<Vec<Check>> {
        Ok(vec![Check::new(
            "gcs_eigen",
            "generalized complex: J eps = i eps",
            1e-8,
            sample_residuals(points, |w| {
                let m = self.normal_form.embedding.psi(w)?;
                self.eigen_residual(&m)
            })?,
        )])
    }
}

/// Entries `(i, j, k)` with `i < j < k`; used by reports on three-forms.
pub fn three_form_entries(c: &[f64], n: usize) -> Vec<(usize, usize, usize, f64)> {
    triples(n).map(|(i, j, k)| (i, j, k, get3(c, n, i, j, k))).collect()
}

/// Euler-like verdict as a report check.
pub fn euler_check<F: Field>(x: &F, tr: &Transversal, tol: f64) -> Check {
    let v = is_euler_like(x, tr, tol);
    Check::with_verdict(
        "euler_like",
        "X vanishes on N with Euler linearization",
        tol,
        vec![Sample {
            point: vec![],
            residual: v.vanishing.max(v.linear),
        }],
        v.euler_like,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::{Chart, OneForm, TwoForm, VectorField};
    use crate::dirac::CourantSection;

    fn quick() -> LinearizeConfig {
        LinearizeConfig {
            samples: 10,
            ..Default::default()
        }
    }

    fn so3_adapted() -> Bivector {
        // w = (z - 1, x, y)
        Bivector::parse_entries(3, &[(0, 1, "x3"), (0, 2, "-x2"), (1, 2, "x1 + 1")]).unwrap()
    }

    #[test]
    fn cosymplectic_examples() {
        let tr = Transversal::standard(2, 0).unwrap();
        let v = cosymplectic_check(&Bivector::canonical(2, 0), &tr, &default_base_points(&tr), 1e-12).unwrap();
        assert!(v.cosymplectic);
        let tr1 = Transversal::standard(3, 2).unwrap();
        let pi = Bivector::parse_entries(3, &[(0, 2, "1"), (1, 2, "x1")]).unwrap();
        assert!(!cosymplectic_check(&pi, &tr1, &default_base_points(&tr1), 1e-12).unwrap().cosymplectic);
        // so3 along the z-axis, in coordinates (z, x, y).
        let pi = Bivector::parse_entries(3, &[(0, 1, "x3"), (0, 2, "-x2"), (1, 2, "x1")]).unwrap();
        let tr = Transversal::standard(3, 1).unwrap();
        let at = |z: f64| cosymplectic_check(&pi, &tr, &[vec![z, 0.0, 0.0]], 1e-12).unwrap().cosymplectic;
        assert!(at(0.1) && at(-0.5) && at(2.0));
        assert!(!at(0.0));
    }

    #[test]
    fn alpha_examples() {
        let tr = Transversal::standard(2, 0).unwrap();
        let a = alpha_for_cosymplectic(&Bivector::canonical(2, 0), &tr, &default_base_points(&tr)).unwrap();
        // q dp - p dq
        assert_eq!(a.eval(&[0.3, 0.7]).unwrap(), vec![-0.7, 0.3]);
        let tr = Transversal::standard(3, 1).unwrap();
        let pi = so3_adapted();
        let a = alpha_for_cosymplectic(&pi, &tr, &default_base_points(&tr)).unwrap();
        // (y dx - x dy) / z at z = 1 + w1
        let w = [0.2, 0.3, -0.4];
        let v = a.eval(&w).unwrap();
        assert!((v[1] - (-0.4 / 1.2)).abs() < 1e-15 && (v[2] - (-0.3 / 1.2)).abs() < 1e-15 && v[0] == 0.0);
        let x = SharpSection { pi: pi.clone(), alpha: a };
        assert!(is_euler_like(&VectorPart(x), &tr, 1e-10).euler_like);
    }

    #[test]
    fn gauge_form_closed_forms() {
        // alpha = q dp - p dq, psi = id: omega = dq ^ dp.
        let tr = Transversal::standard(2, 0).unwrap();
        let pi = Bivector::canonical(2, 0);
        let s = weinstein_split(&pi, &tr, &quick(), &QuadratureConfig::default()).unwrap();
        let (om, st) = s.normal_form.omega(&[0.1, -0.2], 0.0).unwrap();
        assert!((om[(0, 1)].re - 1.0).abs() < 1e-12 && (om[(1, 0)].re + 1.0).abs() < 1e-12);
        assert!(st.change < 1e-9);
        // d alpha = dx ^ dy constant in two normal directions: omega = dx ^ dy / 2.
        let sec = CourantSection::new(&VectorField::euler(2, 0), &OneForm::parse(2, &["0", "x1"]).unwrap()).unwrap();
        let emb = linearize(&VectorPart(sec.clone()), &tr, &quick()).unwrap();
        let (v, _) = gauge_form(&emb, &sec, &ThreeForm::zero(2), &[0.2, 0.1], 0.0, &QuadratureConfig::default()).unwrap();
        assert!((v[1] - 0.5).abs() < 1e-12, "{v:?}");
    }

    #[test]
    fn darboux_frames() {
        let p = DMatrix::from_row_slice(4, 4, &[0.0, 2.0, 1.0, 0.0, -2.0, 0.0, 0.5, 3.0, -1.0, -0.5, 0.0, 1.0, 0.0, -3.0, -1.0, 0.0]);
        let d = darboux_matrix(&p).unwrap();
        assert!(d.residual < 1e-12, "{}", d.residual);
        assert!(darboux_matrix(&DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn so3_splitting() {
        let tr = Transversal::standard(3, 1).unwrap();
        let s = weinstein_split(&so3_adapted(), &tr, &quick(), &QuadratureConfig::default()).unwrap();
        let pts = tr.sample(0.3, 6, 1);
        let base = default_base_points(&tr)[..4].to_vec();
        // x^2 + y^2 + z^2 in adapted coordinates.
        let c = ScalarField::parse(3, "(x1 + 1)^2 + x2^2 + x3^2").unwrap();
        for ch in s.checks(&pts, &base, Some(&c)).unwrap() {
            assert!(ch.pass, "{}: {:e}", ch.name, ch.max_residual);
        }
        for ch in s.normal_form.checks(&pts[..3], &pts[..2], &pts[..2]).unwrap() {
            assert!(ch.pass, "{}: {:e}", ch.name, ch.max_residual);
        }
        // psi(c, x, y) = (x, y, sqrt((1 + c)^2 - x^2 - y^2)) in original coordinates.
        let w = [0.1, 0.2, -0.15];
        let m = s.normal_form.embedding.psi(&w).unwrap();
        let z = (1.1f64.powi(2) - 0.04 - 0.0225).sqrt();
        assert!((m[0] + 1.0 - z).abs() < 1e-8 && (m[1] - 0.2).abs() < 1e-8, "{m:?}");
    }

    #[test]
    fn heisenberg_splitting() {
        // pi = x d_y ^ d_z around (1, 0, 0): coordinates (x - 1, y, z).
        let pi = Bivector::parse_entries(3, &[(1, 2, "x1 + 1")]).unwrap();
        let tr = Transversal::standard(3, 1).unwrap();
        let s = weinstein_split(&pi, &tr, &quick(), &QuadratureConfig::default()).unwrap();
        let pts = tr.sample(0.3, 5, 2);
        for ch in s.checks(&pts, &default_base_points(&tr)[..3], None).unwrap() {
            assert!(ch.pass, "{}: {:e}", ch.name, ch.max_residual);
        }
        let m = s.model_bivector(&[0.2, 0.1, 0.1]).unwrap();
        assert!((m[(1, 2)] - 1.2).abs() < 1e-9);
    }

    #[test]
    fn twisted_dirac_normal_form() {
        let w = TwoForm::parse_entries(3, &[(0, 1, "exp(x3)")]).unwrap();
        let eta = ThreeForm::parse_entries(3, &[(0, 1, 2, "exp(x3)")]).unwrap();
        let e = crate::dirac::graph_of_twoform(&w, &eta, &[vec![0.0; 3]]).unwrap();
        let x = VectorField::parse(3, &["x1", "x2 + x1^2", "x3"]).unwrap();
        let sec = CourantSection::new(&x, &OneForm::zero(3)).unwrap().bfield(&w);
        let tr = Transversal::standard(3, 0).unwrap();
        let nf = dirac_normal_form(&e, &TwistedCourant::new(eta), &tr, sec, &quick(), &QuadratureConfig::default()).unwrap();
        let pts = tr.sample(0.3, 3, 4);
        for ch in nf.checks(&pts, &pts[..2], &pts[..2]).unwrap() {
            assert!(ch.pass, "{}: {:e}", ch.name, ch.max_residual);
        }
        // With the wrong twist the section is still in E but the comparison fails.
        let bad = TwistedCourant::untwisted(3);
        let sec = CourantSection::new(&x, &OneForm::zero(3)).unwrap().bfield(&w);
        let nf = dirac_normal_form(&e, &bad, &tr, sec, &quick(), &QuadratureConfig::default()).unwrap();
        assert!(nf.angle(&pts[0]).unwrap() > 1e-4);
    }

    #[test]
    fn gcs_shear() {
        let jc = vec![
            vec![crate::expr::Expr::zero(), crate::expr::Expr::constant(-1.0)],
            vec![crate::expr::Expr::one(), crate::expr::Expr::zero()],
        ];
        let cx = GCSData::complex_type(&jc).unwrap();
        let w = TwoForm::parse_entries(2, &[(0, 1, "1")]).unwrap();
        let p = Bivector::parse_entries(2, &[(0, 1, "-1")]).unwrap();
        let sym = GCSData::symplectic(&w, &p).unwrap();
        let prod = GCSData::product(&cx, &sym).unwrap();
        let b = TwoForm::parse_entries(4, &[(0, 2, "2*x1"), (1, 3, "0.5")]).unwrap();
        let j = prod.bfield(&b);
        let tr = Transversal::new(Chart::new(4).unwrap(), 2).unwrap();
        let g = gcs_normal_form(&j, &TwistedCourant::untwisted(4), &tr, &quick(), &QuadratureConfig::default()).unwrap();
        let pts = tr.sample(0.3, 4, 3);
        for w in &pts {
            assert!(g.normal_form.angle(w).unwrap() < 1e-6);
            let gam = g.gamma(w).unwrap();
            assert!((gam[(0, 2)] - 2.0 * w[0]).abs() < 1e-10 && (gam[(1, 3)] - 0.5).abs() < 1e-10, "{gam}");
            let om = g.omega(w).unwrap();
            assert!((om[(2, 3)] - 1.0).abs() < 1e-10);
        }
        for ch in g.checks(&pts).unwrap() {
            assert!(ch.pass, "{}: {:e}", ch.name, ch.max_residual);
        }
        let unsheared = gcs_normal_form(&prod, &TwistedCourant::untwisted(4), &tr, &quick(), &QuadratureConfig::default()).unwrap();
        assert!(unsheared.gamma(&pts[0]).unwrap().amax() < 1e-12);
    }
}
