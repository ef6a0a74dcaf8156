//! The twisted Courant algebra on `TM + T*M`: sections, the Dorfman
//! bracket, pairing, B-field transforms, Dirac structures as pointwise
//! frames, pullbacks, and generalized complex structures.
//!
//! Pointwise frames are `2n x n` complex matrices whose columns are
//! `(v; mu)`. B-fields act by `v + mu -> v + mu + iota_v omega`.

use crate::chart::{
    bracket_values, dense2, dense2_generic, get2, get3, jacobian, jacobiator, pack2_fn, pairs,
    Bivector, ExprTensor, exterior_derivative, Field, Kind, OneForm, SmoothMap, ThreeForm, TwoForm,
    VectorField,
};
use crate::error::{Error, Result};
use crate::expr::{Dual, Expr, Scalar};
use crate::flow::{flow, FlowConfig};
use crate::linalg::{
    column_basis, max_principal_angle, nullspace, quadrature, rank, singular_values, to_complex,
    CMatrix,
};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// A section `X + alpha`, stored as `n` vector then `n` form components.
#[derive(Clone, Debug)]
pub struct CourantSection(ExprTensor);

impl CourantSection {
    pub fn new(x: &VectorField, alpha: &OneForm) -> Result<CourantSection> {
        if x.dim() != alpha.dim() {
            return Err(Error::Dimension("vector and form parts on different charts".into()));
        }
        let mut c = x.components().to_vec();
        c.extend_from_slice(alpha.components());
        CourantSection::from_components(x.dim(), c)
    }
    pub fn from_components(dim: usize, comps: Vec<Expr>) -> Result<CourantSection> {
        ExprTensor::new(dim, Kind::Courant, comps).map(CourantSection)
    }
    pub fn parse(dim: usize, vector: &[&str], form: &[&str]) -> Result<CourantSection> {
        CourantSection::new(&VectorField::parse(dim, vector)?, &OneForm::parse(dim, form)?)
    }
    pub fn zero(dim: usize) -> CourantSection {
        CourantSection::from_components(dim, vec![Expr::zero(); 2 * dim]).expect("zero section")
    }
    pub fn components(&self) -> &[Expr] {
        self.0.components()
    }
    pub fn vector(&self) -> VectorField {
        let n = self.dim();
        VectorField::from_components(n, self.components()[..n].to_vec()).expect("vector part")
    }
    pub fn form(&self) -> OneForm {
        let n = self.dim();
        OneForm::from_components(n, self.components()[n..].to_vec()).expect("form part")
    }
    /// True if some constant has a nonzero imaginary part.
    pub fn is_complex(&self) -> bool {
        self.components().iter().any(has_complex_const)
    }
    /// `R_omega(X + alpha) = X + alpha + iota_X omega`.
    pub fn bfield(&self, omega: &TwoForm) -> CourantSection {
        let n = self.dim();
        let c = self.components();
        let mut out = c.to_vec();
        for j in 0..n {
            let terms: Vec<Expr> = (0..n)
                .filter(|&i| i != j)
                .map(|i| c[i].mul(&two_form_entry(omega, i, j)))
                .collect();
            out[n + j] = out[n + j].add(&Expr::sum(&terms));
        }
        CourantSection::from_components(n, out).expect("same shape")
    }
}

impl Field for CourantSection {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn kind(&self) -> Kind {
        Kind::Courant
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        self.0.eval(x)
    }
}

fn has_complex_const(e: &Expr) -> bool {
    use crate::expr::Node;
    match e.node() {
        Node::Const(c) => c.im != 0.0,
        Node::Var(_) => false,
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b, _) => {
            has_complex_const(a) || has_complex_const(b)
        }
        Node::Neg(a)
        | Node::Pow(a, _, _)
        | Node::Exp(a)
        | Node::Log(a, _)
        | Node::Sin(a)
        | Node::Cos(a)
        | Node::Sqrt(a, _) => has_complex_const(a),
    }
}

fn two_form_entry(w: &TwoForm, i: usize, j: usize) -> Expr {
    w.component(i, j)
}

/// `<v1 + mu1, v2 + mu2> = mu1(v2) + mu2(v1)`.
pub fn pairing<T: Scalar>(s1: &[T], s2: &[T]) -> T {
    let n = s1.len() / 2;
    (0..n).fold(T::zero(), |a, i| a + s1[n + i] * s2[i] + s2[n + i] * s1[i])
}

/// `iota_v omega` from stored two-form components.
fn contract2<T: Scalar>(v: &[T], w: &[T]) -> Vec<T> {
    let n = v.len();
    (0..n)
        .map(|j| (0..n).fold(T::zero(), |a, i| a + v[i] * get2(w, n, i, j)))
        .collect()
}

/// `R_omega` applied to the values of a section.
pub fn bfield_values<T: Scalar>(s: &[T], omega: &[T]) -> Vec<T> {
    let n = s.len() / 2;
    let shift = contract2(&s[..n], omega);
    let mut out = s.to_vec();
    for j in 0..n {
        out[n + j] = out[n + j] + shift[j];
    }
    out
}

/// The Dorfman bracket
/// `[X1, X2] + L_X1 alpha2 - iota_X2 d alpha1 + iota_X1 iota_X2 eta`
/// from dual-number evaluations of both sections and the value of `eta`.
/// `iota_X1 iota_X2 eta = eta(X2, X1, .)`.
pub fn courant_bracket_values<T: Scalar>(s1: &[Dual<T>], s2: &[Dual<T>], eta: &[T]) -> Vec<T> {
    let n = s1.len() / 2;
    let (x1, a1) = s1.split_at(n);
    let (x2, a2) = s2.split_at(n);
    let mut out = bracket_values(x1, x2);
    for i in 0..n {
        let mut f = T::zero();
        for j in 0..n {
            let x1j = x1[j].value();
            let x2j = x2[j].value();
            // L_X1 alpha2
            f = f + x1j * a2[i].grad(j) + a2[j].value() * x1[j].grad(i);
            // iota_X2 d alpha1: (d alpha1)_ji = d_j alpha1_i - d_i alpha1_j
            f = f - x2j * (a1[i].grad(j) - a1[j].grad(i));
            for k in 0..n {
                f = f + get3(eta, n, j, k, i) * x2j * x1[k].value();
            }
        }
        out.push(f);
    }
    out
}

/// `TM + T*M` with the bracket twisted by a closed three-form.
#[derive(Clone, Debug)]
pub struct TwistedCourant {
    pub dim: usize,
    pub eta: ThreeForm,
}

impl TwistedCourant {
    pub fn new(eta: ThreeForm) -> TwistedCourant {
        TwistedCourant { dim: eta.dim(), eta }
    }
    pub fn untwisted(dim: usize) -> TwistedCourant {
        TwistedCourant::new(ThreeForm::zero(dim))
    }
    /// Largest `|d eta|` component at `m`.
    pub fn closedness_residual(&self, m: &[f64]) -> Result<f64> {
        let n = self.dim;
        let e = self.eta.eval(&Dual::coords(m))?;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    for l in k + 1..n {
                        let v = get3(&e, n, j, k, l).grad(i) - get3(&e, n, i, k, l).grad(j)
                            + get3(&e, n, i, j, l).grad(k)
                            - get3(&e, n, i, j, k).grad(l);
                        worst = worst.max(v.abs());
                    }
                }
            }
        }
        Ok(worst)
    }
    pub fn validate(&self, points: &[Vec<f64>], tol: f64) -> Result<()> {
        for m in points {
            let r = self.closedness_residual(m)?;
            if r > tol {
                return Err(Error::Precondition(format!(
                    "twisting form is not closed: |d eta| = {r:.3e} at {m:?}"
                )));
            }
        }
        Ok(())
    }
    /// `[[a, b]]` as a lazily evaluated section.
    pub fn bracket<A: Field, B: Field>(&self, a: A, b: B) -> Result<CourantBracket<A, B>> {
        for (f, name) in [(a.kind(), "first"), (b.kind(), "second")] {
            if f != Kind::Courant {
                return Err(Error::Dimension(format!("{name} bracket argument is a {f:?}")));
            }
        }
        if a.dim() != self.dim || b.dim() != self.dim {
            return Err(Error::Dimension("bracket of sections on another chart".into()));
        }
        Ok(CourantBracket {
            a,
            b,
            eta: self.eta.clone(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct CourantBracket<A, B> {
    a: A,
    b: B,
    eta: ThreeForm,
}

impl<A: Field, B: Field> Field for CourantBracket<A, B> {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn kind(&self) -> Kind {
        Kind::Courant
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let xs = Dual::coords(x);
        let a = self.a.eval(&xs)?;
        let b = self.b.eval(&xs)?;
        let eta = self.eta.eval(x)?;
        Ok(courant_bracket_values(&a, &b, &eta))
    }
}

/// `R_omega` applied to any section field.
#[derive(Clone, Debug)]
pub struct BFieldSection<S> {
    pub section: S,
    pub omega: TwoForm,
}

impl<S: Field> Field for BFieldSection<S> {
    fn dim(&self) -> usize {
        self.section.dim()
    }
    fn kind(&self) -> Kind {
        Kind::Courant
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(bfield_values(&self.section.eval(x)?, &self.omega.eval(x)?))
    }
}

/// Values of a section at a real point, in complex arithmetic when needed.
pub fn section_values<F: Field>(s: &F, m: &[f64], complex: bool) -> Result<Vec<Complex64>> {
    if complex {
        let mc: Vec<Complex64> = m.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        s.eval(&mc)
    } else {
        Ok(s.eval(m)?.into_iter().map(|v| Complex64::new(v, 0.0)).collect())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiracReport {
    /// `max |<s_i, s_j>|`.
    pub isotropy: f64,
    pub min_rank: usize,
    /// Largest distance of `[[s_i, s_j]]` from the pointwise span.
    pub involutivity: f64,
    /// Smallest singular value of `[Re F, Im F]` (complex frames only).
    pub real_index: Option<f64>,
}

/// A (real or complex) Dirac structure given by `n` sections.
#[derive(Clone, Debug)]
pub struct DiracFrame {
    pub dim: usize,
    pub sections: Vec<CourantSection>,
    pub complex: bool,
}

impl DiracFrame {
    pub fn new(dim: usize, sections: Vec<CourantSection>) -> Result<DiracFrame> {
        if sections.len() != dim || sections.iter().any(|s| s.dim() != dim) {
            return Err(Error::Dimension(format!(
                "a Dirac frame on R^{dim} needs {dim} sections"
            )));
        }
        let complex = sections.iter().any(|s| s.is_complex());
        Ok(DiracFrame {
            dim,
            sections,
            complex,
        })
    }

    /// `TM + 0`.
    pub fn tangent(dim: usize) -> DiracFrame {
        let s = (0..dim)
            .map(|i| {
                CourantSection::new(&VectorField::coordinate(dim, i), &OneForm::zero(dim))
                    .expect("same chart")
            })
            .collect();
        DiracFrame::new(dim, s).expect("n sections")
    }

    /// `0 + T*M`.
    pub fn cotangent(dim: usize) -> DiracFrame {
        let s = (0..dim)
            .map(|i| {
                CourantSection::new(&VectorField::zero(dim), &OneForm::coordinate(dim, i))
                    .expect("same chart")
            })
            .collect();
        DiracFrame::new(dim, s).expect("n sections")
    }

    /// The `2n x n` frame at `m`.
    pub fn frame_at(&self, m: &[f64]) -> Result<CMatrix> {
        let n = self.dim;
        let mut f = CMatrix::zeros(2 * n, n);
        for (c, s) in self.sections.iter().enumerate() {
            let v = section_values(s, m, self.complex)?;
            for (r, x) in v.into_iter().enumerate() {
                f[(r, c)] = x;
            }
        }
        Ok(f)
    }

    pub fn bfield(&self, omega: &TwoForm) -> DiracFrame {
        DiracFrame {
            dim: self.dim,
            sections: self.sections.iter().map(|s| s.bfield(omega)).collect(),
            complex: self.complex,
        }
    }

    pub fn report_at(&self, bg: &TwistedCourant, m: &[f64]) -> Result<DiracReport> {
        let n = self.dim;
        let f = self.frame_at(m)?;
        let mut iso = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let a: Vec<Complex64> = f.column(i).iter().copied().collect();
                let b: Vec<Complex64> = f.column(j).iter().copied().collect();
                iso = iso.max(pairing(&a, &b).norm());
            }
        }
        let rk = rank(&f, 1e-10);
        let q = column_basis(&f, 1e-10);
        let mut inv = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let br = bg.bracket(&self.sections[i], &self.sections[j])?;
                let v = section_values(&br, m, self.complex)?;
                let v = nalgebra::DVector::from_vec(v);
                let r = &v - &q * (q.adjoint() * &v);
                inv = inv.max(r.norm());
            }
        }
        let real_index = self.complex.then(|| {
            let mut st = DMatrix::zeros(2 * n, 2 * n);
            for r in 0..2 * n {
                for c in 0..n {
                    st[(r, c)] = f[(r, c)].re;
                    st[(r, n + c)] = f[(r, c)].im;
                }
            }
            singular_values(&to_complex(&st)).last().copied().unwrap_or(0.0)
        });
        Ok(DiracReport {
            isotropy: iso,
            min_rank: rk,
            involutivity: inv,
            real_index,
        })
    }

    pub fn report(&self, bg: &TwistedCourant, points: &[Vec<f64>]) -> Result<DiracReport> {
        let mut out = DiracReport {
            min_rank: self.dim,
            ..Default::default()
        };
        for m in points {
            let r = self.report_at(bg, m)?;
            out.isotropy = out.isotropy.max(r.isotropy);
            out.min_rank = out.min_rank.min(r.min_rank);
            out.involutivity = out.involutivity.max(r.involutivity);
            out.real_index = match (out.real_index, r.real_index) {
                (None, x) => x,
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, None) => a,
            };
        }
        Ok(out)
    }

    /// Errors unless the frame is a Dirac structure at every point (and, with
    /// `generalized_complex`, also `E ∩ conj(E) = 0`).
    pub fn validate(
        &self,
        bg: &TwistedCourant,
        points: &[Vec<f64>],
        tol: f64,
        generalized_complex: bool,
    ) -> Result<DiracReport> {
        let r = self.report(bg, points)?;
        let mut bad = Vec::new();
        if r.isotropy > tol {
            bad.push(format!("not isotropic ({:.3e})", r.isotropy));
        }
        if r.min_rank < self.dim {
            bad.push(format!("rank drops to {}", r.min_rank));
        }
        if r.involutivity > tol {
            bad.push(format!("not involutive ({:.3e})", r.involutivity));
        }
        if generalized_complex && r.real_index.is_none_or(|s| s <= tol) {
            bad.push("E meets its conjugate".into());
        }
        if bad.is_empty() {
            Ok(r)
        } else {
            Err(Error::Precondition(format!("invalid Dirac frame: {}", bad.join(", "))))
        }
    }
}

/// `Gr(pi) = {pi^#(mu) + mu}`. Requires a vanishing Jacobiator at the points.
pub fn graph_of_bivector(pi: &Bivector, points: &[Vec<f64>]) -> Result<DiracFrame> {
    let n = pi.dim();
    let jac = jacobiator(pi.clone())?;
    for m in points {
        let j = jac.max_abs_at(m)?;
        if j > 1e-8 {
            return Err(Error::Precondition(format!(
                "bivector is not Poisson: Jacobiator {j:.3e} at {m:?}"
            )));
        }
    }
    let sections = (0..n)
        .map(|i| {
            let v = VectorField::from_components(n, (0..n).map(|j| pi.component(i, j)).collect())?;
            CourantSection::new(&v, &OneForm::coordinate(n, i))
        })
        .collect::<Result<_>>()?;
    DiracFrame::new(n, sections)
}

/// `Gr(omega) = {v + iota_v omega}`, Dirac relative to `eta` when `d omega = eta`.
pub fn graph_of_twoform(omega: &TwoForm, eta: &ThreeForm, points: &[Vec<f64>]) -> Result<DiracFrame> {
    let n = omega.dim();
    let d = exterior_derivative(omega.clone())?;
    for m in points {
        let dw = d.eval(m.as_slice())?;
        let e = eta.eval(m.as_slice())?;
        let r = dw.iter().zip(&e).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        if r > 1e-8 {
            return Err(Error::Precondition(format!(
                "d omega differs from the twisting form by {r:.3e} at {m:?}"
            )));
        }
    }
    Ok(DiracFrame::tangent(n).bfield(omega))
}

/// Matrix `W` with `W_ij = omega(d_i, d_j)`, so `iota_v omega = -W v`.
pub fn two_form_matrix(comps: &[f64], n: usize) -> DMatrix<f64> {
    dense2(comps, n)
}

/// `R_omega` on a pointwise frame, `W_ij = omega(d_i, d_j)`.
pub fn bfield_frame(w: &DMatrix<Complex64>, f: &CMatrix) -> CMatrix {
    let n = w.nrows();
    let mut out = f.clone();
    let v = f.rows(0, n).into_owned();
    let shift = -(w * v);
    let mut mu = out.rows_mut(n, n);
    mu += shift;
    out
}

/// Pointwise `phi^! E` from `J = D phi` (`n x n'`) and the frame of `E` at
/// the image point: all `v' + phi^* mu` with `J v' = v` for some `v + mu` in `E`.
pub fn pullback_frame(j: &DMatrix<f64>, f: &CMatrix, tol: f64) -> Result<CMatrix> {
    let (n, ns) = j.shape();
    if f.nrows() != 2 * n {
        return Err(Error::Dimension("frame and Jacobian sizes differ".into()));
    }
    let jc = to_complex(j);
    let v = f.rows(0, n).into_owned();
    let mu = f.rows(n, n).into_owned();
    let mut trans = CMatrix::zeros(n, ns + f.ncols());
    trans.view_mut((0, 0), (n, ns)).copy_from(&jc);
    trans.view_mut((0, ns), (n, f.ncols())).copy_from(&v);
    if rank(&trans, tol) < n {
        return Err(Error::Precondition(
            "map is not transverse to the anchor of the Dirac structure".into(),
        ));
    }
    let mut sys = trans.clone();
    sys.view_mut((0, ns), (n, f.ncols())).copy_from(&(-v));
    let ker = nullspace(&sys, tol);
    let vp = ker.rows(0, ns).into_owned();
    let c = ker.rows(ns, f.ncols()).into_owned();
    let mup = jc.transpose() * (mu * c);
    let mut out = CMatrix::zeros(2 * ns, ker.ncols());
    out.view_mut((0, 0), (ns, ker.ncols())).copy_from(&vp);
    out.view_mut((ns, 0), (ns, ker.ncols())).copy_from(&mup);
    let basis = column_basis(&out, tol);
    if basis.ncols() != ns {
        return Err(Error::Precondition(format!(
            "pullback has rank {} instead of {ns}",
            basis.ncols()
        )));
    }
    Ok(basis)
}

/// `phi^! E` at `x`.
pub fn dirac_pullback<M: SmoothMap>(phi: &M, e: &DiracFrame, x: &[f64]) -> Result<CMatrix> {
    let (y, j) = jacobian(phi, x)?;
    pullback_frame(&j, &e.frame_at(&y)?, 1e-10)
}

/// Pointwise distance between two Dirac frames.
pub fn frame_angle(a: &CMatrix, b: &CMatrix) -> f64 {
    max_principal_angle(a, b, 1e-10)
}

/// `theta = d alpha + iota_X eta` for a section `X + alpha`, as the matrix
/// `theta(d_i, d_j)`.
pub fn theta_matrix<S: Field, T: Scalar>(s: &S, eta: &ThreeForm, m: &[T]) -> Result<Vec<Vec<T>>> {
    let n = s.dim();
    let v = s.eval(&Dual::coords(m))?;
    let e = eta.eval(m)?;
    let mut th = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut t = v[n + j].grad(i) - v[n + i].grad(j);
            for (k, vk) in v.iter().take(n).enumerate() {
                t = t + vk.value() * get3(&e, n, k, i, j);
            }
            th[i][j] = t;
        }
    }
    Ok(th)
}

/// Generalized complex structure as a `2n x 2n` matrix acting on `(v; mu)`.
#[derive(Clone, Debug)]
pub struct GCSData {
    pub dim: usize,
    j: Vec<Vec<Expr>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GcsReport {
    /// `max |J^2 + I|`
    pub square: f64,
    /// `max |J^T G J - G|`
    pub orthogonality: f64,
    pub eigenbundle: DiracReport,
}

fn matmul(a: &[Vec<Expr>], b: &[Vec<Expr>]) -> Vec<Vec<Expr>> {
    let (r, k, c) = (a.len(), b.len(), b[0].len());
    (0..r)
        .map(|i| {
            (0..c)
                .map(|j| {
                    let t: Vec<Expr> = (0..k).map(|l| a[i][l].mul(&b[l][j])).collect();
                    Expr::sum(&t)
                })
                .collect()
        })
        .collect()
}

impl GCSData {
    pub fn new(dim: usize, j: Vec<Vec<Expr>>) -> Result<GCSData> {
        if j.len() != 2 * dim || j.iter().any(|r| r.len() != 2 * dim) {
            return Err(Error::Dimension(format!("J must be {0}x{0}", 2 * dim)));
        }
        if j.iter().flatten().any(|e| e.arity() > dim) {
            return Err(Error::Dimension(format!("J entry outside R^{dim}")));
        }
        Ok(GCSData { dim, j })
    }

    /// Symplectic type `[[0, -P], [W, 0]]` from `omega` and `pi = omega^{-1}`
    /// (`P W = I` as matrices).
    pub fn symplectic(omega: &TwoForm, pi: &Bivector) -> Result<GCSData> {
        let n = omega.dim();
        let mut j = vec![vec![Expr::zero(); 2 * n]; 2 * n];
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    j[a][n + b] = pi.component(a, b).neg();
                    j[n + a][b] = omega.component(a, b);
                }
            }
        }
        GCSData::new(n, j)
    }

    /// Complex type `diag(J, -J^T)` from a complex structure `J` on `TM`
    /// (`J[a][b]` is component `a` of `J(d_b)`).
    pub fn complex_type(jm: &[Vec<Expr>]) -> Result<GCSData> {
        let n = jm.len();
        let mut j = vec![vec![Expr::zero(); 2 * n]; 2 * n];
        for a in 0..n {
            for b in 0..n {
                j[a][b] = jm[a][b].clone();
                j[n + a][n + b] = jm[b][a].neg();
            }
        }
        GCSData::new(n, j)
    }

    /// Block product on `R^{n1} x R^{n2}`; the second factor's variables
    /// are shifted by `n1`.
    pub fn product(a: &GCSData, b: &GCSData) -> Result<GCSData> {
        let (n1, n2) = (a.dim, b.dim);
        let n = n1 + n2;
        let shift: Vec<Expr> = (0..n2).map(|i| Expr::var(n1 + i)).collect();
        let mut j = vec![vec![Expr::zero(); 2 * n]; 2 * n];
        // Full index of (part, local index) for each factor.
        let ia = |i: usize| if i < n1 { i } else { n + i - n1 };
        let ib = |i: usize| if i < n2 { n1 + i } else { n + n1 + i - n2 };
        for r in 0..2 * n1 {
            for c in 0..2 * n1 {
                j[ia(r)][ia(c)] = a.j[r][c].clone();
            }
        }
        for r in 0..2 * n2 {
            for c in 0..2 * n2 {
                j[ib(r)][ib(c)] = b.j[r][c].subst(&shift);
            }
        }
        GCSData::new(n, j)
    }

    /// `R_B J R_{-B}` with `R_B = [[I, 0], [-W_B, I]]`.
    pub fn bfield(&self, b: &TwoForm) -> GCSData {
        let n = self.dim;
        let rb = |sign: f64| -> Vec<Vec<Expr>> {
            (0..2 * n)
                .map(|r| {
                    (0..2 * n)
                        .map(|c| {
                            if r == c {
                                Expr::one()
                            } else if r >= n && c < n && r - n != c {
                                b.component(r - n, c).scale(-sign)
                            } else {
                                Expr::zero()
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let j = matmul(&matmul(&rb(1.0), &self.j), &rb(-1.0));
        GCSData { dim: n, j }
    }

    pub fn entries(&self) -> &[Vec<Expr>] {
        &self.j
    }

    pub fn matrix_at<T: Scalar>(&self, m: &[T]) -> Result<Vec<Vec<T>>> {
        self.j
            .iter()
            .map(|r| r.iter().map(|e| Ok(e.eval(m)?)).collect())
            .collect()
    }

    pub fn apply<T: Scalar>(&self, m: &[T], u: &[T]) -> Result<Vec<T>> {
        Ok(self
            .matrix_at(m)?
            .iter()
            .map(|r| r.iter().zip(u).fold(T::zero(), |a, (x, y)| a + *x * *y))
            .collect())
    }

    /// Induced Poisson structure: `pi^#(mu) = a(J mu)`.
    pub fn induced_poisson(&self) -> Bivector {
        let n = self.dim;
        let comps = pairs(n).map(|(i, j)| self.j[i][n + j].neg()).collect();
        Bivector::from_components(n, comps).expect("n(n-1)/2 entries")
    }

    /// The `+i` eigenbundle, spanned by columns of `I - i J` chosen
    /// independent at `base`.
    pub fn eigenframe(&self, base: &[f64]) -> Result<DiracFrame> {
        let n = self.dim;
        let jm = self.matrix_at(base)?;
        let col = |c: usize| -> Vec<Expr> {
            (0..2 * n)
                .map(|r| {
                    let id = if r == c { Expr::one() } else { Expr::zero() };
                    id.add(&Expr::complex(-I).mul(&self.j[r][c]))
                })
                .collect()
        };
        let mut chosen: Vec<usize> = Vec::new();
        let mut cur = CMatrix::zeros(2 * n, 0);
        for c in 0..2 * n {
            let v = CMatrix::from_fn(2 * n, 1, |r, _| {
                let id = if r == c { 1.0 } else { 0.0 };
                Complex64::new(id, 0.0) - I * jm[r][c]
            });
            let cand = CMatrix::from_fn(2 * n, cur.ncols() + 1, |r, k| {
                if k < cur.ncols() {
                    cur[(r, k)]
                } else {
                    v[(r, 0)]
                }
            });
            if rank(&cand, 1e-8) > cur.ncols() {
                cur = cand;
                chosen.push(c);
                if chosen.len() == n {
                    break;
                }
            }
        }
        if chosen.len() != n {
            return Err(Error::Precondition(format!(
                "+i eigenspace has dimension {} instead of {n}",
                chosen.len()
            )));
        }
        let sections = chosen
            .into_iter()
            .map(|c| CourantSection::from_components(n, col(c)))
            .collect::<Result<_>>()?;
        let mut f = DiracFrame::new(n, sections)?;
        f.complex = true;
        Ok(f)
    }

    pub fn report(&self, bg: &TwistedCourant, points: &[Vec<f64>]) -> Result<GcsReport> {
        let n = self.dim;
        let mut rep = GcsReport::default();
        for m in points {
            let j = self.matrix_at(m.as_slice())?;
            let jm = DMatrix::from_fn(2 * n, 2 * n, |r, c| j[r][c]);
            let sq = &jm * &jm + DMatrix::identity(2 * n, 2 * n);
            rep.square = rep.square.max(sq.amax());
            let mut g = DMatrix::zeros(2 * n, 2 * n);
            for i in 0..n {
                g[(i, n + i)] = 1.0;
                g[(n + i, i)] = 1.0;
            }
            rep.orthogonality = rep.orthogonality.max((jm.transpose() * &g * &jm - &g).amax());
        }
        let base = points.first().cloned().unwrap_or_else(|| vec![0.0; n]);
        rep.eigenbundle = self.eigenframe(&base)?.report(bg, points)?;
        Ok(rep)
    }

    pub fn validate(&self, bg: &TwistedCourant, points: &[Vec<f64>], tol: f64) -> Result<GcsReport> {
        let r = self.report(bg, points)?;
        let e = &r.eigenbundle;
        if r.square > tol
            || r.orthogonality > tol
            || e.isotropy > tol
            || e.involutivity > tol
            || e.min_rank < self.dim
            || e.real_index.is_none_or(|s| s <= tol)
        {
            return Err(Error::Precondition(format!(
                "not a generalized complex structure: |J^2 + I| = {:.3e}, orthogonality {:.3e}, eigenbundle {:?}",
                r.square, r.orthogonality, r.eigenbundle
            )));
        }
        Ok(r)
    }
}

/// Gauge form `gamma_s = int_0^s Phi_u^* theta du` along the standard flow
/// of `X`, with `theta = d alpha + iota_X eta`, and the largest principal
/// angle between `Phi_s^! E` and `E^{gamma_s}` over the points.
pub fn gauge_flow_check(
    sigma: &CourantSection,
    s: f64,
    e: &DiracFrame,
    bg: &TwistedCourant,
    points: &[Vec<f64>],
    cfg: &FlowConfig,
) -> Result<f64> {
    let n = sigma.dim();
    let x = sigma.vector();
    let mut worst = 0.0f64;
    for m in points {
        // sigma must lie in E.
        let f = e.frame_at(m)?;
        let sv = section_values(sigma, m, false)?;
        let q = column_basis(&f, 1e-10);
        let v = nalgebra::DVector::from_vec(sv);
        let off = (&v - &q * (q.adjoint() * &v)).norm();
        if off > 1e-8 {
            return Err(Error::Precondition(format!(
                "section is not in the Dirac structure (distance {off:.3e})"
            )));
        }
        let gamma = if s == 0.0 {
            vec![0.0; n * n]
        } else {
            let (g, _, _) = quadrature(
                |u| {
                    let fl = flow(&x, m, u, cfg, true)?;
                    let j = fl.jacobian.expect("requested");
                    let th = theta_matrix(sigma, &bg.eta, &fl.endpoint)?;
                    let th = DMatrix::from_fn(n, n, |a, b| th[a][b]);
                    let p = j.transpose() * th * j;
                    Ok(p.iter().copied().collect::<Vec<f64>>())
                },
                0.0,
                s,
                8,
                1e-9,
                512,
            )?;
            g
        };
        let gamma = DMatrix::from_column_slice(n, n, &gamma);
        let fl = flow(&x, m, s, cfg, true)?;
        let pulled = pullback_frame(&fl.jacobian.expect("requested"), &e.frame_at(&fl.endpoint)?, 1e-10)?;
        let gauged = bfield_frame(&to_complex(&gamma), &f);
        worst = worst.max(frame_angle(&pulled, &gauged));
    }
    Ok(worst)
}

/// Matrix of a two-form from its stored components, generic.
pub fn two_form_dense<T: Scalar>(comps: &[T], n: usize) -> Vec<Vec<T>> {
    dense2_generic(comps, n)
}

/// Stored components of a generic antisymmetric matrix.
pub fn pack_two_form<T: Scalar>(m: &[Vec<T>]) -> Vec<T> {
    let n = m.len();
    pack2_fn(n, |i, j| m[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::sample_ball;

    fn pts(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
        sample_ball(&vec![0.0; n], 0.5, count, seed)
    }

    #[test]
    fn bracket_examples() {
        let bg = TwistedCourant::untwisted(3);
        let x = CourantSection::parse(3, &["x2", "x1*x3", "0"], &["0", "0", "0"]).unwrap();
        let y = CourantSection::parse(3, &["x3", "0", "x1"], &["0", "0", "0"]).unwrap();
        let b = bg.bracket(&x, &y).unwrap().eval(&[0.3, 0.2, 0.1]).unwrap();
        let lie = crate::chart::lie_bracket(x.vector(), y.vector()).unwrap().eval(&[0.3, 0.2, 0.1]).unwrap();
        assert_eq!(&b[..3], &lie[..]);
        assert!(b[3..].iter().all(|v| *v == 0.0));
        let a = CourantSection::parse(3, &["0", "0", "0"], &["x2", "x1^2", "x3"]).unwrap();
        let c = CourantSection::parse(3, &["0", "0", "0"], &["x3", "0", "x1*x2"]).unwrap();
        assert!(bg.bracket(&a, &c).unwrap().eval(&[0.3, 0.2, 0.1]).unwrap().iter().all(|v| *v == 0.0));
        let eta = ThreeForm::parse_entries(3, &[(0, 1, 2, "1")]).unwrap();
        let tw = TwistedCourant::new(eta);
        let dx = CourantSection::parse(3, &["1", "0", "0"], &["0", "0", "0"]).unwrap();
        let dy = CourantSection::parse(3, &["0", "1", "0"], &["0", "0", "0"]).unwrap();
        let v = tw.bracket(&dx, &dy).unwrap().eval(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(v, vec![0.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn bfield_examples() {
        let w = TwoForm::parse_entries(2, &[(0, 1, "1")]).unwrap();
        let dx = CourantSection::parse(2, &["1", "0"], &["0", "0"]).unwrap();
        let v = dx.bfield(&w).eval(&[0.1, 0.2]).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0, 1.0]);
        let s = CourantSection::parse(2, &["x1*x2", "sin(x1)"], &["x2", "exp(x1)"]).unwrap();
        let w = TwoForm::parse_entries(2, &[(0, 1, "x1^2 + x2")]).unwrap();
        let mw = TwoForm::parse_entries(2, &[(0, 1, "-(x1^2 + x2)")]).unwrap();
        let back = s.bfield(&w).bfield(&mw);
        for m in pts(2, 10, 1) {
            let a = back.eval(m.as_slice()).unwrap();
            let b = s.eval(m.as_slice()).unwrap();
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
        assert_eq!(s.bfield(&TwoForm::zero(2)).eval(&[0.3, 0.4]).unwrap(), s.eval(&[0.3, 0.4]).unwrap());
    }

    #[test]
    fn graphs_are_dirac() {
        let bg = TwistedCourant::untwisted(2);
        let g = graph_of_bivector(&Bivector::canonical(2, 0), &pts(2, 5, 1)).unwrap();
        let f = g.frame_at(&[0.0, 0.0]).unwrap();
        // pi0^#(dq) = -d/dp, pi0^#(dp) = d/dq.
        assert_eq!(f[(1, 0)].re, -1.0);
        assert_eq!(f[(0, 1)].re, 1.0);
        g.validate(&bg, &pts(2, 5, 1), 1e-10, false).unwrap();
        let zero = graph_of_bivector(&Bivector::zero(3), &pts(3, 5, 1)).unwrap();
        assert!(frame_angle(&zero.frame_at(&[0.1, 0.2, 0.3]).unwrap(), &DiracFrame::cotangent(3).frame_at(&[0.1, 0.2, 0.3]).unwrap()) < 1e-14);
        let so3 = Bivector::parse_entries(3, &[(0, 1, "x3"), (0, 2, "-x2"), (1, 2, "x1")]).unwrap();
        graph_of_bivector(&so3, &pts(3, 5, 2))
            .unwrap()
            .validate(&TwistedCourant::untwisted(3), &pts(3, 10, 3), 1e-10, false)
            .unwrap();
        let bad = Bivector::parse_entries(3, &[(0, 1, "1"), (2, 0, "x1")]).unwrap();
        assert!(graph_of_bivector(&bad, &pts(3, 5, 2)).is_err());
    }

    #[test]
    fn twisted_graph() {
        let w = TwoForm::parse_entries(3, &[(0, 1, "exp(x3)")]).unwrap();
        let eta = ThreeForm::parse_entries(3, &[(0, 1, 2, "exp(x3)")]).unwrap();
        let g = graph_of_twoform(&w, &eta, &pts(3, 5, 1)).unwrap();
        let bg = TwistedCourant::new(eta.clone());
        bg.validate(&pts(3, 5, 1), 1e-12).unwrap();
        g.validate(&bg, &pts(3, 10, 2), 1e-10, false).unwrap();
        // The opposite twist is rejected, and the untwisted bracket sees the failure.
        let neg = ThreeForm::parse_entries(3, &[(0, 1, 2, "-exp(x3)")]).unwrap();
        assert!(graph_of_twoform(&w, &neg, &pts(3, 5, 1)).is_err());
        let r = g.report(&TwistedCourant::untwisted(3), &pts(3, 5, 1)).unwrap();
        assert!(r.involutivity > 0.1);
    }

    #[test]
    fn pullback_identity_and_submersion() {
        let so3 = Bivector::parse_entries(3, &[(0, 1, "x3"), (0, 2, "-x2"), (1, 2, "x1")]).unwrap();
        let g = graph_of_bivector(&so3, &[]).unwrap();
        let id = crate::chart::IdentityMap(3);
        let m = [0.2, -0.1, 0.7];
        let p = dirac_pullback(&id, &g, &m).unwrap();
        assert!(frame_angle(&p, &g.frame_at(&m).unwrap()) < 1e-10);
        // TM pulled back by a submersion R^3 -> R^2 is TN.
        let proj = crate::chart::ExprMap::parse(3, &["x1 + x3^2", "x2"]).unwrap();
        let p = dirac_pullback(&proj, &DiracFrame::tangent(2), &m).unwrap();
        assert!(frame_angle(&p, &DiracFrame::tangent(3).frame_at(&m).unwrap()) < 1e-10);
    }

    #[test]
    fn pullback_commutes_with_bfield() {
        let so3 = Bivector::parse_entries(3, &[(0, 1, "x3"), (0, 2, "-x2"), (1, 2, "x1")]).unwrap();
        let g = graph_of_bivector(&so3, &[]).unwrap();
        // phi: R^2 -> R^3, transverse near (0, 0) -> (0, 0, 1).
        let phi = crate::chart::ExprMap::parse(2, &["x1", "x2 + x1^2", "1 + x1*x2"]).unwrap();
        let w = TwoForm::parse_entries(3, &[(0, 1, "x3"), (1, 2, "x1^2"), (0, 2, "sin(x2)")]).unwrap();
        let x = [0.1, -0.2];
        let lhs = {
            let p = dirac_pullback(&phi, &g, &x).unwrap();
            let pw = crate::chart::pullback_form(&phi, &w).unwrap().eval(&x[..]).unwrap();
            bfield_frame(&to_complex(&dense2(&pw, 2)), &p)
        };
        let rhs = dirac_pullback(&phi, &g.bfield(&w), &x).unwrap();
        assert!(frame_angle(&lhs, &rhs) < 1e-10);
    }

    #[test]
    fn gcs_examples() {
        let w = TwoForm::parse_entries(2, &[(0, 1, "1")]).unwrap();
        // W = [[0,1],[-1,0]], P = W^{-1} = [[0,-1],[1,0]].
        let p = Bivector::parse_entries(2, &[(0, 1, "-1")]).unwrap();
        let sym = GCSData::symplectic(&w, &p).unwrap();
        let bg2 = TwistedCourant::untwisted(2);
        let pts2 = pts(2, 4, 1);
        sym.validate(&bg2, &pts2, 1e-10).unwrap();
        let ind = sym.induced_poisson();
        assert_eq!(ind.eval(&[0.0, 0.0]).unwrap(), vec![-1.0]);
        let jc = vec![vec![Expr::zero(), Expr::constant(-1.0)], vec![Expr::one(), Expr::zero()]];
        let cx = GCSData::complex_type(&jc).unwrap();
        cx.validate(&bg2, &pts2, 1e-10).unwrap();
        assert!(cx.induced_poisson().is_zero());
        let prod = GCSData::product(&cx, &sym).unwrap();
        let bg4 = TwistedCourant::untwisted(4);
        let pts4 = pts(4, 4, 2);
        prod.validate(&bg4, &pts4, 1e-10).unwrap();
        let b = TwoForm::parse_entries(4, &[(0, 2, "2*x1"), (1, 3, "0.5")]).unwrap();
        let sheared = prod.bfield(&b);
        sheared.validate(&bg4, &pts4, 1e-10).unwrap();
        let pi = sheared.induced_poisson();
        let v = pi.eval(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let n = 4;
        for (idx, (i, j)) in pairs(n).enumerate() {
            let expect = if (i, j) == (2, 3) { -1.0 } else { 0.0 };
            assert!((v[idx] - expect).abs() < 1e-14, "{i}{j}: {}", v[idx]);
        }
    }

    #[test]
    fn gauge_flow_examples() {
        let cfg = FlowConfig::default();
        let bg = TwistedCourant::untwisted(2);
        let g = graph_of_bivector(&Bivector::canonical(2, 0), &[]).unwrap();
        let p2 = pts(2, 5, 3);
        assert!(gauge_flow_check(&CourantSection::zero(2), 0.3, &g, &bg, &p2, &cfg).unwrap() < 1e-14);
        // alpha = q dp - p dq, X = pi0^# alpha.
        let sigma = CourantSection::parse(2, &["x1", "x2"], &["-x2", "x1"]).unwrap();
        let a = gauge_flow_check(&sigma, 0.3, &g, &bg, &p2, &cfg).unwrap();
        assert!(a < 1e-6, "{a}");
        let cot = DiracFrame::cotangent(2);
        let s = CourantSection::parse(2, &["0", "0"], &["x2^2", "x1*x2"]).unwrap();
        assert!(gauge_flow_check(&s, 0.5, &cot, &bg, &p2, &cfg).unwrap() < 1e-12);
        // Twisted graph with a nonlinear section.
        let w = TwoForm::parse_entries(3, &[(0, 1, "exp(x3)")]).unwrap();
        let eta = ThreeForm::parse_entries(3, &[(0, 1, 2, "exp(x3)")]).unwrap();
        let tg = graph_of_twoform(&w, &eta, &[]).unwrap();
        let x = VectorField::parse(3, &["x1", "x2 + x1^2", "x3"]).unwrap();
        let sec = CourantSection::new(&x, &OneForm::zero(3)).unwrap().bfield(&w);
        let a = gauge_flow_check(&sec, 0.4, &tg, &TwistedCourant::new(eta), &pts(3, 4, 5), &cfg).unwrap();
        assert!(a < 1e-6, "{a}");
    }
}
