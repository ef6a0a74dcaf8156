//! Anchored bundles and Lie algebroids on trivial bundles `E = chart x R^r`,
//! Euler-like sections, the derivations `D_eps` that lift `a(eps)` to `E`,
//! and the resulting normal-form bundle map.

use crate::chart::{
    bracket_values, jacobian_generic, Bivector, Field, Kind, Transversal,
};
use crate::error::{Error, Result};
use crate::euler::{linearize, LinearizeConfig, TubularEmbedding};
use crate::expr::{Dual, Expr, Scalar};
use crate::flow::{flow, integrate, FlowConfig};
use crate::linalg::{min_norm_solve, nullspace, rank_real, right_inverse, solve, to_complex};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Horizon for the transport to `t = 0`.
pub const S_MAX: f64 = 40.0;
/// Early-exit threshold between consecutive unit chunks of the transport.
pub const TRANSPORT_TOL: f64 = 1e-9;

fn dual_point<T: Scalar>(m: &[T]) -> Result<Vec<Dual<T>>> {
    if m.len() > crate::expr::MAX_DIRS {
        return Err(Error::Dimension(format!(
            "differentiated evaluation needs n <= {}, got {}",
            crate::expr::MAX_DIRS,
            m.len()
        )));
    }
    Ok(Dual::coords(m))
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

/// Derivative of a dual-valued quantity along `v`.
fn along<T: Scalar>(d: &Dual<T>, v: &[T]) -> T {
    v.iter().enumerate().fold(T::zero(), |acc, (a, c)| acc + d.grad(a) * *c)
}

/// `E = R^n x R^r` with anchor `a(e_i) = sum_a A[a][i] d/dx^a`.
#[derive(Clone, Debug)]
pub struct AnchoredBundle {
    pub dim: usize,
    pub rank: usize,
    anchor: Vec<Vec<Expr>>,
}

impl AnchoredBundle {
    pub fn new(dim: usize, anchor: Vec<Vec<Expr>>) -> Result<AnchoredBundle> {
        if anchor.len() != dim || dim == 0 {
            return Err(Error::Dimension(format!("anchor needs {dim} rows")));
        }
        let rank = anchor[0].len();
        for row in &anchor {
            if row.len() != rank {
                return Err(Error::Dimension("ragged anchor matrix".into()));
            }
            for e in row {
                if e.arity() > dim {
                    return Err(Error::Dimension(format!(
                        "anchor entry uses x{} on R^{dim}",
                        e.arity()
                    )));
                }
            }
        }
        Ok(AnchoredBundle { dim, rank, anchor })
    }

    pub fn parse(dim: usize, rows: &[&[&str]]) -> Result<AnchoredBundle> {
        let anchor = rows
            .iter()
            .map(|r| r.iter().map(|s| crate::expr::parse(s, dim)).collect::<std::result::Result<Vec<_>, _>>())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        AnchoredBundle::new(dim, anchor)
    }

    /// `TM` with the coordinate frame.
    pub fn tangent(dim: usize) -> AnchoredBundle {
        let anchor = (0..dim)
            .map(|a| (0..dim).map(|i| if a == i { Expr::one() } else { Expr::zero() }).collect())
            .collect();
        AnchoredBundle { dim, rank: dim, anchor }
    }

    /// `T*M` with the frame `dx^i` and anchor `pi^#`.
    pub fn cotangent(pi: &Bivector) -> AnchoredBundle {
        let n = pi.dim();
        let anchor = (0..n)
            .map(|j| (0..n).map(|i| pi.component(i, j)).collect())
            .collect();
        AnchoredBundle { dim: n, rank: n, anchor }
    }

    pub fn anchor_exprs(&self) -> &[Vec<Expr>] {
        &self.anchor
    }

    /// The anchor matrix (`n x r`) at `m`.
    pub fn anchor_at<T: Scalar>(&self, m: &[T]) -> Result<Vec<Vec<T>>> {
        self.anchor
            .iter()
            .map(|row| row.iter().map(|e| Ok(e.eval(m)?)).collect())
            .collect()
    }

    pub fn anchor_matrix(&self, m: &[f64]) -> Result<DMatrix<f64>> {
        let a = self.anchor_at(m)?;
        Ok(DMatrix::from_fn(self.dim, self.rank, |i, j| a[i][j]))
    }

    pub fn apply<T: Scalar>(&self, m: &[T], xi: &[T]) -> Result<Vec<T>> {
        Ok(self.anchor_at(m)?.iter().map(|row| dot(row, xi)).collect())
    }

    /// `[a(e_i), a(e_j)]` at `m` for all `i < j`, in pair order.
    pub fn anchor_brackets<T: Scalar>(&self, m: &[T]) -> Result<Vec<Vec<T>>> {
        let a = self.anchor_at(&dual_point(m)?)?;
        let col = |i: usize| a.iter().map(|row| row[i]).collect::<Vec<_>>();
        let mut out = Vec::new();
        for i in 0..self.rank {
            for j in i + 1..self.rank {
                out.push(bracket_values(&col(i), &col(j)));
            }
        }
        Ok(out)
    }
}

/// A section of `E` in the frame `e_1..e_r`.
#[derive(Clone, Debug)]
pub struct Section {
    pub dim: usize,
    pub rank: usize,
    kind: SectionKind,
}

#[derive(Clone, Debug)]
enum SectionKind {
    Exprs(Vec<Expr>),
    /// `sum_j x^j xi_j(y)` with `xi_j` the minimum-norm solution of
    /// `(proj o a)(xi_j) = e_j` at `(y, 0)`.
    Euler { bundle: AnchoredBundle, p: usize },
}

impl Section {
    pub fn from_exprs(dim: usize, coeffs: Vec<Expr>) -> Result<Section> {
        if coeffs.iter().any(|e| e.arity() > dim) {
            return Err(Error::Dimension(format!("section coefficient outside R^{dim}")));
        }
        Ok(Section {
            dim,
            rank: coeffs.len(),
            kind: SectionKind::Exprs(coeffs),
        })
    }
    pub fn parse(dim: usize, src: &[&str]) -> Result<Section> {
        let c = src
            .iter()
            .map(|s| crate::expr::parse(s, dim))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Section::from_exprs(dim, c)
    }
    pub fn zero(dim: usize, rank: usize) -> Section {
        Section::from_exprs(dim, vec![Expr::zero(); rank]).expect("constant section")
    }
    /// The frame section `e_i`.
    pub fn basis(dim: usize, rank: usize, i: usize) -> Section {
        let c = (0..rank).map(|j| if i == j { Expr::one() } else { Expr::zero() }).collect();
        Section::from_exprs(dim, c).expect("constant section")
    }
    pub fn exprs(&self) -> Option<&[Expr]> {
        match &self.kind {
            SectionKind::Exprs(c) => Some(c),
            SectionKind::Euler { .. } => None,
        }
    }
    pub fn eval<T: Scalar>(&self, m: &[T]) -> Result<Vec<T>> {
        match &self.kind {
            SectionKind::Exprs(c) => c.iter().map(|e| Ok(e.eval(m)?)).collect(),
            SectionKind::Euler { bundle, p } => {
                let base: Vec<T> = m
                    .iter()
                    .enumerate()
                    .map(|(i, v)| if i < *p { *v } else { T::zero() })
                    .collect();
                let a = bundle.anchor_at(&base)?;
                let ri = right_inverse(&a[*p..])?;
                Ok(ri.iter().map(|row| dot(row, &m[*p..])).collect())
            }
        }
    }
}

/// `a(sigma)` as a vector field.
#[derive(Clone, Debug)]
pub struct AnchorField {
    pub bundle: AnchoredBundle,
    pub section: Section,
}

impl Field for AnchorField {
    fn dim(&self) -> usize {
        self.bundle.dim
    }
    fn kind(&self) -> Kind {
        Kind::Vector
    }
    fn eval<T: Scalar>(&self, m: &[T]) -> Result<Vec<T>> {
        let f = self.section.eval(m)?;
        self.bundle.apply(m, &f)
    }
}

/// Structure functions `c^k_ij` of a Lie algebroid.
#[derive(Clone, Debug)]
enum Structure {
    /// Index `(i * r + j) * r + k`.
    Exprs(Vec<Expr>),
    /// Cotangent algebroid of a bivector: `c^k_ij = d_k pi^{ij}`.
    Cotangent(Bivector),
}

#[derive(Clone, Debug)]
pub struct LieAlgebroid {
    pub base: AnchoredBundle,
    structure: Structure,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlgebroidReport {
    /// `max |sum_k c^k_ij a_k - [a_i, a_j]|`.
    pub anchor_morphism: f64,
    /// `max |Jac(e_i, e_j, e_l)|`.
    pub jacobi: f64,
}

impl LieAlgebroid {
    /// Structure functions from entries `(i, j, k, c^k_ij)` with `i < j`;
    /// the rest follows from antisymmetry.
    pub fn new(base: AnchoredBundle, entries: &[(usize, usize, usize, Expr)]) -> Result<LieAlgebroid> {
        let r = base.rank;
        let mut c = vec![Expr::zero(); r * r * r];
        for (i, j, k, e) in entries {
            let (i, j, k) = (*i, *j, *k);
            if i >= j || j >= r || k >= r {
                return Err(Error::Dimension(format!(
                    "structure entry ({i},{j},{k}) needs i < j < {r}, k < {r}"
                )));
            }
            c[(i * r + j) * r + k] = e.clone();
            c[(j * r + i) * r + k] = e.neg();
        }
        Ok(LieAlgebroid {
            base,
            structure: Structure::Exprs(c),
        })
    }

    pub fn tangent(dim: usize) -> LieAlgebroid {
        LieAlgebroid {
            base: AnchoredBundle::tangent(dim),
            structure: Structure::Exprs(vec![Expr::zero(); dim * dim * dim]),
        }
    }

    /// Cotangent algebroid of a Poisson bivector: `[dx^i, dx^j] = d pi^{ij}`.
    pub fn cotangent(pi: &Bivector) -> LieAlgebroid {
        LieAlgebroid {
            base: AnchoredBundle::cotangent(pi),
            structure: Structure::Cotangent(pi.clone()),
        }
    }

    pub fn rank(&self) -> usize {
        self.base.rank
    }

    /// `c[(i * r + j) * r + k] = c^k_ij` at `m`.
    pub fn structure_at<T: Scalar>(&self, m: &[T]) -> Result<Vec<T>> {
        let r = self.rank();
        match &self.structure {
            Structure::Exprs(c) => c.iter().map(|e| Ok(e.eval(m)?)).collect(),
            Structure::Cotangent(pi) => {
                let v = pi.eval(&dual_point(m)?)?;
                let mut out = vec![T::zero(); r * r * r];
                for i in 0..r {
                    for j in 0..r {
                        let pij = crate::chart::get2(&v, r, i, j);
                        for k in 0..r {
                            out[(i * r + j) * r + k] = pij.grad(k);
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn report_at(&self, m: &[f64]) -> Result<AlgebroidReport> {
        let r = self.rank();
        let n = self.base.dim;
        let c = self.structure_at(m)?;
        let a = self.base.anchor_at(m)?;
        let brackets = self.base.anchor_brackets(m)?;
        let mut morph = 0.0f64;
        let mut idx = 0;
        for i in 0..r {
            for j in i + 1..r {
                for (comp, br) in brackets[idx].iter().enumerate() {
                    let lhs: f64 = (0..r).map(|k| c[(i * r + j) * r + k] * a[comp][k]).sum();
                    morph = morph.max((lhs - br).abs());
                }
                idx += 1;
            }
        }
        // a_l(c^q_ij) needs derivatives of the structure functions.
        let cd = self.structure_at(&dual_point(m)?)?;
        let col = |l: usize| (0..n).map(|b| a[b][l]).collect::<Vec<f64>>();
        let term = |i: usize, j: usize, l: usize, q: usize| -> f64 {
            let quad: f64 = (0..r)
                .map(|mm| c[(i * r + j) * r + mm] * c[(mm * r + l) * r + q])
                .sum();
            quad - along(&cd[(i * r + j) * r + q], &col(l))
        };
        let mut jac = 0.0f64;
        for i in 0..r {
            for j in i + 1..r {
                for l in j + 1..r {
                    for q in 0..r {
                        let v = term(i, j, l, q) + term(j, l, i, q) + term(l, i, j, q);
                        jac = jac.max(v.abs());
                    }
                }
            }
        }
        Ok(AlgebroidReport {
            anchor_morphism: morph,
            jacobi: jac,
        })
    }

    /// Worst residuals over the given points.
    pub fn report(&self, points: &[Vec<f64>]) -> Result<AlgebroidReport> {
        let mut out = AlgebroidReport::default();
        for m in points {
            let r = self.report_at(m)?;
            out.anchor_morphism = out.anchor_morphism.max(r.anchor_morphism);
            out.jacobi = out.jacobi.max(r.jacobi);
        }
        Ok(out)
    }

    pub fn validate(&self, points: &[Vec<f64>], tol: f64) -> Result<AlgebroidReport> {
        let r = self.report(points)?;
        if r.anchor_morphism > tol || r.jacobi > tol {
            return Err(Error::Precondition(format!(
                "not a Lie algebroid: anchor morphism defect {:.3e}, Jacobi defect {:.3e}",
                r.anchor_morphism, r.jacobi
            )));
        }
        Ok(r)
    }

    /// `[sigma, tau]` at `m`.
    pub fn bracket<T: Scalar>(&self, sigma: &Section, tau: &Section, m: &[T]) -> Result<Vec<T>> {
        let r = self.rank();
        let md = dual_point(m)?;
        let f = sigma.eval(&md)?;
        let g = tau.eval(&md)?;
        let fv: Vec<T> = f.iter().map(|d| d.value()).collect();
        let gv: Vec<T> = g.iter().map(|d| d.value()).collect();
        let asig = self.base.apply(m, &fv)?;
        let atau = self.base.apply(m, &gv)?;
        let c = self.structure_at(m)?;
        Ok((0..r)
            .map(|k| {
                let mut v = along(&g[k], &asig) - along(&f[k], &atau);
                for i in 0..r {
                    for j in 0..r {
                        v = v + fv[i] * gv[j] * c[(i * r + j) * r + k];
                    }
                }
                v
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransversalityVerdict {
    pub transverse: bool,
    pub min_rank: usize,
}

/// `a(E) + TN = TM` at each sampled point of `N`.
pub fn check_transversal(
    bundle: &AnchoredBundle,
    tr: &Transversal,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<TransversalityVerdict> {
    let (n, p) = (tr.n(), tr.p);
    let mut min_rank = n;
    for b in points {
        let a = bundle.anchor_matrix(&tr.base_point(b))?;
        let mut m = DMatrix::zeros(n, bundle.rank + p);
        m.view_mut((0, 0), (n, bundle.rank)).copy_from(&a);
        for i in 0..p {
            m[(i, bundle.rank + i)] = 1.0;
        }
        min_rank = min_rank.min(rank_real(&m, tol));
    }
    Ok(TransversalityVerdict {
        transverse: min_rank == n,
        min_rank,
    })
}

/// Euler-like section: `a(eps)` is Euler-like along `N`.
pub fn euler_section(bundle: &AnchoredBundle, tr: &Transversal, points: &[Vec<f64>]) -> Result<Section> {
    if bundle.dim != tr.n() {
        return Err(Error::Dimension("bundle and transversal live on different charts".into()));
    }
    let v = check_transversal(bundle, tr, points, 1e-10)?;
    if !v.transverse {
        return Err(Error::Precondition(format!(
            "N is not transverse to the anchor (rank {} < {})",
            v.min_rank,
            tr.n()
        )));
    }
    // Surjectivity onto the normal directions along the samples.
    for b in points {
        let a = bundle.anchor_matrix(&tr.base_point(b))?;
        let proj = a.rows(tr.p, tr.k()).into_owned();
        if rank_real(&proj, 1e-10) != tr.k() {
            return Err(Error::Precondition("rank jump of E|_N -> normal bundle".into()));
        }
    }
    Ok(Section {
        dim: bundle.dim,
        rank: bundle.rank,
        kind: SectionKind::Euler {
            bundle: bundle.clone(),
            p: tr.p,
        },
    })
}

/// How a section acts on sections: by the algebroid bracket, or by the
/// anchored-bundle operator built from a lift of the torsion.
#[derive(Clone, Debug)]
pub enum Lift {
    Bracket(LieAlgebroid),
    Torsion(AnchoredBundle),
}

impl Lift {
    pub fn bundle(&self) -> &AnchoredBundle {
        match self {
            Lift::Bracket(l) => &l.base,
            Lift::Torsion(b) => b,
        }
    }

    /// Minimum-norm `S_ij` (`i < j`, pair order) with `a(S_ij) = -[a_i, a_j]`.
    pub fn torsion_lift<T: Scalar>(bundle: &AnchoredBundle, m: &[T]) -> Result<Vec<Vec<T>>> {
        let r = bundle.rank;
        if r < 2 {
            return Ok(vec![]);
        }
        let a = bundle.anchor_at(m)?;
        let br = bundle.anchor_brackets(m)?;
        let rhs: Vec<Vec<T>> = (0..bundle.dim)
            .map(|c| br.iter().map(|b| -b[c]).collect())
            .collect();
        let (s, res) = min_norm_solve(&a, &rhs, 1e-10)?;
        if res > 1e-8 {
            return Err(Error::Precondition(format!(
                "anchor image is not involutive: torsion lift residual {res:.3e}"
            )));
        }
        // Transpose to pair-major.
        let np = br.len();
        Ok((0..np).map(|q| (0..r).map(|k| s[k][q]).collect()).collect())
    }

    /// `D_sigma tau` at `m`.
    pub fn apply<T: Scalar>(&self, sigma: &Section, tau: &Section, m: &[T]) -> Result<Vec<T>> {
        match self {
            Lift::Bracket(l) => l.bracket(sigma, tau, m),
            Lift::Torsion(b) => {
                let r = b.rank;
                let md = dual_point(m)?;
                let f = sigma.eval(&md)?;
                let g = tau.eval(&md)?;
                let fv: Vec<T> = f.iter().map(|d| d.value()).collect();
                let gv: Vec<T> = g.iter().map(|d| d.value()).collect();
                let asig = b.apply(m, &fv)?;
                let atau = b.apply(m, &gv)?;
                let s = Lift::torsion_lift(b, m)?;
                let mut out: Vec<T> = (0..r)
                    .map(|k| along(&g[k], &asig) - along(&f[k], &atau))
                    .collect();
                let mut q = 0;
                for i in 0..r {
                    for j in i + 1..r {
                        let w = fv[i] * gv[j] - fv[j] * gv[i];
                        for k in 0..r {
                            out[k] = out[k] - w * s[q][k];
                        }
                        q += 1;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Operator `D_sigma` for an anchored bundle, from the trivial connection
/// corrected by a pointwise lift of its torsion. Fails if the anchor image
/// is not involutive at the sample points.
pub fn anchor_lift_connection(bundle: &AnchoredBundle, points: &[Vec<f64>]) -> Result<Lift> {
    for m in points {
        Lift::torsion_lift(bundle, m)?;
    }
    Ok(Lift::Torsion(bundle.clone()))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConnectionReport {
    /// `D_s(h t) - h D_s t - (a(s) h) t`
    pub derivation: f64,
    /// `a(D_s t) - [a(s), a(t)]`
    pub anchor: f64,
    /// `D_{h s} t - h D_s t + (a(t) h) s`
    pub function_linearity: f64,
}

fn random_poly(dim: usize, rng: &mut ChaCha8Rng) -> Expr {
    let mut terms = vec![Expr::constant(rng.gen_range(-1.0..1.0))];
    for i in 0..dim {
        terms.push(Expr::var(i).scale(rng.gen_range(-1.0..1.0)));
        for j in i..dim {
            terms.push(Expr::var(i).mul(&Expr::var(j)).scale(rng.gen_range(-1.0..1.0)));
        }
    }
    Expr::sum(&terms)
}

/// Checks the defining properties of `D` on random polynomial sections.
pub fn check_connection(lift: &Lift, points: &[Vec<f64>], seed: u64) -> Result<ConnectionReport> {
    let b = lift.bundle();
    let (n, r) = (b.dim, b.rank);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = ConnectionReport::default();
    for m in points {
        let s: Vec<Expr> = (0..r).map(|_| random_poly(n, &mut rng)).collect();
        let t: Vec<Expr> = (0..r).map(|_| random_poly(n, &mut rng)).collect();
        let h = random_poly(n, &mut rng);
        let sigma = Section::from_exprs(n, s.clone())?;
        let tau = Section::from_exprs(n, t.clone())?;
        let h_tau = Section::from_exprs(n, t.iter().map(|e| h.mul(e)).collect())?;
        let h_sigma = Section::from_exprs(n, s.iter().map(|e| h.mul(e)).collect())?;
        let hv = h.eval(m.as_slice())?;
        let hd = h.eval(&Dual::coords(m))?;
        let sv = sigma.eval(m)?;
        let tv = tau.eval(m)?;
        let a_s = b.apply(m, &sv)?;
        let a_t = b.apply(m, &tv)?;
        let d_st = lift.apply(&sigma, &tau, m.as_slice())?;
        let d_s_ht = lift.apply(&sigma, &h_tau, m.as_slice())?;
        let d_hs_t = lift.apply(&h_sigma, &tau, m.as_slice())?;
        let (as_h, at_h) = (along(&hd, &a_s), along(&hd, &a_t));
        for k in 0..r {
            rep.derivation = rep
                .derivation
                .max((d_s_ht[k] - hv * d_st[k] - as_h * tv[k]).abs());
            rep.function_linearity = rep
                .function_linearity
                .max((d_hs_t[k] - hv * d_st[k] + at_h * sv[k]).abs());
        }
        let lhs = b.apply(m, &d_st)?;
        let fs = AnchorField {
            bundle: b.clone(),
            section: sigma.clone(),
        };
        let ft = AnchorField {
            bundle: b.clone(),
            section: tau.clone(),
        };
        let md = Dual::coords(m);
        let br = bracket_values(&fs.eval(&md)?, &ft.eval(&md)?);
        for (x, y) in lhs.iter().zip(&br) {
            rep.anchor = rep.anchor.max((x - y).abs());
        }
    }
    Ok(rep)
}

/// `D_eps` for a fixed section `eps`, covering the vector field `a(eps)`.
#[derive(Clone, Debug)]
pub struct FiberDerivation {
    pub lift: Lift,
    pub eps: Section,
}

/// The bracket lift `D_eps = [eps, .]` of a Lie algebroid.
pub fn bracket_lift(l: &LieAlgebroid, eps: &Section, points: &[Vec<f64>]) -> Result<FiberDerivation> {
    l.validate(points, 1e-8)?;
    if eps.rank != l.rank() || eps.dim != l.base.dim {
        return Err(Error::Dimension("section does not match the algebroid".into()));
    }
    Ok(FiberDerivation {
        lift: Lift::Bracket(l.clone()),
        eps: eps.clone(),
    })
}

/// Transported frame: `A(s)` over the base point `Phi_s(m)`.
#[derive(Clone, Debug)]
pub struct Transported<T> {
    pub base: Vec<T>,
    /// `A[k][i]`, row-major `r x r`.
    pub frame: Vec<Vec<T>>,
    pub s: f64,
}

impl FiberDerivation {
    pub fn bundle(&self) -> &AnchoredBundle {
        self.lift.bundle()
    }

    pub fn generator(&self) -> AnchorField {
        AnchorField {
            bundle: self.bundle().clone(),
            section: self.eps.clone(),
        }
    }

    /// `C[k][i]` with `D_eps e_i = sum_k C[k][i] e_k`.
    pub fn matrix<T: Scalar>(&self, m: &[T]) -> Result<Vec<Vec<T>>> {
        let b = self.bundle();
        let (n, r) = (b.dim, b.rank);
        let mut c = vec![vec![T::zero(); r]; r];
        for i in 0..r {
            let col = self.lift.apply(&self.eps, &Section::basis(n, r, i), m)?;
            for k in 0..r {
                c[k][i] = col[k];
            }
        }
        Ok(c)
    }

    fn rhs<T: Scalar>(&self, st: &[T]) -> Result<Vec<T>> {
        let b = self.bundle();
        let (n, r) = (b.dim, b.rank);
        let m = &st[..n];
        let mut out = self.generator().eval(m)?;
        let c = self.matrix(m)?;
        for k in 0..r {
            for i in 0..r {
                let mut v = T::zero();
                for l in 0..r {
                    v = v + c[k][l] * st[n + l * r + i];
                }
                out.push(-v);
            }
        }
        Ok(out)
    }

    fn pack<T: Scalar>(&self, m: &[T], a: &[Vec<T>]) -> Vec<T> {
        let mut st = m.to_vec();
        for row in a {
            st.extend_from_slice(row);
        }
        st
    }

    fn unpack<T: Scalar>(&self, st: &[T], s: f64) -> Transported<T> {
        let (n, r) = (self.bundle().dim, self.bundle().rank);
        Transported {
            base: st[..n].to_vec(),
            frame: (0..r).map(|k| st[n + k * r..n + (k + 1) * r].to_vec()).collect(),
            s,
        }
    }

    /// Transport of the frame from `s = 0` to `s` along the flow of `a(eps)`.
    pub fn transport<T: Scalar>(&self, m: &[T], s: f64, cfg: &FlowConfig) -> Result<Transported<T>> {
        let r = self.bundle().rank;
        let id: Vec<Vec<T>> = (0..r)
            .map(|k| (0..r).map(|i| if k == i { T::one() } else { T::zero() }).collect())
            .collect();
        let st = self.pack(m, &id);
        let out = integrate(|_, y: &[T]| self.rhs(y), 0.0, s, &st, cfg)?.finish()?;
        Ok(self.unpack(&out, s))
    }

    /// The limit `s -> -inf`, integrated in unit chunks until two
    /// consecutive frames agree to [`TRANSPORT_TOL`].
    pub fn transport_limit<T: Scalar>(&self, m: &[T], cfg: &FlowConfig) -> Result<Transported<T>> {
        let (n, r) = (self.bundle().dim, self.bundle().rank);
        let id: Vec<Vec<T>> = (0..r)
            .map(|k| (0..r).map(|i| if k == i { T::one() } else { T::zero() }).collect())
            .collect();
        let mut st = self.pack(m, &id);
        let mut s = 0.0;
        while s > -S_MAX {
            let next = integrate(|_, y: &[T]| self.rhs(y), s, s - 1.0, &st, cfg)?.finish()?;
            s -= 1.0;
            let change = next[n..]
                .iter()
                .zip(&st[n..])
                .fold(0.0f64, |acc, (a, b)| acc.max((*a - *b).mag()));
            let size = next[n..].iter().fold(0.0f64, |acc, a| acc.max(a.mag()));
            st = next;
            if !size.is_finite() || size > 1e12 {
                return Err(Error::Transport(format!(
                    "frame transport diverges (|A| = {size:.3e} at s = {s}); D_eps is not Euler-like along the restricted bundle"
                )));
            }
            if change < TRANSPORT_TOL {
                return Ok(self.unpack(&st, s));
            }
        }
        Err(Error::Transport(format!(
            "frame transport did not settle by s = -{S_MAX}"
        )))
    }
}

/// `i^!E = a^{-1}(TN)` along `N` and its pullback `p^! i^! E` to the normal bundle.
#[derive(Clone, Debug)]
pub struct PullbackBundle {
    pub transversal: Transversal,
    pub bundle: AnchoredBundle,
    /// Rank of `i^!E`.
    pub restricted_rank: usize,
}

impl PullbackBundle {
    pub fn new(bundle: &AnchoredBundle, tr: &Transversal, points: &[Vec<f64>]) -> Result<PullbackBundle> {
        let mut ranks = points
            .iter()
            .map(|b| Ok(PullbackBundle::kernel(bundle, tr, b)?.ncols()))
            .collect::<Result<Vec<usize>>>()?;
        ranks.dedup();
        if ranks.len() > 1 {
            return Err(Error::Precondition(format!(
                "rank of the restricted bundle jumps along N: {ranks:?}"
            )));
        }
        let restricted_rank = ranks.first().copied().unwrap_or(bundle.rank - tr.k());
        Ok(PullbackBundle {
            transversal: tr.clone(),
            bundle: bundle.clone(),
            restricted_rank,
        })
    }

    fn kernel(bundle: &AnchoredBundle, tr: &Transversal, w: &[f64]) -> Result<DMatrix<f64>> {
        let a = bundle.anchor_matrix(&tr.base_point(w))?;
        let proj = a.rows(tr.p, tr.k()).into_owned();
        let ns = nullspace(&to_complex(&proj), 1e-10);
        Ok(ns.map(|c| c.re))
    }

    /// Frame of `i^!E` at the base point of `w` (`r x rank`).
    pub fn restricted_frame(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        PullbackBundle::kernel(&self.bundle, &self.transversal, w)
    }

    /// Frame of `p^! i^! E` at `w`: columns `(zeta; v)` of length `r + n`.
    pub fn frame(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        let tr = &self.transversal;
        let (n, p, r) = (tr.n(), tr.p, self.bundle.rank);
        let ker = self.restricted_frame(w)?;
        let a = self.bundle.anchor_matrix(&tr.base_point(w))?;
        let d = ker.ncols() + tr.k();
        let mut f = DMatrix::zeros(r + n, d);
        for c in 0..ker.ncols() {
            let z = ker.column(c);
            f.view_mut((0, c), (r, 1)).copy_from(&z);
            let az = &a * z;
            for i in 0..p {
                f[(r + i, c)] = az[i];
            }
        }
        for j in 0..tr.k() {
            f[(r + p + j, ker.ncols() + j)] = 1.0;
        }
        Ok(f)
    }

    /// Distance of `(zeta, v)` from the fibre at `w`: `a(zeta) = (v_y, 0)`.
    pub fn membership_residual(&self, w: &[f64], zeta: &[f64], v: &[f64]) -> Result<f64> {
        let tr = &self.transversal;
        let az = self.bundle.apply(&tr.base_point(w), zeta)?;
        Ok(az
            .iter()
            .enumerate()
            .map(|(i, x)| if i < tr.p { (x - v[i]).abs() } else { x.abs() })
            .fold(0.0, f64::max))
    }
}

/// Normal form of `E` near `N` built from an Euler-like section and a lift.
#[derive(Clone, Debug)]
pub struct AlgebroidNormalForm {
    pub derivation: FiberDerivation,
    pub embedding: TubularEmbedding<AnchorField>,
    pub pullback: PullbackBundle,
}

/// The fibre map at one point `m = psi(w)`.
#[derive(Clone, Debug)]
pub struct FiberMap {
    pub m: Vec<f64>,
    pub w: Vec<f64>,
    /// `lim A(s)`, mapping `E_m` to `E` over the base point of `w`.
    pub lambda0: DMatrix<f64>,
    /// `D psi(w)^{-1} a(m)`.
    pub tangent_part: DMatrix<f64>,
    /// `xi -> (lambda0 xi, D psi^{-1} a(xi))`, shape `(r + n) x r`.
    pub forward: DMatrix<f64>,
    /// The normal-form map `p^! i^! E -> E` on the image of `forward`.
    pub inverse: DMatrix<f64>,
    /// Largest membership residual of the image in `p^! i^! E`.
    pub image_residual: f64,
    pub transport_time: f64,
}

pub fn algebroid_normal_form(
    derivation: FiberDerivation,
    tr: &Transversal,
    points: &[Vec<f64>],
    cfg: &LinearizeConfig,
) -> Result<AlgebroidNormalForm> {
    let b = derivation.bundle().clone();
    for pt in points {
        let e = derivation.eps.eval(&tr.base_point(pt))?;
        let worst = e.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if worst > 1e-10 {
            return Err(Error::Precondition(format!(
                "section does not vanish on N (|eps| = {worst:.3e})"
            )));
        }
    }
    let pullback = PullbackBundle::new(&b, tr, points)?;
    if pullback.restricted_rank + tr.k() != b.rank {
        return Err(Error::Precondition("N is not transverse to the anchor".into()));
    }
    let embedding = linearize(&derivation.generator(), tr, cfg)?;
    Ok(AlgebroidNormalForm {
        derivation,
        embedding,
        pullback,
    })
}

impl AlgebroidNormalForm {
    fn cfg(&self) -> &FlowConfig {
        &self.embedding.cfg
    }

    pub fn fiber_map(&self, m: &[f64]) -> Result<FiberMap> {
        let b = self.derivation.bundle();
        let (n, r) = (b.dim, b.rank);
        let w = self.embedding.psi_inverse(m)?;
        let tp = self.derivation.transport_limit(m, self.cfg())?;
        let lambda0 = DMatrix::from_fn(r, r, |k, i| tp.frame[k][i]);
        let (_, j) = self.embedding.psi_jacobian(&w)?;
        let a = b.anchor_matrix(m)?;
        let tangent_part = j.lu().solve(&a).ok_or(Error::Singular)?;
        let mut forward = DMatrix::zeros(r + n, r);
        forward.view_mut((0, 0), (r, r)).copy_from(&lambda0);
        forward.view_mut((r, 0), (n, r)).copy_from(&tangent_part);
        let mut image_residual = 0.0f64;
        for c in 0..r {
            let z: Vec<f64> = lambda0.column(c).iter().copied().collect();
            let v: Vec<f64> = tangent_part.column(c).iter().copied().collect();
            image_residual = image_residual.max(self.pullback.membership_residual(&w, &z, &v)?);
        }
        let inverse = crate::linalg::pinv(&forward, 1e-12);
        Ok(FiberMap {
            m: m.to_vec(),
            w,
            lambda0,
            tangent_part,
            forward,
            inverse,
            image_residual,
            transport_time: tp.s,
        })
    }

    /// `max |a(A(s)) - D Phi_s a|` at `s = log t`; `None` means `t -> 0`.
    pub fn anchor_residual(&self, m: &[f64], t: Option<f64>) -> Result<f64> {
        let b = self.derivation.bundle();
        let tp = match t {
            Some(t) => self.derivation.transport(m, t.ln(), self.cfg())?,
            None => self.derivation.transport_limit(m, self.cfg())?,
        };
        let fl = flow(&self.derivation.generator(), m, tp.s, self.cfg(), true)?;
        let a_end = b.anchor_matrix(&tp.base)?;
        let frame = DMatrix::from_fn(b.rank, b.rank, |k, i| tp.frame[k][i]);
        let lhs = a_end * frame;
        let rhs = fl.jacobian.expect("requested") * b.anchor_matrix(m)?;
        Ok((lhs - rhs).amax())
    }

    /// The sections `S_i(w) = (Lambda(psi w) e_i, D psi(w)^{-1} a(psi w) e_i)`
    /// of `p^! i^! E` that the normal-form map sends to the frame `e_i`.
    /// Returns `psi(w)`, the `zeta` parts and the vector parts, indexed by `i`.
    #[allow(clippy::type_complexity)]
    pub fn frame_sections<T: Scalar>(&self, w: &[T]) -> Result<(Vec<T>, Vec<Vec<T>>, Vec<Vec<T>>)> {
        let b = self.derivation.bundle();
        let r = b.rank;
        let (m, j) = jacobian_generic(&self.embedding, w)?;
        let tp = self.derivation.transport_limit(&m, self.cfg())?;
        let a = b.anchor_at(&m)?;
        let u = solve(&j, &a)?;
        let zeta = (0..r).map(|i| (0..r).map(|k| tp.frame[k][i]).collect()).collect();
        let vec = (0..r).map(|i| u.iter().map(|row| row[i]).collect()).collect();
        Ok((m, zeta, vec))
    }

    /// For `E = TM` with the identity anchor: `|psi~ - D psi|` at `w`, where
    /// `psi~` is applied to `(zeta, u)` with `zeta` the leaf part of `u`.
    pub fn differential_residual(&self, w: &[f64]) -> Result<f64> {
        let b = self.derivation.bundle();
        let n = b.dim;
        let p = self.embedding.transversal.p;
        let m = self.embedding.psi(w)?;
        if b.rank != n || (b.anchor_matrix(&m)? - DMatrix::identity(n, n)).amax() != 0.0 {
            return Err(Error::Precondition("anchor is not the identity of TM".into()));
        }
        let fm = self.fiber_map(&m)?;
        let (_, j) = self.embedding.psi_jacobian(&fm.w)?;
        let mut worst = 0.0f64;
        for c in 0..n {
            let mut col = DMatrix::zeros(2 * n, 1);
            col[(n + c, 0)] = 1.0;
            if c < p {
                col[(c, 0)] = 1.0;
            }
            let xi = &fm.inverse * col;
            for a in 0..n {
                worst = worst.max((xi[a] - j[(a, c)]).abs());
            }
        }
        Ok(worst)
    }

    /// `max |[S_i, S_j] - sum_k c^k_ij(psi w) S_k|` over frame pairs.
    pub fn bracket_residual(&self, l: &LieAlgebroid, w: &[f64]) -> Result<f64> {
        let r = l.rank();
        let n = l.base.dim;
        let wd = dual_point(w)?;
        let (m, zeta, u) = self.frame_sections(&wd)?;
        let mv: Vec<f64> = m.iter().map(|d| d.value()).collect();
        let c_m = l.structure_at(&mv)?;
        let c_q = l.structure_at(&self.embedding.transversal.base_point(w))?;
        let val = |v: &[Dual<f64>]| v.iter().map(|d| d.value()).collect::<Vec<f64>>();
        let uv: Vec<Vec<f64>> = u.iter().map(|x| val(x)).collect();
        let zv: Vec<Vec<f64>> = zeta.iter().map(|x| val(x)).collect();
        let mut worst = 0.0f64;
        for i in 0..r {
            for j in i + 1..r {
                for k in 0..r {
                    let mut lhs = along(&zeta[j][k], &uv[i]) - along(&zeta[i][k], &uv[j]);
                    for a in 0..r {
                        for bb in 0..r {
                            lhs += zv[i][a] * zv[j][bb] * c_q[(a * r + bb) * r + k];
                        }
                    }
                    let rhs: f64 = (0..r).map(|q| c_m[(i * r + j) * r + q] * zv[q][k]).sum();
                    worst = worst.max((lhs - rhs).abs());
                }
                let br = bracket_values(&u[i], &u[j]);
                for c in 0..n {
                    let rhs: f64 = (0..r).map(|q| c_m[(i * r + j) * r + q] * uv[q][c]).sum();
                    worst = worst.max((br[c] - rhs).abs());
                }
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn so3() -> Bivector {
        Bivector::parse_entries(3, &[(0, 1, "x3"), (0, 2, "-x2"), (1, 2, "x1")]).unwrap()
    }

    #[test]
    fn transversality_examples() {
        let tr = Transversal::standard(3, 1).unwrap();
        let pts = tr.sample_base(0.3, 5, 1);
        assert!(check_transversal(&AnchoredBundle::tangent(3), &tr, &pts, 1e-10).unwrap().transverse);
        let zero = AnchoredBundle::new(3, vec![vec![Expr::zero()]; 3]).unwrap();
        assert!(!check_transversal(&zero, &tr, &pts, 1e-10).unwrap().transverse);
        // so3* along the z-axis through z = 1, in the original coordinates.
        let e = AnchoredBundle::cotangent(&so3());
        let a = e.anchor_matrix(&[0.0, 0.0, 1.0]).unwrap();
        let mut m = DMatrix::zeros(3, 4);
        m.view_mut((0, 0), (3, 3)).copy_from(&a);
        m[(2, 3)] = 1.0;
        assert_eq!(rank_real(&m, 1e-10), 3);
    }

    #[test]
    fn tangent_euler_section_is_euler_field() {
        let tr = Transversal::standard(3, 1).unwrap();
        let pts = tr.sample_base(0.3, 5, 1);
        let eps = euler_section(&AnchoredBundle::tangent(3), &tr, &pts).unwrap();
        let v = eps.eval(&[0.4, 0.2, -0.1]).unwrap();
        assert!((v[0]).abs() < 1e-15 && (v[1] - 0.2).abs() < 1e-15 && (v[2] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn canonical_graph_euler_section() {
        // Frame {dq, dp} with anchor pi_0^#: dq -> -d/dp, dp -> d/dq.
        let pi0 = Bivector::canonical(2, 0);
        let e = AnchoredBundle::cotangent(&pi0);
        let tr = Transversal::standard(2, 0).unwrap();
        let eps = euler_section(&e, &tr, &[vec![0.0, 0.0]]).unwrap();
        let v = eps.eval(&[0.3, -0.7]).unwrap();
        // q dp - p dq
        assert!((v[0] - 0.7).abs() < 1e-15 && (v[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn structure_validation() {
        let l = LieAlgebroid::cotangent(&so3());
        let pts = Transversal::standard(3, 0).unwrap().sample(1.0, 10, 3);
        let r = l.validate(&pts, 1e-12).unwrap();
        assert!(r.jacobi < 1e-14 && r.anchor_morphism < 1e-14);
        let bad = LieAlgebroid::new(
            AnchoredBundle::tangent(2),
            &[(0, 1, 0, Expr::one())],
        )
        .unwrap();
        assert!(bad.validate(&pts.iter().map(|p| p[..2].to_vec()).collect::<Vec<_>>(), 1e-8).is_err());
    }

    #[test]
    fn bracket_lift_of_euler_on_tangent_is_minus_identity() {
        let l = LieAlgebroid::tangent(3);
        let eps = Section::parse(3, &["x1", "x2", "x3"]).unwrap();
        let d = bracket_lift(&l, &eps, &[vec![0.1, 0.2, 0.3]]).unwrap();
        let c = d.matrix(&[0.3, -0.2, 0.5]).unwrap();
        for k in 0..3 {
            for i in 0..3 {
                assert_eq!(c[k][i], if k == i { -1.0 } else { 0.0 });
            }
        }
        let z = bracket_lift(&l, &Section::zero(3, 3), &[vec![0.0; 3]]).unwrap();
        assert!(z.matrix(&[0.3, -0.2, 0.5]).unwrap().iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn connection_contracts() {
        let pts = Transversal::standard(2, 0).unwrap().sample(1.0, 50, 4);
        let b = AnchoredBundle::parse(2, &[&["0"], &["x1"]]).unwrap();
        let lift = anchor_lift_connection(&b, &pts).unwrap();
        let rep = check_connection(&lift, &pts, 9).unwrap();
        assert!(rep.derivation < 1e-12 && rep.anchor < 1e-12 && rep.function_linearity < 1e-12, "{rep:?}");
        let b = AnchoredBundle::cotangent(&so3());
        let pts3 = Transversal::standard(3, 0).unwrap().sample(1.0, 30, 4);
        let lift = anchor_lift_connection(&b, &pts3).unwrap();
        let rep = check_connection(&lift, &pts3, 9).unwrap();
        assert!(rep.derivation < 1e-10 && rep.anchor < 1e-10 && rep.function_linearity < 1e-10, "{rep:?}");
        let rep = check_connection(&Lift::Bracket(LieAlgebroid::cotangent(&so3())), &pts3, 9).unwrap();
        assert!(rep.derivation < 1e-12 && rep.anchor < 1e-12 && rep.function_linearity < 1e-12, "{rep:?}");
        // d/dx and x d/dy: their bracket d/dy is outside the image at x = 0.
        let ni = AnchoredBundle::parse(2, &[&["1", "0"], &["0", "x1"]]).unwrap();
        assert!(anchor_lift_connection(&ni, &[vec![0.0, 0.3]]).is_err());
    }

    #[test]
    fn tangent_normal_form_is_differential() {
        let tr = Transversal::standard(2, 1).unwrap();
        let x = Section::parse(2, &["x1*x2", "x2 + x2^2"]).unwrap();
        let pts = tr.sample_base(0.3, 5, 2);
        let d = bracket_lift(&LieAlgebroid::tangent(2), &x, &pts).unwrap();
        let cfg = LinearizeConfig {
            samples: 10,
            ..Default::default()
        };
        let nf = algebroid_normal_form(d, &tr, &pts, &cfg).unwrap();
        let m = [0.1, 0.15];
        let fm = nf.fiber_map(&m).unwrap();
        assert!(fm.image_residual < 1e-8, "{}", fm.image_residual);
        let (_, j) = nf.embedding.psi_jacobian(&fm.w).unwrap();
        for b in 0..2 {
            let mut col = DMatrix::zeros(4, 1);
            col[(2 + b, 0)] = 1.0;
            if b == 0 {
                col[(0, 0)] = 1.0;
            }
            let xi = &fm.inverse * col;
            for a in 0..2 {
                assert!((xi[a] - j[(a, b)]).abs() < 1e-6, "{xi} vs {j}");
            }
        }
        for t in [Some(1.0), Some(0.5), Some(0.25), None] {
            assert!(nf.anchor_residual(&m, t).unwrap() < 1e-6);
        }
    }

    #[test]
    fn so3_cotangent_normal_form_preserves_brackets() {
        // so3* near (0, 0, 1) in coordinates w = (z - 1, x, y).
        let pi = Bivector::parse_entries(3, &[(0, 1, "x3"), (0, 2, "-x2"), (1, 2, "x1 + 1")])
            .unwrap();
        let l = LieAlgebroid::cotangent(&pi);
        let tr = Transversal::standard(3, 1).unwrap();
        let pts = tr.sample_base(0.2, 5, 3);
        let eps = euler_section(&l.base, &tr, &pts).unwrap();
        let d = bracket_lift(&l, &eps, &pts).unwrap();
        let cfg = LinearizeConfig {
            samples: 5,
            radius: 0.2,
            ..Default::default()
        };
        let nf = algebroid_normal_form(d, &tr, &pts, &cfg).unwrap();
        for w in tr.sample(0.15, 4, 11) {
            let res = nf.bracket_residual(&l, &w).unwrap();
            assert!(res < 1e-5, "bracket residual {res:.3e} at {w:?}");
            let m = nf.embedding.psi(&w).unwrap();
            let fm = nf.fiber_map(&m).unwrap();
            assert!(fm.image_residual < 1e-6);
            assert!(nf.anchor_residual(&m, None).unwrap() < 1e-6);
        }
    }
}
