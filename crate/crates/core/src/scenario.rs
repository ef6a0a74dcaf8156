//! Scenario files and the runner that turns one into a [`SplittingReport`].
//!
//! A scenario is JSON. Structure data is given in the original coordinates
//! as strings in the expression grammar, with 1-based indices; the
//! transversal spec moves `N` onto `{x = 0}` by an affine change
//! `u = offset + A w`, and everything is converted to the adapted
//! coordinates `w` before any check runs.

use crate::algebroid::{
    algebroid_normal_form, anchor_lift_connection, bracket_lift, euler_section, AnchoredBundle,
    FiberDerivation, LieAlgebroid, Section,
};
use crate::chart::{
    jacobiator, Bivector, Chart, AffineAdapter, Field, Kind, OneForm, ScalarField, ThreeForm,
    Transversal, TwoForm, VectorField,
};
use crate::dirac::{graph_of_bivector, graph_of_twoform, CourantSection, DiracFrame, GCSData, TwistedCourant};
use crate::error::Error;
use crate::euler::{default_base_points, linearize, LinearizeConfig};
use crate::expr::{parse, Expr, Scalar};
use crate::normalform::{
    alpha_for_cosymplectic, cosymplectic_check, dirac_normal_form, euler_check, gcs_normal_form,
    sample_residuals, weinstein_split, Check, DiracNormalForm, PoissonSection, QuadratureConfig,
    Sample, SharpSection, SplittingReport, COND_GUARD,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    /// The file does not match the schema; `path` points at the field.
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Numeric(#[from] Error),
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

type Res<T> = std::result::Result<T, ScenarioError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Euler,
    Poisson,
    Dirac,
    Gcs,
    Algebroid,
}

/// `N = {x = 0}` in adapted coordinates `w = (y, x)` with `y` of length `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransversalSpec {
    pub p: usize,
    /// Original coordinates of the adapted origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<f64>>,
    /// Rows of `A` in `u = offset + A w`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Adapted coordinate `j` is original coordinate `order[j]` (1-based).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<usize>>,
}

/// `[i, j, "expr"]`: the coefficient of `e^i ^ e^j`, 1-based.
pub type Entry2 = (usize, usize, String);
/// `[i, j, k, "expr"]`, 1-based.
pub type Entry3 = (usize, usize, usize, String);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSpec {
    pub vector: Vec<String>,
    pub form: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum GcsFactor {
    /// `diag(J, -J^T)`; `j[a][b]` is component `a` of `J(d_b)`.
    Complex { j: Vec<Vec<String>> },
    /// `omega` and `pi = omega^{-1}` on the factor.
    Symplectic { omega: Vec<Entry2>, pi: Vec<Entry2> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcsSpec {
    /// Block product in order; ignored when `matrix` is set.
    #[serde(default)]
    pub factors: Vec<GcsFactor>,
    /// The full `2n x 2n` matrix of `J` on `(d_1..d_n, dx^1..dx^n)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<String>>>,
    /// `J -> R_B J R_{-B}` applied after the product.
    #[serde(default)]
    pub b_field: Vec<Entry2>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgebroidType {
    Tangent,
    /// `T*M` of the scenario's bivector.
    Cotangent,
    Custom,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiftKind {
    #[default]
    Bracket,
    Torsion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebroidSpec {
    #[serde(rename = "type")]
    pub kind: AlgebroidType,
    /// Custom only: `anchor[i][a]` is component `i` of `a(e_a)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Vec<Vec<String>>>,
    /// Custom only: `[i, j, k, c^k_ij]` with `i < j`.
    #[serde(default)]
    pub structure: Vec<Entry3>,
    #[serde(default)]
    pub lift: LiftKind,
    /// Euler-like section; built from the anchor when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sampling {
    /// Points for the cheap checks.
    pub count: usize,
    /// Points for checks that run the gauge-form quadrature.
    pub heavy: usize,
    /// Points used to certify the embedding domain.
    pub domain: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            count: 100,
            heavy: 10,
            domain: 20,
            radius: 0.3,
            seed: 0,
        }
    }
}

/// Integrator tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rel: 1e-10, abs: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Which result the scenario exercises.
    #[serde(default)]
    pub anchor: String,
    pub kind: ScenarioKind,
    pub dim: usize,
    pub transversal: TransversalSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bivector: Vec<Entry2>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub two_form: Vec<Entry2>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eta: Vec<Entry3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector_field: Option<Vec<String>>,
    /// Dirac section `X + alpha` used instead of the default construction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<EpsilonSpec>,
    /// One-form `alpha`; with a bivector, `eps = pi^#(alpha) + alpha`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub casimir: Option<String>,
    /// Expected gauge form, in adapted coordinates.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expected_omega: Vec<Entry2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gcs: Option<GcsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algebroid: Option<AlgebroidSpec>,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
}

// ---------------------------------------------------------------------------
// Builtins

pub struct Builtin {
    pub name: &'static str,
    pub source: &'static str,
}

const BUILTINS: &[Builtin] = &[
    Builtin {
        name: "canonical-r4",
        source: include_str!("../scenarios/canonical-r4.json"),
    },
    Builtin {
        name: "so3-star",
        source: include_str!("../scenarios/so3-star.json"),
    },
    Builtin {
        name: "heisenberg",
        source: include_str!("../scenarios/heisenberg.json"),
    },
    Builtin {
        name: "twisted-graph",
        source: include_str!("../scenarios/twisted-graph.json"),
    },
    Builtin {
        name: "gcs-product-shear",
        source: include_str!("../scenarios/gcs-product-shear.json"),
    },
    Builtin {
        name: "tangent-algebroid",
        source: include_str!("../scenarios/tangent-algebroid.json"),
    },
    Builtin {
        name: "euler-blowup",
        source: include_str!("../scenarios/euler-blowup.json"),
    },
    Builtin {
        name: "so3-algebroid",
        source: include_str!("../scenarios/so3-algebroid.json"),
    },
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub kind: ScenarioKind,
    pub description: String,
    pub anchor: String,
}

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|b| b.name).collect()
}

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|b| b.name == name).map(|b| b.source)
}

pub fn builtin(name: &str) -> Option<Scenario> {
    builtin_source(name).map(|s| Scenario::from_json(s).expect("builtin scenarios are valid"))
}

/// Names, kinds and one-line descriptions of the builtin scenarios.
pub fn list_builtins() -> Vec<CatalogEntry> {
    BUILTINS
        .iter()
        .map(|b| {
            let s = Scenario::from_json(b.source).expect("builtin scenarios are valid");
            CatalogEntry {
                name: s.name,
                kind: s.kind,
                description: s.description,
                anchor: s.anchor,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Parsing and validation

fn expr(path: &str, src: &str, dim: usize) -> Res<Expr> {
    parse(src, dim).map_err(|e| schema(path, format!("{e} in {src:?}")))
}

fn exprs(path: &str, src: &[String], len: usize, dim: usize) -> Res<Vec<Expr>> {
    if src.len() != len {
        return Err(schema(path, format!("expected {len} components, found {}", src.len())));
    }
    src.iter()
        .enumerate()
        .map(|(i, s)| expr(&format!("{path}[{i}]"), s, dim))
        .collect()
}

fn index(path: &str, i: usize, dim: usize) -> Res<usize> {
    if i == 0 || i > dim {
        return Err(schema(path, format!("index {i} outside 1..={dim}")));
    }
    Ok(i - 1)
}

fn entries2(path: &str, src: &[Entry2], dim: usize) -> Res<Vec<(usize, usize, Expr)>> {
    src.iter()
        .enumerate()
        .map(|(e, (i, j, s))| {
            let p = format!("{path}[{e}]");
            let (a, b) = (index(&format!("{p}[0]"), *i, dim)?, index(&format!("{p}[1]"), *j, dim)?);
            if a == b {
                return Err(schema(&p, "repeated index"));
            }
            Ok((a, b, expr(&format!("{p}[2]"), s, dim)?))
        })
        .collect()
}

fn entries3(path: &str, src: &[Entry3], dim: usize) -> Res<Vec<(usize, usize, usize, Expr)>> {
    src.iter()
        .enumerate()
        .map(|(e, (i, j, k, s))| {
            let p = format!("{path}[{e}]");
            let a = index(&format!("{p}[0]"), *i, dim)?;
            let b = index(&format!("{p}[1]"), *j, dim)?;
            let c = index(&format!("{p}[2]"), *k, dim)?;
            Ok((a, b, c, expr(&format!("{p}[3]"), s, dim)?))
        })
        .collect()
}

fn matrix_strings(path: &str, rows: &[Vec<String>], r: usize, c: usize, dim: usize) -> Res<Vec<Vec<Expr>>> {
    if rows.len() != r {
        return Err(schema(path, format!("expected {r} rows, found {}", rows.len())));
    }
    rows.iter()
        .enumerate()
        .map(|(i, row)| exprs(&format!("{path}[{i}]"), row, c, dim))
        .collect()
}

impl Scenario {
    /// Parses and validates; schema errors carry the path of the offending field.
    pub fn from_json(src: &str) -> Res<Scenario> {
        let de = &mut serde_json::Deserializer::from_str(src);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema(if path.is_empty() { ".".into() } else { path }, e.into_inner().to_string())
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Structural checks beyond the JSON shape; parses every expression.
    pub fn validate(&self) -> Res<()> {
        let n = self.dim;
        if n == 0 {
            return Err(schema("dim", "must be positive"));
        }
        self.adapter()?;
        if self.transversal.p > n {
            return Err(schema("transversal.p", format!("{} exceeds dim {n}", self.transversal.p)));
        }
        entries2("bivector", &self.bivector, n)?;
        entries2("two_form", &self.two_form, n)?;
        entries3("eta", &self.eta, n)?;
        entries2("expected_omega", &self.expected_omega, n)?;
        if let Some(v) = &self.vector_field {
            exprs("vector_field", v, n, n)?;
        }
        if let Some(e) = &self.epsilon {
            exprs("epsilon.vector", &e.vector, n, n)?;
            exprs("epsilon.form", &e.form, n, n)?;
        }
        if let Some(a) = &self.alpha {
            exprs("alpha", a, n, n)?;
        }
        if let Some(c) = &self.casimir {
            expr("casimir", c, n)?;
        }
        let s = &self.sampling;
        if !(s.radius > 0.0 && s.radius.is_finite()) {
            return Err(schema("sampling.radius", "must be positive"));
        }
        if s.count == 0 || s.heavy == 0 || s.domain == 0 {
            return Err(schema("sampling", "counts must be positive"));
        }
        if !(self.tolerances.rel > 0.0 && self.tolerances.abs > 0.0) {
            return Err(schema("tolerances", "must be positive"));
        }
        let q = &self.quadrature;
        if q.nodes == 0 || q.max_nodes < q.nodes || !(q.tol > 0.0) {
            return Err(schema("quadrature", "need 0 < nodes <= max_nodes and tol > 0"));
        }
        let need = |ok: bool, path: &str, msg: &str| if ok { Ok(()) } else { Err(schema(path, msg)) };
        match self.kind {
            ScenarioKind::Euler => need(self.vector_field.is_some(), "vector_field", "required for kind euler")?,
            ScenarioKind::Poisson => need(!self.bivector.is_empty(), "bivector", "required for kind poisson")?,
            ScenarioKind::Dirac => {
                need(
                    self.bivector.is_empty() != self.two_form.is_empty(),
                    "two_form",
                    "kind dirac needs exactly one of bivector and two_form",
                )?;
                need(
                    !self.two_form.is_empty() || self.eta.is_empty(),
                    "eta",
                    "a twisted background needs a two_form graph",
                )?;
                need(
                    self.two_form.is_empty() || self.epsilon.is_some(),
                    "epsilon",
                    "required for the graph of a two-form",
                )?;
            }
            ScenarioKind::Gcs => {
                let g = self.gcs.as_ref().ok_or_else(|| schema("gcs", "required for kind gcs"))?;
                self.gcs_data_original(g)?;
            }
            ScenarioKind::Algebroid => {
                let a = self
                    .algebroid
                    .as_ref()
                    .ok_or_else(|| schema("algebroid", "required for kind algebroid"))?;
                match a.kind {
                    AlgebroidType::Cotangent => need(!self.bivector.is_empty(), "bivector", "required for a cotangent algebroid")?,
                    AlgebroidType::Custom => {
                        let rows = a.anchor.as_ref().ok_or_else(|| schema("algebroid.anchor", "required for a custom algebroid"))?;
                        let r = rows.first().map_or(0, |r| r.len());
                        matrix_strings("algebroid.anchor", rows, n, r, n)?;
                        for (e, (i, j, _, _)) in self.algebroid_structure(a, r)?.iter().enumerate() {
                            if i >= j {
                                return Err(schema(format!("algebroid.structure[{e}]"), "needs i < j"));
                            }
                        }
                    }
                    AlgebroidType::Tangent => {}
                }
                if a.kind != AlgebroidType::Custom && (a.anchor.is_some() || !a.structure.is_empty()) {
                    return Err(schema("algebroid.anchor", "only a custom algebroid takes anchor and structure"));
                }
                if let Some(sec) = &a.section {
                    let r = match a.kind {
                        AlgebroidType::Custom => a.anchor.as_ref().and_then(|r| r.first()).map_or(0, |r| r.len()),
                        _ => n,
                    };
                    exprs("algebroid.section", sec, r, n)?;
                }
            }
        }
        Ok(())
    }

    pub fn adapter(&self) -> Res<AffineAdapter> {
        let n = self.dim;
        let t = &self.transversal;
        let offset = t.offset.clone().unwrap_or_else(|| vec![0.0; n]);
        if offset.len() != n {
            return Err(schema("transversal.offset", format!("expected {n} entries")));
        }
        match (&t.matrix, &t.order) {
            (Some(_), Some(_)) => Err(schema("transversal", "give either matrix or order, not both")),
            (Some(rows), None) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(schema("transversal.matrix", format!("must be {n} x {n}")));
                }
                let a = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
                AffineAdapter::new(offset, a).map_err(|e| schema("transversal.matrix", e.to_string()))
            }
            (None, Some(order)) => {
                let mut seen = vec![false; n];
                if order.len() != n {
                    return Err(schema("transversal.order", format!("expected {n} entries")));
                }
                let mut zero = Vec::with_capacity(n);
                for (j, &i) in order.iter().enumerate() {
                    let i = index(&format!("transversal.order[{j}]"), i, n)?;
                    if std::mem::replace(&mut seen[i], true) {
                        return Err(schema(format!("transversal.order[{j}]"), "repeated coordinate"));
                    }
                    zero.push(i);
                }
                AffineAdapter::permutation(&zero, offset).map_err(|e| schema("transversal.order", e.to_string()))
            }
            (None, None) => Ok(AffineAdapter::shift(offset)),
        }
    }

    fn transversal(&self) -> Res<Transversal> {
        Ok(Transversal::new(Chart::new(self.dim)?, self.transversal.p)?)
    }

    fn bivector(&self, ad: &AffineAdapter) -> Res<Bivector> {
        let e = entries2("bivector", &self.bivector, self.dim)?;
        Ok(ad.bivector(&Bivector::from_entries(self.dim, &e)?))
    }

    fn two_form(&self, ad: &AffineAdapter) -> Res<TwoForm> {
        let e = entries2("two_form", &self.two_form, self.dim)?;
        Ok(ad.two_form(&TwoForm::from_entries(self.dim, &e)?))
    }

    fn eta(&self, ad: &AffineAdapter) -> Res<ThreeForm> {
        let e = entries3("eta", &self.eta, self.dim)?;
        Ok(ad.three_form(&ThreeForm::from_entries(self.dim, &e)?))
    }

    fn algebroid_structure(&self, a: &AlgebroidSpec, r: usize) -> Res<Vec<(usize, usize, usize, Expr)>> {
        a.structure
            .iter()
            .enumerate()
            .map(|(e, (i, j, k, s))| {
                let p = format!("algebroid.structure[{e}]");
                Ok((
                    index(&format!("{p}[0]"), *i, r)?,
                    index(&format!("{p}[1]"), *j, r)?,
                    index(&format!("{p}[2]"), *k, r)?,
                    expr(&format!("{p}[3]"), s, self.dim)?,
                ))
            })
            .collect()
    }

    fn gcs_data_original(&self, g: &GcsSpec) -> Res<GCSData> {
        let n = self.dim;
        let data = if let Some(m) = &g.matrix {
            if !g.factors.is_empty() {
                return Err(schema("gcs.factors", "give either factors or matrix, not both"));
            }
            GCSData::new(n, matrix_strings("gcs.matrix", m, 2 * n, 2 * n, n)?)?
        } else {
            let mut acc: Option<GCSData> = None;
            for (f, factor) in g.factors.iter().enumerate() {
                let path = format!("gcs.factors[{f}]");
                let d = match factor {
                    GcsFactor::Complex { j } => {
                        let k = j.len();
                        GCSData::complex_type(&matrix_strings(&format!("{path}.j"), j, k, k, k)?)?
                    }
                    GcsFactor::Symplectic { omega, pi } => {
                        let k = omega
                            .iter()
                            .chain(pi.iter())
                            .map(|(i, j, _)| (*i).max(*j))
                            .max()
                            .unwrap_or(0);
                        let w = TwoForm::from_entries(k, &entries2(&format!("{path}.omega"), omega, k)?)?;
                        let p = Bivector::from_entries(k, &entries2(&format!("{path}.pi"), pi, k)?)?;
                        GCSData::symplectic(&w, &p)?
                    }
                };
                acc = Some(match acc {
                    None => d,
                    Some(a) => GCSData::product(&a, &d)?,
                });
            }
            acc.ok_or_else(|| schema("gcs.factors", "no factors"))?
        };
        if data.dim != n {
            return Err(schema("gcs", format!("structure lives on R^{}, scenario on R^{n}", data.dim)));
        }
        let b = entries2("gcs.b_field", &g.b_field, n)?;
        Ok(if b.is_empty() {
            data
        } else {
            data.bfield(&TwoForm::from_entries(n, &b)?)
        })
    }

    fn lin(&self) -> LinearizeConfig {
        let mut lin = LinearizeConfig {
            radius: self.sampling.radius,
            samples: self.sampling.domain,
            seed: self.sampling.seed,
            ..Default::default()
        };
        lin.flow.rel_tol = self.tolerances.rel;
        lin.flow.abs_tol = self.tolerances.abs;
        lin
    }
}

/// `J` in adapted coordinates: `diag(A^{-1}, A^T) J(offset + A w) diag(A, A^{-T})`.
fn adapt_gcs(j: &GCSData, ad: &AffineAdapter) -> Res<GCSData> {
    let n = j.dim;
    let a = ad.matrix();
    let ai = a.clone().try_inverse().ok_or(Error::Singular)?;
    let ait = ai.transpose();
    let left = DMatrix::from_fn(2 * n, 2 * n, |r, c| match (r < n, c < n) {
        (true, true) => ai[(r, c)],
        (false, false) => a[(c - n, r - n)],
        _ => 0.0,
    });
    let right = DMatrix::from_fn(2 * n, 2 * n, |r, c| match (r < n, c < n) {
        (true, true) => a[(r, c)],
        (false, false) => ait[(r - n, c - n)],
        _ => 0.0,
    });
    let moved: Vec<Vec<Expr>> = j
        .entries()
        .iter()
        .map(|row| {
            row.iter()
                .map(|e| Ok(ad.scalar(&ScalarField::new(n, e.clone())?).expr().clone()))
                .collect::<Res<Vec<_>>>()
        })
        .collect::<Res<_>>()?;
    let mut out = vec![vec![Expr::zero(); 2 * n]; 2 * n];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, slot) in row.iter_mut().enumerate() {
            let mut acc = Expr::zero();
            for (k, mk) in moved.iter().enumerate() {
                if left[(r, k)] == 0.0 {
                    continue;
                }
                for (l, e) in mk.iter().enumerate() {
                    let s = left[(r, k)] * right[(l, c)];
                    if s != 0.0 && !e.is_zero() {
                        acc = acc.add(&e.scale(s));
                    }
                }
            }
            *slot = acc;
        }
    }
    Ok(GCSData::new(n, out)?)
}

/// Anchor rows `A^{-1} a(offset + A w)` on the same frame.
fn adapt_anchor(rows: &[Vec<Expr>], ad: &AffineAdapter) -> Res<Vec<Vec<Expr>>> {
    let n = ad.dim();
    let r = rows.first().map_or(0, |x| x.len());
    let cols: Vec<VectorField> = (0..r)
        .map(|c| VectorField::from_components(n, (0..n).map(|i| rows[i][c].clone()).collect()))
        .collect::<crate::Result<_>>()?;
    let moved: Vec<VectorField> = cols.iter().map(|v| ad.vector(v)).collect();
    Ok((0..n).map(|i| (0..r).map(|c| moved[c].components()[i].clone()).collect()).collect())
}

// ---------------------------------------------------------------------------
// Running

/// The Dirac section used by a scenario.
#[derive(Clone, Debug)]
pub enum DiracSection {
    Explicit(CourantSection),
    Poisson(PoissonSection),
}

impl Field for DiracSection {
    fn dim(&self) -> usize {
        match self {
            DiracSection::Explicit(s) => s.dim(),
            DiracSection::Poisson(s) => s.dim(),
        }
    }
    fn kind(&self) -> Kind {
        Kind::Courant
    }
    fn eval<T: Scalar>(&self, x: &[T]) -> crate::Result<Vec<T>> {
        match self {
            DiracSection::Explicit(s) => s.eval(x),
            DiracSection::Poisson(s) => s.eval(x),
        }
    }
}

/// Overrides applied on top of a scenario file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Sets both integrator tolerances.
    pub tol: Option<f64>,
    pub samples: Option<usize>,
    pub radius: Option<f64>,
    pub seed: Option<u64>,
    pub quad_nodes: Option<usize>,
}

impl Scenario {
    pub fn with_options(mut self, o: &RunOptions) -> Res<Scenario> {
        if let Some(t) = o.tol {
            self.tolerances = Tolerances { rel: t, abs: t };
        }
        if let Some(n) = o.samples {
            self.sampling.count = n;
        }
        if let Some(r) = o.radius {
            self.sampling.radius = r;
        }
        if let Some(s) = o.seed {
            self.sampling.seed = s;
        }
        if let Some(k) = o.quad_nodes {
            self.quadrature.nodes = k;
            self.quadrature.max_nodes = self.quadrature.max_nodes.max(k);
        }
        self.validate()?;
        Ok(self)
    }
}

struct Points {
    all: Vec<Vec<f64>>,
    heavy: Vec<Vec<f64>>,
    light: Vec<Vec<f64>>,
    base: Vec<Vec<f64>>,
}

impl Points {
    fn new(s: &Scenario, tr: &Transversal) -> Points {
        let sm = &s.sampling;
        let all = tr.sample(sm.radius, sm.count, sm.seed);
        let heavy: Vec<_> = all.iter().take(sm.heavy).cloned().collect();
        let light: Vec<_> = heavy.iter().take(sm.heavy.div_ceil(3)).cloned().collect();
        let base = tr.sample_base(sm.radius, sm.heavy, sm.seed);
        Points { all, heavy, light, base }
    }
}

/// Runs every check of the scenario. Failed preconditions become failing
/// checks; other numerical failures are errors.
pub fn run(s: &Scenario) -> Res<SplittingReport> {
    s.validate()?;
    let mut report = SplittingReport::new(&s.name, s.sampling.seed);
    let out = match s.kind {
        ScenarioKind::Euler => run_euler(s, &mut report),
        ScenarioKind::Poisson => run_poisson(s, &mut report),
        ScenarioKind::Dirac => run_dirac(s, &mut report),
        ScenarioKind::Gcs => run_gcs(s, &mut report),
        ScenarioKind::Algebroid => run_algebroid(s, &mut report),
    };
    match out {
        Ok(()) => Ok(report),
        Err(ScenarioError::Numeric(Error::Precondition(msg))) => {
            report.push(
                Check::with_verdict("preconditions", "hypotheses of the construction", 0.0, vec![], false)
                    .with_note(msg),
            );
            Ok(report)
        }
        Err(e) => Err(e),
    }
}

fn run_euler(s: &Scenario, report: &mut SplittingReport) -> Res<()> {
    let ad = s.adapter()?;
    let tr = s.transversal()?;
    let v = VectorField::from_components(s.dim, exprs("vector_field", s.vector_field.as_ref().unwrap(), s.dim, s.dim)?)?;
    let x = ad.vector(&v);
    let lin = s.lin();
    let ec = euler_check(&x, &tr, lin.euler_tol);
    let ok = ec.pass;
    report.push(ec);
    if !ok {
        return Ok(());
    }
    let emb = linearize(&x, &tr, &lin)?;
    let pts = Points::new(s, &tr);
    report.extend(crate::normalform::embedding_checks(&emb, &pts.all)?);
    Ok(())
}

fn jacobi_check(pi: &Bivector, points: &[Vec<f64>]) -> Res<Check> {
    let j = jacobiator(pi.clone())?;
    Ok(Check::new(
        "jacobi",
        "Poisson bivector: [pi, pi] = 0",
        1e-8,
        sample_residuals(points, |w| j.max_abs_at(w))?,
    ))
}

fn expected_omega_check<S: Field + Clone>(s: &Scenario, nf: &DiracNormalForm<S>, points: &[Vec<f64>]) -> Res<Option<Check>> {
    if s.expected_omega.is_empty() {
        return Ok(None);
    }
    let n = s.dim;
    let want = TwoForm::from_entries(n, &entries2("expected_omega", &s.expected_omega, n)?)?;
    let res = sample_residuals(points, |w| {
        let (om, _) = nf.omega(w, 0.0)?;
        let mut r = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let e = want.component(i, j).eval(w)?;
                r = r.max((om[(i, j)] - e).norm());
            }
        }
        Ok(r)
    })?;
    Ok(Some(Check::new("omega_expected", "gauge form against the expected closed form", 1e-8, res)))
}

fn dirac_checks<S: Field + Clone>(
    s: &Scenario,
    nf: &DiracNormalForm<S>,
    pts: &Points,
    report: &mut SplittingReport,
) -> Res<()> {
    report.extend(nf.embedding_checks(&pts.all)?);
    report.extend(nf.checks(&pts.heavy, &pts.light, &pts.light)?);
    if let Some(c) = expected_omega_check(s, nf, &pts.heavy)? {
        report.push(c);
    }
    Ok(())
}

fn frame_check(frame: &DiracFrame, bg: &TwistedCourant, points: &[Vec<f64>]) -> Res<Check> {
    let res = sample_residuals(points, |m| {
        let r = frame.report_at(bg, m)?;
        Ok(r.isotropy.max(r.involutivity))
    })?;
    let rank_ok = points
        .iter()
        .map(|m| frame.report_at(bg, m).map(|r| r.min_rank == frame.dim))
        .collect::<crate::Result<Vec<_>>>()?
        .into_iter()
        .all(|b| b);
    let c = Check::new("dirac_structure", "E is maximal isotropic and involutive", 1e-8, res);
    let pass = c.pass && rank_ok;
    Ok(Check { pass, ..c })
}

fn run_poisson(s: &Scenario, report: &mut SplittingReport) -> Res<()> {
    let ad = s.adapter()?;
    let tr = s.transversal()?;
    let pi = s.bivector(&ad)?;
    let pts = Points::new(s, &tr);
    report.push(jacobi_check(&pi, &pts.heavy)?);
    let mut base = default_base_points(&tr);
    base.extend(pts.base.iter().cloned());
    let v = cosymplectic_check(&pi, &tr, &base, 1e-12)?;
    report.push(Check::with_verdict(
        "cosymplectic",
        "pi nondegenerate on ann(TN)",
        COND_GUARD,
        vec![Sample {
            point: vec![],
            residual: v.max_condition,
        }],
        v.cosymplectic,
    ));
    if !v.cosymplectic || !report.verdict {
        return Ok(());
    }
    let split = weinstein_split(&pi, &tr, &s.lin(), &s.quadrature)?;
    let casimir = match &s.casimir {
        Some(c) => Some(ad.scalar(&ScalarField::new(s.dim, expr("casimir", c, s.dim)?)?)),
        None => None,
    };
    report.extend(split.checks(&pts.all, &pts.base, casimir.as_ref())?);
    dirac_checks(s, &split.normal_form, &pts, report)
}

fn run_dirac(s: &Scenario, report: &mut SplittingReport) -> Res<()> {
    let ad = s.adapter()?;
    let tr = s.transversal()?;
    let n = s.dim;
    let pts = Points::new(s, &tr);
    let eta = s.eta(&ad)?;
    let bg = TwistedCourant::new(eta.clone());
    let mut check_pts = default_base_points(&tr);
    check_pts.extend(pts.light.iter().cloned());
    let twist = sample_residuals(&check_pts, |m| bg.closedness_residual(m))?;
    report.push(Check::new("eta_closed", "background three-form is closed", 1e-8, twist));
    let (frame, pi) = if !s.bivector.is_empty() {
        let pi = s.bivector(&ad)?;
        report.push(jacobi_check(&pi, &pts.heavy)?);
        if !report.verdict {
            return Ok(());
        }
        (graph_of_bivector(&pi, &check_pts)?, Some(pi))
    } else {
        (graph_of_twoform(&s.two_form(&ad)?, &eta, &check_pts)?, None)
    };
    report.push(frame_check(&frame, &bg, &check_pts)?);
    let section = if let Some(e) = &s.epsilon {
        let x = VectorField::from_components(n, exprs("epsilon.vector", &e.vector, n, n)?)?;
        let a = OneForm::from_components(n, exprs("epsilon.form", &e.form, n, n)?)?;
        DiracSection::Explicit(CourantSection::new(&ad.vector(&x), &ad.one_form(&a))?)
    } else {
        let pi = pi.expect("validated");
        if let Some(a) = &s.alpha {
            let a = ad.one_form(&OneForm::from_components(n, exprs("alpha", a, n, n)?)?);
            let x: Vec<Expr> = (0..n)
                .map(|j| {
                    let t: Vec<Expr> = (0..n).map(|i| a.components()[i].mul(&pi.component(i, j))).collect();
                    Expr::sum(&t)
                })
                .collect();
            DiracSection::Explicit(CourantSection::new(&VectorField::from_components(n, x)?, &a)?)
        } else {
            let alpha = alpha_for_cosymplectic(&pi, &tr, &default_base_points(&tr))?;
            DiracSection::Poisson(SharpSection { pi, alpha })
        }
    };
    let nf = dirac_normal_form(&frame, &bg, &tr, section, &s.lin(), &s.quadrature)?;
    dirac_checks(s, &nf, &pts, report)
}

fn run_gcs(s: &Scenario, report: &mut SplittingReport) -> Res<()> {
    let ad = s.adapter()?;
    let tr = s.transversal()?;
    let data = adapt_gcs(&s.gcs_data_original(s.gcs.as_ref().unwrap())?, &ad)?;
    let bg = TwistedCourant::new(s.eta(&ad)?);
    let pts = Points::new(s, &tr);
    let mut check_pts = default_base_points(&tr);
    check_pts.extend(pts.light.iter().cloned());
    let res = sample_residuals(&check_pts, |m| {
        let r = data.report(&bg, &[m.to_vec()])?;
        Ok(r.square.max(r.orthogonality).max(r.eigenbundle.isotropy).max(r.eigenbundle.involutivity))
    })?;
    report.push(Check::new(
        "gcs_structure",
        "J^2 = -1, J orthogonal, +i eigenbundle involutive",
        1e-8,
        res,
    ));
    let pi = data.induced_poisson();
    report.push(jacobi_check(&pi, &pts.heavy)?);
    if !report.verdict {
        return Ok(());
    }
    let g = gcs_normal_form(&data, &bg, &tr, &s.lin(), &s.quadrature)?;
    report.extend(g.checks(&pts.all)?);
    dirac_checks(s, &g.normal_form, &pts, report)
}

fn run_algebroid(s: &Scenario, report: &mut SplittingReport) -> Res<()> {
    let ad = s.adapter()?;
    let tr = s.transversal()?;
    let n = s.dim;
    let spec = s.algebroid.as_ref().unwrap();
    let pts = Points::new(s, &tr);
    let mut base = default_base_points(&tr);
    base.extend(pts.base.iter().cloned());
    let l = match spec.kind {
        AlgebroidType::Tangent => LieAlgebroid::tangent(n),
        AlgebroidType::Cotangent => LieAlgebroid::cotangent(&s.bivector(&ad)?),
        AlgebroidType::Custom => {
            let rows = spec.anchor.as_ref().unwrap();
            let r = rows.first().map_or(0, |x| x.len());
            let anchor = adapt_anchor(&matrix_strings("algebroid.anchor", rows, n, r, n)?, &ad)?;
            let structure: Vec<_> = s
                .algebroid_structure(spec, r)?
                .into_iter()
                .map(|(i, j, k, e)| Ok((i, j, k, ad.scalar(&ScalarField::new(n, e)?).expr().clone())))
                .collect::<Res<_>>()?;
            LieAlgebroid::new(AnchoredBundle::new(n, anchor)?, &structure)?
        }
    };
    let rep = l.report(&base)?;
    report.push(Check::scalar(
        "algebroid_structure",
        "anchor is a morphism and the bracket satisfies Jacobi",
        1e-8,
        vec![],
        rep.anchor_morphism.max(rep.jacobi),
    ));
    if !report.verdict {
        return Ok(());
    }
    let eps = match &spec.section {
        Some(src) => {
            let e = exprs("algebroid.section", src, l.rank(), n)?;
            let e = match spec.kind {
                AlgebroidType::Tangent => ad.vector(&VectorField::from_components(n, e)?).components().to_vec(),
                AlgebroidType::Cotangent => ad.one_form(&OneForm::from_components(n, e)?).components().to_vec(),
                AlgebroidType::Custom => e
                    .into_iter()
                    .map(|x| Ok(ad.scalar(&ScalarField::new(n, x)?).expr().clone()))
                    .collect::<Res<_>>()?,
            };
            Section::from_exprs(n, e)?
        }
        None => euler_section(&l.base, &tr, &base)?,
    };
    let derivation = match spec.lift {
        LiftKind::Bracket => bracket_lift(&l, &eps, &base)?,
        LiftKind::Torsion => FiberDerivation {
            lift: anchor_lift_connection(&l.base, &base)?,
            eps,
        },
    };
    let nf = algebroid_normal_form(derivation, &tr, &base, &s.lin())?;
    report.extend(crate::normalform::embedding_checks(&nf.embedding, &pts.all)?);
    let fibre = sample_residuals(&pts.heavy, |w| {
        let m = nf.embedding.psi(w)?;
        Ok(nf.fiber_map(&m)?.image_residual)
    })?;
    report.push(Check::new(
        "fibre_membership",
        "fibre map lands in p^! i^! E",
        1e-6,
        fibre,
    ));
    let anchor = sample_residuals(&pts.heavy, |w| {
        let m = nf.embedding.psi(w)?;
        let mut r = 0.0f64;
        for t in [None, Some(0.5)] {
            r = r.max(nf.anchor_residual(&m, t)?);
        }
        Ok(r)
    })?;
    report.push(Check::new(
        "anchor_preservation",
        "algebroid normal form preserves anchors",
        1e-6,
        anchor,
    ));
    if spec.lift == LiftKind::Bracket {
        report.push(Check::new(
            "bracket_preservation",
            "algebroid normal form preserves frame brackets",
            1e-5,
            sample_residuals(&pts.heavy, |w| nf.bracket_residual(&l, w))?,
        ));
    }
    if spec.kind == AlgebroidType::Tangent {
        report.push(Check::new(
            "tangent_differential",
            "for E = TM the normal form is the differential of psi",
            1e-6,
            sample_residuals(&pts.heavy, |w| nf.differential_residual(w))?,
        ));
    }
    Ok(())
}
