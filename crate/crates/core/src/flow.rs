//! Flows of vector fields: an adaptive Dormand–Prince 5(4) integrator that
//! runs over any [`Scalar`], autonomous and time-dependent flows, Jacobians,
//! and the log-time reparametrization `lambda_t`.
//!
//! Convention: [`flow`] returns the standard flow, `d/ds Phi_s = X(Phi_s)`.
//! The flow in the inverse convention (under which the Euler field flows by
//! `kappa_{exp(-s)}`) is `Phi_{-s}`, and `lambda_t = Phi_{log t}`.

use crate::chart::{Field, Guard, SmoothMap};
use crate::error::{Error, Result};
use crate::expr::{Dual, Scalar};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Largest allowed `|s|` for a single integration.
    pub max_time: f64,
    pub max_steps: usize,
    pub guard: Guard,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-10,
            max_step: 0.5,
            max_time: 100.0,
            max_steps: 200_000,
            guard: Guard::None,
        }
    }
}

impl FlowConfig {
    pub fn with_guard(mut self, guard: Guard) -> Self {
        self.guard = guard;
        self
    }
    fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.max_step > 0.0) {
            return Err(Error::Precondition(
                "flow tolerances and max_step must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FlowResult {
    pub endpoint: Vec<f64>,
    /// `D Phi_s(m)`, present when requested.
    pub jacobian: Option<DMatrix<f64>>,
    pub steps: usize,
    /// The trajectory left the guard; `endpoint` is the last accepted point inside.
    pub escaped: bool,
}

/// Result of one integration in generic arithmetic.
#[derive(Clone, Debug)]
pub struct Solution<T> {
    pub state: Vec<T>,
    pub steps: usize,
    /// Time at which the guard was left, if it was.
    pub escaped_at: Option<f64>,
}

impl<T: Scalar> Solution<T> {
    /// The endpoint, or an error if the trajectory escaped.
    pub fn finish(self) -> Result<Vec<T>> {
        match self.escaped_at {
            None => Ok(self.state),
            Some(time) => Err(Error::Escaped {
                time,
                point: self.state.iter().map(|v| v.re()).collect(),
            }),
        }
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order weights minus the embedded fourth-order ones.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn axpy<T: Scalar>(y: &[T], h: f64, terms: &[(f64, &Vec<T>)]) -> Vec<T> {
    let mut out = y.to_vec();
    for &(c, k) in terms {
        if c == 0.0 {
            continue;
        }
        let hc = h * c;
        for (o, v) in out.iter_mut().zip(k) {
            *o = *o + v.scale(hc);
        }
    }
    out
}

/// Integrate `dy/dt = rhs(t, y)` from `t0` to `t1`.
///
/// Error control uses the largest coefficient magnitude of each component,
/// so when `T` carries derivatives they are controlled too.
pub fn integrate<T, F>(mut rhs: F, t0: f64, t1: f64, y0: &[T], cfg: &FlowConfig) -> Result<Solution<T>>
where
    T: Scalar,
    F: FnMut(f64, &[T]) -> Result<Vec<T>>,
{
    cfg.validate()?;
    let span = t1 - t0;
    if span.abs() > cfg.max_time {
        return Err(Error::Precondition(format!(
            "integration time {span} exceeds max_time {}",
            cfg.max_time
        )));
    }
    let mut y = y0.to_vec();
    if span == 0.0 {
        return Ok(Solution {
            state: y,
            steps: 0,
            escaped_at: None,
        });
    }
    let dir = span.signum();
    let mut t = t0;
    let mut k1 = rhs(t, &y)?;
    let d0 = y.iter().fold(0.0f64, |m, v| m.max(v.mag()));
    let d1 = k1.iter().fold(0.0f64, |m, v| m.max(v.mag()));
    let mut h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-4
    } else {
        (0.01 * d0 / d1).max(1e-6)
    };
    h = h.min(cfg.max_step).min(span.abs());
    let mut steps = 0;
    while (t1 - t) * dir > 0.0 {
        if steps >= cfg.max_steps {
            return Err(Error::TooManySteps(cfg.max_steps));
        }
        let remaining = (t1 - t).abs();
        let last = h >= remaining;
        let hs = if last { remaining } else { h } * dir;
        let mut k: Vec<Vec<T>> = Vec::with_capacity(7);
        k.push(k1.clone());
        for s in 1..7 {
            let terms: Vec<(f64, &Vec<T>)> = (0..s).map(|j| (A[s][j], &k[j])).collect();
            let ys = axpy(&y, hs, &terms);
            let ks = rhs(t + C[s] * hs, &ys)?;
            k.push(ks);
        }
        let terms: Vec<(f64, &Vec<T>)> = (0..6).map(|j| (A[6][j], &k[j])).collect();
        let y_new = axpy(&y, hs, &terms);
        let mut err = 0.0f64;
        for i in 0..y.len() {
            let e = (0..7).fold(T::zero(), |a, j| a + k[j][i].scale(E[j])).scale(hs);
            let sc = cfg.abs_tol + cfg.rel_tol * y[i].mag().max(y_new[i].mag());
            err = err.max(e.mag() / sc);
        }
        if !err.is_finite() {
            err = 1e10;
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + hs };
            steps += 1;
            let inside = {
                let re: Vec<f64> = y_new.iter().map(|v| v.re()).collect();
                cfg.guard.contains(&re)
            };
            if !inside {
                return Ok(Solution {
                    state: y,
                    steps,
                    escaped_at: Some(t),
                });
            }
            y = y_new;
            k1 = k.swap_remove(6);
        }
        let fac = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h = (h * fac).min(cfg.max_step);
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { time: t });
        }
    }
    Ok(Solution {
        state: y,
        steps,
        escaped_at: None,
    })
}

/// Standard flow of an autonomous field in generic arithmetic.
pub fn flow_generic<F: Field, T: Scalar>(
    x: &F,
    m: &[T],
    s: f64,
    cfg: &FlowConfig,
) -> Result<Solution<T>> {
    if m.len() != x.dim() {
        return Err(Error::Dimension(format!(
            "point of length {} for a field on R^{}",
            m.len(),
            x.dim()
        )));
    }
    integrate(|_, y: &[T]| x.eval(y), 0.0, s, m, cfg)
}

/// Standard flow `Phi_s(m)`, optionally with its Jacobian.
pub fn flow<F: Field>(
    x: &F,
    m: &[f64],
    s: f64,
    cfg: &FlowConfig,
    with_jacobian: bool,
) -> Result<FlowResult> {
    if !cfg.guard.contains(m) {
        return Err(Error::Escaped {
            time: 0.0,
            point: m.to_vec(),
        });
    }
    if with_jacobian {
        let sol = flow_generic(x, &Dual::coords(m), s, cfg)?;
        let n = m.len();
        let endpoint = sol.state.iter().map(|d| d.value()).collect();
        let jac = DMatrix::from_fn(n, n, |i, a| sol.state[i].grad(a));
        Ok(FlowResult {
            endpoint,
            jacobian: Some(jac),
            steps: sol.steps,
            escaped: sol.escaped_at.is_some(),
        })
    } else {
        let sol = flow_generic(x, m, s, cfg)?;
        Ok(FlowResult {
            endpoint: sol.state,
            jacobian: None,
            steps: sol.steps,
            escaped: sol.escaped_at.is_some(),
        })
    }
}

/// `lambda_t(m) = Phi_{log t}(m)` for `t` in `(0, 1]`.
pub fn lambda_t_generic<F: Field, T: Scalar>(
    x: &F,
    m: &[T],
    t: f64,
    cfg: &FlowConfig,
) -> Result<Vec<T>> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Precondition(format!("lambda_t needs t in (0, 1], got {t}")));
    }
    if t == 1.0 {
        return Ok(m.to_vec());
    }
    flow_generic(x, m, t.ln(), cfg)?.finish()
}

pub fn lambda_t<F: Field>(x: &F, m: &[f64], t: f64, cfg: &FlowConfig) -> Result<Vec<f64>> {
    lambda_t_generic(x, m, t, cfg)
}

/// Endpoint of the time-dependent flow `dm/dt = Z_t(m)` from `t0` to `t1`.
pub fn timedep_flow<T, Z>(z: Z, m: &[T], t0: f64, t1: f64, cfg: &FlowConfig) -> Result<Vec<T>>
where
    T: Scalar,
    Z: FnMut(f64, &[T]) -> Result<Vec<T>>,
{
    integrate(z, t0, t1, m, cfg)?.finish()
}

/// The time-`s` flow of a field as a smooth map.
#[derive(Clone, Debug)]
pub struct FlowMap<F> {
    pub field: F,
    pub s: f64,
    pub cfg: FlowConfig,
}

impl<F: Field> SmoothMap for FlowMap<F> {
    fn source_dim(&self) -> usize {
        self.field.dim()
    }
    fn target_dim(&self) -> usize {
        self.field.dim()
    }
    fn apply<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        flow_generic(&self.field, x, self.s, &self.cfg)?.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::VectorField;

    #[test]
    fn euler_field_scales() {
        let e = VectorField::euler(3, 0);
        let r = flow(&e, &[1.0, -2.0, 0.5], 0.7, &FlowConfig::default(), true).unwrap();
        let f = 0.7f64.exp();
        for (a, b) in r.endpoint.iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - f * b).abs() < 1e-9);
        }
        let j = r.jacobian.unwrap();
        assert!((j - DMatrix::identity(3, 3) * f).norm() < 1e-9);
    }

    #[test]
    fn rotation_quarter_turn() {
        let x = VectorField::parse(2, &["-x2", "x1"]).unwrap();
        let r = flow(&x, &[1.0, 0.0], std::f64::consts::FRAC_PI_2, &FlowConfig::default(), true)
            .unwrap();
        assert!(r.endpoint[0].abs() < 1e-9 && (r.endpoint[1] - 1.0).abs() < 1e-9);
        let j = r.jacobian.unwrap();
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((j - rot).norm() < 1e-9);
    }

    #[test]
    fn quadratic_blowup_closed_form_and_guard() {
        let x = VectorField::parse(1, &["x1^2"]).unwrap();
        let r = flow(&x, &[0.5], 1.0, &FlowConfig::default(), false).unwrap();
        assert!((r.endpoint[0] - 1.0).abs() < 1e-9);
        let cfg = FlowConfig::default().with_guard(Guard::Ball {
            center: vec![0.0],
            radius: 10.0,
        });
        let r = flow(&x, &[0.5], 2.5, &cfg, false).unwrap();
        assert!(r.escaped);
    }

    #[test]
    fn timedep_examples() {
        let cfg = FlowConfig::default();
        let v = timedep_flow(|t, _y: &[f64]| Ok(vec![t]), &[0.0], 0.0, 1.0, &cfg).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-12);
        let v = timedep_flow(|_, _y: &[f64]| Ok(vec![0.0]), &[0.3], 0.0, 1.0, &cfg).unwrap();
        assert_eq!(v, vec![0.3]);
    }

    #[test]
    fn lambda_of_euler_is_scaling() {
        let e = VectorField::euler(2, 0);
        let cfg = FlowConfig::default();
        let v = lambda_t(&e, &[0.4, -0.2], 0.25, &cfg).unwrap();
        assert!((v[0] - 0.1).abs() < 1e-10 && (v[1] + 0.05).abs() < 1e-10);
        assert_eq!(lambda_t(&e, &[0.4, -0.2], 1.0, &cfg).unwrap(), vec![0.4, -0.2]);
        assert!(lambda_t(&e, &[0.4, -0.2], 0.0, &cfg).is_err());
    }
}
