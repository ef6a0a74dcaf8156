//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if any
//! criterion fails.

mod common;

use common::{max_diff, quad_len, section};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitting::chart::{
    jacobiator, sample_ball, sharp_values, Bivector, Field, ThreeForm, Transversal, TwoForm, VectorField,
};
use splitting::dirac::{bfield_values, graph_of_bivector, pairing, CourantSection, GCSData, TwistedCourant};
use splitting::euler::{default_base_points, linearize, LinearizeConfig};
use splitting::expr::{Dual, Expr};
use splitting::normalform::{cosymplectic_check, dirac_normal_form, weinstein_split, QuadratureConfig, SplittingReport};
use splitting::scenario::{builtin, builtin_names, run};
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn reports() -> &'static Mutex<BTreeMap<String, SplittingReport>> {
    static R: OnceLock<Mutex<BTreeMap<String, SplittingReport>>> = OnceLock::new();
    R.get_or_init(|| Mutex::new(BTreeMap::new()))
}

fn report(name: &str) -> Result<SplittingReport, String> {
    if let Some(r) = reports().lock().unwrap().get(name) {
        return Ok(r.clone());
    }
    let s = builtin(name).ok_or(format!("no builtin {name}"))?;
    let r = run(&s).map_err(|e| format!("{name}: {e}"))?;
    reports().lock().unwrap().insert(name.into(), r.clone());
    Ok(r)
}

/// `max_residual` of a check that must exist, pass, and stay under `bound`.
fn residual(name: &str, check: &str, bound: f64, min_samples: usize) -> Result<f64, String> {
    let r = report(name)?;
    let c = r.check(check).ok_or(format!("{name}: no check {check}"))?;
    ensure(c.samples >= min_samples, format!("{name}/{check}: {} samples", c.samples))?;
    ensure(
        c.pass && c.max_residual < bound,
        format!("{name}/{check}: {:.3e} (bound {bound:e})", c.max_residual),
    )?;
    Ok(c.max_residual)
}

fn lin(samples: usize, radius: f64) -> LinearizeConfig {
    LinearizeConfig {
        samples,
        radius,
        ..Default::default()
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let mut c = || format!("{:.4}", rng.gen_range(-0.5..0.5));
        let (tr, x) = if case % 2 == 0 {
            // N = {0} in R^2: quadratic and cubic terms.
            let f = VectorField::parse(
                2,
                &[
                    &format!("x1 + {}*x1^2 + {}*x1*x2 + {}*x2^3", c(), c(), c()),
                    &format!("x2 + {}*x2^2 + {}*x1^2*x2 + {}*x1^3", c(), c(), c()),
                ],
            )
            .unwrap();
            (Transversal::standard(2, 0).unwrap(), f)
        } else {
            // N = x-axis in R^3: terms of order >= 2 in (y, z), coefficients depending on x.
            let f = VectorField::parse(
                3,
                &[
                    &format!("{}*x2^2 + {}*x1*x2*x3", c(), c()),
                    &format!("x2 + {}*x2*x3 + {}*(1 + x1^2)*x3^2", c(), c()),
                    &format!("x3 + {}*x2^2*(1 + x1) + {}*x3^3", c(), c()),
                ],
            )
            .unwrap();
            (Transversal::standard(3, 1).unwrap(), f)
        };
        let emb = linearize(&x, &tr, &lin(20, 0.3)).map_err(|e| format!("case {case}: {e}"))?;
        for w in tr.sample(0.3, 100, 100 + case) {
            let r = emb.pushforward_residual(&w).map_err(|e| e.to_string())?;
            worst = worst.max(r);
        }
    }
    ensure(worst < 1e-6, format!("pushforward {worst:.3e}"))?;
    Ok(format!("20 perturbations x 100 points, max |T psi(E) - X o psi| = {worst:.2e}"))
}

fn criterion_2() -> Outcome {
    let x = VectorField::parse(1, &["x1 + x1^2"]).unwrap();
    let tr = Transversal::standard(1, 0).unwrap();
    let emb = linearize(&x, &tr, &lin(20, 0.5)).map_err(|e| e.to_string())?;
    let (mut fwd, mut newton, mut limit) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..=100 {
        let v = -0.5 + i as f64 / 100.0;
        let m = emb.psi(&[v]).map_err(|e| e.to_string())?[0];
        fwd = fwd.max((m - v / (1.0 - v)).abs());
        let inv = m / (1.0 + m);
        newton = newton.max((emb.psi_inverse(&[m]).map_err(|e| e.to_string())?[0] - inv).abs());
        limit = limit.max((emb.psi_inverse_flow(&[m]).map_err(|e| e.to_string())?.0[0] - inv).abs());
    }
    ensure(fwd < 1e-7, format!("psi error {fwd:.3e}"))?;
    ensure(newton < 1e-7, format!("Newton inverse error {newton:.3e}"))?;
    ensure(limit < 1e-4, format!("flow-limit inverse error {limit:.3e}"))?;
    Ok(format!(
        "|psi - v/(1-v)| = {fwd:.2e}, |psi^-1 - m/(1+m)| = {newton:.2e} (flow limit {limit:.2e})"
    ))
}

fn criterion_3() -> Outcome {
    let (mut eq, mut inv) = (0.0f64, 0.0f64);
    for name in builtin_names() {
        eq = eq.max(residual(name, "equivariance", 1e-6, 100)?);
        inv = inv.max(residual(name, "inverse_agreement", 1e-4, 100)?);
    }
    Ok(format!(
        "{} builtins: |psi kappa_t - lambda_t psi| = {eq:.2e}, inverse agreement {inv:.2e}",
        builtin_names().len()
    ))
}

fn criterion_4() -> Outcome {
    // Coordinates (q1, p1, q2, p2).
    let pi0 = Bivector::canonical(4, 0);
    let alpha = ["-x2", "x1", "-x4", "x3"];
    let a = splitting::chart::OneForm::parse(4, &alpha).unwrap();
    let mut gen = 0.0f64;
    for m in sample_ball(&[0.0; 4], 0.3, 100, 4) {
        let x = sharp_values(&pi0.eval(&m).unwrap(), &a.eval(&m).unwrap());
        gen = gen.max(max_diff(&x, &m));
    }
    ensure(gen < 1e-12, format!("|pi0^# alpha - E| = {gen:.3e}"))?;
    // omega from the explicit alpha, and from the cosymplectic construction.
    let tr = Transversal::standard(4, 0).unwrap();
    let frame = graph_of_bivector(&pi0, &default_base_points(&tr)).unwrap();
    let eps = CourantSection::new(&VectorField::euler(4, 0), &a).unwrap();
    let quad = QuadratureConfig::default();
    let nf = dirac_normal_form(&frame, &TwistedCourant::untwisted(4), &tr, eps, &lin(20, 0.3), &quad)
        .map_err(|e| e.to_string())?;
    let split = weinstein_split(&pi0, &tr, &lin(20, 0.3), &quad).map_err(|e| e.to_string())?;
    let w0 = TwoForm::parse_entries(4, &[(0, 1, "1"), (2, 3, "1")]).unwrap();
    let mut err = 0.0f64;
    for w in tr.sample(0.3, 20, 5) {
        let want = w0.eval(&w).unwrap();
        for om in [nf.omega(&w, 0.0), split.normal_form.omega(&w, 0.0)] {
            let om = om.map_err(|e| e.to_string())?.0;
            for i in 0..4 {
                for j in i + 1..4 {
                    let k = splitting::chart::pair_index(4, i, j);
                    err = err.max((om[(i, j)].re - want[k]).abs()).max(om[(i, j)].im.abs());
                }
            }
        }
    }
    ensure(err < 1e-8, format!("|omega - omega_0| = {err:.3e}"))?;
    residual("canonical-r4", "omega_expected", 1e-8, 1)?;
    Ok(format!("|pi0^# alpha - E| = {gen:.1e}, |omega - omega_0| = {err:.2e}"))
}

fn criterion_5() -> Outcome {
    let mut out = Vec::new();
    for name in ["so3-star", "heisenberg"] {
        let p = residual(name, "poisson_pushforward", 1e-6, 100)?;
        let b = residual(name, "mixed_block", 1e-6, 100)?;
        out.push(format!("{name}: pushforward {p:.2e}, mixed {b:.2e}"));
    }
    let c = residual("so3-star", "casimir", 1e-6, 100)?;
    out.push(format!("casimir {c:.2e}"));
    Ok(out.join("; "))
}

fn criterion_6() -> Outcome {
    let mut out = Vec::new();
    for name in ["so3-star", "twisted-graph"] {
        let a = residual(name, "dirac_normal_form", 1e-6, 1)?;
        let t = residual(name, "t_family", 1e-6, 1)?;
        let d = residual(name, "omega_closedness", 1e-7, 1)?;
        out.push(format!("{name}: angle {a:.2e}, t-family {t:.2e}, d omega {d:.2e}"));
    }
    let tw = builtin("twisted-graph").unwrap();
    ensure(!tw.eta.is_empty(), "twisted-graph has no twist")?;
    Ok(out.join("; "))
}

fn criterion_7() -> Outcome {
    let twists = [
        ThreeForm::zero(3),
        ThreeForm::parse_entries(3, &[(0, 1, 2, "1")]).unwrap(),
        ThreeForm::parse_entries(3, &[(0, 1, 2, "-exp(x3)")]).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let l = 6 * quad_len(3);
    let (mut inv, mut jac, mut conj) = (0.0f64, 0.0f64, 0.0f64);
    let w = TwoForm::parse_entries(3, &[(0, 1, "x3^2"), (1, 2, "x1")]).unwrap();
    let dw = Expr::var(2).scale(2.0).add(&Expr::one());
    for _ in 0..100 {
        let c: Vec<f64> = (0..3 * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b, d) = (section(&c[..l], 3), section(&c[l..2 * l], 3), section(&c[2 * l..], 3));
        let m: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let ev = |s: &dyn Fn(&[f64]) -> Vec<f64>| s(&m);
        for eta in &twists {
            let bg = TwistedCourant::new(eta.clone());
            let bd: Vec<Dual<f64>> = b.eval(&Dual::coords(&m)).unwrap();
            let dd: Vec<Dual<f64>> = d.eval(&Dual::coords(&m)).unwrap();
            let f = pairing(&bd, &dd);
            let xa: Vec<f64> = a.eval(&m).unwrap();
            let lhs: f64 = (0..3).map(|i| xa[i] * f.grad(i)).sum();
            let ab: Vec<f64> = bg.bracket(&a, &b).unwrap().eval(&m).unwrap();
            let ad: Vec<f64> = bg.bracket(&a, &d).unwrap().eval(&m).unwrap();
            let rhs = pairing(&ab, &d.eval(&m).unwrap()) + pairing(&b.eval(&m).unwrap(), &ad);
            inv = inv.max((lhs - rhs).abs());
            let l1: Vec<f64> = bg.bracket(&a, bg.bracket(&b, &d).unwrap()).unwrap().eval(&m).unwrap();
            let r1: Vec<f64> = bg.bracket(bg.bracket(&a, &b).unwrap(), &d).unwrap().eval(&m).unwrap();
            let r2: Vec<f64> = bg.bracket(&b, bg.bracket(&a, &d).unwrap()).unwrap().eval(&m).unwrap();
            jac = jac.max((0..6).fold(0.0f64, |x, i| x.max((l1[i] - r1[i] - r2[i]).abs())));
            let shifted = ThreeForm::from_components(3, vec![eta.components()[0].add(&dw)]).unwrap();
            let e1 = TwistedCourant::new(shifted);
            let lhs = ev(&|m| e1.bracket(a.bfield(&w), b.bfield(&w)).unwrap().eval(m).unwrap());
            let rhs = bfield_values(&ab, &w.eval(&m).unwrap());
            conj = conj.max(max_diff(&lhs, &rhs));
        }
    }
    ensure(inv < 1e-7, format!("pairing invariance {inv:.3e}"))?;
    ensure(jac < 1e-7, format!("twisted Jacobi {jac:.3e}"))?;
    ensure(conj < 1e-8, format!("B-field conjugation {conj:.3e}"))?;
    Ok(format!(
        "100 triples x 3 twists: invariance {inv:.2e}, Jacobi {jac:.2e}, B-field {conj:.2e}"
    ))
}

fn criterion_8() -> Outcome {
    let d = residual("tangent-algebroid", "tangent_differential", 1e-6, 1)?;
    let a = residual("so3-algebroid", "anchor_preservation", 1e-6, 1)?;
    let b = residual("so3-algebroid", "bracket_preservation", 1e-5, 1)?;
    Ok(format!("TM: |psi~ - T psi| = {d:.2e}; so3*: anchor {a:.2e}, brackets {b:.2e}"))
}

fn criterion_9() -> Outcome {
    let ang = residual("gcs-product-shear", "dirac_normal_form", 1e-6, 1)?;
    let eig = residual("gcs-product-shear", "gcs_eigen", 1e-8, 1)?;
    // Symplectic type from omega = e^x dx ^ dy: induced pi must be omega^{-1}.
    let w = TwoForm::parse_entries(2, &[(0, 1, "exp(x1)")]).unwrap();
    let p = Bivector::parse_entries(2, &[(0, 1, "-exp(-x1)")]).unwrap();
    let sym = GCSData::symplectic(&w, &p).unwrap();
    let cx = GCSData::complex_type(&[vec![Expr::zero(), Expr::constant(-1.0)], vec![Expr::one(), Expr::zero()]]).unwrap();
    let mut err = 0.0f64;
    for m in sample_ball(&[0.0; 2], 0.5, 20, 9) {
        let pi: Vec<f64> = sym.induced_poisson().eval(&m).unwrap();
        let om: Vec<f64> = w.eval(&m).unwrap();
        // [[0, P], [-P, 0]] [[0, W], [-W, 0]] = -P W I
        err = err.max((pi[0] * om[0] + 1.0).abs());
        let z: Vec<f64> = cx.induced_poisson().eval(&m).unwrap();
        err = err.max(z[0].abs());
    }
    ensure(err < 1e-10, format!("induced pi error {err:.3e}"))?;
    Ok(format!("angle {ang:.2e}, |J eps - i eps| = {eig:.2e}, induced pi {err:.1e}"))
}

fn criterion_10() -> Outcome {
    let bad = Bivector::parse_entries(3, &[(0, 1, "1"), (2, 0, "x1")]).unwrap();
    let j = jacobiator(bad).unwrap().max_abs_at(&[0.1, 0.2, 0.3]).unwrap();
    ensure(j > 1e-2, format!("jacobiator only {j:.3e}"))?;
    let tr = Transversal::standard(3, 2).unwrap();
    let pi = Bivector::parse_entries(3, &[(0, 2, "1"), (1, 2, "x1")]).unwrap();
    let v = cosymplectic_check(&pi, &tr, &default_base_points(&tr), 1e-12).map_err(|e| e.to_string())?;
    ensure(!v.cosymplectic, "odd codimension accepted")?;
    let tr = Transversal::standard(2, 0).unwrap();
    let x = VectorField::parse(2, &["2*x1", "x2 + x1^2"]).unwrap();
    match linearize(&x, &tr, &lin(20, 0.3)) {
        Err(splitting::Error::Precondition(_)) => {}
        other => return Err(format!("non-Euler-like field not rejected: {:?}", other.map(|_| ()))),
    }
    Ok(format!("jacobiator {j:.2e}; odd codimension rejected; 2x d_x + ... rejected"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("linearization of perturbed Euler fields", criterion_1),
        ("closed-form tubular embedding", criterion_2),
        ("flow commutation and inverse agreement", criterion_3),
        ("canonical Poisson structure", criterion_4),
        ("Weinstein splitting", criterion_5),
        ("Dirac normal form", criterion_6),
        ("Courant algebra identities", criterion_7),
        ("Lie algebroid normal form", criterion_8),
        ("generalized complex splitting", criterion_9),
        ("negative tests", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(msg) => println!("PASS {:>2} {name} ({secs:.1}s): {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.1}s): {msg}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
