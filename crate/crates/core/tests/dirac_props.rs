mod common;

use common::{quad_len, section};
use proptest::prelude::*;
use splitting::chart::{Field, ThreeForm, TwoForm};
use splitting::dirac::{pairing, CourantSection, TwistedCourant};
use splitting::expr::Dual;

fn twists() -> Vec<ThreeForm> {
    vec![
        ThreeForm::zero(3),
        ThreeForm::parse_entries(3, &[(0, 1, 2, "1")]).unwrap(),
        // -d(e^z dx ^ dy)
        ThreeForm::parse_entries(3, &[(0, 1, 2, "-exp(x3)")]).unwrap(),
    ]
}

fn sections() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 3 * 6 * quad_len(3))
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.5..0.5f64, 3)
}

fn triple(c: &[f64]) -> [CourantSection; 3] {
    let l = 6 * quad_len(3);
    [section(&c[..l], 3), section(&c[l..2 * l], 3), section(&c[2 * l..], 3)]
}

fn eval(s: &impl Field, m: &[f64]) -> Vec<f64> {
    s.eval(m).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pairing_is_invariant(c in sections(), m in point()) {
        let [a, b, d] = triple(&c);
        for eta in twists() {
            let bg = TwistedCourant::new(eta);
            // X_a <b, d> = <[[a, b]], d> + <b, [[a, d]]>
            let bd: Vec<Dual<f64>> = b.eval(&Dual::coords(&m)).unwrap();
            let dd: Vec<Dual<f64>> = d.eval(&Dual::coords(&m)).unwrap();
            let f = pairing(&bd, &dd);
            let xa = eval(&a, &m);
            let lhs: f64 = (0..3).map(|i| xa[i] * f.grad(i)).sum();
            let rhs = pairing(&eval(&bg.bracket(&a, &b).unwrap(), &m), &eval(&d, &m))
                + pairing(&eval(&b, &m), &eval(&bg.bracket(&a, &d).unwrap(), &m));
            prop_assert!((lhs - rhs).abs() < 1e-9, "{} vs {}", lhs, rhs);
        }
    }

    #[test]
    fn bracket_satisfies_leibniz(c in sections(), m in point()) {
        let [a, b, d] = triple(&c);
        for eta in twists() {
            let bg = TwistedCourant::new(eta);
            // [[a, [[b, d]]]] = [[[[a, b]], d]] + [[b, [[a, d]]]]
            let lhs = eval(&bg.bracket(&a, bg.bracket(&b, &d).unwrap()).unwrap(), &m);
            let r1 = eval(&bg.bracket(bg.bracket(&a, &b).unwrap(), &d).unwrap(), &m);
            let r2 = eval(&bg.bracket(&b, bg.bracket(&a, &d).unwrap()).unwrap(), &m);
            for i in 0..6 {
                prop_assert!((lhs[i] - r1[i] - r2[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn bfield_conjugates_the_twist(c in sections(), m in point()) {
        let [a, b, _] = triple(&c);
        // omega = z^2 dx ^ dy + x dy ^ dz, d omega = (2z + 1) dx ^ dy ^ dz
        let w = TwoForm::parse_entries(3, &[(0, 1, "x3^2"), (1, 2, "x1")]).unwrap();
        for (eta, shifted) in [
            ("0", "2*x3 + 1"),
            ("1", "2*x3 + 2"),
            ("-exp(x3)", "-exp(x3) + 2*x3 + 1"),
        ] {
            let e0 = TwistedCourant::new(ThreeForm::parse_entries(3, &[(0, 1, 2, eta)]).unwrap());
            let e1 = TwistedCourant::new(ThreeForm::parse_entries(3, &[(0, 1, 2, shifted)]).unwrap());
            let lhs = eval(&e1.bracket(a.bfield(&w), b.bfield(&w)).unwrap(), &m);
            let inner = eval(&e0.bracket(&a, &b).unwrap(), &m);
            let wv: Vec<f64> = w.eval(&m).unwrap();
            let rhs = splitting::dirac::bfield_values(&inner, &wv);
            prop_assert!(common::max_diff(&lhs, &rhs) < 1e-10);
        }
    }

    #[test]
    fn bracket_of_a_section_with_itself_is_exact(c in sections(), m in point()) {
        // [[a, a]] = d <a, a> / 2 in the form part, zero vector part
        let [a, _, _] = triple(&c);
        let bg = TwistedCourant::new(twists().pop().unwrap());
        let aa = eval(&bg.bracket(&a, &a).unwrap(), &m);
        let ad: Vec<Dual<f64>> = a.eval(&Dual::coords(&m)).unwrap();
        let f = pairing(&ad, &ad);
        for i in 0..3 {
            prop_assert!(aa[i].abs() < 1e-10);
            prop_assert!((aa[3 + i] - 0.5 * f.grad(i)).abs() < 1e-9);
        }
    }
}
