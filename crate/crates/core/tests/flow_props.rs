mod common;

use common::max_diff;
use proptest::prelude::*;
use splitting::chart::VectorField;
use splitting::flow::{flow, lambda_t, FlowConfig};

fn field() -> VectorField {
    VectorField::parse(2, &["-x2 + 0.3*x1^2", "x1 - 0.2*x1*x2"]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flows_compose(x in -0.5..0.5f64, y in -0.5..0.5f64, s in -0.8..0.8f64, t in -0.8..0.8f64) {
        let cfg = FlowConfig::default();
        let x0 = [x, y];
        let a = flow(&field(), &flow(&field(), &x0, t, &cfg, false).unwrap().endpoint, s, &cfg, false).unwrap();
        let b = flow(&field(), &x0, s + t, &cfg, false).unwrap();
        prop_assert!(max_diff(&a.endpoint, &b.endpoint) < 1e-8);
    }

    #[test]
    fn jacobian_matches_finite_differences(x in -0.5..0.5f64, y in -0.5..0.5f64, s in -1.0..1.0f64) {
        let cfg = FlowConfig { rel_tol: 1e-12, abs_tol: 1e-12, ..Default::default() };
        let r = flow(&field(), &[x, y], s, &cfg, true).unwrap();
        let j = r.jacobian.unwrap();
        let h = 1e-5;
        for a in 0..2 {
            let mut p = [x, y];
            let mut q = [x, y];
            p[a] += h;
            q[a] -= h;
            let fp = flow(&field(), &p, s, &cfg, false).unwrap().endpoint;
            let fq = flow(&field(), &q, s, &cfg, false).unwrap().endpoint;
            for i in 0..2 {
                prop_assert!(((fp[i] - fq[i]) / (2.0 * h) - j[(i, a)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rotation_flow_is_a_rotation(x in -1.0..1.0f64, y in -1.0..1.0f64, s in -3.0..3.0f64) {
        let rot = VectorField::parse(2, &["-x2", "x1"]).unwrap();
        let r = flow(&rot, &[x, y], s, &FlowConfig::default(), false).unwrap().endpoint;
        let want = [x * s.cos() - y * s.sin(), x * s.sin() + y * s.cos()];
        prop_assert!(max_diff(&r, &want) < 1e-8);
    }

    #[test]
    fn lambda_t_scales_the_euler_field(x in -1.0..1.0f64, y in -1.0..1.0f64, t in 0.05..1.0f64) {
        let e = VectorField::euler(2, 0);
        let r = lambda_t(&e, &[x, y], t, &FlowConfig::default()).unwrap();
        prop_assert!(max_diff(&r, &[t * x, t * y]) < 1e-9);
    }
}
