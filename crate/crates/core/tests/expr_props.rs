use proptest::prelude::*;
use splitting::expr::{parse, Dual};

proptest! {
    #[test]
    fn parsed_polynomial_matches_direct_evaluation(
        a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64,
        x in -2.0..2.0f64, y in -2.0..2.0f64,
    ) {
        let src = format!("{a}*x1^2 - ({b})*x1*x2 + {c}");
        let e = parse(&src, 2).unwrap();
        let v: f64 = e.eval(&[x, y]).unwrap();
        let want = a * x * x - b * x * y + c;
        prop_assert!((v - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn dual_derivatives_match_closed_form(x in -1.0..1.0f64, y in 0.1..2.0f64) {
        let e = parse("sin(x1)*exp(x2) + log(x2)*x1^3 + sqrt(x2)/(1 + x1^2)", 2).unwrap();
        let d: Dual<f64> = e.eval(&Dual::coords(&[x, y])).unwrap();
        let dx = x.cos() * y.exp() + 3.0 * y.ln() * x * x - 2.0 * x * y.sqrt() / (1.0 + x * x).powi(2);
        let dy = x.sin() * y.exp() + x.powi(3) / y + 0.5 / (y.sqrt() * (1.0 + x * x));
        prop_assert!((d.grad(0) - dx).abs() < 1e-10);
        prop_assert!((d.grad(1) - dy).abs() < 1e-10);
    }

    #[test]
    fn constant_folding_preserves_values(k in 1i32..6, x in -1.5..1.5f64) {
        let folded = parse(&format!("(x1 + 0)*1 + 0*x1 + x1^{k} - pi + pi"), 1).unwrap();
        let plain = parse(&format!("x1 + x1^{k}"), 1).unwrap();
        let (u, v): (f64, f64) = (folded.eval(&[x]).unwrap(), plain.eval(&[x]).unwrap());
        prop_assert!((u - v).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_variables_are_rejected(i in 3usize..9) {
        let src = format!("x{i}");
        prop_assert!(parse(&src, 2).is_err());
    }
}

#[test]
fn complex_constants() {
    use num_complex::Complex64;
    let e = parse("exp(i*pi) + 1", 0).unwrap();
    let v: Complex64 = e.eval(&[]).unwrap();
    assert!(v.norm() < 1e-15);
}
