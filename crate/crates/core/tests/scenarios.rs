use splitting::scenario::{builtin, builtin_names, run};

#[test]
fn every_builtin_passes_at_default_tolerances() {
    for name in builtin_names() {
        let r = run(&builtin(name).unwrap()).unwrap();
        for c in &r.checks {
            assert!(c.pass, "{name}/{}: {:e} > {:e} {:?}", c.name, c.max_residual, c.tol, c.note);
        }
        assert!(r.verdict);
    }
}

#[test]
fn same_seed_same_report() {
    let mut s = builtin("twisted-graph").unwrap();
    s.sampling.count = 10;
    let a = serde_json::to_string(&run(&s).unwrap()).unwrap();
    let b = serde_json::to_string(&run(&s).unwrap()).unwrap();
    assert_eq!(a, b);
    s.sampling.seed = 1;
    assert_ne!(a, serde_json::to_string(&run(&s).unwrap()).unwrap());
}

#[test]
fn non_euler_like_field_is_rejected_before_embedding() {
    let mut s = builtin("euler-blowup").unwrap();
    s.vector_field = Some(vec!["2*x1 + x1^2".into()]);
    let r = run(&s).unwrap();
    assert!(!r.verdict);
    assert!(!r.check("euler_like").unwrap().pass);
    assert!(r.check("pushforward").is_none());
}
