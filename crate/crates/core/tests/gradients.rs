mod common;

#[test]
fn every_tensor_matches_finite_differences() {
    for r in common::gradient_check(3, 24) {
        println!("{:<22} rel err {:.2e} ({} entries)", r.name, r.rel_err, r.checked);
        assert!(r.rel_err <= 1e-3, "{}: {}", r.name, r.rel_err);
    }
}
