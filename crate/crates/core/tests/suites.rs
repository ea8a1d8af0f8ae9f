use viewsplat_core::verify::suites::{self, CheckResult};

fn assert_passes(r: CheckResult) {
    println!("{}: {}", r.name, r.detail);
    assert!(r.passed, "{}: {}", r.name, r.detail);
}

#[test]
fn cost_fidelity_suites_pass() {
    assert_passes(suites::flops_fidelity());
    assert_passes(suites::scheme_ratio_fidelity());
    assert_passes(suites::parameter_count_fidelity());
    assert_passes(suites::gaussian_count_fidelity());
}

#[test]
fn gradient_suite_passes() {
    assert_passes(suites::gradient_suite());
}

#[test]
fn renderer_oracle_suite_passes() {
    assert_passes(suites::renderer_oracle_suite(100, 1));
}

#[test]
fn geometry_suite_passes() {
    assert_passes(suites::geometry_suite(2));
}

#[test]
fn minibatch_coverage_suite_passes() {
    assert_passes(suites::minibatch_coverage_suite());
}

#[test]
fn ablation_degeneracy_suite_passes() {
    assert_passes(suites::ablation_degeneracy_suite());
}
