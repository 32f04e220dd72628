mod support;

use support::gradcheck;

#[test]
fn every_layer_kind_passes_finite_differences() {
    assert!(gradcheck::covers_all_kinds());
    let report = gradcheck::run(100, 2024);
    assert_eq!(report.configs, 100);
    for kind in gradcheck::KINDS {
        assert!(report.configs_by_kind[kind] >= 10, "{kind} under-sampled");
    }
    for (kind, worst) in &report.worst_by_kind {
        assert!(*worst < 1e-4, "{kind}: worst relative error {worst:e}");
    }
}
