use mxj_core::gradsuite::run_suite;

#[test]
fn every_stage_matches_finite_differences() {
    let entries = run_suite(3).unwrap();
    for e in &entries {
        println!(
            "{:<18} rel {:.2e} checked {:>4} skipped {:>3} worst {:?} {:?}",
            e.name, e.report.max_rel_error, e.report.checked, e.report.skipped, e.report.worst, e.elapsed
        );
    }
    let failed: Vec<_> = entries.iter().filter(|e| !e.passed()).map(|e| &e.name).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
