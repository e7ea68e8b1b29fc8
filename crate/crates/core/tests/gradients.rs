//! Analytic gradients against central finite differences.

use colav::agent::gradcheck::{run_all, REL_TOL};

#[test]
fn every_network_and_loss_agrees_with_finite_differences() {
    let reports = run_all(24, 31).unwrap();
    for r in &reports {
        eprintln!(
            "{}: {} configs, {} comparisons, {} kink skips, worst {:.2e}",
            r.suite, r.configs, r.comparisons, r.kink_skips, r.worst_rel
        );
        assert!(r.passed(), "{}: worst {:.3e} at {}", r.suite, r.worst_rel, r.worst_case);
        assert!(r.worst_rel <= REL_TOL);
    }
}
