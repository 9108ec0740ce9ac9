//! Generated data converges on the closed-form population oracles: raw AUCs
//! approach the analytic mixture values and attribution recovers the
//! population shares as the site size grows.

use disparity_core::metric::{auc, Auc};
use disparity_core::shapley::{exact_attribute, AttributionOptions};
use disparity_core::synth::{analytic_auc, bundled, generate, ground_truth_phi, population};

#[test]
fn empirical_aucs_approach_analytic_values() {
    let scenario = bundled("null-factor").unwrap().with_sizes(60_000, 60_000).with_seed(5150);
    let pop = population(&scenario).unwrap();
    let ref_truth = analytic_auc(&scenario, pop.reference_weights()).unwrap();
    let ext_truth = analytic_auc(&scenario, pop.external_weights()).unwrap();
    assert!(ref_truth > ext_truth, "scenario must plant a gap");

    let pair = generate(&scenario).unwrap();
    let ref_emp = auc(pair.reference.records(), None).unwrap();
    let ext_emp = auc(pair.external.records(), None).unwrap();
    // AUC standard error at n = 60,000 is comfortably under 1e-2 / 3.
    assert!(
        (ref_emp - ref_truth).abs() < 0.01,
        "reference {ref_emp} vs {ref_truth}"
    );
    assert!(
        (ext_emp - ext_truth).abs() < 0.01,
        "external {ext_emp} vs {ext_truth}"
    );
}

#[test]
fn exact_attribution_recovers_population_shares() {
    let scenario = bundled("correlated-pair")
        .unwrap()
        .with_sizes(150_000, 150_000)
        .with_seed(4242);
    let truth = ground_truth_phi(&scenario).unwrap();
    let pair = generate(&scenario).unwrap();

    let mut opts = AttributionOptions::new(808);
    opts.bootstrap_replicates = 100;
    let names: Vec<&str> = scenario.factor_names();
    let report = exact_attribute(&pair.reference, &pair.external, &names, &Auc, &opts).unwrap();

    assert!(
        (report.total_disparity - truth.total).abs() < 0.01,
        "total {} vs population {}",
        report.total_disparity,
        truth.total
    );
    for f in &report.factors {
        let want = truth.phi[&f.name];
        assert!(
            (f.phi - want).abs() < 0.01,
            "factor {}: {} vs population {}",
            f.name,
            f.phi,
            want
        );
    }
    assert!(
        (report.unexplained - truth.unexplained).abs() < 0.01,
        "unexplained {} vs population {}",
        report.unexplained,
        truth.unexplained
    );
}
