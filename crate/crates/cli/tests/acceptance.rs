//! End-to-end acceptance gate. Each test prints one pass/fail line for the
//! behavior it pins down; the suite exercises the library in-process and the
//! installed binary where the check is about process-level behavior.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::Instant;

use disparity_core::dataset::ScoredRecord;
use disparity_core::matching::matched_performance;
use disparity_core::metric::{auc, Auc};
use disparity_core::shapley::{
    attribute, drill_down, exact_attribute, AttributionOptions, AttributionReport,
    PrefixSeedMode, StoppingRule,
};
use disparity_core::synth::{bundled, generate, ground_truth_phi, SynthPair};

const EFFICIENCY_TOL: f64 = 1e-9;

fn check_efficiency(report: &AttributionReport, context: &str) {
    let gap = (report.explained + report.unexplained - report.total_disparity).abs();
    assert!(
        gap < EFFICIENCY_TOL,
        "{context}: explained + unexplained drifts from total by {gap:e}"
    );
}

fn phi(report: &AttributionReport, name: &str) -> (f64, f64) {
    let f = report
        .factors
        .iter()
        .find(|f| f.name == name)
        .unwrap_or_else(|| panic!("factor {name} missing from report"));
    (f.phi, f.se)
}

fn pair(scenario_name: &str, seed: u64) -> SynthPair {
    let scenario = bundled(scenario_name).expect("bundled scenario").with_seed(seed);
    generate(&scenario).expect("synthetic generation")
}

fn names(scenario_name: &str) -> Vec<String> {
    bundled(scenario_name)
        .expect("bundled scenario")
        .factor_names()
        .into_iter()
        .map(str::to_owned)
        .collect()
}

fn as_refs(names: &[String]) -> Vec<&str> {
    names.iter().map(String::as_str).collect()
}

/// Sum of shares plus the residual must reconstruct the total gap to within
/// numerical noise, on every run shape: sampled, exact, and drill-down.
#[test]
fn criterion_01_efficiency() {
    let held = names("correlated-pair");
    let factors = as_refs(&held);
    let data = pair("correlated-pair", 11);

    let mut opts = AttributionOptions::new(101);
    opts.bootstrap_replicates = 100;
    let sampled = attribute(&data.reference, &data.external, &factors, &Auc, &opts)
        .expect("sampled attribution");
    check_efficiency(&sampled, "sampled run");

    let exact = exact_attribute(&data.reference, &data.external, &factors, &Auc, &opts)
        .expect("exact attribution");
    check_efficiency(&exact, "exact run");

    let grouped = pair("six-factor-clinical", 12);
    let gnames = names("six-factor-clinical");
    let gfactors = as_refs(&gnames);
    let mut gopts = AttributionOptions::new(102);
    gopts.bootstrap_replicates = 100;
    let drilled = drill_down(
        &grouped.reference,
        &grouped.external,
        &gfactors,
        "comorbidities",
        &Auc,
        &gopts,
    )
    .expect("drill-down attribution");
    check_efficiency(&drilled, "drill-down run");

    println!(
        "criterion 1 (efficiency): PASS - residual gaps {:.2e}, {:.2e}, {:.2e} all below {EFFICIENCY_TOL:e}",
        (sampled.explained + sampled.unexplained - sampled.total_disparity).abs(),
        (exact.explained + exact.unexplained - exact.total_disparity).abs(),
        (drilled.explained + drilled.unexplained - drilled.total_disparity).abs(),
    );
}

/// A from-scratch scripted enumeration over all 3! orders, built only from
/// `matched_performance`, must agree with `exact_attribute` to 1e-9 per
/// factor, and the sampled engine must land within 3 SE of that.
#[test]
fn criterion_02_oracle_equivalence() {
    const SEED: u64 = 33;
    let data = pair("correlated-pair", 7);
    let names = names("correlated-pair");
    let factors = as_refs(&names);
    assert_eq!(factors.len(), 3, "scenario is expected to carry three factors");

    let mut opts = AttributionOptions::new(SEED);
    opts.bootstrap_replicates = 100;
    let exact = exact_attribute(&data.reference, &data.external, &factors, &Auc, &opts)
        .expect("exact attribution");
    check_efficiency(&exact, "exact run");
    assert_eq!(exact.skipped_permutations, 0, "enumeration must keep all orders");

    // Scripted oracle: walk every order, accumulating marginal gains from the
    // raw external level as each factor joins the matched prefix.
    let orders: [[usize; 3]; 6] =
        [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let p0 = matched_performance(
        &data.reference,
        &data.external,
        &[],
        SEED,
        opts.min_stratum,
        opts.resample_reps,
        &Auc,
    )
    .expect("raw external level");
    let mut totals = BTreeMap::new();
    for order in &orders {
        let mut prefix: Vec<&str> = Vec::new();
        let mut previous = p0;
        for &idx in order {
            prefix.push(factors[idx]);
            let level = matched_performance(
                &data.reference,
                &data.external,
                &prefix,
                SEED,
                opts.min_stratum,
                opts.resample_reps,
                &Auc,
            )
            .expect("matched level");
            *totals.entry(factors[idx]).or_insert(0.0) += level - previous;
            previous = level;
        }
    }
    for name in &factors {
        let scripted = totals[name] / orders.len() as f64;
        let (engine, _) = phi(&exact, name);
        assert!(
            (scripted - engine).abs() < 1e-9,
            "{name}: scripted {scripted} vs exact {engine}"
        );
    }
    assert!(
        (p0 - exact.external_performance.value).abs() < 1e-12,
        "raw level disagrees with the report's external performance"
    );

    let mut mc = AttributionOptions::new(SEED);
    mc.bootstrap_replicates = 100;
    mc.prefix_seeds = PrefixSeedMode::Shared;
    mc.stopping = StoppingRule { se_tolerance: 1e-4, min_iterations: 30, max_iterations: 20_000 };
    let sampled = attribute(&data.reference, &data.external, &factors, &Auc, &mc)
        .expect("sampled attribution");
    check_efficiency(&sampled, "sampled run");
    let mut worst = 0.0f64;
    for name in &factors {
        let (exact_phi, _) = phi(&exact, name);
        let (mc_phi, se) = phi(&sampled, name);
        let pull = (mc_phi - exact_phi).abs();
        worst = worst.max(if se > 0.0 { pull / se } else { pull / 1e-15 });
        assert!(
            pull <= 3.0 * se + 1e-12,
            "{name}: sampled {mc_phi} strays {pull} from exact {exact_phi} (se {se})"
        );
    }
    println!(
        "criterion 2 (oracle equivalence): PASS - scripted enumeration matches exact to 1e-9; sampled engine worst deviation {worst:.2} SE of 3 allowed ({} permutations)",
        sampled.n_permutations
    );
}

/// A factor with identical composition on both sites must receive a share
/// indistinguishable from zero in at least 48 of 50 seeded runs.
#[test]
fn criterion_03_null_factor() {
    let scenario = bundled("null-factor").expect("bundled scenario");
    let names = names("null-factor");
    let factors = as_refs(&names);
    let mut hits = 0u32;
    let mut worst = 0.0f64;
    for rep in 0..50u64 {
        let data = generate(&scenario.clone().with_seed(1_000 + rep)).expect("generation");
        let mut opts = AttributionOptions::new(5_000 + rep);
        opts.bootstrap_replicates = 100;
        let report = attribute(&data.reference, &data.external, &factors, &Auc, &opts)
            .expect("attribution");
        check_efficiency(&report, "null-factor run");
        let (value, se) = phi(&report, "dummy");
        let bound = (2.0 * se).max(1e-3);
        if value.abs() < bound {
            hits += 1;
        }
        worst = worst.max(value.abs());
    }
    assert!(hits >= 48, "dummy factor flagged as meaningful in {} of 50 runs", 50 - hits);
    println!(
        "criterion 3 (null factor): PASS - {hits}/50 runs inside the noise band, largest |share| {worst:.5}"
    );
}

/// Two factors constructed exchangeably must receive statistically equal
/// shares in at least 48 of 50 seeded runs.
#[test]
fn criterion_04_symmetry() {
    let scenario = bundled("exchangeable-pair").expect("bundled scenario");
    let names = names("exchangeable-pair");
    let factors = as_refs(&names);
    let mut hits = 0u32;
    let mut worst = 0.0f64;
    for rep in 0..50u64 {
        let data = generate(&scenario.clone().with_seed(2_000 + rep)).expect("generation");
        let mut opts = AttributionOptions::new(7_000 + rep);
        opts.bootstrap_replicates = 100;
        let report = attribute(&data.reference, &data.external, &factors, &Auc, &opts)
            .expect("attribution");
        check_efficiency(&report, "exchangeable run");
        let (a, se_a) = phi(&report, "factor_a");
        let (b, se_b) = phi(&report, "factor_b");
        let gap = (a - b).abs();
        if gap < 2.0 * (se_a + se_b) {
            hits += 1;
        }
        worst = worst.max(gap);
    }
    assert!(hits >= 48, "exchangeable factors separated in {} of 50 runs", 50 - hits);
    println!(
        "criterion 4 (symmetry): PASS - {hits}/50 runs statistically tied, largest |share gap| {worst:.5}"
    );
}

/// On a large synthetic pair with a known generative decomposition, the
/// recovered shares must match the closed-form values and the residual must
/// vanish.
#[test]
fn criterion_05_ground_truth() {
    let scenario = bundled("single-confounder")
        .expect("bundled scenario")
        .with_sizes(50_000, 50_000)
        .with_seed(41);
    let truth = ground_truth_phi(&scenario).expect("closed-form shares");
    let data = generate(&scenario).expect("generation");
    let names = names("single-confounder");
    let factors = as_refs(&names);
    let mut opts = AttributionOptions::new(43);
    opts.bootstrap_replicates = 100;
    let report =
        attribute(&data.reference, &data.external, &factors, &Auc, &opts).expect("attribution");
    check_efficiency(&report, "ground-truth run");

    let mut detail = String::new();
    for name in &factors {
        let (value, se) = phi(&report, name);
        let expected = truth.phi[*name];
        let tol = (3.0 * se).max(0.005);
        assert!(
            (value - expected).abs() < tol,
            "{name}: recovered {value} vs generative {expected} (tol {tol})"
        );
        detail.push_str(&format!("{name} {value:.4}~{expected:.4} "));
    }
    let residual_tol = report.factors.iter().map(|f| 3.0 * f.se).fold(0.005f64, f64::max);
    assert!(
        report.unexplained.abs() < residual_tol,
        "residual {} should vanish for a fully-composed scenario",
        report.unexplained
    );
    println!(
        "criterion 5 (ground truth): PASS - {detail}residual {:.5} (generative residual {:.5})",
        report.unexplained, truth.unexplained
    );
}

/// The ranking metric must agree exactly with brute-force pair counting on
/// random small datasets, and integer weights must behave exactly like
/// replicated records.
#[test]
fn criterion_06_metric_oracle() {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn brute_force(records: &[ScoredRecord]) -> f64 {
        let mut wins = 0.0f64;
        let mut pairs = 0.0f64;
        for p in records.iter().filter(|r| r.label == 1) {
            for n in records.iter().filter(|r| r.label == 0) {
                pairs += 1.0;
                if p.score > n.score {
                    wins += 1.0;
                } else if p.score == n.score {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    let mut rng = StdRng::seed_from_u64(90);
    let mut checked = 0u32;
    while checked < 1_000 {
        let n = rng.gen_range(4..=50);
        let records: Vec<ScoredRecord> = (0..n)
            .map(|_| {
                // Half the scores live on a coarse grid so ties actually occur.
                let score = if rng.gen_bool(0.5) {
                    f64::from(rng.gen_range(0..=10u32)) / 10.0
                } else {
                    rng.gen_range(0.0..1.0)
                };
                ScoredRecord { score, label: u8::from(rng.gen_bool(0.4)), factors: BTreeMap::new() }
            })
            .collect();
        if records.iter().all(|r| r.label == 1) || records.iter().all(|r| r.label == 0) {
            continue;
        }
        let fast = auc(&records, None).expect("tie-aware ranking metric");
        let slow = brute_force(&records);
        assert!(
            fast == slow,
            "dataset {checked}: prepared metric {fast} != pair counting {slow}"
        );

        let weights: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(1..=3u32))).collect();
        let weighted = auc(&records, Some(&weights)).expect("weighted metric");
        let replicated: Vec<ScoredRecord> = records
            .iter()
            .zip(&weights)
            .flat_map(|(r, w)| std::iter::repeat(r.clone()).take(*w as usize))
            .collect();
        let unrolled = auc(&replicated, None).expect("replicated metric");
        assert!(
            weighted == unrolled,
            "dataset {checked}: weighted {weighted} != replicated {unrolled}"
        );
        checked += 1;
    }
    println!(
        "criterion 6 (metric oracle): PASS - {checked} random datasets match pair counting and weight unrolling exactly"
    );
}

/// The adaptive sampler must stop before its iteration ceiling on a
/// well-behaved six-factor problem, and every reported SE must sit under
/// the default tolerance.
#[test]
fn criterion_07_stopping() {
    let data = pair("six-factor-clinical", 17);
    let names = names("six-factor-clinical");
    let factors = as_refs(&names);
    let mut opts = AttributionOptions::new(19);
    opts.bootstrap_replicates = 100;
    let report =
        attribute(&data.reference, &data.external, &factors, &Auc, &opts).expect("attribution");
    check_efficiency(&report, "stopping run");

    let attempted = report.n_permutations + report.skipped_permutations;
    assert!(
        (attempted as usize) < opts.stopping.max_iterations,
        "sampler ran to its ceiling ({attempted} permutations)"
    );
    let worst = report.factors.iter().map(|f| f.se).fold(0.0f64, f64::max);
    assert!(
        worst < opts.stopping.se_tolerance,
        "worst SE {worst} exceeds tolerance {}",
        opts.stopping.se_tolerance
    );
    println!(
        "criterion 7 (stopping): PASS - stopped after {} of {} permutations, worst SE {worst:.5}",
        report.n_permutations, opts.stopping.max_iterations
    );
}

/// Feeding six persisted reports with known totals and residuals through the
/// report command must reproduce the expected mean and maximum explained
/// fractions.
#[test]
fn criterion_08_fixture_arithmetic() {
    use disparity_core::metric::MetricResult;
    use disparity_core::report::save_report;
    use disparity_core::shapley::{EngineSettings, FactorAttribution, PermutationOrder};

    let dir = tempfile::tempdir().expect("tempdir");
    let factor_names = ["age", "sex", "view", "size", "comorbidities", "scanner"];
    // (reference site, external site, reference level, total gap, residual)
    let rows = [
        ("site-a", "site-b", 0.895, 0.135, 0.094),
        ("site-a", "site-c", 0.895, 0.147, 0.059),
        ("site-b", "site-a", 0.897, 0.045, 0.029),
        ("site-b", "site-c", 0.897, 0.032, 0.031),
        ("site-c", "site-a", 0.884, 0.051, 0.034),
        ("site-c", "site-b", 0.884, 0.059, 0.058),
    ];
    let mut paths = Vec::new();
    for (idx, (reference, external, level, total, residual)) in rows.iter().enumerate() {
        let spread = [0.31, 0.22, 0.18, 0.13, 0.10, 0.06];
        let explained_target = total - residual;
        let factors: Vec<FactorAttribution> = factor_names
            .iter()
            .zip(&spread)
            .map(|(name, share)| FactorAttribution {
                name: (*name).to_owned(),
                phi: explained_target * share,
                se: 0.001,
                n_permutations: 400,
            })
            .collect();
        let explained: f64 = factors.iter().map(|f| f.phi).sum();
        let report = AttributionReport {
            schema_version: 1,
            reference_site: (*reference).to_owned(),
            external_site: (*external).to_owned(),
            reference_performance: MetricResult {
                value: *level,
                ci_low: level - 0.01,
                ci_high: level + 0.01,
                n_pos: 400,
                n_neg: 3_600,
            },
            external_performance: MetricResult {
                value: level - total,
                ci_low: level - total - 0.01,
                ci_high: level - total + 0.01,
                n_pos: 400,
                n_neg: 3_600,
            },
            total_disparity: *total,
            factors,
            explained,
            unexplained: total - explained,
            n_permutations: 400,
            skipped_permutations: 0,
            support_failures: Vec::new(),
            seed: 1,
            engine: EngineSettings {
                metric: "auc".to_owned(),
                stopping: StoppingRule::default(),
                min_stratum: 5,
                resample_reps: 1,
                bootstrap_replicates: 1_000,
                permutation_order: PermutationOrder::Sampled,
                prefix_seeds: PrefixSeedMode::PerPermutation,
            },
            drill: None,
            run_config: None,
        };
        let path = dir.path().join(format!("pair{idx}.json"));
        save_report(&report, &path).expect("persist fixture report");
        paths.push(path);
    }

    let out = dir.path().join("summary");
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_disparity"));
    cmd.arg("report");
    for path in &paths {
        cmd.arg(path);
    }
    let output = cmd.arg("--out").arg(&out).output().expect("report command");
    assert!(output.status.success(), "report command failed: {output:?}");
    let stdout = String::from_utf8(output.stdout).expect("utf8 stdout");
    let line = stdout
        .lines()
        .find(|l| l.starts_with("mean fraction:"))
        .unwrap_or_else(|| panic!("no fraction summary in output:\n{stdout}"));
    let numbers: Vec<f64> = line
        .split(|c: char| !c.is_ascii_digit() && c != '.')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().expect("fraction"))
        .collect();
    assert_eq!(numbers.len(), 2, "expected mean and max in {line:?}");
    let (mean, max) = (numbers[0], numbers[1]);
    assert!((mean - 0.273).abs() <= 0.005, "mean fraction {mean} not near 0.273");
    assert!((max - 0.599).abs() <= 0.005, "max fraction {max} not near 0.599");
    println!(
        "criterion 8 (fixture arithmetic): PASS - mean fraction {mean} and max fraction {max} reproduced from six persisted reports"
    );
}

/// The same run must produce byte-identical artifacts regardless of how many
/// worker threads the process is granted.
#[test]
fn criterion_09_thread_determinism() {
    let dir = tempfile::tempdir().expect("tempdir");
    let synth_dir = dir.path().join("synth");
    let status = Command::new(env!("CARGO_BIN_EXE_disparity"))
        .args(["synth", "six-factor-clinical", "--seed", "23", "--out"])
        .arg(&synth_dir)
        .status()
        .expect("synth command");
    assert!(status.success(), "synth generation failed");

    let config = synth_dir.join("run.json");
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        // Identical invocations from different working directories, so the
        // persisted run configuration stays byte-for-byte comparable.
        let cwd = dir.path().join(format!("run-{threads}"));
        std::fs::create_dir(&cwd).expect("run dir");
        let status = Command::new(env!("CARGO_BIN_EXE_disparity"))
            .env("RAYON_NUM_THREADS", threads)
            .current_dir(&cwd)
            .arg("attribute")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg("out")
            .status()
            .expect("attribute command");
        assert!(status.success(), "attribution with {threads} threads failed");
        outputs.push((
            std::fs::read(cwd.join("out/report.json")).expect("report bytes"),
            std::fs::read(cwd.join("out/summary.csv")).expect("summary bytes"),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "report.json differs across thread counts");
    assert_eq!(outputs[0].1, outputs[1].1, "summary.csv differs across thread counts");
    println!(
        "criterion 9 (thread determinism): PASS - report.json and summary.csv byte-identical with 1 and 4 worker threads ({} bytes)",
        outputs[0].0.len()
    );
}

/// A six-factor run on 20k records per site must finish comfortably inside
/// ten minutes on a single core.
#[test]
fn criterion_10_performance() {
    let scenario = bundled("six-factor-clinical")
        .expect("bundled scenario")
        .with_sizes(20_000, 20_000)
        .with_seed(29);
    let data = generate(&scenario).expect("generation");
    let names = names("six-factor-clinical");
    let factors = as_refs(&names);
    let opts = AttributionOptions::new(31);

    let start = Instant::now();
    let report =
        attribute(&data.reference, &data.external, &factors, &Auc, &opts).expect("attribution");
    let elapsed = start.elapsed();
    check_efficiency(&report, "performance run");
    assert!(
        elapsed.as_secs_f64() < 600.0,
        "attribution took {:.1}s, over the ten-minute budget",
        elapsed.as_secs_f64()
    );
    println!(
        "criterion 10 (performance): PASS - 20k-per-site six-factor run finished in {:.1}s ({} permutations)",
        elapsed.as_secs_f64(),
        report.n_permutations
    );
}
