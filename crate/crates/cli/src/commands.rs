//! Subcommand implementations and the error-to-exit-code mapping.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use disparity_core::config::{
    load_run, ConfigError, OutputConfig, OutputFormat, RunConfig, RunError,
};
use disparity_core::dataset::{
    ingest, write_canonical, ColumnSchema, DatasetError, MissingPolicy,
};
use disparity_core::matching::MatchError;
use disparity_core::metric::{bootstrap_ci, Auc, MetricError};
use disparity_core::report::{
    csv_summary, load_report, run_label, save_report, summarize, summarize_all, ReportError,
};
use disparity_core::shapley::{
    attribute, drill_down, exact_attribute, AttributionReport, EngineError,
};
use disparity_core::synth::{bundled, generate, SynthError, SynthScenario, BUNDLED_SCENARIOS};

use crate::svg;
use crate::{Command, EngineOverrides, FormatArg};

/// Failures grouped by exit code: 2 configuration, 3 data, 4 infeasible,
/// 1 anything else (output I/O).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Infeasible(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m)
            | CliError::Data(m)
            | CliError::Infeasible(m)
            | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => c.into(),
            RunError::Data(d) => d.into(),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::TooFewReplicates(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MatchError> for CliError {
    fn from(e: MatchError) -> Self {
        match e {
            MatchError::InsufficientSupport(_) => CliError::Infeasible(e.to_string()),
            MatchError::UnknownFactor(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            EngineError::NoFactors
            | EngineError::InvalidOptions(_)
            | EngineError::TooManyFactors(_)
            | EngineError::NotAGroup(_) => CliError::Config(e.to_string()),
            EngineError::Metric(m) => m.into(),
            EngineError::Match(m) => m.into(),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Invalid(_) | SynthError::Parse(_) => CliError::Config(e.to_string()),
            SynthError::Degenerate(_) => CliError::Data(e.to_string()),
            SynthError::Dataset(d) => d.into(),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Unwritable { .. } | ReportError::Render(_) => {
                CliError::Io(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("cannot write {}: {e}", path.display()))
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Attribute {
            config,
            drill,
            overrides,
        } => cmd_attribute(&config, drill, &overrides, false),
        Command::Exact { config, overrides } => cmd_attribute(&config, None, &overrides, true),
        Command::Auc {
            data,
            score_column,
            label_column,
            replicates,
            seed,
        } => cmd_auc(&data, &score_column, &label_column, replicates, seed),
        Command::Synth {
            scenario,
            out,
            seed,
            reference_n,
            external_n,
        } => cmd_synth(&scenario, &out, seed, reference_n, external_n),
        Command::Report {
            reports,
            out,
            format,
        } => cmd_report(&reports, &out, format),
    }
}

fn apply_overrides(config: &mut RunConfig, overrides: &EngineOverrides) {
    if let Some(seed) = overrides.seed {
        config.seed = Some(seed);
    }
    if let Some(tol) = overrides.tolerance {
        config.stopping.se_tolerance = tol;
    }
    if let Some(max) = overrides.max_iters {
        config.stopping.max_iterations = max;
    }
    if let Some(min) = overrides.min_stratum {
        config.min_stratum = min;
    }
    if let Some(fmt) = overrides.format {
        config.output.formats = match fmt {
            FormatArg::Json => vec![OutputFormat::Json],
            FormatArg::Csv => vec![OutputFormat::Csv],
            FormatArg::Svg => vec![OutputFormat::Svg],
            FormatArg::All => vec![OutputFormat::Json, OutputFormat::Csv, OutputFormat::Svg],
        };
    }
    if let Some(dir) = &overrides.out {
        config.output.dir = dir.clone();
    }
}

fn cmd_attribute(
    config_path: &Path,
    drill: Option<String>,
    overrides: &EngineOverrides,
    exact: bool,
) -> Result<(), CliError> {
    let mut config = RunConfig::load(config_path)?;
    apply_overrides(&mut config, overrides);
    config.required_seed()?;
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    // A configured output dir rides along with the config file; an explicit
    // --out stays relative to the caller's working directory.
    if overrides.out.is_none() && config.output.dir.is_relative() {
        config.output.dir = base.join(&config.output.dir);
    }
    let loaded = load_run(&config, base)?;
    let opts = config.options()?;
    let names: Vec<&str> = loaded.factor_names.iter().map(String::as_str).collect();

    let mut report = match (&drill, exact) {
        (Some(group), _) => drill_down(
            &loaded.reference,
            &loaded.external,
            &names,
            group,
            &Auc,
            &opts,
        )?,
        (None, true) => exact_attribute(&loaded.reference, &loaded.external, &names, &Auc, &opts)?,
        (None, false) => attribute(&loaded.reference, &loaded.external, &names, &Auc, &opts)?,
    };
    report.run_config = Some(
        serde_json::to_value(&config)
            .map_err(|e| CliError::Io(format!("config serialization failed: {e}")))?,
    );
    write_run_outputs(&report, &config.output, &loaded.notes)?;
    print_report(&report);
    Ok(())
}

fn write_run_outputs(
    report: &AttributionReport,
    output: &OutputConfig,
    notes: &[String],
) -> Result<(), CliError> {
    std::fs::create_dir_all(&output.dir).map_err(|e| io_err(&output.dir, e))?;
    if output.formats.contains(&OutputFormat::Json) {
        save_report(report, output.dir.join("report.json"))?;
    }
    if output.formats.contains(&OutputFormat::Csv) {
        let path = output.dir.join("summary.csv");
        let text = csv_summary(std::slice::from_ref(report))?;
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    if output.formats.contains(&OutputFormat::Svg) {
        let path = output.dir.join("chart.svg");
        std::fs::write(&path, svg::render_reports(std::slice::from_ref(report)))
            .map_err(|e| io_err(&path, e))?;
    }
    let log_path = output.dir.join("run.log");
    std::fs::write(&log_path, run_log(report, notes)).map_err(|e| io_err(&log_path, e))?;
    Ok(())
}

fn run_log(report: &AttributionReport, notes: &[String]) -> String {
    let mut log = String::new();
    log.push_str(&format!("run: {}\n", run_label(report)));
    log.push_str(&format!("seed: {}\n", report.seed));
    log.push_str(&format!("metric: {}\n", report.engine.metric));
    log.push_str(&format!(
        "permutations: {} retained, {} skipped\n",
        report.n_permutations, report.skipped_permutations
    ));
    let s = &report.engine.stopping;
    log.push_str(&format!(
        "stopping: se_tolerance {}, min {}, max {}\n",
        s.se_tolerance, s.min_iterations, s.max_iterations
    ));
    if !report.support_failures.is_empty() {
        log.push_str("support failures:\n");
        for f in &report.support_failures {
            log.push_str(&format!(
                "  step '{}' stratum {}: {} permutations, min available {} < {}\n",
                f.step, f.stratum, f.permutations, f.min_available, f.required
            ));
        }
    }
    if !notes.is_empty() {
        log.push_str("notes:\n");
        for note in notes {
            log.push_str(&format!("  {note}\n"));
        }
    }
    let levels = svg::bar_levels(report);
    if levels.inverted {
        log.push_str(&format!(
            "note: matched level {:.6} lies outside [{:.6}, {:.6}]; \
             some factor pulls against the total gap\n",
            levels.matched,
            levels.raw.min(levels.reference),
            levels.raw.max(levels.reference)
        ));
    }
    log
}

fn fraction_text(fraction: Option<f64>) -> String {
    match fraction {
        Some(f) => format!("{f:.3}"),
        None => "n/a".to_string(),
    }
}

fn print_report(report: &AttributionReport) {
    let summary = summarize(report);
    println!("{}  (metric: {})", summary.label, report.engine.metric);
    println!(
        "  reference: {:.4}  [{:.4}, {:.4}]",
        report.reference_performance.value,
        report.reference_performance.ci_low,
        report.reference_performance.ci_high
    );
    println!(
        "  external:  {:.4}  [{:.4}, {:.4}]",
        report.external_performance.value,
        report.external_performance.ci_low,
        report.external_performance.ci_high
    );
    println!("  total disparity: {:.4}", report.total_disparity);
    println!("  {:<24} {:>10} {:>10}", "factor", "phi", "se");
    for f in &report.factors {
        println!("  {:<24} {:>10.4} {:>10.4}", f.name, f.phi, f.se);
    }
    println!(
        "  explained: {:.4} (fraction {})",
        summary.explained,
        fraction_text(summary.explained_fraction)
    );
    println!("  unexplained: {:.4}", summary.unexplained);
    println!(
        "  permutations: {} retained, {} skipped",
        report.n_permutations, report.skipped_permutations
    );
}

fn cmd_auc(
    data: &Path,
    score_column: &str,
    label_column: &str,
    replicates: usize,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let seed = seed.ok_or(ConfigError::MissingSeed)?;
    let schema = ColumnSchema {
        score: score_column.to_string(),
        label: label_column.to_string(),
        factors: BTreeMap::new(),
    };
    let site = data
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset");
    let ingested = ingest(data, &schema, &[], MissingPolicy::DropRow, site)?;
    for issue in &ingested.issues {
        eprintln!("{site}: {issue}");
    }
    let result = bootstrap_ci(ingested.dataset.records(), &Auc, replicates, seed)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&result)
            .map_err(|e| CliError::Io(format!("result serialization failed: {e}")))?
    );
    Ok(())
}

fn cmd_synth(
    scenario_arg: &str,
    out: &Path,
    seed: Option<u64>,
    reference_n: Option<usize>,
    external_n: Option<usize>,
) -> Result<(), CliError> {
    let path = Path::new(scenario_arg);
    let mut scenario = if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read scenario {}: {e}", path.display()))
        })?;
        SynthScenario::from_json(&text)?
    } else {
        bundled(scenario_arg).ok_or_else(|| {
            CliError::Config(format!(
                "no scenario file or bundled scenario named '{scenario_arg}' \
                 (bundled: {})",
                BUNDLED_SCENARIOS.join(", ")
            ))
        })?
    };
    if let Some(seed) = seed {
        scenario = scenario.with_seed(seed);
    }
    if reference_n.is_some() || external_n.is_some() {
        let (ref_n, ext_n) = (
            reference_n.unwrap_or(scenario.reference_n),
            external_n.unwrap_or(scenario.external_n),
        );
        scenario = scenario.with_sizes(ref_n, ext_n);
    }
    let pair = generate(&scenario)?;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_canonical(&pair.reference, out.join("reference.csv"))?;
    write_canonical(&pair.external, out.join("external.csv"))?;
    let scenario_path = out.join("scenario.json");
    std::fs::write(
        &scenario_path,
        serde_json::to_string_pretty(&scenario)
            .map_err(|e| CliError::Io(format!("scenario serialization failed: {e}")))?
            + "\n",
    )
    .map_err(|e| io_err(&scenario_path, e))?;
    let run_config = synth_run_config(&scenario);
    let run_path = out.join("run.json");
    std::fs::write(
        &run_path,
        serde_json::to_string_pretty(&run_config)
            .map_err(|e| CliError::Io(format!("config serialization failed: {e}")))?
            + "\n",
    )
    .map_err(|e| io_err(&run_path, e))?;
    println!(
        "wrote {} reference and {} external records under {}",
        pair.reference.len(),
        pair.external.len(),
        out.display()
    );
    println!("run attribution with: disparity attribute --config {}", run_path.display());
    Ok(())
}

/// Ready-to-run attribution config for a generated pair, with the factor
/// declarations mirrored from the scenario.
fn synth_run_config(scenario: &SynthScenario) -> serde_json::Value {
    use disparity_core::synth::SynthFactor;
    let factors: Vec<serde_json::Value> = scenario
        .factors
        .iter()
        .map(|f| match f {
            SynthFactor::Categorical { name, levels, .. } => serde_json::json!({
                "name": name,
                "kind": "categorical",
                "vocabulary": levels,
            }),
            SynthFactor::Group { name, members } => serde_json::json!({
                "name": name,
                "kind": "group",
                "members": members.iter().map(|m| m.name.clone()).collect::<Vec<_>>(),
            }),
        })
        .collect();
    serde_json::json!({
        "seed": scenario.seed,
        "reference": {"path": "reference.csv", "site_id": "reference"},
        "external": {"path": "external.csv", "site_id": "external"},
        "factors": factors,
        "output": {"dir": "out"},
    })
}

fn cmd_report(
    report_paths: &[PathBuf],
    out: &Path,
    format: Option<FormatArg>,
) -> Result<(), CliError> {
    let mut reports = Vec::with_capacity(report_paths.len());
    for path in report_paths {
        reports.push(load_report(path)?);
    }
    let stats = summarize_all(&reports);
    println!(
        "{:<36} {:>9} {:>10} {:>12} {:>9}",
        "run", "total", "explained", "unexplained", "fraction"
    );
    for s in &stats.summaries {
        println!(
            "{:<36} {:>9.4} {:>10.4} {:>12.4} {:>9}",
            s.label,
            s.total,
            s.explained,
            s.unexplained,
            fraction_text(s.explained_fraction)
        );
    }
    println!(
        "mean fraction: {}   max fraction: {}",
        fraction_text(stats.mean_fraction),
        fraction_text(stats.max_fraction)
    );
    for (report, s) in reports.iter().zip(&stats.summaries) {
        let levels = svg::bar_levels(report);
        if levels.inverted {
            println!(
                "note: {}: matched level {:.6} lies outside [{:.6}, {:.6}]",
                s.label,
                levels.matched,
                levels.raw.min(levels.reference),
                levels.raw.max(levels.reference)
            );
        }
    }

    let want_svg = matches!(format, None | Some(FormatArg::Svg) | Some(FormatArg::All));
    let want_csv = matches!(format, Some(FormatArg::Csv) | Some(FormatArg::All));
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    if want_svg {
        let path = out.join("bars.svg");
        std::fs::write(&path, svg::render_reports(&reports)).map_err(|e| io_err(&path, e))?;
        println!("wrote {}", path.display());
    }
    if want_csv {
        let first: Vec<&str> = reports[0].factors.iter().map(|f| f.name.as_str()).collect();
        if reports
            .iter()
            .any(|r| r.factors.iter().map(|f| f.name.as_str()).collect::<Vec<_>>() != first)
        {
            return Err(CliError::Config(
                "csv summary needs every report to list the same factors".to_string(),
            ));
        }
        let path = out.join("summary.csv");
        std::fs::write(&path, csv_summary(&reports)?).map_err(|e| io_err(&path, e))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
