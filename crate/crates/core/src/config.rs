//! Run configuration: the JSON schema describing an attribution run, plus the
//! load pipeline that turns two raw tables into matched-ready datasets.
//!
//! A run file names the reference and external tables, declares the case-mix
//! factors with their column mappings, and fixes every knob the engine needs.
//! [`load_run`] then ingests both sites against one shared factor-spec list:
//! undeclared categorical vocabularies are inferred as the union of distinct
//! values seen in either file (sorted), and continuous factors are binned on
//! reference-site quantiles so the same edges apply everywhere.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    bin_continuous, ingest, scan_columns, ColumnSchema, DatasetError, FactorColumns, FactorSpec,
    MissingPolicy, ScoredDataset,
};
use crate::shapley::{AttributionOptions, StoppingRule};

/// Configuration problems: unparseable file, missing seed, contradictory or
/// incomplete declarations. Distinct from data problems found during load.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("seed is required")]
    MissingSeed,
    #[error("cannot read config {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Everything that can stop a run before attribution starts.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DatasetError),
}

fn default_score_column() -> String {
    "score".to_string()
}

fn default_label_column() -> String {
    "label".to_string()
}

/// One site's table and its score/label column names.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    /// Defaults to the file stem.
    #[serde(default)]
    pub site_id: Option<String>,
    #[serde(default = "default_score_column")]
    pub score_column: String,
    #[serde(default = "default_label_column")]
    pub label_column: String,
}

impl DatasetConfig {
    fn site_id(&self) -> String {
        match &self.site_id {
            Some(id) => id.clone(),
            None => self
                .path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("dataset")
                .to_string(),
        }
    }
}

/// A group member: either just a name (read from the column of the same
/// name) or a name with an explicit column.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MemberDecl {
    Name(String),
    Full {
        name: String,
        #[serde(default)]
        column: Option<String>,
    },
}

impl MemberDecl {
    pub fn name(&self) -> &str {
        match self {
            MemberDecl::Name(n) => n,
            MemberDecl::Full { name, .. } => name,
        }
    }

    fn column(&self) -> &str {
        match self {
            MemberDecl::Name(n) => n,
            MemberDecl::Full { name, column } => column.as_deref().unwrap_or(name),
        }
    }
}

fn default_bins() -> usize {
    10
}

/// How one factor is read and interpreted.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorDeclKind {
    Categorical {
        /// Defaults to the factor name.
        #[serde(default)]
        column: Option<String>,
        /// Omitted: inferred as the sorted union of values in both files.
        #[serde(default)]
        vocabulary: Option<Vec<String>>,
    },
    Continuous {
        #[serde(default)]
        column: Option<String>,
        /// Equal-frequency bins cut on reference-site quantiles.
        #[serde(default = "default_bins")]
        bins: usize,
    },
    Group {
        members: Vec<MemberDecl>,
    },
}

/// One declared case-mix factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorDecl {
    pub name: String,
    #[serde(flatten)]
    pub kind: FactorDeclKind,
}

/// File formats a run may emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
    Svg,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Json, OutputFormat::Csv]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_output_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_output_dir(),
            formats: default_formats(),
        }
    }
}

fn default_min_stratum() -> usize {
    crate::matching::DEFAULT_MIN_STRATUM
}

fn default_resample_reps() -> usize {
    1
}

fn default_bootstrap_replicates() -> usize {
    1000
}

/// The full description of one attribution run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; mandatory for any run that draws.
    #[serde(default)]
    pub seed: Option<u64>,
    pub reference: DatasetConfig,
    pub external: DatasetConfig,
    pub factors: Vec<FactorDecl>,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
    #[serde(default)]
    pub stopping: StoppingRule,
    #[serde(default = "default_min_stratum")]
    pub min_stratum: usize,
    #[serde(default = "default_resample_reps")]
    pub resample_reps: usize,
    #[serde(default = "default_bootstrap_replicates")]
    pub bootstrap_replicates: usize,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// The seed, or the error every seedless run must fail with.
    pub fn required_seed(&self) -> Result<u64, ConfigError> {
        self.seed.ok_or(ConfigError::MissingSeed)
    }

    /// Engine options as configured; sampling order and per-permutation
    /// prefix seeds are the defaults, commands override where needed.
    pub fn options(&self) -> Result<AttributionOptions, ConfigError> {
        let mut opts = AttributionOptions::new(self.required_seed()?);
        opts.stopping = self.stopping.clone();
        opts.min_stratum = self.min_stratum;
        opts.resample_reps = self.resample_reps;
        opts.bootstrap_replicates = self.bootstrap_replicates;
        Ok(opts)
    }

    pub fn factor_names(&self) -> Vec<String> {
        self.factors.iter().map(|f| f.name.clone()).collect()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.factors.is_empty() {
            return invalid("at least one factor must be declared".to_string());
        }
        for (cfg, role) in [(&self.reference, "reference"), (&self.external, "external")] {
            if cfg.score_column.is_empty() || cfg.label_column.is_empty() {
                return invalid(format!("{role}: score and label columns must be named"));
            }
        }
        if self.min_stratum == 0 {
            return invalid("min_stratum must be at least 1".to_string());
        }
        if self.resample_reps == 0 {
            return invalid("resample_reps must be at least 1".to_string());
        }
        // Factor and member names share one namespace: drill-down promotes
        // members to players, so collisions would be ambiguous.
        let mut names = BTreeSet::new();
        let mut claim = |name: &str| -> Result<(), ConfigError> {
            if name.is_empty() {
                return Err(ConfigError::Invalid("factor names must be non-empty".into()));
            }
            if !names.insert(name.to_string()) {
                return Err(ConfigError::Invalid(format!("duplicate factor name '{name}'")));
            }
            Ok(())
        };
        for decl in &self.factors {
            claim(&decl.name)?;
            match &decl.kind {
                FactorDeclKind::Categorical { vocabulary, .. } => {
                    if let Some(vocab) = vocabulary {
                        if vocab.is_empty() {
                            return invalid(format!(
                                "factor '{}': declared vocabulary is empty",
                                decl.name
                            ));
                        }
                        let distinct: BTreeSet<_> = vocab.iter().collect();
                        if distinct.len() != vocab.len() || vocab.iter().any(|v| v.is_empty()) {
                            return invalid(format!(
                                "factor '{}': vocabulary entries must be distinct and non-empty",
                                decl.name
                            ));
                        }
                    }
                }
                FactorDeclKind::Continuous { bins, .. } => {
                    if *bins < 2 {
                        return invalid(format!(
                            "factor '{}': bins must be at least 2, got {bins}",
                            decl.name
                        ));
                    }
                }
                FactorDeclKind::Group { members } => {
                    if members.is_empty() {
                        return invalid(format!("group '{}' has no members", decl.name));
                    }
                    for member in members {
                        claim(member.name())?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Both sites loaded against one shared spec list, ready for attribution.
#[derive(Debug)]
pub struct LoadedRun {
    pub reference: ScoredDataset,
    pub external: ScoredDataset,
    /// Player order exactly as declared.
    pub factor_names: Vec<String>,
    /// Row-level ingest diagnostics and binning degradations, for the run log.
    pub notes: Vec<String>,
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Ingest both sites described by `config`. Relative paths resolve against
/// `base_dir` (usually the config file's directory).
pub fn load_run(config: &RunConfig, base_dir: &Path) -> Result<LoadedRun, RunError> {
    config.validate()?;
    let ref_path = resolve(base_dir, &config.reference.path);
    let ext_path = resolve(base_dir, &config.external.path);

    // Vocabularies left undeclared are read off the data: the union of
    // distinct values in either file, sorted, so both sites agree.
    let mut scan_targets: Vec<(usize, String)> = Vec::new();
    for (i, decl) in config.factors.iter().enumerate() {
        if let FactorDeclKind::Categorical {
            column,
            vocabulary: None,
        } = &decl.kind
        {
            scan_targets.push((i, column.clone().unwrap_or_else(|| decl.name.clone())));
        }
    }
    let mut inferred: Vec<Option<Vec<String>>> = vec![None; config.factors.len()];
    if !scan_targets.is_empty() {
        let columns: Vec<String> = scan_targets.iter().map(|(_, c)| c.clone()).collect();
        let mut union = scan_columns(&ref_path, &columns)?;
        for (acc, more) in union.iter_mut().zip(scan_columns(&ext_path, &columns)?) {
            acc.extend(more);
        }
        for ((i, column), values) in scan_targets.into_iter().zip(union) {
            if values.is_empty() {
                return Err(ConfigError::Invalid(format!(
                    "factor '{}': no values in column '{column}' to infer a vocabulary from",
                    config.factors[i].name
                ))
                .into());
            }
            inferred[i] = Some(values.into_iter().collect());
        }
    }

    let mut specs = Vec::with_capacity(config.factors.len());
    let mut factor_columns = std::collections::BTreeMap::new();
    for (i, decl) in config.factors.iter().enumerate() {
        let spec = match &decl.kind {
            FactorDeclKind::Categorical { column, vocabulary } => {
                let vocab = match vocabulary {
                    Some(v) => v.clone(),
                    None => inferred[i].clone().expect("scanned above"),
                };
                let refs: Vec<&str> = vocab.iter().map(String::as_str).collect();
                if let Some(col) = column {
                    factor_columns.insert(decl.name.clone(), FactorColumns::Single(col.clone()));
                }
                FactorSpec::categorical(&decl.name, &refs)
            }
            FactorDeclKind::Continuous { column, .. } => {
                if let Some(col) = column {
                    factor_columns.insert(decl.name.clone(), FactorColumns::Single(col.clone()));
                }
                FactorSpec::continuous(&decl.name, Vec::new())
            }
            FactorDeclKind::Group { members } => {
                let names: Vec<&str> = members.iter().map(MemberDecl::name).collect();
                let map = members
                    .iter()
                    .map(|m| (m.name().to_string(), m.column().to_string()))
                    .collect();
                factor_columns.insert(decl.name.clone(), FactorColumns::Members(map));
                FactorSpec::group(&decl.name, &names)
            }
        };
        specs.push(spec);
    }

    let mut notes = Vec::new();
    let load_site = |site_cfg: &DatasetConfig,
                         path: &Path,
                         notes: &mut Vec<String>|
     -> Result<ScoredDataset, RunError> {
        let schema = ColumnSchema {
            score: site_cfg.score_column.clone(),
            label: site_cfg.label_column.clone(),
            factors: factor_columns.clone(),
        };
        let site_id = site_cfg.site_id();
        let ingested = ingest(path, &schema, &specs, config.missing_policy, &site_id)?;
        for issue in &ingested.issues {
            notes.push(format!("{site_id}: {issue}"));
        }
        Ok(ingested.dataset)
    };
    let mut reference = load_site(&config.reference, &ref_path, &mut notes)?;
    let mut external = load_site(&config.external, &ext_path, &mut notes)?;

    for decl in &config.factors {
        if let FactorDeclKind::Continuous { bins, .. } = &decl.kind {
            let (binned, warnings) = bin_continuous(&external, &decl.name, *bins, &reference)?;
            reference.apply_binning(&binned)?;
            external.apply_binning(&binned)?;
            notes.extend(warnings);
        }
    }

    Ok(LoadedRun {
        reference,
        external,
        factor_names: config.factor_names(),
        notes,
    })
}
