//! Synthetic two-site benchmark scenarios with closed-form oracles.
//!
//! A scenario declares categorical factors (and group factors with Bernoulli
//! members) with per-site level probabilities, optional pairwise dependence
//! between binary axes as a log-odds tilt, and a per-stratum score model
//! drawn from uniform or normal families only. Restricting the families
//! keeps every oracle closed-form: the population AUC of any stratum mixture
//! and the population attribution of each factor are computed exactly, so
//! the sample pipeline can be validated against ground truth instead of
//! against another Monte Carlo run.
//!
//! Generated scores pass through a fixed strictly increasing squash into
//! (0, 1). Rank metrics are invariant under monotone transforms, so every
//! closed-form comparison probability is computed on the raw model draws.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dataset::{DatasetError, FactorSpec, FactorValue, ScoredDataset, ScoredRecord};
use crate::matching::largest_remainder;
use crate::rng::{factorial, nth_permutation, stream_rng};

const MAX_STRATA: usize = 20_000;
pub const MAX_GROUND_TRUTH_FACTORS: usize = 6;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("site '{0}' generated a single class; scenario is degenerate")]
    Degenerate(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum ScoreDist {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
}

impl ScoreDist {
    fn validate(&self) -> Result<(), SynthError> {
        match self {
            ScoreDist::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(SynthError::Invalid(format!(
                        "uniform bounds must be finite with low < high, got [{low}, {high}]"
                    )));
                }
            }
            ScoreDist::Normal { mean, sd } => {
                if !(mean.is_finite() && sd.is_finite() && *sd > 0.0) {
                    return Err(SynthError::Invalid(format!(
                        "normal parameters must be finite with sd > 0, got ({mean}, {sd})"
                    )));
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            ScoreDist::Uniform { low, high } => low + (high - low) * rng.gen::<f64>(),
            ScoreDist::Normal { mean, sd } => {
                let u1: f64 = 1.0 - rng.gen::<f64>();
                let u2: f64 = rng.gen();
                mean + sd * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub positive: ScoreDist,
    pub negative: ScoreDist,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberDef {
    pub name: String,
    pub reference_p: f64,
    pub external_p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SynthFactor {
    Categorical {
        name: String,
        levels: Vec<String>,
        reference_probs: Vec<f64>,
        external_probs: Vec<f64>,
    },
    Group {
        name: String,
        members: Vec<MemberDef>,
    },
}

impl SynthFactor {
    pub fn name(&self) -> &str {
        match self {
            SynthFactor::Categorical { name, .. } | SynthFactor::Group { name, .. } => name,
        }
    }
}

/// A binary-axis pair whose joint distribution is tilted away from
/// independence by `log_odds` (the log odds ratio of the 2x2 table), at both
/// sites. Axes are factor names or group-member names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dependence {
    pub a: String,
    pub b: String,
    pub log_odds: f64,
}

/// Overrides apply in file order to every stratum whose axis levels match
/// all `when` entries; the last matching override wins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrevalenceOverride {
    pub when: BTreeMap<String, String>,
    pub prevalence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreOverride {
    pub when: BTreeMap<String, String>,
    pub scores: ScoreModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthScenario {
    pub name: String,
    pub seed: u64,
    pub reference_n: usize,
    pub external_n: usize,
    pub factors: Vec<SynthFactor>,
    #[serde(default)]
    pub dependence: Vec<Dependence>,
    pub prevalence: f64,
    #[serde(default)]
    pub prevalence_overrides: Vec<PrevalenceOverride>,
    pub scores: ScoreModel,
    #[serde(default)]
    pub score_overrides: Vec<ScoreOverride>,
}

impl SynthScenario {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let scenario: SynthScenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn with_sizes(mut self, reference_n: usize, external_n: usize) -> Self {
        self.reference_n = reference_n;
        self.external_n = external_n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn factor_names(&self) -> Vec<&str> {
        self.factors.iter().map(|f| f.name()).collect()
    }

    /// Dataset-facing factor declarations matching what [`generate`] emits.
    pub fn specs(&self) -> Vec<FactorSpec> {
        self.factors
            .iter()
            .map(|f| match f {
                SynthFactor::Categorical { name, levels, .. } => {
                    FactorSpec::categorical(name, &levels.iter().map(String::as_str).collect::<Vec<_>>())
                }
                SynthFactor::Group { name, members } => FactorSpec::group(
                    name,
                    &members.iter().map(|m| m.name.as_str()).collect::<Vec<_>>(),
                ),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.factors.is_empty() {
            return Err(SynthError::Invalid("at least one factor is required".into()));
        }
        if self.reference_n == 0 || self.external_n == 0 {
            return Err(SynthError::Invalid("site sizes must be positive".into()));
        }
        let pop = Population::build(self)?;
        let _ = pop;
        Ok(())
    }
}

fn check_probs(name: &str, site: &str, levels: usize, probs: &[f64]) -> Result<(), SynthError> {
    if probs.len() != levels {
        return Err(SynthError::Invalid(format!(
            "factor '{name}': {site} probabilities must list one value per level"
        )));
    }
    let mut sum = 0.0;
    for &p in probs {
        if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
            return Err(SynthError::Invalid(format!(
                "factor '{name}': {site} probability {p} out of [0, 1]"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SynthError::Invalid(format!(
            "factor '{name}': {site} probabilities sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

struct AxisDef {
    name: String,
    factor_idx: usize,
    tokens: Vec<String>,
    ref_m: Vec<f64>,
    ext_m: Vec<f64>,
}

enum Block {
    Single(usize),
    Pair { a: usize, b: usize, log_odds: f64 },
}

/// Joint 2x2 with the given success marginals and odds ratio e^log_odds
/// (Plackett construction). Indexed [level_a][level_b].
fn joint_2x2(pa: f64, pb: f64, log_odds: f64) -> Result<[[f64; 2]; 2], SynthError> {
    let theta = log_odds.exp();
    let p11 = if (theta - 1.0).abs() < 1e-12 {
        pa * pb
    } else {
        let s = 1.0 + (pa + pb) * (theta - 1.0);
        let disc = (s * s - 4.0 * theta * (theta - 1.0) * pa * pb).max(0.0);
        (s - disc.sqrt()) / (2.0 * (theta - 1.0))
    };
    let cells = [
        [1.0 - pa - pb + p11, pb - p11],
        [pa - p11, p11],
    ];
    for row in &cells {
        for &c in row {
            if c < -1e-9 {
                return Err(SynthError::Invalid(format!(
                    "dependence tilt {log_odds} is incompatible with marginals ({pa}, {pb})"
                )));
            }
        }
    }
    Ok(cells.map(|row| row.map(|c| c.max(0.0))))
}

#[derive(Debug, Clone)]
pub struct StratumInfo {
    /// Level index per axis, axis order as declared (members expand in
    /// declared order inside their group).
    pub levels: Vec<usize>,
    pub prevalence: f64,
    pub scores: ScoreModel,
}

/// The scenario's exact population view: joint stratum probabilities per
/// site and closed-form score comparisons between strata.
pub struct Population {
    axes: Vec<AxisDef>,
    strides: Vec<usize>,
    strata: Vec<StratumInfo>,
    ref_probs: Vec<f64>,
    ext_probs: Vec<f64>,
    /// players[i] = (factor name, axis indices applied in order).
    players: Vec<(String, Vec<usize>)>,
    pair_matrix: OnceLock<Vec<f64>>,
}

impl Population {
    fn build(scenario: &SynthScenario) -> Result<Self, SynthError> {
        scenario.scores.positive.validate()?;
        scenario.scores.negative.validate()?;
        if !(0.0..=1.0).contains(&scenario.prevalence) {
            return Err(SynthError::Invalid(format!(
                "prevalence {} out of [0, 1]",
                scenario.prevalence
            )));
        }

        let mut axes: Vec<AxisDef> = Vec::new();
        let mut players = Vec::new();
        for (fi, factor) in scenario.factors.iter().enumerate() {
            match factor {
                SynthFactor::Categorical {
                    name,
                    levels,
                    reference_probs,
                    external_probs,
                } => {
                    if levels.len() < 2 {
                        return Err(SynthError::Invalid(format!(
                            "factor '{name}' needs at least two levels"
                        )));
                    }
                    let mut seen = levels.clone();
                    seen.sort();
                    seen.dedup();
                    if seen.len() != levels.len() {
                        return Err(SynthError::Invalid(format!(
                            "factor '{name}' has duplicate levels"
                        )));
                    }
                    check_probs(name, "reference", levels.len(), reference_probs)?;
                    check_probs(name, "external", levels.len(), external_probs)?;
                    players.push((name.clone(), vec![axes.len()]));
                    axes.push(AxisDef {
                        name: name.clone(),
                        factor_idx: fi,
                        tokens: levels.clone(),
                        ref_m: reference_probs.clone(),
                        ext_m: external_probs.clone(),
                    });
                }
                SynthFactor::Group { name, members } => {
                    if members.is_empty() {
                        return Err(SynthError::Invalid(format!(
                            "group '{name}' needs at least one member"
                        )));
                    }
                    let mut idxs = Vec::new();
                    for m in members {
                        for (site, p) in [("reference", m.reference_p), ("external", m.external_p)]
                        {
                            if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                                return Err(SynthError::Invalid(format!(
                                    "member '{}': {site} rate {p} out of [0, 1]",
                                    m.name
                                )));
                            }
                        }
                        idxs.push(axes.len());
                        axes.push(AxisDef {
                            name: m.name.clone(),
                            factor_idx: fi,
                            tokens: vec!["0".into(), "1".into()],
                            ref_m: vec![1.0 - m.reference_p, m.reference_p],
                            ext_m: vec![1.0 - m.external_p, m.external_p],
                        });
                    }
                    players.push((name.clone(), idxs));
                }
            }
        }
        let mut names: Vec<&str> = axes.iter().map(|a| a.name.as_str()).collect();
        names.extend(scenario.factors.iter().map(|f| f.name()));
        names.sort();
        let unique = {
            let mut n = names.clone();
            n.dedup();
            n.len()
        };
        // factor names appear twice for scalar factors (as their own axis)
        let expected = axes.len() + scenario.factors.len()
            - scenario
                .factors
                .iter()
                .filter(|f| matches!(f, SynthFactor::Categorical { .. }))
                .count();
        if unique != expected {
            return Err(SynthError::Invalid(
                "factor and member names must be distinct".into(),
            ));
        }

        let axis_index: BTreeMap<&str, usize> = axes
            .iter()
            .enumerate()
            .map(|(i, a)| (a.name.as_str(), i))
            .collect();
        let mut paired = vec![false; axes.len()];
        let mut blocks = Vec::new();
        for dep in &scenario.dependence {
            if !dep.log_odds.is_finite() {
                return Err(SynthError::Invalid("dependence log_odds must be finite".into()));
            }
            let a = *axis_index.get(dep.a.as_str()).ok_or_else(|| {
                SynthError::Invalid(format!("dependence names unknown axis '{}'", dep.a))
            })?;
            let b = *axis_index.get(dep.b.as_str()).ok_or_else(|| {
                SynthError::Invalid(format!("dependence names unknown axis '{}'", dep.b))
            })?;
            if a == b {
                return Err(SynthError::Invalid(format!(
                    "dependence pairs '{}' with itself",
                    dep.a
                )));
            }
            for axis in [a, b] {
                if axes[axis].tokens.len() != 2 {
                    return Err(SynthError::Invalid(format!(
                        "dependence axis '{}' must be binary",
                        axes[axis].name
                    )));
                }
                if paired[axis] {
                    return Err(SynthError::Invalid(format!(
                        "axis '{}' appears in more than one dependence pair",
                        axes[axis].name
                    )));
                }
                paired[axis] = true;
            }
            blocks.push(Block::Pair {
                a,
                b,
                log_odds: dep.log_odds,
            });
        }
        for (i, flag) in paired.iter().enumerate() {
            if !flag {
                blocks.push(Block::Single(i));
            }
        }

        let mut count = 1usize;
        for a in &axes {
            count = count.saturating_mul(a.tokens.len());
            if count > MAX_STRATA {
                return Err(SynthError::Invalid(format!(
                    "scenario enumerates more than {MAX_STRATA} strata"
                )));
            }
        }
        let mut strides = vec![1usize; axes.len()];
        for i in (0..axes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * axes[i + 1].tokens.len();
        }

        for ov in &scenario.prevalence_overrides {
            if !(0.0..=1.0).contains(&ov.prevalence) {
                return Err(SynthError::Invalid(format!(
                    "override prevalence {} out of [0, 1]",
                    ov.prevalence
                )));
            }
        }
        for ov in &scenario.score_overrides {
            ov.scores.positive.validate()?;
            ov.scores.negative.validate()?;
        }
        let check_when = |when: &BTreeMap<String, String>| -> Result<(), SynthError> {
            for (axis, token) in when {
                let i = *axis_index.get(axis.as_str()).ok_or_else(|| {
                    SynthError::Invalid(format!("override names unknown axis '{axis}'"))
                })?;
                if !axes[i].tokens.contains(token) {
                    return Err(SynthError::Invalid(format!(
                        "override names unknown level '{token}' of axis '{axis}'"
                    )));
                }
            }
            Ok(())
        };
        for ov in &scenario.prevalence_overrides {
            check_when(&ov.when)?;
        }
        for ov in &scenario.score_overrides {
            check_when(&ov.when)?;
        }

        let mut strata = Vec::with_capacity(count);
        let mut ref_probs = Vec::with_capacity(count);
        let mut ext_probs = Vec::with_capacity(count);
        for s in 0..count {
            let levels: Vec<usize> = (0..axes.len())
                .map(|i| (s / strides[i]) % axes[i].tokens.len())
                .collect();
            let matches = |when: &BTreeMap<String, String>| {
                when.iter().all(|(axis, token)| {
                    let i = axis_index[axis.as_str()];
                    axes[i].tokens[levels[i]] == *token
                })
            };
            let mut prevalence = scenario.prevalence;
            for ov in &scenario.prevalence_overrides {
                if matches(&ov.when) {
                    prevalence = ov.prevalence;
                }
            }
            let mut scores = scenario.scores.clone();
            for ov in &scenario.score_overrides {
                if matches(&ov.when) {
                    scores = ov.scores.clone();
                }
            }
            for (site, probs) in [(true, &mut ref_probs), (false, &mut ext_probs)] {
                let mut p = 1.0;
                for block in &blocks {
                    p *= match block {
                        Block::Single(a) => {
                            let m = if site { &axes[*a].ref_m } else { &axes[*a].ext_m };
                            m[levels[*a]]
                        }
                        Block::Pair { a, b, log_odds } => {
                            let (pa, pb) = if site {
                                (axes[*a].ref_m[1], axes[*b].ref_m[1])
                            } else {
                                (axes[*a].ext_m[1], axes[*b].ext_m[1])
                            };
                            joint_2x2(pa, pb, *log_odds)?[levels[*a]][levels[*b]]
                        }
                    };
                }
                probs.push(p);
            }
            strata.push(StratumInfo {
                levels,
                prevalence,
                scores,
            });
        }
        Ok(Population {
            axes,
            strides,
            strata,
            ref_probs,
            ext_probs,
            players,
            pair_matrix: OnceLock::new(),
        })
    }

    pub fn strata(&self) -> &[StratumInfo] {
        &self.strata
    }

    pub fn reference_weights(&self) -> &[f64] {
        &self.ref_probs
    }

    pub fn external_weights(&self) -> &[f64] {
        &self.ext_probs
    }

    /// Axis levels of stratum `s` as name → token.
    pub fn stratum_label(&self, s: usize) -> BTreeMap<String, String> {
        self.strata[s]
            .levels
            .iter()
            .zip(&self.axes)
            .map(|(&l, a)| (a.name.clone(), a.tokens[l].clone()))
            .collect()
    }

    fn pair_matrix(&self) -> &[f64] {
        self.pair_matrix.get_or_init(|| {
            let s = self.strata.len();
            let mut m = vec![0.0; s * s];
            for u in 0..s {
                for v in 0..s {
                    m[u * s + v] =
                        p_greater(&self.strata[u].scores.positive, &self.strata[v].scores.negative);
                }
            }
            m
        })
    }

    /// Exact AUC of the population mixing strata with weights `w`: positives
    /// of stratum u against negatives of stratum v, all pairs.
    pub fn auc(&self, w: &[f64]) -> Result<f64, SynthError> {
        let s = self.strata.len();
        if w.len() != s {
            return Err(SynthError::Invalid(format!(
                "expected {s} stratum weights, got {}",
                w.len()
            )));
        }
        let m = self.pair_matrix();
        let wpos: Vec<f64> = (0..s).map(|u| w[u] * self.strata[u].prevalence).collect();
        let wneg: Vec<f64> = (0..s)
            .map(|v| w[v] * (1.0 - self.strata[v].prevalence))
            .collect();
        let pos_sum: f64 = wpos.iter().sum();
        let neg_sum: f64 = wneg.iter().sum();
        if pos_sum <= 0.0 || neg_sum <= 0.0 {
            return Err(SynthError::Invalid(
                "population mixture is single-class".into(),
            ));
        }
        let mut num = 0.0;
        for u in 0..s {
            if wpos[u] == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for v in 0..s {
                inner += wneg[v] * m[u * s + v];
            }
            num += wpos[u] * inner;
        }
        Ok(num / (pos_sum * neg_sum))
    }

    fn axis_marginal(&self, probs: &[f64], axis: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.axes[axis].tokens.len()];
        for (s, &p) in probs.iter().enumerate() {
            m[(s / self.strides[axis]) % self.axes[axis].tokens.len()] += p;
        }
        m
    }
}

/// P(X > Y) for independent draws from the two families; exact closed forms.
fn p_greater(x: &ScoreDist, y: &ScoreDist) -> f64 {
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let phi = |z: f64| std_normal.cdf(z);
    let dens = |z: f64| (-0.5 * z * z).exp() / (std::f64::consts::TAU).sqrt();
    // antiderivative of the standard normal CDF
    let big_g = |z: f64| z * phi(z) + dens(z);
    match (x, y) {
        (ScoreDist::Normal { mean: mx, sd: sx }, ScoreDist::Normal { mean: my, sd: sy }) => {
            phi((mx - my) / (sx * sx + sy * sy).sqrt())
        }
        (ScoreDist::Uniform { low: a, high: b }, ScoreDist::Uniform { low: c, high: d }) => {
            let above = (b - d.max(*a)).max(0.0) / (b - a);
            let lo = a.max(*c);
            let hi = b.min(*d);
            let overlap = if hi > lo {
                ((hi - c).powi(2) - (lo - c).powi(2)) / (2.0 * (d - c) * (b - a))
            } else {
                0.0
            };
            above + overlap
        }
        (ScoreDist::Normal { mean, sd }, ScoreDist::Uniform { low: c, high: d }) => {
            // E over Y uniform of P(X > y) = 1 - Phi((y - mean)/sd)
            1.0 - sd / (d - c) * (big_g((d - mean) / sd) - big_g((c - mean) / sd))
        }
        (ScoreDist::Uniform { low: a, high: b }, ScoreDist::Normal { mean, sd }) => {
            // E over X uniform of P(Y < x) = Phi((x - mean)/sd)
            sd / (b - a) * (big_g((b - mean) / sd) - big_g((a - mean) / sd))
        }
    }
}

/// Build the exact population view of a scenario.
pub fn population(scenario: &SynthScenario) -> Result<Population, SynthError> {
    Population::build(scenario)
}

/// Exact AUC of the stratum mixture `weights` under the scenario's score
/// model. Weights follow the stratum order of [`Population::strata`].
pub fn analytic_auc(scenario: &SynthScenario, weights: &[f64]) -> Result<f64, SynthError> {
    population(scenario)?.auc(weights)
}

#[derive(Debug)]
pub struct SynthPair {
    pub reference: ScoredDataset,
    pub external: ScoredDataset,
}

fn squash(x: f64) -> f64 {
    1.0 / (1.0 + (-(x - 0.5)).exp())
}

/// Sample both sites. Deterministic per seed; the two sites draw from
/// independent substreams, so changing one site's size leaves the other
/// site's records unchanged.
pub fn generate(scenario: &SynthScenario) -> Result<SynthPair, SynthError> {
    let pop = Population::build(scenario)?;
    let specs = scenario.specs();
    let reference = sample_site(
        scenario,
        &pop,
        &pop.ref_probs,
        scenario.reference_n,
        "reference",
        &specs,
    )?;
    let external = sample_site(
        scenario,
        &pop,
        &pop.ext_probs,
        scenario.external_n,
        "external",
        &specs,
    )?;
    Ok(SynthPair {
        reference,
        external,
    })
}

fn sample_site(
    scenario: &SynthScenario,
    pop: &Population,
    probs: &[f64],
    n: usize,
    site: &str,
    specs: &[FactorSpec],
) -> Result<ScoredDataset, SynthError> {
    // Composition is apportioned exactly rather than drawn multinomially:
    // stratum counts follow largest-remainder rounding of the population
    // weights, and labels within a stratum round its prevalence the same
    // way. Scores come from streams keyed by the generating distribution,
    // so strata that share a distribution receive identical score
    // sequences. Together these make structurally identical factors
    // exactly exchangeable in the sample, not just in expectation.
    let counts = largest_remainder(probs, n as u32);
    let mut records = Vec::with_capacity(n);
    let mut seen = [false; 2];
    for (s, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let info = &pop.strata[s];
        let positives = largest_remainder(&[info.prevalence, 1.0 - info.prevalence], count)[0];

        let mut factors: BTreeMap<String, FactorValue> = BTreeMap::new();
        for (fi, factor) in scenario.factors.iter().enumerate() {
            match factor {
                SynthFactor::Categorical { name, .. } => {
                    let axis = pop
                        .axes
                        .iter()
                        .position(|a| a.factor_idx == fi)
                        .expect("axis exists");
                    factors.insert(
                        name.clone(),
                        FactorValue::Category(
                            pop.axes[axis].tokens[info.levels[axis]].clone(),
                        ),
                    );
                }
                SynthFactor::Group { name, .. } => {
                    let flags: std::collections::BTreeSet<String> = pop
                        .axes
                        .iter()
                        .enumerate()
                        .filter(|(ai, a)| a.factor_idx == fi && info.levels[*ai] == 1)
                        .map(|(_, a)| a.name.clone())
                        .collect();
                    factors.insert(name.clone(), FactorValue::Flags(flags));
                }
            }
        }

        for (label, dist, k) in [
            (1u8, &info.scores.positive, positives),
            (0u8, &info.scores.negative, count - positives),
        ] {
            if k == 0 {
                continue;
            }
            seen[usize::from(label)] = true;
            let mut rng = score_stream(scenario.seed, site, dist);
            for _ in 0..k {
                records.push(ScoredRecord {
                    score: squash(dist.sample(&mut rng)),
                    label,
                    factors: factors.clone(),
                });
            }
        }
    }
    if !(seen[0] && seen[1]) {
        return Err(SynthError::Degenerate(site.to_string()));
    }
    Ok(ScoredDataset::new(site, records, specs.to_vec())?)
}

/// Score RNG keyed by site and distribution parameters, restarted for every
/// stratum-class cell, so equal distributions yield equal sequences.
fn score_stream(seed: u64, site: &str, dist: &ScoreDist) -> ChaCha8Rng {
    let key = match dist {
        ScoreDist::Normal { mean, sd } => format!("normal:{mean}:{sd}"),
        ScoreDist::Uniform { low, high } => format!("uniform:{low}:{high}"),
    };
    stream_rng(seed, &format!("scores-{site}-{key}"), 0)
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Population attribution per factor, keyed by factor name.
    pub phi: BTreeMap<String, f64>,
    pub reference_auc: f64,
    pub external_auc: f64,
    /// reference_auc - external_auc.
    pub total: f64,
    /// total minus the summed attributions; nonzero when sequential
    /// marginal matching cannot reproduce the reference joint.
    pub unexplained: f64,
}

/// Exact population attribution: enumerate every factor ordering, reweight
/// the external stratum distribution one axis at a time toward the
/// reference marginal (the population analogue of the sample matcher), and
/// average each factor's AUC increments.
pub fn ground_truth_phi(scenario: &SynthScenario) -> Result<GroundTruth, SynthError> {
    let pop = Population::build(scenario)?;
    let k = pop.players.len();
    if k > MAX_GROUND_TRUTH_FACTORS {
        return Err(SynthError::Invalid(format!(
            "ground truth supports at most {MAX_GROUND_TRUTH_FACTORS} factors, got {k}"
        )));
    }
    let reference_auc = pop.auc(&pop.ref_probs)?;
    let external_auc = pop.auc(&pop.ext_probs)?;
    let ref_axis_marginals: Vec<Vec<f64>> = (0..pop.axes.len())
        .map(|a| pop.axis_marginal(&pop.ref_probs, a))
        .collect();

    let total_perms = factorial(k);
    let mut sums = vec![0.0; k];
    for t in 0..total_perms {
        let order = nth_permutation(k, t);
        let mut g = pop.ext_probs.clone();
        let mut p_prev = external_auc;
        for &pl in &order {
            for &axis in &pop.players[pl].1 {
                let m = pop.axis_marginal(&g, axis);
                let r = &ref_axis_marginals[axis];
                let len = pop.axes[axis].tokens.len();
                let stride = pop.strides[axis];
                for (s, gs) in g.iter_mut().enumerate() {
                    let l = (s / stride) % len;
                    if m[l] > 0.0 {
                        *gs *= r[l] / m[l];
                    } else if r[l] > 1e-15 {
                        return Err(SynthError::Invalid(format!(
                            "axis '{}' level '{}' has reference mass but no external mass along some matching order",
                            pop.axes[axis].name, pop.axes[axis].tokens[l]
                        )));
                    }
                }
            }
            let p = pop.auc(&g)?;
            sums[pl] += p - p_prev;
            p_prev = p;
        }
    }
    let phi: BTreeMap<String, f64> = pop
        .players
        .iter()
        .zip(&sums)
        .map(|((name, _), s)| (name.clone(), s / total_perms as f64))
        .collect();
    let total = reference_auc - external_auc;
    let explained: f64 = phi.values().sum();
    Ok(GroundTruth {
        phi,
        reference_auc,
        external_auc,
        total,
        unexplained: total - explained,
    })
}

pub const BUNDLED_SCENARIOS: [&str; 5] = [
    "null-factor",
    "single-confounder",
    "exchangeable-pair",
    "correlated-pair",
    "six-factor-clinical",
];

/// Load one of the scenarios shipped with the crate.
pub fn bundled(name: &str) -> Option<SynthScenario> {
    let text = match name {
        "null-factor" => include_str!("../scenarios/null-factor.json"),
        "single-confounder" => include_str!("../scenarios/single-confounder.json"),
        "exchangeable-pair" => include_str!("../scenarios/exchangeable-pair.json"),
        "correlated-pair" => include_str!("../scenarios/correlated-pair.json"),
        "six-factor-clinical" => include_str!("../scenarios/six-factor-clinical.json"),
        _ => return None,
    };
    Some(SynthScenario::from_json(text).expect("bundled scenario is valid"))
}
