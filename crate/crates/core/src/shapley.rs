//! Order-averaged attribution of a cross-site performance gap.
//!
//! The gap is measured as reference within-site performance minus raw
//! external performance. Factors are matched one at a time along a
//! permutation of the declared factor list; the change in the metric when a
//! factor's matching step lands is that factor's marginal contribution under
//! that ordering. Averaging marginal contributions over orderings yields one
//! additive share per factor, and whatever the full matching chain fails to
//! move stays in an explicit unexplained remainder, so shares, remainder,
//! and gap always reconcile exactly.
//!
//! Permutations whose chain hits a support failure (or produces a
//! single-class resample) are dropped from every factor's average. If more
//! than half of the sampled permutations drop, the attribution is reported
//! as infeasible rather than returned with a hollowed-out sample.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FactorKind, FactorSpec, ScoredDataset};
use crate::matching::{MatchContext, MatchError, PlayerSpec, StepSeeder, SupportFailure};
use crate::metric::{
    bootstrap_ci, bootstrap_ci_multiset, bootstrap_ci_prepared, Metric, MetricError,
    MetricResult, PreparedMetric,
};
use crate::rng::{factorial, nth_permutation, stream_rng, StableHash};

pub const MAX_EXACT_FACTORS: usize = 8;

/// Sampling is cut off once every factor's standard error drops below
/// `se_tolerance` (with at least `min_iterations` retained permutations),
/// or after `max_iterations` sampled permutations, whichever comes first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoppingRule {
    pub se_tolerance: f64,
    pub min_iterations: usize,
    pub max_iterations: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule {
            se_tolerance: 0.005,
            min_iterations: 30,
            max_iterations: 2000,
        }
    }
}

impl StoppingRule {
    fn validate(&self) -> Result<(), EngineError> {
        if !(self.se_tolerance.is_finite() && self.se_tolerance > 0.0) {
            return Err(EngineError::InvalidOptions(
                "se_tolerance must be positive and finite".into(),
            ));
        }
        if self.min_iterations < 2 {
            return Err(EngineError::InvalidOptions(
                "min_iterations must be at least 2".into(),
            ));
        }
        if self.max_iterations < self.min_iterations {
            return Err(EngineError::InvalidOptions(
                "max_iterations must be at least min_iterations".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationOrder {
    /// Independent uniform draws from the permutation group.
    Sampled,
    /// Lexicographic enumeration, cycling if more iterations are requested
    /// than there are permutations.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixSeedMode {
    /// Each permutation resamples with its own seed, so chains are
    /// independent Monte Carlo draws.
    PerPermutation,
    /// Resampling draws are keyed by the ordered factor prefix, so every
    /// permutation that shares a prefix reuses the identical resample.
    Shared,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionOptions {
    pub seed: u64,
    pub stopping: StoppingRule,
    /// Minimum distinct rows a needed stratum must hold at its step.
    pub min_stratum: usize,
    /// Independent resamples averaged at every evaluation point.
    pub resample_reps: usize,
    pub bootstrap_replicates: usize,
    pub permutation_order: PermutationOrder,
    pub prefix_seeds: PrefixSeedMode,
}

impl AttributionOptions {
    pub fn new(seed: u64) -> Self {
        AttributionOptions {
            seed,
            stopping: StoppingRule::default(),
            min_stratum: crate::matching::DEFAULT_MIN_STRATUM,
            resample_reps: 1,
            bootstrap_replicates: 1000,
            permutation_order: PermutationOrder::Sampled,
            prefix_seeds: PrefixSeedMode::PerPermutation,
        }
    }

    fn validate(&self) -> Result<(), EngineError> {
        self.stopping.validate()?;
        if self.resample_reps == 0 {
            return Err(EngineError::InvalidOptions(
                "resample_reps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorAttribution {
    pub name: String,
    /// Additive share of the total gap carried by this factor.
    pub phi: f64,
    /// Monte Carlo standard error of `phi`; zero under exact enumeration.
    pub se: f64,
    /// Retained permutations behind `phi`; identical for every factor
    /// because an ordering only counts once its whole chain evaluates.
    pub n_permutations: u64,
}

/// One stratum that caused permutations to drop, aggregated over the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSummary {
    pub step: String,
    pub stratum: String,
    pub permutations: u64,
    pub min_available: usize,
    pub required: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSettings {
    pub metric: String,
    pub stopping: StoppingRule,
    pub min_stratum: usize,
    pub resample_reps: usize,
    pub bootstrap_replicates: usize,
    pub permutation_order: PermutationOrder,
    pub prefix_seeds: PrefixSeedMode,
}

/// Present when the run attributed within one group's members after
/// matching every other factor first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrillInfo {
    pub group: String,
    /// Factors matched (in this order) before member attribution began.
    pub matched_prefix: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionReport {
    pub schema_version: u32,
    pub reference_site: String,
    pub external_site: String,
    pub reference_performance: MetricResult,
    pub external_performance: MetricResult,
    /// reference value minus external value.
    pub total_disparity: f64,
    pub factors: Vec<FactorAttribution>,
    /// Sum of the factor shares.
    pub explained: f64,
    /// total_disparity minus explained.
    pub unexplained: f64,
    /// Permutations retained in the averages.
    pub n_permutations: u64,
    pub skipped_permutations: u64,
    pub support_failures: Vec<SupportSummary>,
    pub seed: u64,
    pub engine: EngineSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drill: Option<DrillInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("no factors to attribute")]
    NoFactors,
    #[error("{0}")]
    InvalidOptions(String),
    #[error(
        "attribution infeasible: {skipped} of {sampled} permutations lacked support{}",
        summarize_failures(.failures)
    )]
    Infeasible {
        sampled: u64,
        skipped: u64,
        failures: Vec<SupportSummary>,
    },
    #[error("metric undefined on input data: {0}")]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error("exact attribution supports at most {MAX_EXACT_FACTORS} factors, got {0}")]
    TooManyFactors(usize),
    #[error("factor '{0}' is not a group")]
    NotAGroup(String),
}

fn summarize_failures(failures: &[SupportSummary]) -> String {
    if failures.is_empty() {
        return String::new();
    }
    let items: Vec<String> = failures
        .iter()
        .take(4)
        .map(|f| {
            format!(
                "step '{}' stratum '{}' ({} permutations, min {} rows of {})",
                f.step, f.stratum, f.permutations, f.min_available, f.required
            )
        })
        .collect();
    format!(": {}", items.join("; "))
}

const BATCH: u64 = 32;
const SINGLE_CLASS_STRATUM: &str = "<single-class resample>";

enum PermOutcome {
    Completed(Vec<f64>),
    Skipped(Vec<SupportFailure>),
}

struct FailureAgg(BTreeMap<(String, String), (u64, usize, usize)>);

impl FailureAgg {
    fn new() -> Self {
        FailureAgg(BTreeMap::new())
    }

    fn record(&mut self, failures: &[SupportFailure]) {
        for f in failures {
            let entry = self
                .0
                .entry((f.step.clone(), f.stratum.clone()))
                .or_insert((0, usize::MAX, f.required));
            entry.0 += 1;
            entry.1 = entry.1.min(f.available);
            entry.2 = f.required;
        }
    }

    fn summaries(self) -> Vec<SupportSummary> {
        self.0
            .into_iter()
            .map(|((step, stratum), (count, min_avail, required))| SupportSummary {
                step,
                stratum,
                permutations: count,
                min_available: if min_avail == usize::MAX { 0 } else { min_avail },
                required,
            })
            .collect()
    }
}

struct Engine<'a> {
    ctx: &'a MatchContext,
    prepared: &'a dyn PreparedMetric,
    p0: f64,
    opts: &'a AttributionOptions,
}

impl Engine<'_> {
    fn seeder(&self, t: u64) -> StepSeeder {
        match self.opts.prefix_seeds {
            PrefixSeedMode::PerPermutation => StepSeeder::Chain {
                chain_seed: StableHash::new(self.opts.seed)
                    .mix_str("chain")
                    .mix_u64(t)
                    .finish(),
            },
            PrefixSeedMode::Shared => StepSeeder::SharedPrefix {
                master: self.opts.seed,
            },
        }
    }

    fn order(&self, t: u64) -> Vec<usize> {
        let k = self.ctx.players().len();
        match self.opts.permutation_order {
            PermutationOrder::Sampled => {
                let mut order: Vec<usize> = (0..k).collect();
                order.shuffle(&mut stream_rng(self.opts.seed, "order", t));
                order
            }
            PermutationOrder::Exhaustive => nth_permutation(k, t),
        }
    }

    fn run_permutation(&self, t: u64) -> PermOutcome {
        let k = self.ctx.players().len();
        let order = self.order(t);
        let seeder = self.seeder(t);
        let mut multisets = vec![self.ctx.initial().to_vec(); self.opts.resample_reps];
        let mut prefix: Vec<String> = Vec::with_capacity(k);
        let mut incs = vec![0.0; k];
        let mut p_prev = self.p0;
        let mut global = 0usize;
        for &player in &order {
            prefix.push(self.ctx.players()[player].name.clone());
            global = match self.ctx.apply_player(&mut multisets, player, &prefix, seeder, global)
            {
                Ok(g) => g,
                Err(failures) => return PermOutcome::Skipped(failures),
            };
            match self.evaluate(&multisets) {
                Ok(p) => {
                    incs[player] = p - p_prev;
                    p_prev = p;
                }
                Err(_) => {
                    return PermOutcome::Skipped(vec![SupportFailure {
                        step: self.ctx.players()[player].name.clone(),
                        stratum: SINGLE_CLASS_STRATUM.to_string(),
                        available: 0,
                        required: 0,
                        target: 0,
                    }])
                }
            }
        }
        PermOutcome::Completed(incs)
    }

    fn evaluate(&self, multisets: &[Vec<u32>]) -> Result<f64, MetricError> {
        let mut sum = 0.0;
        for multiset in multisets {
            sum += self.prepared.evaluate_counts(&self.ctx.counts(multiset))?;
        }
        Ok(sum / multisets.len() as f64)
    }

    /// Sample permutations in fixed-size batches until the stopping rule
    /// fires. Batches run in parallel but are folded in submission order, so
    /// the result is independent of the thread count.
    fn run_sampling(&self) -> Result<McResult, EngineError> {
        let k = self.ctx.players().len();
        let max = self.opts.stopping.max_iterations as u64;
        let mut draws: Vec<Vec<f64>> = vec![Vec::new(); k];
        let mut skipped = 0u64;
        let mut sampled = 0u64;
        let mut failures = FailureAgg::new();
        while sampled < max {
            let batch = BATCH.min(max - sampled);
            let outcomes: Vec<PermOutcome> = (sampled..sampled + batch)
                .into_par_iter()
                .map(|t| self.run_permutation(t))
                .collect();
            sampled += batch;
            for outcome in outcomes {
                match outcome {
                    PermOutcome::Completed(incs) => {
                        for (f, inc) in incs.into_iter().enumerate() {
                            draws[f].push(inc);
                        }
                    }
                    PermOutcome::Skipped(list) => {
                        skipped += 1;
                        failures.record(&list);
                    }
                }
            }
            let retained = draws[0].len();
            if retained >= self.opts.stopping.min_iterations
                && max_se(&draws) < self.opts.stopping.se_tolerance
            {
                break;
            }
        }
        let retained = draws[0].len() as u64;
        if retained == 0 || skipped * 2 > sampled {
            return Err(EngineError::Infeasible {
                sampled,
                skipped,
                failures: failures.summaries(),
            });
        }
        Ok(McResult {
            draws,
            retained,
            skipped,
            failures: failures.summaries(),
        })
    }
}

struct McResult {
    draws: Vec<Vec<f64>>,
    retained: u64,
    skipped: u64,
    failures: Vec<SupportSummary>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn standard_error(xs: &[f64]) -> f64 {
    let m = xs.len();
    if m < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (m - 1) as f64;
    (var / m as f64).sqrt()
}

fn max_se(draws: &[Vec<f64>]) -> f64 {
    draws
        .iter()
        .map(|d| standard_error(d))
        .fold(0.0, f64::max)
}

fn resolve_factor_specs<'d>(
    external: &'d ScoredDataset,
    factors: &[&str],
) -> Result<Vec<&'d FactorSpec>, EngineError> {
    if factors.is_empty() {
        return Err(EngineError::NoFactors);
    }
    factors
        .iter()
        .map(|name| {
            external
                .spec(name)
                .ok_or_else(|| MatchError::UnknownFactor(name.to_string()).into())
        })
        .collect()
}

fn settings(metric: &dyn Metric, opts: &AttributionOptions) -> EngineSettings {
    EngineSettings {
        metric: metric.name().to_string(),
        stopping: opts.stopping.clone(),
        min_stratum: opts.min_stratum,
        resample_reps: opts.resample_reps,
        bootstrap_replicates: opts.bootstrap_replicates,
        permutation_order: opts.permutation_order,
        prefix_seeds: opts.prefix_seeds,
    }
}

fn assemble_report(
    reference: &ScoredDataset,
    external: &ScoredDataset,
    reference_performance: MetricResult,
    external_performance: MetricResult,
    names: Vec<String>,
    phis: Vec<f64>,
    ses: Vec<f64>,
    retained: u64,
    skipped: u64,
    failures: Vec<SupportSummary>,
    metric: &dyn Metric,
    opts: &AttributionOptions,
) -> AttributionReport {
    let total = reference_performance.value - external_performance.value;
    let explained: f64 = phis.iter().sum();
    let factors = names
        .into_iter()
        .zip(phis)
        .zip(ses)
        .map(|((name, phi), se)| FactorAttribution {
            name,
            phi,
            se,
            n_permutations: retained,
        })
        .collect();
    AttributionReport {
        schema_version: 1,
        reference_site: reference.site_id().to_string(),
        external_site: external.site_id().to_string(),
        reference_performance,
        external_performance,
        total_disparity: total,
        factors,
        explained,
        unexplained: total - explained,
        n_permutations: retained,
        skipped_permutations: skipped,
        support_failures: failures,
        seed: opts.seed,
        engine: settings(metric, opts),
        drill: None,
        run_config: None,
    }
}

/// Attribute the reference-minus-external gap over `factors` by sampling
/// factor orderings until the stopping rule fires.
pub fn attribute(
    reference: &ScoredDataset,
    external: &ScoredDataset,
    factors: &[&str],
    metric: &dyn Metric,
    opts: &AttributionOptions,
) -> Result<AttributionReport, EngineError> {
    opts.validate()?;
    let specs = resolve_factor_specs(external, factors)?;
    let players: Vec<PlayerSpec> = specs.iter().map(|s| PlayerSpec::Factor(s)).collect();
    let ctx = MatchContext::new(reference, external, &players, opts.min_stratum)?;
    let prepared = metric.prepare(ctx.scores(), ctx.labels());
    let external_performance = bootstrap_ci_prepared(
        prepared.as_ref(),
        ctx.labels(),
        opts.bootstrap_replicates,
        StableHash::new(opts.seed).mix_str("bootstrap-external").finish(),
    )?;
    let reference_performance = bootstrap_ci(
        reference.records(),
        metric,
        opts.bootstrap_replicates,
        StableHash::new(opts.seed).mix_str("bootstrap-reference").finish(),
    )?;
    let engine = Engine {
        ctx: &ctx,
        prepared: prepared.as_ref(),
        p0: external_performance.value,
        opts,
    };
    let mc = engine.run_sampling()?;
    let phis: Vec<f64> = mc.draws.iter().map(|d| mean(d)).collect();
    let ses: Vec<f64> = mc.draws.iter().map(|d| standard_error(d)).collect();
    Ok(assemble_report(
        reference,
        external,
        reference_performance,
        external_performance,
        ctx.player_names(),
        phis,
        ses,
        mc.retained,
        mc.skipped,
        mc.failures,
        metric,
        opts,
    ))
}

/// Attribute by enumerating all orderings of up to [`MAX_EXACT_FACTORS`]
/// factors, reusing one resample per distinct ordered prefix. Shares carry
/// no sampling error, so every `se` is zero.
pub fn exact_attribute(
    reference: &ScoredDataset,
    external: &ScoredDataset,
    factors: &[&str],
    metric: &dyn Metric,
    opts: &AttributionOptions,
) -> Result<AttributionReport, EngineError> {
    opts.validate()?;
    let specs = resolve_factor_specs(external, factors)?;
    let k = specs.len();
    if k > MAX_EXACT_FACTORS {
        return Err(EngineError::TooManyFactors(k));
    }
    let players: Vec<PlayerSpec> = specs.iter().map(|s| PlayerSpec::Factor(s)).collect();
    let ctx = MatchContext::new(reference, external, &players, opts.min_stratum)?;
    let prepared = metric.prepare(ctx.scores(), ctx.labels());
    let external_performance = bootstrap_ci_prepared(
        prepared.as_ref(),
        ctx.labels(),
        opts.bootstrap_replicates,
        StableHash::new(opts.seed).mix_str("bootstrap-external").finish(),
    )?;
    let reference_performance = bootstrap_ci(
        reference.records(),
        metric,
        opts.bootstrap_replicates,
        StableHash::new(opts.seed).mix_str("bootstrap-reference").finish(),
    )?;

    let mut exact_opts = opts.clone();
    exact_opts.prefix_seeds = PrefixSeedMode::Shared;
    let engine = Engine {
        ctx: &ctx,
        prepared: prepared.as_ref(),
        p0: external_performance.value,
        opts: &exact_opts,
    };
    let mut walk = ExactWalk {
        engine: &engine,
        weighted_incs: vec![0.0; k],
        failures: FailureAgg::new(),
    };
    let multisets = vec![ctx.initial().to_vec(); opts.resample_reps];
    let mut used = vec![false; k];
    let mut prefix = Vec::with_capacity(k);
    let completed = walk.descend(
        &mut used,
        &mut prefix,
        &multisets,
        external_performance.value,
    );
    let all = factorial(k);
    let skipped = all - completed;
    if completed == 0 || skipped * 2 > all {
        return Err(EngineError::Infeasible {
            sampled: all,
            skipped,
            failures: walk.failures.summaries(),
        });
    }
    let phis: Vec<f64> = walk
        .weighted_incs
        .iter()
        .map(|w| w / completed as f64)
        .collect();
    let mut report = assemble_report(
        reference,
        external,
        reference_performance,
        external_performance,
        ctx.player_names(),
        phis,
        vec![0.0; k],
        completed,
        skipped,
        walk.failures.summaries(),
        metric,
        &exact_opts,
    );
    report.engine.permutation_order = PermutationOrder::Exhaustive;
    Ok(report)
}

struct ExactWalk<'e, 'a> {
    engine: &'e Engine<'a>,
    /// Per factor: sum over prefix-tree edges where the factor lands, of
    /// edge increment times completed orderings through that edge.
    weighted_incs: Vec<f64>,
    failures: FailureAgg,
}

impl ExactWalk<'_, '_> {
    /// Depth-first over ordered prefixes. Returns how many complete
    /// orderings beneath this node survived; an ordering only counts (in
    /// every factor's average) once its whole chain evaluates.
    fn descend(
        &mut self,
        used: &mut [bool],
        prefix: &mut Vec<String>,
        multisets: &[Vec<u32>],
        p_here: f64,
    ) -> u64 {
        let k = used.len();
        if prefix.len() == k {
            return 1;
        }
        let mut completed = 0u64;
        for f in 0..k {
            if used[f] {
                continue;
            }
            let name = self.engine.ctx.players()[f].name.clone();
            prefix.push(name);
            let mut next = multisets.to_vec();
            let applied =
                self.engine
                    .ctx
                    .apply_player(&mut next, f, prefix, self.engine.seeder(0), 0);
            match applied {
                Err(failures) => {
                    self.failures.record(&failures);
                }
                Ok(_) => match self.engine.evaluate(&next) {
                    Err(_) => {
                        self.failures.record(&[SupportFailure {
                            step: self.engine.ctx.players()[f].name.clone(),
                            stratum: SINGLE_CLASS_STRATUM.to_string(),
                            available: 0,
                            required: 0,
                            target: 0,
                        }]);
                    }
                    Ok(p_next) => {
                        used[f] = true;
                        let below = self.descend(used, prefix, &next, p_next);
                        used[f] = false;
                        if below > 0 {
                            self.weighted_incs[f] += (p_next - p_here) * below as f64;
                            completed += below;
                        }
                    }
                },
            }
            prefix.pop();
        }
        completed
    }
}

/// Attribute within one group's members: every other factor is matched
/// first (in the order given) under a fixed seed, then the members are
/// treated as the factor set over that matched baseline.
pub fn drill_down(
    reference: &ScoredDataset,
    external: &ScoredDataset,
    factors: &[&str],
    group: &str,
    metric: &dyn Metric,
    opts: &AttributionOptions,
) -> Result<AttributionReport, EngineError> {
    opts.validate()?;
    let group_spec = external
        .spec(group)
        .ok_or_else(|| MatchError::UnknownFactor(group.to_string()))?;
    let members = match &group_spec.kind {
        FactorKind::Group { members } => members.clone(),
        _ => return Err(EngineError::NotAGroup(group.to_string())),
    };
    let others: Vec<&str> = factors.iter().copied().filter(|f| *f != group).collect();
    resolve_factor_specs(external, factors)?;
    let base_multiset = {
        let specs = others
            .iter()
            .map(|name| {
                external
                    .spec(name)
                    .ok_or_else(|| MatchError::UnknownFactor(name.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let players: Vec<PlayerSpec> = specs.iter().map(|s| PlayerSpec::Factor(s)).collect();
        let ctx = MatchContext::new(reference, external, &players, opts.min_stratum)?;
        let seeder = StepSeeder::SharedPrefix {
            master: StableHash::new(opts.seed).mix_str("drill-base").finish(),
        };
        let mut multisets = vec![ctx.initial().to_vec()];
        let mut prefix = Vec::new();
        let mut global = 0usize;
        for p in 0..ctx.players().len() {
            prefix.push(ctx.players()[p].name.clone());
            global = ctx
                .apply_player(&mut multisets, p, &prefix, seeder, global)
                .map_err(MatchError::InsufficientSupport)?;
        }
        ctx.to_source_indices(&multisets.swap_remove(0))
    };

    let member_players: Vec<PlayerSpec> = members
        .iter()
        .map(|m| PlayerSpec::Member {
            group: group_spec,
            member: m,
        })
        .collect();
    let ctx = MatchContext::new(reference, external, &member_players, opts.min_stratum)?
        .with_initial_source_rows(&base_multiset);
    let prepared = metric.prepare(ctx.scores(), ctx.labels());
    let external_performance = bootstrap_ci_multiset(
        prepared.as_ref(),
        ctx.labels(),
        ctx.initial(),
        opts.bootstrap_replicates,
        StableHash::new(opts.seed).mix_str("bootstrap-external").finish(),
    )?;
    let reference_performance = bootstrap_ci(
        reference.records(),
        metric,
        opts.bootstrap_replicates,
        StableHash::new(opts.seed).mix_str("bootstrap-reference").finish(),
    )?;
    let engine = Engine {
        ctx: &ctx,
        prepared: prepared.as_ref(),
        p0: external_performance.value,
        opts,
    };
    let mc = engine.run_sampling()?;
    let phis: Vec<f64> = mc.draws.iter().map(|d| mean(d)).collect();
    let ses: Vec<f64> = mc.draws.iter().map(|d| standard_error(d)).collect();
    let mut report = assemble_report(
        reference,
        external,
        reference_performance,
        external_performance,
        ctx.player_names(),
        phis,
        ses,
        mc.retained,
        mc.skipped,
        mc.failures,
        metric,
        opts,
    );
    report.drill = Some(DrillInfo {
        group: group.to_string(),
        matched_prefix: others.iter().map(|s| s.to_string()).collect(),
    });
    Ok(report)
}
