//! Distribution matching by stratified resampling.
//!
//! A prefix of factors is applied in order: for each factor the current
//! multiset is stratified by that factor's value and redrawn with
//! replacement so its marginal hits the reference marginal (largest-remainder
//! rounding of reference proportion times the external size). Group factors
//! expand to one Bernoulli step per member, in declared member order.
//!
//! Two properties shape the implementation. Draws run over rows in a
//! canonical content order, so the result is invariant to how the external
//! file happened to be sorted. And a step whose target counts already equal
//! the external dataset's stratum counts is skipped outright (the weight
//! table is all ones), which keeps factors with identical marginals at
//! exactly zero effect instead of injecting resampling noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{FactorKind, FactorSpec, FactorValue, ScoredDataset, ScoredRecord};
use crate::metric::{Metric, MetricError};
use crate::rng::{stream_rng, StableHash};

pub const DEFAULT_MIN_STRATUM: usize = 5;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("insufficient stratum support: {}", describe_failures(.0))]
    InsufficientSupport(Vec<SupportFailure>),
    #[error("metric undefined on resample: {0}")]
    UndefinedMetric(#[from] MetricError),
    #[error("factor '{0}' differs between reference and external specs")]
    SpecMismatch(String),
    #[error("factor '{0}' is not declared in both datasets")]
    UnknownFactor(String),
    #[error("factor '{0}' holds raw real values; bin it before matching")]
    NotBinned(String),
    #[error("step '{step}' has {count} strata, above the supported limit")]
    TooManyStrata { step: String, count: usize },
}

fn describe_failures(failures: &[SupportFailure]) -> String {
    failures
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// A reference stratum that cannot be filled from the rows available at its
/// matching step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SupportFailure {
    pub step: String,
    pub stratum: String,
    /// Distinct external rows present in the stratum when the step ran.
    pub available: usize,
    pub required: usize,
    pub target: u32,
}

impl std::fmt::Display for SupportFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step '{}' stratum '{}' has {} distinct rows, needs {} (target {})",
            self.step, self.stratum, self.available, self.required, self.target
        )
    }
}

/// Weight table and support survey for one matching step, computed against
/// the unresampled external dataset.
#[derive(Debug, Clone, Serialize)]
pub struct StepPlan {
    pub step: String,
    pub identity: bool,
    pub strata: Vec<StratumWeight>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StratumWeight {
    pub stratum: String,
    pub reference_proportion: f64,
    pub external_proportion: f64,
    /// reference over external proportion; zero when the stratum is absent
    /// from the external site.
    pub weight: f64,
    pub target: u32,
    pub available: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResamplePlan {
    pub prefix: Vec<String>,
    pub steps: Vec<StepPlan>,
    pub support_failures: Vec<SupportFailure>,
}

/// A with-replacement resample of the external dataset after matching a
/// prefix of factors.
#[derive(Debug)]
pub struct ResampledDataset<'a> {
    source: &'a ScoredDataset,
    indices: Vec<u32>,
    prefix: Vec<String>,
}

impl<'a> ResampledDataset<'a> {
    pub fn source(&self) -> &'a ScoredDataset {
        self.source
    }

    /// Source row ids drawn, one per resampled row.
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn prefix(&self) -> &[String] {
        &self.prefix
    }

    pub fn records(&self) -> impl Iterator<Item = &ScoredRecord> + '_ {
        self.indices.iter().map(|&i| &self.source.records()[i as usize])
    }

    /// Multiplicity of every source row in the resample.
    pub fn counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.source.len()];
        for &i in &self.indices {
            counts[i as usize] += 1;
        }
        counts
    }
}

/// How per-step RNG streams are derived along a matching chain.
#[derive(Clone, Copy)]
pub(crate) enum StepSeeder {
    /// Streams keyed by step position only; chains with different seeds are
    /// fully independent.
    Chain { chain_seed: u64 },
    /// Streams keyed by the ordered factor prefix, so any two chains over
    /// the same master seed reuse identical draws for identical prefixes.
    SharedPrefix { master: u64 },
}

impl StepSeeder {
    fn rng(
        &self,
        prefix: &[String],
        substep_in_player: usize,
        global_substep: usize,
        rep: usize,
    ) -> ChaCha8Rng {
        match self {
            StepSeeder::Chain { chain_seed } => stream_rng(
                *chain_seed,
                "match-step",
                ((rep as u64) << 32) | global_substep as u64,
            ),
            StepSeeder::SharedPrefix { master } => {
                let mut h = StableHash::new(*master).mix_str("match-prefix");
                for name in prefix {
                    h = h.mix_str(name);
                }
                h.mix_u64(substep_in_player as u64).mix_u64(rep as u64).rng()
            }
        }
    }
}

struct SubStep {
    label: String,
    strata: Vec<String>,
    ref_props: Vec<f64>,
    targets: Vec<u32>,
    /// Stratum counts of the chain's starting multiset.
    base_counts: Vec<u32>,
    /// Stratum of each canonical external row.
    row_strata: Vec<u16>,
    identity: bool,
}

pub(crate) struct PlayerDef {
    pub name: String,
    substeps: std::ops::Range<usize>,
}

/// One attributable unit in a matching chain: a whole factor, or a single
/// group member promoted to a player of its own.
pub(crate) enum PlayerSpec<'a> {
    Factor(&'a FactorSpec),
    Member {
        group: &'a FactorSpec,
        member: &'a str,
    },
}

/// Everything needed to walk matching chains over one (reference, external)
/// pair: per-step stratum tables in canonical row order plus the starting
/// multiset.
pub(crate) struct MatchContext {
    n: usize,
    players: Vec<PlayerDef>,
    substeps: Vec<SubStep>,
    scores: Vec<f64>,
    labels: Vec<u8>,
    canon_to_source: Vec<u32>,
    initial: Vec<u32>,
    min_stratum: usize,
}

enum Axis<'s> {
    Cat(&'s [String]),
    Bin(usize),
    Member(&'s str),
}

impl Axis<'_> {
    fn strata(&self) -> Vec<String> {
        match self {
            Axis::Cat(vocab) => vocab.to_vec(),
            Axis::Bin(count) => (0..*count).map(|b| b.to_string()).collect(),
            Axis::Member(_) => vec!["0".to_string(), "1".to_string()],
        }
    }

    fn stratum_of(&self, value: &FactorValue) -> Option<usize> {
        match (self, value) {
            (Axis::Cat(vocab), FactorValue::Category(c)) => {
                vocab.iter().position(|v| v == c)
            }
            (Axis::Bin(count), FactorValue::Bin(b)) if b < count => Some(*b),
            (Axis::Member(m), FactorValue::Flags(set)) => {
                Some(usize::from(set.contains(*m)))
            }
            _ => None,
        }
    }
}

/// Largest-remainder apportionment of `total` units over quotas proportional
/// to `props`. Every count deviates from its quota by less than one unit;
/// remainder ties break toward earlier strata.
pub(crate) fn largest_remainder(props: &[f64], total: u32) -> Vec<u32> {
    let quotas: Vec<f64> = props.iter().map(|p| p * f64::from(total)).collect();
    let mut counts: Vec<u32> = quotas.iter().map(|q| q.floor() as u32).collect();
    let assigned: u32 = counts.iter().sum::<u32>().min(total);
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &v in order.iter().take((total - assigned) as usize) {
        counts[v] += 1;
    }
    counts
}

impl MatchContext {
    pub(crate) fn new(
        reference: &ScoredDataset,
        external: &ScoredDataset,
        players: &[PlayerSpec],
        min_stratum: usize,
    ) -> Result<Self, MatchError> {
        let n = external.len();
        let canon = external.canonical_order().to_vec();
        let mut defs = Vec::with_capacity(players.len());
        let mut substeps = Vec::new();
        for player in players {
            let spec = match player {
                PlayerSpec::Factor(spec) => *spec,
                PlayerSpec::Member { group, .. } => *group,
            };
            for ds in [reference, external] {
                match ds.spec(&spec.name) {
                    None => return Err(MatchError::UnknownFactor(spec.name.clone())),
                    Some(found) if found != spec => {
                        return Err(MatchError::SpecMismatch(spec.name.clone()))
                    }
                    Some(_) => {}
                }
            }
            let start = substeps.len();
            let (player_name, axes): (String, Vec<(String, Axis)>) = match player {
                PlayerSpec::Factor(spec) => {
                    let axes = match &spec.kind {
                        FactorKind::Categorical { vocabulary } => {
                            vec![(spec.name.clone(), Axis::Cat(vocabulary))]
                        }
                        FactorKind::ContinuousBinned { bin_edges } => {
                            vec![(spec.name.clone(), Axis::Bin(bin_edges.len() + 1))]
                        }
                        FactorKind::Group { members } => members
                            .iter()
                            .map(|m| (format!("{}:{}", spec.name, m), Axis::Member(m)))
                            .collect(),
                    };
                    (spec.name.clone(), axes)
                }
                PlayerSpec::Member { group, member } => {
                    let known = matches!(&group.kind, FactorKind::Group { members }
                        if members.iter().any(|m| m == member));
                    if !known {
                        return Err(MatchError::UnknownFactor(member.to_string()));
                    }
                    (
                        member.to_string(),
                        vec![(format!("{}:{}", group.name, member), Axis::Member(member))],
                    )
                }
            };
            for (label, axis) in axes {
                substeps.push(build_substep(
                    label, &axis, &spec.name, reference, external, &canon, n,
                )?);
            }
            defs.push(PlayerDef {
                name: player_name,
                substeps: start..substeps.len(),
            });
        }
        let scores: Vec<f64> = canon
            .iter()
            .map(|&i| external.records()[i as usize].score)
            .collect();
        let labels: Vec<u8> = canon
            .iter()
            .map(|&i| external.records()[i as usize].label)
            .collect();
        let mut ctx = MatchContext {
            n,
            players: defs,
            substeps,
            scores,
            labels,
            canon_to_source: canon,
            initial: (0..n as u32).collect(),
            min_stratum,
        };
        ctx.refresh_base_counts();
        Ok(ctx)
    }

    /// Start chains from an existing multiset of canonical row ids instead
    /// of the whole external dataset.
    pub(crate) fn with_initial(mut self, initial: Vec<u32>) -> Self {
        assert_eq!(initial.len(), self.n, "initial multiset must keep the site size");
        self.initial = initial;
        self.refresh_base_counts();
        self
    }

    /// As [`with_initial`], but taking source row ids.
    pub(crate) fn with_initial_source_rows(self, rows: &[u32]) -> Self {
        let mut inverse = vec![0u32; self.n];
        for (c, &src) in self.canon_to_source.iter().enumerate() {
            inverse[src as usize] = c as u32;
        }
        let initial = rows.iter().map(|&src| inverse[src as usize]).collect();
        self.with_initial(initial)
    }

    fn refresh_base_counts(&mut self) {
        for step in &mut self.substeps {
            let mut counts = vec![0u32; step.strata.len()];
            for &id in &self.initial {
                counts[step.row_strata[id as usize] as usize] += 1;
            }
            step.identity = step.targets == counts;
            step.base_counts = counts;
        }
    }

    pub(crate) fn players(&self) -> &[PlayerDef] {
        &self.players
    }

    pub(crate) fn player_names(&self) -> Vec<String> {
        self.players.iter().map(|p| p.name.clone()).collect()
    }

    pub(crate) fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub(crate) fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub(crate) fn initial(&self) -> &[u32] {
        &self.initial
    }

    pub(crate) fn counts(&self, multiset: &[u32]) -> Vec<u32> {
        let mut counts = vec![0u32; self.n];
        for &id in multiset {
            counts[id as usize] += 1;
        }
        counts
    }

    pub(crate) fn to_source_indices(&self, multiset: &[u32]) -> Vec<u32> {
        multiset.iter().map(|&c| self.canon_to_source[c as usize]).collect()
    }

    /// Apply one player's matching steps to every rep's multiset. `prefix`
    /// must already include the player being applied.
    pub(crate) fn apply_player(
        &self,
        multisets: &mut [Vec<u32>],
        player: usize,
        prefix: &[String],
        seeder: StepSeeder,
        global_substep_start: usize,
    ) -> Result<usize, Vec<SupportFailure>> {
        let range = self.players[player].substeps.clone();
        let mut global = global_substep_start;
        for (k, si) in range.enumerate() {
            let step = &self.substeps[si];
            if !step.identity {
                for (rep, multiset) in multisets.iter_mut().enumerate() {
                    let mut rng = seeder.rng(prefix, k, global, rep);
                    *multiset = self.resample_step(step, multiset, &mut rng)?;
                }
            }
            global += 1;
        }
        Ok(global)
    }

    fn resample_step(
        &self,
        step: &SubStep,
        current: &[u32],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<u32>, Vec<SupportFailure>> {
        let s = step.strata.len();
        let mut counts = vec![0u32; s];
        for &id in current {
            counts[step.row_strata[id as usize] as usize] += 1;
        }
        let mut offsets = vec![0usize; s + 1];
        for v in 0..s {
            offsets[v + 1] = offsets[v] + counts[v] as usize;
        }
        let mut pooled = vec![0u32; current.len()];
        let mut cursor = offsets.clone();
        for &id in current {
            let v = step.row_strata[id as usize] as usize;
            pooled[cursor[v]] = id;
            cursor[v] += 1;
        }
        let inv_n = 1.0 / self.n as f64;
        let mut stamp = vec![u32::MAX; self.n];
        let mut failures = Vec::new();
        for v in 0..s {
            let pool = &pooled[offsets[v]..offsets[v + 1]];
            let needs_support = step.ref_props[v] >= inv_n;
            if !needs_support && step.targets[v] == 0 {
                continue;
            }
            let mut distinct = 0usize;
            for &id in pool {
                if stamp[id as usize] != v as u32 {
                    stamp[id as usize] = v as u32;
                    distinct += 1;
                }
            }
            if (needs_support && distinct < self.min_stratum)
                || (step.targets[v] > 0 && pool.is_empty())
            {
                failures.push(SupportFailure {
                    step: step.label.clone(),
                    stratum: step.strata[v].clone(),
                    available: distinct,
                    required: self.min_stratum,
                    target: step.targets[v],
                });
            }
        }
        if !failures.is_empty() {
            return Err(failures);
        }
        let mut out = Vec::with_capacity(self.n);
        for v in 0..s {
            let pool = &pooled[offsets[v]..offsets[v + 1]];
            for _ in 0..step.targets[v] {
                out.push(pool[rng.gen_range(0..pool.len())]);
            }
        }
        Ok(out)
    }

    pub(crate) fn plan(&self, prefix_players: &[usize]) -> ResamplePlan {
        let mut steps = Vec::new();
        let mut support_failures = Vec::new();
        for &p in prefix_players {
            for si in self.players[p].substeps.clone() {
                let step = &self.substeps[si];
                let mut strata = Vec::with_capacity(step.strata.len());
                for v in 0..step.strata.len() {
                    let ext_prop = f64::from(step.base_counts[v]) / self.n as f64;
                    if step.ref_props[v] == 0.0 && step.base_counts[v] == 0 {
                        continue;
                    }
                    strata.push(StratumWeight {
                        stratum: step.strata[v].clone(),
                        reference_proportion: step.ref_props[v],
                        external_proportion: ext_prop,
                        weight: if step.base_counts[v] > 0 {
                            step.ref_props[v] / ext_prop
                        } else {
                            0.0
                        },
                        target: step.targets[v],
                        available: step.base_counts[v],
                    });
                    if step.ref_props[v] >= 1.0 / self.n as f64
                        && (step.base_counts[v] as usize) < self.min_stratum
                    {
                        support_failures.push(SupportFailure {
                            step: step.label.clone(),
                            stratum: step.strata[v].clone(),
                            available: step.base_counts[v] as usize,
                            required: self.min_stratum,
                            target: step.targets[v],
                        });
                    }
                }
                steps.push(StepPlan {
                    step: step.label.clone(),
                    identity: step.identity,
                    strata,
                });
            }
        }
        ResamplePlan {
            prefix: prefix_players
                .iter()
                .map(|&p| self.players[p].name.clone())
                .collect(),
            steps,
            support_failures,
        }
    }
}

fn build_substep(
    label: String,
    axis: &Axis,
    factor: &str,
    reference: &ScoredDataset,
    external: &ScoredDataset,
    canon: &[u32],
    n: usize,
) -> Result<SubStep, MatchError> {
    let strata = axis.strata();
    if strata.len() > u16::MAX as usize {
        return Err(MatchError::TooManyStrata {
            step: label,
            count: strata.len(),
        });
    }
    let stratum_or = |value: Option<&FactorValue>| -> Result<usize, MatchError> {
        let value = value.ok_or_else(|| MatchError::UnknownFactor(factor.to_string()))?;
        if matches!(value, FactorValue::Real(_)) {
            return Err(MatchError::NotBinned(factor.to_string()));
        }
        axis.stratum_of(value)
            .ok_or_else(|| MatchError::SpecMismatch(factor.to_string()))
    };
    let mut ref_counts = vec![0u64; strata.len()];
    for rec in reference.records() {
        ref_counts[stratum_or(rec.factors.get(factor))?] += 1;
    }
    let n_ref = reference.len() as f64;
    let ref_props: Vec<f64> = ref_counts.iter().map(|&c| c as f64 / n_ref).collect();
    let targets = largest_remainder(&ref_props, n as u32);
    let mut row_strata = vec![0u16; n];
    for (c, &src) in canon.iter().enumerate() {
        row_strata[c] = stratum_or(external.records()[src as usize].factors.get(factor))? as u16;
    }
    Ok(SubStep {
        label,
        strata,
        ref_props,
        targets,
        base_counts: Vec::new(),
        row_strata,
        identity: false,
    })
}

fn resolve_players(
    external: &ScoredDataset,
    prefix: &[&str],
) -> Result<Vec<FactorSpec>, MatchError> {
    prefix
        .iter()
        .map(|name| {
            external
                .spec(name)
                .cloned()
                .ok_or_else(|| MatchError::UnknownFactor(name.to_string()))
        })
        .collect()
}

/// Resample `external` so the factors in `prefix`, applied in order, match
/// the reference marginals. An empty prefix returns the external rows as-is.
pub fn match_prefix<'a>(
    reference: &ScoredDataset,
    external: &'a ScoredDataset,
    prefix: &[&str],
    seed: u64,
    min_stratum: usize,
) -> Result<ResampledDataset<'a>, MatchError> {
    let specs = resolve_players(external, prefix)?;
    let players: Vec<PlayerSpec> = specs.iter().map(PlayerSpec::Factor).collect();
    let ctx = MatchContext::new(reference, external, &players, min_stratum)?;
    let mut multisets = vec![ctx.initial().to_vec()];
    let mut names = Vec::new();
    let mut global = 0usize;
    for p in 0..ctx.players().len() {
        names.push(ctx.players()[p].name.clone());
        global = ctx
            .apply_player(
                &mut multisets,
                p,
                &names,
                StepSeeder::SharedPrefix { master: seed },
                global,
            )
            .map_err(MatchError::InsufficientSupport)?;
    }
    Ok(ResampledDataset {
        source: external,
        indices: ctx.to_source_indices(&multisets[0]),
        prefix: names,
    })
}

/// Metric value of the external site after matching `prefix`, averaged over
/// `resample_reps` independent resamples. A resample on which the metric is
/// undefined counts as a support failure.
pub fn matched_performance(
    reference: &ScoredDataset,
    external: &ScoredDataset,
    prefix: &[&str],
    seed: u64,
    min_stratum: usize,
    resample_reps: usize,
    metric: &dyn Metric,
) -> Result<f64, MatchError> {
    assert!(resample_reps >= 1);
    let specs = resolve_players(external, prefix)?;
    let players: Vec<PlayerSpec> = specs.iter().map(PlayerSpec::Factor).collect();
    let ctx = MatchContext::new(reference, external, &players, min_stratum)?;
    let prepared = metric.prepare(ctx.scores(), ctx.labels());
    let mut multisets = vec![ctx.initial().to_vec(); resample_reps];
    let mut names = Vec::new();
    let mut global = 0usize;
    for p in 0..ctx.players().len() {
        names.push(ctx.players()[p].name.clone());
        global = ctx
            .apply_player(
                &mut multisets,
                p,
                &names,
                StepSeeder::SharedPrefix { master: seed },
                global,
            )
            .map_err(MatchError::InsufficientSupport)?;
    }
    let mut sum = 0.0;
    for multiset in &multisets {
        sum += prepared.evaluate_counts(&ctx.counts(multiset))?;
    }
    Ok(sum / resample_reps as f64)
}

/// Weight tables and support survey for matching `prefix`, without drawing.
pub fn build_plan(
    reference: &ScoredDataset,
    external: &ScoredDataset,
    prefix: &[&str],
    min_stratum: usize,
) -> Result<ResamplePlan, MatchError> {
    let specs = resolve_players(external, prefix)?;
    let players: Vec<PlayerSpec> = specs.iter().map(PlayerSpec::Factor).collect();
    let ctx = MatchContext::new(reference, external, &players, min_stratum)?;
    Ok(ctx.plan(&(0..players.len()).collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FactorSpec;
    use std::collections::BTreeMap;

    fn cat_record(score: f64, label: u8, factor: &str, value: &str) -> ScoredRecord {
        let mut factors = BTreeMap::new();
        factors.insert(
            factor.to_string(),
            FactorValue::Category(value.to_string()),
        );
        ScoredRecord { score, label, factors }
    }

    fn race_pair(n_black_ext: usize, n_white_ext: usize) -> (ScoredDataset, ScoredDataset) {
        let specs = vec![FactorSpec::categorical("race", &["Black", "White"])];
        let mut ref_recs = Vec::new();
        for i in 0..100 {
            let race = if i < 60 { "Black" } else { "White" };
            ref_recs.push(cat_record(i as f64 / 100.0, u8::from(i % 2 == 0), "race", race));
        }
        let mut ext_recs = Vec::new();
        for i in 0..(n_black_ext + n_white_ext) {
            let race = if i < n_black_ext { "Black" } else { "White" };
            ext_recs.push(cat_record(i as f64 / 200.0, u8::from(i % 2 == 0), "race", race));
        }
        (
            ScoredDataset::new("ref", ref_recs, specs.clone()).unwrap(),
            ScoredDataset::new("ext", ext_recs, specs).unwrap(),
        )
    }

    #[test]
    fn stratum_targets_follow_reference_proportions() {
        let (reference, external) = race_pair(30, 70);
        let resampled = match_prefix(&reference, &external, &["race"], 9, 5).unwrap();
        assert_eq!(resampled.len(), 100);
        let black = resampled
            .records()
            .filter(|r| r.factors["race"] == FactorValue::Category("Black".to_string()))
            .count();
        assert_eq!(black, 60);
    }

    #[test]
    fn empty_prefix_is_identity() {
        let (reference, external) = race_pair(30, 70);
        let resampled = match_prefix(&reference, &external, &[], 9, 5).unwrap();
        let mut idx = resampled.indices().to_vec();
        idx.sort_unstable();
        assert_eq!(idx, (0..100).collect::<Vec<u32>>());
    }

    #[test]
    fn sparse_stratum_reports_insufficient_support() {
        let (reference, external) = race_pair(3, 97);
        let err = match_prefix(&reference, &external, &["race"], 9, 5).unwrap_err();
        match err {
            MatchError::InsufficientSupport(failures) => {
                assert_eq!(failures.len(), 1);
                assert_eq!(failures[0].stratum, "Black");
                assert_eq!(failures[0].available, 3);
                assert_eq!(failures[0].target, 60);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identical_marginals_short_circuit_to_identity() {
        let (reference, external) = race_pair(60, 40);
        let resampled = match_prefix(&reference, &external, &["race"], 123, 5).unwrap();
        let mut idx = resampled.indices().to_vec();
        idx.sort_unstable();
        assert_eq!(idx, (0..100).collect::<Vec<u32>>());
        let plan = build_plan(&reference, &external, &["race"], 5).unwrap();
        assert!(plan.steps[0].identity);
        assert!(plan.steps[0].strata.iter().all(|s| s.weight == 1.0));
    }

    #[test]
    fn largest_remainder_sums_and_bounds() {
        let props = [0.333, 0.333, 0.334];
        let counts = largest_remainder(&props, 100);
        assert_eq!(counts.iter().sum::<u32>(), 100);
        for (c, p) in counts.iter().zip(props) {
            assert!((f64::from(*c) - p * 100.0).abs() < 1.0);
        }
        assert_eq!(largest_remainder(&[0.6, 0.4], 100), vec![60, 40]);
    }

    #[test]
    fn row_order_does_not_change_drawn_records() {
        let (reference, external) = race_pair(30, 70);
        let mut reversed_recs = external.records().to_vec();
        reversed_recs.reverse();
        let reversed =
            ScoredDataset::new("ext", reversed_recs, external.specs().to_vec()).unwrap();
        let a = match_prefix(&reference, &external, &["race"], 77, 5).unwrap();
        let b = match_prefix(&reference, &reversed, &["race"], 77, 5).unwrap();
        let key = |r: &ScoredRecord| (r.score.to_bits(), r.label);
        let mut ka: Vec<_> = a.records().map(key).collect();
        let mut kb: Vec<_> = b.records().map(key).collect();
        ka.sort_unstable();
        kb.sort_unstable();
        assert_eq!(ka, kb);
    }

    #[test]
    fn matched_performance_empty_prefix_is_raw_metric() {
        let (reference, external) = race_pair(30, 70);
        let raw = crate::metric::auc(external.records(), None).unwrap();
        let matched =
            matched_performance(&reference, &external, &[], 5, 5, 1, &crate::metric::Auc)
                .unwrap();
        assert_eq!(raw, matched);
    }

    #[test]
    fn single_class_resample_is_undefined() {
        // External positives exist only among White rows; matching race with
        // a reference that is all-Black forces a single-class resample.
        let specs = vec![FactorSpec::categorical("race", &["Black", "White"])];
        let mut ref_recs = Vec::new();
        for i in 0..20 {
            ref_recs.push(cat_record(i as f64 / 20.0, u8::from(i % 2 == 0), "race", "Black"));
        }
        let mut ext_recs = Vec::new();
        for i in 0..10 {
            ext_recs.push(cat_record(0.2, 0, "race", "Black"));
            ext_recs.push(cat_record(0.9, 1, "race", "White"));
            let _ = i;
        }
        let reference = ScoredDataset::new("ref", ref_recs, specs.clone()).unwrap();
        let external = ScoredDataset::new("ext", ext_recs, specs).unwrap();
        let err = matched_performance(&reference, &external, &["race"], 3, 5, 1, &crate::metric::Auc)
            .unwrap_err();
        assert!(matches!(err, MatchError::UndefinedMetric(MetricError::Undefined)));
    }
}
