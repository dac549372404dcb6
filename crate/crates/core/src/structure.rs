//! Greedy estimation of the neighbourhood structure: growth from the unary
//! model by the largest gradient component, and shrinkage from a full range
//! by removing the offset whose canonical potentials have the smallest norm.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::appearance::AppearanceModel;
use crate::error::{Error, Result};
use crate::grid::{
    count_offsets, GridDomain, GrfModel, LabelSet, NeighborhoodStructure, Offset, OffsetTable, PotentialTable,
    StatisticsKind, SufficientStatistics,
};
use crate::learning::{learn_potentials, LearningSchedule, TrainingEvent};
use crate::rng::derive_seed;
use crate::sampler::{SamplerChain, SamplerConfig};

/// All offsets with `|dx|, |dy| <= d`, one per `{a, -a}` pair, zero excluded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRange {
    pub d: u32,
}

impl CandidateRange {
    pub fn new(d: u32) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("candidate range d must be at least 1".into()));
        }
        Ok(CandidateRange { d })
    }

    /// Candidates in lexicographic `(dy, dx)` order.
    pub fn offsets(&self) -> Vec<Offset> {
        let d = self.d as i32;
        let mut out = Vec::new();
        for dy in 0..=d {
            for dx in -d..=d {
                let a = Offset::new(dx, dy);
                if !a.is_zero() && a.canonical() == a {
                    out.push(a);
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        let side = 2 * self.d as usize + 1;
        (side * side - 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMetric {
    #[default]
    Euclidean,
    Kl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepAction {
    Added,
    Removed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureStep {
    pub action: StepAction,
    pub offset: Offset,
    /// Gradient score (growth) or canonical potential norm (shrinkage).
    pub score: f64,
    /// Smoothed moment mismatch of the model learned before this step.
    pub likelihood_proxy: f64,
}

impl fmt::Display for StructureStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verb = match self.action {
            StepAction::Added => "add",
            StepAction::Removed => "remove",
        };
        write!(f, "{verb}\t{}\t{}\t{:.6e}\t{:.6e}", self.offset.dx, self.offset.dy, self.score, self.likelihood_proxy)
    }
}

/// Append-only log of structure search steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StructureTrace {
    steps: Vec<StructureStep>,
}

impl StructureTrace {
    pub fn push(&mut self, step: StructureStep) {
        self.steps.push(step);
    }

    pub fn steps(&self) -> &[StructureStep] {
        &self.steps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureConfig {
    /// Learning budget per search step.
    pub search: LearningSchedule,
    /// Learning budget for the final structure.
    pub final_schedule: LearningSchedule,
    pub metric: ScoreMetric,
    /// Prior samples per score estimate; `None` uses the search schedule's
    /// `samples_per_expectation`.
    pub score_samples: Option<usize>,
}

impl StructureConfig {
    /// Search steps get a quarter of the final budget.
    pub fn from_final(final_schedule: LearningSchedule) -> Self {
        StructureConfig { search: final_schedule.scaled(0.25), final_schedule, metric: ScoreMetric::Euclidean, score_samples: None }
    }
}

fn check_events(events: &[TrainingEvent], domain: GridDomain) -> Result<()> {
    if events.is_empty() {
        return Err(Error::InvalidEvent("no training events".into()));
    }
    for ev in events {
        if ev.domain() != Some(domain) {
            return Err(Error::IncompatibleDomains("training events must cover the structure domain".into()));
        }
    }
    Ok(())
}

fn step_schedule(base: &LearningSchedule, step: usize) -> LearningSchedule {
    LearningSchedule { seed: derive_seed(base.seed, 1000 + step as u64), ..*base }
}

/// Scores each candidate offset by the discrepancy between its posterior
/// and prior co-occurrence statistics under the current model. Candidates
/// carry no potentials, so sampling the current model is enough.
pub fn candidate_scores(
    model: &GrfModel,
    event: &TrainingEvent,
    appearance: Option<&AppearanceModel>,
    candidates: &[Offset],
    metric: ScoreMetric,
    config: &SamplerConfig,
) -> Result<Vec<(Offset, f64)>> {
    weighted_candidate_scores(model, std::slice::from_ref(event), appearance, candidates, metric, config)
}

fn weighted_candidate_scores(
    model: &GrfModel,
    events: &[TrainingEvent],
    appearance: Option<&AppearanceModel>,
    candidates: &[Offset],
    metric: ScoreMetric,
    config: &SamplerConfig,
) -> Result<Vec<(Offset, f64)>> {
    if let Some(&a) = candidates.iter().find(|&&a| model.structure.covers(a)) {
        return Err(Error::CandidateInStructure(a));
    }
    let k = model.num_labels();
    let total_weight: f64 = events.iter().map(|e| e.weight).sum();
    let mut post = SufficientStatistics::zeros(StatisticsKind::Expectations, k, candidates);
    let mut prior = post.clone();
    for (i, ev) in events.iter().enumerate() {
        let domain = ev.domain().ok_or_else(|| Error::InvalidEvent("event without data".into()))?;
        let local = model.with_domain(domain);
        let w = ev.weight / total_weight;
        let p = pooled_counts(&local, Some(ev), appearance, candidates, config, 2 * i as u64)?;
        let q = pooled_counts(&local, None, appearance, candidates, config, 2 * i as u64 + 1)?;
        post.add_scaled(&p, w)?;
        prior.add_scaled(&q, w)?;
    }
    Ok(candidates
        .par_iter()
        .map(|&a| {
            let p = post.table(a).expect("candidate present");
            let q = prior.table(a).expect("candidate present");
            (a, score(p, q, metric))
        })
        .collect())
}

fn pooled_counts(
    model: &GrfModel,
    event: Option<&TrainingEvent>,
    appearance: Option<&AppearanceModel>,
    offsets: &[Offset],
    config: &SamplerConfig,
    stream: u64,
) -> Result<SufficientStatistics> {
    let k = model.num_labels();
    let evidence = event.map(|e| &e.evidence);
    let mut chain = SamplerChain::with_stream(model, evidence, appearance, config, None, stream)?;
    let mut acc = SufficientStatistics::zeros(StatisticsKind::Expectations, k, offsets);
    if chain.is_frozen() {
        return Ok(SufficientStatistics { kind: StatisticsKind::Expectations, ..count_offsets(chain.state(), offsets, k) });
    }
    chain.sample_with(config, |y| acc.add_scaled(&count_offsets(y, offsets, k), 1.0).expect("same offsets"))?;
    acc.scale(1.0 / config.n_samples as f64);
    Ok(acc)
}

fn score(post: &[f64], prior: &[f64], metric: ScoreMetric) -> f64 {
    match metric {
        ScoreMetric::Euclidean => post.iter().zip(prior).map(|(p, q)| (p - q) * (p - q)).sum(),
        ScoreMetric::Kl => {
            let sp: f64 = post.iter().sum();
            let sq: f64 = prior.iter().sum();
            if sp <= 0.0 || sq <= 0.0 {
                return 0.0;
            }
            // pseudo-count keeps empty prior cells finite
            let eps = 1e-9;
            let n = post.len() as f64;
            post.iter()
                .zip(prior)
                .map(|(p, q)| {
                    let p = p / sp;
                    let q = (q / sq + eps) / (1.0 + n * eps);
                    if p > 0.0 {
                        p * (p / q).ln()
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                .max(0.0)
        }
    }
}

fn warm_start(model: &GrfModel, structure: NeighborhoodStructure) -> Result<GrfModel> {
    let k = model.num_labels();
    let pairwise = structure
        .pairwise()
        .iter()
        .map(|&a| OffsetTable {
            offset: a,
            values: model.potentials.table(a).map_or_else(|| vec![0.0; k * k], <[f64]>::to_vec),
        })
        .collect();
    let potentials = PotentialTable::new(k, model.potentials.unary.clone(), pairwise)?;
    GrfModel::build(model.domain, model.labels.clone(), structure, potentials)
}

fn last_residual(trace: &[crate::learning::TraceEntry]) -> f64 {
    trace.last().map_or(f64::NAN, |t| t.moment_residual)
}

/// Greedy growth from `A = {0}`: learn, score the remaining candidates, add
/// the best one, until `target_size` nonzero offsets are chosen.
pub fn grow_structure(
    events: &[TrainingEvent],
    labels: &LabelSet,
    domain: GridDomain,
    range: CandidateRange,
    target_size: usize,
    config: &StructureConfig,
    appearance: Option<&AppearanceModel>,
) -> Result<(GrfModel, StructureTrace)> {
    check_events(events, domain)?;
    let candidates = range.offsets();
    if target_size > candidates.len() {
        return Err(Error::RangeExhausted { requested: target_size, available: candidates.len() });
    }
    let mut model = GrfModel::uniform(domain, labels.clone(), NeighborhoodStructure::unary());
    let mut trace = StructureTrace::default();
    let score_cfg = SamplerConfig {
        burn_in: config.search.burn_in,
        n_samples: config.score_samples.unwrap_or(config.search.samples_per_expectation),
        thinning: config.search.sweeps_per_iteration,
        seed: config.search.seed,
        scan: config.search.scan,
    };
    for step in 0..target_size {
        let learned = learn_potentials(&model, events, appearance, &step_schedule(&config.search, step))?;
        model = learned.model;
        let remaining: Vec<Offset> = candidates.iter().copied().filter(|&a| !model.structure.covers(a)).collect();
        let cfg = score_cfg.with_seed(derive_seed(score_cfg.seed, 5000 + step as u64));
        let scores = weighted_candidate_scores(&model, events, appearance, &remaining, config.metric, &cfg)?;
        // strict comparison keeps the earliest (smallest) offset on ties
        let (best, best_score) = scores
            .iter()
            .fold(None::<(Offset, f64)>, |acc, &(a, s)| match acc {
                Some((_, bs)) if bs >= s => acc,
                _ => Some((a, s)),
            })
            .expect("candidates remain");
        trace.push(StructureStep {
            action: StepAction::Added,
            offset: best,
            score: best_score,
            likelihood_proxy: last_residual(&learned.trace),
        });
        model = warm_start(&model, model.structure.with_offset(best)?)?;
    }
    let final_model = learn_potentials(&model, events, appearance, &config.final_schedule)?.model;
    Ok((final_model, trace))
}

/// Greedy shrinkage from the full candidate range: learn, normalise, drop
/// the offset with the smallest canonical Frobenius norm (ties: smallest
/// offset in `(dy, dx)` order), until `target_size` offsets remain.
pub fn shrink_structure(
    events: &[TrainingEvent],
    labels: &LabelSet,
    domain: GridDomain,
    range: CandidateRange,
    target_size: usize,
    config: &StructureConfig,
    appearance: Option<&AppearanceModel>,
) -> Result<(GrfModel, StructureTrace)> {
    check_events(events, domain)?;
    let candidates = range.offsets();
    if target_size > candidates.len() {
        return Err(Error::RangeExhausted { requested: target_size, available: candidates.len() });
    }
    let mut model = GrfModel::uniform(domain, labels.clone(), NeighborhoodStructure::new(candidates)?);
    let mut trace = StructureTrace::default();
    let mut step = 0;
    while model.structure.pairwise().len() > target_size {
        let learned = learn_potentials(&model, events, appearance, &step_schedule(&config.search, step))?;
        model = learned.model;
        let (weakest, norm) = weakest_offset(&model.potentials);
        trace.push(StructureStep {
            action: StepAction::Removed,
            offset: weakest,
            score: norm,
            likelihood_proxy: last_residual(&learned.trace),
        });
        model = warm_start(&model, model.structure.without_offset(weakest)?)?;
        step += 1;
    }
    let final_model = learn_potentials(&model, events, appearance, &config.final_schedule)?.model;
    Ok((final_model, trace))
}

/// Offset with the smallest canonical norm; ties resolved toward the
/// lexicographically smallest offset.
pub fn weakest_offset(potentials: &PotentialTable) -> (Offset, f64) {
    potentials
        .canonical_norms()
        .into_iter()
        .min_by(|(a, na), (b, nb)| na.total_cmp(nb).then(a.cmp(b)))
        .expect("structure has pairwise offsets")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{add_gauge_constants, normalize_potentials, Labelling};

    #[test]
    fn candidate_range_sizes() {
        for d in 1..=6 {
            let r = CandidateRange::new(d).unwrap();
            let offs = r.offsets();
            assert_eq!(offs.len(), r.len());
            assert!(offs.iter().all(|a| !offs.contains(&a.neg())));
        }
        assert_eq!(CandidateRange::new(6).unwrap().len(), 84);
        assert_eq!(CandidateRange::new(12).unwrap().len(), 312);
        assert!(CandidateRange::new(0).is_err());
    }

    #[test]
    fn euclidean_score_is_symmetric_and_kl_nonnegative() {
        let p = [3.0, 1.0, 0.0, 2.0];
        let q = [1.0, 1.5, 1.5, 2.0];
        assert_eq!(score(&p, &q, ScoreMetric::Euclidean), score(&q, &p, ScoreMetric::Euclidean));
        assert_eq!(score(&p, &p, ScoreMetric::Euclidean), 0.0);
        assert!(score(&p, &q, ScoreMetric::Kl) > 0.0);
        assert!(score(&q, &q, ScoreMetric::Kl).abs() < 1e-12);
    }

    #[test]
    fn constant_table_is_removed_first_and_ties_break_lexicographically() {
        let offs = [Offset::new(1, 0), Offset::new(0, 1), Offset::new(-1, 1)];
        let s = NeighborhoodStructure::new(offs).unwrap();
        let mut p = PotentialTable::zeros(2, &s);
        p.pairwise[0].values = vec![0.5, -0.5, -0.5, 0.5];
        p.pairwise[1].values = vec![2.0, 2.0, 2.0, 2.0];
        p.pairwise[2].values = vec![-0.5, 0.5, 0.5, -0.5];
        assert_eq!(weakest_offset(&p).0, Offset::new(0, 1));
        p.pairwise[1].values = vec![0.5, -0.5, -0.5, 0.5];
        // three equal norms: (1,0) has dy = 0 and is smallest
        assert_eq!(weakest_offset(&p).0, Offset::new(1, 0));

        let shifted = add_gauge_constants(&p, &[(Offset::new(-1, 1), 3.7)]).unwrap();
        for ((_, a), (_, b)) in shifted.canonical_norms().iter().zip(normalize_potentials(&p).canonical_norms()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn candidates_must_be_new() {
        let d = GridDomain::new(4, 4).unwrap();
        let m = GrfModel::uniform(d, LabelSet::new(2).unwrap(), NeighborhoodStructure::new([Offset::new(1, 0)]).unwrap());
        let ev = TrainingEvent::supervised(&Labelling::filled(d, 0));
        let r = candidate_scores(&m, &ev, None, &[Offset::new(-1, 0)], ScoreMetric::Euclidean, &SamplerConfig::default());
        assert!(matches!(r, Err(Error::CandidateInStructure(_))));
    }

    #[test]
    fn growth_rejects_oversized_targets() {
        let d = GridDomain::new(4, 4).unwrap();
        let ev = TrainingEvent::supervised(&Labelling::filled(d, 0));
        let cfg = StructureConfig::from_final(LearningSchedule { iterations: 4, ..Default::default() });
        let r = grow_structure(&[ev], &LabelSet::new(2).unwrap(), d, CandidateRange::new(1).unwrap(), 5, &cfg, None);
        assert!(matches!(r, Err(Error::RangeExhausted { requested: 5, available: 4 })));
    }
}
