//! Maximum-likelihood learning of Gibbs potentials by stochastic gradient
//! ascent. The gradient `E_posterior[Φ] - E_prior[Φ]` is estimated from
//! persistent Gibbs chains; learning from fixed target statistics replaces
//! the posterior term by the target.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::appearance::AppearanceModel;
use crate::error::{Error, Result};
use crate::evidence::Evidence;
use crate::grid::{
    count_offsets, normalize_potentials, GridDomain, GrfModel, Labelling, Offset, PotentialTable, StatisticsKind,
    SufficientStatistics,
};
use crate::rng::derive_seed;
use crate::sampler::{estimate_statistics, SamplerChain, SamplerConfig, ScanMode};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningSchedule {
    pub iterations: usize,
    /// Initial step; `None` means `1 / (W * H)` of the learning domain.
    pub step0: Option<f64>,
    /// Decay constant of `step_i = step0 / (1 + i / tau)`; `None` means `iterations / 3`.
    pub tau: Option<f64>,
    pub samples_per_expectation: usize,
    pub sweeps_per_iteration: usize,
    pub persistent_chains: bool,
    /// Sweeps run on freshly initialised chains before their first use.
    pub burn_in: usize,
    pub seed: u64,
    pub scan: ScanMode,
    /// Fraction of the final iterations whose potentials are averaged into
    /// the returned model; 0 returns the last iterate.
    #[serde(default)]
    pub average_tail: f64,
}

impl Default for LearningSchedule {
    fn default() -> Self {
        LearningSchedule {
            iterations: 1000,
            step0: None,
            tau: None,
            samples_per_expectation: 1,
            sweeps_per_iteration: 2,
            persistent_chains: true,
            burn_in: 100,
            seed: 0,
            scan: ScanMode::Raster,
            average_tail: 0.0,
        }
    }
}

impl LearningSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_expectation == 0 || self.sweeps_per_iteration == 0 {
            return Err(Error::InvalidConfig("samples_per_expectation and sweeps_per_iteration must be positive".into()));
        }
        if self.step0.is_some_and(|s| s <= 0.0) || self.tau.is_some_and(|t| t <= 0.0) {
            return Err(Error::InvalidConfig("step0 and tau must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.average_tail) {
            return Err(Error::InvalidConfig(format!("average_tail {} must lie in [0, 1]", self.average_tail)));
        }
        Ok(())
    }

    pub fn step(&self, iteration: usize, domain: GridDomain) -> f64 {
        let step0 = self.step0.unwrap_or(1.0 / domain.nodes() as f64);
        let tau = self.tau.unwrap_or((self.iterations as f64 / 3.0).max(1.0));
        step0 / (1.0 + iteration as f64 / tau)
    }

    /// The same schedule with a fraction of the iterations.
    pub fn scaled(&self, fraction: f64) -> Self {
        LearningSchedule { iterations: ((self.iterations as f64 * fraction).round() as usize).max(1), ..*self }
    }

    fn tail_start(&self) -> usize {
        self.iterations - (self.iterations as f64 * self.average_tail).round() as usize
    }

    fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            burn_in: self.burn_in,
            n_samples: self.samples_per_expectation,
            thinning: self.sweeps_per_iteration,
            seed,
            scan: self.scan,
        }
    }
}

/// One training observation with its weight in the likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingEvent {
    pub evidence: Evidence,
    pub weight: f64,
}

impl TrainingEvent {
    pub fn new(evidence: Evidence, weight: f64) -> Result<Self> {
        if evidence.image.is_none() && evidence.clamps.is_none() {
            return Err(Error::InvalidEvent("an event needs an image or clamps".into()));
        }
        if !(weight > 0.0) {
            return Err(Error::InvalidEvent(format!("weight {weight} must be positive")));
        }
        Ok(TrainingEvent { evidence, weight })
    }

    /// Fully labelled (supervised) event.
    pub fn supervised(y: &Labelling) -> Self {
        TrainingEvent { evidence: Evidence::clamped(crate::evidence::ClampMask::full(y)), weight: 1.0 }
    }

    pub fn domain(&self) -> Option<GridDomain> {
        self.evidence
            .image
            .as_ref()
            .map(|i| i.domain())
            .or_else(|| self.evidence.clamps.as_ref().map(|c| c.domain()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub step: f64,
    /// Max-norm of the per-edge normalised gradient estimate.
    pub gradient_max: f64,
    /// Max-norm of an exponential moving average of that gradient.
    pub moment_residual: f64,
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{:.6e}\t{:.6e}\t{:.6e}", self.iteration, self.step, self.gradient_max, self.moment_residual)
    }
}

#[derive(Clone, Debug)]
pub struct LearningOutcome {
    pub model: GrfModel,
    pub appearance: Option<AppearanceModel>,
    pub trace: Vec<TraceEntry>,
}

/// Averages the co-occurrence counts of `samples_per_expectation` states,
/// each taken after `sweeps_per_iteration` sweeps.
fn chain_expectation(chain: &mut SamplerChain, schedule: &LearningSchedule, offsets: &[Offset], k: usize, keep: Option<&mut Vec<Labelling>>) -> SufficientStatistics {
    let mut acc = SufficientStatistics::zeros(StatisticsKind::Expectations, k, offsets);
    let mut keep = keep;
    for _ in 0..schedule.samples_per_expectation {
        chain.run(schedule.sweeps_per_iteration);
        acc.add_scaled(&count_offsets(chain.state(), offsets, k), 1.0).expect("same offsets");
        if let Some(store) = keep.as_deref_mut() {
            store.push(chain.state().clone());
        }
    }
    acc.scale(1.0 / schedule.samples_per_expectation as f64);
    acc
}

struct EventChains {
    weight: f64,
    domain: GridDomain,
    posterior: SamplerChain,
    prior: SamplerChain,
}

fn make_chains(
    model: &GrfModel,
    events: &[TrainingEvent],
    appearance: Option<&AppearanceModel>,
    schedule: &LearningSchedule,
    round: u64,
) -> Result<Vec<EventChains>> {
    events
        .iter()
        .enumerate()
        .map(|(i, ev)| {
            let domain = ev.domain().ok_or_else(|| Error::InvalidEvent("event without data".into()))?;
            let local = model.with_domain(domain);
            let cfg = schedule.sampler(derive_seed(schedule.seed, round));
            let mut posterior = SamplerChain::with_stream(&local, Some(&ev.evidence), appearance, &cfg, None, 2 * i as u64)?;
            let mut prior = SamplerChain::with_stream(&local, None, None, &cfg, None, 2 * i as u64 + 1)?;
            posterior.run(schedule.burn_in);
            prior.run(schedule.burn_in);
            Ok(EventChains { weight: ev.weight, domain, posterior, prior })
        })
        .collect()
}

/// Tracks the smoothed gradient for the convergence trace.
struct TraceState {
    ema: Option<SufficientStatistics>,
    trace: Vec<TraceEntry>,
}

impl TraceState {
    fn new() -> Self {
        TraceState { ema: None, trace: Vec::new() }
    }

    fn push(&mut self, iteration: usize, step: f64, normalized_grad: &SufficientStatistics) {
        let ema = match self.ema.take() {
            None => normalized_grad.clone(),
            Some(mut e) => {
                e.scale(0.9);
                e.add_scaled(normalized_grad, 0.1).expect("same offsets");
                e
            }
        };
        self.trace.push(TraceEntry {
            iteration,
            step,
            gradient_max: normalized_grad.max_abs(),
            moment_residual: ema.max_abs(),
        });
        self.ema = Some(ema);
    }
}

/// Appearance co-learning: after every potential step the posterior samples
/// drive one blended EM update of the appearance model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AppearanceLearning {
    pub step: f64,
    /// When false, the potentials stay fixed and only the appearance is learned.
    pub learn_potentials: bool,
}

pub fn learn_potentials(
    model: &GrfModel,
    events: &[TrainingEvent],
    appearance: Option<&AppearanceModel>,
    schedule: &LearningSchedule,
) -> Result<LearningOutcome> {
    learn_model(model, events, appearance, schedule, None)
}

/// Running sum of the potentials visited in the averaged tail.
struct TailAverage {
    start: usize,
    sum: Option<PotentialTable>,
    count: usize,
}

impl TailAverage {
    fn new(schedule: &LearningSchedule) -> Self {
        TailAverage { start: schedule.tail_start(), sum: None, count: 0 }
    }

    fn push(&mut self, it: usize, u: &PotentialTable) {
        if it < self.start {
            return;
        }
        self.count += 1;
        match &mut self.sum {
            None => self.sum = Some(u.clone()),
            Some(acc) => {
                acc.unary.iter_mut().zip(&u.unary).for_each(|(a, v)| *a += v);
                for (t, s) in acc.pairwise.iter_mut().zip(&u.pairwise) {
                    t.values.iter_mut().zip(&s.values).for_each(|(a, v)| *a += v);
                }
            }
        }
    }

    fn finish(self, model: &mut GrfModel) {
        let Some(mut acc) = self.sum else { return };
        let n = self.count as f64;
        acc.unary.iter_mut().for_each(|a| *a /= n);
        acc.pairwise.iter_mut().for_each(|t| t.values.iter_mut().for_each(|a| *a /= n));
        model.potentials = normalize_potentials(&acc);
    }
}

/// Stochastic gradient ascent on the event likelihood. Each iteration
/// samples posterior and prior labellings, forms `Φ(ỹ) - Φ(y)`, takes a
/// step and re-normalises the potentials to the canonical gauge.
pub fn learn_model(
    model: &GrfModel,
    events: &[TrainingEvent],
    appearance: Option<&AppearanceModel>,
    schedule: &LearningSchedule,
    appearance_learning: Option<AppearanceLearning>,
) -> Result<LearningOutcome> {
    schedule.validate()?;
    if events.is_empty() {
        return Err(Error::InvalidEvent("no training events".into()));
    }
    let mut app = appearance.cloned();
    if appearance_learning.is_some() && app.is_none() {
        return Err(Error::MissingAppearance);
    }
    let learn_u = appearance_learning.is_none_or(|a| a.learn_potentials);
    let k = model.num_labels();
    let offsets = model.structure.offsets().to_vec();
    let mut current = model.clone();
    let mut chains = make_chains(&current, events, app.as_ref(), schedule, 0)?;
    let total_weight: f64 = events.iter().map(|e| e.weight).sum();
    let reference = chains[0].domain;
    let mut tracer = TraceState::new();
    let mut tail = TailAverage::new(schedule);

    for it in 0..schedule.iterations {
        if !schedule.persistent_chains && it > 0 {
            chains = make_chains(&current, events, app.as_ref(), schedule, it as u64)?;
        }
        let step = schedule.step(it, reference);
        let mut grad = SufficientStatistics::zeros(StatisticsKind::Difference, k, &offsets);
        let mut normalized = grad.clone();
        let mut posterior_samples: Vec<Vec<Labelling>> = Vec::new();
        for ch in chains.iter_mut() {
            let mut kept = Vec::new();
            let post = chain_expectation(&mut ch.posterior, schedule, &offsets, k, Some(&mut kept));
            let prior = chain_expectation(&mut ch.prior, schedule, &offsets, k, None);
            let diff = post.difference(&prior)?;
            let w = ch.weight / total_weight;
            normalized.add_scaled(&diff.per_edge(ch.domain), w)?;
            // counts are rescaled to the reference domain so events of
            // different sizes contribute comparably
            let scale = reference.nodes() as f64 / ch.domain.nodes() as f64;
            grad.add_scaled(&diff, w * scale)?;
            posterior_samples.push(kept);
        }
        if learn_u {
            let mut u = current.potentials.clone();
            u.unary.iter_mut().zip(&grad.unary).for_each(|(v, g)| *v += step * g);
            for (t, g) in u.pairwise.iter_mut().zip(&grad.pairwise) {
                t.values.iter_mut().zip(&g.values).for_each(|(v, g)| *v += step * g);
            }
            current.potentials = normalize_potentials(&u);
            tail.push(it, &current.potentials);
            for ch in chains.iter_mut() {
                ch.posterior.set_potentials(&current.potentials)?;
                ch.prior.set_potentials(&current.potentials)?;
            }
        }
        if let (Some(al), Some(a)) = (appearance_learning, app.as_mut()) {
            for (ev, samples) in events.iter().zip(&posterior_samples) {
                if let Some(img) = &ev.evidence.image {
                    *a = a.update(img, samples, al.step)?.model;
                }
            }
            for (ev, ch) in events.iter().zip(chains.iter_mut()) {
                if let Some(img) = &ev.evidence.image {
                    ch.posterior.set_likelihood(Some(a.likelihood_field(img)?))?;
                }
            }
        }
        tracer.push(it, step, &normalized);
    }
    if learn_u {
        tail.finish(&mut current);
    }
    Ok(LearningOutcome { model: current, appearance: app, trace: tracer.trace })
}

/// One stochastic gradient estimate `Φ̂_posterior - Φ̂_prior` from fresh
/// chains: `burn_in` sweeps, then `samples_per_expectation` samples each.
pub fn gradient_estimate(
    model: &GrfModel,
    event: &TrainingEvent,
    appearance: Option<&AppearanceModel>,
    schedule: &LearningSchedule,
) -> Result<SufficientStatistics> {
    schedule.validate()?;
    let mut chains = make_chains(model, std::slice::from_ref(event), appearance, schedule, 0)?;
    let ch = &mut chains[0];
    let offsets = model.structure.offsets();
    let k = model.num_labels();
    let post = chain_expectation(&mut ch.posterior, schedule, offsets, k, None);
    let prior = chain_expectation(&mut ch.prior, schedule, offsets, k, None);
    post.difference(&prior)
}

/// Target statistics as expected counts on `domain`, restricted to the
/// model's offsets.
fn target_counts(model: &GrfModel, target: &SufficientStatistics) -> Result<SufficientStatistics> {
    if target.num_labels != model.num_labels() {
        return Err(Error::IncompatibleStatistics(format!(
            "target has {} labels, model has {}",
            target.num_labels,
            model.num_labels()
        )));
    }
    if target.kind == StatisticsKind::Difference {
        return Err(Error::IncompatibleStatistics("target must be expectations or frequencies".into()));
    }
    let selected = target.select(model.structure.offsets())?;
    Ok(selected.to_counts(model.domain))
}

/// Learns potentials whose prior statistics reproduce `target`; only prior
/// sampling is needed.
pub fn learn_from_statistics(
    model: &GrfModel,
    target: &SufficientStatistics,
    schedule: &LearningSchedule,
) -> Result<LearningOutcome> {
    schedule.validate()?;
    let goal = target_counts(model, target)?;
    let k = model.num_labels();
    let offsets = model.structure.offsets().to_vec();
    let mut current = model.clone();
    let fresh = |m: &GrfModel, round: u64| -> Result<SamplerChain> {
        let mut c = SamplerChain::with_stream(m, None, None, &schedule.sampler(derive_seed(schedule.seed, round)), None, 1)?;
        c.run(schedule.burn_in);
        Ok(c)
    };
    let mut chain = fresh(&current, 0)?;
    let mut tracer = TraceState::new();
    let mut tail = TailAverage::new(schedule);
    for it in 0..schedule.iterations {
        if !schedule.persistent_chains && it > 0 {
            chain = fresh(&current, it as u64)?;
        }
        let step = schedule.step(it, current.domain);
        let prior = chain_expectation(&mut chain, schedule, &offsets, k, None);
        let grad = goal.difference(&prior)?;
        let mut u = current.potentials.clone();
        u.unary.iter_mut().zip(&grad.unary).for_each(|(v, g)| *v += step * g);
        for (t, g) in u.pairwise.iter_mut().zip(&grad.pairwise) {
            t.values.iter_mut().zip(&g.values).for_each(|(v, g)| *v += step * g);
        }
        current.potentials = normalize_potentials(&u);
        tail.push(it, &current.potentials);
        chain.set_potentials(&current.potentials)?;
        tracer.push(it, step, &grad.per_edge(current.domain));
    }
    tail.finish(&mut current);
    Ok(LearningOutcome { model: current, appearance: None, trace: tracer.trace })
}

/// Max-norm gap between the model's estimated prior statistics and the
/// target, both per-edge normalised.
pub fn moment_residual(model: &GrfModel, target: &SufficientStatistics, config: &SamplerConfig) -> Result<f64> {
    let goal = target_counts(model, target)?.per_edge(model.domain);
    let est = estimate_statistics(model, None, None, config)?.per_edge(model.domain);
    est.max_abs_diff(&goal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::ClampMask;
    use crate::grid::{LabelSet, NeighborhoodStructure, OffsetTable};
    use crate::oracle::exact_statistics_expectation;

    fn small_model() -> GrfModel {
        let offsets = [Offset::new(1, 0), Offset::new(0, 1)];
        let s = NeighborhoodStructure::new(offsets).unwrap();
        let p = PotentialTable::new(
            2,
            vec![0.2, -0.2],
            vec![
                OffsetTable { offset: offsets[0], values: vec![0.6, -0.6, -0.6, 0.6] },
                OffsetTable { offset: offsets[1], values: vec![-0.3, 0.3, 0.3, -0.3] },
            ],
        )
        .unwrap();
        GrfModel::build(GridDomain::new(3, 3).unwrap(), LabelSet::new(2).unwrap(), s, p).unwrap()
    }

    #[test]
    fn zero_iterations_is_identity() {
        let m = small_model();
        let y = Labelling::filled(m.domain, 1);
        let out = learn_potentials(&m, &[TrainingEvent::supervised(&y)], None, &LearningSchedule { iterations: 0, ..Default::default() })
            .unwrap();
        assert_eq!(out.model, m);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn tail_average_is_validated_and_stays_canonical() {
        let m = small_model();
        let bad = LearningSchedule { average_tail: 1.5, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        let y = Labelling::from_fn(m.domain, |x, _| (x % 2) as u8);
        let sched = LearningSchedule { iterations: 40, average_tail: 1.0, burn_in: 5, ..Default::default() };
        let out = learn_potentials(&m, &[TrainingEvent::supervised(&y)], None, &sched).unwrap();
        assert!(out.model.potentials.is_canonical(1e-12));
        let last = learn_potentials(&m, &[TrainingEvent::supervised(&y)], None, &LearningSchedule { average_tail: 0.0, ..sched }).unwrap();
        assert_ne!(out.model.potentials, last.model.potentials);
    }

    #[test]
    fn events_need_data() {
        assert!(matches!(TrainingEvent::new(Evidence::none(), 1.0), Err(Error::InvalidEvent(_))));
        let y = Labelling::filled(GridDomain::new(2, 2).unwrap(), 0);
        assert!(TrainingEvent::new(Evidence::clamped(ClampMask::full(&y)), 0.0).is_err());
    }

    #[test]
    fn gradient_entries_sum_to_zero_and_gauge_is_kept() {
        let m = small_model();
        let mut mask = ClampMask::free(m.domain);
        mask.set(0, 0, Some(1));
        mask.set(2, 1, Some(0));
        let ev = TrainingEvent::new(Evidence::clamped(mask), 1.0).unwrap();
        let g = gradient_estimate(&m, &ev, None, &LearningSchedule { burn_in: 10, ..Default::default() }).unwrap();
        assert!(g.unary.iter().sum::<f64>().abs() < 1e-12);
        for t in &g.pairwise {
            assert!(t.sum().abs() < 1e-12);
        }
        let out = learn_potentials(&m, &[ev], None, &LearningSchedule { iterations: 50, ..Default::default() }).unwrap();
        assert!(out.model.potentials.is_canonical(1e-9));
        assert_eq!(out.trace.len(), 50);
    }

    #[test]
    fn identical_frozen_chains_cancel() {
        let m = small_model();
        let y = Labelling::from_fn(m.domain, |x, _| (x % 2) as u8);
        let frozen = SamplerChain::new(&m, Some(&Evidence::clamped(ClampMask::full(&y))), None, &SamplerConfig::default(), None).unwrap();
        let mut a = frozen.clone();
        let mut b = frozen;
        let s = LearningSchedule::default();
        let offsets = m.structure.offsets().to_vec();
        let d = chain_expectation(&mut a, &s, &offsets, 2, None).difference(&chain_expectation(&mut b, &s, &offsets, 2, None)).unwrap();
        assert_eq!(d.max_abs(), 0.0);
    }

    #[test]
    fn statistics_target_must_match() {
        let m = small_model();
        let wrong = SufficientStatistics::zeros(StatisticsKind::Expectations, 3, m.structure.offsets());
        assert!(matches!(learn_from_statistics(&m, &wrong, &LearningSchedule::default()), Err(Error::IncompatibleStatistics(_))));
        let other = SufficientStatistics::zeros(StatisticsKind::Expectations, 2, &[Offset::new(2, 0)]);
        assert!(matches!(moment_residual(&m, &other, &SamplerConfig::default()), Err(Error::IncompatibleStatistics(_))));
    }

    #[test]
    fn self_target_residual_is_small() {
        let m = small_model();
        let exact = exact_statistics_expectation(&m, None, None).unwrap();
        let cfg = SamplerConfig { burn_in: 100, n_samples: 20_000, thinning: 1, seed: 3, scan: ScanMode::Raster };
        let r = moment_residual(&m, &exact, &cfg).unwrap();
        assert!(r < 0.02, "{r}");
    }
}
