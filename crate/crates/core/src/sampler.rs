//! Single-site Gibbs sampling from the prior and from posteriors given an
//! image and/or clamped nodes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::appearance::{AppearanceModel, LikelihoodField};
use crate::error::{Error, Result};
use crate::evidence::Evidence;
use crate::grid::{count_offsets, GridDomain, GrfModel, Labelling, Offset, PotentialTable, StatisticsKind, SufficientStatistics};
use crate::oracle::MarginalField;
use crate::rng::{stream_rng, ChainRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    #[default]
    Raster,
    RandomSite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub burn_in: usize,
    pub n_samples: usize,
    /// Sweeps between consecutive retained samples.
    pub thinning: usize,
    pub seed: u64,
    pub scan: ScanMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { burn_in: 1000, n_samples: 100, thinning: 1, seed: 0, scan: ScanMode::Raster }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.thinning == 0 {
            return Err(Error::InvalidConfig("n_samples and thinning must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        SamplerConfig { seed, ..self }
    }
}

/// Pairwise tables arranged per neighbour: each offset `a` contributes a
/// forward neighbour `t + a` and a backward neighbour `t - a`. Row `j` of a
/// neighbour's table holds the contributions to each label of `t` when the
/// neighbour carries `j`.
#[derive(Clone, Debug, Default)]
struct Compiled {
    dx: Vec<i64>,
    dy: Vec<i64>,
    shift: Vec<isize>,
    tables: Vec<f64>,
    /// Two-label case: `row[1] - row[0]` per neighbour label.
    deltas: Vec<f64>,
    /// Nodes at least this far from every border see all neighbours.
    margin: usize,
}

fn compile(potentials: &PotentialTable, domain: GridDomain) -> Compiled {
    let k = potentials.num_labels;
    let mut c = Compiled::default();
    for t in &potentials.pairwise {
        let (dx, dy) = (t.offset.dx as i64, t.offset.dy as i64);
        let shift = t.offset.dy as isize * domain.width as isize + t.offset.dx as isize;
        c.margin = c.margin.max(dx.unsigned_abs() as usize).max(dy.unsigned_abs() as usize);
        // forward: u(k, j); backward: u(j, k)
        let mut forward = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                forward[b * k + a] = t.values[a * k + b];
            }
        }
        for (sign, table) in [(1, forward), (-1, t.values.clone())] {
            c.dx.push(sign * dx);
            c.dy.push(sign * dy);
            c.shift.push(sign as isize * shift);
            if k == 2 {
                c.deltas.extend([table[1] - table[0], table[3] - table[2]]);
            }
            c.tables.extend(table);
        }
    }
    c
}

/// Draws an index proportionally to `exp(logits)`; `logits` is overwritten
/// with unnormalised probabilities.
fn draw(logits: &mut [f64], rng: &mut ChainRng) -> usize {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - m).exp();
        total += *l;
    }
    let mut u = rng.random::<f64>() * total;
    for (k, &p) in logits.iter().enumerate() {
        if u < p {
            return k;
        }
        u -= p;
    }
    logits.len() - 1
}

fn normalise_logits(logits: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - m).exp();
        total += *l;
    }
    logits.iter_mut().for_each(|l| *l /= total);
}

fn likelihood_for(
    model: &GrfModel,
    evidence: Option<&Evidence>,
    appearance: Option<&AppearanceModel>,
) -> Result<Option<LikelihoodField>> {
    let Some(ev) = evidence else { return Ok(None) };
    ev.validate(model.domain, &model.labels)?;
    match (&ev.image, appearance) {
        (None, _) => Ok(None),
        (Some(_), None) => Err(Error::MissingAppearance),
        (Some(img), Some(app)) => {
            if app.num_labels() != model.num_labels() {
                return Err(Error::DimensionMismatch(format!(
                    "appearance has {} labels, model has {}",
                    app.num_labels(),
                    model.num_labels()
                )));
            }
            app.likelihood_field(img).map(Some)
        }
    }
}

/// Full conditional `p(y_t = k | y_{D \ t}, x)`, computed directly from the
/// potential tables.
pub fn site_conditional(
    model: &GrfModel,
    y: &Labelling,
    x: i64,
    yy: i64,
    evidence: Option<&Evidence>,
    appearance: Option<&AppearanceModel>,
) -> Result<Vec<f64>> {
    model.check_labelling(y)?;
    if !model.domain.contains(x, yy) {
        return Err(Error::OutOfDomain { x, y: yy });
    }
    let field = likelihood_for(model, evidence, appearance)?;
    let t = model.domain.index(x as usize, yy as usize);
    let kc = model.num_labels();
    let mut logits: Vec<f64> = model.potentials.unary.clone();
    if let Some(f) = &field {
        logits.iter_mut().zip(f.at(t)).for_each(|(l, v)| *l += v);
    }
    for table in &model.potentials.pairwise {
        let a = table.offset;
        let (fx, fy) = (x + a.dx as i64, yy + a.dy as i64);
        if model.domain.contains(fx, fy) {
            let j = y.get(fx as usize, fy as usize) as usize;
            for (k, l) in logits.iter_mut().enumerate() {
                *l += table.values[k * kc + j];
            }
        }
        let (bx, by) = (x - a.dx as i64, yy - a.dy as i64);
        if model.domain.contains(bx, by) {
            let j = y.get(bx as usize, by as usize) as usize;
            for (k, l) in logits.iter_mut().enumerate() {
                *l += table.values[j * kc + k];
            }
        }
    }
    normalise_logits(&mut logits);
    Ok(logits)
}

/// A Markov chain over labellings. Clamped nodes never change.
#[derive(Clone, Debug)]
pub struct SamplerChain {
    domain: GridDomain,
    num_labels: usize,
    pairs: Compiled,
    unary: Vec<f64>,
    likelihood: Option<LikelihoodField>,
    /// Unary potential plus appearance log-likelihood, per node and label.
    bias: Vec<f64>,
    clamps: Vec<Option<u8>>,
    free: Vec<u32>,
    state: Labelling,
    sweeps: u64,
    rng: ChainRng,
    scan: ScanMode,
    scratch: Vec<f64>,
}

impl SamplerChain {
    /// Chain on random stream 0 of `config.seed`.
    pub fn new(
        model: &GrfModel,
        evidence: Option<&Evidence>,
        appearance: Option<&AppearanceModel>,
        config: &SamplerConfig,
        init: Option<Labelling>,
    ) -> Result<Self> {
        Self::with_stream(model, evidence, appearance, config, init, 0)
    }

    pub fn with_stream(
        model: &GrfModel,
        evidence: Option<&Evidence>,
        appearance: Option<&AppearanceModel>,
        config: &SamplerConfig,
        init: Option<Labelling>,
        stream: u64,
    ) -> Result<Self> {
        let likelihood = likelihood_for(model, evidence, appearance)?;
        let domain = model.domain;
        let clamps: Vec<Option<u8>> = match evidence.and_then(|e| e.clamps.as_ref()) {
            Some(c) => c.cells().to_vec(),
            None => vec![None; domain.nodes()],
        };
        let mut rng = stream_rng(config.seed, stream);
        let state = match init {
            Some(y) => {
                model.check_labelling(&y)?;
                for (t, c) in clamps.iter().enumerate() {
                    if let Some(k) = c {
                        if y.as_slice()[t] != *k {
                            let (x, yy) = domain.coords(t);
                            return Err(Error::ClampConflict { x, y: yy });
                        }
                    }
                }
                y
            }
            None => {
                let k = model.num_labels();
                let data = clamps
                    .iter()
                    .map(|c| c.unwrap_or_else(|| rng.random_range(0..k) as u8))
                    .collect();
                Labelling::new(domain, data)?
            }
        };
        let free = (0..domain.nodes() as u32).filter(|&t| clamps[t as usize].is_none()).collect();
        let mut chain = SamplerChain {
            domain,
            num_labels: model.num_labels(),
            pairs: Compiled::default(),
            unary: Vec::new(),
            likelihood,
            bias: Vec::new(),
            clamps,
            free,
            state,
            sweeps: 0,
            rng,
            scan: config.scan,
            scratch: vec![0.0; model.num_labels()],
        };
        chain.set_potentials(&model.potentials)?;
        Ok(chain)
    }

    /// Replaces the potentials (e.g. after a learning step), keeping the state.
    pub fn set_potentials(&mut self, potentials: &PotentialTable) -> Result<()> {
        if potentials.num_labels != self.num_labels {
            return Err(Error::DimensionMismatch("potentials over a different label set".into()));
        }
        self.pairs = compile(potentials, self.domain);
        self.unary = potentials.unary.clone();
        self.rebuild_bias();
        Ok(())
    }

    /// Replaces the appearance log-likelihoods (e.g. after an appearance update).
    pub fn set_likelihood(&mut self, field: Option<LikelihoodField>) -> Result<()> {
        if let Some(f) = &field {
            if f.domain != self.domain || f.num_labels != self.num_labels {
                return Err(Error::DimensionMismatch("likelihood field does not match the chain".into()));
            }
        }
        self.likelihood = field;
        self.rebuild_bias();
        Ok(())
    }

    fn rebuild_bias(&mut self) {
        let k = self.num_labels;
        let n = self.domain.nodes();
        self.bias = match &self.likelihood {
            Some(f) => f.values.iter().enumerate().map(|(i, v)| v + self.unary[i % k]).collect(),
            None => self.unary.iter().copied().cycle().take(n * k).collect(),
        };
    }

    pub fn state(&self) -> &Labelling {
        &self.state
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    pub fn is_frozen(&self) -> bool {
        self.free.is_empty()
    }

    pub fn is_clamped(&self, t: usize) -> bool {
        self.clamps[t].is_some()
    }

    fn is_interior(&self, x: usize, y: usize) -> bool {
        let m = self.pairs.margin;
        x >= m && y >= m && x + m < self.domain.width && y + m < self.domain.height
    }

    /// Unnormalised log-conditional of node `t` under the current state.
    fn conditional_into(&self, t: usize, out: &mut [f64]) {
        let k = self.num_labels;
        out.copy_from_slice(&self.bias[t * k..(t + 1) * k]);
        let (x, y) = (t % self.domain.width, t / self.domain.width);
        let labels = self.state.as_slice();
        let p = &self.pairs;
        let kk = k * k;
        if self.is_interior(x, y) {
            for (i, &shift) in p.shift.iter().enumerate() {
                let j = labels[(t as isize + shift) as usize] as usize;
                let row = &p.tables[i * kk + j * k..i * kk + (j + 1) * k];
                out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
            }
            return;
        }
        let (w, h) = (self.domain.width as i64, self.domain.height as i64);
        for (i, &shift) in p.shift.iter().enumerate() {
            let (nx, ny) = (x as i64 + p.dx[i], y as i64 + p.dy[i]);
            if nx >= 0 && nx < w && ny >= 0 && ny < h {
                let j = labels[(t as isize + shift) as usize] as usize;
                let row = &p.tables[i * kk + j * k..i * kk + (j + 1) * k];
                out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
            }
        }
    }

    /// Two-label log-odds `log p(1) - log p(0)` of node `t`.
    fn log_odds(&self, t: usize) -> f64 {
        let mut s = self.bias[2 * t + 1] - self.bias[2 * t];
        let (x, y) = (t % self.domain.width, t / self.domain.width);
        let labels = self.state.as_slice();
        let p = &self.pairs;
        if self.is_interior(x, y) {
            for (i, &shift) in p.shift.iter().enumerate() {
                s += p.deltas[2 * i + labels[(t as isize + shift) as usize] as usize];
            }
            return s;
        }
        let (w, h) = (self.domain.width as i64, self.domain.height as i64);
        for (i, &shift) in p.shift.iter().enumerate() {
            let (nx, ny) = (x as i64 + p.dx[i], y as i64 + p.dy[i]);
            if nx >= 0 && nx < w && ny >= 0 && ny < h {
                s += p.deltas[2 * i + labels[(t as isize + shift) as usize] as usize];
            }
        }
        s
    }

    /// Normalised full conditional of node `t` in the current state.
    pub fn conditional(&self, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_labels];
        self.conditional_into(t, &mut out);
        normalise_logits(&mut out);
        out
    }

    fn resample(&mut self, t: usize) {
        if self.num_labels == 2 {
            // same draw as the general path: label 0 iff u < p(0)
            let p0 = 1.0 / (1.0 + self.log_odds(t).exp());
            let u = self.rng.random::<f64>();
            self.state.as_mut_slice()[t] = (u >= p0) as u8;
            return;
        }
        let mut scratch = std::mem::take(&mut self.scratch);
        self.conditional_into(t, &mut scratch);
        let k = draw(&mut scratch, &mut self.rng);
        self.state.as_mut_slice()[t] = k as u8;
        self.scratch = scratch;
    }

    /// Resamples every free node once (raster order), or `|free|` uniformly
    /// chosen free nodes (random-site scan).
    pub fn sweep(&mut self) {
        match self.scan {
            ScanMode::Raster => {
                for i in 0..self.free.len() {
                    let t = self.free[i] as usize;
                    self.resample(t);
                }
            }
            ScanMode::RandomSite => {
                let n = self.free.len();
                for _ in 0..n {
                    let t = self.free[self.rng.random_range(0..n)] as usize;
                    self.resample(t);
                }
            }
        }
        self.sweeps += 1;
    }

    pub fn run(&mut self, sweeps: usize) {
        for _ in 0..sweeps {
            self.sweep();
        }
    }

    /// `burn_in` sweeps, then `n_samples` states spaced `thinning` sweeps apart.
    pub fn sample(&mut self, config: &SamplerConfig) -> Result<Vec<Labelling>> {
        config.validate()?;
        self.run(config.burn_in);
        let mut out = Vec::with_capacity(config.n_samples);
        for _ in 0..config.n_samples {
            self.run(config.thinning);
            out.push(self.state.clone());
        }
        Ok(out)
    }

    /// Like [`sample`](Self::sample) but feeds each retained state to `visit`
    /// instead of storing it.
    pub fn sample_with(&mut self, config: &SamplerConfig, mut visit: impl FnMut(&Labelling)) -> Result<()> {
        config.validate()?;
        self.run(config.burn_in);
        for _ in 0..config.n_samples {
            self.run(config.thinning);
            visit(&self.state);
        }
        Ok(())
    }
}

/// Per-node label frequencies over the retained samples of one chain.
pub fn estimate_marginals(
    model: &GrfModel,
    evidence: Option<&Evidence>,
    appearance: Option<&AppearanceModel>,
    config: &SamplerConfig,
) -> Result<MarginalField> {
    let mut chain = SamplerChain::new(model, evidence, appearance, config, None)?;
    let k = model.num_labels();
    let mut counts = vec![0.0; model.domain.nodes() * k];
    chain.sample_with(config, |y| {
        for (t, &l) in y.as_slice().iter().enumerate() {
            counts[t * k + l as usize] += 1.0;
        }
    })?;
    let n = config.n_samples as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    MarginalField::new(model.domain, k, counts)
}

/// Average co-occurrence counts over the retained samples, for the model's
/// own offsets plus any `extra` offsets.
pub fn estimate_statistics_for(
    model: &GrfModel,
    evidence: Option<&Evidence>,
    appearance: Option<&AppearanceModel>,
    config: &SamplerConfig,
    extra: &[Offset],
) -> Result<SufficientStatistics> {
    let mut chain = SamplerChain::new(model, evidence, appearance, config, None)?;
    let offsets: Vec<Offset> = model.structure.offsets().iter().chain(extra).copied().collect();
    let k = model.num_labels();
    let mut acc = SufficientStatistics::zeros(StatisticsKind::Expectations, k, &offsets);
    chain.sample_with(config, |y| {
        acc.add_scaled(&count_offsets(y, &offsets, k), 1.0).expect("same offsets");
    })?;
    acc.scale(1.0 / config.n_samples as f64);
    acc.kind = StatisticsKind::Expectations;
    Ok(acc)
}

pub fn estimate_statistics(
    model: &GrfModel,
    evidence: Option<&Evidence>,
    appearance: Option<&AppearanceModel>,
    config: &SamplerConfig,
) -> Result<SufficientStatistics> {
    estimate_statistics_for(model, evidence, appearance, config, &[])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::ClampMask;
    use crate::grid::{LabelSet, NeighborhoodStructure, OffsetTable};
    use approx::assert_abs_diff_eq;

    fn edge_model(w: usize, h: usize) -> GrfModel {
        let a = Offset::new(1, 0);
        GrfModel::build(
            GridDomain::new(w, h).unwrap(),
            LabelSet::new(2).unwrap(),
            NeighborhoodStructure::new([a]).unwrap(),
            PotentialTable::new(2, vec![0.0; 2], vec![OffsetTable { offset: a, values: vec![0.5, -0.5, -0.5, 0.5] }])
                .unwrap(),
        )
        .unwrap()
    }

    fn random_model(w: usize, h: usize, k: usize, seed: u64) -> GrfModel {
        let mut rng = stream_rng(seed, 99);
        let offsets = [Offset::new(1, 0), Offset::new(0, 1), Offset::new(-1, 1), Offset::new(2, 1)];
        let s = NeighborhoodStructure::new(offsets).unwrap();
        let mut p = PotentialTable::zeros(k, &s);
        p.unary.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        for t in &mut p.pairwise {
            t.values.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        GrfModel::build(GridDomain::new(w, h).unwrap(), LabelSet::new(k).unwrap(), s, p).unwrap()
    }

    #[test]
    fn conditional_examples() {
        let m = edge_model(2, 1);
        let y = Labelling::new(m.domain, vec![1, 0]).unwrap();
        let p = site_conditional(&m, &y, 0, 0, None, None).unwrap();
        let expected = 0.5f64.exp() / (0.5f64.exp() + (-0.5f64).exp());
        assert_abs_diff_eq!(p[0], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.731_059, epsilon = 1e-6);
        assert!(matches!(site_conditional(&m, &y, 2, 0, None, None), Err(Error::OutOfDomain { .. })));

        let u = GrfModel::uniform(GridDomain::new(3, 3).unwrap(), LabelSet::new(3).unwrap(), NeighborhoodStructure::unary());
        let p = site_conditional(&u, &Labelling::filled(u.domain, 2), 1, 1, None, None).unwrap();
        for v in p {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn compiled_conditional_matches_direct_one() {
        let m = random_model(4, 3, 3, 5);
        let app = AppearanceModel::from_gaussians(&[vec![0.2], vec![0.5], vec![0.8]], 0.05).unwrap();
        let img = crate::evidence::Image::new(m.domain, 1, (0..12).map(|i| i as f64 / 11.0).collect()).unwrap();
        let ev = Evidence::image(img);
        let cfg = SamplerConfig::default();
        let mut chain = SamplerChain::new(&m, Some(&ev), Some(&app), &cfg, None).unwrap();
        for _ in 0..3 {
            chain.sweep();
            for t in 0..m.domain.nodes() {
                let (x, y) = m.domain.coords(t);
                let direct = site_conditional(&m, chain.state(), x as i64, y as i64, Some(&ev), Some(&app)).unwrap();
                let compiled = chain.conditional(t);
                for (a, b) in direct.iter().zip(&compiled) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn chains_are_deterministic_and_respect_clamps() {
        let m = random_model(5, 4, 3, 1);
        let mut mask = ClampMask::free(m.domain);
        mask.set(0, 0, Some(2));
        mask.set(3, 2, Some(1));
        let ev = Evidence::clamped(mask);
        let cfg = SamplerConfig { seed: 42, ..Default::default() };
        let mut a = SamplerChain::new(&m, Some(&ev), None, &cfg, None).unwrap();
        let mut b = SamplerChain::new(&m, Some(&ev), None, &cfg, None).unwrap();
        assert_eq!(a.state(), b.state());
        for _ in 0..20 {
            a.sweep();
            b.sweep();
            assert_eq!(a.state(), b.state());
            assert_eq!(a.state().get(0, 0), 2);
            assert_eq!(a.state().get(3, 2), 1);
        }
        assert_eq!(a.sweeps(), 20);

        let mut bad = Labelling::filled(m.domain, 0);
        bad.set(3, 2, 1);
        assert!(matches!(
            SamplerChain::new(&m, Some(&ev), None, &cfg, Some(bad)),
            Err(Error::ClampConflict { x: 0, y: 0 })
        ));
    }

    #[test]
    fn frozen_chain_and_init_pass_through() {
        let m = random_model(3, 3, 2, 2);
        let y = Labelling::from_fn(m.domain, |x, yy| ((x * yy) % 2) as u8);
        let ev = Evidence::clamped(ClampMask::full(&y));
        let cfg = SamplerConfig { burn_in: 3, n_samples: 4, thinning: 2, ..Default::default() };
        let mut chain = SamplerChain::new(&m, Some(&ev), None, &cfg, None).unwrap();
        assert!(chain.is_frozen());
        let samples = chain.sample(&cfg).unwrap();
        assert_eq!(samples.len(), 4);
        assert!(samples.iter().all(|s| *s == y));

        let init = Labelling::filled(m.domain, 1);
        let c = SamplerChain::new(&m, None, None, &cfg, Some(init.clone())).unwrap();
        assert_eq!(c.state(), &init);

        let stats = estimate_statistics(&m, Some(&ev), None, &SamplerConfig { burn_in: 0, n_samples: 1, ..cfg }).unwrap();
        assert_eq!(stats, SufficientStatistics { kind: StatisticsKind::Expectations, ..m.statistics(&y).unwrap() });
        let marg = estimate_marginals(&m, Some(&ev), None, &cfg).unwrap();
        for t in 0..9 {
            assert_eq!(marg.at(t)[y.as_slice()[t] as usize], 1.0);
        }
    }

    #[test]
    fn minimal_sampling_config() {
        let m = random_model(3, 3, 2, 3);
        let cfg = SamplerConfig { burn_in: 0, n_samples: 1, thinning: 1, seed: 9, scan: ScanMode::Raster };
        let mut a = SamplerChain::new(&m, None, None, &cfg, None).unwrap();
        let mut b = a.clone();
        let s = a.sample(&cfg).unwrap();
        b.sweep();
        assert_eq!(s, vec![b.state().clone()]);
        assert!(matches!(a.sample(&SamplerConfig { thinning: 0, ..cfg }), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn uniform_prior_sweeps_are_uniform() {
        let u = GrfModel::uniform(
            GridDomain::new(3, 3).unwrap(),
            LabelSet::new(2).unwrap(),
            NeighborhoodStructure::new([Offset::new(1, 0)]).unwrap(),
        );
        for scan in [ScanMode::Raster, ScanMode::RandomSite] {
            let cfg = SamplerConfig { burn_in: 10, n_samples: 20_000, thinning: 1, seed: 4, scan };
            let stats = estimate_statistics(&u, None, None, &cfg).unwrap();
            for v in stats.table(Offset::new(1, 0)).unwrap() {
                // 6 edges x 1/4; per-sample sd ~1.06, so 5 sigma ~ 0.04
                assert!((v - 1.5).abs() < 0.05, "{v}");
            }
            let marg = estimate_marginals(&u, None, None, &cfg).unwrap();
            assert!(marg.probs().iter().all(|p| (p - 0.5).abs() < 0.02));
        }
    }
}
