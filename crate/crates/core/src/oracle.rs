//! Exact inference by enumerating every labelling of a tiny grid.
//!
//! Everything here is computed from [`GrfModel::energy`] and the appearance
//! likelihood field, independently of the sampler's compiled conditionals,
//! so it can serve as ground truth for the stochastic routines.

use std::collections::BTreeSet;

use crate::appearance::{AppearanceModel, LikelihoodField};
use crate::error::{Error, Result};
use crate::evidence::Evidence;
use crate::grid::{
    count_offsets, GridDomain, GrfModel, Labelling, NeighborhoodStructure, StatisticsKind, SufficientStatistics,
};

/// Default enumeration cap: `2^24` labellings.
pub const DEFAULT_CAP: u64 = 1 << 24;

/// Per-node label distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalField {
    domain: GridDomain,
    num_labels: usize,
    probs: Vec<f64>,
}

impl MarginalField {
    pub fn new(domain: GridDomain, num_labels: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != domain.nodes() * num_labels {
            return Err(Error::DimensionMismatch("marginal table size".into()));
        }
        for (t, p) in probs.chunks_exact(num_labels).enumerate() {
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-9 || p.iter().any(|v| !(0.0..=1.0 + 1e-12).contains(v)) {
                return Err(Error::InvalidConfig(format!("marginals of node {t} do not form a distribution")));
            }
        }
        Ok(MarginalField { domain, num_labels, probs })
    }

    pub fn domain(&self) -> GridDomain {
        self.domain
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn at(&self, t: usize) -> &[f64] {
        &self.probs[t * self.num_labels..(t + 1) * self.num_labels]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn max_abs_diff(&self, other: &MarginalField) -> f64 {
        self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Enumerates the labellings consistent with the clamps, calling `visit`
/// with each labelling and its unnormalised log-weight.
struct Enumerator<'a> {
    model: &'a GrfModel,
    field: Option<LikelihoodField>,
    clamps: Vec<Option<u8>>,
}

impl<'a> Enumerator<'a> {
    fn new(
        model: &'a GrfModel,
        evidence: Option<&Evidence>,
        appearance: Option<&AppearanceModel>,
        cap: u64,
    ) -> Result<Self> {
        let n = model.domain.nodes();
        let mut clamps = vec![None; n];
        let mut field = None;
        if let Some(ev) = evidence {
            ev.validate(model.domain, &model.labels)?;
            if let Some(c) = &ev.clamps {
                clamps = c.cells().to_vec();
            }
            if let Some(img) = &ev.image {
                let app = appearance.ok_or(Error::MissingAppearance)?;
                field = Some(app.likelihood_field(img)?);
            }
        }
        let free = clamps.iter().filter(|c| c.is_none()).count();
        let configurations = (model.num_labels() as f64).powi(free as i32);
        if configurations > cap as f64 {
            return Err(Error::DomainTooLarge { configurations, cap });
        }
        Ok(Enumerator { model, field, clamps })
    }

    fn for_each(&self, mut visit: impl FnMut(&Labelling, f64)) -> Result<()> {
        let k = self.model.num_labels() as u8;
        let free: Vec<usize> = (0..self.clamps.len()).filter(|&t| self.clamps[t].is_none()).collect();
        let data: Vec<u8> = self.clamps.iter().map(|c| c.unwrap_or(0)).collect();
        let mut y = Labelling::new(self.model.domain, data)?;
        loop {
            let mut lw = self.model.energy(&y)?;
            if let Some(f) = &self.field {
                lw += f.log_likelihood(&y);
            }
            visit(&y, lw);
            // odometer over the free nodes
            let slots = y.as_mut_slice();
            let mut i = 0;
            loop {
                if i == free.len() {
                    return Ok(());
                }
                let t = free[i];
                slots[t] += 1;
                if slots[t] < k {
                    break;
                }
                slots[t] = 0;
                i += 1;
            }
        }
    }

    fn max_log_weight(&self) -> Result<f64> {
        let mut m = f64::NEG_INFINITY;
        self.for_each(|_, lw| m = m.max(lw))?;
        Ok(m)
    }

    fn log_partition(&self) -> Result<f64> {
        let m = self.max_log_weight()?;
        let mut s = 0.0;
        self.for_each(|_, lw| s += (lw - m).exp())?;
        Ok(m + s.ln())
    }
}

/// `log Z` of the prior.
pub fn partition_function(model: &GrfModel) -> Result<f64> {
    partition_function_capped(model, DEFAULT_CAP)
}

pub fn partition_function_capped(model: &GrfModel, cap: u64) -> Result<f64> {
    Enumerator::new(model, None, None, cap)?.log_partition()
}

/// Exact node marginals of the prior, or of the posterior given `evidence`.
pub fn exact_marginals(
    model: &GrfModel,
    evidence: Option<&Evidence>,
    appearance: Option<&AppearanceModel>,
) -> Result<MarginalField> {
    let e = Enumerator::new(model, evidence, appearance, DEFAULT_CAP)?;
    let k = model.num_labels();
    let m = e.max_log_weight()?;
    let mut acc = vec![0.0; model.domain.nodes() * k];
    let mut total = 0.0;
    e.for_each(|y, lw| {
        let w = (lw - m).exp();
        total += w;
        for (t, &l) in y.as_slice().iter().enumerate() {
            acc[t * k + l as usize] += w;
        }
    })?;
    acc.iter_mut().for_each(|v| *v /= total);
    MarginalField::new(model.domain, k, acc)
}

/// Exact `E[Φ]` over the model's offsets under the prior or posterior.
pub fn exact_statistics_expectation(
    model: &GrfModel,
    evidence: Option<&Evidence>,
    appearance: Option<&AppearanceModel>,
) -> Result<SufficientStatistics> {
    let e = Enumerator::new(model, evidence, appearance, DEFAULT_CAP)?;
    let k = model.num_labels();
    let offsets = model.structure.offsets();
    let m = e.max_log_weight()?;
    let mut acc = SufficientStatistics::zeros(StatisticsKind::Expectations, k, offsets);
    let mut total = 0.0;
    e.for_each(|y, lw| {
        let w = (lw - m).exp();
        total += w;
        acc.add_scaled(&count_offsets(y, offsets, k), w).expect("same offsets");
    })?;
    acc.scale(1.0 / total);
    Ok(acc)
}

/// `∂L/∂u = E_posterior[Φ] - E_prior[Φ]`.
pub fn exact_loglik_gradient(
    model: &GrfModel,
    evidence: &Evidence,
    appearance: Option<&AppearanceModel>,
) -> Result<SufficientStatistics> {
    let post = exact_statistics_expectation(model, Some(evidence), appearance)?;
    let prior = exact_statistics_expectation(model, None, None)?;
    post.difference(&prior)
}

/// Exact probability of every labelling, in enumeration order.
pub fn joint_distribution(model: &GrfModel) -> Result<Vec<(Labelling, f64)>> {
    let e = Enumerator::new(model, None, None, DEFAULT_CAP)?;
    let log_z = e.log_partition()?;
    let mut out = Vec::new();
    e.for_each(|y, lw| out.push((y.clone(), (lw - log_z).exp())))?;
    Ok(out)
}

/// True iff `max_y |p1(y) - p2(y)| <= tol`.
pub fn distributions_equal(m1: &GrfModel, m2: &GrfModel, tol: f64) -> Result<bool> {
    Ok(max_probability_gap(m1, m2)? <= tol)
}

pub fn max_probability_gap(m1: &GrfModel, m2: &GrfModel) -> Result<f64> {
    if m1.domain != m2.domain || m1.labels.count() != m2.labels.count() {
        return Err(Error::IncompatibleModels("models differ in domain or label set".into()));
    }
    let e1 = Enumerator::new(m1, None, None, DEFAULT_CAP)?;
    let e2 = Enumerator::new(m2, None, None, DEFAULT_CAP)?;
    let (z1, z2) = (e1.log_partition()?, e2.log_partition()?);
    let mut worst: f64 = 0.0;
    let mut err = None;
    e1.for_each(|y, lw1| match m2.energy(y) {
        Ok(lw2) => worst = worst.max(((lw1 - z1).exp() - (lw2 - z2).exp()).abs()),
        Err(e) => err = Some(e),
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(worst),
    }
}

/// `max |v(k1,k1') + v(k2,k2') - v(k1,k2') - v(k2,k1')|` over all label
/// quadruples; zero exactly when `v(k, k') = f(k) + g(k')`.
pub fn modularity_defect(v: &[f64], num_labels: usize) -> f64 {
    let k = num_labels;
    let mut worst: f64 = 0.0;
    for k1 in 0..k {
        for k2 in 0..k {
            for j1 in 0..k {
                for j2 in 0..k {
                    let d = v[k1 * k + j1] + v[k2 * k + j2] - v[k1 * k + j2] - v[k2 * k + j1];
                    worst = worst.max(d.abs());
                }
            }
        }
    }
    worst
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GaugeRank {
    pub rank: usize,
    /// `2|A| - 1`.
    pub dimension: usize,
    pub identifiable: bool,
}

/// Rank of the boundary-class vectors `z(t)`: `z_0 = 1`, `z_a(t) = [t+a ∈ D]`,
/// `z_{-a}(t) = [t-a ∈ D]` for each nonzero `a`. Full rank `2|A| - 1` means
/// equivalent potentials can only differ by constants.
pub fn gauge_rank(domain: GridDomain, structure: &NeighborhoodStructure) -> GaugeRank {
    let mut classes = BTreeSet::new();
    for t in 0..domain.nodes() {
        let (x, y) = domain.coords(t);
        let (x, y) = (x as i64, y as i64);
        let mut z = vec![1i128];
        for a in structure.pairwise() {
            z.push(domain.contains(x + a.dx as i64, y + a.dy as i64) as i128);
            z.push(domain.contains(x - a.dx as i64, y - a.dy as i64) as i128);
        }
        classes.insert(z);
    }
    let dimension = 2 * structure.len() - 1;
    let rank = integer_rank(classes.into_iter().collect());
    GaugeRank { rank, dimension, identifiable: rank == dimension }
}

/// Fraction-free Gaussian elimination; exact for small integer matrices.
fn integer_rank(mut rows: Vec<Vec<i128>>) -> usize {
    let cols = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows.len()).find(|&r| rows[r][c] != 0) else { continue };
        rows.swap(rank, p);
        let pivot = rows[rank].clone();
        for row in rows.iter_mut().skip(rank + 1) {
            let f = row[c];
            if f == 0 {
                continue;
            }
            for j in 0..cols {
                row[j] = row[j] * pivot[c] - pivot[j] * f;
            }
            let g = row.iter().fold(0i128, |g, &v| gcd(g, v.abs()));
            if g > 1 {
                row.iter_mut().for_each(|v| *v /= g);
            }
        }
        rank += 1;
    }
    rank
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
