//! Joining two separately learned shape models into one joint model.
//!
//! Each component's posterior statistics are re-indexed into the joint
//! label set (part labels kept apart, backgrounds merged), mixed with a
//! small uniform floor, and the joint potentials are learned so that the
//! joint prior reproduces the mixture.

use serde::{Deserialize, Serialize};

use crate::appearance::AppearanceModel;
use crate::error::{Error, Result};
use crate::grid::{
    normalize_potentials, GridDomain, GrfModel, LabelSet, NeighborhoodStructure, Offset, OffsetTable, PotentialTable,
    StatisticsKind, SufficientStatistics,
};
use crate::learning::{learn_from_statistics, LearningOutcome, LearningSchedule};
use crate::sampler::{estimate_statistics_for, SamplerConfig};

/// Where a component's labels land in the joint label set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentMap {
    /// Number of labels of the component model.
    pub num_labels: usize,
    /// The component's background label `b^i`.
    pub background: u8,
    /// `joint[k]` is the joint label of component label `k`.
    pub joint: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapping {
    pub joint_labels: usize,
    pub background: u8,
    pub components: Vec<ComponentMap>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LabelClass {
    Background,
    Part(usize),
}

impl LabelMapping {
    /// Joint background `0`, then the parts of each component in label order.
    pub fn disjoint(components: &[(usize, u8)]) -> Result<Self> {
        let mut next = 1u16;
        let mut maps = Vec::new();
        for &(k, b) in components {
            if b as usize >= k {
                return Err(Error::MappingMismatch(format!("background {b} outside {k} labels")));
            }
            let joint = (0..k)
                .map(|l| {
                    if l == b as usize {
                        0
                    } else {
                        next += 1;
                        (next - 1) as u8
                    }
                })
                .collect();
            maps.push(ComponentMap { num_labels: k, background: b, joint });
        }
        Self::new(next as usize, 0, maps)
    }

    pub fn new(joint_labels: usize, background: u8, components: Vec<ComponentMap>) -> Result<Self> {
        LabelSet::new(joint_labels)?;
        let expected: usize = 1 + components.iter().map(|c| c.num_labels - 1).sum::<usize>();
        if expected != joint_labels {
            return Err(Error::MappingMismatch(format!("joint label count {joint_labels}, components need {expected}")));
        }
        let mut used = vec![false; joint_labels];
        for c in &components {
            if c.joint.len() != c.num_labels || c.background as usize >= c.num_labels {
                return Err(Error::MappingMismatch("component map has the wrong size".into()));
            }
            for (k, &j) in c.joint.iter().enumerate() {
                if k == c.background as usize {
                    if j != background {
                        return Err(Error::MappingMismatch("component background must map to the joint background".into()));
                    }
                    continue;
                }
                if j as usize >= joint_labels || j == background || used[j as usize] {
                    return Err(Error::MappingMismatch(format!("joint label {j} is reused or invalid")));
                }
                used[j as usize] = true;
            }
        }
        Ok(LabelMapping { joint_labels, background, components })
    }

    fn classes(&self) -> Vec<LabelClass> {
        let mut out = vec![LabelClass::Background; self.joint_labels];
        for (i, c) in self.components.iter().enumerate() {
            for (k, &j) in c.joint.iter().enumerate() {
                if k != c.background as usize {
                    out[j as usize] = LabelClass::Part(i);
                }
            }
        }
        out
    }

    /// Component index owning each joint label (`None` for the background).
    pub fn owner(&self, joint: u8) -> Option<usize> {
        match self.classes()[joint as usize] {
            LabelClass::Background => None,
            LabelClass::Part(i) => Some(i),
        }
    }

    /// Joint label of component label `k` in component `i`.
    pub fn to_joint(&self, i: usize, k: u8) -> u8 {
        self.components[i].joint[k as usize]
    }
}

/// Re-indexes component `i`'s statistics over the joint label set; entries
/// involving labels of other components are zero.
pub fn extend_statistics(stats: &SufficientStatistics, mapping: &LabelMapping, i: usize) -> Result<SufficientStatistics> {
    let comp = mapping
        .components
        .get(i)
        .ok_or_else(|| Error::MappingMismatch(format!("no component {i}")))?;
    if stats.num_labels != comp.num_labels {
        return Err(Error::MappingMismatch(format!(
            "statistics over {} labels, component {i} has {}",
            stats.num_labels, comp.num_labels
        )));
    }
    let n = mapping.joint_labels;
    let k = comp.num_labels;
    let mut unary = vec![0.0; n];
    for (l, &v) in stats.unary.iter().enumerate() {
        unary[comp.joint[l] as usize] = v;
    }
    let pairwise = stats
        .pairwise
        .iter()
        .map(|t| {
            let mut values = vec![0.0; n * n];
            for a in 0..k {
                for b in 0..k {
                    values[comp.joint[a] as usize * n + comp.joint[b] as usize] = t.values[a * k + b];
                }
            }
            OffsetTable { offset: t.offset, values }
        })
        .collect();
    Ok(SufficientStatistics { kind: stats.kind, num_labels: n, unary, pairwise })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
}

impl MixtureWeights {
    pub fn new(w0: f64, w1: f64, w2: f64) -> Result<Self> {
        if !(w0 > 0.0 && w1 > 0.0 && w2 > 0.0) {
            return Err(Error::InvalidConfig("mixture weights must be positive".into()));
        }
        Ok(MixtureWeights { w0, w1, w2 })
    }

    /// `w1 = w2 = (1 - eps) / 2`, `w0 = eps / K^2` with `eps = 0.02`.
    pub fn default_for(joint_labels: usize) -> Self {
        let eps = 0.02;
        MixtureWeights { w0: eps / (joint_labels * joint_labels) as f64, w1: (1.0 - eps) / 2.0, w2: (1.0 - eps) / 2.0 }
    }

    /// A warning when the floor is not small against the component weights.
    pub fn regime_warning(&self) -> Option<String> {
        (self.w0 >= self.w1.min(self.w2) / 10.0)
            .then(|| format!("w0 = {} is not much smaller than w1 = {}, w2 = {}", self.w0, self.w1, self.w2))
    }
}

fn mix_entry(classes: &[LabelClass], labels: &[usize], e1: f64, e2: f64, w: &MixtureWeights) -> f64 {
    let mut owner = None;
    for &l in labels {
        if let LabelClass::Part(i) = classes[l] {
            match owner {
                None => owner = Some(i),
                Some(o) if o != i => return w.w0,
                _ => {}
            }
        }
    }
    match owner {
        None => w.w1 * e1 + w.w2 * e2 + w.w0,
        Some(0) => w.w1 * e1 + w.w0,
        Some(_) => w.w2 * e2 + w.w0,
    }
}

/// The weighted mixture before per-offset renormalisation.
pub fn mix_statistics_raw(
    ext1: &SufficientStatistics,
    ext2: &SufficientStatistics,
    w: &MixtureWeights,
    mapping: &LabelMapping,
) -> Result<SufficientStatistics> {
    let n = mapping.joint_labels;
    if ext1.num_labels != n || ext2.num_labels != n {
        return Err(Error::IncompatibleIndexing("statistics are not over the joint label set".into()));
    }
    if mapping.components.len() != 2 {
        return Err(Error::IncompatibleIndexing("mixing needs exactly two components".into()));
    }
    let classes = mapping.classes();
    let ext1 = ext1.normalized();
    let ext2 = ext2.normalized();
    let unary = (0..n).map(|k| mix_entry(&classes, &[k], ext1.unary[k], ext2.unary[k], w)).collect();
    let mut pairwise = Vec::new();
    for t in &ext1.pairwise {
        let other = ext2
            .table(t.offset)
            .ok_or_else(|| Error::IncompatibleIndexing(format!("second statistics lack offset {}", t.offset)))?;
        let values = (0..n * n)
            .map(|i| mix_entry(&classes, &[i / n, i % n], t.values[i], other[i], w))
            .collect();
        pairwise.push(OffsetTable { offset: t.offset, values });
    }
    if ext2.pairwise.len() != ext1.pairwise.len() {
        return Err(Error::IncompatibleIndexing("statistics cover different offsets".into()));
    }
    Ok(SufficientStatistics { kind: StatisticsKind::Frequencies, num_labels: n, unary, pairwise })
}

/// Mixture of two extended statistics plus a uniform floor `w0`, each
/// offset renormalised to sum to one.
pub fn mix_statistics(
    ext1: &SufficientStatistics,
    ext2: &SufficientStatistics,
    w: &MixtureWeights,
    mapping: &LabelMapping,
) -> Result<SufficientStatistics> {
    Ok(mix_statistics_raw(ext1, ext2, w, mapping)?.normalized())
}

/// A learned component model together with its posterior statistics and
/// background label.
#[derive(Clone, Debug)]
pub struct Component {
    pub model: GrfModel,
    pub statistics: SufficientStatistics,
    pub background: u8,
}

#[derive(Clone, Debug)]
pub struct Composition {
    pub mapping: LabelMapping,
    pub target: SufficientStatistics,
    pub learned: LearningOutcome,
}

/// Statistics of `c` over `offsets`, estimating missing ones from its prior.
fn complete_statistics(c: &Component, offsets: &[Offset], sampler: &SamplerConfig) -> Result<SufficientStatistics> {
    let missing: Vec<Offset> = offsets.iter().copied().filter(|&a| c.statistics.table(a).is_none()).collect();
    let own = c.statistics.normalized();
    if missing.is_empty() {
        return own.select(offsets);
    }
    let extra: Vec<Offset> = missing.iter().copied().filter(|&a| !c.model.structure.contains(a)).collect();
    let prior = estimate_statistics_for(&c.model, None, None, sampler, &extra)?.normalized();
    let mut pairwise = Vec::new();
    for &a in offsets.iter().filter(|a| !a.is_zero()) {
        let values = own.table(a).or_else(|| prior.table(a)).expect("estimated").to_vec();
        pairwise.push(OffsetTable { offset: a, values });
    }
    Ok(SufficientStatistics { kind: StatisticsKind::Frequencies, num_labels: own.num_labels, unary: own.unary, pairwise })
}

/// Component potentials for offset `a`, transposed when stored under `-a`.
fn oriented(model: &GrfModel, a: Offset) -> Option<Vec<f64>> {
    let k = model.num_labels();
    if let Some(t) = model.potentials.table(a) {
        return Some(t.to_vec());
    }
    let t = model.potentials.table(a.neg())?;
    Some((0..k * k).map(|i| t[(i % k) * k + i / k]).collect())
}

/// Warm start for joint learning: each component's potentials on its own
/// block, the two background values averaged, and every cross-class pair set
/// to the lowest within-class value of its offset, since the mixed target
/// gives both the same floor.
fn embed_potentials(models: &[&GrfModel; 2], mapping: &LabelMapping, structure: &NeighborhoodStructure) -> PotentialTable {
    let k = mapping.joint_labels;
    let mut u = PotentialTable::zeros(k, structure);
    let b = mapping.background as usize;
    for (m, comp) in models.iter().zip(&mapping.components) {
        for (i, &j) in comp.joint.iter().enumerate() {
            let share = if j as usize == b { 0.5 } else { 1.0 };
            u.unary[j as usize] += share * m.potentials.unary[i];
        }
    }
    for t in &mut u.pairwise {
        let mut set = vec![false; k * k];
        for (m, comp) in models.iter().zip(&mapping.components) {
            let Some(src) = oriented(m, t.offset) else { continue };
            let kc = comp.num_labels;
            for (i, &ji) in comp.joint.iter().enumerate() {
                for (i2, &ji2) in comp.joint.iter().enumerate() {
                    let at = ji as usize * k + ji2 as usize;
                    let share = if ji as usize == b && ji2 as usize == b { 0.5 } else { 1.0 };
                    t.values[at] += share * src[i * kc + i2];
                    set[at] = true;
                }
            }
        }
        let floor = t.values.iter().zip(&set).filter(|(_, &s)| s).map(|(v, _)| *v).fold(0.0, f64::min);
        for a in 0..k {
            for a2 in 0..k {
                if matches!((mapping.owner(a as u8), mapping.owner(a2 as u8)), (Some(x), Some(y)) if x != y) {
                    t.values[a * k + a2] = floor;
                }
            }
        }
    }
    normalize_potentials(&u)
}

/// Two-stage composition: mix the components' statistics over the joint
/// label set, then learn joint potentials on `domain` from the mixture.
pub fn compose_models(
    first: &Component,
    second: &Component,
    weights: &MixtureWeights,
    domain: GridDomain,
    schedule: &LearningSchedule,
    sampler: &SamplerConfig,
) -> Result<Composition> {
    let mut offsets: Vec<Offset> = first.model.structure.pairwise().to_vec();
    for &a in second.model.structure.pairwise() {
        if !offsets.contains(&a) && !offsets.contains(&a.neg()) {
            offsets.push(a);
        }
    }
    if let Some(a) = offsets.iter().find(|&&a| domain.edge_count(a) == 0) {
        return Err(Error::IncompatibleDomains(format!("offset {a} does not fit in the joint domain")));
    }
    let structure = NeighborhoodStructure::new(offsets.iter().copied())?;
    let mapping = LabelMapping::disjoint(&[
        (first.model.num_labels(), first.background),
        (second.model.num_labels(), second.background),
    ])?;
    // statistics stored under -a are transposed onto a
    let s1 = complete_statistics(first, structure.offsets(), sampler)?;
    let s2 = complete_statistics(second, structure.offsets(), sampler)?;
    let ext1 = extend_statistics(&s1, &mapping, 0)?;
    let ext2 = extend_statistics(&s2, &mapping, 1)?;
    let target = mix_statistics(&ext1, &ext2, weights, &mapping)?;
    let start = GrfModel::build(
        domain,
        LabelSet::new(mapping.joint_labels)?,
        structure.clone(),
        embed_potentials(&[&first.model, &second.model], &mapping, &structure),
    )?;
    let learned = learn_from_statistics(&start, &target, schedule)?;
    Ok(Composition { mapping, target, learned })
}

/// Joint appearance: each part keeps its component mixture; the background
/// pools both component backgrounds with halved weights.
pub fn joint_appearance(a1: &AppearanceModel, a2: &AppearanceModel, mapping: &LabelMapping) -> Result<AppearanceModel> {
    if a1.channels != a2.channels {
        return Err(Error::ChannelMismatch { expected: a1.channels, found: a2.channels });
    }
    let mut mixtures = vec![Vec::new(); mapping.joint_labels];
    for (i, (app, comp)) in [a1, a2].into_iter().zip(&mapping.components).enumerate() {
        if app.num_labels() != comp.num_labels {
            return Err(Error::MappingMismatch(format!("appearance {i} has {} labels", app.num_labels())));
        }
        for (k, &j) in comp.joint.iter().enumerate() {
            if k == comp.background as usize {
                mixtures[j as usize].extend(app.mixtures[k].iter().cloned().map(|mut g| {
                    g.weight *= 0.5;
                    g
                }));
            } else {
                mixtures[j as usize] = app.mixtures[k].clone();
            }
        }
    }
    AppearanceModel::new(a1.channels, mixtures, a1.min_variance.min(a2.min_variance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn stats(k: usize, offset: Offset, table: Vec<f64>) -> SufficientStatistics {
        let unary = (0..k).map(|i| i as f64 + 1.0).collect();
        SufficientStatistics::new(StatisticsKind::Frequencies, k, unary, vec![OffsetTable { offset, values: table }]).unwrap()
    }

    #[test]
    fn disjoint_mapping_layout() {
        let m = LabelMapping::disjoint(&[(3, 0), (4, 2)]).unwrap();
        assert_eq!(m.joint_labels, 6);
        assert_eq!(m.components[0].joint, vec![0, 1, 2]);
        assert_eq!(m.components[1].joint, vec![3, 4, 0, 5]);
        assert_eq!(m.owner(4), Some(1));
        assert_eq!(m.owner(0), None);
        assert!(LabelMapping::new(5, 0, m.components.clone()).is_err());
    }

    #[test]
    fn extension_preserves_totals_and_zeroes_foreign_labels() {
        let a = Offset::new(1, 0);
        let m = LabelMapping::disjoint(&[(2, 0), (3, 0)]).unwrap();
        let s = stats(3, a, (0..9).map(|v| v as f64).collect());
        let e = extend_statistics(&s, &m, 1).unwrap();
        assert_eq!(e.num_labels, 4);
        let t = e.table(a).unwrap();
        assert_abs_diff_eq!(t.iter().sum::<f64>(), 36.0);
        // joint label 1 belongs to component 0
        for j in 0..4 {
            assert_eq!(t[4 + j], 0.0);
            assert_eq!(t[j * 4 + 1], 0.0);
        }
        let single = LabelMapping::disjoint(&[(3, 0)]).unwrap();
        assert_eq!(extend_statistics(&s, &single, 0).unwrap(), s);
        assert!(matches!(extend_statistics(&s, &m, 0), Err(Error::MappingMismatch(_))));
    }

    #[test]
    fn mixture_case_table() {
        let a = Offset::new(0, 1);
        let m = LabelMapping::disjoint(&[(2, 0), (2, 0)]).unwrap();
        // backgrounds carry 0.5 and 0.6 of their component's pair mass
        let s1 = stats(2, a, vec![0.5, 0.2, 0.2, 0.1]);
        let s2 = stats(2, a, vec![0.6, 0.1, 0.1, 0.2]);
        let e1 = extend_statistics(&s1, &m, 0).unwrap();
        let e2 = extend_statistics(&s2, &m, 1).unwrap();
        let w = MixtureWeights::new(0.001, 0.45, 0.45).unwrap();
        let raw = mix_statistics_raw(&e1, &e2, &w, &m).unwrap();
        let t = raw.table(a).unwrap();
        assert_abs_diff_eq!(t[0], 0.45 * 0.5 + 0.45 * 0.6 + 0.001, epsilon = 1e-15);
        assert_abs_diff_eq!(t[0], 0.496, epsilon = 1e-12);
        // labels 1 and 2 belong to different components
        assert_eq!(t[3 + 2], 0.001);
        assert_eq!(t[2 * 3 + 1], 0.001);
        assert_abs_diff_eq!(t[1], 0.45 * 0.2 + 0.001, epsilon = 1e-15);

        let mixed = mix_statistics(&e1, &e2, &w, &m).unwrap();
        let t = mixed.table(a).unwrap();
        assert_abs_diff_eq!(t.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(t.iter().all(|&v| v > 0.0));
        assert_eq!(t[5], t[7]);
        assert!(w.regime_warning().is_none());
        assert!(MixtureWeights::new(0.2, 0.4, 0.4).unwrap().regime_warning().is_some());
    }

    #[test]
    fn mixture_symmetry_under_swap() {
        let a = Offset::new(1, 1);
        let s1 = stats(3, a, vec![0.3, 0.1, 0.05, 0.1, 0.2, 0.05, 0.05, 0.05, 0.1]);
        let s2 = stats(2, a, vec![0.4, 0.2, 0.3, 0.1]);
        let w = MixtureWeights::new(0.002, 0.5, 0.4).unwrap();
        let m12 = LabelMapping::disjoint(&[(3, 0), (2, 0)]).unwrap();
        let m21 = LabelMapping::disjoint(&[(2, 0), (3, 0)]).unwrap();
        let x = mix_statistics(&extend_statistics(&s1, &m12, 0).unwrap(), &extend_statistics(&s2, &m12, 1).unwrap(), &w, &m12)
            .unwrap();
        let ws = MixtureWeights::new(0.002, 0.4, 0.5).unwrap();
        let y = mix_statistics(&extend_statistics(&s2, &m21, 0).unwrap(), &extend_statistics(&s1, &m21, 1).unwrap(), &ws, &m21)
            .unwrap();
        // joint order 12: [b, p1a, p1b, p2a]; order 21: [b, p2a, p1a, p1b]
        let perm = [0usize, 2, 3, 1];
        let tx = x.table(a).unwrap();
        let ty = y.table(a).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(tx[i * 4 + j], ty[perm[i] * 4 + perm[j]], epsilon = 1e-15);
            }
        }
    }
}
