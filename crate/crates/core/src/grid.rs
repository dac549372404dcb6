//! Grid domains, translation-invariant neighbourhood structures, Gibbs
//! potentials and the label-pair co-occurrence statistics they pair with.
//!
//! A node `t = (x, y)` has flat index `y * width + x`; `x` grows rightwards
//! and `y` downwards. An offset `a = (dx, dy)` links `t` to `t + a`, and the
//! edge class `E_a` keeps only edges whose both ends lie inside the grid.
//! Pairwise tables are row-major: `values[k * K + k2]` is the value for
//! label `k` at `t` and label `k2` at `t + a`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest label set representable by the byte-per-node labelling storage.
pub const MAX_LABELS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Offset {
    pub dx: i32,
    pub dy: i32,
}

impl Offset {
    pub const ZERO: Offset = Offset { dx: 0, dy: 0 };

    pub const fn new(dx: i32, dy: i32) -> Self {
        Offset { dx, dy }
    }

    pub fn is_zero(self) -> bool {
        self.dx == 0 && self.dy == 0
    }

    pub fn neg(self) -> Self {
        Offset::new(-self.dx, -self.dy)
    }

    /// The representative of `{a, -a}` used for candidate sets: `dy > 0`, or
    /// `dy == 0` and `dx > 0`.
    pub fn canonical(self) -> Self {
        if self.dy > 0 || (self.dy == 0 && self.dx >= 0) {
            self
        } else {
            self.neg()
        }
    }
}

// Lexicographic by (dy, dx); this is also the tie-break order for removals.
impl Ord for Offset {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.dy, self.dx).cmp(&(other.dy, other.dx))
    }
}

impl PartialOrd for Offset {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Offset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.dx, self.dy)
    }
}

/// The offset set `A`. The zero offset (unary terms) is always present and
/// always first; no offset appears together with its negative.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborhoodStructure {
    offsets: Vec<Offset>,
}

impl NeighborhoodStructure {
    /// Builds a structure from the given offsets. The zero offset is added if
    /// missing; the order of the nonzero offsets is kept.
    pub fn new<I: IntoIterator<Item = Offset>>(offsets: I) -> Result<Self> {
        let mut all = vec![Offset::ZERO];
        let mut saw_zero = false;
        for a in offsets {
            if a.is_zero() {
                if saw_zero {
                    return Err(Error::DuplicateOffset(a));
                }
                saw_zero = true;
                continue;
            }
            if all.contains(&a) {
                return Err(Error::DuplicateOffset(a));
            }
            if all.contains(&a.neg()) {
                return Err(Error::OppositeOffsetPresent(a));
            }
            all.push(a);
        }
        Ok(NeighborhoodStructure { offsets: all })
    }

    /// Unary-only structure `A = {0}`.
    pub fn unary() -> Self {
        NeighborhoodStructure { offsets: vec![Offset::ZERO] }
    }

    /// All offsets including the leading zero.
    pub fn offsets(&self) -> &[Offset] {
        &self.offsets
    }

    /// The nonzero offsets `A'`.
    pub fn pairwise(&self) -> &[Offset] {
        &self.offsets[1..]
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, a: Offset) -> bool {
        self.offsets.contains(&a)
    }

    /// True if `a` or `-a` is already an edge class of this structure.
    pub fn covers(&self, a: Offset) -> bool {
        self.contains(a) || self.contains(a.neg())
    }

    /// Index of `a` among the pairwise offsets.
    pub fn pairwise_index(&self, a: Offset) -> Option<usize> {
        self.pairwise().iter().position(|&b| b == a)
    }

    pub fn with_offset(&self, a: Offset) -> Result<Self> {
        Self::new(self.pairwise().iter().copied().chain(std::iter::once(a)))
    }

    pub fn without_offset(&self, a: Offset) -> Result<Self> {
        if a.is_zero() || !self.contains(a) {
            return Err(Error::UnknownOffset(a));
        }
        Self::new(self.pairwise().iter().copied().filter(|&b| b != a))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    count: usize,
    names: Option<Vec<String>>,
}

impl LabelSet {
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 || count > MAX_LABELS {
            return Err(Error::InvalidLabelCount(count));
        }
        Ok(LabelSet { count, names: None })
    }

    pub fn with_names(names: Vec<String>) -> Result<Self> {
        let mut set = Self::new(names.len())?;
        set.names = Some(names);
        Ok(set)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn check(&self, label: usize) -> Result<()> {
        if label < self.count {
            Ok(())
        } else {
            Err(Error::InvalidLabel { label, count: self.count })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDomain {
    pub width: usize,
    pub height: usize,
}

impl GridDomain {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DimensionMismatch(format!(
                "domain must be at least 1x1, got {width}x{height}"
            )));
        }
        Ok(GridDomain { width, height })
    }

    pub fn nodes(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coords(&self, t: usize) -> (usize, usize) {
        (t % self.width, t / self.width)
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// `|E_a|`, the number of edges of class `a` that fit inside the grid.
    pub fn edge_count(&self, a: Offset) -> usize {
        let w = self.width.saturating_sub(a.dx.unsigned_abs() as usize);
        let h = self.height.saturating_sub(a.dy.unsigned_abs() as usize);
        w * h
    }

    /// Range of `x` (resp. `y`) such that both `t` and `t + a` are in the grid.
    fn edge_ranges(&self, a: Offset) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let span = |len: usize, d: i32| {
            let lo = (-(d as i64)).max(0) as usize;
            let hi = (len as i64 - d as i64).min(len as i64).max(0) as usize;
            lo.min(hi)..hi
        };
        (span(self.width, a.dx), span(self.height, a.dy))
    }
}

pub fn edge_count(domain: GridDomain, a: Offset) -> usize {
    domain.edge_count(a)
}

/// A full label assignment `y: D -> K`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labelling {
    domain: GridDomain,
    data: Vec<u8>,
}

impl Labelling {
    pub fn new(domain: GridDomain, data: Vec<u8>) -> Result<Self> {
        if data.len() != domain.nodes() {
            return Err(Error::DimensionMismatch(format!(
                "labelling has {} entries, domain {}x{} has {}",
                data.len(),
                domain.width,
                domain.height,
                domain.nodes()
            )));
        }
        Ok(Labelling { domain, data })
    }

    pub fn filled(domain: GridDomain, label: u8) -> Self {
        Labelling { domain, data: vec![label; domain.nodes()] }
    }

    pub fn from_fn(domain: GridDomain, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(domain.nodes());
        for y in 0..domain.height {
            for x in 0..domain.width {
                data.push(f(x, y));
            }
        }
        Labelling { domain, data }
    }

    pub fn domain(&self) -> GridDomain {
        self.domain
    }

    pub fn width(&self) -> usize {
        self.domain.width
    }

    pub fn height(&self) -> usize {
        self.domain.height
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[self.domain.index(x, y)]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        let t = self.domain.index(x, y);
        self.data[t] = label;
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.data
    }

    pub fn check_labels(&self, labels: &LabelSet) -> Result<()> {
        match self.data.iter().find(|&&k| k as usize >= labels.count()) {
            Some(&k) => Err(Error::InvalidLabel { label: k as usize, count: labels.count() }),
            None => Ok(()),
        }
    }
}

/// A per-offset table: `K` entries for the zero offset, `K * K` otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetTable {
    pub offset: Offset,
    pub values: Vec<f64>,
}

impl OffsetTable {
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn check_table_sizes(num_labels: usize, unary: &[f64], pairwise: &[OffsetTable]) -> Result<()> {
    if unary.len() != num_labels {
        return Err(Error::DimensionMismatch(format!(
            "unary table has {} entries, expected {num_labels}",
            unary.len()
        )));
    }
    for t in pairwise {
        if t.offset.is_zero() {
            return Err(Error::DimensionMismatch("pairwise table for the zero offset".into()));
        }
        if t.values.len() != num_labels * num_labels {
            return Err(Error::DimensionMismatch(format!(
                "pairwise table for {} has {} entries, expected {}",
                t.offset,
                t.values.len(),
                num_labels * num_labels
            )));
        }
    }
    Ok(())
}

fn centred(values: &[f64]) -> Vec<f64> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| v - mean).collect()
}

/// Gibbs potentials `u_0(k)` and `u_a(k, k')` for each nonzero offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialTable {
    pub num_labels: usize,
    pub unary: Vec<f64>,
    pub pairwise: Vec<OffsetTable>,
}

impl PotentialTable {
    pub fn new(num_labels: usize, unary: Vec<f64>, pairwise: Vec<OffsetTable>) -> Result<Self> {
        check_table_sizes(num_labels, &unary, &pairwise)?;
        Ok(PotentialTable { num_labels, unary, pairwise })
    }

    pub fn zeros(num_labels: usize, structure: &NeighborhoodStructure) -> Self {
        PotentialTable {
            num_labels,
            unary: vec![0.0; num_labels],
            pairwise: structure
                .pairwise()
                .iter()
                .map(|&offset| OffsetTable { offset, values: vec![0.0; num_labels * num_labels] })
                .collect(),
        }
    }

    pub fn table(&self, a: Offset) -> Option<&[f64]> {
        if a.is_zero() {
            return Some(&self.unary);
        }
        self.pairwise.iter().find(|t| t.offset == a).map(|t| t.values.as_slice())
    }

    pub fn pair(&self, a: Offset, k: usize, k2: usize) -> Option<f64> {
        self.table(a).map(|v| v[k * self.num_labels + k2])
    }

    pub fn is_canonical(&self, tol: f64) -> bool {
        self.unary.iter().sum::<f64>().abs() <= tol
            && self.pairwise.iter().all(|t| t.sum().abs() <= tol)
    }

    /// Frobenius norm of each pairwise table after canonical normalisation.
    pub fn canonical_norms(&self) -> Vec<(Offset, f64)> {
        self.pairwise
            .iter()
            .map(|t| (t.offset, centred(&t.values).iter().map(|v| v * v).sum::<f64>().sqrt()))
            .collect()
    }

    pub fn max_abs_diff(&self, other: &PotentialTable) -> Option<f64> {
        if self.num_labels != other.num_labels || self.pairwise.len() != other.pairwise.len() {
            return None;
        }
        let mut worst = max_abs_diff(&self.unary, &other.unary);
        for t in &self.pairwise {
            let o = other.table(t.offset)?;
            worst = worst.max(max_abs_diff(&t.values, o));
        }
        Some(worst)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Canonical gauge: subtract the mean of every table so that each sums to zero.
pub fn normalize_potentials(potentials: &PotentialTable) -> PotentialTable {
    PotentialTable {
        num_labels: potentials.num_labels,
        unary: centred(&potentials.unary),
        pairwise: potentials
            .pairwise
            .iter()
            .map(|t| OffsetTable { offset: t.offset, values: centred(&t.values) })
            .collect(),
    }
}

/// Adds `c_a` to every entry of the table of offset `a`; offsets not listed
/// are left alone.
pub fn add_gauge_constants(
    potentials: &PotentialTable,
    constants: &[(Offset, f64)],
) -> Result<PotentialTable> {
    let mut out = potentials.clone();
    for &(a, c) in constants {
        let values = if a.is_zero() {
            &mut out.unary
        } else {
            match out.pairwise.iter_mut().find(|t| t.offset == a) {
                Some(t) => &mut t.values,
                None => return Err(Error::UnknownOffset(a)),
            }
        };
        values.iter_mut().for_each(|v| *v += c);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticsKind {
    /// Raw co-occurrence counts of one labelling.
    Counts,
    /// Expected counts (averages of counts over samples or an exact expectation).
    Expectations,
    /// Per-edge frequencies: counts divided by `|E_a|`.
    Frequencies,
    /// Difference of two statistics, e.g. a log-likelihood gradient.
    Difference,
}

/// Co-occurrence statistics `n_a(k, k')` per offset, plus label counts `n_0(k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SufficientStatistics {
    pub kind: StatisticsKind,
    pub num_labels: usize,
    pub unary: Vec<f64>,
    pub pairwise: Vec<OffsetTable>,
}

impl SufficientStatistics {
    pub fn new(
        kind: StatisticsKind,
        num_labels: usize,
        unary: Vec<f64>,
        pairwise: Vec<OffsetTable>,
    ) -> Result<Self> {
        check_table_sizes(num_labels, &unary, &pairwise)?;
        if kind != StatisticsKind::Difference
            && unary.iter().chain(pairwise.iter().flat_map(|t| &t.values)).any(|&v| v < 0.0)
        {
            return Err(Error::IncompatibleStatistics("negative entry in counts".into()));
        }
        Ok(SufficientStatistics { kind, num_labels, unary, pairwise })
    }

    pub fn zeros(kind: StatisticsKind, num_labels: usize, offsets: &[Offset]) -> Self {
        SufficientStatistics {
            kind,
            num_labels,
            unary: vec![0.0; num_labels],
            pairwise: offsets
                .iter()
                .filter(|a| !a.is_zero())
                .map(|&offset| OffsetTable { offset, values: vec![0.0; num_labels * num_labels] })
                .collect(),
        }
    }

    pub fn offsets(&self) -> Vec<Offset> {
        std::iter::once(Offset::ZERO).chain(self.pairwise.iter().map(|t| t.offset)).collect()
    }

    pub fn table(&self, a: Offset) -> Option<&[f64]> {
        if a.is_zero() {
            return Some(&self.unary);
        }
        self.pairwise.iter().find(|t| t.offset == a).map(|t| t.values.as_slice())
    }

    pub fn table_mut(&mut self, a: Offset) -> Option<&mut Vec<f64>> {
        if a.is_zero() {
            return Some(&mut self.unary);
        }
        self.pairwise.iter_mut().find(|t| t.offset == a).map(|t| &mut t.values)
    }

    fn tables_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        std::iter::once(&mut self.unary).chain(self.pairwise.iter_mut().map(|t| &mut t.values))
    }

    fn same_indexing(&self, other: &SufficientStatistics) -> Result<()> {
        if self.num_labels != other.num_labels
            || self.pairwise.len() != other.pairwise.len()
            || self.pairwise.iter().zip(&other.pairwise).any(|(a, b)| a.offset != b.offset)
        {
            return Err(Error::IncompatibleStatistics(
                "statistics are indexed by different offsets or label sets".into(),
            ));
        }
        Ok(())
    }

    /// `self += factor * other`, entrywise.
    pub fn add_scaled(&mut self, other: &SufficientStatistics, factor: f64) -> Result<()> {
        self.same_indexing(other)?;
        let others = std::iter::once(&other.unary).chain(other.pairwise.iter().map(|t| &t.values));
        for (mine, theirs) in self.tables_mut().zip(others) {
            mine.iter_mut().zip(theirs).for_each(|(m, t)| *m += factor * t);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for table in self.tables_mut() {
            table.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self - other`, flagged as a difference.
    pub fn difference(&self, other: &SufficientStatistics) -> Result<SufficientStatistics> {
        let mut out = self.clone();
        out.add_scaled(other, -1.0)?;
        out.kind = StatisticsKind::Difference;
        Ok(out)
    }

    /// Divides every table by its edge count on `domain` (node count for the
    /// unary table). Frequencies are returned unchanged.
    pub fn per_edge(&self, domain: GridDomain) -> SufficientStatistics {
        if self.kind == StatisticsKind::Frequencies {
            return self.clone();
        }
        let mut out = self.clone();
        for t in std::iter::once((Offset::ZERO, &mut out.unary))
            .chain(out.pairwise.iter_mut().map(|t| (t.offset, &mut t.values)))
        {
            let n = domain.edge_count(t.0).max(1) as f64;
            t.1.iter_mut().for_each(|v| *v /= n);
        }
        if out.kind != StatisticsKind::Difference {
            out.kind = StatisticsKind::Frequencies;
        }
        out
    }

    /// Inverse of [`per_edge`](Self::per_edge): scales frequencies up to expected counts.
    pub fn to_counts(&self, domain: GridDomain) -> SufficientStatistics {
        if self.kind != StatisticsKind::Frequencies {
            return self.clone();
        }
        let mut out = self.clone();
        for t in std::iter::once((Offset::ZERO, &mut out.unary))
            .chain(out.pairwise.iter_mut().map(|t| (t.offset, &mut t.values)))
        {
            let n = domain.edge_count(t.0) as f64;
            t.1.iter_mut().for_each(|v| *v *= n);
        }
        out.kind = StatisticsKind::Expectations;
        out
    }

    /// Each table rescaled to sum to one (the unary table included).
    pub fn normalized(&self) -> SufficientStatistics {
        let mut out = self.clone();
        for table in out.tables_mut() {
            let s: f64 = table.iter().sum();
            if s > 0.0 {
                table.iter_mut().for_each(|v| *v /= s);
            }
        }
        out.kind = StatisticsKind::Frequencies;
        out
    }

    pub fn max_abs(&self) -> f64 {
        std::iter::once(&self.unary)
            .chain(self.pairwise.iter().map(|t| &t.values))
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &SufficientStatistics) -> Result<f64> {
        self.same_indexing(other)?;
        let mut worst = max_abs_diff(&self.unary, &other.unary);
        for (a, b) in self.pairwise.iter().zip(&other.pairwise) {
            worst = worst.max(max_abs_diff(&a.values, &b.values));
        }
        Ok(worst)
    }

    /// Restricts (or reorders) the statistics to the given offsets.
    pub fn select(&self, offsets: &[Offset]) -> Result<SufficientStatistics> {
        let mut pairwise = Vec::new();
        for &a in offsets.iter().filter(|a| !a.is_zero()) {
            let values = self
                .table(a)
                .ok_or_else(|| Error::IncompatibleStatistics(format!("no statistics for offset {a}")))?;
            pairwise.push(OffsetTable { offset: a, values: values.to_vec() });
        }
        Ok(SufficientStatistics {
            kind: self.kind,
            num_labels: self.num_labels,
            unary: self.unary.clone(),
            pairwise,
        })
    }
}

/// `n_a(k, k'; y)` for a single offset (`n_0(k)` when `a` is zero).
pub fn count_pairs(y: &Labelling, a: Offset, num_labels: usize) -> Vec<f64> {
    let domain = y.domain();
    let labels = y.as_slice();
    if a.is_zero() {
        let mut out = vec![0.0; num_labels];
        for &k in labels {
            out[k as usize] += 1.0;
        }
        return out;
    }
    let mut counts = vec![0u32; num_labels * num_labels];
    let (xs, ys) = domain.edge_ranges(a);
    let shift = a.dy as isize * domain.width as isize + a.dx as isize;
    for yy in ys {
        let row = yy * domain.width;
        for t in row + xs.start..row + xs.end {
            let k = labels[t] as usize;
            let k2 = labels[(t as isize + shift) as usize] as usize;
            counts[k * num_labels + k2] += 1;
        }
    }
    counts.into_iter().map(f64::from).collect()
}

/// Co-occurrence counts of `y` for every offset of `offsets` (zero included or not).
pub fn count_offsets(y: &Labelling, offsets: &[Offset], num_labels: usize) -> SufficientStatistics {
    SufficientStatistics {
        kind: StatisticsKind::Counts,
        num_labels,
        unary: count_pairs(y, Offset::ZERO, num_labels),
        pairwise: offsets
            .iter()
            .filter(|a| !a.is_zero())
            .map(|&offset| OffsetTable { offset, values: count_pairs(y, offset, num_labels) })
            .collect(),
    }
}

pub fn count_statistics(
    domain: GridDomain,
    structure: &NeighborhoodStructure,
    labels: &LabelSet,
    y: &Labelling,
) -> Result<SufficientStatistics> {
    if y.domain() != domain {
        return Err(Error::DimensionMismatch(format!(
            "labelling is {}x{}, domain is {}x{}",
            y.width(),
            y.height(),
            domain.width,
            domain.height
        )));
    }
    y.check_labels(labels)?;
    Ok(count_offsets(y, structure.offsets(), labels.count()))
}

/// The prior `p(y) ∝ exp(energy(y))` on a fixed grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GrfModel {
    pub domain: GridDomain,
    pub labels: LabelSet,
    pub structure: NeighborhoodStructure,
    pub potentials: PotentialTable,
}

impl GrfModel {
    /// Validates and assembles a model. Potential tables may be given in any
    /// order; they are stored in structure order.
    pub fn build(
        domain: GridDomain,
        labels: LabelSet,
        structure: NeighborhoodStructure,
        potentials: PotentialTable,
    ) -> Result<Self> {
        let k = labels.count();
        if potentials.num_labels != k {
            return Err(Error::DimensionMismatch(format!(
                "potentials are over {} labels, label set has {k}",
                potentials.num_labels
            )));
        }
        check_table_sizes(k, &potentials.unary, &potentials.pairwise)?;
        if potentials.pairwise.len() != structure.pairwise().len() {
            return Err(Error::DimensionMismatch(format!(
                "{} pairwise tables for {} nonzero offsets",
                potentials.pairwise.len(),
                structure.pairwise().len()
            )));
        }
        let mut ordered = Vec::with_capacity(potentials.pairwise.len());
        for &a in structure.pairwise() {
            let mut found = potentials.pairwise.iter().filter(|t| t.offset == a);
            match (found.next(), found.next()) {
                (Some(t), None) => ordered.push(t.clone()),
                (Some(_), Some(_)) => return Err(Error::DuplicateOffset(a)),
                (None, _) => {
                    return Err(Error::DimensionMismatch(format!("no potential table for offset {a}")))
                }
            }
        }
        Ok(GrfModel {
            domain,
            labels,
            structure,
            potentials: PotentialTable { num_labels: k, unary: potentials.unary, pairwise: ordered },
        })
    }

    /// Model with all potentials zero (the uniform distribution).
    pub fn uniform(domain: GridDomain, labels: LabelSet, structure: NeighborhoodStructure) -> Self {
        let potentials = PotentialTable::zeros(labels.count(), &structure);
        GrfModel { domain, labels, structure, potentials }
    }

    pub fn num_labels(&self) -> usize {
        self.labels.count()
    }

    /// Same potentials on a different grid.
    pub fn with_domain(&self, domain: GridDomain) -> Self {
        GrfModel { domain, ..self.clone() }
    }

    pub fn with_potentials(&self, potentials: PotentialTable) -> Result<Self> {
        Self::build(self.domain, self.labels.clone(), self.structure.clone(), potentials)
    }

    pub fn normalized(&self) -> Self {
        GrfModel { potentials: normalize_potentials(&self.potentials), ..self.clone() }
    }

    pub fn check_labelling(&self, y: &Labelling) -> Result<()> {
        if y.domain() != self.domain {
            return Err(Error::DimensionMismatch(format!(
                "labelling is {}x{}, model domain is {}x{}",
                y.width(),
                y.height(),
                self.domain.width,
                self.domain.height
            )));
        }
        y.check_labels(&self.labels)
    }

    /// `Σ_t u_0(y_t) + Σ_a Σ_{(t,t')∈E_a} u_a(y_t, y_t')`.
    pub fn energy(&self, y: &Labelling) -> Result<f64> {
        self.check_labelling(y)?;
        let k = self.num_labels();
        let labels = y.as_slice();
        let mut e: f64 = labels.iter().map(|&l| self.potentials.unary[l as usize]).sum();
        for table in &self.potentials.pairwise {
            let (xs, ys) = self.domain.edge_ranges(table.offset);
            let shift = table.offset.dy as isize * self.domain.width as isize + table.offset.dx as isize;
            for yy in ys {
                let row = yy * self.domain.width;
                for t in row + xs.start..row + xs.end {
                    let a = labels[t] as usize;
                    let b = labels[(t as isize + shift) as usize] as usize;
                    e += table.values[a * k + b];
                }
            }
        }
        Ok(e)
    }

    pub fn statistics(&self, y: &Labelling) -> Result<SufficientStatistics> {
        count_statistics(self.domain, &self.structure, &self.labels, y)
    }
}

/// Inner product `<u, n>` of potentials and statistics over matching offsets.
pub fn inner_product(potentials: &PotentialTable, stats: &SufficientStatistics) -> Result<f64> {
    let mut s: f64 = potentials.unary.iter().zip(&stats.unary).map(|(u, n)| u * n).sum();
    for t in &potentials.pairwise {
        let n = stats.table(t.offset).ok_or(Error::UnknownOffset(t.offset))?;
        s += t.values.iter().zip(n).map(|(u, n)| u * n).sum::<f64>();
    }
    Ok(s)
}
