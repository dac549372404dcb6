//! Synthetic models and images: the blob model, Potts baselines, articulated
//! figures, two-class collages and disc-and-bar "cells" images.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::composition::LabelMapping;
use crate::error::{Error, Result};
use crate::evidence::Image;
use crate::grid::{GridDomain, GrfModel, LabelSet, Labelling, NeighborhoodStructure, Offset, OffsetTable, PotentialTable};
use crate::grid::normalize_potentials;
use crate::rng::stream_rng;

/// Short offsets of the blob model, a standard 8-neighbourhood.
///
/// The published list reads `(0,1), (0,-1), (1,1), (-1,1)`, which contains an
/// offset together with its negative; `(1,0)` is taken to be the intended
/// first entry.
pub const BLOB_SHORT: [Offset; 4] = [Offset::new(1, 0), Offset::new(0, 1), Offset::new(1, 1), Offset::new(-1, 1)];

/// Scale of the long offsets relative to the short ones.
pub const BLOB_SCALE: i32 = 5;

pub fn blob_offsets() -> Vec<Offset> {
    let long = BLOB_SHORT.iter().map(|a| Offset::new(a.dx * BLOB_SCALE, a.dy * BLOB_SCALE));
    BLOB_SHORT.iter().copied().chain(long).collect()
}

/// Two-label blob model: short edges `±alpha` (favouring equal labels),
/// long edges the negated short table plus `diag(beta, -beta)`.
pub fn gen_blob_model(alpha: f64, beta: f64, domain: GridDomain) -> Result<GrfModel> {
    let short = vec![alpha, -alpha, -alpha, alpha];
    let long = vec![-alpha + beta, alpha, alpha, -alpha - beta];
    let pairwise = blob_offsets()
        .into_iter()
        .enumerate()
        .map(|(i, offset)| OffsetTable { offset, values: if i < 4 { short.clone() } else { long.clone() } })
        .collect();
    let structure = NeighborhoodStructure::new(blob_offsets())?;
    GrfModel::build(domain, LabelSet::new(2)?, structure, PotentialTable::new(2, vec![0.0; 2], pairwise)?)
}

pub fn potts_offsets(neighbourhood: usize) -> Result<Vec<Offset>> {
    match neighbourhood {
        4 => Ok(BLOB_SHORT[..2].to_vec()),
        8 => Ok(BLOB_SHORT.to_vec()),
        n => Err(Error::InvalidConfig(format!("neighbourhood must be 4 or 8, got {n}"))),
    }
}

/// Potts model with strength `gamma[i]` on the diagonal of offset `i`'s
/// table (one shared strength when `gamma` has a single entry), in canonical
/// gauge.
pub fn potts_model(num_labels: usize, neighbourhood: usize, gamma: &[f64], domain: GridDomain) -> Result<GrfModel> {
    let offsets = potts_offsets(neighbourhood)?;
    if gamma.len() != 1 && gamma.len() != offsets.len() {
        return Err(Error::InvalidConfig(format!("{} strengths for {} offsets", gamma.len(), offsets.len())));
    }
    let k = num_labels;
    let pairwise = offsets
        .iter()
        .enumerate()
        .map(|(i, &offset)| {
            let g = gamma[i.min(gamma.len() - 1)];
            OffsetTable { offset, values: (0..k * k).map(|j| if j / k == j % k { g } else { 0.0 }).collect() }
        })
        .collect();
    let raw = PotentialTable::new(k, vec![0.0; k], pairwise)?;
    let structure = NeighborhoodStructure::new(offsets)?;
    GrfModel::build(domain, LabelSet::new(k)?, structure, normalize_potentials(&raw))
}

/// Baseline to be learned: 4- or 8-neighbourhood with zero tables. An
/// anisotropic baseline starts as a Potts model with per-direction strength
/// `gamma`; the isotropic one shares a single strength.
pub fn gen_potts_baseline(
    num_labels: usize,
    anisotropic: bool,
    neighbourhood: usize,
    gamma: f64,
    domain: GridDomain,
) -> Result<GrfModel> {
    let n = potts_offsets(neighbourhood)?.len();
    let strengths = if anisotropic { vec![gamma; n] } else { vec![gamma] };
    potts_model(num_labels, neighbourhood, &strengths, domain)
}

/// Per-direction Potts strength recovered from canonical tables: the mean
/// diagonal minus the mean off-diagonal entry.
pub fn potts_strengths(model: &GrfModel) -> Vec<(Offset, f64)> {
    let k = model.num_labels();
    model
        .potentials
        .pairwise
        .iter()
        .map(|t| {
            let diag: f64 = (0..k).map(|i| t.values[i * k + i]).sum::<f64>() / k as f64;
            let off = if k > 1 { (t.sum() - diag * k as f64) / (k * k - k) as f64 } else { 0.0 };
            (t.offset, diag - off)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureClass {
    Man,
    Cat,
}

/// `(x0, y0, x1, y1)` in layout units, half-open.
type Part = (usize, usize, usize, usize);

impl FigureClass {
    pub const MAX_PARTS: usize = 7;

    /// Layout width and height in units.
    fn extent(self) -> (usize, usize) {
        match self {
            FigureClass::Man => (10, 20),
            FigureClass::Cat => (20, 12),
        }
    }

    /// Part rectangles; part `i` is drawn with label `i + 1`, later parts on top.
    fn parts(self) -> [Part; 6] {
        match self {
            // head, torso, left arm, right arm, left leg, right leg
            FigureClass::Man => [(3, 0, 7, 4), (2, 4, 8, 12), (0, 4, 2, 11), (8, 4, 10, 11), (2, 12, 5, 20), (5, 12, 8, 20)],
            // head, body, front leg, back leg, tail, ears
            FigureClass::Cat => [(15, 2, 20, 6), (4, 5, 16, 9), (12, 9, 15, 12), (5, 9, 8, 12), (0, 3, 4, 5), (16, 0, 19, 2)],
        }
    }

    pub fn size(self, scale: usize) -> (usize, usize) {
        let (w, h) = self.extent();
        (w * scale, h * scale)
    }

    /// Noiseless label layout of one figure at `scale` pixels per unit.
    pub fn render(self, parts: usize, scale: usize) -> Result<Labelling> {
        check_parts(parts)?;
        if scale == 0 {
            return Err(Error::InvalidConfig("figure scale must be positive".into()));
        }
        let (w, h) = self.size(scale);
        let mut y = Labelling::filled(GridDomain::new(w, h)?, 0);
        for (i, &(x0, y0, x1, y1)) in self.parts().iter().take(parts - 1).enumerate() {
            for yy in y0 * scale..y1 * scale {
                for xx in x0 * scale..x1 * scale {
                    y.set(xx, yy, i as u8 + 1);
                }
            }
        }
        Ok(y)
    }
}

fn check_parts(parts: usize) -> Result<()> {
    if !(2..=FigureClass::MAX_PARTS).contains(&parts) {
        return Err(Error::InvalidConfig(format!("parts must be in 2..={}, got {parts}", FigureClass::MAX_PARTS)));
    }
    Ok(())
}

/// Grey level of component label `k` out of `parts`: background darkest,
/// parts evenly spaced above it.
pub fn part_grey(k: usize, parts: usize) -> f64 {
    0.1 + 0.8 * k as f64 / (parts - 1) as f64
}

/// Renders grey levels per label plus Gaussian noise, clipped to `[0, 1]`.
fn render_image(truth: &Labelling, grey: impl Fn(u8) -> f64, sigma: f64, seed: u64, stream: u64) -> Result<Image> {
    let mut rng = stream_rng(seed, stream);
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let data = truth
        .as_slice()
        .iter()
        .map(|&k| {
            let v = grey(k);
            if sigma > 0.0 {
                (v + noise.sample(&mut rng)).clamp(0.0, 1.0)
            } else {
                v
            }
        })
        .collect();
    Image::new(truth.domain(), 1, data)
}

/// An articulated figure of `parts` labels (background included) with a
/// margin of two units, grey levels from [`part_grey`] and noise `sigma`.
pub fn gen_composite_figure(
    class: FigureClass,
    parts: usize,
    scale: usize,
    sigma: f64,
    seed: u64,
) -> Result<(Image, Labelling)> {
    let fig = class.render(parts, scale)?;
    let m = 2 * scale;
    let d = GridDomain::new(fig.width() + 2 * m, fig.height() + 2 * m)?;
    let truth = Labelling::from_fn(d, |x, y| {
        if x >= m && y >= m && x < m + fig.width() && y < m + fig.height() {
            fig.get(x - m, y - m)
        } else {
            0
        }
    });
    let image = render_image(&truth, |k| part_grey(k as usize, parts), sigma, seed, 0)?;
    Ok((image, truth))
}

#[derive(Clone, Debug)]
pub struct Collage {
    pub image: Image,
    /// Ground truth over the joint label set of `mapping`.
    pub truth: Labelling,
    pub mapping: LabelMapping,
    /// Top-left corners of the placed figures, per class.
    pub placements: [Vec<(usize, usize)>; 2],
}

/// Non-overlapping random placements of `instances[i]` figures of
/// `classes[i]` on `domain`, at least one unit apart. Corresponding parts of
/// the two classes share their grey level, so shape is the only cue. Labels
/// follow the disjoint joint mapping with background `0`.
pub fn gen_collage(
    classes: [FigureClass; 2],
    instances: [usize; 2],
    parts: usize,
    scale: usize,
    domain: GridDomain,
    sigma: f64,
    seed: u64,
) -> Result<Collage> {
    check_parts(parts)?;
    if instances.contains(&0) {
        return Err(Error::InvalidConfig("each class needs at least one instance".into()));
    }
    let mapping = LabelMapping::disjoint(&[(parts, 0), (parts, 0)])?;
    let mut truth = Labelling::filled(domain, 0);
    let mut taken: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut placements = [Vec::new(), Vec::new()];
    let mut rng = stream_rng(seed, 1);
    let gap = scale;
    for (c, (&class, &count)) in classes.iter().zip(&instances).enumerate() {
        let fig = class.render(parts, scale)?;
        let (w, h) = (fig.width(), fig.height());
        for n in 0..count {
            if w > domain.width || h > domain.height {
                return Err(Error::PlacementFailure(format!("{class:?} figure larger than the domain")));
            }
            let spot = (0..10_000).find_map(|_| {
                let x = rng.random_range(0..=domain.width - w);
                let y = rng.random_range(0..=domain.height - h);
                let free = taken
                    .iter()
                    .all(|&(a, b, aw, bh)| x >= a + aw + gap || a >= x + w + gap || y >= b + bh + gap || b >= y + h + gap);
                free.then_some((x, y))
            });
            let (x, y) = spot.ok_or_else(|| Error::PlacementFailure(format!("{class:?} instance {n}")))?;
            taken.push((x, y, w, h));
            placements[c].push((x, y));
            for yy in 0..h {
                for xx in 0..w {
                    let k = fig.get(xx, yy);
                    if k != 0 {
                        truth.set(x + xx, y + yy, mapping.to_joint(c, k));
                    }
                }
            }
        }
    }
    // joint label -> component label -> shared grey level
    let mut grey = vec![part_grey(0, parts); mapping.joint_labels];
    for comp in &mapping.components {
        for (k, &j) in comp.joint.iter().enumerate() {
            grey[j as usize] = part_grey(k, parts);
        }
    }
    let image = render_image(&truth, |k| grey[k as usize], sigma, seed, 2)?;
    Ok(Collage { image, truth, mapping, placements })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellsConfig {
    pub discs: usize,
    pub radius: f64,
    pub bars: usize,
    pub bar_length: usize,
    pub bar_width: usize,
    /// Grey level of background and of discs and bars.
    pub background_grey: f64,
    pub object_grey: f64,
    pub sigma: f64,
}

impl Default for CellsConfig {
    fn default() -> Self {
        CellsConfig {
            discs: 10,
            radius: 6.0,
            bars: 24,
            bar_length: 28,
            bar_width: 2,
            background_grey: 0.3,
            object_grey: 0.7,
            sigma: 0.2,
        }
    }
}

/// Discs (label 1) and thin horizontal or vertical bars (label 0, same grey
/// as the discs) with Gaussian noise. Discs keep apart from each other and
/// every bar keeps a two-pixel gap from discs and from the other bars.
pub fn gen_cells(domain: GridDomain, config: &CellsConfig, seed: u64) -> Result<(Image, Labelling)> {
    const GAP: f64 = 2.0;
    let mut rng = stream_rng(seed, 3);
    let mut object = vec![false; domain.nodes()];
    let mut truth = Labelling::filled(domain, 0);
    let r = config.radius;
    let mut centres: Vec<(f64, f64)> = Vec::new();
    for n in 0..config.discs {
        let spot = (0..10_000).find_map(|_| {
            let cx = rng.random_range(r..=(domain.width as f64 - 1.0 - r).max(r));
            let cy = rng.random_range(r..=(domain.height as f64 - 1.0 - r).max(r));
            let free = centres.iter().all(|&(a, b)| (a - cx).hypot(b - cy) > 2.0 * r + GAP);
            free.then_some((cx, cy))
        });
        let (cx, cy) = spot.ok_or_else(|| Error::PlacementFailure(format!("disc {n}")))?;
        centres.push((cx, cy));
        for y in 0..domain.height {
            for x in 0..domain.width {
                if (x as f64 - cx).hypot(y as f64 - cy) <= r {
                    object[domain.index(x, y)] = true;
                    truth.set(x, y, 1);
                }
            }
        }
    }
    let mut bars = vec![false; domain.nodes()];
    let clear_of_discs = |x: usize, y: usize| centres.iter().all(|&(a, b)| (x as f64 - a).hypot(y as f64 - b) > r + GAP);
    for n in 0..config.bars {
        let spot = (0..10_000).find_map(|_| {
            let vertical = rng.random_bool(0.5);
            let (bw, bh) = if vertical { (config.bar_width, config.bar_length) } else { (config.bar_length, config.bar_width) };
            if bw > domain.width || bh > domain.height {
                return None;
            }
            let x0 = rng.random_range(0..=domain.width - bw);
            let y0 = rng.random_range(0..=domain.height - bh);
            let g = GAP as usize;
            let near_bar = (y0.saturating_sub(g)..(y0 + bh + g).min(domain.height))
                .any(|y| (x0.saturating_sub(g)..(x0 + bw + g).min(domain.width)).any(|x| bars[domain.index(x, y)]));
            let free = !near_bar && (y0..y0 + bh).all(|y| (x0..x0 + bw).all(|x| clear_of_discs(x, y)));
            free.then_some((x0, y0, bw, bh))
        });
        let (x0, y0, bw, bh) = spot.ok_or_else(|| Error::PlacementFailure(format!("bar {n}")))?;
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                object[domain.index(x, y)] = true;
                bars[domain.index(x, y)] = true;
            }
        }
    }
    let bright = Labelling::new(domain, object.iter().map(|&o| o as u8).collect())?;
    let grey = |k: u8| if k == 1 { config.object_grey } else { config.background_grey };
    let image = render_image(&bright, grey, config.sigma, seed, 4)?;
    Ok((image, truth))
}
