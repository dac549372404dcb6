//! The two image experiments: a disc-shape prior against a 4-neighbourhood
//! baseline, and the composition of two figure classes.

use shapegrf::composition::{compose_models, Component, MixtureWeights};
use shapegrf::learning::{learn_potentials, LearningSchedule, TrainingEvent};
use shapegrf::sampler::{estimate_statistics, SamplerConfig, ScanMode};
use shapegrf::segmentation::{accuracy, segment};
use shapegrf::structure::CandidateRange;
use shapegrf::synth::{gen_cells, gen_collage, gen_composite_figure, gen_potts_baseline, part_grey, CellsConfig, FigureClass};
use shapegrf::{AppearanceModel, ClampMask, Evidence, GridDomain, GrfModel, LabelSet, NeighborhoodStructure, Offset};

use crate::{outcome, Outcome};

fn sampler(seed: u64, burn_in: usize, samples: usize) -> SamplerConfig {
    SamplerConfig { burn_in, n_samples: samples, thinning: 1, seed, scan: ScanMode::Raster }
}

/// Training event: the image with its top nine tenths clamped to the ground
/// truth and the bottom rows left free.
fn semi_supervised(seed: u64, cfg: &CellsConfig, d: GridDomain) -> TrainingEvent {
    let (image, truth) = gen_cells(d, cfg, seed).unwrap();
    let mut clamps = ClampMask::free(d);
    clamps.clamp_rect(&truth, 0, 0, d.width, d.height * 9 / 10);
    TrainingEvent::new(Evidence { image: Some(image), clamps: Some(clamps) }, 1.0).unwrap()
}

pub fn cells() -> Outcome {
    let d = GridDomain::new(96, 96).unwrap();
    let cfg = CellsConfig::default();
    let appearance =
        AppearanceModel::from_gaussians(&[vec![cfg.background_grey], vec![cfg.object_grey]], cfg.sigma * cfg.sigma).unwrap();
    let labels = LabelSet::new(2).unwrap();
    let complex = GrfModel::uniform(d, labels.clone(), NeighborhoodStructure::new(CandidateRange::new(12).unwrap().offsets()).unwrap());
    let baseline = gen_potts_baseline(2, true, 4, 0.0, d).unwrap();
    let mut gains = Vec::new();
    for seed in 0..5u64 {
        let event = semi_supervised(10 + seed, &cfg, d);
        let sched = LearningSchedule { iterations: 2000, step0: Some(0.02 / d.nodes() as f64), seed, ..Default::default() };
        let learned_complex = learn_potentials(&complex, std::slice::from_ref(&event), Some(&appearance), &sched).unwrap().model;
        let learned_base = learn_potentials(&baseline, std::slice::from_ref(&event), Some(&appearance), &sched).unwrap().model;
        let (test_image, test_truth) = gen_cells(d, &cfg, 1000 + seed).unwrap();
        let run = |m: &GrfModel| {
            let res = segment(m, &appearance, &test_image, None, &sampler(seed, 200, 200)).unwrap();
            accuracy(&res.labelling, &test_truth).unwrap()
        };
        let (a, b) = (run(&learned_complex), run(&learned_base));
        eprintln!("  cells seed {seed}: complex {a:.4}, baseline {b:.4}");
        gains.push(a - b);
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    outcome(mean >= 0.05, format!("mean accuracy gain {:.1} points over 5 seeds (need 5.0)", 100.0 * mean))
}

/// Offsets `(s,0), (0,s), (s,s), (-s,s)` for each scale.
fn multiscale(scales: &[i32]) -> NeighborhoodStructure {
    NeighborhoodStructure::new(
        scales.iter().flat_map(|&s| [Offset::new(s, 0), Offset::new(0, s), Offset::new(s, s), Offset::new(-s, s)]),
    )
    .unwrap()
}

const PARTS: usize = 7;
const SCALE: usize = 2;
const SIGMA: f64 = 0.05;

fn figure_component(class: FigureClass, structure: &NeighborhoodStructure, seed: u64) -> Component {
    let (_, truth) = gen_composite_figure(class, PARTS, SCALE, SIGMA, seed).unwrap();
    let start = GrfModel::uniform(truth.domain(), LabelSet::new(PARTS).unwrap(), structure.clone());
    let sched = LearningSchedule { iterations: 500, seed, ..Default::default() };
    let model = learn_potentials(&start, &[TrainingEvent::supervised(&truth)], None, &sched).unwrap().model;
    let statistics = model.statistics(&truth).unwrap().per_edge(truth.domain());
    Component { model, statistics, background: 0 }
}

pub fn catman() -> Outcome {
    let structure = multiscale(&[1, 3, 6, 10]);
    let joint_domain = GridDomain::new(64, 64).unwrap();
    let collage_domain = GridDomain::new(104, 64).unwrap();
    let mut worst_accuracy = 1.0f64;
    let mut worst_ratio = 0.0f64;
    for seed in 0..3u64 {
        let man = figure_component(FigureClass::Man, &structure, 20 + seed);
        let cat = figure_component(FigureClass::Cat, &structure, 30 + seed);
        let weights = MixtureWeights::default_for(2 * PARTS - 1);
        let sched = LearningSchedule { iterations: 3000, step0: Some(0.25 / joint_domain.nodes() as f64), seed, ..Default::default() };
        let comp = compose_models(&man, &cat, &weights, joint_domain, &sched, &sampler(seed, 200, 20)).unwrap();
        let joint = comp.learned.model;
        let k = comp.mapping.joint_labels;

        let means: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                let part = comp.mapping.components.iter().find_map(|c| c.joint.iter().position(|&v| v as usize == j));
                vec![part_grey(part.unwrap_or(0), PARTS)]
            })
            .collect();
        let appearance = AppearanceModel::from_gaussians(&means, SIGMA * SIGMA).unwrap();
        let collage = gen_collage([FigureClass::Man, FigureClass::Cat], [1, 1], PARTS, SCALE, collage_domain, SIGMA, 40 + seed).unwrap();
        let res = segment(&joint, &appearance, &collage.image, None, &sampler(seed, 300, 200)).unwrap();
        let acc = accuracy(&res.labelling, &collage.truth).unwrap();
        worst_accuracy = worst_accuracy.min(acc);

        let prior = estimate_statistics(&joint, None, None, &sampler(50 + seed, 300, 100)).unwrap().per_edge(joint_domain);
        for (t, target) in prior.pairwise.iter().zip(&comp.target.pairwise) {
            for a in 0..k {
                for b in 0..k {
                    let (oa, ob) = (comp.mapping.owner(a as u8), comp.mapping.owner(b as u8));
                    if matches!((oa, ob), (Some(x), Some(y)) if x != y) {
                        worst_ratio = worst_ratio.max(t.values[a * k + b] / target.values[a * k + b]);
                    }
                }
            }
        }
        eprintln!("  catman seed {seed}: accuracy {acc:.4}, worst cross-class ratio so far {worst_ratio:.2}");
    }
    outcome(
        worst_accuracy >= 0.9 && worst_ratio <= 2.0,
        format!("worst accuracy {worst_accuracy:.4} (need 0.90); worst cross-class frequency {worst_ratio:.2}x the floor (need <= 2)"),
    )
}
