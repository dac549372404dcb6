use std::fs;
use std::path::{Path, PathBuf};

use shapegrf::appearance::init_appearance;
use shapegrf::composition::{compose_models, joint_appearance, Component, MixtureWeights};
use shapegrf::io::{self, ModelFile, StatisticsFile};
use shapegrf::learning::{learn_model, AppearanceLearning, LearningSchedule, TrainingEvent};
use shapegrf::oracle;
use shapegrf::sampler::{estimate_statistics, SamplerChain, SamplerConfig, ScanMode};
use shapegrf::segmentation::{accuracy, hamming_loss, segment};
use shapegrf::structure::{grow_structure, shrink_structure, CandidateRange, ScoreMetric, StructureConfig};
use shapegrf::synth::{self, FigureClass};
use shapegrf::{AppearanceModel, Error, Evidence, GridDomain, GrfModel, LabelSet, Labelling, Result};

use crate::{Cli, Command, FigureArg, GenAction, Global, LearnArgs, MetricArg, OracleAction, ScanArg, StatsAction, StructureAction, StructureArgs};

fn sampler_config(g: &Global, default_samples: usize) -> SamplerConfig {
    SamplerConfig {
        burn_in: g.burn_in,
        n_samples: g.samples.unwrap_or(default_samples),
        thinning: g.thinning,
        seed: g.seed,
        scan: scan_mode(g.scan),
    }
}

fn scan_mode(s: ScanArg) -> ScanMode {
    match s {
        ScanArg::Raster => ScanMode::Raster,
        ScanArg::Random => ScanMode::RandomSite,
    }
}

fn schedule(g: &Global) -> LearningSchedule {
    LearningSchedule {
        iterations: g.iters,
        step0: g.step0,
        tau: g.tau,
        samples_per_expectation: g.samples.unwrap_or(1),
        sweeps_per_iteration: g.sweeps,
        persistent_chains: true,
        burn_in: g.burn_in,
        seed: g.seed,
        scan: scan_mode(g.scan),
        average_tail: g.average_tail,
    }
}

fn provenance(file: ModelFile, command: &str, g: &Global) -> ModelFile {
    file.with_provenance("command", command)
        .with_provenance("seed", g.seed)
        .with_provenance("iterations", g.iters)
}

fn write_model(path: &Path, model: &GrfModel, appearance: Option<&AppearanceModel>, command: &str, g: &Global) -> Result<()> {
    io::write_model(path, &provenance(ModelFile::new(model, appearance), command, g))
}

/// Supervised events from label maps, then image events (paired with clamp
/// masks by position), then clamp-only events for surplus masks.
fn events(labellings: &[PathBuf], images: &[PathBuf], clamps: &[PathBuf], num_labels: usize) -> Result<Vec<TrainingEvent>> {
    let mut out = Vec::new();
    for p in labellings {
        out.push(TrainingEvent::supervised(&io::read_labelling(p, Some(num_labels))?));
    }
    for (i, p) in images.iter().enumerate() {
        let image = io::read_image(p)?;
        let mask = clamps.get(i).map(|c| io::read_clamps(c, Some(num_labels))).transpose()?;
        out.push(TrainingEvent::new(Evidence { image: Some(image), clamps: mask }, 1.0)?);
    }
    for c in clamps.iter().skip(images.len()) {
        out.push(TrainingEvent::new(Evidence::clamped(io::read_clamps(c, Some(num_labels))?), 1.0)?);
    }
    if out.is_empty() {
        return Err(Error::InvalidEvent("no training events given".into()));
    }
    Ok(out)
}

fn evidence(image: Option<&PathBuf>, clamps: Option<&PathBuf>, num_labels: usize) -> Result<Evidence> {
    Ok(Evidence {
        image: image.map(io::read_image).transpose()?,
        clamps: clamps.map(|c| io::read_clamps(c, Some(num_labels))).transpose()?,
    })
}

fn evidence_domain(ev: &Evidence) -> Option<GridDomain> {
    ev.image.as_ref().map(|i| i.domain()).or_else(|| ev.clamps.as_ref().map(|c| c.domain()))
}

fn domain_override(model: &GrfModel, width: Option<usize>, height: Option<usize>) -> Result<GrfModel> {
    let d = GridDomain::new(width.unwrap_or(model.domain.width), height.unwrap_or(model.domain.height))?;
    Ok(model.with_domain(d))
}

fn indexed_path(path: &Path, i: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{i:04}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{i:04}"),
    };
    path.with_file_name(name)
}

pub fn run(cli: &Cli) -> Result<u8> {
    let g = &cli.global;
    match &cli.command {
        Command::SamplePrior { model, output, width, height } => {
            let (m, _) = io::read_model(model)?;
            let m = domain_override(&m, *width, *height)?;
            let cfg = sampler_config(g, 1);
            let mut chain = SamplerChain::new(&m, None, None, &cfg, None)?;
            let samples = chain.sample(&cfg)?;
            if samples.len() == 1 {
                io::write_labelling(output, &samples[0])?;
            } else {
                for (i, y) in samples.iter().enumerate() {
                    io::write_labelling(indexed_path(output, i), y)?;
                }
            }
        }
        Command::Segment { model, image, clamps, output, confidence } => {
            let (m, app) = io::read_model(model)?;
            let app = app.ok_or(Error::MissingAppearance)?;
            let img = io::read_image(image)?;
            let mask = clamps.as_ref().map(|c| io::read_clamps(c, Some(m.num_labels()))).transpose()?;
            let res = segment(&m, &app, &img, mask.as_ref(), &sampler_config(g, 100))?;
            io::write_labelling(output, &res.labelling)?;
            if let Some(path) = confidence {
                let data = res.confidence.iter().map(|&c| c.clamp(0.0, 1.0)).collect();
                io::write_image(path, &shapegrf::Image::new(res.labelling.domain(), 1, data)?)?;
            }
        }
        Command::Learn(args) => learn(args, g)?,
        Command::LearnAppearance { model, image, clamps, components, appearance_step, output } => {
            let (m, app) = io::read_model(model)?;
            let evs = events(&[], image, clamps, m.num_labels())?;
            let app = match app {
                Some(a) => a,
                None => init_appearance(&io::read_image(&image[0])?, m.num_labels(), *components, g.seed)?,
            };
            let al = AppearanceLearning { step: *appearance_step, learn_potentials: false };
            let out = learn_model(&m, &evs, Some(&app), &schedule(g), Some(al))?;
            write_model(output, &out.model, out.appearance.as_ref(), "learn-appearance", g)?;
        }
        Command::Structure { action } => structure(action, g)?,
        Command::Compose { first, first_stats, first_background, second, second_stats, second_background, width, height, output, target } => {
            let (m1, a1) = io::read_model(first)?;
            let (m2, a2) = io::read_model(second)?;
            let c1 = Component { model: m1, statistics: io::read_statistics(first_stats)?, background: *first_background };
            let c2 = Component { model: m2, statistics: io::read_statistics(second_stats)?, background: *second_background };
            let joint = c1.model.num_labels() + c2.model.num_labels() - 1;
            let w0 = g.w0.unwrap_or(MixtureWeights::default_for(joint).w0);
            let weights = MixtureWeights::new(w0, g.w1, g.w2)?;
            if let Some(w) = weights.regime_warning() {
                eprintln!("warning\t{w}");
            }
            let domain = GridDomain::new(*width, *height)?;
            let comp = compose_models(&c1, &c2, &weights, domain, &schedule(g), &sampler_config(g, 100))?;
            let app = match (&a1, &a2) {
                (Some(a), Some(b)) => Some(joint_appearance(a, b, &comp.mapping)?),
                _ => None,
            };
            write_model(output, &comp.learned.model, app.as_ref(), "compose", g)?;
            if let Some(t) = target {
                io::write_statistics(t, &StatisticsFile::new(&comp.target).with_provenance("command", "compose"))?;
            }
        }
        Command::Stats { action: StatsAction::Estimate { model, labelling, image, clamps, frequencies, output } } => {
            let (m, app) = io::read_model(model)?;
            let stats = match labelling {
                Some(p) => {
                    let y = io::read_labelling(p, Some(m.num_labels()))?;
                    m.with_domain(y.domain()).statistics(&y)?
                }
                None => {
                    let ev = evidence(image.as_ref(), clamps.as_ref(), m.num_labels())?;
                    let local = evidence_domain(&ev).map_or_else(|| m.clone(), |d| m.with_domain(d));
                    let ev = (!ev.is_empty()).then_some(ev);
                    estimate_statistics(&local, ev.as_ref(), app.as_ref(), &sampler_config(g, 100))?
                }
            };
            let domain = match labelling {
                Some(p) => io::read_labelling(p, None)?.domain(),
                None => image
                    .as_ref()
                    .map(|p| io::read_image(p).map(|i| i.domain()))
                    .transpose()?
                    .unwrap_or(m.domain),
            };
            let stats = if *frequencies { stats.per_edge(domain) } else { stats };
            io::write_statistics(output, &StatisticsFile::new(&stats).with_provenance("seed", g.seed))?;
        }
        Command::Oracle { action } => return oracle_cmd(action),
        Command::Gen { action } => gen(action, g)?,
        Command::Loss { truth, labelling } => {
            let a = io::read_labelling(truth, None)?;
            let b = io::read_labelling(labelling, None)?;
            println!("hamming\t{}", hamming_loss(&a, &b)?);
            println!("accuracy\t{}", accuracy(&b, &a)?);
        }
    }
    Ok(0)
}

fn learn(args: &LearnArgs, g: &Global) -> Result<()> {
    let (m, app) = io::read_model(&args.model)?;
    let evs = events(&args.labelling, &args.image, &args.clamps, m.num_labels())?;
    let al = args.appearance_step.map(|step| AppearanceLearning { step, learn_potentials: true });
    let out = learn_model(&m, &evs, app.as_ref(), &schedule(g), al)?;
    write_model(&args.output, &out.model, out.appearance.as_ref(), "learn", g)?;
    if let Some(path) = &args.trace {
        let text: String = out.trace.iter().map(|t| format!("{t}\n")).collect();
        fs::write(path, text)?;
    }
    Ok(())
}

fn structure(action: &StructureAction, g: &Global) -> Result<()> {
    let (args, grow): (&StructureArgs, bool) = match action {
        StructureAction::Grow(a) => (a, true),
        StructureAction::Shrink(a) => (a, false),
    };
    let labels = LabelSet::new(args.labels)?;
    let evs = events(&args.labelling, &args.image, &args.clamps, args.labels)?;
    let domain = evs[0].domain().expect("events carry data");
    let app = match &args.appearance {
        Some(p) => Some(io::read_model(p)?.1.ok_or(Error::MissingAppearance)?),
        None => None,
    };
    let mut cfg = StructureConfig::from_final(schedule(g));
    cfg.metric = match g.metric {
        MetricArg::Euclid => ScoreMetric::Euclidean,
        MetricArg::Kl => ScoreMetric::Kl,
    };
    let range = CandidateRange::new(g.d)?;
    let run = if grow { grow_structure } else { shrink_structure };
    let (model, trace) = run(&evs, &labels, domain, range, g.target_size, &cfg, app.as_ref())?;
    write_model(&args.output, &model, app.as_ref(), if grow { "structure grow" } else { "structure shrink" }, g)?;
    if let Some(path) = &args.trace {
        let text: String = trace.steps().iter().map(|s| format!("{s}\n")).collect();
        fs::write(path, text)?;
    }
    Ok(())
}

fn oracle_cmd(action: &OracleAction) -> Result<u8> {
    match action {
        OracleAction::Z { model } => {
            let (m, _) = io::read_model(model)?;
            println!("{}", oracle::partition_function(&m)?);
        }
        OracleAction::Marginals { model, image, clamps } => {
            let (m, app) = io::read_model(model)?;
            let ev = evidence(image.as_ref(), clamps.as_ref(), m.num_labels())?;
            let ev = (!ev.is_empty()).then_some(ev);
            let field = oracle::exact_marginals(&m, ev.as_ref(), app.as_ref())?;
            for t in 0..m.domain.nodes() {
                let (x, y) = m.domain.coords(t);
                let probs: Vec<String> = field.at(t).iter().map(|p| p.to_string()).collect();
                println!("{x}\t{y}\t{}", probs.join("\t"));
            }
        }
        OracleAction::Gradient { model, image, clamps, output } => {
            let (m, app) = io::read_model(model)?;
            let ev = evidence(image.as_ref(), clamps.as_ref(), m.num_labels())?;
            let grad = oracle::exact_loglik_gradient(&m, &ev, app.as_ref())?;
            io::write_statistics(output, &StatisticsFile::new(&grad))?;
        }
        OracleAction::Equal { first, second, tol } => {
            let (a, _) = io::read_model(first)?;
            let (b, _) = io::read_model(second)?;
            let equal = oracle::distributions_equal(&a, &b, *tol)?;
            println!("{}", if equal { "equal" } else { "different" });
            return Ok(if equal { 0 } else { 1 });
        }
        OracleAction::Rank { model, width, height } => {
            let (m, _) = io::read_model(model)?;
            let m = domain_override(&m, *width, *height)?;
            let r = oracle::gauge_rank(m.domain, &m.structure);
            println!("rank\t{}\ndimension\t{}\nidentifiable\t{}", r.rank, r.dimension, r.identifiable);
        }
    }
    Ok(0)
}

fn figure_class(f: FigureArg) -> FigureClass {
    match f {
        FigureArg::Man => FigureClass::Man,
        FigureArg::Cat => FigureClass::Cat,
    }
}

fn gen(action: &GenAction, g: &Global) -> Result<()> {
    match action {
        GenAction::Blobs { alpha, beta, width, height, output } => {
            let m = synth::gen_blob_model(*alpha, *beta, GridDomain::new(*width, *height)?)?;
            let file = provenance(ModelFile::new(&m, None), "gen blobs", g)
                .with_provenance("alpha", *alpha)
                .with_provenance("beta", *beta);
            io::write_model(output, &file)?;
        }
        GenAction::Figure { class, parts, scale, sigma, image, truth } => {
            let (img, y) = synth::gen_composite_figure(figure_class(*class), *parts, *scale, *sigma, g.seed)?;
            io::write_image(image, &img)?;
            write_truth(truth, &y, *parts)?;
        }
        GenAction::Collage { men, cats, parts, scale, width, height, sigma, image, truth } => {
            let c = synth::gen_collage(
                [FigureClass::Man, FigureClass::Cat],
                [*men, *cats],
                *parts,
                *scale,
                GridDomain::new(*width, *height)?,
                *sigma,
                g.seed,
            )?;
            io::write_image(image, &c.image)?;
            write_truth(truth, &c.truth, c.mapping.joint_labels)?;
        }
        GenAction::Potts { labels, anisotropic, neighbourhood, gamma, width, height, output } => {
            let m = synth::gen_potts_baseline(*labels, *anisotropic, *neighbourhood, *gamma, GridDomain::new(*width, *height)?)?;
            write_model(output, &m, None, "gen potts", g)?;
        }
    }
    Ok(())
}

/// Ground truths are validated against their label set before writing.
fn write_truth(path: &Path, y: &Labelling, num_labels: usize) -> Result<()> {
    y.check_labels(&LabelSet::new(num_labels)?)?;
    io::write_labelling(path, y)
}
