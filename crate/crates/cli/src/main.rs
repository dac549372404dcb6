//! `shapegrf`: sampling, learning, structure search, composition and
//! segmentation with second-order Gibbs random field shape priors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "shapegrf", version, about = "Gibbs random field shape priors on pixel grids")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Master seed; all random streams are derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Sweeps between samples inside a learning iteration.
    #[arg(long, global = true, default_value_t = 2)]
    pub sweeps: usize,
    #[arg(long = "burn-in", global = true, default_value_t = 100)]
    pub burn_in: usize,
    /// Retained samples (sampling) or samples per expectation (learning).
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true, default_value_t = 1)]
    pub thinning: usize,
    /// Initial learning step; default 1 / (W * H).
    #[arg(long, global = true)]
    pub step0: Option<f64>,
    /// Step decay constant; default iterations / 3.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Average the potentials over this final fraction of the iterations.
    #[arg(long, global = true, default_value_t = 0.0)]
    pub average_tail: f64,
    #[arg(long, global = true, default_value_t = 1000)]
    pub iters: usize,
    /// Candidate range: offsets with |dx|, |dy| <= d.
    #[arg(long, global = true, default_value_t = 6)]
    pub d: u32,
    #[arg(long = "target-size", global = true, default_value_t = 8)]
    pub target_size: usize,
    #[arg(long, global = true, value_enum, default_value_t = MetricArg::Euclid)]
    pub metric: MetricArg,
    #[arg(long, global = true)]
    pub w0: Option<f64>,
    #[arg(long, global = true, default_value_t = 0.49)]
    pub w1: f64,
    #[arg(long, global = true, default_value_t = 0.49)]
    pub w2: f64,
    #[arg(long, global = true, value_enum, default_value_t = ScanArg::Raster)]
    pub scan: ScanArg,
    /// Worker threads for candidate scoring; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum MetricArg {
    Euclid,
    Kl,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ScanArg {
    Raster,
    Random,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum FigureArg {
    Man,
    Cat,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw labellings from a model's prior.
    SamplePrior {
        #[arg(long)]
        model: PathBuf,
        /// Output label map; with several samples an index is appended.
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
    },
    /// Max-marginal segmentation of an image (the model must carry an appearance).
    Segment {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        clamps: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Per-node confidence map (largest marginal, scaled to 0..255).
        #[arg(long)]
        confidence: Option<PathBuf>,
    },
    /// Learn potentials from training events.
    Learn(LearnArgs),
    /// Learn the appearance model with the potentials held fixed.
    LearnAppearance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true)]
        image: Vec<PathBuf>,
        #[arg(long)]
        clamps: Vec<PathBuf>,
        /// Mixture components per label when the model has no appearance yet.
        #[arg(long, default_value_t = 1)]
        components: usize,
        #[arg(long, default_value_t = 0.5)]
        appearance_step: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Greedy structure estimation.
    Structure {
        #[command(subcommand)]
        action: StructureAction,
    },
    /// Compose two component models into a joint model.
    Compose {
        #[arg(long)]
        first: PathBuf,
        #[arg(long)]
        first_stats: PathBuf,
        #[arg(long, default_value_t = 0)]
        first_background: u8,
        #[arg(long)]
        second: PathBuf,
        #[arg(long)]
        second_stats: PathBuf,
        #[arg(long, default_value_t = 0)]
        second_background: u8,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the mixed target statistics.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Co-occurrence statistics.
    Stats {
        #[command(subcommand)]
        action: StatsAction,
    },
    /// Exact computations by enumeration (tiny grids only).
    Oracle {
        #[command(subcommand)]
        action: OracleAction,
    },
    /// Synthetic models and images.
    Gen {
        #[command(subcommand)]
        action: GenAction,
    },
    /// Hamming loss and accuracy between two label maps.
    Loss {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        labelling: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct LearnArgs {
    /// Initial model (structure, potentials, optional appearance).
    #[arg(long)]
    pub model: PathBuf,
    /// Fully labelled training example (repeatable).
    #[arg(long)]
    pub labelling: Vec<PathBuf>,
    /// Training image (repeatable); pairs with --clamps by position.
    #[arg(long)]
    pub image: Vec<PathBuf>,
    #[arg(long)]
    pub clamps: Vec<PathBuf>,
    /// Co-learn the appearance with this blending step.
    #[arg(long)]
    pub appearance_step: Option<f64>,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Convergence trace (iteration, step, gradient max, moment residual).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum StructureAction {
    /// Start from unary terms and add the best-scoring offset until the target size.
    Grow(StructureArgs),
    /// Start from the full range and drop the weakest offset until the target size.
    Shrink(StructureArgs),
}

#[derive(Args, Debug)]
pub struct StructureArgs {
    #[arg(long)]
    pub labels: usize,
    #[arg(long)]
    pub labelling: Vec<PathBuf>,
    #[arg(long)]
    pub image: Vec<PathBuf>,
    #[arg(long)]
    pub clamps: Vec<PathBuf>,
    /// Appearance model source (a model file with an appearance) for image events.
    #[arg(long)]
    pub appearance: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum StatsAction {
    /// Estimate prior (or, with evidence, posterior) statistics by sampling,
    /// or count them on a label map.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        labelling: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        clamps: Option<PathBuf>,
        /// Write per-edge frequencies instead of counts.
        #[arg(long)]
        frequencies: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum OracleAction {
    /// Log partition function.
    Z {
        #[arg(long)]
        model: PathBuf,
    },
    /// Exact posterior marginals, one node per line.
    Marginals {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        clamps: Option<PathBuf>,
    },
    /// Exact log-likelihood gradient for an event, written as statistics.
    Gradient {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        clamps: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Exit 0 when both models define the same distribution, 1 otherwise.
    Equal {
        first: PathBuf,
        second: PathBuf,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Rank of the gauge system and identifiability of the potentials.
    Rank {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
pub enum GenAction {
    /// Two-label blob model on the 8-neighbourhood plus its scale-5 copies.
    ///
    /// The published short-edge list "(0,1), (0,-1), (1,1), (-1,1)" names an
    /// offset together with its negative; it is read as the standard
    /// 8-neighbourhood (1,0), (0,1), (1,1), (-1,1).
    Blobs {
        #[arg(long, default_value_t = 0.35)]
        alpha: f64,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Articulated figure of rectangular parts with noise.
    Figure {
        #[arg(long, value_enum, default_value_t = FigureArg::Man)]
        class: FigureArg,
        #[arg(long, default_value_t = 7)]
        parts: usize,
        #[arg(long, default_value_t = 2)]
        scale: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Collage of man and cat figures sharing part appearance.
    Collage {
        #[arg(long, default_value_t = 1)]
        men: usize,
        #[arg(long, default_value_t = 1)]
        cats: usize,
        #[arg(long, default_value_t = 7)]
        parts: usize,
        #[arg(long, default_value_t = 2)]
        scale: usize,
        #[arg(long, default_value_t = 96)]
        width: usize,
        #[arg(long, default_value_t = 96)]
        height: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Potts baseline on the 4- or 8-neighbourhood.
    Potts {
        #[arg(long)]
        labels: usize,
        #[arg(long)]
        anisotropic: bool,
        #[arg(long, default_value_t = 8)]
        neighbourhood: usize,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error\truntime\t{e}");
            return ExitCode::from(3);
        }
    }
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let (kind, code) = if e.is_validation() { ("validation", 2) } else { ("runtime", 3) };
            eprintln!("error\t{kind}\t{e}");
            ExitCode::from(code)
        }
    }
}
