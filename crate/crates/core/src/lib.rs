//! Shape priors as second-order Gibbs random fields on pixel grids.
//!
//! A model assigns every labelling `y` of a `W x H` grid the probability
//! `p(y) ∝ exp(Σ_t u_0(y_t) + Σ_a Σ_{(t,t+a)} u_a(y_t, y_{t+a}))`, where the
//! offsets `a` form a translation-invariant neighbourhood structure. The
//! crate covers:
//!
//! * [`grid`]: domains, structures, potentials, co-occurrence statistics;
//! * [`oracle`]: exact enumeration on tiny grids (partition function,
//!   marginals, gradients, gauge identifiability);
//! * [`sampler`]: single-site Gibbs sampling from priors and posteriors;
//! * [`appearance`]: per-label Gaussian mixtures `p(x_t | y_t)`;
//! * [`learning`]: stochastic-gradient maximum likelihood for potentials;
//! * [`structure`]: greedy growth and shrinkage of the offset set;
//! * [`composition`]: joining two shape models through mixed statistics;
//! * [`segmentation`]: max-marginal decoding and Hamming risk;
//! * [`io`] and [`synth`]: file formats and synthetic data generators.

pub mod appearance;
pub mod composition;
pub mod error;
pub mod evidence;
pub mod grid;
pub mod io;
pub mod learning;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod segmentation;
pub mod structure;
pub mod synth;

pub use appearance::{AppearanceModel, GaussianComponent};
pub use error::{Error, Result};
pub use evidence::{ClampMask, Evidence, Image};
pub use grid::{
    GridDomain, GrfModel, LabelSet, Labelling, NeighborhoodStructure, Offset, OffsetTable, PotentialTable,
    StatisticsKind, SufficientStatistics,
};
pub use learning::{LearningSchedule, TrainingEvent};
pub use oracle::MarginalField;
pub use sampler::{SamplerChain, SamplerConfig, ScanMode};
