//! Class-imbalance segmentation losses built around the asymmetric focal
//! margin loss and the hybrid focal margin compound, with analytic logit
//! gradients, a finite-difference checker, segmentation metrics, a synthetic
//! crack-mask generator and a per-pixel toy trainer.

pub mod audit;
pub mod error;
pub mod format;
pub mod gradcheck;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result, Shape};
pub use grid::{Grid2D, MaskGrid};
pub use losses::{loss_value_and_grad, LossKind, LossOutput, LossParams};
pub use metrics::{ConfusionCounts, MetricReport};
pub use synth::{SynthConfig, SynthSample};
pub use trainer::{TrainConfig, TrainReport};

