//! Small feed-forward nets with exact backpropagation and the heads that
//! turn their outputs into game parameters and mode weights.

pub mod heads;
pub mod mlp;
pub mod refinement;

pub use heads::{sigmoid, softplus, softplus_grad, softplus_inverse, tgl_d_head, tgl_dp_clamp, Clamped, SquashRange};
pub use mlp::{Head, Layer, Mlp, MlpCache};
pub use refinement::{refinement_and_weighting, RefinementOutput, StepDistribution, WeightingOutput};
