//! Forward pass, training, evaluation, synthetic data and decision queries.

mod decision;
mod eval;
mod features;
mod gradcheck;
mod model;
mod predict;
mod scene;
mod synth;
mod train;

pub use decision::{decision_transfer, DecisionEquilibrium, DecisionResult};
pub use eval::{
    aggregate_folds, constant_velocity_prediction, evaluate, evaluate_constant_velocity, fold_assignment,
    format_table, ErrorAccumulator, EvalReport, HorizonMetric, TableRow, PUBLISHED_REFERENCE,
};
pub use gradcheck::{
    gradcheck, jacobian_rel_err, GradcheckCase, GradcheckOptions, GradcheckReport, GradcheckScenario,
};
pub use features::{feature_dim, past_window, scene_features, FeatureScales};
pub use model::{
    expand_compact, ModelConfig, ParamPreset, RefineCache, RevealCache, TglModel, Variant, COMPACT_PER_AGENT,
    WEIGHTS_VERSION,
};
pub use predict::{tgl_forward, Mode, Prediction};
pub use scene::{label_scene, LabelSource, Scene, SourceTag};
pub use synth::{synth_generate, SynthConfig, SynthScene};
pub use train::{cross_validate, 
    mae_loss, prepare_scenes, refinement_accuracy, split_indices, teacher_forced_loss, train, train_full,
    train_refinement, EpochLog, LabeledScene, Optimizer, OptimizerConfig, OptimizerKind, PhaseConfig,
    RefinementAccuracy, SceneLoss, TrainConfig, TrainLog,
};
