//! Optimization drivers: joint DOE + matcher training, target-pattern DOE
//! design, and pattern statistics.

mod adam;
mod checkpoint;
mod design;
mod joint;
mod metrics;
mod pipeline;
mod presets;

pub use adam::Adam;
pub use checkpoint::{
    load_checkpoint, read_checkpoint_from, save_checkpoint, write_checkpoint_to, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use design::{
    design_doe_for_target, normalize_target, normalized_cross_correlation, reachable_target, DesignMethod,
    DesignOptions, DesignResult,
};
pub use joint::{joint_optimize, read_loss_csv, smooth, write_loss_csv, Hyper, LossRecord, OptimState, Trainer};
pub use metrics::{pattern_metrics, PatternMetrics};
pub use pipeline::{capture_on, scene_loss_on, view_noise, Optics, OpticsConfig, SceneTerm};
pub use presets::{EnvironmentPreset, ParamSpec, PresetName, DEFAULT_NOISE_SIGMA};
