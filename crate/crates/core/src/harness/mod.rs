//! Command-line harness: run configuration, evaluation, reference
//! experiments and figure generation.

pub mod cli;
mod config;
mod eval;
mod figures;
mod gradcheck;
mod reference;

pub use config::{
    default_max_disparity, EnvironmentConfig, MatcherConfig, OptimizerConfig, RunConfig, ScalarOrRange, ScalarOrSet,
    SceneConfig, SceneKind,
};
pub use eval::{
    compute_eval, compute_eval_many, error_sums, masked_mae, occlusion_band, ErrorSums, EvalReport, SceneEval,
    BAD_THRESHOLDS, MIN_DEPTH_DISPARITY,
};
pub use figures::{reproduce_figures, Figure};
pub use gradcheck::{format_rows, full_chain_report, gradcheck_all, GradCheckRow, FULL_CHAIN};
pub use reference::{
    design_comparison, desk_rig, figure_runs, prepare, reference_config, train, trinocular_comparison, BandComparison,
    ComparisonMaps, ComparisonSetup, DesignComparison, Prepared, REFERENCE_ETA, SMOOTHING_WINDOW,
};
