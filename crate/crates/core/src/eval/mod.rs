//! Benchmarking: datasets, success-rate arithmetic, and experiment
//! runners (benchmark, transfer, bias probe, robustness, ablation).

pub mod ablation;
pub mod asr;
pub mod dataset;
pub mod report;
pub mod robustness;
pub mod runner;
pub mod scenario;

pub use ablation::{ablation_sweep, AblationAxis};
pub use asr::{compute_asr, AsrSummary, ScenarioOutcome, ScenarioStats};
pub use dataset::{load_dataset, save_dataset, Dataset, QueryRecord};
pub use report::{load_report, render_report_table, save_report, EvaluationReport};
pub use robustness::{
    build_robustness_corpus, targeted_success, untargeted_success, RobustnessMode,
    DEFAULT_CLASS_POOL, DEFAULT_ROBUSTNESS_M,
};
pub use runner::{
    bias_probe, config_digest, run_benchmark, run_transfer, ClientSelector, ModelSelector,
    RunConfig, RunMode, DEFAULT_BIAS_FOLLOWUP,
};
pub use scenario::Scenario;
