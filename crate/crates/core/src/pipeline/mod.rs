//! End-to-end experiment orchestration: configuration, synthetic data
//! generation, the rolling-origin verification loop, and report rendering.

pub mod config;
pub mod experiment;
pub mod report;
pub mod synth;

pub use config::{
    load_config, save_config, ConfigFile, DataPaths, ExperimentConfig, LeadRange, Method,
    NetworkSettings,
};
pub use experiment::{audit_no_leakage, load_dataset, run_experiment, Dataset};
pub use report::{
    load_report, render_report, CoverageRow, DayLogEntry, HistogramKind, HistogramRow,
    LeadScoreRow, LowIrradianceRow, PooledCoverageRow, PooledScoreRow, PooledSkillRow, SkillRow,
    VerificationReport, COMBINED_LEAD_SET,
};
pub use synth::{clear_sky, generate, write_files, SyntheticData, SyntheticSpec, SynthPaths};
