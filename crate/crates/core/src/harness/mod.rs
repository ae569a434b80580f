//! Experiment presets, config files, and replicated runs with CSV/JSON artifacts.

pub mod config;
pub mod presets;
pub mod run;

pub use config::{load_config, parse_config, ExperimentConfig, ExperimentKind, RedrawObservations, VariantSelection};
pub use presets::{describe, list_presets, preset, preset_names, reference_settings, selftest};
pub use run::{default_out_dir, run_experiment, Manifest, RunOptions, OUT_DIR_ENV};
