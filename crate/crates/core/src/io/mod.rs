//! Configuration, CSV ingestion, preprocessing and the `fit` / `simulate`
//! command pipelines.

pub mod commands;
pub mod config;
pub mod input;
pub mod preprocess;
pub mod render;

pub use commands::{fit_command, simulate_command, CommandError, FitOutput, SimulateOutput, Stage};
pub use config::RunConfig;
pub use input::{load_csv, load_split, load_two_files, Roles};
pub use preprocess::{preprocess, PreprocessOptions, PreprocessReport};
