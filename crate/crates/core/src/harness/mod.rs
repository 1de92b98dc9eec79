//! Declarative experiment runs and their outputs.

mod config;
mod output;
mod runs;

pub use config::{
    Experiment, ExperimentConfig, MmsConfig, OutputConfig, SolverConfig, SpinodalConfig, TransferConfig,
};
pub use output::{emit_outputs, format_summary, parse_summary, write_vtk, write_vtk_file};
pub use runs::{
    convergence_order, demo_profile, dirichlet_energy, run_demo1d, run_mms, run_spinodal, Demo1dReport, MmsReport,
    SpinodalReport, Timings,
};
