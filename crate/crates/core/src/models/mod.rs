//! PDE drivers: manufactured-solution diffusion and the split Cahn–Hilliard system.

mod cahn_hilliard;
mod diagnostics;
mod diffusion;
mod free_energy;

pub use cahn_hilliard::{
    ch_step, chemical_potential, energy, energy_rule, random_mixture_ic, CahnHilliardProblem, ChState,
    ChStepOutcome, ChSystem,
};
pub use diagnostics::{median, Diagnostics, DiagnosticsRow, CSV_HEADER};
pub use diffusion::{diffusion_step, mms_exact, mms_l2_error, DiffusionProblem, DiffusionStepper};
pub use free_energy::{FreeEnergy, CLIP};
