//! Multirate finite-volume simulation of drug release from layered spherical
//! capsules with direction-dependent diffusion, surface erosion, and a
//! Robin outer boundary.

pub mod calibration;
pub mod capsule;
pub mod coupler;
pub mod erosion;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod oracle;
pub mod release;

pub use calibration::{
    fit_parameters, objective, sweep_parameter, DataUnit, FitProblem, FitResult, FitSettings, FitStatus,
    FreeParameter, ObjectiveKind, ParamPath, ReleaseData, SweepMember, SweepSpec, SweepValues,
};
pub use capsule::{CapsuleSpec, SchemeFlavor, SimulationConfig, StratumSpec, ValidatedCapsule};
pub use coupler::{
    simulate, simulate_with, ProfilePoint, RunStats, RunStatus, Simulation, SimulationOptions, SimulationOutput,
};
pub use erosion::{ErosionPhase, ErosionSchedule};
pub use error::{Error, Result, ValidationErrors};
pub use io::{emit_config, parse_config, parse_config_file, parse_document, ConfigDocument, RunManifest};
pub use oracle::{analytic_release, AnalyticSeries, OracleSpec, ValidationReport, ValidationRow};
pub use release::{ReleaseRecord, ReleaseSample};
