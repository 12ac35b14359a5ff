//! Simulation, parameter estimation and design exploration for a quantum dot
//! coupled to a pillar microcavity probed in reflection.
//!
//! * [`scattering`]: complex reflection amplitude, dressed states, Q-factor.
//! * [`interferometer`]: H/V/D/A channel simulation, phase extraction and the
//!   coherent un-modematched background.
//! * [`estimation`]: damped least-squares fitting of spectra, linewidth and
//!   splitting estimators, standard errors.
//! * [`tuning`]: temperature tuning and anticrossing scans.
//! * [`design`]: conditional phase and outcoupling-rate sweeps.
//! * [`io`]: CSV spectra, key-value configs and reports.
//!
//! Energies and rates are in ueV throughout (hbar = 1).

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod error;
pub mod estimation;
pub mod interferometer;
pub mod io;
pub mod lm;
pub mod scattering;
pub mod spectrum;
pub mod tuning;

pub use design::{evaluate_design, max_conditional_phase, sweep_kappa, DesignPoint};
pub use error::{Error, Result};
pub use estimation::{fit, FitParam, FitProblem, FitResult, ModelParams};
pub use interferometer::{BackgroundModel, ChannelRecord, ReferenceArm};
pub use io::RunConfig;
pub use scattering::{
    coupling_regime, phase, polariton_eigenvalues, q_factor, rabi_splitting, reflection_amplitude, reflectivity,
    ComplexAmplitude, CouplingRegime, QdState, SystemParams,
};
pub use spectrum::{Grid, Spectrum};
pub use tuning::{TemperatureScan, TuningModel};
