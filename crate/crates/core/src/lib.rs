//! Model of a hybrid superconducting qubit whose Josephson element is a
//! SQUID made of a series pair of tunnel junctions in parallel with a
//! gate-tunable semiconductor nanowire junction.
//!
//! The crate covers the full chain from circuit parameters to spectroscopy:
//!
//! - [`potentials`]: branch potentials, Fourier harmonics, parity sums and
//!   regime classification;
//! - [`spectrum`]: charge-basis Hamiltonian, eigenpairs, transition tables
//!   and charge-parity weights;
//! - [`synth`]: seeded synthetic two-tone spectroscopy maps;
//! - [`fitstack`]: Lorentzian peak extraction, global least-squares fits and
//!   channel-count selection;
//! - [`analysis`]: gate-sweep summaries;
//! - [`io`]: CSV and document formats.
//!
//! Energies are in GHz throughout.

pub mod analysis;
pub mod error;
pub mod fitstack;
pub mod io;
pub mod params;
pub mod potentials;
pub mod quadrature;
pub mod spectrum;
pub mod synth;

pub use error::{FitError, IoError, ParamError, PeakRejection, SpectrumError, SynthError};
pub use params::{CircuitParams, FluxBias, NanowireChannels};
