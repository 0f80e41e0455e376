//! Reconstruction of dense single-shell diffusion-MRI signals on the
//! q-space sphere from a reduced set of gradient directions.
//!
//! Two routes from a K_L-direction measurement back to the full
//! K_H-direction signal:
//!
//! * **Dictionary methods** — represent the signal in a real symmetric
//!   spherical-harmonic basis and recover coefficients from the reduced
//!   system by ridge regression ([`cs_solvers::solve_l2`]) or L1 sparse
//!   coding via FISTA ([`cs_solvers::solve_l1_fista`]), then expand through
//!   the dense dictionary.
//! * **Learned mapping** — a 1D encoder-decoder convolutional network
//!   ([`model`]) trained end-to-end on measurement/signal pairs with an
//!   NMSE loss, on top of a minimal reverse-mode autodiff engine ([`nn`]).
//!
//! [`synth`] generates multi-tensor phantom voxels with Rician noise so
//! experiments run without scanner data; [`experiment`] wires everything
//! into a reproducible synthesize/train/reconstruct/evaluate pipeline.
//!
//! Reproducibility contract: all randomness flows through the fixed
//! xoshiro256++/SplitMix64 generator in [`rng`], floating-point reductions
//! are ordered independently of thread count, and text formats round-trip
//! f64 exactly. Re-running any pipeline with the same seeds reproduces the
//! same bytes.

pub mod cs_solvers;
pub mod dictionary;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod io_formats;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod selftest;
pub mod sh;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
pub use signal::SignalMatrix;
