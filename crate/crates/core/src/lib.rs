//! Generalized block orthogonal matching pursuit (G-BOMP) on toroidal
//! frequency grids, and a multi-user millimeter-wave channel estimation
//! simulator built on top of it.
//!
//! The crate is organised bottom-up:
//!
//! * [`spectral_channel`] generates ULA channels and Fourier dictionaries.
//! * [`block_geometry`] enumerates the wrapped `b x b` sub-blocks of a grid.
//! * [`gbomp`] is the greedy block solver, the OMP baseline and the
//!   least-squares kernel.
//! * [`training`] draws Bernoulli beams and synthesizes measurements.
//! * [`strategies`] runs the three estimation strategies end to end.
//! * [`experiment`] drives seeded Monte Carlo sweeps and writes CSV tables.
//!
//! All matrices are column-major and vectorization stacks columns.

pub mod block_geometry;
pub mod error;
pub mod experiment;
pub mod gbomp;
pub mod linalg;
pub mod spectral_channel;
pub mod strategies;
pub mod training;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub use error::{Error, Result};

/// Dense complex matrix used throughout the crate.
pub type CMatrix = DMatrix<Complex64>;
/// Dense complex column vector.
pub type CVector = DVector<Complex64>;
