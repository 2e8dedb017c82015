//! Relaxed energies for pressure-dependent plasticity.
//!
//! The crate is organised bottom-up:
//!
//! * [`energy`]: dimensionless condensed energy and its closed-form convex envelope.
//! * [`oracle`]: brute-force lower convex hulls on sampled grids.
//! * [`material`]: the three-dimensional incremental update.
//! * [`model3d`]: the relaxed energy lifted to strain tensors.
//! * [`fem1d`]: a one-dimensional bar minimised with L-BFGS.
//! * [`fem2d`]: a quasi-static plane-strain plate with a hole.

pub mod energy;
pub mod fem1d;
pub mod fem2d;
pub mod material;
pub mod model3d;
pub mod optim;
pub mod oracle;
pub mod tensor;

pub use energy::{EnergyError, EnvelopeParams, Region};
