//! Mesh-free granular flow engine.
//!
//! Two solvers over one particle infrastructure: a continuum
//! elasto-viscoplastic model (generalized finite differences on a moving
//! point cloud, mu(I) rheology with an elastic-trial / return-mapping stress
//! update) and a microscopic Hertz-Mindlin DEM reference. Both couple to a
//! rigid intruder, and a scenario layer drives the column-collapse and
//! falling-disc benchmarks.
//!
//! The numerical core is generic over the scalar type; the crate root exports
//! double-precision aliases, which everything above the core (configs,
//! scenarios, file formats) uses.

pub mod cloud;
pub mod continuum;
pub mod dem;
pub mod error;
pub mod gfdm;
pub mod num;
pub mod rheology;
pub mod rigid;

pub use error::{Error, Result};
pub use num::{Dim, Real};

/// Double-precision 3-vector used by the scenario and I/O layers.
pub type Vec3 = num::V3<f64>;
/// Double-precision 3x3 matrix.
pub type Mat3 = num::M3<f64>;
