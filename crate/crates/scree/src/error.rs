//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Weighted normal matrix of a least-squares stencil is numerically
    /// singular (condition estimate above the configured bound). The caller
    /// should run cloud management and retry.
    #[error("singular least-squares normal matrix at point {point} (cond estimate {cond:.3e})")]
    SingularNormalMatrix { point: usize, cond: f64 },

    /// An attached interior point still has too few neighbors after cloud
    /// management; the cloud is unrecoverably degenerate.
    #[error("point {point} has {count} neighbors after management (need {needed})")]
    InsufficientNeighbors {
        point: usize,
        count: usize,
        needed: usize,
    },

    /// `gamma_dot` was queried at or above the upper yield asymptote; the
    /// caller must return-map first, so reaching this is a solver bug.
    #[error("shear stress {tau_bar} at or above limit surface mu_2*p = {limit}")]
    AboveLimitSurface { tau_bar: f64, limit: f64 },

    /// The return-map quadratic has a negative discriminant; impossible for
    /// valid inputs, so parameters are corrupted.
    #[error("negative discriminant {disc:.6e} in return map")]
    NegativeDiscriminant { disc: f64 },

    /// Rigid-body inertia tensor is not invertible.
    #[error("singular inertia tensor")]
    SingularInertia,

    /// Scenario geometry is degenerate (zero aspect ratio, zero extent, ...).
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    /// Run-out fit needs at least two distinct aspect ratios.
    #[error("degenerate run-out fit: all aspect ratios identical")]
    DegenerateFit,

    /// Config file could not be parsed.
    #[error("config parse error: {0}")]
    Parse(String),

    /// Config parsed but a value is inadmissible; names the offending key.
    #[error("invalid config value for `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
