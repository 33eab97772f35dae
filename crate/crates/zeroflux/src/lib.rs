//! Finite volume schemes for degenerate parabolic-hyperbolic equations
//!
//!   u_t + div f(u) - Lap phi(u) = 0
//!
//! on an interval or rectangle with zero-flux boundary conditions, plus the
//! associated stationary resolvent problem u + div f(u) - Lap phi(u) = g.
//! The diffusion phi is Lipschitz nondecreasing and may vanish identically
//! on [0, u_c], so the equation changes type across the threshold u_c.
//!
//! The solvers come with a diagnostics suite that certifies the structural
//! properties the discretization is supposed to inherit from the continuous
//! problem: exact mass conservation, the invariant region [0, u_max],
//! discrete entropy inequalities tested against Kruzhkov entropy pairs,
//! L1 contraction between solutions, and vanishing flux through the
//! outermost interfaces of the stationary problem under mesh refinement.

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod expr;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod numflux;
pub mod scheme;
pub mod stationary;
pub mod util;

use thiserror::Error;

/// Top-level failure of a command, classified for exit codes: 1 validation,
/// 2 solver failure, 3 verification failure, 4 I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Mesh(#[from] mesh::MeshError),
    #[error(transparent)]
    Flux(#[from] numflux::FluxError),
    #[error(transparent)]
    Scheme(#[from] scheme::SchemeError),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error("verification failed: {msg}")]
    Verification { msg: String },
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(config::ConfigError::Io { .. }) => 4,
            Error::Config(_) | Error::Model(_) | Error::Mesh(_) | Error::Flux(_) => 1,
            Error::Scheme(scheme::SchemeError::Invalid { .. })
            | Error::Scheme(scheme::SchemeError::Mesh(_)) => 1,
            Error::Scheme(_) => 2,
            Error::Verification { .. } => 3,
            Error::Io(_) => 4,
        }
    }
}
