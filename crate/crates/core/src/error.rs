use alloc::string::String;

/// Errors produced by the library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    /// The Helmholtz operator is singular at this frequency.
    #[error("near-resonant frequency: omega^2 = {omega_sq} is within {tol} of the Dirichlet eigenvalue {eigenvalue}")]
    Resonance { omega_sq: f64, eigenvalue: f64, tol: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    /// A relative error was requested against a target with zero norm.
    #[error("division by zero norm: target sample {index} has zero weighted norm")]
    ZeroNorm { index: usize },
    /// The kernel does not satisfy K(x,y,xi,eta) = K(y,x,eta,xi) for the requested swap,
    /// so symmetrizing it would not produce the kernel of the symmetric subspace.
    #[error("symmetry condition K(x,y,xi,eta) = K(y,x,eta,xi) fails: {0}")]
    SymmetryCondition(String),
    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
