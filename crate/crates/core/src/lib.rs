//! Authenticated homomorphic evaluation: labeled programs, the replication
//! (REP) and polynomial-encoding (PE) authenticators, and the interactive
//! protocols that shrink PE verification cost.

pub mod circuit;
pub mod rep;
pub mod labels;
pub mod pe;
pub mod protocols;

use thiserror::Error;
use vhe_bfv::HeError;

#[derive(Debug, Error)]
pub enum AuthError {
    #[error(transparent)]
    He(#[from] HeError),
    #[error("label {0:?} was already issued under this key")]
    LabelReuse(String),
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),
    #[error("vector width {got} does not match {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("rotation across ciphertext boundaries is not supported")]
    CrossCiphertextRotation,
    #[error("authenticator degree {degree} exceeds the limit {limit}")]
    DegreeLimit { degree: usize, limit: usize },
    #[error("inputs have inconsistent layouts")]
    LayoutMismatch,
    #[error("requadratization failed: {0}")]
    Requadratize(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Outcome of a verification. Stays with the client: it has no
/// serialization and nothing in the protocol layer can send it.
#[derive(Debug, Clone, PartialEq, Eq)]
#[must_use]
pub enum Verdict {
    Accept,
    Reject(RejectCause),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectCause {
    /// The result could not be decrypted.
    Decryption,
    /// Output tag differs from the hash tree of the claimed program.
    TagMismatch,
    /// A challenge slot holds the wrong value.
    ChallengeSlot { slot: usize, replica: usize },
    /// A replica slot differs from the claimed result.
    ReplicaSlot { slot: usize, replica: usize },
    /// The constant term does not decrypt to the claimed result.
    ResultMismatch,
    /// The encoding does not evaluate to the challenge at the secret point.
    Encoding { slot: usize },
    /// `w_0` is not the claimed result evaluated at the challenge point.
    PpResultEvaluation,
    /// The packed hash disagrees with the packed evaluations.
    PpHash,
    /// The packed evaluations do not match the challenge at the secret point.
    PpChallenge,
    /// Authentication shape does not fit the program.
    Malformed,
}
