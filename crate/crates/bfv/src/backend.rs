//! The operations every backend exposes. Evaluation needs only public
//! material; decryption lives behind a separate trait.

use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;

use crate::bfv::BfvCiphertext;
use crate::mock::{MockCiphertext, MockParams};
use crate::params::Params;
use crate::ring::{Modulus, RingError, SlotVector};

#[derive(Debug, Error)]
pub enum HeError {
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown parameter preset {0:?}")]
    UnknownPreset(String),
    #[error("decryption failed: noise reached {0:.3} of the decryption bound")]
    DecryptionFailure(f64),
    #[error("no Galois key for element {0}")]
    MissingGaloisKey(usize),
    #[error("no relinearization key loaded")]
    MissingRelinKey,
    #[error("operation needs a size-{expected} ciphertext, got size {got}")]
    CiphertextSize { expected: usize, got: usize },
    #[error("ciphertexts come from different backends or parameter sets")]
    BackendMismatch,
    #[error("slot vector of length {got}, expected {expected}")]
    SlotLength { got: usize, expected: usize },
    #[error("block {0} must be a power of two dividing the row length")]
    BadBlock(usize),
    #[error("malformed encoding: {0}")]
    Decode(String),
}

/// Which backend produced a ciphertext.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendTag {
    Bfv,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ciphertext {
    Bfv(BfvCiphertext),
    Mock(MockCiphertext),
}

impl Ciphertext {
    pub fn backend_tag(&self) -> BackendTag {
        match self {
            Ciphertext::Bfv(_) => BackendTag::Bfv,
            Ciphertext::Mock(_) => BackendTag::Mock,
        }
    }

    /// Number of polynomials: 2 at rest, 3 between tensoring and relinearization.
    pub fn size(&self) -> usize {
        match self {
            Ciphertext::Bfv(c) => c.polys.len(),
            Ciphertext::Mock(c) => c.size as usize,
        }
    }
}

/// Parameters of either backend; enough to decode serialized objects.
#[derive(Debug, Clone, PartialEq)]
pub enum HeParams {
    Bfv(Params),
    Mock(MockParams),
}

impl HeParams {
    pub fn slot_count(&self) -> usize {
        match self {
            HeParams::Bfv(p) => p.n,
            HeParams::Mock(m) => m.n,
        }
    }

    pub fn plain_modulus(&self) -> &Arc<Modulus> {
        match self {
            HeParams::Bfv(p) => &p.t,
            HeParams::Mock(m) => &m.t,
        }
    }
}

/// Homomorphic operations available to the party holding public keys.
pub trait Evaluator: Send + Sync {
    fn params(&self) -> HeParams;

    fn slot_count(&self) -> usize {
        self.params().slot_count()
    }

    fn plain_modulus(&self) -> Arc<Modulus> {
        self.params().plain_modulus().clone()
    }

    /// Fresh public-key encryption.
    fn encrypt(&self, m: &SlotVector, rng: &mut dyn RngCore) -> Result<Ciphertext, HeError>;

    fn encrypt_zero(&self, rng: &mut dyn RngCore) -> Result<Ciphertext, HeError> {
        self.encrypt(&SlotVector::zeros(self.slot_count()), rng)
    }

    fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError>;
    fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError>;
    fn negate(&self, a: &Ciphertext) -> Result<Ciphertext, HeError>;
    fn mul_plain(&self, a: &Ciphertext, p: &SlotVector) -> Result<Ciphertext, HeError>;

    fn mul_scalar(&self, a: &Ciphertext, c: u64) -> Result<Ciphertext, HeError> {
        let t = self.plain_modulus();
        self.mul_plain(a, &SlotVector::constant(self.slot_count(), t.reduce(c)))
    }

    /// Tensor product without relinearization (size 3 output).
    fn mul_no_relin(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError>;
    fn relinearize(&self, a: &Ciphertext) -> Result<Ciphertext, HeError>;

    fn mul(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.relinearize(&self.mul_no_relin(a, b)?)
    }

    /// Left rotation of both rows; negative steps rotate right.
    fn rotate(&self, a: &Ciphertext, step: i64) -> Result<Ciphertext, HeError>;
    fn row_swap(&self, a: &Ciphertext) -> Result<Ciphertext, HeError>;

    fn inner_sum(&self, a: &Ciphertext, block: usize) -> Result<Ciphertext, HeError> {
        self.inner_sum_strided(a, block, 1)
    }

    /// `out[i] = sum_{k < block} a[i + k * stride]` within each row, using
    /// rotations by `stride * 2^j`.
    fn inner_sum_strided(
        &self,
        a: &Ciphertext,
        block: usize,
        stride: usize,
    ) -> Result<Ciphertext, HeError> {
        let row = self.slot_count() / 2;
        if block == 0 || !block.is_power_of_two() || block * stride > row {
            return Err(HeError::BadBlock(block));
        }
        let mut acc = a.clone();
        let mut span = 1;
        while span < block {
            let r = self.rotate(&acc, (span * stride) as i64)?;
            acc = self.add(&acc, &r)?;
            span *= 2;
        }
        Ok(acc)
    }
}

/// Decryption, held only by the data owner.
pub trait Decryptor: Send + Sync {
    fn decrypt(&self, c: &Ciphertext) -> Result<SlotVector, HeError>;
}

/// Rotation steps that [`Evaluator::inner_sum_strided`] needs.
pub fn inner_sum_steps(block: usize, stride: usize) -> Vec<i64> {
    let mut out = Vec::new();
    let mut span = 1;
    while span < block {
        out.push((span * stride) as i64);
        span *= 2;
    }
    out
}
