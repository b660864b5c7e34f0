//! Plaintext stand-in for the BFV backend. Slot semantics are exact; noise is
//! modelled only as a multiplicative-depth counter that fails decryption
//! once it passes the configured limit.

use std::sync::Arc;

use rand::RngCore;

use crate::backend::{Ciphertext, Decryptor, Evaluator, HeError, HeParams};
use crate::ring::{Modulus, RingError, SlotVector};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockCiphertext {
    pub slots: SlotVector,
    pub depth: u32,
    pub size: u8,
    /// Stands in for encryption randomness so that equal plaintexts give
    /// unequal ciphertexts.
    pub nonce: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockParams {
    pub n: usize,
    pub t: Arc<Modulus>,
    pub depth_limit: u32,
}

impl MockParams {
    /// `t` must be prime; `n` a power of two (no NTT constraint applies).
    pub fn new(n: usize, t: u64, depth_limit: u32) -> Result<Self, RingError> {
        if n < 2 || !n.is_power_of_two() {
            return Err(RingError::BadDegree(n));
        }
        Ok(MockParams {
            n,
            t: Arc::new(Modulus::new(t)?),
            depth_limit,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    params: MockParams,
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = a ^ b.rotate_left(17) ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl MockBackend {
    pub fn new(params: MockParams) -> Self {
        MockBackend { params }
    }

    pub fn mock_params(&self) -> &MockParams {
        &self.params
    }

    fn unwrap<'a>(&self, c: &'a Ciphertext) -> Result<&'a MockCiphertext, HeError> {
        match c {
            Ciphertext::Mock(m) if m.slots.len() == self.params.n => Ok(m),
            _ => Err(HeError::BackendMismatch),
        }
    }

    fn check_len(&self, v: &SlotVector) -> Result<(), HeError> {
        if v.len() != self.params.n {
            return Err(HeError::SlotLength {
                got: v.len(),
                expected: self.params.n,
            });
        }
        Ok(())
    }

    fn unary(
        &self,
        a: &Ciphertext,
        tag: u64,
        f: impl FnOnce(&SlotVector) -> SlotVector,
    ) -> Result<Ciphertext, HeError> {
        let a = self.unwrap(a)?;
        Ok(Ciphertext::Mock(MockCiphertext {
            slots: f(&a.slots),
            depth: a.depth,
            size: a.size,
            nonce: mix(a.nonce, tag),
        }))
    }
}

impl Evaluator for MockBackend {
    fn params(&self) -> HeParams {
        HeParams::Mock(self.params.clone())
    }

    fn encrypt(&self, m: &SlotVector, rng: &mut dyn RngCore) -> Result<Ciphertext, HeError> {
        self.check_len(m)?;
        let t = &self.params.t;
        Ok(Ciphertext::Mock(MockCiphertext {
            slots: SlotVector(m.0.iter().map(|&x| t.reduce(x)).collect()),
            depth: 0,
            size: 2,
            nonce: rng.next_u64(),
        }))
    }

    fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        let (a, b) = (self.unwrap(a)?, self.unwrap(b)?);
        Ok(Ciphertext::Mock(MockCiphertext {
            slots: a.slots.add(&b.slots, &self.params.t),
            depth: a.depth.max(b.depth),
            size: a.size.max(b.size),
            nonce: mix(a.nonce, b.nonce),
        }))
    }

    fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        let (a, b) = (self.unwrap(a)?, self.unwrap(b)?);
        Ok(Ciphertext::Mock(MockCiphertext {
            slots: a.slots.sub(&b.slots, &self.params.t),
            depth: a.depth.max(b.depth),
            size: a.size.max(b.size),
            nonce: mix(a.nonce, !b.nonce),
        }))
    }

    fn negate(&self, a: &Ciphertext) -> Result<Ciphertext, HeError> {
        let t = self.params.t.clone();
        self.unary(a, 1, |s| SlotVector(s.0.iter().map(|&x| t.neg(x)).collect()))
    }

    fn mul_plain(&self, a: &Ciphertext, p: &SlotVector) -> Result<Ciphertext, HeError> {
        self.check_len(p)?;
        let t = self.params.t.clone();
        self.unary(a, 2, |s| s.mul(p, &t))
    }

    fn mul_no_relin(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        let (a, b) = (self.unwrap(a)?, self.unwrap(b)?);
        for c in [a, b] {
            if c.size != 2 {
                return Err(HeError::CiphertextSize {
                    expected: 2,
                    got: c.size as usize,
                });
            }
        }
        Ok(Ciphertext::Mock(MockCiphertext {
            slots: a.slots.mul(&b.slots, &self.params.t),
            depth: a.depth.max(b.depth) + 1,
            size: 3,
            nonce: mix(a.nonce, b.nonce.wrapping_add(3)),
        }))
    }

    fn relinearize(&self, a: &Ciphertext) -> Result<Ciphertext, HeError> {
        let a = self.unwrap(a)?;
        Ok(Ciphertext::Mock(MockCiphertext {
            size: 2,
            ..a.clone()
        }))
    }

    fn rotate(&self, a: &Ciphertext, step: i64) -> Result<Ciphertext, HeError> {
        if self.unwrap(a)?.size != 2 {
            return Err(HeError::CiphertextSize { expected: 2, got: 3 });
        }
        self.unary(a, (step as u64).wrapping_add(4), |s| s.rotate(step))
    }

    fn row_swap(&self, a: &Ciphertext) -> Result<Ciphertext, HeError> {
        if self.unwrap(a)?.size != 2 {
            return Err(HeError::CiphertextSize { expected: 2, got: 3 });
        }
        self.unary(a, 5, |s| s.row_swap())
    }
}

impl Decryptor for MockBackend {
    fn decrypt(&self, c: &Ciphertext) -> Result<SlotVector, HeError> {
        let c = self.unwrap(c)?;
        if c.depth > self.params.depth_limit {
            return Err(HeError::DecryptionFailure(
                c.depth as f64 / self.params.depth_limit.max(1) as f64,
            ));
        }
        Ok(c.slots.clone())
    }
}
