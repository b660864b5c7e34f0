//! Ring arithmetic and a leveled BFV backend over an RNS modulus chain, plus
//! a mock backend with identical slot semantics for fast simulation.

pub mod backend;
pub mod bfv;
pub mod container;
pub mod mock;
pub mod params;
pub mod ring;
pub mod rns;

use std::sync::Arc;

use rand::RngCore;

pub use backend::{inner_sum_steps, BackendTag, Ciphertext, Decryptor, Evaluator, HeError, HeParams};
pub use bfv::{BfvCiphertext, BfvDecryptor, BfvEvaluator, GaloisKeys, KeySwitchKey, PublicKey, SecretKey};
pub use mock::{MockBackend, MockCiphertext, MockParams};
pub use params::{ParamSpec, Params};
pub use ring::{BatchEncoder, Domain, Modulus, Poly, RingError, SlotVector};

/// A backend with both halves: the public evaluator and the decryptor.
#[derive(Clone)]
pub enum Backend {
    Bfv {
        eval: Arc<BfvEvaluator>,
        dec: Arc<BfvDecryptor>,
    },
    Mock(Arc<MockBackend>),
}

impl Backend {
    /// Fresh BFV keys with Galois keys for `steps` (and the row swap if asked).
    pub fn bfv(params: &Params, steps: &[i64], row_swap: bool, rng: &mut dyn RngCore) -> Self {
        let sk = SecretKey::generate(params, rng);
        let pk = sk.public_key(rng);
        let rlk = sk.relin_key(rng);
        let gk = sk.galois_keys(steps, row_swap, rng);
        Backend::Bfv {
            eval: Arc::new(BfvEvaluator::new(pk, Some(rlk), gk)),
            dec: Arc::new(BfvDecryptor::new(sk)),
        }
    }

    pub fn mock(params: MockParams) -> Self {
        Backend::Mock(Arc::new(MockBackend::new(params)))
    }

    pub fn evaluator(&self) -> &dyn Evaluator {
        match self {
            Backend::Bfv { eval, .. } => eval.as_ref(),
            Backend::Mock(m) => m.as_ref(),
        }
    }

    pub fn decryptor(&self) -> &dyn Decryptor {
        match self {
            Backend::Bfv { dec, .. } => dec.as_ref(),
            Backend::Mock(m) => m.as_ref(),
        }
    }

    pub fn params(&self) -> HeParams {
        self.evaluator().params()
    }

    pub fn tag(&self) -> BackendTag {
        match self {
            Backend::Bfv { .. } => BackendTag::Bfv,
            Backend::Mock(_) => BackendTag::Mock,
        }
    }
}
