//! Parameter sets and the derived constants shared by every BFV operation.

use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::rns::{BaseConverter, RnsBasis};
use crate::ring::{find_ntt_primes, find_plaintext_prime, BatchEncoder, Modulus, RingError};
use crate::HeError;

/// Bit size of the auxiliary primes used while tensoring.
const AUX_PRIME_BITS: u32 = 59;

/// Serializable description of a parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub n: usize,
    pub t: u64,
    pub q: Vec<u64>,
    /// Centered-binomial parameter; variance is `eta / 2`.
    pub eta: u32,
    /// Key-switching digit width in bits.
    pub decomp_bits: u32,
}

impl ParamSpec {
    /// Ring degree `n`, plaintext prime of `t_bits`, and primes with the
    /// given bit sizes.
    pub fn build(n: usize, t_bits: u32, q_bits: &[u32]) -> Result<Self, RingError> {
        let t = find_plaintext_prime(t_bits, n)?;
        let mut q = Vec::new();
        for &b in q_bits {
            let p = find_ntt_primes(b, n, 1, &q)?[0];
            q.push(p);
        }
        Ok(ParamSpec {
            n,
            t,
            q,
            eta: 21,
            decomp_bits: 16,
        })
    }

    /// Same chain with a different plaintext prime.
    pub fn with_plain_bits(mut self, bits: u32) -> Result<Self, RingError> {
        self.t = find_plaintext_prime(bits, self.n)?;
        Ok(self)
    }

    /// Named presets: `n4096` (109-bit q), `n8192` (218-bit), `n16384`
    /// (438-bit) and `n32768` (~700-bit).
    pub fn preset(name: &str) -> Result<Self, HeError> {
        let spec = match name {
            "n4096" => ParamSpec::build(4096, 16, &[55, 54]),
            "n4096-d3" => ParamSpec::build(4096, 16, &[55, 55, 55]),
            "n8192" => ParamSpec::build(8192, 17, &[55, 55, 54, 54]),
            "n16384" => ParamSpec::build(16384, 17, &[55, 55, 55, 55, 55, 55, 54, 54]),
            "n32768" => ParamSpec::build(32768, 17, &[54; 13]),
            _ => return Err(HeError::UnknownPreset(name.to_string())),
        };
        Ok(spec?)
    }

    /// Conservative multiplicative depth for fresh inputs: the fresh budget
    /// (about `log q - log t - 10` bits) over a per-level cost of
    /// `log t + log N + 3` bits.
    pub fn depth_capacity(&self) -> u32 {
        let log_q: f64 = self.q.iter().map(|&q| (q as f64).log2()).sum();
        let log_t = (self.t as f64).log2();
        let log_n = (self.n as f64).log2();
        let fresh = log_q - log_t - 10.0;
        (fresh / (log_t + log_n + 3.0)).floor().max(0.0) as u32
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["n4096", "n4096-d3", "n8192", "n16384", "n32768"]
    }
}

/// Fully initialized parameters. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Params(Arc<ParamsInner>);

#[derive(Debug)]
pub struct ParamsInner {
    pub spec: ParamSpec,
    pub n: usize,
    pub t: Arc<Modulus>,
    pub q: RnsBasis,
    pub p: RnsBasis,
    pub encoder: BatchEncoder,
    /// `floor(Q / t) mod q_i`
    pub delta: Vec<u64>,
    /// `Q mod t`
    pub q_mod_t: u64,
    pub q_to_p: BaseConverter,
    pub p_to_q: BaseConverter,
    /// `Q^-1 mod p_j`
    pub q_inv_mod_p: Vec<u64>,
    /// Digits per limb for key switching.
    pub digits: usize,
}

impl std::ops::Deref for Params {
    type Target = ParamsInner;
    fn deref(&self) -> &ParamsInner {
        &self.0
    }
}

impl PartialEq for Params {
    fn eq(&self, other: &Self) -> bool {
        self.0.spec == other.0.spec
    }
}

impl Params {
    pub fn new(spec: ParamSpec) -> Result<Self, HeError> {
        let n = spec.n;
        if spec.q.is_empty() {
            return Err(HeError::InvalidParams("empty modulus chain".into()));
        }
        if spec.decomp_bits == 0 || spec.decomp_bits > 30 {
            return Err(HeError::InvalidParams("decomposition width must be 1..=30".into()));
        }
        let t = Arc::new(Modulus::with_ntt(spec.t, n)?);
        let mut seen = spec.q.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != spec.q.len() || spec.q.contains(&spec.t) {
            return Err(HeError::InvalidParams("moduli must be distinct".into()));
        }
        let q_moduli = spec
            .q
            .iter()
            .map(|&v| Modulus::with_ntt(v, n).map(Arc::new))
            .collect::<Result<Vec<_>, _>>()?;
        let q = RnsBasis::new(q_moduli)?;
        if q.product() <= &BigUint::from(spec.t) {
            return Err(HeError::InvalidParams("q must exceed t".into()));
        }

        // The tensor of two centered lifts is below N * Q^2 / 2 in magnitude
        // and its t/Q scaling below t * N * Q; P must hold the latter with slack.
        let need = q.bits() + t.bits() as u64 + n.trailing_zeros() as u64 + 6;
        let aux_count = need.div_ceil(AUX_PRIME_BITS as u64 - 1) as usize;
        let aux = find_ntt_primes(AUX_PRIME_BITS, n, aux_count, &spec.q)?;
        let p = RnsBasis::new(
            aux.iter()
                .map(|&v| Modulus::with_ntt(v, n).map(Arc::new))
                .collect::<Result<Vec<_>, _>>()?,
        )?;

        let delta_big = q.product() / spec.t;
        let delta = q
            .moduli()
            .iter()
            .map(|m| (&delta_big % m.value()).to_u64().unwrap())
            .collect();
        let q_mod_t = q.product_mod(spec.t);
        let q_to_p = BaseConverter::new(&q, p.moduli());
        let p_to_q = BaseConverter::new(&p, q.moduli());
        let q_inv_mod_p = p
            .moduli()
            .iter()
            .map(|m| m.inv(q.product_mod(m.value())))
            .collect::<Result<Vec<_>, _>>()?;
        let max_bits = q.moduli().iter().map(|m| m.bits()).max().unwrap();
        let digits = max_bits.div_ceil(spec.decomp_bits) as usize;
        let encoder = BatchEncoder::new(t.clone())?;
        Ok(Params(Arc::new(ParamsInner {
            spec,
            n,
            t,
            q,
            p,
            encoder,
            delta,
            q_mod_t,
            q_to_p,
            p_to_q,
            q_inv_mod_p,
            digits,
        })))
    }

    pub fn preset(name: &str) -> Result<Self, HeError> {
        Params::new(ParamSpec::preset(name)?)
    }

    pub fn slot_count(&self) -> usize {
        self.n
    }

    /// Bits of the ciphertext modulus.
    pub fn log_q(&self) -> u64 {
        self.q.bits()
    }
}
