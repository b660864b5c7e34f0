//! Replication authenticator. Every logical slot expands to a block of
//! `lambda` physical slots: the secret half `S` carries PRF challenges, the
//! rest carry copies of the message. Tags are hash trees over input tags.

use std::fmt;
use std::sync::Arc;

use rand::seq::index;
use rand::RngCore;
use vhe_bfv::container::{self, Reader};
use vhe_bfv::{Backend, Ciphertext, Evaluator, HeError, HeParams, Params, SlotVector};

use crate::circuit::{
    eval_challenge, evaluate, hash_tree_eval, Convention, Gate, Interpreter, LabeledProgram,
};
use crate::labels::{prf_tag, prf_zt, Digest, Identifier, LabelRegistry, PrfKey};
use crate::{AuthError, RejectCause, Verdict};

/// Container kind for a serialized [`RepAuth`].
pub const KIND_REP_AUTH: u8 = 0x20;

/// Where logical slots sit inside the physical ciphertexts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepLayout {
    pub lambda: usize,
    /// Logical vector length.
    pub width: usize,
    /// Physical slots per ciphertext.
    pub slots: usize,
}

impl RepLayout {
    pub fn new(lambda: usize, width: usize, slots: usize) -> Result<Self, AuthError> {
        if lambda < 2 || !lambda.is_power_of_two() || lambda > slots / 2 {
            return Err(AuthError::InvalidParameter(format!(
                "lambda {lambda} must be a power of two in [2, {}]",
                slots / 2
            )));
        }
        if width == 0 {
            return Err(AuthError::InvalidParameter("empty vector".into()));
        }
        Ok(RepLayout {
            lambda,
            width,
            slots,
        })
    }

    /// Logical slots per ciphertext.
    pub fn chunk_width(&self) -> usize {
        self.slots / self.lambda
    }

    /// `ceil(width * lambda / N)`.
    pub fn ciphertexts(&self) -> usize {
        (self.width * self.lambda).div_ceil(self.slots)
    }

    /// Ciphertext index and first physical slot of logical slot `i`'s block.
    /// Logical rows map onto physical rows so rotations stay row-local.
    pub fn locate(&self, i: usize) -> (usize, usize) {
        let c = self.chunk_width();
        let (chunk, k) = (i / c, i % c);
        let half = c / 2;
        (chunk, (k / half) * (self.slots / 2) + (k % half) * self.lambda)
    }

    /// Spread a logical vector over chunk `chunk`, one value per block.
    fn expand(&self, v: &SlotVector, chunk: usize) -> SlotVector {
        let mut out = vec![0u64; self.slots];
        let c = self.chunk_width();
        for k in 0..c {
            let i = chunk * c + k;
            if i < v.len() {
                let (_, base) = self.locate(i);
                out[base..base + self.lambda].fill(v.0[i]);
            }
        }
        SlotVector(out)
    }
}

/// Client-side secret: PRF key, challenge set and decryption capability.
pub struct RepSecret {
    key: PrfKey,
    lambda: usize,
    in_subset: Vec<bool>,
    backend: Backend,
    registry: Arc<LabelRegistry>,
}

impl fmt::Debug for RepSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RepSecret")
            .field("lambda", &self.lambda)
            .finish_non_exhaustive()
    }
}

impl RepSecret {
    /// Samples `K` and a uniform `lambda/2`-subset `S` of `[lambda]`.
    pub fn keygen(lambda: usize, backend: Backend, rng: &mut dyn RngCore) -> Result<Self, AuthError> {
        if lambda < 8 {
            return Err(AuthError::InvalidParameter(format!("lambda {lambda} is below 8")));
        }
        RepLayout::new(lambda, 1, backend.evaluator().slot_count())?;
        let key = PrfKey::generate(rng);
        let subset = index::sample(rng, lambda, lambda / 2).into_vec();
        Self::from_parts(key, lambda, &subset, backend)
    }

    /// Fixed key and challenge set; `lambda >= 2`.
    pub fn from_parts(
        key: PrfKey,
        lambda: usize,
        subset: &[usize],
        backend: Backend,
    ) -> Result<Self, AuthError> {
        RepLayout::new(lambda, 1, backend.evaluator().slot_count())?;
        let mut in_subset = vec![false; lambda];
        for &j in subset {
            if j >= lambda || in_subset[j] {
                return Err(AuthError::InvalidParameter("malformed challenge set".into()));
            }
            in_subset[j] = true;
        }
        if subset.len() != lambda / 2 {
            return Err(AuthError::InvalidParameter(format!(
                "challenge set must have {} elements",
                lambda / 2
            )));
        }
        Ok(RepSecret {
            key,
            lambda,
            in_subset,
            backend,
            registry: Arc::new(LabelRegistry::new()),
        })
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn subset(&self) -> Vec<usize> {
        (0..self.lambda).filter(|&j| self.in_subset[j]).collect()
    }

    pub fn key(&self) -> &PrfKey {
        &self.key
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn registry(&self) -> &LabelRegistry {
        &self.registry
    }

    pub fn layout(&self, width: usize) -> Result<RepLayout, AuthError> {
        RepLayout::new(self.lambda, width, self.backend.evaluator().slot_count())
    }
}

/// BFV keys for a REP deployment: rotation keys for every logical step
/// scaled by `lambda`.
pub fn rep_keygen(
    lambda: usize,
    params: &Params,
    logical_steps: &[i64],
    row_swap: bool,
    rng: &mut dyn RngCore,
) -> Result<RepSecret, AuthError> {
    let steps: Vec<i64> = logical_steps.iter().map(|r| r * lambda as i64).collect();
    let backend = Backend::bfv(params, &steps, row_swap, rng);
    RepSecret::keygen(lambda, backend, rng)
}

/// Physical rotation steps a program needs under REP.
pub fn rep_galois_steps(prog: &LabeledProgram, lambda: usize) -> Vec<i64> {
    prog.circuit.rotation_steps(lambda).into_iter().collect()
}

/// Encrypted extended vector plus its tag.
#[derive(Debug, Clone, PartialEq)]
pub struct RepAuth {
    pub cts: Vec<Ciphertext>,
    pub tag: Digest,
    pub layout: RepLayout,
}

impl RepAuth {
    pub fn to_bytes(&self, params: &HeParams) -> Vec<u8> {
        let mut p = Vec::new();
        p.extend_from_slice(&(self.layout.lambda as u32).to_le_bytes());
        p.extend_from_slice(&(self.layout.width as u64).to_le_bytes());
        p.extend_from_slice(&self.tag.0);
        container::write_ciphertexts(&self.cts, &mut p);
        container::seal(KIND_REP_AUTH, params, &p)
    }

    pub fn from_bytes(bytes: &[u8], params: &HeParams) -> Result<Self, AuthError> {
        let mut r = Reader::new(container::open_for(bytes, KIND_REP_AUTH, params)?);
        let lambda = r.u32()? as usize;
        let width = r.u64()? as usize;
        let mut tag = [0u8; 64];
        tag.copy_from_slice(r.take(64)?);
        let cts = container::read_ciphertexts(&mut r, params)?;
        r.finish()?;
        let layout = RepLayout::new(lambda, width, params.slot_count())?;
        if cts.len() != layout.ciphertexts() {
            return Err(AuthError::LayoutMismatch);
        }
        Ok(RepAuth {
            cts,
            tag: Digest(tag),
            layout,
        })
    }
}

/// Plaintext extended vectors for `m` under `label`, one per ciphertext.
pub fn rep_encode(m: &SlotVector, label: &str, sk: &RepSecret) -> Result<Vec<SlotVector>, AuthError> {
    let layout = sk.layout(m.len())?;
    let t = sk.backend.evaluator().plain_modulus();
    let mut out = vec![SlotVector::zeros(layout.slots); layout.ciphertexts()];
    for i in 0..layout.ciphertexts() * layout.chunk_width() {
        let (chunk, base) = layout.locate(i);
        let v = m.0.get(i).map_or(0, |&x| t.reduce(x));
        for j in 0..sk.lambda {
            out[chunk].0[base + j] = if sk.in_subset[j] {
                prf_zt(&sk.key, &Identifier::slot(label, i as u64), Some(j as u64), &t)
            } else {
                v
            };
        }
    }
    Ok(out)
}

/// Authenticates `m` under a fresh label.
pub fn rep_auth(
    m: &SlotVector,
    label: &str,
    sk: &RepSecret,
    rng: &mut dyn RngCore,
) -> Result<RepAuth, AuthError> {
    let layout = sk.layout(m.len())?;
    sk.registry.issue(label)?;
    let ev = sk.backend.evaluator();
    let cts = rep_encode(m, label, sk)?
        .iter()
        .map(|v| ev.encrypt(v, rng))
        .collect::<Result<_, _>>()?;
    Ok(RepAuth {
        cts,
        tag: prf_tag(&sk.key, &Identifier::new(label)),
        layout,
    })
}

struct RepInterp<'a> {
    auths: &'a [RepAuth],
    chunk: usize,
    layout: RepLayout,
    ev: &'a dyn Evaluator,
}

impl Interpreter for RepInterp<'_> {
    type Value = Ciphertext;
    type Error = HeError;

    fn gate(&mut self, _: usize, g: &Gate, a: &[&Ciphertext]) -> Result<Ciphertext, HeError> {
        let (ev, lambda) = (self.ev, self.layout.lambda);
        match g {
            Gate::Input { index } => Ok(self.auths[*index].cts[self.chunk].clone()),
            Gate::Add { .. } => ev.add(a[0], a[1]),
            Gate::Sub { .. } => ev.sub(a[0], a[1]),
            Gate::Mul { relin: true, .. } => ev.mul(a[0], a[1]),
            Gate::Mul { relin: false, .. } => ev.mul_no_relin(a[0], a[1]),
            Gate::MulPlain { constant, .. } => {
                ev.mul_plain(a[0], &self.layout.expand(constant, self.chunk))
            }
            Gate::Rotate { step, .. } => ev.rotate(a[0], step * lambda as i64),
            Gate::RowSwap { .. } => ev.row_swap(a[0]),
            Gate::InnerSum { block, .. } => ev.inner_sum_strided(a[0], *block, lambda),
        }
    }
}

/// Evaluates the program on every ciphertext chunk and folds the tags.
pub fn rep_eval(
    prog: &LabeledProgram,
    auths: &[RepAuth],
    ev: &dyn Evaluator,
) -> Result<RepAuth, AuthError> {
    prog.validate()?;
    if auths.len() != prog.inputs.len() {
        return Err(AuthError::LayoutMismatch);
    }
    let layout = auths[0].layout;
    if auths.iter().any(|a| a.layout != layout || a.cts.len() != layout.ciphertexts())
        || layout.width != prog.circuit.slots
        || layout.slots != ev.slot_count()
    {
        return Err(AuthError::LayoutMismatch);
    }
    if prog.circuit.has_rotations() && layout.width != layout.chunk_width() {
        return Err(AuthError::CrossCiphertextRotation);
    }
    let cts = (0..layout.ciphertexts())
        .map(|chunk| {
            evaluate(
                &prog.circuit,
                &mut RepInterp {
                    auths,
                    chunk,
                    layout,
                    ev,
                },
            )
        })
        .collect::<Result<_, _>>()?;
    let tags: Vec<Digest> = auths.iter().map(|a| a.tag).collect();
    Ok(RepAuth {
        cts,
        tag: hash_tree_eval(&prog.circuit, &tags)?,
        layout,
    })
}

/// Decrypted physical vectors, or `None` if any chunk fails to decrypt.
fn decrypt_all(auth: &RepAuth, sk: &RepSecret) -> Option<Vec<SlotVector>> {
    auth.cts
        .iter()
        .map(|c| sk.backend.decryptor().decrypt(c).ok())
        .collect()
}

/// Reads the output block from the first replica outside `S`.
pub fn rep_decode(prog: &LabeledProgram, auth: &RepAuth, sk: &RepSecret) -> Result<SlotVector, AuthError> {
    let plain = auth
        .cts
        .iter()
        .map(|c| sk.backend.decryptor().decrypt(c))
        .collect::<Result<Vec<_>, _>>()?;
    read_block(prog, auth.layout, sk, &plain)
}

fn read_block(
    prog: &LabeledProgram,
    layout: RepLayout,
    sk: &RepSecret,
    plain: &[SlotVector],
) -> Result<SlotVector, AuthError> {
    let b = prog.output_block;
    if b.start + b.len > layout.width {
        return Err(AuthError::LayoutMismatch);
    }
    let j = sk.in_subset.iter().position(|s| !s).expect("S is a proper subset");
    Ok(SlotVector(
        (b.start..b.start + b.len)
            .map(|i| {
                let (chunk, base) = layout.locate(i);
                plain[chunk].0[base + j]
            })
            .collect(),
    ))
}

/// Checks the tag, then every challenge slot, then every replica slot of
/// the output block against `m_claimed`.
pub fn rep_verify(
    m_claimed: &SlotVector,
    prog: &LabeledProgram,
    auth: &RepAuth,
    sk: &RepSecret,
) -> Verdict {
    let layout = auth.layout;
    let b = prog.output_block;
    if prog.validate().is_err()
        || layout.lambda != sk.lambda
        || layout.width != prog.circuit.slots
        || auth.cts.len() != layout.ciphertexts()
        || m_claimed.len() != b.len
    {
        return Verdict::Reject(RejectCause::Malformed);
    }
    let leaves: Vec<Digest> = prog
        .inputs
        .iter()
        .map(|l| prf_tag(&sk.key, &Identifier::new(l)))
        .collect();
    match hash_tree_eval(&prog.circuit, &leaves) {
        Ok(root) if root == auth.tag => {}
        _ => return Verdict::Reject(RejectCause::TagMismatch),
    }
    let Some(plain) = decrypt_all(auth, sk) else {
        return Verdict::Reject(RejectCause::Decryption);
    };
    let t = sk.backend.evaluator().plain_modulus();
    for replica in (0..sk.lambda).filter(|&j| sk.in_subset[j]) {
        let Ok(rho) = eval_challenge(prog, &sk.key, &t, Convention::Rep { replica }) else {
            return Verdict::Reject(RejectCause::Malformed);
        };
        for slot in b.start..b.start + b.len {
            let (chunk, base) = layout.locate(slot);
            if plain[chunk].0[base + replica] != rho.0[slot] {
                return Verdict::Reject(RejectCause::ChallengeSlot { slot, replica });
            }
        }
    }
    for replica in (0..sk.lambda).filter(|&j| !sk.in_subset[j]) {
        for slot in b.start..b.start + b.len {
            let (chunk, base) = layout.locate(slot);
            if plain[chunk].0[base + replica] != m_claimed.0[slot - b.start] {
                return Verdict::Reject(RejectCause::ReplicaSlot { slot, replica });
            }
        }
    }
    Verdict::Accept
}

/// Decodes and verifies in one pass over the decryptions.
pub fn rep_open(prog: &LabeledProgram, auth: &RepAuth, sk: &RepSecret) -> (Option<SlotVector>, Verdict) {
    let Some(plain) = decrypt_all(auth, sk) else {
        return (None, Verdict::Reject(RejectCause::Decryption));
    };
    if auth.layout.lambda != sk.lambda || plain.len() != auth.layout.ciphertexts() {
        return (None, Verdict::Reject(RejectCause::Malformed));
    }
    match read_block(prog, auth.layout, sk, &plain) {
        Ok(m) => {
            let v = rep_verify(&m, prog, auth, sk);
            (Some(m), v)
        }
        Err(_) => (None, Verdict::Reject(RejectCause::Malformed)),
    }
}
