//! Polynomial-encoding authenticator. A wire carries encryptions of
//! `y_0..y_d` with `y_0` the message and `sum_i y_i * alpha^i` equal to the
//! wire's challenge value, slot by slot.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use vhe_bfv::container::{self, Reader};
use vhe_bfv::{Backend, Ciphertext, Evaluator, HeParams, Modulus, Params, SlotVector};

use crate::circuit::{
    challenge_inputs, eval_challenge, evaluate, Circuit, Convention, Gate, Interpreter,
    LabeledProgram,
};
use crate::labels::{prf_zt, Identifier, LabelRegistry, PrfKey};
use crate::{AuthError, RejectCause, Verdict};

/// Container kind for a serialized [`PeAuth`].
pub const KIND_PE_AUTH: u8 = 0x21;

pub const DEFAULT_MAX_DEGREE: usize = 8;

/// Client-side secret: PRF key, evaluation point and decryption capability.
pub struct PeSecret {
    key: PrfKey,
    alpha: u64,
    alpha_inv: u64,
    t: Arc<Modulus>,
    backend: Backend,
    registry: Arc<LabelRegistry>,
}

impl fmt::Debug for PeSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeSecret")
            .field("t", &self.t.value())
            .finish_non_exhaustive()
    }
}

impl PeSecret {
    /// Samples `K` and `alpha` uniform in `[1, t)`.
    pub fn keygen(backend: Backend, rng: &mut dyn RngCore) -> Result<Self, AuthError> {
        let t = backend.evaluator().plain_modulus();
        let key = PrfKey::generate(rng);
        let alpha = rng.gen_range(1..t.value());
        Self::from_parts(key, alpha, backend)
    }

    pub fn from_parts(key: PrfKey, alpha: u64, backend: Backend) -> Result<Self, AuthError> {
        let t = backend.evaluator().plain_modulus();
        if alpha == 0 || alpha >= t.value() {
            return Err(AuthError::InvalidParameter("alpha must lie in [1, t)".into()));
        }
        let alpha_inv = t.inv(alpha).map_err(vhe_bfv::HeError::from)?;
        Ok(PeSecret {
            key,
            alpha,
            alpha_inv,
            t,
            backend,
            registry: Arc::new(LabelRegistry::new()),
        })
    }

    pub fn alpha(&self) -> u64 {
        self.alpha
    }

    pub fn alpha_inv(&self) -> u64 {
        self.alpha_inv
    }

    pub fn key(&self) -> &PrfKey {
        &self.key
    }

    pub fn t(&self) -> &Arc<Modulus> {
        &self.t
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn registry(&self) -> &LabelRegistry {
        &self.registry
    }

    /// `sum_i y_i * alpha^i`, slot-wise.
    pub fn evaluate_at_alpha(&self, ys: &[SlotVector]) -> SlotVector {
        let t = &self.t;
        let n = ys.first().map_or(0, |y| y.len());
        SlotVector(
            (0..n)
                .map(|j| {
                    ys.iter()
                        .rev()
                        .fold(0, |acc, y| t.add(t.mul(acc, self.alpha), y.0[j]))
                })
                .collect(),
        )
    }

    /// Decrypts every component.
    pub fn decrypt(&self, auth: &PeAuth) -> Result<Vec<SlotVector>, AuthError> {
        auth.cts
            .iter()
            .map(|c| Ok(self.backend.decryptor().decrypt(c)?))
            .collect()
    }
}

/// BFV keys for a PE deployment with the given native rotation steps.
pub fn pe_keygen(
    params: &Params,
    steps: &[i64],
    row_swap: bool,
    rng: &mut dyn RngCore,
) -> Result<PeSecret, AuthError> {
    let backend = Backend::bfv(params, steps, row_swap, rng);
    PeSecret::keygen(backend, rng)
}

/// Encrypted encoding `c_0..c_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeAuth {
    pub cts: Vec<Ciphertext>,
}

impl PeAuth {
    pub fn degree(&self) -> usize {
        self.cts.len() - 1
    }

    pub fn to_bytes(&self, params: &HeParams) -> Vec<u8> {
        let mut p = Vec::new();
        p.extend_from_slice(&(self.degree() as u32).to_le_bytes());
        container::write_ciphertexts(&self.cts, &mut p);
        container::seal(KIND_PE_AUTH, params, &p)
    }

    pub fn from_bytes(bytes: &[u8], params: &HeParams) -> Result<Self, AuthError> {
        let mut r = Reader::new(container::open_for(bytes, KIND_PE_AUTH, params)?);
        let degree = r.u32()? as usize;
        let cts = container::read_ciphertexts(&mut r, params)?;
        r.finish()?;
        if cts.len() != degree + 1 {
            return Err(AuthError::LayoutMismatch);
        }
        Ok(PeAuth { cts })
    }
}

/// Per-slot challenges of an input: `r[j] = F_K((label, j))`.
pub fn pe_challenge(label: &str, width: usize, key: &PrfKey, t: &Modulus) -> SlotVector {
    SlotVector(
        (0..width)
            .map(|j| prf_zt(key, &Identifier::slot(label, j as u64), None, t))
            .collect(),
    )
}

/// Plaintext encoding `(m, (r - m) / alpha)`.
pub fn pe_encode(m: &SlotVector, label: &str, sk: &PeSecret) -> (SlotVector, SlotVector) {
    let t = &sk.t;
    let m = SlotVector(m.0.iter().map(|&x| t.reduce(x)).collect());
    let r = pe_challenge(label, m.len(), &sk.key, t);
    let y1 = r.sub(&m, t).scale(sk.alpha_inv, t);
    (m, y1)
}

/// Authenticates `m` (one value per slot) under a fresh label.
pub fn pe_auth(
    m: &SlotVector,
    label: &str,
    sk: &PeSecret,
    rng: &mut dyn RngCore,
) -> Result<PeAuth, AuthError> {
    let ev = sk.backend.evaluator();
    if m.len() != ev.slot_count() {
        return Err(AuthError::WidthMismatch {
            expected: ev.slot_count(),
            got: m.len(),
        });
    }
    sk.registry.issue(label)?;
    let (y0, y1) = pe_encode(m, label, sk);
    Ok(PeAuth {
        cts: vec![ev.encrypt(&y0, rng)?, ev.encrypt(&y1, rng)?],
    })
}

/// Interactive degree reduction, run by the cloud when a wire's degree
/// passes 2.
pub trait Requadratizer {
    fn requadratize(&mut self, gate: usize, auth: PeAuth) -> Result<PeAuth, AuthError>;
}

/// Cloud-side evaluation context.
pub struct PeEvaluator<'a> {
    pub ev: &'a dyn Evaluator,
    pub max_degree: usize,
    /// Randomness for the zero encryptions used as padding.
    pub rng: &'a mut dyn RngCore,
}

impl PeEvaluator<'_> {
    fn pad(&mut self, a: &PeAuth, d: usize) -> Result<Vec<Ciphertext>, AuthError> {
        let mut cts = a.cts.clone();
        while cts.len() <= d {
            cts.push(self.ev.encrypt_zero(self.rng)?);
        }
        Ok(cts)
    }

    /// One gate on authenticated operands (`b` for binary gates).
    pub fn gate(&mut self, g: &Gate, a: &PeAuth, b: Option<&PeAuth>) -> Result<PeAuth, AuthError> {
        let ev = self.ev;
        let each = |f: &dyn Fn(&Ciphertext) -> Result<Ciphertext, vhe_bfv::HeError>| {
            a.cts.iter().map(f).collect::<Result<Vec<_>, _>>()
        };
        let cts = match g {
            Gate::Input { .. } => a.cts.clone(),
            Gate::Add { .. } | Gate::Sub { .. } => {
                let b = b.expect("binary gate");
                let d = a.degree().max(b.degree());
                let (x, y) = (self.pad(a, d)?, self.pad(b, d)?);
                x.iter()
                    .zip(&y)
                    .map(|(p, q)| match g {
                        Gate::Add { .. } => ev.add(p, q),
                        _ => ev.sub(p, q),
                    })
                    .collect::<Result<_, _>>()?
            }
            Gate::Mul { relin, .. } => {
                let b = b.expect("binary gate");
                let d = a.degree() + b.degree();
                if d > self.max_degree {
                    return Err(AuthError::DegreeLimit {
                        degree: d,
                        limit: self.max_degree,
                    });
                }
                let mul = |p: &Ciphertext, q: &Ciphertext| {
                    if *relin {
                        ev.mul(p, q)
                    } else {
                        ev.mul_no_relin(p, q)
                    }
                };
                let mut out: Vec<Option<Ciphertext>> = vec![None; d + 1];
                for (i, p) in a.cts.iter().enumerate() {
                    for (j, q) in b.cts.iter().enumerate() {
                        let prod = mul(p, q)?;
                        out[i + j] = Some(match out[i + j].take() {
                            None => prod,
                            Some(acc) => ev.add(&acc, &prod)?,
                        });
                    }
                }
                out.into_iter().map(|c| c.expect("every degree is hit")).collect()
            }
            Gate::MulPlain { constant, .. } => each(&|c| ev.mul_plain(c, constant))?,
            Gate::Rotate { step, .. } => each(&|c| ev.rotate(c, *step))?,
            Gate::RowSwap { .. } => each(&|c| ev.row_swap(c))?,
            Gate::InnerSum { block, .. } => each(&|c| ev.inner_sum(c, *block))?,
        };
        Ok(PeAuth { cts })
    }
}

struct PeInterp<'a, 'b, 'c> {
    auths: &'a [PeAuth],
    cx: PeEvaluator<'b>,
    req: Option<&'c mut dyn Requadratizer>,
}

impl Interpreter for PeInterp<'_, '_, '_> {
    type Value = PeAuth;
    type Error = AuthError;

    fn gate(&mut self, id: usize, g: &Gate, a: &[&PeAuth]) -> Result<PeAuth, AuthError> {
        let out = match g {
            Gate::Input { index } => self.auths[*index].clone(),
            _ => self.cx.gate(g, a[0], a.get(1).copied())?,
        };
        match self.req.as_deref_mut() {
            Some(req) if out.degree() > 2 => req.requadratize(id, out),
            _ => Ok(out),
        }
    }
}

/// Gate-by-gate evaluation. With `req`, any wire whose degree exceeds 2 is
/// brought back to degree 2 before it is used.
pub fn pe_eval(
    prog: &LabeledProgram,
    auths: &[PeAuth],
    cx: PeEvaluator<'_>,
    req: Option<&mut dyn Requadratizer>,
) -> Result<PeAuth, AuthError> {
    prog.validate()?;
    if auths.len() != prog.inputs.len() || auths.iter().any(|a| a.cts.len() < 2) {
        return Err(AuthError::LayoutMismatch);
    }
    if prog.circuit.slots != cx.ev.slot_count() {
        return Err(AuthError::WidthMismatch {
            expected: cx.ev.slot_count(),
            got: prog.circuit.slots,
        });
    }
    evaluate(
        &prog.circuit,
        &mut PeInterp {
            auths,
            cx,
            req,
        },
    )
}

/// Checks decrypted components against the claim and the challenge.
pub fn pe_check(
    m_claimed: &SlotVector,
    prog: &LabeledProgram,
    ys: &[SlotVector],
    sk: &PeSecret,
    offset: Option<&SlotVector>,
) -> Verdict {
    if ys.is_empty() || ys.iter().any(|y| y.len() != prog.circuit.slots) {
        return Verdict::Reject(RejectCause::Malformed);
    }
    if &ys[0] != m_claimed {
        return Verdict::Reject(RejectCause::ResultMismatch);
    }
    let Ok(mut rho) = eval_challenge(prog, &sk.key, &sk.t, Convention::Pe) else {
        return Verdict::Reject(RejectCause::Malformed);
    };
    if let Some(off) = offset {
        if off.len() != rho.len() {
            return Verdict::Reject(RejectCause::Malformed);
        }
        rho = rho.add(off, &sk.t);
    }
    let at_alpha = sk.evaluate_at_alpha(ys);
    match (0..rho.len()).find(|&j| at_alpha.0[j] != rho.0[j]) {
        Some(slot) => Verdict::Reject(RejectCause::Encoding { slot }),
        None => Verdict::Accept,
    }
}

/// Accepts iff `c_0` decrypts to `m_claimed` and the encoding evaluates to
/// the challenge plus `offset` at `alpha`.
pub fn pe_verify(
    m_claimed: &SlotVector,
    prog: &LabeledProgram,
    auth: &PeAuth,
    sk: &PeSecret,
    offset: Option<&SlotVector>,
) -> Verdict {
    match sk.decrypt(auth) {
        Ok(ys) => pe_check(m_claimed, prog, &ys, sk, offset),
        Err(_) => Verdict::Reject(RejectCause::Decryption),
    }
}

/// Decrypts, then verifies against the decrypted constant term.
pub fn pe_open(
    prog: &LabeledProgram,
    auth: &PeAuth,
    sk: &PeSecret,
    offset: Option<&SlotVector>,
) -> (Option<SlotVector>, Verdict) {
    match sk.decrypt(auth) {
        Ok(ys) => {
            let v = pe_check(&ys[0], prog, &ys, sk, offset);
            (Some(ys[0].clone()), v)
        }
        Err(_) => (None, Verdict::Reject(RejectCause::Decryption)),
    }
}

/// Degree of every live wire, and the gates at which re-quadratization
/// fires when `requadratize` is set.
pub fn degree_profile(c: &Circuit, requadratize: bool) -> (Vec<Option<usize>>, Vec<usize>) {
    let live = c.live();
    let mut deg: Vec<Option<usize>> = vec![None; c.gates.len()];
    let mut rounds = Vec::new();
    for (i, g) in c.gates.iter().enumerate() {
        if !live[i] {
            continue;
        }
        let ops: Vec<usize> = g.operands().iter().map(|&o| deg[o].unwrap()).collect();
        let mut d = match g {
            Gate::Input { .. } => 1,
            Gate::Mul { .. } => ops[0] + ops[1],
            _ => ops.into_iter().max().unwrap(),
        };
        if requadratize && d > 2 {
            rounds.push(i);
            d = 2;
        }
        deg[i] = Some(d);
    }
    (deg, rounds)
}

/// Challenge inputs for PE, exposed for oracles.
pub fn pe_challenge_inputs(prog: &LabeledProgram, sk: &PeSecret) -> Vec<SlotVector> {
    challenge_inputs(prog, &sk.key, &sk.t, Convention::Pe)
}
