//! Polynomial protocol: the cloud returns the result ciphertext, receives
//! `(delta, beta)`, and answers with one ciphertext packing every
//! `w_i = y_i(delta)` and their `beta`-combination `H`.

use rand::{Rng, RngCore};
use vhe_bfv::container::{ciphertext_from_bytes, ciphertext_to_bytes};
use vhe_bfv::ring::slot_poly_eval;
use vhe_bfv::{Ciphertext, Evaluator, Modulus, SlotVector};

use super::transport::{Channel, Frame, PP_CHALLENGE, PP_RESPONSE, PP_RESULT};
use crate::circuit::{eval_challenge, Convention, LabeledProgram};
use crate::pe::{PeAuth, PeSecret};
use crate::{AuthError, RejectCause, Verdict};

/// `delta^j` in row-major slot order.
pub fn delta_powers(n: usize, delta: u64, t: &Modulus) -> SlotVector {
    let mut v = Vec::with_capacity(n);
    let mut p = 1;
    for _ in 0..n {
        v.push(p);
        p = t.mul(p, delta);
    }
    SlotVector(v)
}

/// Plaintext response: `w_0..w_d` then `H` in slots `0..d+1`.
pub fn pp_response_plain(ys: &[SlotVector], delta: u64, beta: u64, t: &Modulus) -> SlotVector {
    let n = ys[0].len();
    let mut out = SlotVector::zeros(n);
    let mut h = 0;
    let mut b = 1;
    for (i, y) in ys.iter().enumerate() {
        let w = slot_poly_eval(y, delta, t);
        out.0[i] = w;
        h = t.add(h, t.mul(b, w));
        b = t.mul(b, beta);
    }
    out.0[ys.len()] = h;
    out
}

/// Sum of all slots, replicated into every slot.
fn total(ev: &dyn Evaluator, c: &Ciphertext) -> Result<Ciphertext, AuthError> {
    let rows = ev.inner_sum(c, ev.slot_count() / 2)?;
    Ok(ev.add(&rows, &ev.row_swap(&rows)?)?)
}

/// Homomorphic response. Needs rotation keys for powers of two below `N/2`
/// and the row swap.
pub fn pp_response(
    auth: &PeAuth,
    ev: &dyn Evaluator,
    delta: u64,
    beta: u64,
) -> Result<Ciphertext, AuthError> {
    let n = ev.slot_count();
    let d = auth.degree();
    if d + 2 > n / 2 {
        return Err(AuthError::DegreeLimit {
            degree: d,
            limit: n / 2 - 2,
        });
    }
    let t = ev.plain_modulus();
    let powers = delta_powers(n, delta, &t);
    let mut packed: Option<Ciphertext> = None;
    let mut hash: Option<Ciphertext> = None;
    let mut b = 1;
    let mut place = |c: &Ciphertext, slot: usize| -> Result<(), AuthError> {
        let masked = ev.mul_plain(&total(ev, c)?, &SlotVector::one_hot(n, slot))?;
        packed = Some(match packed.take() {
            None => masked,
            Some(acc) => ev.add(&acc, &masked)?,
        });
        Ok(())
    };
    for (i, c) in auth.cts.iter().enumerate() {
        place(&ev.mul_plain(c, &powers)?, i)?;
        let term = ev.mul_plain(c, &powers.scale(b, &t))?;
        hash = Some(match hash.take() {
            None => term,
            Some(acc) => ev.add(&acc, &term)?,
        });
        b = t.mul(b, beta);
    }
    place(&hash.expect("degree is at least zero"), d + 1)?;
    Ok(packed.expect("at least one component"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ProverState {
    Start,
    AwaitingChallenge,
    Done,
}

/// Cloud side. Messages can only go out in protocol order.
pub struct PpProver<'a> {
    auth: &'a PeAuth,
    ev: &'a dyn Evaluator,
    state: ProverState,
}

impl<'a> PpProver<'a> {
    pub fn new(auth: &'a PeAuth, ev: &'a dyn Evaluator) -> Self {
        PpProver {
            auth,
            ev,
            state: ProverState::Start,
        }
    }

    /// Message 1: the result ciphertext `c_0`.
    pub fn send_result(&mut self, chan: &mut dyn Channel) -> Result<(), AuthError> {
        if self.state != ProverState::Start {
            return Err(AuthError::Protocol("result already sent".into()));
        }
        let params = self.ev.params();
        chan.send(Frame::new(PP_RESULT, ciphertext_to_bytes(&self.auth.cts[0], &params)))?;
        self.state = ProverState::AwaitingChallenge;
        Ok(())
    }

    /// Reads `(delta, beta)` and sends message 2.
    pub fn respond(&mut self, chan: &mut dyn Channel) -> Result<(), AuthError> {
        if self.state != ProverState::AwaitingChallenge {
            return Err(AuthError::Protocol("challenge requested before the result".into()));
        }
        let (delta, beta) = decode_challenge(&chan.expect(PP_CHALLENGE)?)?;
        let m2 = pp_response(self.auth, self.ev, delta, beta)?;
        chan.send(Frame::new(PP_RESPONSE, ciphertext_to_bytes(&m2, &self.ev.params())))?;
        self.state = ProverState::Done;
        Ok(())
    }
}

/// Runs the honest prover to completion.
pub fn pp_prove(auth: &PeAuth, ev: &dyn Evaluator, chan: &mut dyn Channel) -> Result<(), AuthError> {
    let mut p = PpProver::new(auth, ev);
    p.send_result(chan)?;
    p.respond(chan)
}

pub fn encode_challenge(delta: u64, beta: u64) -> Vec<u8> {
    let mut v = delta.to_le_bytes().to_vec();
    v.extend_from_slice(&beta.to_le_bytes());
    v
}

pub fn decode_challenge(b: &[u8]) -> Result<(u64, u64), AuthError> {
    if b.len() != 16 {
        return Err(AuthError::Protocol("challenge must be 16 bytes".into()));
    }
    Ok((
        u64::from_le_bytes(b[..8].try_into().unwrap()),
        u64::from_le_bytes(b[8..].try_into().unwrap()),
    ))
}

/// The verifier's checks on decrypted messages.
#[allow(clippy::too_many_arguments)]
pub fn pp_check(
    m: &SlotVector,
    response: &SlotVector,
    degree: usize,
    delta: u64,
    beta: u64,
    prog: &LabeledProgram,
    sk: &PeSecret,
    offset: Option<&SlotVector>,
) -> Verdict {
    let t = sk.t();
    if response.len() < degree + 2 {
        return Verdict::Reject(RejectCause::Malformed);
    }
    let w = &response.0[..=degree];
    let h = response.0[degree + 1];
    if w[0] != slot_poly_eval(m, delta, t) {
        return Verdict::Reject(RejectCause::PpResultEvaluation);
    }
    let combined = w.iter().rev().fold(0, |acc, &x| t.add(t.mul(acc, beta), x));
    if combined != h {
        return Verdict::Reject(RejectCause::PpHash);
    }
    let Ok(mut rho) = eval_challenge(prog, sk.key(), t, Convention::Pe) else {
        return Verdict::Reject(RejectCause::Malformed);
    };
    if let Some(off) = offset {
        if off.len() != rho.len() {
            return Verdict::Reject(RejectCause::Malformed);
        }
        rho = rho.add(off, t);
    }
    let at_alpha = w.iter().rev().fold(0, |acc, &x| t.add(t.mul(acc, sk.alpha()), x));
    if at_alpha != slot_poly_eval(&rho, delta, t) {
        return Verdict::Reject(RejectCause::PpChallenge);
    }
    Verdict::Accept
}

/// Client side. `degree` is the degree the program's result must have;
/// `m_claimed`, when given, must equal the decrypted result.
pub fn pp_verify(
    m_claimed: Option<&SlotVector>,
    prog: &LabeledProgram,
    degree: usize,
    sk: &PeSecret,
    offset: Option<&SlotVector>,
    chan: &mut dyn Channel,
    rng: &mut dyn RngCore,
) -> Result<(Option<SlotVector>, Verdict), AuthError> {
    let params = sk.backend().params();
    let dec = sk.backend().decryptor();
    let m1 = ciphertext_from_bytes(&chan.expect(PP_RESULT)?, &params)?;
    let m = dec.decrypt(&m1).ok();
    // the challenge goes out whatever happened above
    let t = sk.t();
    let delta = rng.gen_range(0..t.value());
    let beta = rng.gen_range(0..t.value());
    chan.send(Frame::new(PP_CHALLENGE, encode_challenge(delta, beta)))?;
    let m2 = ciphertext_from_bytes(&chan.expect(PP_RESPONSE)?, &params)?;
    let Some(m) = m else {
        return Ok((None, Verdict::Reject(RejectCause::Decryption)));
    };
    if m_claimed.is_some_and(|c| c != &m) {
        return Ok((Some(m), Verdict::Reject(RejectCause::ResultMismatch)));
    }
    let Ok(response) = dec.decrypt(&m2) else {
        return Ok((Some(m), Verdict::Reject(RejectCause::Decryption)));
    };
    let v = pp_check(&m, &response, degree, delta, beta, prog, sk, offset);
    Ok((Some(m), v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_one_example_mod_17() {
        let t = Modulus::new(17).unwrap();
        let mut y0 = SlotVector::zeros(8);
        y0.0[..2].copy_from_slice(&[5, 2]);
        let mut y1 = SlotVector::zeros(8);
        y1.0[..2].copy_from_slice(&[1, 1]);
        let r = pp_response_plain(&[y0, y1], 3, 2, &t);
        assert_eq!(&r.0[..3], &[11, 4, 2]);
    }

    #[test]
    fn degree_zero_hash_is_w0() {
        let t = Modulus::new(17).unwrap();
        let y = SlotVector(vec![1, 2, 3, 4]);
        let r = pp_response_plain(std::slice::from_ref(&y), 5, 9, &t);
        assert_eq!(r.0[0], slot_poly_eval(&y, 5, &t));
        assert_eq!(r.0[1], r.0[0]);
    }

    #[test]
    fn challenge_encoding() {
        let b = encode_challenge(3, 2);
        assert_eq!(b.len(), 16);
        assert_eq!(decode_challenge(&b).unwrap(), (3, 2));
        assert!(decode_challenge(&b[..15]).is_err());
    }
}
