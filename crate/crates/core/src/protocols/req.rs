//! Re-quadratization: the cloud hands the degree-3 and degree-4 terms of a
//! wire to the client, which folds them, blinded, into the lower terms.
//! The client keeps the blindings and the offset rules that let it verify
//! the final result.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use vhe_bfv::container::{ciphertexts_from_bytes, ciphertexts_to_bytes};
use vhe_bfv::{Evaluator, Modulus, SlotVector};

use super::transport::{Channel, Frame, REQ_BLINDED_TERMS, REQ_HIGH_TERMS};
use crate::circuit::{challenge_inputs, evaluate_wires, Convention, Gate, Interpreter, LabeledProgram};
use crate::pe::{degree_profile, PeAuth, PeSecret, Requadratizer};
use crate::AuthError;

/// Blindings of one executed round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReqEntry {
    pub gate: usize,
    pub r: SlotVector,
    pub r_bar: SlotVector,
}

/// Client-held record of every round in a session.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReqLedger {
    pub entries: Vec<ReqEntry>,
}

/// Per-wire `(rho, delta)`: challenge value and accumulated offset, so that
/// the wire's encoding evaluates to `rho + delta` at `alpha`.
struct ShiftInterp<'a> {
    inputs: Vec<SlotVector>,
    t: &'a Modulus,
    alpha: u64,
    blindings: BTreeMap<usize, &'a SlotVector>,
}

impl Interpreter for ShiftInterp<'_> {
    type Value = (SlotVector, SlotVector);
    type Error = AuthError;

    fn gate(
        &mut self,
        id: usize,
        g: &Gate,
        a: &[&(SlotVector, SlotVector)],
    ) -> Result<(SlotVector, SlotVector), AuthError> {
        let t = self.t;
        let (rho, delta) = match g {
            Gate::Input { index } => {
                let r = self.inputs[*index].clone();
                let z = SlotVector::zeros(r.len());
                (r, z)
            }
            Gate::Add { .. } => (a[0].0.add(&a[1].0, t), a[0].1.add(&a[1].1, t)),
            Gate::Sub { .. } => (a[0].0.sub(&a[1].0, t), a[0].1.sub(&a[1].1, t)),
            Gate::Mul { .. } => {
                let ((r1, d1), (r2, d2)) = (a[0], a[1]);
                let cross = r1.mul(d2, t).add(&r2.mul(d1, t), t).add(&d1.mul(d2, t), t);
                (r1.mul(r2, t), cross)
            }
            Gate::MulPlain { constant, .. } => (a[0].0.mul(constant, t), a[0].1.mul(constant, t)),
            Gate::Rotate { step, .. } => (a[0].0.rotate(*step), a[0].1.rotate(*step)),
            Gate::RowSwap { .. } => (a[0].0.row_swap(), a[0].1.row_swap()),
            Gate::InnerSum { block, .. } => (a[0].0.inner_sum(*block, t), a[0].1.inner_sum(*block, t)),
        };
        let delta = match self.blindings.get(&id) {
            Some(r_bar) => r_bar.scale(self.alpha, t),
            None => delta,
        };
        Ok((rho, delta))
    }
}

/// `(rho, delta)` on every live wire, applying only rounds at gates before
/// `before` (all rounds when `None`).
pub fn wire_offsets(
    prog: &LabeledProgram,
    sk: &PeSecret,
    ledger: &ReqLedger,
    before: Option<usize>,
) -> Result<Vec<Option<(SlotVector, SlotVector)>>, AuthError> {
    prog.validate()?;
    let t = sk.t();
    let mut blindings = BTreeMap::new();
    for e in &ledger.entries {
        if e.gate >= prog.circuit.gates.len() || e.r_bar.len() != prog.circuit.slots {
            return Err(AuthError::Requadratize("ledger does not match the program".into()));
        }
        if before.is_none_or(|b| e.gate < b) && blindings.insert(e.gate, &e.r_bar).is_some() {
            return Err(AuthError::Requadratize("two rounds at one gate".into()));
        }
    }
    let mut interp = ShiftInterp {
        inputs: challenge_inputs(prog, sk.key(), t, Convention::Pe),
        t,
        alpha: sk.alpha(),
        blindings,
    };
    evaluate_wires(&prog.circuit, &mut interp)
}

/// `alpha^-1 * delta_in`, where `delta_in` is the offset on gate `g`'s
/// output left by earlier rounds.
pub fn shift_offset(
    prog: &LabeledProgram,
    g: usize,
    sk: &PeSecret,
    ledger: &ReqLedger,
) -> Result<SlotVector, AuthError> {
    let wires = wire_offsets(prog, sk, ledger, Some(g))?;
    let (_, delta) = wires
        .get(g)
        .cloned()
        .flatten()
        .ok_or_else(|| AuthError::Requadratize(format!("gate {g} is not live")))?;
    Ok(delta.scale(sk.alpha_inv(), sk.t()))
}

/// Offset of the program output after every recorded round.
pub fn final_offset(prog: &LabeledProgram, sk: &PeSecret, ledger: &ReqLedger) -> Result<SlotVector, AuthError> {
    let mut wires = wire_offsets(prog, sk, ledger, None)?;
    Ok(wires.swap_remove(prog.circuit.output()).expect("output is live").1)
}

/// Client arithmetic of one round: returns `(y1_bar, y2_bar)` and the entry.
#[allow(clippy::too_many_arguments)]
pub fn blind_terms(
    y3: &SlotVector,
    y4: &SlotVector,
    shift: &SlotVector,
    alpha: u64,
    t: &Modulus,
    gate: usize,
    rng: &mut dyn RngCore,
) -> (SlotVector, SlotVector, ReqEntry) {
    let n = y3.len();
    let k1 = rng.gen_range(0..t.value());
    let k2 = rng.gen_range(0..t.value());
    let mut uniform = || SlotVector((0..n).map(|_| rng.gen_range(0..t.value())).collect());
    let r = uniform();
    let r_bar = uniform();
    let a2 = t.mul(alpha, alpha);
    let a3 = t.mul(a2, alpha);
    let y2_bar = y3
        .scale(t.mul(alpha, k1), t)
        .add(&y4.scale(t.mul(a2, k2), t), t)
        .add(&r, t);
    let y1_bar = y4
        .scale(a3, t)
        .add(&y3.scale(a2, t), t)
        .sub(&y2_bar.scale(alpha, t), t)
        .sub(shift, t)
        .add(&r_bar, t);
    (y1_bar, y2_bar, ReqEntry { gate, r, r_bar })
}

/// Cloud side of the rounds, plugged into PE evaluation.
pub struct ReqProver<'a> {
    pub ev: &'a dyn Evaluator,
    pub chan: &'a mut dyn Channel,
    /// Randomness for zero-padding degree-3 wires.
    pub rng: &'a mut dyn RngCore,
    pub rounds: usize,
}

impl Requadratizer for ReqProver<'_> {
    fn requadratize(&mut self, _gate: usize, auth: PeAuth) -> Result<PeAuth, AuthError> {
        let d = auth.degree();
        if !(3..=4).contains(&d) {
            return Err(AuthError::Requadratize(format!("degree {d} is outside 3..=4")));
        }
        let params = self.ev.params();
        let mut cts = auth.cts;
        if d == 3 {
            cts.push(self.ev.encrypt_zero(self.rng)?);
        }
        let high = cts.split_off(3);
        self.chan
            .send(Frame::new(REQ_HIGH_TERMS, ciphertexts_to_bytes(&high, &params)))?;
        let blinded = ciphertexts_from_bytes(&self.chan.expect(REQ_BLINDED_TERMS)?, &params)?;
        if blinded.len() != 2 {
            return Err(AuthError::Protocol("expected two blinded terms".into()));
        }
        cts[1] = self.ev.add(&cts[1], &blinded[0])?;
        cts[2] = self.ev.add(&cts[2], &blinded[1])?;
        self.rounds += 1;
        Ok(PeAuth { cts })
    }
}

/// Client side: answers rounds in the order the program dictates.
pub struct ReqClient<'a> {
    sk: &'a PeSecret,
    prog: &'a LabeledProgram,
    schedule: Vec<usize>,
    pub ledger: ReqLedger,
    /// Set when a round's terms failed to decrypt; the session still
    /// completes so the cloud sees nothing different.
    pub failed: bool,
}

impl<'a> ReqClient<'a> {
    pub fn new(sk: &'a PeSecret, prog: &'a LabeledProgram) -> Self {
        let (_, schedule) = degree_profile(&prog.circuit, true);
        ReqClient {
            sk,
            prog,
            schedule,
            ledger: ReqLedger::default(),
            failed: false,
        }
    }

    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    pub fn done(&self) -> bool {
        self.ledger.entries.len() == self.schedule.len()
    }

    pub fn serve_round(&mut self, chan: &mut dyn Channel, rng: &mut dyn RngCore) -> Result<(), AuthError> {
        let Some(&gate) = self.schedule.get(self.ledger.entries.len()) else {
            return Err(AuthError::Protocol("no round is due".into()));
        };
        let backend = self.sk.backend();
        let params = backend.params();
        let high = ciphertexts_from_bytes(&chan.expect(REQ_HIGH_TERMS)?, &params)?;
        if high.len() != 2 {
            return Err(AuthError::Protocol("expected two high terms".into()));
        }
        let n = self.prog.circuit.slots;
        let mut dec = |c| match backend.decryptor().decrypt(c) {
            Ok(v) => v,
            Err(_) => {
                self.failed = true;
                SlotVector::zeros(n)
            }
        };
        let (y3, y4) = (dec(&high[0]), dec(&high[1]));
        let shift = shift_offset(self.prog, gate, self.sk, &self.ledger)?;
        let (y1_bar, y2_bar, entry) =
            blind_terms(&y3, &y4, &shift, self.sk.alpha(), self.sk.t(), gate, rng);
        let ev = backend.evaluator();
        let out = [ev.encrypt(&y1_bar, rng)?, ev.encrypt(&y2_bar, rng)?];
        self.ledger.entries.push(entry);
        chan.send(Frame::new(REQ_BLINDED_TERMS, ciphertexts_to_bytes(&out, &params)))
    }

    /// Offset to use when verifying the final result.
    pub fn final_offset(&self) -> Result<SlotVector, AuthError> {
        final_offset(self.prog, self.sk, &self.ledger)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn blinded_encoding_shifts_by_alpha_r_bar() {
        let t = Modulus::new(1_099_511_627_689).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let mut s = || SlotVector(vec![rng.gen_range(0..t.value())]);
            let ys: Vec<SlotVector> = (0..5).map(|_| s()).collect();
            let shift = s();
            let alpha = rng.gen_range(1..t.value());
            let (y1b, y2b, e) = blind_terms(&ys[3], &ys[4], &shift, alpha, &t, 0, &mut rng);
            let at = |v: &[u64]| v.iter().rev().fold(0, |acc, &x| t.add(t.mul(acc, alpha), x));
            let before = at(&ys.iter().map(|y| y.0[0]).collect::<Vec<_>>());
            let after = at(&[ys[0].0[0], t.add(ys[1].0[0], y1b.0[0]), t.add(ys[2].0[0], y2b.0[0])]);
            let expect = t.sub(t.add(before, t.mul(alpha, e.r_bar.0[0])), t.mul(alpha, shift.0[0]));
            assert_eq!(after, expect);
        }
    }
}
