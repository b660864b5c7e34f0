//! Covert-cloud simulation: each trial draws fresh authenticator secrets,
//! runs the honest evaluation, applies one deviation, and records whether
//! the client accepted. Every deviation changes what the client receives,
//! so any acceptance is a successful forgery.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::factorial::binomial;
use vhe_bfv::container::{
    ciphertext_from_bytes, ciphertext_to_bytes, ciphertexts_from_bytes, ciphertexts_to_bytes,
};
use vhe_bfv::{Backend, Ciphertext, Evaluator, SlotVector};
use vhe_core::circuit::{Gate, LabeledProgram};
use vhe_core::pe::{degree_profile, pe_eval, pe_open, PeAuth, PeEvaluator, PeSecret, DEFAULT_MAX_DEGREE};
use vhe_core::protocols::pp::decode_challenge;
use vhe_core::protocols::transport::{
    AUTH_RESULT, PP_CHALLENGE, PP_RESPONSE, PP_RESULT, REQ_BLINDED_TERMS, REQ_HIGH_TERMS,
};
use vhe_core::protocols::Frame;
use vhe_core::rep::{rep_auth, rep_eval, rep_open, RepAuth, RepSecret};

use crate::pipeline::{authenticate_pe, key_requirements, preflight, run_pe_session, Direction, Hook, Mode, Transport};
use crate::setup::BackendSpec;
use crate::stats::wilson;
use crate::usecase::Instance;

/// Confidence level of the reported interval.
pub const CONFIDENCE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Strategy {
    /// Add one nonzero constant to `k` replicas of one output slot (REP),
    /// or to `k` output slots of the result ciphertext (PE).
    SlotPerturb(usize),
    /// Swap one result ciphertext for a fresh encryption of random data.
    ReplaceCiphertext,
    /// Evaluate a program with one gate changed.
    WrongCircuit,
    /// Evaluate with one input replaced by an encryption of zero.
    DropInput,
    /// Add a random error polynomial, nonzero in its constant term, to
    /// one slot of the PE result.
    TamperPeCoefficient,
    /// Alter the polynomial-protocol answer, either in one slot, in one
    /// `w_i` with `H` adjusted to match, or by answering for another program.
    TamperPpResponse,
    /// Alter one high term sent in a re-quadratization round.
    TamperReqMessage,
}

impl Strategy {
    fn interactive(self) -> bool {
        matches!(self, Strategy::TamperPpResponse | Strategy::TamperReqMessage)
    }

    fn pe_only(self) -> bool {
        self.interactive() || self == Strategy::TamperPeCoefficient
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::SlotPerturb(k) => write!(f, "slot-perturb({k})"),
            Strategy::ReplaceCiphertext => f.write_str("replace-ciphertext"),
            Strategy::WrongCircuit => f.write_str("wrong-circuit"),
            Strategy::DropInput => f.write_str("drop-input"),
            Strategy::TamperPeCoefficient => f.write_str("tamper-pe-coefficient"),
            Strategy::TamperPpResponse => f.write_str("tamper-pp-response"),
            Strategy::TamperReqMessage => f.write_str("tamper-req-message"),
        }
    }
}

impl FromStr for Strategy {
    type Err = anyhow::Error;

    /// Accepts `slot-perturb(4)` and `slot-perturb:4`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("slot-perturb") {
            let k = rest
                .trim_start_matches([':', '('])
                .trim_end_matches(')')
                .parse()
                .context("slot-perturb needs a subset size")?;
            ensure!(k > 0, "subset size must be positive");
            return Ok(Strategy::SlotPerturb(k));
        }
        Ok(match s {
            "replace-ciphertext" => Strategy::ReplaceCiphertext,
            "wrong-circuit" => Strategy::WrongCircuit,
            "drop-input" => Strategy::DropInput,
            "tamper-pe-coefficient" => Strategy::TamperPeCoefficient,
            "tamper-pp-response" => Strategy::TamperPpResponse,
            "tamper-req-message" => Strategy::TamperReqMessage,
            _ => bail!("unknown strategy {s}"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Rep { lambda: usize },
    Pe,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Rep { lambda } => write!(f, "rep(lambda={lambda})"),
            Target::Pe => f.write_str("pe"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackSpec {
    pub strategy: Strategy,
    pub trials: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackStats {
    pub strategy: String,
    pub target: String,
    pub backend: String,
    pub trials: u64,
    pub accepts: u64,
    pub rate: f64,
    pub confidence: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Analytic acceptance probability or bound for this deviation.
    pub bound: f64,
    pub seconds: f64,
}

impl AttackStats {
    pub fn covers(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }
}

fn mode_for(strategy: Strategy, target: Target) -> Mode {
    match target {
        Target::Rep { .. } => Mode::REP,
        Target::Pe => Mode {
            pp: strategy == Strategy::TamperPpResponse,
            req: strategy == Strategy::TamperReqMessage,
            ..Mode::PE
        },
    }
}

/// Analytic acceptance probability (REP) or upper bound (PE family).
pub fn analytic_bound(strategy: Strategy, target: Target, inst: &Instance, n: usize, t: u64) -> f64 {
    let (degrees, _) = degree_profile(&inst.prog.circuit, strategy == Strategy::TamperReqMessage);
    let d = degrees[inst.prog.circuit.output()].unwrap_or(1) as f64;
    let t = t as f64;
    match (target, strategy) {
        (Target::Rep { lambda }, Strategy::SlotPerturb(k)) if 2 * k == lambda => {
            1.0 / binomial(lambda as u64, k as u64)
        }
        (Target::Rep { .. }, _) => 0.0,
        (Target::Pe, Strategy::TamperPpResponse) => 2.0 * (d + n as f64) / t + d / (t - 1.0),
        (Target::Pe, Strategy::TamperReqMessage) => 2.0 * 4.0 / t,
        (Target::Pe, _) => 2.0 * d / t,
    }
}

/// A copy of `prog` with one live, non-input gate changed so that the
/// computed function differs.
pub fn mutate_program(prog: &LabeledProgram, rng: &mut impl Rng) -> LabeledProgram {
    let live = prog.circuit.live();
    let candidates: Vec<usize> = prog
        .circuit
        .gates
        .iter()
        .enumerate()
        .filter(|(i, g)| live[*i] && !matches!(g, Gate::Input { .. }))
        .map(|(i, _)| i)
        .collect();
    let mut out = prog.clone();
    let Some(&g) = candidates.get(rng.gen_range(0..candidates.len().max(1))) else {
        // a bare input: read a different input, or double the only one
        out.circuit.gates.push(Gate::Add { a: 0, b: 0 });
        return out;
    };
    let t = out.circuit.slots;
    out.circuit.gates[g] = match out.circuit.gates[g].clone() {
        Gate::Add { a, b } => Gate::Sub { a, b },
        Gate::Sub { a, b } => Gate::Add { a, b },
        Gate::Mul { a, b, .. } => Gate::Add { a, b },
        Gate::MulPlain { a, constant } => Gate::MulPlain {
            a,
            constant: SlotVector(constant.0.iter().map(|&c| c + 1).collect()),
        },
        Gate::Rotate { a, step } => Gate::Rotate { a, step: step + 1 },
        Gate::RowSwap { a } => Gate::Rotate { a, step: 1 },
        Gate::InnerSum { a, block } if block > 1 => Gate::InnerSum { a, block: block / 2 },
        Gate::InnerSum { a, .. } => Gate::InnerSum { a, block: 2.min(t / 2) },
        Gate::Input { .. } => unreachable!(),
    };
    out
}

fn random_vec(ev: &dyn Evaluator, rng: &mut impl Rng) -> SlotVector {
    let t = ev.plain_modulus().value();
    SlotVector((0..ev.slot_count()).map(|_| rng.gen_range(0..t)).collect())
}

fn nonzero<R: Rng + ?Sized>(ev: &dyn Evaluator, rng: &mut R) -> u64 {
    rng.gen_range(1..ev.plain_modulus().value())
}

/// `c + Enc(delta)`: the cloud can shift any plaintext it holds.
fn shift(ev: &dyn Evaluator, c: &Ciphertext, delta: &SlotVector, rng: &mut dyn RngCore) -> Result<Ciphertext> {
    Ok(ev.add(c, &ev.encrypt(delta, rng)?)?)
}

fn rep_trial(strategy: Strategy, lambda: usize, inst: &Instance, backend: &Backend, rng: &mut ChaCha20Rng) -> Result<bool> {
    let prog = &inst.prog;
    let sk = RepSecret::keygen(lambda, backend.clone(), rng)?;
    let ev = backend.evaluator();
    let auths = inst
        .inputs
        .iter()
        .zip(&prog.inputs)
        .map(|(m, l)| rep_auth(m, l, &sk, rng))
        .collect::<Result<Vec<RepAuth>, _>>()?;
    let forged = match strategy {
        Strategy::SlotPerturb(k) => {
            ensure!(k <= lambda, "cannot perturb {k} of {lambda} replicas");
            let mut out = rep_eval(prog, &auths, ev)?;
            let b = prog.output_block;
            let (ct, base) = out.layout.locate(b.start + rng.gen_range(0..b.len));
            let e = nonzero(ev, rng);
            let mut delta = SlotVector::zeros(ev.slot_count());
            for j in sample(rng, lambda, k) {
                delta.0[base + j] = e;
            }
            out.cts[ct] = shift(ev, &out.cts[ct], &delta, rng)?;
            out
        }
        Strategy::ReplaceCiphertext => {
            let mut out = rep_eval(prog, &auths, ev)?;
            let k = rng.gen_range(0..out.cts.len());
            out.cts[k] = ev.encrypt(&random_vec(ev, rng), rng)?;
            out
        }
        Strategy::WrongCircuit => rep_eval(&mutate_program(prog, rng), &auths, ev)?,
        Strategy::DropInput => {
            let mut auths = auths;
            let k = rng.gen_range(0..auths.len());
            for c in &mut auths[k].cts {
                *c = ev.encrypt_zero(rng)?;
            }
            rep_eval(prog, &auths, ev)?
        }
        _ => unreachable!("checked by simulate_adversary"),
    };
    Ok(rep_open(prog, &forged, &sk).1.is_accept())
}

fn pe_trial(strategy: Strategy, index: u64, inst: &Instance, backend: &Backend, rng: &mut ChaCha20Rng) -> Result<bool> {
    let prog = &inst.prog;
    let sk = PeSecret::keygen(backend.clone(), rng)?;
    let ev = backend.evaluator();
    let auths = authenticate_pe(inst, &sk, rng)?;
    let mut pad = ChaCha20Rng::seed_from_u64(rng.next_u64());
    let mut eval = |p: &LabeledProgram, auths: &[PeAuth]| -> Result<PeAuth> {
        let cx = PeEvaluator {
            ev,
            max_degree: DEFAULT_MAX_DEGREE,
            rng: &mut pad,
        };
        Ok(pe_eval(p, auths, cx, None)?)
    };
    let b = prog.output_block;
    let forged = match strategy {
        Strategy::SlotPerturb(k) => {
            let mut out = eval(prog, &auths)?;
            let e = nonzero(ev, rng);
            let mut delta = SlotVector::zeros(ev.slot_count());
            for j in sample(rng, b.len, k.min(b.len)) {
                delta.0[b.start + j] = e;
            }
            out.cts[0] = shift(ev, &out.cts[0], &delta, rng)?;
            out
        }
        Strategy::ReplaceCiphertext => {
            let mut out = eval(prog, &auths)?;
            let k = rng.gen_range(0..out.cts.len());
            out.cts[k] = ev.encrypt(&random_vec(ev, rng), rng)?;
            out
        }
        Strategy::WrongCircuit => match eval(&mutate_program(prog, rng), &auths) {
            Ok(out) => out,
            // a mutation past the degree limit cannot be delivered at all
            Err(_) => return Ok(false),
        },
        Strategy::DropInput => {
            let mut auths = auths;
            let k = rng.gen_range(0..auths.len());
            for c in &mut auths[k].cts {
                *c = ev.encrypt_zero(rng)?;
            }
            eval(prog, &auths)?
        }
        Strategy::TamperPeCoefficient => {
            let mut out = eval(prog, &auths)?;
            let j = b.start + rng.gen_range(0..b.len);
            for i in 0..out.cts.len() {
                let e = if i == 0 { nonzero(ev, rng) } else { rng.gen_range(0..ev.plain_modulus().value()) };
                let mut delta = SlotVector::zeros(ev.slot_count());
                delta.0[j] = e;
                out.cts[i] = shift(ev, &out.cts[i], &delta, rng)?;
            }
            out
        }
        Strategy::TamperPpResponse | Strategy::TamperReqMessage => {
            return pe_session_trial(strategy, index, inst, &sk, &auths, rng);
        }
    };
    Ok(pe_open(prog, &forged, &sk, None).1.is_accept())
}

/// Rewrites the ciphertexts a frame carries. Returns false, leaving the
/// frame alone, when it carries none.
pub fn rewrite_frame(frame: &mut Frame, ev: &dyn Evaluator, f: impl FnOnce(&mut Vec<Ciphertext>)) -> bool {
    let params = ev.params();
    match frame.tag {
        AUTH_RESULT => {
            let mut auth = PeAuth::from_bytes(&frame.payload, &params).expect("cloud-built frame");
            f(&mut auth.cts);
            frame.payload = auth.to_bytes(&params);
        }
        PP_RESULT | PP_RESPONSE => {
            let mut cts = vec![ciphertext_from_bytes(&frame.payload, &params).expect("cloud-built frame")];
            f(&mut cts);
            frame.payload = ciphertext_to_bytes(&cts[0], &params);
        }
        REQ_HIGH_TERMS | REQ_BLINDED_TERMS => {
            let mut cts = ciphertexts_from_bytes(&frame.payload, &params).expect("cloud-built frame");
            f(&mut cts);
            frame.payload = ciphertexts_to_bytes(&cts, &params);
        }
        _ => return false,
    }
    true
}

/// Adds a random nonzero value to slot 0 of the first ciphertext in a
/// frame, a slot every check reads.
pub fn perturb_frame(frame: &mut Frame, ev: &dyn Evaluator, rng: &mut dyn RngCore) -> bool {
    let mut delta = SlotVector::zeros(ev.slot_count());
    delta.0[0] = nonzero(ev, &mut *rng);
    rewrite_frame(frame, ev, |cts| {
        cts[0] = shift(ev, &cts[0], &delta, rng).expect("shift");
    })
}

fn pe_session_trial(
    strategy: Strategy,
    index: u64,
    inst: &Instance,
    sk: &PeSecret,
    auths: &[PeAuth],
    rng: &mut ChaCha20Rng,
) -> Result<bool> {
    let prog = &inst.prog;
    let backend = sk.backend().clone();
    let t = sk.t().clone();
    let mut hook_rng = ChaCha20Rng::seed_from_u64(rng.next_u64());
    let mut cloud_prog = None;
    let hook: Hook = match strategy {
        Strategy::TamperPpResponse => {
            let (degrees, _) = degree_profile(&prog.circuit, false);
            let d = degrees[prog.circuit.output()].expect("output is live");
            let consistent = index % 3 == 1 && d >= 1;
            if index % 3 == 2 {
                cloud_prog = Some(mutate_program(prog, rng));
            }
            let stale = cloud_prog.is_some();
            let mut beta = 0;
            Box::new(move |dir, f: &mut Frame| {
                let ev = backend.evaluator();
                match (dir, f.tag) {
                    (Direction::ToCloud, PP_CHALLENGE) => {
                        beta = decode_challenge(&f.payload).expect("client challenge").1;
                    }
                    (Direction::ToClient, PP_RESPONSE) if !stale => {
                        let mut delta = SlotVector::zeros(ev.slot_count());
                        let e = nonzero(ev, &mut hook_rng);
                        if consistent {
                            let i = hook_rng.gen_range(1..=d);
                            delta.0[i] = e;
                            delta.0[d + 1] = t.mul(e, t.pow(beta, i as u64));
                        } else {
                            delta.0[hook_rng.gen_range(0..=d + 1)] = e;
                        }
                        rewrite_frame(f, ev, |cts| {
                            cts[0] = shift(ev, &cts[0], &delta, &mut hook_rng).expect("shift");
                        });
                    }
                    _ => {}
                }
            })
        }
        Strategy::TamperReqMessage => {
            let (_, rounds) = degree_profile(&prog.circuit, true);
            let target = rng.gen_range(0..rounds.len());
            let mut seen = 0;
            Box::new(move |dir, f: &mut Frame| {
                if dir != Direction::ToClient || f.tag != REQ_HIGH_TERMS {
                    return;
                }
                if seen == target {
                    let ev = backend.evaluator();
                    let mut delta = SlotVector::zeros(ev.slot_count());
                    delta.0[hook_rng.gen_range(0..ev.slot_count())] = nonzero(ev, &mut hook_rng);
                    let which = hook_rng.gen_range(0..2);
                    rewrite_frame(f, ev, |cts| {
                        cts[which] = shift(ev, &cts[which], &delta, &mut hook_rng).expect("shift");
                    });
                }
                seen += 1;
            })
        }
        _ => unreachable!(),
    };
    let opts = mode_for(strategy, Target::Pe).session_options();
    let run = run_pe_session(
        prog,
        cloud_prog.as_ref(),
        auths,
        sk,
        opts,
        rng.next_u64(),
        rng.next_u64(),
        &Transport::Mem,
        Some(hook),
    );
    // an aborted session is a rejection
    Ok(matches!(run, Ok(r) if r.verdict.is_accept()))
}

/// Runs `spec.trials` independent deviations against `target` on `inst`.
/// Evaluation keys are shared across trials; authenticator secrets are not.
pub fn simulate_adversary(spec: &AttackSpec, target: Target, inst: &Instance, backend: &BackendSpec) -> Result<AttackStats> {
    ensure!(spec.trials > 0, "need at least one trial");
    if spec.strategy.pe_only() && target != Target::Pe {
        bail!("{} applies to PE only", spec.strategy);
    }
    let mode = mode_for(spec.strategy, target);
    preflight(inst, backend, mode)?;
    if spec.strategy == Strategy::TamperReqMessage {
        ensure!(
            !degree_profile(&inst.prog.circuit, true).1.is_empty(),
            "the program never re-quadratizes"
        );
    }
    let n = backend.slot_count()?;
    let lambda = match target {
        Target::Rep { lambda } => lambda,
        Target::Pe => 1,
    };
    let (steps, row_swap) = key_requirements(&inst.prog, mode, lambda, n);
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let keys = backend.backend(&steps, row_swap, &mut rng)?;

    let start = Instant::now();
    let outcomes = (0..spec.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
            rng.set_stream(i + 1);
            match target {
                Target::Rep { lambda } => rep_trial(spec.strategy, lambda, inst, &keys, &mut rng),
                Target::Pe => pe_trial(spec.strategy, i, inst, &keys, &mut rng),
            }
        })
        .collect::<Result<Vec<bool>>>()?;
    let accepts = outcomes.iter().filter(|&&a| a).count() as u64;
    let (ci_low, ci_high) = wilson(accepts, spec.trials, CONFIDENCE);
    let t = backend.plain_modulus()?.value();
    Ok(AttackStats {
        strategy: spec.strategy.to_string(),
        target: target.to_string(),
        backend: backend.to_string(),
        trials: spec.trials,
        accepts,
        rate: accepts as f64 / spec.trials as f64,
        confidence: CONFIDENCE,
        ci_low,
        ci_high,
        bound: analytic_bound(spec.strategy, target, inst, n, t),
        seconds: start.elapsed().as_secs_f64(),
    })
}
