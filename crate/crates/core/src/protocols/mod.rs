//! Client/cloud message exchanges for PE results: re-quadratization rounds
//! during evaluation and the polynomial protocol on delivery.

pub mod pp;
pub mod req;
pub mod transport;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use vhe_bfv::{Evaluator, SlotVector};

use crate::circuit::LabeledProgram;
use crate::pe::{degree_profile, pe_check, pe_eval, PeAuth, PeEvaluator, PeSecret, Requadratizer};
use crate::{AuthError, RejectCause, Verdict};

pub use pp::{pp_prove, pp_verify, PpProver};
pub use req::{shift_offset, ReqClient, ReqEntry, ReqLedger, ReqProver};
pub use transport::{Channel, Frame, MemChannel, Recorded, Replay, Side, TcpChannel, Transcript};

/// Which interactive optimizations a session uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionOptions {
    pub req: bool,
    pub pp: bool,
    pub max_degree: usize,
}

impl SessionOptions {
    pub fn new(req: bool, pp: bool) -> Self {
        SessionOptions {
            req,
            pp,
            max_degree: crate::pe::DEFAULT_MAX_DEGREE,
        }
    }
}

/// Cloud half: evaluates (running rounds when asked) and delivers the
/// result through the polynomial protocol or as a whole authentication.
pub fn cloud_session(
    prog: &LabeledProgram,
    auths: &[PeAuth],
    ev: &dyn Evaluator,
    opts: SessionOptions,
    chan: &mut dyn Channel,
    rng: &mut dyn RngCore,
) -> Result<PeAuth, AuthError> {
    let mut pad_rng = ChaCha20Rng::seed_from_u64(rng.next_u64());
    let cx = PeEvaluator {
        ev,
        max_degree: opts.max_degree,
        rng: &mut pad_rng,
    };
    let result = if opts.req {
        let mut req_rng = ChaCha20Rng::seed_from_u64(rng.next_u64());
        let mut prover = ReqProver {
            ev,
            chan: &mut *chan,
            rng: &mut req_rng,
            rounds: 0,
        };
        pe_eval(prog, auths, cx, Some(&mut prover as &mut dyn Requadratizer))?
    } else {
        pe_eval(prog, auths, cx, None)?
    };
    if opts.pp {
        pp_prove(&result, ev, chan)?;
    } else {
        chan.send(Frame::new(transport::AUTH_RESULT, result.to_bytes(&ev.params())))?;
    }
    Ok(result)
}

/// Client half. Returns the decrypted result, if any, and the verdict,
/// neither of which is ever sent.
pub fn client_session(
    prog: &LabeledProgram,
    sk: &PeSecret,
    opts: SessionOptions,
    chan: &mut dyn Channel,
    rng: &mut dyn RngCore,
) -> Result<(Option<SlotVector>, Verdict), AuthError> {
    prog.validate()?;
    let mut client = ReqClient::new(sk, prog);
    if opts.req {
        while !client.done() {
            client.serve_round(chan, rng)?;
        }
    }
    let offset = if opts.req {
        client.final_offset()?
    } else {
        SlotVector::zeros(prog.circuit.slots)
    };
    let (degrees, _) = degree_profile(&prog.circuit, opts.req);
    let degree = degrees[prog.circuit.output()].expect("output is live");
    let (value, verdict) = if opts.pp {
        pp_verify(None, prog, degree, sk, Some(&offset), chan, rng)?
    } else {
        let auth = PeAuth::from_bytes(&chan.expect(transport::AUTH_RESULT)?, &sk.backend().params())?;
        match sk.decrypt(&auth) {
            Err(_) => (None, Verdict::Reject(RejectCause::Decryption)),
            Ok(ys) if auth.degree() != degree => (Some(ys[0].clone()), Verdict::Reject(RejectCause::Malformed)),
            Ok(ys) => {
                let v = pe_check(&ys[0], prog, &ys, sk, Some(&offset));
                (Some(ys[0].clone()), v)
            }
        }
    };
    let verdict = match verdict {
        Verdict::Accept if client.failed => Verdict::Reject(RejectCause::Decryption),
        v => v,
    };
    Ok((value, verdict))
}
