use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use vhe_bfv::container::{
    ciphertext_from_bytes, ciphertext_to_bytes, ciphertexts_from_bytes, ciphertexts_to_bytes,
};
use vhe_bfv::{Backend, Ciphertext, HeParams, MockParams, Modulus, SlotVector};
use vhe_core::circuit::{
    eval_plain, random_program, Circuit, Gate, GeneratorConfig, LabeledProgram, OutputBlock,
};
use vhe_core::pe::{degree_profile, pe_auth, pe_check, PeAuth, PeSecret};
use vhe_core::protocols::pp::{pp_response, pp_verify, PpProver};
use vhe_core::protocols::req::{blind_terms, final_offset, shift_offset, wire_offsets};
use vhe_core::protocols::transport::*;
use vhe_core::protocols::{cloud_session, client_session, ReqEntry, ReqLedger, SessionOptions};
use vhe_core::{AuthError, RejectCause, Verdict};

const T40: u64 = 1_099_511_627_689;

fn mock_sk(n: usize, t: u64, seed: u64) -> PeSecret {
    let b = Backend::mock(MockParams::new(n, t, 16).unwrap());
    PeSecret::keygen(b, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
}

fn slots_mut(c: &mut Ciphertext) -> &mut SlotVector {
    match c {
        Ciphertext::Mock(m) => &mut m.slots,
        _ => unreachable!(),
    }
}

type Hook = Box<dyn FnMut(&mut Frame) + Send>;

/// Cloud-side channel that rewrites frames it sends or receives.
struct Tamper<C> {
    inner: C,
    hook: Hook,
}

impl<C: Channel> Channel for Tamper<C> {
    fn send(&mut self, mut f: Frame) -> Result<(), AuthError> {
        (self.hook)(&mut f);
        self.inner.send(f)
    }
    fn recv(&mut self) -> Result<Frame, AuthError> {
        let mut f = self.inner.recv()?;
        (self.hook)(&mut f);
        Ok(f)
    }
}

struct Run {
    client: Result<(Option<SlotVector>, Verdict), AuthError>,
    transcript: Transcript,
}

fn authenticate(prog: &LabeledProgram, inputs: &[SlotVector], sk: &PeSecret, seed: u64) -> Vec<PeAuth> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    inputs
        .iter()
        .zip(&prog.inputs)
        .map(|(m, l)| pe_auth(m, l, sk, &mut rng).unwrap())
        .collect()
}

fn run(
    prog: &LabeledProgram,
    auths: &[PeAuth],
    sk: &PeSecret,
    opts: SessionOptions,
    seed: u64,
    hook: Option<Hook>,
) -> Run {
    let log = Arc::new(Mutex::new(Transcript::default()));
    let (a, b) = MemChannel::pair();
    let mut client_end = Recorded::new(a, Side::Client, log.clone());
    let cloud_end = Recorded::new(b, Side::Cloud, log.clone());
    let client = std::thread::scope(|s| {
        let h = s.spawn(|| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            client_session(prog, sk, opts, &mut client_end, &mut rng)
        });
        let mut rng = ChaCha20Rng::seed_from_u64(seed + 1);
        let ev = sk.backend().evaluator();
        let cloud = match hook {
            Some(hook) => {
                let mut ch = Tamper { inner: cloud_end, hook };
                cloud_session(prog, auths, ev, opts, &mut ch, &mut rng)
            }
            None => {
                let mut ch = cloud_end;
                cloud_session(prog, auths, ev, opts, &mut ch, &mut rng)
            }
        };
        let c = h.join().unwrap();
        if let Err(e) = &cloud {
            eprintln!("cloud: {e}");
        }
        c
    });
    let transcript = log.lock().unwrap().clone();
    Run { client, transcript }
}

fn program(slots: usize, gates: Vec<Gate>, inputs: usize) -> LabeledProgram {
    LabeledProgram {
        circuit: Circuit { slots, gates },
        inputs: (0..inputs).map(|k| format!("in{k}")).collect(),
        output_block: OutputBlock { start: 0, len: 1 },
    }
}

/// `x^(2^depth)` by repeated squaring.
fn power_chain(slots: usize, depth: usize) -> LabeledProgram {
    let mut gates = vec![Gate::Input { index: 0 }];
    for i in 0..depth {
        gates.push(Gate::Mul { a: i, b: i, relin: true });
    }
    program(slots, gates, 1)
}

fn random_vec(n: usize, t: u64, rng: &mut impl Rng) -> SlotVector {
    SlotVector((0..n).map(|_| rng.gen_range(0..t)).collect())
}

#[test]
fn pp_packs_the_degree_one_example() {
    let sk = mock_sk(8, 17, 1);
    let ev = sk.backend().evaluator();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let y0 = SlotVector(vec![5, 2, 0, 0, 0, 0, 0, 0]);
    let y1 = SlotVector(vec![1, 1, 0, 0, 0, 0, 0, 0]);
    let auth = PeAuth {
        cts: vec![ev.encrypt(&y0, &mut rng).unwrap(), ev.encrypt(&y1, &mut rng).unwrap()],
    };
    let m2 = pp_response(&auth, ev, 3, 2).unwrap();
    let out = sk.backend().decryptor().decrypt(&m2).unwrap();
    assert_eq!(out.0, vec![11, 4, 2, 0, 0, 0, 0, 0]);
}

#[test]
fn pp_honest_runs_send_two_ciphertexts() {
    let n = 32;
    for (seed, depth) in [(1u64, 0usize), (2, 1), (3, 2), (4, 3)] {
        let sk = mock_sk(n, T40, seed);
        let prog = power_chain(n, depth);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x = random_vec(n, T40, &mut rng);
        let auths = authenticate(&prog, std::slice::from_ref(&x), &sk, seed);
        let r = run(&prog, &auths, &sk, SessionOptions::new(false, true), seed, None);
        let (value, verdict) = r.client.unwrap();
        assert_eq!(verdict, Verdict::Accept, "degree {}", 1 << depth);
        let t = Modulus::new(T40).unwrap();
        assert_eq!(value.unwrap(), eval_plain(&prog.circuit, &[x], &t).unwrap());
        assert_eq!(r.transcript.ciphertexts_to(Side::Client).unwrap(), 2);
        assert_eq!(r.transcript.ciphertexts_to(Side::Cloud).unwrap(), 0);
    }
}

#[test]
fn pp_random_programs_accept() {
    let n = 32;
    let t = Modulus::new(T40).unwrap();
    let cfg = GeneratorConfig::default();
    for seed in 0..100 {
        let sk = mock_sk(n, T40, seed);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let prog = random_program(&cfg, n, &t, "pp", &mut rng);
        let inputs: Vec<_> = prog.inputs.iter().map(|_| random_vec(n, T40, &mut rng)).collect();
        let auths = authenticate(&prog, &inputs, &sk, seed);
        let r = run(&prog, &auths, &sk, SessionOptions::new(false, true), seed, None);
        let (value, verdict) = r.client.unwrap();
        assert_eq!(verdict, Verdict::Accept);
        assert_eq!(value.unwrap(), eval_plain(&prog.circuit, &inputs, &t).unwrap());
    }
}

#[test]
fn pp_rejects_perturbed_responses() {
    let n = 16;
    let sk = mock_sk(n, T40, 9);
    let params = sk.backend().params();
    let prog = power_chain(n, 2);
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let x = random_vec(n, T40, &mut rng);
    let auths = authenticate(&prog, &[x], &sk, 9);
    for k in 0..100 {
        let p = params.clone();
        let slot = k % 6;
        let hook: Hook = Box::new(move |f: &mut Frame| {
            if f.tag == PP_RESPONSE {
                let mut c = ciphertext_from_bytes(&f.payload, &p).unwrap();
                let s = slots_mut(&mut c);
                s.0[slot] = (s.0[slot] + 1 + k as u64) % T40;
                f.payload = ciphertext_to_bytes(&c, &p);
            }
        });
        let r = run(&prog, &auths, &sk, SessionOptions::new(false, true), k as u64, Some(hook));
        let (_, v) = r.client.unwrap();
        let expect = match slot {
            0 => RejectCause::PpResultEvaluation,
            _ => RejectCause::PpHash,
        };
        assert_eq!(v, Verdict::Reject(expect));
    }
}

#[test]
fn pp_consistent_forgery_fails_the_challenge_check() {
    // a prover who knows beta can keep H consistent, but not alpha
    let n = 16;
    let sk = mock_sk(n, T40, 10);
    let ev = sk.backend().evaluator();
    let prog = power_chain(n, 1);
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let x = random_vec(n, T40, &mut rng);
    let auths = authenticate(&prog, &[x], &sk, 10);
    let result = {
        let mut pad = ChaCha20Rng::seed_from_u64(0);
        let cx = vhe_core::pe::PeEvaluator { ev, max_degree: 8, rng: &mut pad };
        vhe_core::pe::pe_eval(&prog, &auths, cx, None).unwrap()
    };
    let (mut cloud, mut client) = MemChannel::pair();
    std::thread::scope(|s| {
        s.spawn(|| {
            cloud
                .send(Frame::new(PP_RESULT, ciphertext_to_bytes(&result.cts[0], &ev.params())))
                .unwrap();
            let ch = cloud.expect(PP_CHALLENGE).unwrap();
            let (delta, beta) = vhe_core::protocols::pp::decode_challenge(&ch).unwrap();
            let mut m2 = pp_response(&result, ev, delta, beta).unwrap();
            let t = Modulus::new(T40).unwrap();
            let s = slots_mut(&mut m2);
            s.0[2] = t.add(s.0[2], 5);
            s.0[3] = t.add(s.0[3], t.mul(t.mul(beta, beta), 5));
            cloud.send(Frame::new(PP_RESPONSE, ciphertext_to_bytes(&m2, &ev.params()))).unwrap();
        });
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (_, v) = pp_verify(None, &prog, 2, &sk, None, &mut client, &mut rng).unwrap();
        assert_eq!(v, Verdict::Reject(RejectCause::PpChallenge));
    });
}

#[test]
fn pp_out_of_order_prover_aborts() {
    let sk = mock_sk(8, 17, 1);
    let prog = power_chain(8, 0);
    let (mut cloud, mut client) = MemChannel::pair();
    cloud.send(Frame::new(PP_CHALLENGE, vec![])).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    assert!(matches!(
        pp_verify(None, &prog, 1, &sk, None, &mut client, &mut rng),
        Err(AuthError::Protocol(_))
    ));

    let auth = authenticate(&prog, &[SlotVector(vec![1; 8])], &sk, 1).remove(0);
    let mut p = PpProver::new(&auth, sk.backend().evaluator());
    assert!(matches!(p.respond(&mut cloud), Err(AuthError::Protocol(_))));
}

#[test]
fn req_chain_stays_quadratic_and_matches_plain_pipeline() {
    let n = 16;
    let t = Modulus::new(T40).unwrap();
    for depth in 2..=3 {
        let sk = mock_sk(n, T40, 20 + depth as u64);
        let prog = power_chain(n, depth);
        let (_, rounds) = degree_profile(&prog.circuit, true);
        assert_eq!(rounds.len(), depth - 1);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = random_vec(n, T40, &mut rng);
        let auths = authenticate(&prog, std::slice::from_ref(&x), &sk, 5);
        let with = run(&prog, &auths, &sk, SessionOptions::new(true, false), 1, None);
        let without = run(&prog, &auths, &sk, SessionOptions::new(false, false), 1, None);
        let (v1, ok1) = with.client.unwrap();
        let (v2, ok2) = without.client.unwrap();
        assert_eq!((ok1, ok2), (Verdict::Accept, Verdict::Accept));
        assert_eq!(v1, v2);
        assert_eq!(v1.unwrap(), eval_plain(&prog.circuit, &[x], &t).unwrap());
        let tr = &with.transcript;
        let high: Vec<_> = tr.frames_to(Side::Client).filter(|f| f.tag == REQ_HIGH_TERMS).collect();
        let blinded: Vec<_> = tr.frames_to(Side::Cloud).filter(|f| f.tag == REQ_BLINDED_TERMS).collect();
        assert_eq!((high.len(), blinded.len()), (depth - 1, depth - 1));
        for f in high.iter().chain(&blinded) {
            assert_eq!(ciphertexts_in(&f.payload).unwrap(), 2);
        }
        // final result is delivered at degree 2
        let last = tr.frames_to(Side::Client).last().unwrap();
        assert_eq!(last.tag, AUTH_RESULT);
        assert_eq!(ciphertexts_in(&last.payload).unwrap(), 3);
    }
}

#[test]
fn req_with_pp_accepts() {
    let n = 16;
    let sk = mock_sk(n, T40, 31);
    let prog = power_chain(n, 3);
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let auths = authenticate(&prog, &[random_vec(n, T40, &mut rng)], &sk, 31);
    let r = run(&prog, &auths, &sk, SessionOptions::new(true, true), 3, None);
    assert_eq!(r.client.unwrap().1, Verdict::Accept);
    assert_eq!(r.transcript.ciphertexts_to(Side::Client).unwrap(), 2 * 2 + 2);
}

#[test]
fn req_rejects_tampered_rounds() {
    let n = 16;
    let sk = mock_sk(n, T40, 40);
    let params: HeParams = sk.backend().params();
    let prog = power_chain(n, 3);
    let mut rng = ChaCha20Rng::seed_from_u64(40);
    let auths = authenticate(&prog, &[random_vec(n, T40, &mut rng)], &sk, 40);
    for k in 0..100u64 {
        let p = params.clone();
        let tag = if k % 2 == 0 { REQ_HIGH_TERMS } else { REQ_BLINDED_TERMS };
        let round = (k / 2) % 2;
        let mut seen = 0;
        let hook: Hook = Box::new(move |f: &mut Frame| {
            if f.tag == tag {
                if seen == round {
                    let mut cs = ciphertexts_from_bytes(&f.payload, &p).unwrap();
                    let s = slots_mut(&mut cs[(k % 3 % 2) as usize]);
                    let j = (k as usize * 7) % 16;
                    s.0[j] = (s.0[j] + 1 + k) % T40;
                    f.payload = ciphertexts_to_bytes(&cs, &p);
                }
                seen += 1;
            }
        });
        let r = run(&prog, &auths, &sk, SessionOptions::new(true, false), k, Some(hook));
        let (_, v) = r.client.unwrap();
        assert!(matches!(v, Verdict::Reject(RejectCause::Encoding { .. })), "{k}: {v:?}");
    }
}

#[test]
fn shift_offset_rules() {
    let n = 8;
    let sk = mock_sk(n, T40, 50);
    let t = sk.t().clone();
    let mut rng = ChaCha20Rng::seed_from_u64(50);

    // no round yet: zero
    let prog = program(
        n,
        vec![
            Gate::Input { index: 0 },
            Gate::Input { index: 1 },
            Gate::Mul { a: 0, b: 1, relin: true },
            Gate::Mul { a: 2, b: 2, relin: true },
            Gate::Add { a: 3, b: 0 },
        ],
        2,
    );
    assert_eq!(shift_offset(&prog, 3, &sk, &ReqLedger::default()).unwrap(), SlotVector::zeros(n));

    // one round at gate 3, then an add with a clean wire: alpha^-1 * alpha * r_bar
    let r_bar = random_vec(n, T40, &mut rng);
    let ledger = ReqLedger {
        entries: vec![ReqEntry { gate: 3, r: SlotVector::zeros(n), r_bar: r_bar.clone() }],
    };
    assert_eq!(shift_offset(&prog, 4, &sk, &ledger).unwrap(), r_bar);

    // product of two post-round wires, against direct substitution
    let prog = program(
        n,
        vec![
            Gate::Input { index: 0 },
            Gate::Input { index: 1 },
            Gate::Mul { a: 0, b: 0, relin: true },
            Gate::Mul { a: 1, b: 1, relin: true },
            Gate::Mul { a: 2, b: 3, relin: true },
        ],
        2,
    );
    let (r1, r2) = (random_vec(n, T40, &mut rng), random_vec(n, T40, &mut rng));
    let ledger = ReqLedger {
        entries: vec![
            ReqEntry { gate: 2, r: SlotVector::zeros(n), r_bar: r1.clone() },
            ReqEntry { gate: 3, r: SlotVector::zeros(n), r_bar: r2.clone() },
        ],
    };
    let wires = wire_offsets(&prog, &sk, &ReqLedger::default(), None).unwrap();
    let rho1 = wires[2].clone().unwrap().0;
    let rho2 = wires[3].clone().unwrap().0;
    let a = sk.alpha();
    let brute: Vec<u64> = (0..n)
        .map(|j| {
            let e1 = t.add(rho1.0[j], t.mul(a, r1.0[j]));
            let e2 = t.add(rho2.0[j], t.mul(a, r2.0[j]));
            t.sub(t.mul(e1, e2), t.mul(rho1.0[j], rho2.0[j]))
        })
        .collect();
    assert_eq!(final_offset(&prog, &sk, &ledger).unwrap().0, brute);
}

#[test]
fn req_with_zero_high_terms_only_adds_blinding() {
    let n = 8;
    let sk = mock_sk(n, T40, 60);
    let t = sk.t().clone();
    let mut rng = ChaCha20Rng::seed_from_u64(60);
    let prog = power_chain(n, 1);
    let x = random_vec(n, T40, &mut rng);
    let auths = authenticate(&prog, &[x], &sk, 60);
    let mut pad = ChaCha20Rng::seed_from_u64(1);
    let ev = sk.backend().evaluator();
    let cx = vhe_core::pe::PeEvaluator { ev, max_degree: 8, rng: &mut pad };
    let out = vhe_core::pe::pe_eval(&prog, &auths, cx, None).unwrap();
    let ys = sk.decrypt(&out).unwrap();
    let z = SlotVector::zeros(n);
    let (y1b, y2b, e) = blind_terms(&z, &z, &z, sk.alpha(), &t, 1, &mut rng);
    let blinded = vec![ys[0].clone(), ys[1].add(&y1b, &t), ys[2].add(&y2b, &t)];
    let offset = e.r_bar.scale(sk.alpha(), &t);
    assert_eq!(pe_check(&ys[0], &prog, &blinded, &sk, Some(&offset)), Verdict::Accept);
    assert!(!pe_check(&ys[0], &prog, &blinded, &sk, None).is_accept());
}

#[test]
fn transcripts_replay_byte_for_byte() {
    let n = 16;
    let sk = mock_sk(n, T40, 70);
    let prog = power_chain(n, 3);
    let mut rng = ChaCha20Rng::seed_from_u64(70);
    let auths = authenticate(&prog, &[random_vec(n, T40, &mut rng)], &sk, 70);
    let opts = SessionOptions::new(true, true);
    let r = run(&prog, &auths, &sk, opts, 7, None);
    let dir = std::env::temp_dir().join(format!("vhe-transcript-{}", std::process::id()));
    r.transcript.save(&dir).unwrap();
    let loaded = Transcript::load(&dir).unwrap();
    std::fs::remove_file(&dir).ok();
    assert_eq!(loaded, r.transcript);

    let mut replay = Replay::new(loaded, Side::Client);
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let replayed = client_session(&prog, &sk, opts, &mut replay, &mut rng).unwrap();
    assert_eq!(replayed, r.client.unwrap());

    // a different client seed diverges at its first message
    let mut replay = Replay::new(r.transcript.clone(), Side::Client);
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    assert!(client_session(&prog, &sk, opts, &mut replay, &mut rng).is_err());
}

#[test]
fn verdict_never_changes_client_messages() {
    let n = 32;
    let sk = mock_sk(n, T40, 80);
    let params = sk.backend().params();
    let prog = power_chain(n, 3);
    let mut rng = ChaCha20Rng::seed_from_u64(80);
    let auths = authenticate(&prog, &[random_vec(n, T40, &mut rng)], &sk, 80);
    for opts in [
        SessionOptions::new(false, true),
        SessionOptions::new(true, true),
        SessionOptions::new(true, false),
    ] {
        let honest = run(&prog, &auths, &sk, opts, 5, None);
        let p = params.clone();
        // tamper only with what reaches the client last
        let hook: Hook = Box::new(move |f: &mut Frame| {
            if f.tag == PP_RESPONSE {
                let mut c = ciphertext_from_bytes(&f.payload, &p).unwrap();
                slots_mut(&mut c).0[1] ^= 1;
                f.payload = ciphertext_to_bytes(&c, &p);
            }
            if f.tag == AUTH_RESULT {
                let mut a = PeAuth::from_bytes(&f.payload, &p).unwrap();
                slots_mut(&mut a.cts[1]).0[1] ^= 1;
                f.payload = a.to_bytes(&p);
            }
        });
        let forged = run(&prog, &auths, &sk, opts, 5, Some(hook));
        assert_eq!(honest.client.as_ref().unwrap().1, Verdict::Accept);
        assert!(!forged.client.as_ref().unwrap().1.is_accept());
        assert_eq!(
            honest.transcript.bytes_to(Side::Cloud),
            forged.transcript.bytes_to(Side::Cloud)
        );
        let last = honest.transcript.records.last().unwrap();
        assert_eq!(last.to, Side::Client);
    }
}
