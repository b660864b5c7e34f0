use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use vhe_bfv::{Backend, Ciphertext, MockParams, Modulus, SlotVector};
use vhe_core::circuit::{
    challenge_inputs, eval_plain, evaluate_wires, random_program, Convention, GeneratorConfig,
    PlainInterp,
};
use vhe_core::pe::{degree_profile, pe_auth, pe_eval, pe_open, PeAuth, PeEvaluator, PeSecret};
use vhe_core::rep::{rep_auth, rep_eval, rep_open, RepSecret};
use vhe_core::{RejectCause, Verdict};

const T40: u64 = 1_099_511_627_689;

fn mock(n: usize, t: u64) -> Backend {
    Backend::mock(MockParams::new(n, t, 16).unwrap())
}

fn random_inputs(n: usize, count: usize, t: u64, rng: &mut impl Rng) -> Vec<SlotVector> {
    (0..count)
        .map(|_| SlotVector((0..n).map(|_| rng.gen_range(0..t)).collect()))
        .collect()
}

fn mock_slots(c: &mut Ciphertext) -> &mut SlotVector {
    match c {
        Ciphertext::Mock(m) => &mut m.slots,
        _ => unreachable!(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Every wire's encoding evaluates to that wire's challenge, and its
    /// constant term to the plaintext value.
    #[test]
    fn pe_invariant_on_every_wire(seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n = 16;
        let sk = PeSecret::keygen(mock(n, T40), &mut rng).unwrap();
        let t = Modulus::new(T40).unwrap();
        let prog = random_program(&GeneratorConfig::default(), n, &t, "w", &mut rng);
        let inputs = random_inputs(n, prog.inputs.len(), T40, &mut rng);
        let auths: Vec<PeAuth> = inputs
            .iter()
            .zip(&prog.inputs)
            .map(|(m, l)| pe_auth(m, l, &sk, &mut rng).unwrap())
            .collect();
        let plain = evaluate_wires(&prog.circuit, &mut PlainInterp { inputs: &inputs, t: &t }).unwrap();
        let chal_in = challenge_inputs(&prog, sk.key(), &t, Convention::Pe);
        let chal = evaluate_wires(&prog.circuit, &mut PlainInterp { inputs: &chal_in, t: &t }).unwrap();
        let (degrees, _) = degree_profile(&prog.circuit, false);
        let mut pad = ChaCha20Rng::seed_from_u64(seed ^ 1);
        let mut cx = PeEvaluator { ev: sk.backend().evaluator(), max_degree: 8, rng: &mut pad };
        let mut wires: Vec<Option<PeAuth>> = vec![None; prog.circuit.gates.len()];
        for (i, g) in prog.circuit.gates.iter().enumerate() {
            if plain[i].is_none() {
                continue;
            }
            let ops = g.operands();
            let out = match g {
                vhe_core::circuit::Gate::Input { index } => auths[*index].clone(),
                _ => cx.gate(g, wires[ops[0]].as_ref().unwrap(), ops.get(1).map(|&o| wires[o].as_ref().unwrap())).unwrap(),
            };
            prop_assert_eq!(Some(out.degree()), degrees[i]);
            let ys = sk.decrypt(&out).unwrap();
            prop_assert_eq!(&ys[0], plain[i].as_ref().unwrap());
            prop_assert_eq!(&sk.evaluate_at_alpha(&ys), chal[i].as_ref().unwrap());
            wires[i] = Some(out);
        }
    }

    /// Honest REP pipelines accept and return the plaintext result.
    #[test]
    fn rep_honest_pipeline(seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (n, lambda) = (128, 8);
        let sk = RepSecret::keygen(lambda, mock(n, 65537), &mut rng).unwrap();
        let t = Modulus::new(65537).unwrap();
        let mut prog = random_program(&GeneratorConfig::default(), n / lambda, &t, "r", &mut rng);
        prog.output_block = vhe_core::circuit::OutputBlock { start: 3, len: 5 };
        let inputs = random_inputs(n / lambda, prog.inputs.len(), 65537, &mut rng);
        let auths: Vec<_> = inputs
            .iter()
            .zip(&prog.inputs)
            .map(|(m, l)| rep_auth(m, l, &sk, &mut rng).unwrap())
            .collect();
        let out = rep_eval(&prog, &auths, sk.backend().evaluator()).unwrap();
        let (value, verdict) = rep_open(&prog, &out, &sk);
        prop_assert_eq!(verdict, Verdict::Accept);
        let expect = eval_plain(&prog.circuit, &inputs, &t).unwrap();
        prop_assert_eq!(value.unwrap().0, expect.0[3..8].to_vec());
    }
}

/// Exhaustive over all 70 half-subsets at lambda = 8: shifting a subset
/// passes iff it is exactly the complement of S.
#[test]
fn rep_forgery_accepts_only_the_complement() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let sk = RepSecret::keygen(8, mock(16, 65537), &mut rng).unwrap();
    let prog = vhe_core::circuit::LabeledProgram {
        circuit: vhe_core::circuit::Circuit {
            slots: 2,
            gates: vec![vhe_core::circuit::Gate::Input { index: 0 }],
        },
        inputs: vec!["x".into()],
        output_block: vhe_core::circuit::OutputBlock { start: 0, len: 1 },
    };
    let auth = rep_auth(&SlotVector(vec![5, 6]), "x", &sk, &mut rng).unwrap();
    let out = rep_eval(&prog, &[auth], sk.backend().evaluator()).unwrap();
    let complement: Vec<usize> = (0..8).filter(|j| !sk.subset().contains(j)).collect();
    let mut accepted = 0;
    for mask in 0u32..256 {
        if mask.count_ones() != 4 {
            continue;
        }
        let subset: Vec<usize> = (0..8).filter(|j| mask >> j & 1 == 1).collect();
        let mut forged = out.clone();
        let slots = mock_slots(&mut forged.cts[0]);
        for &j in &subset {
            slots.0[j] = (slots.0[j] + 3) % 65537;
        }
        let (v, verdict) = rep_open(&prog, &forged, &sk);
        if verdict.is_accept() {
            accepted += 1;
            assert_eq!(subset, complement);
            assert_eq!(v.unwrap().0, vec![8]);
        }
    }
    assert_eq!(accepted, 1);
}

#[test]
fn rep_challenge_set_is_balanced() {
    let mut counts = [0u32; 8];
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let trials = 10_000;
    for _ in 0..trials {
        let sk = RepSecret::keygen(8, mock(16, 17), &mut rng).unwrap();
        for j in sk.subset() {
            counts[j] += 1;
        }
    }
    // each slot lands in S with probability 1/2; 3 sigma = 150
    for c in counts {
        assert!((c as i64 - 5000).abs() < 150, "{counts:?}");
    }
}

#[test]
fn pe_rejects_joint_component_tampering() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let n = 16;
    let sk = PeSecret::keygen(mock(n, T40), &mut rng).unwrap();
    let t = Modulus::new(T40).unwrap();
    let mut prog = random_program(&GeneratorConfig::default(), n, &t, "p", &mut rng);
    while prog.circuit.gates.len() < 4 {
        prog = random_program(&GeneratorConfig::default(), n, &t, "p", &mut rng);
    }
    let inputs = random_inputs(n, prog.inputs.len(), T40, &mut rng);
    let auths: Vec<_> = inputs
        .iter()
        .zip(&prog.inputs)
        .map(|(m, l)| pe_auth(m, l, &sk, &mut rng).unwrap())
        .collect();
    let cx = PeEvaluator { ev: sk.backend().evaluator(), max_degree: 8, rng: &mut rng };
    let out = pe_eval(&prog, &auths, cx, None).unwrap();
    assert_eq!(pe_open(&prog, &out, &sk, None).1, Verdict::Accept);

    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let mut forged = out.clone();
        for c in &mut forged.cts {
            let s = mock_slots(c);
            let j = rng.gen_range(0..n);
            s.0[j] = (s.0[j] + rng.gen_range(1..T40)) % T40;
        }
        let (_, v) = pe_open(&prog, &forged, &sk, None);
        assert!(matches!(v, Verdict::Reject(RejectCause::Encoding { .. })));
    }
}

#[test]
fn rep_rejects_single_gate_mutations() {
    use vhe_core::circuit::Gate;
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let (n, lambda) = (64, 8);
    let sk = RepSecret::keygen(lambda, mock(n, 65537), &mut rng).unwrap();
    let t = Modulus::new(65537).unwrap();
    let cfg = GeneratorConfig::default();
    let mut rejected = 0;
    for k in 0..1000 {
        let prog = random_program(&cfg, n / lambda, &t, &format!("m{k}"), &mut rng);
        let inputs = random_inputs(n / lambda, prog.inputs.len(), 65537, &mut rng);
        let auths: Vec<_> = inputs
            .iter()
            .zip(&prog.inputs)
            .map(|(m, l)| rep_auth(m, l, &sk, &mut rng).unwrap())
            .collect();
        let out = rep_eval(&prog, &auths, sk.backend().evaluator()).unwrap();
        let (value, honest) = rep_open(&prog, &out, &sk);
        assert_eq!(honest, Verdict::Accept);

        let mut mutated = prog.clone();
        let g = mutated.circuit.output();
        mutated.circuit.gates[g] = match mutated.circuit.gates[g].clone() {
            Gate::Input { .. } => Gate::RowSwap { a: 0 },
            Gate::Add { a, b } => Gate::Sub { a, b },
            Gate::Sub { a, b } => Gate::Add { a, b },
            Gate::Mul { a, b, relin } => Gate::Mul { a, b, relin: !relin },
            Gate::MulPlain { a, mut constant } => {
                constant.0[0] = (constant.0[0] + 1) % 65537;
                Gate::MulPlain { a, constant }
            }
            Gate::Rotate { a, step } => Gate::Rotate { a, step: step + 1 },
            Gate::RowSwap { a } => Gate::Rotate { a, step: 1 },
            Gate::InnerSum { a, block } => Gate::InnerSum { a, block: block * 2 },
        };
        let v = vhe_core::rep::rep_verify(&value.unwrap(), &mutated, &out, &sk);
        assert!(!v.is_accept());
        rejected += 1;
    }
    assert_eq!(rejected, 1000);
}
