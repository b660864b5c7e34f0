use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use vhe_bfv::container::*;
use vhe_bfv::*;

fn small_params() -> Params {
    Params::new(ParamSpec::build(1024, 14, &[50, 50]).unwrap()).unwrap()
}

fn random_slots(n: usize, t: u64, rng: &mut impl Rng) -> SlotVector {
    SlotVector((0..n).map(|_| rng.gen_range(0..t)).collect())
}

fn setup(params: &Params, seed: u64) -> (Backend, ChaCha20Rng) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let be = Backend::bfv(params, &[1, 2, 4, -1, 8, 16, 32, 64, 128, 256], true, &mut rng);
    (be, rng)
}

#[test]
fn preset_shapes() {
    let p = ParamSpec::preset("n4096").unwrap();
    assert_eq!(p.t, 40961);
    assert_eq!(p.q.len(), 2);
    assert!(p.q.iter().all(|&q| (1u64 << 49..1u64 << 56).contains(&q) && q % 8192 == 1));
    assert_eq!(p.depth_capacity(), 2);
    let p = ParamSpec::preset("n8192").unwrap();
    assert_eq!(p.q.len(), 4);
    assert_eq!(p.depth_capacity(), 5);
    assert!(matches!(ParamSpec::preset("nope"), Err(HeError::UnknownPreset(_))));
    assert_eq!(Params::preset("n4096").unwrap().log_q(), 109);
}

#[test]
fn homomorphic_ops_match_slots() {
    let params = small_params();
    let (be, mut rng) = setup(&params, 1);
    let (ev, dec) = (be.evaluator(), be.decryptor());
    let t = params.t.clone();
    let u = random_slots(params.n, t.value(), &mut rng);
    let v = random_slots(params.n, t.value(), &mut rng);
    let (cu, cv) = (ev.encrypt(&u, &mut rng).unwrap(), ev.encrypt(&v, &mut rng).unwrap());
    assert_eq!(dec.decrypt(&cu).unwrap(), u);
    assert_eq!(dec.decrypt(&ev.add(&cu, &cv).unwrap()).unwrap(), u.add(&v, &t));
    assert_eq!(dec.decrypt(&ev.sub(&cu, &cv).unwrap()).unwrap(), u.sub(&v, &t));
    assert_eq!(dec.decrypt(&ev.mul_plain(&cu, &v).unwrap()).unwrap(), u.mul(&v, &t));
    assert_eq!(dec.decrypt(&ev.mul_scalar(&cu, 5).unwrap()).unwrap(), u.scale(5, &t));
    assert_eq!(dec.decrypt(&ev.mul(&cu, &cv).unwrap()).unwrap(), u.mul(&v, &t));
    for step in [1i64, 2, -1, 0] {
        assert_eq!(dec.decrypt(&ev.rotate(&cu, step).unwrap()).unwrap(), u.rotate(step));
    }
    assert_eq!(dec.decrypt(&ev.row_swap(&cu).unwrap()).unwrap(), u.row_swap());
    assert_eq!(dec.decrypt(&ev.inner_sum(&cu, 8).unwrap()).unwrap(), u.inner_sum(8, &t));
    assert_eq!(
        dec.decrypt(&ev.inner_sum(&cu, 512).unwrap()).unwrap(),
        u.inner_sum(512, &t)
    );
}

#[test]
fn encryption_is_randomized() {
    let params = small_params();
    let (be, mut rng) = setup(&params, 2);
    let m = SlotVector::constant(params.n, 3);
    let a = be.evaluator().encrypt(&m, &mut rng).unwrap();
    let b = be.evaluator().encrypt(&m, &mut rng).unwrap();
    assert_ne!(a, b);
    assert_eq!(be.decryptor().decrypt(&a).unwrap(), be.decryptor().decrypt(&b).unwrap());
}

#[test]
fn relinearization_preserves_decryption() {
    let params = small_params();
    let (be, mut rng) = setup(&params, 3);
    let (ev, dec) = (be.evaluator(), be.decryptor());
    let u = random_slots(params.n, params.t.value(), &mut rng);
    let c = ev.encrypt(&u, &mut rng).unwrap();
    let tensor = ev.mul_no_relin(&c, &c).unwrap();
    assert_eq!(tensor.size(), 3);
    let relin = ev.relinearize(&tensor).unwrap();
    assert_eq!(relin.size(), 2);
    assert_eq!(dec.decrypt(&tensor).unwrap(), dec.decrypt(&relin).unwrap());
    assert!(matches!(ev.rotate(&tensor, 1), Err(HeError::CiphertextSize { .. })));
}

#[test]
fn noise_budget_falls_and_overflow_is_reported() {
    let params = Params::preset("n4096").unwrap();
    let (be, mut rng) = setup(&params, 4);
    let Backend::Bfv { dec, .. } = &be else { unreachable!() };
    let ev = be.evaluator();
    let t = params.t.clone();
    let u = random_slots(params.n, t.value(), &mut rng);
    let mut c = ev.encrypt(&u, &mut rng).unwrap();
    let mut budget = dec.noise_budget(&c).unwrap();
    assert!(budget > 60, "fresh budget {budget}");
    let mut expect = u.clone();
    for depth in 1..=3 {
        c = ev.mul(&c, &c).unwrap();
        expect = expect.mul(&expect, &t);
        let b = dec.noise_budget(&c).unwrap();
        assert!(b < budget, "depth {depth}: {b} >= {budget}");
        budget = b;
        let r = be.decryptor().decrypt(&c);
        if depth <= 2 {
            assert_eq!(r.unwrap(), expect);
        } else {
            assert!(matches!(r, Err(HeError::DecryptionFailure(_))));
        }
    }
    // rotation and addition never raise the budget
    let c = ev.encrypt(&u, &mut rng).unwrap();
    let b0 = dec.noise_budget(&c).unwrap();
    let r = ev.rotate(&c, 1).unwrap();
    assert!(dec.noise_budget(&r).unwrap() <= b0);
    let s = ev.add(&r, &c).unwrap();
    assert!(dec.noise_budget(&s).unwrap() <= b0);
}

#[test]
fn missing_galois_key_is_an_error() {
    let params = small_params();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let be = Backend::bfv(&params, &[1], false, &mut rng);
    let c = be.evaluator().encrypt(&SlotVector::zeros(params.n), &mut rng).unwrap();
    assert!(matches!(be.evaluator().rotate(&c, 3), Err(HeError::MissingGaloisKey(_))));
    assert!(matches!(be.evaluator().row_swap(&c), Err(HeError::MissingGaloisKey(_))));
}

#[test]
fn mock_depth_limit() {
    let be = Backend::mock(MockParams::new(16, 97, 2).unwrap());
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let ev = be.evaluator();
    let c = ev.encrypt(&SlotVector::constant(16, 2), &mut rng).unwrap();
    let c2 = ev.mul(&c, &c).unwrap();
    let c4 = ev.mul(&c2, &c2).unwrap();
    assert_eq!(be.decryptor().decrypt(&c4).unwrap(), SlotVector::constant(16, 16));
    let c8 = ev.mul(&c4, &c4).unwrap();
    assert!(matches!(be.decryptor().decrypt(&c8), Err(HeError::DecryptionFailure(_))));
    let c_again = ev.encrypt(&SlotVector::constant(16, 2), &mut rng).unwrap();
    assert_ne!(c, c_again);
}

#[test]
fn backends_reject_each_others_ciphertexts() {
    let params = small_params();
    let (be, mut rng) = setup(&params, 7);
    let mock = Backend::mock(MockParams::new(params.n, params.t.value(), 4).unwrap());
    let c = mock.evaluator().encrypt(&SlotVector::zeros(params.n), &mut rng).unwrap();
    assert!(matches!(be.evaluator().add(&c, &c), Err(HeError::BackendMismatch)));
    assert!(matches!(be.decryptor().decrypt(&c), Err(HeError::BackendMismatch)));
}

#[test]
fn container_roundtrips() {
    let params = small_params();
    let (be, mut rng) = setup(&params, 8);
    let hp = be.params();
    let u = random_slots(params.n, params.t.value(), &mut rng);
    let c = be.evaluator().encrypt(&u, &mut rng).unwrap();
    let bytes = ciphertext_to_bytes(&c, &hp);
    assert_eq!(&bytes[..4], b"VRTS");
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), VERSION);
    assert_eq!(ciphertext_from_bytes(&bytes, &hp).unwrap(), c);
    assert!(ciphertext_from_bytes(&bytes[..bytes.len() - 1], &hp).is_err());
    let mut corrupt = bytes.clone();
    corrupt[0] = b'X';
    assert!(ciphertext_from_bytes(&corrupt, &hp).is_err());

    let list = vec![c.clone(), be.evaluator().rotate(&c, 1).unwrap()];
    assert_eq!(ciphertexts_from_bytes(&ciphertexts_to_bytes(&list, &hp), &hp).unwrap(), list);

    let Backend::Bfv { eval, dec } = &be else { unreachable!() };
    let sk = secret_key_from_bytes(&secret_key_to_bytes(dec.secret_key())).unwrap();
    let (pk, rlk, gk) = eval_keys_from_bytes(&eval_keys_to_bytes(
        eval.public_key(),
        eval.relin_key(),
        eval.galois(),
    ))
    .unwrap();
    let ev2 = BfvEvaluator::new(pk, rlk, gk);
    let dec2 = BfvDecryptor::new(sk);
    let r = ev2.mul(&ev2.rotate(&c, 2).unwrap(), &c).unwrap();
    assert_eq!(dec2.decrypt(&r).unwrap(), u.rotate(2).mul(&u, &params.t));

    let mock = Backend::mock(MockParams::new(16, 97, 3).unwrap());
    let mp = mock.params();
    let m = mock.evaluator().encrypt(&SlotVector::constant(16, 5), &mut rng).unwrap();
    assert_eq!(ciphertext_from_bytes(&ciphertext_to_bytes(&m, &mp), &mp).unwrap(), m);
    assert!(ciphertext_from_bytes(&ciphertext_to_bytes(&m, &mp), &hp).is_err());
}

#[derive(Debug, Clone)]
enum Op {
    Add(usize),
    Sub(usize),
    MulPlain(u64),
    Mul(usize),
    Rot(i64),
    Swap,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0usize..4).prop_map(Op::Add),
        (0usize..4).prop_map(Op::Sub),
        (0u64..1000).prop_map(Op::MulPlain),
        (0usize..4).prop_map(Op::Mul),
        prop::sample::select(vec![1i64, 2, -1]).prop_map(Op::Rot),
        Just(Op::Swap),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    /// Mock and BFV agree slot for slot whenever BFV decrypts.
    #[test]
    fn mock_matches_bfv(ops in prop::collection::vec(op(), 1..7), seed in any::<u64>()) {
        let params = small_params();
        let (be, mut rng) = setup(&params, seed);
        let mock = Backend::mock(MockParams::new(params.n, params.t.value(), 2).unwrap());
        let t = params.t.value();
        let inputs: Vec<SlotVector> = (0..4).map(|_| random_slots(params.n, t, &mut rng)).collect();
        let enc = |b: &Backend, rng: &mut ChaCha20Rng| -> Vec<Ciphertext> {
            inputs.iter().map(|m| b.evaluator().encrypt(m, rng).unwrap()).collect()
        };
        let (xs, ms) = (enc(&be, &mut rng), enc(&mock, &mut rng));
        let run = |b: &Backend, xs: &[Ciphertext]| -> Ciphertext {
            let ev = b.evaluator();
            let mut acc = xs[0].clone();
            let mut muls = 0;
            for o in &ops {
                acc = match o {
                    Op::Add(i) => ev.add(&acc, &xs[*i]).unwrap(),
                    Op::Sub(i) => ev.sub(&acc, &xs[*i]).unwrap(),
                    Op::MulPlain(c) => ev.mul_plain(&acc, &SlotVector::constant(params.n, *c)).unwrap(),
                    Op::Mul(i) if muls < 2 => { muls += 1; ev.mul(&acc, &xs[*i]).unwrap() }
                    Op::Mul(_) => acc,
                    Op::Rot(s) => ev.rotate(&acc, *s).unwrap(),
                    Op::Swap => ev.row_swap(&acc).unwrap(),
                };
            }
            acc
        };
        let real = be.decryptor().decrypt(&run(&be, &xs));
        let sim = mock.decryptor().decrypt(&run(&mock, &ms)).unwrap();
        if let Ok(real) = real {
            prop_assert_eq!(real, sim);
        }
    }
}
