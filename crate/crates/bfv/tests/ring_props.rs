use std::sync::Arc;

use proptest::prelude::*;
use vhe_bfv::ring::*;

const N: usize = 32;

fn q60() -> Arc<Modulus> {
    let p = find_ntt_primes(60, N, 1, &[]).unwrap()[0];
    Arc::new(Modulus::with_ntt(p, N).unwrap())
}

fn t_mod() -> Arc<Modulus> {
    Arc::new(Modulus::with_ntt(find_plaintext_prime(20, N).unwrap(), N).unwrap())
}

fn schoolbook(a: &[u64], b: &[u64], q: u64) -> Vec<u64> {
    let n = a.len();
    let mut out = vec![0u128; n];
    let q = q as u128;
    for i in 0..n {
        for j in 0..n {
            let p = a[i] as u128 * b[j] as u128 % q;
            let k = (i + j) % n;
            out[k] = if i + j < n { (out[k] + p) % q } else { (out[k] + q - p) % q };
        }
    }
    out.into_iter().map(|x| x as u64).collect()
}

proptest! {
    #[test]
    fn barrett_agrees_with_remainder(z in any::<u128>(), which in 0usize..3) {
        let q = [17u64, 40961, find_ntt_primes(60, 4096, 1, &[]).unwrap()[0]][which];
        let m = Modulus::new(q).unwrap();
        prop_assert_eq!(m.reduce_u128(z), (z % q as u128) as u64);
    }

    #[test]
    fn ntt_roundtrip(a in prop::collection::vec(any::<u64>(), N)) {
        let q = q60();
        let p = Poly::from_coeffs(a, q);
        let mut r = p.clone();
        r.to_ntt().unwrap();
        r.to_coeff().unwrap();
        prop_assert_eq!(r, p);
    }

    #[test]
    fn ring_laws(a in prop::collection::vec(any::<u64>(), N),
                 b in prop::collection::vec(any::<u64>(), N),
                 c in prop::collection::vec(any::<u64>(), N)) {
        let q = q60();
        let (a, b, c) = (Poly::from_coeffs(a, q.clone()), Poly::from_coeffs(b, q.clone()), Poly::from_coeffs(c, q.clone()));
        prop_assert_eq!(poly_mul(&a, &b).unwrap(), poly_mul(&b, &a).unwrap());
        let lhs = poly_mul(&a, &poly_add(&b, &c).unwrap()).unwrap();
        let rhs = poly_add(&poly_mul(&a, &b).unwrap(), &poly_mul(&a, &c).unwrap()).unwrap();
        prop_assert_eq!(lhs, rhs);
        prop_assert_eq!(poly_mul(&a, &b).unwrap().coeffs, schoolbook(&a.coeffs, &b.coeffs, q.value()));
    }

    #[test]
    fn batching_is_a_ring_isomorphism(u in prop::collection::vec(any::<u64>(), N),
                                      v in prop::collection::vec(any::<u64>(), N)) {
        let t = t_mod();
        let enc = BatchEncoder::new(t.clone()).unwrap();
        let u = SlotVector(u.into_iter().map(|x| t.reduce(x)).collect());
        let v = SlotVector(v.into_iter().map(|x| t.reduce(x)).collect());
        let (pu, pv) = (enc.encode(&u).unwrap(), enc.encode(&v).unwrap());
        prop_assert_eq!(enc.decode(&pu).unwrap(), u.clone());
        prop_assert_eq!(enc.decode(&poly_mul(&pu, &pv).unwrap()).unwrap(), u.mul(&v, &t));
        prop_assert_eq!(enc.decode(&poly_add(&pu, &pv).unwrap()).unwrap(), u.add(&v, &t));
    }

    #[test]
    fn rotations_compose(v in prop::collection::vec(0u64..1000, N), r1 in -40i64..40, r2 in -40i64..40) {
        let v = SlotVector(v);
        prop_assert_eq!(v.rotate(r1).rotate(r2), v.rotate(r1 + r2));
        prop_assert_eq!(v.row_swap().row_swap(), v.clone());
        prop_assert_eq!(v.rotate((N / 2) as i64), v);
    }

    #[test]
    fn slot_poly_eval_is_linear(u in prop::collection::vec(any::<u64>(), 1..40),
                                delta in any::<u64>(), c in any::<u64>()) {
        let t = Modulus::new(40961).unwrap();
        let u = SlotVector(u.into_iter().map(|x| t.reduce(x)).collect());
        let v = SlotVector(u.0.iter().rev().cloned().collect());
        let lhs = slot_poly_eval(&u.scale(t.reduce(c), &t).add(&v, &t), delta, &t);
        let rhs = t.add(t.mul(t.reduce(c), slot_poly_eval(&u, delta, &t)), slot_poly_eval(&v, delta, &t));
        prop_assert_eq!(lhs, rhs);
    }
}
