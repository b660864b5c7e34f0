use std::time::Instant;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use vhe_bfv::*;

fn main() {
    let name = std::env::args().nth(1).unwrap_or("n4096".into());
    let params = Params::preset(&name).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let t0 = Instant::now();
    let be = Backend::bfv(&params, &[1], true, &mut rng);
    println!("{name}: logq={} aux={} keygen {:?}", params.log_q(), params.p.len(), t0.elapsed());
    let (ev, dec) = (be.evaluator(), be.decryptor());
    let Backend::Bfv { dec: bd, .. } = &be else { unreachable!() };
    let t = params.t.value();
    let v = SlotVector((0..params.n as u64).map(|i| (i * 31 + 7) % t).collect());
    let t0 = Instant::now();
    let mut c = ev.encrypt(&v, &mut rng).unwrap();
    println!("enc {:?} budget {}", t0.elapsed(), bd.noise_budget(&c).unwrap());
    let mut expect = v.clone();
    for d in 1..=12 {
        let t0 = Instant::now();
        let fresh = ev.encrypt(&v, &mut rng).unwrap();
        c = ev.mul(&c, &fresh).unwrap();
        let el = t0.elapsed();
        expect = expect.mul(&v, &params.t);
        let b = bd.noise_budget(&c).unwrap();
        let ok = dec.decrypt(&c).map(|m| m == expect);
        println!("depth {d}: mul {el:?} budget {b} ok {ok:?}");
        if b == 0 { break; }
    }
    let c = ev.encrypt(&v, &mut rng).unwrap();
    let t0 = Instant::now();
    let r = ev.rotate(&c, 1).unwrap();
    println!("rot {:?} {}", t0.elapsed(), dec.decrypt(&r).unwrap() == v.rotate(1));
    let r = ev.row_swap(&c).unwrap();
    println!("swap {}", dec.decrypt(&r).unwrap() == v.row_swap());
    let t0 = Instant::now();
    let _ = dec.decrypt(&c).unwrap();
    println!("dec {:?}", t0.elapsed());
}
