//! BFV over an RNS chain: public-key encryption, exact tensoring through an
//! auxiliary basis, digit-decomposed key switching for relinearization and
//! Galois automorphisms.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use rand::{Rng, RngCore};

use crate::backend::{Ciphertext, Decryptor, Evaluator, HeError, HeParams};
use crate::params::Params;
use crate::ring::{rotation_galois_element, row_swap_galois_element, Domain, SlotVector};
use crate::rns::RnsPoly;

/// Fraction of the decryption bound beyond which decryption is refused.
const NOISE_CEILING: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BfvCiphertext {
    /// Coefficient-domain polynomials mod Q.
    pub polys: Vec<RnsPoly>,
}

fn sample_ternary(n: usize, rng: &mut dyn RngCore) -> Vec<i64> {
    (0..n).map(|_| rng.gen_range(-1i64..=1)).collect()
}

/// Centered binomial with parameter `eta` (variance `eta / 2`).
fn sample_cbd(n: usize, eta: u32, rng: &mut dyn RngCore) -> Vec<i64> {
    let mask = (1u64 << eta) - 1;
    (0..n)
        .map(|_| {
            let x = rng.next_u64();
            (x & mask).count_ones() as i64 - ((x >> eta) & mask).count_ones() as i64
        })
        .collect()
}

fn sample_uniform(params: &Params, rng: &mut dyn RngCore, domain: Domain) -> RnsPoly {
    let mut p = RnsPoly::zero(params.n, params.q.moduli(), domain);
    for l in &mut p.limbs {
        let q = l.modulus.value();
        for c in &mut l.coeffs {
            *c = rng.gen_range(0..q);
        }
    }
    p
}

fn ntt_of_signed(coeffs: &[i64], params: &Params) -> RnsPoly {
    let mut p = RnsPoly::from_signed(coeffs, params.q.moduli());
    p.to_ntt();
    p
}

#[derive(Debug, Clone)]
pub struct SecretKey {
    pub(crate) params: Params,
    pub(crate) coeffs: Vec<i64>,
    pub(crate) ntt: RnsPoly,
}

#[derive(Debug, Clone)]
pub struct PublicKey {
    pub(crate) params: Params,
    /// `b = -(a s + e)`, NTT domain.
    pub(crate) b: RnsPoly,
    pub(crate) a: RnsPoly,
}

/// Key-switching key: one `(b, a)` pair per (limb, digit), NTT domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySwitchKey {
    pub(crate) parts: Vec<(RnsPoly, RnsPoly)>,
}

#[derive(Debug, Clone, Default)]
pub struct GaloisKeys {
    pub(crate) keys: BTreeMap<usize, KeySwitchKey>,
}

impl GaloisKeys {
    pub fn elements(&self) -> impl Iterator<Item = usize> + '_ {
        self.keys.keys().copied()
    }
}

impl SecretKey {
    pub fn generate(params: &Params, rng: &mut dyn RngCore) -> Self {
        let coeffs = sample_ternary(params.n, rng);
        let ntt = ntt_of_signed(&coeffs, params);
        SecretKey {
            params: params.clone(),
            coeffs,
            ntt,
        }
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn public_key(&self, rng: &mut dyn RngCore) -> PublicKey {
        let p = &self.params;
        let a = sample_uniform(p, rng, Domain::Ntt);
        let e = ntt_of_signed(&sample_cbd(p.n, p.spec.eta, rng), p);
        let mut b = a.clone();
        b.mul_assign_ntt(&self.ntt).unwrap();
        b.add_assign(&e).unwrap();
        b.neg_assign();
        PublicKey {
            params: p.clone(),
            b,
            a,
        }
    }

    /// Key switching from `target` (NTT domain) to this key.
    fn switch_key(&self, target: &RnsPoly, rng: &mut dyn RngCore) -> KeySwitchKey {
        let p = &self.params;
        let w = p.spec.decomp_bits;
        let mut parts = Vec::with_capacity(p.q.len() * p.digits);
        for i in 0..p.q.len() {
            for j in 0..p.digits {
                let a = sample_uniform(p, rng, Domain::Ntt);
                let e = ntt_of_signed(&sample_cbd(p.n, p.spec.eta, rng), p);
                let mut b = a.clone();
                b.mul_assign_ntt(&self.ntt).unwrap();
                b.add_assign(&e).unwrap();
                b.neg_assign();
                let qi = &p.q.moduli()[i];
                let g = qi.pow(2, w as u64 * j as u64);
                let mut s = target.limbs[i].clone();
                s.scale_assign(g);
                b.limbs[i].add_assign(&s).unwrap();
                parts.push((b, a));
            }
        }
        KeySwitchKey { parts }
    }

    pub fn relin_key(&self, rng: &mut dyn RngCore) -> KeySwitchKey {
        let mut s2 = self.ntt.clone();
        s2.mul_assign_ntt(&self.ntt).unwrap();
        self.switch_key(&s2, rng)
    }

    pub fn galois_key(&self, g: usize, rng: &mut dyn RngCore) -> KeySwitchKey {
        let mut sg = RnsPoly::from_signed(&self.coeffs, self.params.q.moduli())
            .automorphism(g)
            .unwrap();
        sg.to_ntt();
        self.switch_key(&sg, rng)
    }

    /// Keys for the given row-rotation steps, plus the row swap if asked.
    pub fn galois_keys(&self, steps: &[i64], row_swap: bool, rng: &mut dyn RngCore) -> GaloisKeys {
        let n = self.params.n;
        let mut elts: Vec<usize> = steps
            .iter()
            .map(|&s| rotation_galois_element(s, n))
            .filter(|&g| g != 1)
            .collect();
        if row_swap {
            elts.push(row_swap_galois_element(n));
        }
        elts.sort_unstable();
        elts.dedup();
        GaloisKeys {
            keys: elts
                .into_iter()
                .map(|g| (g, self.galois_key(g, rng)))
                .collect(),
        }
    }
}

/// Public evaluation state: encryption key plus switching keys.
#[derive(Debug, Clone)]
pub struct BfvEvaluator {
    params: Params,
    pk: PublicKey,
    rlk: Option<KeySwitchKey>,
    gk: GaloisKeys,
}

impl BfvEvaluator {
    pub fn new(pk: PublicKey, rlk: Option<KeySwitchKey>, gk: GaloisKeys) -> Self {
        BfvEvaluator {
            params: pk.params.clone(),
            pk,
            rlk,
            gk,
        }
    }

    pub fn bfv_params(&self) -> &Params {
        &self.params
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.pk
    }

    pub fn relin_key(&self) -> Option<&KeySwitchKey> {
        self.rlk.as_ref()
    }

    pub fn galois(&self) -> &GaloisKeys {
        &self.gk
    }

    fn unwrap<'a>(&self, c: &'a Ciphertext) -> Result<&'a BfvCiphertext, HeError> {
        match c {
            Ciphertext::Bfv(b) if b.polys[0].limbs.len() == self.params.q.len()
                && b.polys[0].n() == self.params.n =>
            {
                Ok(b)
            }
            _ => Err(HeError::BackendMismatch),
        }
    }

    /// Plaintext lifted to centered residues mod Q, NTT domain.
    fn lift_plain(&self, v: &SlotVector) -> Result<RnsPoly, HeError> {
        if v.len() != self.params.n {
            return Err(HeError::SlotLength {
                got: v.len(),
                expected: self.params.n,
            });
        }
        let m = self.params.encoder.encode(v)?;
        let t = &self.params.t;
        let signed: Vec<i64> = m.coeffs.iter().map(|&c| t.centered(c)).collect();
        Ok(ntt_of_signed(&signed, &self.params))
    }

    /// Digit decomposition of `c` against `key`; returns coefficient-domain
    /// `(sum d_ij b_ij, sum d_ij a_ij)`.
    fn key_switch(&self, c: &RnsPoly, key: &KeySwitchKey) -> (RnsPoly, RnsPoly) {
        let p = &self.params;
        let w = p.spec.decomp_bits;
        let mask = (1u64 << w) - 1;
        let mut acc0 = RnsPoly::zero(p.n, p.q.moduli(), Domain::Ntt);
        let mut acc1 = acc0.clone();
        for i in 0..p.q.len() {
            for j in 0..p.digits {
                let digit: Vec<u64> = c.limbs[i]
                    .coeffs
                    .iter()
                    .map(|&x| (x >> (w as usize * j)) & mask)
                    .collect();
                let mut d = RnsPoly {
                    limbs: p
                        .q
                        .moduli()
                        .iter()
                        .map(|m| crate::ring::Poly {
                            coeffs: digit.clone(),
                            domain: Domain::Coefficient,
                            modulus: m.clone(),
                        })
                        .collect(),
                };
                d.to_ntt();
                let (b, a) = &key.parts[i * p.digits + j];
                acc0.fma_ntt(&d, b);
                acc1.fma_ntt(&d, a);
            }
        }
        acc0.to_coeff();
        acc1.to_coeff();
        (acc0, acc1)
    }

    /// `round(t/Q * x)` for a coefficient-domain polynomial mod `QP`.
    fn scale_round(&self, x: &RnsPoly) -> RnsPoly {
        let p = &self.params;
        let k = p.q.len();
        let kp = p.p.len();
        let t = p.t.value();
        let mut out = RnsPoly::zero(p.n, p.q.moduli(), Domain::Coefficient);
        let qm = p.q.moduli();
        let pm = p.p.moduli();
        let t_q: Vec<u64> = qm.iter().map(|m| m.reduce(t)).collect();
        let t_p: Vec<u64> = pm.iter().map(|m| m.reduce(t)).collect();
        let (mut zq, mut yq) = (vec![0u64; k], vec![0u64; k]);
        let (mut rp, mut yp, mut sp) = (vec![0u64; kp], vec![0u64; kp], vec![0u64; kp]);
        let mut oq = vec![0u64; k];
        for c in 0..p.n {
            for i in 0..k {
                zq[i] = qm[i].mul(x.limbs[i].coeffs[c], t_q[i]);
            }
            p.q_to_p.convert(&zq, &mut yq, &mut rp);
            for j in 0..kp {
                let z = pm[j].mul(x.limbs[k + j].coeffs[c], t_p[j]);
                sp[j] = pm[j].mul(pm[j].sub(z, rp[j]), p.q_inv_mod_p[j]);
            }
            p.p_to_q.convert(&sp, &mut yp, &mut oq);
            for i in 0..k {
                out.limbs[i].coeffs[c] = oq[i];
            }
        }
        out
    }

    fn extend_ntt(&self, x: &RnsPoly) -> RnsPoly {
        let mut e = x.clone().extend(self.params.q_to_p.convert_poly(x));
        e.to_ntt();
        e
    }
}

impl Evaluator for BfvEvaluator {
    fn params(&self) -> HeParams {
        HeParams::Bfv(self.params.clone())
    }

    fn encrypt(&self, m: &SlotVector, rng: &mut dyn RngCore) -> Result<Ciphertext, HeError> {
        let p = &self.params;
        if m.len() != p.n {
            return Err(HeError::SlotLength {
                got: m.len(),
                expected: p.n,
            });
        }
        let pt = p.encoder.encode(m)?;
        let u = ntt_of_signed(&sample_ternary(p.n, rng), p);
        let e0 = RnsPoly::from_signed(&sample_cbd(p.n, p.spec.eta, rng), p.q.moduli());
        let e1 = RnsPoly::from_signed(&sample_cbd(p.n, p.spec.eta, rng), p.q.moduli());
        let mut c0 = self.pk.b.clone();
        c0.mul_assign_ntt(&u)?;
        c0.to_coeff();
        c0.add_assign(&e0)?;
        for (i, l) in c0.limbs.iter_mut().enumerate() {
            let q = l.modulus.clone();
            for (c, &mv) in l.coeffs.iter_mut().zip(&pt.coeffs) {
                *c = q.add(*c, q.mul(q.reduce(mv), p.delta[i]));
            }
        }
        let mut c1 = self.pk.a.clone();
        c1.mul_assign_ntt(&u)?;
        c1.to_coeff();
        c1.add_assign(&e1)?;
        Ok(Ciphertext::Bfv(BfvCiphertext {
            polys: vec![c0, c1],
        }))
    }

    fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        let (a, b) = (self.unwrap(a)?, self.unwrap(b)?);
        let (long, short) = if a.polys.len() >= b.polys.len() {
            (a, b)
        } else {
            (b, a)
        };
        let mut out = long.clone();
        for (x, y) in out.polys.iter_mut().zip(&short.polys) {
            x.add_assign(y)?;
        }
        Ok(Ciphertext::Bfv(out))
    }

    fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        let nb = self.negate(b)?;
        self.add(a, &nb)
    }

    fn negate(&self, a: &Ciphertext) -> Result<Ciphertext, HeError> {
        let mut out = self.unwrap(a)?.clone();
        for x in &mut out.polys {
            x.neg_assign();
        }
        Ok(Ciphertext::Bfv(out))
    }

    fn mul_plain(&self, a: &Ciphertext, v: &SlotVector) -> Result<Ciphertext, HeError> {
        let a = self.unwrap(a)?;
        let m = self.lift_plain(v)?;
        let mut out = a.clone();
        for x in &mut out.polys {
            x.to_ntt();
            x.mul_assign_ntt(&m)?;
            x.to_coeff();
        }
        Ok(Ciphertext::Bfv(out))
    }

    fn mul_no_relin(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        let (a, b) = (self.unwrap(a)?, self.unwrap(b)?);
        for c in [a, b] {
            if c.polys.len() != 2 {
                return Err(HeError::CiphertextSize {
                    expected: 2,
                    got: c.polys.len(),
                });
            }
        }
        let ea: Vec<RnsPoly> = a.polys.iter().map(|x| self.extend_ntt(x)).collect();
        let eb: Vec<RnsPoly> = b.polys.iter().map(|x| self.extend_ntt(x)).collect();
        let zero = RnsPoly::zero(self.params.n, &ea[0].limbs.iter().map(|l| l.modulus.clone()).collect::<Vec<_>>(), Domain::Ntt);
        let mut prod = vec![zero; 3];
        for (i, x) in ea.iter().enumerate() {
            for (j, y) in eb.iter().enumerate() {
                prod[i + j].fma_ntt(x, y);
            }
        }
        let polys = prod
            .into_iter()
            .map(|mut d| {
                d.to_coeff();
                self.scale_round(&d)
            })
            .collect();
        Ok(Ciphertext::Bfv(BfvCiphertext { polys }))
    }

    fn relinearize(&self, a: &Ciphertext) -> Result<Ciphertext, HeError> {
        let a = self.unwrap(a)?;
        match a.polys.len() {
            2 => Ok(Ciphertext::Bfv(a.clone())),
            3 => {
                let rlk = self.rlk.as_ref().ok_or(HeError::MissingRelinKey)?;
                let (k0, k1) = self.key_switch(&a.polys[2], rlk);
                let mut c0 = a.polys[0].clone();
                let mut c1 = a.polys[1].clone();
                c0.add_assign(&k0)?;
                c1.add_assign(&k1)?;
                Ok(Ciphertext::Bfv(BfvCiphertext {
                    polys: vec![c0, c1],
                }))
            }
            got => Err(HeError::CiphertextSize { expected: 3, got }),
        }
    }

    fn rotate(&self, a: &Ciphertext, step: i64) -> Result<Ciphertext, HeError> {
        let g = rotation_galois_element(step, self.params.n);
        if g == 1 {
            self.unwrap(a)?;
            return Ok(a.clone());
        }
        self.apply_galois(a, g)
    }

    fn row_swap(&self, a: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.apply_galois(a, row_swap_galois_element(self.params.n))
    }
}

impl BfvEvaluator {
    fn apply_galois(&self, a: &Ciphertext, g: usize) -> Result<Ciphertext, HeError> {
        let a = self.unwrap(a)?;
        if a.polys.len() != 2 {
            return Err(HeError::CiphertextSize {
                expected: 2,
                got: a.polys.len(),
            });
        }
        let key = self.gk.keys.get(&g).ok_or(HeError::MissingGaloisKey(g))?;
        let mut c0 = a.polys[0].automorphism(g)?;
        let c1 = a.polys[1].automorphism(g)?;
        let (k0, k1) = self.key_switch(&c1, key);
        c0.add_assign(&k0)?;
        Ok(Ciphertext::Bfv(BfvCiphertext {
            polys: vec![c0, k1],
        }))
    }
}

#[derive(Debug, Clone)]
pub struct BfvDecryptor {
    sk: SecretKey,
}

impl BfvDecryptor {
    pub fn new(sk: SecretKey) -> Self {
        BfvDecryptor { sk }
    }

    pub fn secret_key(&self) -> &SecretKey {
        &self.sk
    }

    /// `c0 + c1 s + c2 s^2 + ...` in the coefficient domain.
    fn phase(&self, c: &Ciphertext) -> Result<RnsPoly, HeError> {
        let c = match c {
            Ciphertext::Bfv(b) if b.polys[0].limbs.len() == self.sk.params.q.len() => b,
            _ => return Err(HeError::BackendMismatch),
        };
        let mut acc = c.polys[0].clone();
        acc.to_ntt();
        let mut s_pow = self.sk.ntt.clone();
        for (k, poly) in c.polys.iter().enumerate().skip(1) {
            if k > 1 {
                s_pow.mul_assign_ntt(&self.sk.ntt)?;
            }
            let mut x = poly.clone();
            x.to_ntt();
            acc.fma_ntt(&x, &s_pow);
        }
        acc.to_coeff();
        Ok(acc)
    }

    /// Plaintext coefficients and the largest `|t x / Q - round(t x / Q)|`.
    fn decode_phase(&self, x: &RnsPoly) -> (Vec<u64>, f64) {
        let p = &self.sk.params;
        let t = p.t.value();
        let qm = p.q.moduli();
        let hat_inv = p.q.hat_inv();
        let mut out = Vec::with_capacity(p.n);
        let mut worst = 0.0f64;
        for c in 0..p.n {
            let mut int = 0u64;
            let mut frac = 0.0f64;
            for (i, q) in qm.iter().enumerate() {
                let y = q.mul(x.limbs[i].coeffs[c], hat_inv[i]) as u128 * t as u128;
                let qv = q.value() as u128;
                int = p.t.add(int, ((y / qv) % t as u128) as u64);
                frac += (y % qv) as f64 / qv as f64;
            }
            let r = frac.round();
            worst = worst.max((frac - r).abs());
            out.push(p.t.add(int, p.t.reduce(r as u64)));
        }
        (out, worst)
    }

    /// Remaining noise budget in bits, computed exactly.
    pub fn noise_budget(&self, c: &Ciphertext) -> Result<u32, HeError> {
        let p = &self.sk.params;
        let x = self.phase(c)?;
        let q = p.q.product();
        let half = q >> 1u32;
        let mut worst = BigUint::default();
        let mut res = vec![0u64; p.q.len()];
        for i in 0..p.n {
            for (l, r) in res.iter_mut().enumerate() {
                *r = x.limbs[l].coeffs[i];
            }
            let v = (p.q.reconstruct(&res) * p.t.value()) % q;
            let v = if v > half { q - v } else { v };
            if v > worst {
                worst = v;
            }
        }
        // budget = log2(Q / (2 * |t v|))
        let bits = q.bits() as i64 - worst.bits() as i64 - 1;
        Ok(bits.max(0) as u32)
    }
}

impl Decryptor for BfvDecryptor {
    fn decrypt(&self, c: &Ciphertext) -> Result<SlotVector, HeError> {
        let x = self.phase(c)?;
        let (coeffs, worst) = self.decode_phase(&x);
        if worst > NOISE_CEILING {
            return Err(HeError::DecryptionFailure(worst * 2.0));
        }
        let pt = crate::ring::Poly {
            coeffs,
            domain: Domain::Coefficient,
            modulus: self.sk.params.t.clone(),
        };
        Ok(self.sk.params.encoder.decode(&pt)?)
    }
}
