//! Residue-number-system polynomials and the centered base conversion used
//! to extend ciphertexts before tensoring.

use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::ring::{Domain, Modulus, Poly, RingError};

/// Ordered set of pairwise distinct NTT-friendly primes.
#[derive(Debug, Clone)]
pub struct RnsBasis {
    moduli: Vec<Arc<Modulus>>,
    product: BigUint,
    /// `(Q / q_i)^-1 mod q_i`
    hat_inv: Vec<u64>,
    /// `Q / q_i` as big integers, for exact reconstruction.
    hat: Vec<BigUint>,
}

impl RnsBasis {
    pub fn new(moduli: Vec<Arc<Modulus>>) -> Result<Self, RingError> {
        let product = moduli
            .iter()
            .fold(BigUint::one(), |acc, q| acc * q.value());
        let mut hat = Vec::with_capacity(moduli.len());
        let mut hat_inv = Vec::with_capacity(moduli.len());
        for q in &moduli {
            let h = &product / q.value();
            let h_mod = (&h % q.value()).to_u64().unwrap();
            hat_inv.push(q.inv(h_mod)?);
            hat.push(h);
        }
        Ok(RnsBasis {
            moduli,
            product,
            hat_inv,
            hat,
        })
    }

    pub fn moduli(&self) -> &[Arc<Modulus>] {
        &self.moduli
    }

    pub fn len(&self) -> usize {
        self.moduli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moduli.is_empty()
    }

    pub fn product(&self) -> &BigUint {
        &self.product
    }

    pub fn bits(&self) -> u64 {
        self.product.bits()
    }

    pub fn hat_inv(&self) -> &[u64] {
        &self.hat_inv
    }

    /// `product mod m`.
    pub fn product_mod(&self, m: u64) -> u64 {
        (&self.product % m).to_u64().unwrap()
    }

    /// Exact integer in `[0, Q)` from residues.
    pub fn reconstruct(&self, residues: &[u64]) -> BigUint {
        let mut acc = BigUint::zero();
        for (i, q) in self.moduli.iter().enumerate() {
            let y = q.mul(residues[i], self.hat_inv[i]);
            acc += &self.hat[i] * y;
        }
        acc % &self.product
    }
}

/// Centered conversion from one basis to another: a value `x` given mod `A`
/// is mapped to the residues of its representative in `[-A/2, A/2)`.
#[derive(Debug, Clone)]
pub struct BaseConverter {
    from: RnsBasis,
    to: Vec<Arc<Modulus>>,
    /// `(A / a_i) mod b_j`, indexed `[j][i]`
    hat_mod_to: Vec<Vec<u64>>,
    /// `A mod b_j`
    prod_mod_to: Vec<u64>,
    inv_from: Vec<f64>,
}

impl BaseConverter {
    pub fn new(from: &RnsBasis, to: &[Arc<Modulus>]) -> Self {
        let hat_mod_to = to
            .iter()
            .map(|b| {
                from.hat
                    .iter()
                    .map(|h| (h % b.value()).to_u64().unwrap())
                    .collect()
            })
            .collect();
        BaseConverter {
            from: from.clone(),
            to: to.to_vec(),
            hat_mod_to,
            prod_mod_to: to.iter().map(|b| from.product_mod(b.value())).collect(),
            inv_from: from.moduli.iter().map(|q| 1.0 / q.value() as f64).collect(),
        }
    }

    /// Converts one coefficient; `x[i]` is the residue mod `a_i`, and the
    /// output receives one residue per target modulus.
    #[inline]
    pub fn convert(&self, x: &[u64], y: &mut [u64], out: &mut [u64]) {
        let mut frac = 0.0f64;
        for (i, q) in self.from.moduli.iter().enumerate() {
            y[i] = q.mul(x[i], self.from.hat_inv[i]);
            frac += y[i] as f64 * self.inv_from[i];
        }
        let v = frac.round() as u64;
        for (j, b) in self.to.iter().enumerate() {
            let mut acc: u128 = 0;
            for (i, &yi) in y.iter().enumerate() {
                acc += yi as u128 * self.hat_mod_to[j][i] as u128;
            }
            let s = b.reduce_u128(acc);
            out[j] = b.sub(s, b.mul(b.reduce(v), self.prod_mod_to[j]));
        }
    }

    /// Converts every coefficient of a coefficient-domain RNS polynomial.
    pub fn convert_poly(&self, p: &RnsPoly) -> RnsPoly {
        let n = p.n();
        let k = self.from.len();
        let mut limbs: Vec<Vec<u64>> = vec![vec![0; n]; self.to.len()];
        let mut x = vec![0u64; k];
        let mut y = vec![0u64; k];
        let mut o = vec![0u64; self.to.len()];
        for c in 0..n {
            for i in 0..k {
                x[i] = p.limbs[i].coeffs[c];
            }
            self.convert(&x, &mut y, &mut o);
            for (j, &v) in o.iter().enumerate() {
                limbs[j][c] = v;
            }
        }
        RnsPoly {
            limbs: limbs
                .into_iter()
                .zip(&self.to)
                .map(|(coeffs, m)| Poly {
                    coeffs,
                    domain: Domain::Coefficient,
                    modulus: m.clone(),
                })
                .collect(),
        }
    }
}

/// A polynomial held as one [`Poly`] per prime of a basis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RnsPoly {
    pub limbs: Vec<Poly>,
}

impl RnsPoly {
    pub fn zero(n: usize, basis: &[Arc<Modulus>], domain: Domain) -> Self {
        RnsPoly {
            limbs: basis
                .iter()
                .map(|m| Poly {
                    coeffs: vec![0; n],
                    domain,
                    modulus: m.clone(),
                })
                .collect(),
        }
    }

    /// Small signed coefficients replicated into every limb.
    pub fn from_signed(coeffs: &[i64], basis: &[Arc<Modulus>]) -> Self {
        RnsPoly {
            limbs: basis
                .iter()
                .map(|m| Poly::from_signed(coeffs, m.clone()))
                .collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.limbs[0].coeffs.len()
    }

    pub fn domain(&self) -> Domain {
        self.limbs[0].domain
    }

    pub fn to_ntt(&mut self) {
        for l in &mut self.limbs {
            l.to_ntt().expect("basis moduli carry NTT tables");
        }
    }

    pub fn to_coeff(&mut self) {
        for l in &mut self.limbs {
            l.to_coeff().expect("basis moduli carry NTT tables");
        }
    }

    pub fn add_assign(&mut self, o: &RnsPoly) -> Result<(), RingError> {
        for (a, b) in self.limbs.iter_mut().zip(&o.limbs) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn sub_assign(&mut self, o: &RnsPoly) -> Result<(), RingError> {
        for (a, b) in self.limbs.iter_mut().zip(&o.limbs) {
            a.sub_assign(b)?;
        }
        Ok(())
    }

    pub fn neg_assign(&mut self) {
        for a in &mut self.limbs {
            a.neg_assign();
        }
    }

    pub fn mul_assign_ntt(&mut self, o: &RnsPoly) -> Result<(), RingError> {
        for (a, b) in self.limbs.iter_mut().zip(&o.limbs) {
            a.mul_assign_ntt(b)?;
        }
        Ok(())
    }

    /// `self += a * b`, all operands in the NTT domain.
    pub fn fma_ntt(&mut self, a: &RnsPoly, b: &RnsPoly) {
        for ((acc, x), y) in self.limbs.iter_mut().zip(&a.limbs).zip(&b.limbs) {
            let q = acc.modulus.clone();
            for ((r, &u), &v) in acc.coeffs.iter_mut().zip(&x.coeffs).zip(&y.coeffs) {
                *r = q.add(*r, q.mul(u, v));
            }
        }
    }

    pub fn automorphism(&self, g: usize) -> Result<RnsPoly, RingError> {
        Ok(RnsPoly {
            limbs: self
                .limbs
                .iter()
                .map(|l| l.automorphism(g))
                .collect::<Result<_, _>>()?,
        })
    }

    /// Limbs concatenated with those of `other` (basis extension).
    pub fn extend(mut self, other: RnsPoly) -> RnsPoly {
        self.limbs.extend(other.limbs);
        self
    }
}
