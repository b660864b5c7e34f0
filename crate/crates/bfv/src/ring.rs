//! Arithmetic in `Z_q[X]/(X^N + 1)` for word-sized primes, negacyclic NTT,
//! Galois automorphisms and the SIMD batching map used for plaintexts.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest modulus bit-width accepted by [`Modulus`].
pub const MAX_MODULUS_BITS: u32 = 60;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RingError {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("modulus {0} does not fit in {MAX_MODULUS_BITS} bits")]
    ModulusTooLarge(u64),
    #[error("degree {0} is not a power of two >= 2")]
    BadDegree(usize),
    #[error("modulus {q} is not 1 mod 2N for N = {n}")]
    NotNttFriendly { q: u64, n: usize },
    #[error("modulus mismatch: {0} vs {1}")]
    ModulusMismatch(u64, u64),
    #[error("degree mismatch: {0} vs {1}")]
    DegreeMismatch(usize, usize),
    #[error("operand is in the wrong domain")]
    WrongDomain,
    #[error("{0} has no inverse modulo {1}")]
    NotInvertible(u64, u64),
    #[error("no prime of {bits} bits is 1 mod {two_n}")]
    NoPrime { bits: u32, two_n: u64 },
    #[error("slot vector of length {got} does not fit N = {n}")]
    SlotLength { got: usize, n: usize },
    #[error("malformed polynomial encoding: {0}")]
    Decode(&'static str),
}

/// Deterministic Miller-Rabin, exact for all 64-bit inputs.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const SMALL: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in SMALL {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut r = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                r = mulmod(r, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        r
    };
    'witness: for a in SMALL {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Precomputed tables for the length-`n` negacyclic transform.
#[derive(Clone)]
struct NttTables {
    n: usize,
    psi_rev: Vec<u64>,
    psi_rev_shoup: Vec<u64>,
    psi_inv_rev: Vec<u64>,
    psi_inv_rev_shoup: Vec<u64>,
    n_inv: u64,
    n_inv_shoup: u64,
}

/// A prime modulus below 2^60 with Barrett constants and, when it is
/// 1 mod 2N, NTT tables for degree N.
#[derive(Clone)]
pub struct Modulus {
    value: u64,
    ratio_lo: u64,
    ratio_hi: u64,
    ntt: Option<NttTables>,
}

impl fmt::Debug for Modulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Modulus({})", self.value)
    }
}

impl PartialEq for Modulus {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value
    }
}
impl Eq for Modulus {}

fn bit_reverse(x: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        x.reverse_bits() >> (usize::BITS - bits)
    }
}

impl Modulus {
    /// Plain modulus without transform tables.
    pub fn new(value: u64) -> Result<Self, RingError> {
        if value >= 1u64 << MAX_MODULUS_BITS {
            return Err(RingError::ModulusTooLarge(value));
        }
        if !is_prime(value) {
            return Err(RingError::NotPrime(value));
        }
        let ratio = u128::MAX / value as u128;
        Ok(Modulus {
            value,
            ratio_lo: ratio as u64,
            ratio_hi: (ratio >> 64) as u64,
            ntt: None,
        })
    }

    /// Modulus with NTT tables for ring degree `n`.
    pub fn with_ntt(value: u64, n: usize) -> Result<Self, RingError> {
        if n < 2 || !n.is_power_of_two() {
            return Err(RingError::BadDegree(n));
        }
        let mut m = Modulus::new(value)?;
        if (value - 1) % (2 * n as u64) != 0 {
            return Err(RingError::NotNttFriendly { q: value, n });
        }
        let psi = m.primitive_root(2 * n as u64);
        let psi_inv = m.inv(psi)?;
        let bits = n.trailing_zeros();
        let mut psi_rev = vec![0u64; n];
        let mut psi_inv_rev = vec![0u64; n];
        let (mut p, mut pi) = (1u64, 1u64);
        for i in 0..n {
            let r = bit_reverse(i, bits);
            psi_rev[r] = p;
            psi_inv_rev[r] = pi;
            p = m.mul(p, psi);
            pi = m.mul(pi, psi_inv);
        }
        let shoup = |v: &Vec<u64>| v.iter().map(|&w| m.shoup(w)).collect::<Vec<_>>();
        let n_inv = m.inv(n as u64 % value)?;
        m.ntt = Some(NttTables {
            n,
            psi_rev_shoup: shoup(&psi_rev),
            psi_inv_rev_shoup: shoup(&psi_inv_rev),
            psi_rev,
            psi_inv_rev,
            n_inv,
            n_inv_shoup: m.shoup(n_inv),
        });
        Ok(m)
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn bits(&self) -> u32 {
        64 - self.value.leading_zeros()
    }

    /// Ring degree served by the NTT tables, if any.
    pub fn ntt_degree(&self) -> Option<usize> {
        self.ntt.as_ref().map(|t| t.n)
    }

    /// Minimal element of exact multiplicative order `order` (a power of two).
    fn primitive_root(&self, order: u64) -> u64 {
        let q = self.value;
        let e = (q - 1) / order;
        (2..q)
            .map(|x| self.pow(x, e))
            .find(|&r| self.pow(r, order / 2) == q - 1)
            .expect("q = 1 mod order guarantees a root")
    }

    #[inline]
    pub fn reduce(&self, a: u64) -> u64 {
        self.reduce_u128(a as u128)
    }

    /// Barrett reduction of a 128-bit value.
    #[inline]
    pub fn reduce_u128(&self, z: u128) -> u64 {
        let (z0, z1) = (z as u64, (z >> 64) as u64);
        let carry = ((z0 as u128 * self.ratio_lo as u128) >> 64) as u64;
        let t = z0 as u128 * self.ratio_hi as u128;
        let (t1, c) = (t as u64).overflowing_add(carry);
        let t3 = ((t >> 64) as u64).wrapping_add(c as u64);
        let t = z1 as u128 * self.ratio_lo as u128;
        let (_, c) = t1.overflowing_add(t as u64);
        let carry = ((t >> 64) as u64).wrapping_add(c as u64);
        let est = z1
            .wrapping_mul(self.ratio_hi)
            .wrapping_add(t3)
            .wrapping_add(carry);
        let r = z0.wrapping_sub(est.wrapping_mul(self.value));
        if r >= self.value {
            r - self.value
        } else {
            r
        }
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.value {
            s - self.value
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.value - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_u128(a as u128 * b as u128)
    }

    /// `floor(w * 2^64 / q)` for Shoup multiplication by the fixed operand `w`.
    #[inline]
    pub fn shoup(&self, w: u64) -> u64 {
        (((w as u128) << 64) / self.value as u128) as u64
    }

    #[inline]
    pub fn mul_shoup(&self, x: u64, w: u64, w_shoup: u64) -> u64 {
        let q_est = ((x as u128 * w_shoup as u128) >> 64) as u64;
        let r = x.wrapping_mul(w).wrapping_sub(q_est.wrapping_mul(self.value));
        if r >= self.value {
            r - self.value
        } else {
            r
        }
    }

    pub fn pow(&self, mut b: u64, mut e: u64) -> u64 {
        let mut r = 1 % self.value;
        b = self.reduce(b);
        while e > 0 {
            if e & 1 == 1 {
                r = self.mul(r, b);
            }
            b = self.mul(b, b);
            e >>= 1;
        }
        r
    }

    pub fn inv(&self, a: u64) -> Result<u64, RingError> {
        let a = self.reduce(a);
        if a == 0 {
            return Err(RingError::NotInvertible(a, self.value));
        }
        Ok(self.pow(a, self.value - 2))
    }

    /// Reduce a signed integer.
    #[inline]
    pub fn from_i64(&self, a: i64) -> u64 {
        if a >= 0 {
            self.reduce(a as u64)
        } else {
            self.neg(self.reduce(a.unsigned_abs()))
        }
    }

    /// Representative in `(-q/2, q/2]`.
    #[inline]
    pub fn centered(&self, a: u64) -> i64 {
        if a > self.value / 2 {
            a as i64 - self.value as i64
        } else {
            a as i64
        }
    }

    fn tables(&self, n: usize) -> Result<&NttTables, RingError> {
        match &self.ntt {
            Some(t) if t.n == n => Ok(t),
            _ => Err(RingError::NotNttFriendly { q: self.value, n }),
        }
    }

    /// In-place forward negacyclic NTT; output is in bit-reversed order so that
    /// index `i` holds the evaluation at `psi^(2*rev(i)+1)`.
    pub fn ntt_forward(&self, a: &mut [u64]) -> Result<(), RingError> {
        let tb = self.tables(a.len())?;
        let n = a.len();
        let mut t = n;
        let mut m = 1;
        while m < n {
            t >>= 1;
            for i in 0..m {
                let j1 = 2 * i * t;
                let (w, ws) = (tb.psi_rev[m + i], tb.psi_rev_shoup[m + i]);
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = self.mul_shoup(a[j + t], w, ws);
                    a[j] = self.add(u, v);
                    a[j + t] = self.sub(u, v);
                }
            }
            m <<= 1;
        }
        Ok(())
    }

    /// Inverse of [`Modulus::ntt_forward`].
    pub fn ntt_inverse(&self, a: &mut [u64]) -> Result<(), RingError> {
        let tb = self.tables(a.len())?;
        let n = a.len();
        let mut t = 1;
        let mut m = n;
        while m > 1 {
            let h = m >> 1;
            let mut j1 = 0;
            for i in 0..h {
                let (w, ws) = (tb.psi_inv_rev[h + i], tb.psi_inv_rev_shoup[h + i]);
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = a[j + t];
                    a[j] = self.add(u, v);
                    a[j + t] = self.mul_shoup(self.sub(u, v), w, ws);
                }
                j1 += 2 * t;
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = self.mul_shoup(*x, tb.n_inv, tb.n_inv_shoup);
        }
        Ok(())
    }
}

/// Representation of a [`Poly`]'s coefficient vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Coefficient,
    Ntt,
}

/// Element of `Z_q[X]/(X^N + 1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Poly {
    pub coeffs: Vec<u64>,
    pub domain: Domain,
    pub modulus: Arc<Modulus>,
}

impl Poly {
    pub fn zero(n: usize, modulus: Arc<Modulus>) -> Poly {
        Poly {
            coeffs: vec![0; n],
            domain: Domain::Coefficient,
            modulus,
        }
    }

    /// Coefficient-domain polynomial from residues (reduced on entry).
    pub fn from_coeffs(coeffs: Vec<u64>, modulus: Arc<Modulus>) -> Poly {
        let coeffs = coeffs.into_iter().map(|c| modulus.reduce(c)).collect();
        Poly {
            coeffs,
            domain: Domain::Coefficient,
            modulus,
        }
    }

    pub fn from_signed(coeffs: &[i64], modulus: Arc<Modulus>) -> Poly {
        let coeffs = coeffs.iter().map(|&c| modulus.from_i64(c)).collect();
        Poly {
            coeffs,
            domain: Domain::Coefficient,
            modulus,
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len()
    }

    fn check(&self, other: &Poly) -> Result<(), RingError> {
        if self.modulus.value != other.modulus.value {
            return Err(RingError::ModulusMismatch(
                self.modulus.value,
                other.modulus.value,
            ));
        }
        if self.coeffs.len() != other.coeffs.len() {
            return Err(RingError::DegreeMismatch(
                self.coeffs.len(),
                other.coeffs.len(),
            ));
        }
        if self.domain != other.domain {
            return Err(RingError::WrongDomain);
        }
        Ok(())
    }

    pub fn to_ntt(&mut self) -> Result<(), RingError> {
        if self.domain == Domain::Coefficient {
            self.modulus.clone().ntt_forward(&mut self.coeffs)?;
            self.domain = Domain::Ntt;
        }
        Ok(())
    }

    pub fn to_coeff(&mut self) -> Result<(), RingError> {
        if self.domain == Domain::Ntt {
            self.modulus.clone().ntt_inverse(&mut self.coeffs)?;
            self.domain = Domain::Coefficient;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Poly) -> Result<(), RingError> {
        self.check(other)?;
        let q = &self.modulus;
        for (a, &b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a = q.add(*a, b);
        }
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &Poly) -> Result<(), RingError> {
        self.check(other)?;
        let q = &self.modulus;
        for (a, &b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a = q.sub(*a, b);
        }
        Ok(())
    }

    pub fn neg_assign(&mut self) {
        let q = self.modulus.clone();
        for a in self.coeffs.iter_mut() {
            *a = q.neg(*a);
        }
    }

    /// Pointwise product; both operands must be in the NTT domain.
    pub fn mul_assign_ntt(&mut self, other: &Poly) -> Result<(), RingError> {
        self.check(other)?;
        if self.domain != Domain::Ntt {
            return Err(RingError::WrongDomain);
        }
        let q = &self.modulus;
        for (a, &b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a = q.mul(*a, b);
        }
        Ok(())
    }

    pub fn scale_assign(&mut self, c: u64) {
        let q = self.modulus.clone();
        let c = q.reduce(c);
        let cs = q.shoup(c);
        for a in self.coeffs.iter_mut() {
            *a = q.mul_shoup(*a, c, cs);
        }
    }

    /// `p(X) -> p(X^g)` for odd `g`; coefficient domain only.
    pub fn automorphism(&self, g: usize) -> Result<Poly, RingError> {
        if self.domain != Domain::Coefficient {
            return Err(RingError::WrongDomain);
        }
        let n = self.coeffs.len();
        let two_n = 2 * n;
        let q = &self.modulus;
        let mut out = vec![0u64; n];
        for (i, &c) in self.coeffs.iter().enumerate() {
            let e = (i * g) % two_n;
            if e < n {
                out[e] = c;
            } else {
                out[e - n] = q.neg(c);
            }
        }
        Ok(Poly {
            coeffs: out,
            domain: Domain::Coefficient,
            modulus: self.modulus.clone(),
        })
    }

    /// 1-byte domain flag, 4-byte little-endian N, then 8-byte LE residues.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + 8 * self.coeffs.len());
        self.write_to(&mut out);
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.push(match self.domain {
            Domain::Coefficient => 0,
            Domain::Ntt => 1,
        });
        out.extend_from_slice(&(self.coeffs.len() as u32).to_le_bytes());
        for c in &self.coeffs {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }

    /// Parse one polynomial from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn read_from(bytes: &[u8], modulus: Arc<Modulus>) -> Result<(Poly, usize), RingError> {
        if bytes.len() < 5 {
            return Err(RingError::Decode("truncated header"));
        }
        let domain = match bytes[0] {
            0 => Domain::Coefficient,
            1 => Domain::Ntt,
            _ => return Err(RingError::Decode("bad domain flag")),
        };
        let n = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
        if n < 2 || !n.is_power_of_two() {
            return Err(RingError::Decode("bad degree"));
        }
        let end = 5 + 8 * n;
        if bytes.len() < end {
            return Err(RingError::Decode("truncated residues"));
        }
        let mut coeffs = Vec::with_capacity(n);
        for chunk in bytes[5..end].chunks_exact(8) {
            let c = u64::from_le_bytes(chunk.try_into().unwrap());
            if c >= modulus.value {
                return Err(RingError::Decode("residue out of range"));
            }
            coeffs.push(c);
        }
        Ok((
            Poly {
                coeffs,
                domain,
                modulus,
            },
            end,
        ))
    }
}

pub fn poly_add(a: &Poly, b: &Poly) -> Result<Poly, RingError> {
    let mut r = a.clone();
    r.add_assign(b)?;
    Ok(r)
}

pub fn poly_sub(a: &Poly, b: &Poly) -> Result<Poly, RingError> {
    let mut r = a.clone();
    r.sub_assign(b)?;
    Ok(r)
}

/// Negacyclic product; the result is in the domain of `a`.
pub fn poly_mul(a: &Poly, b: &Poly) -> Result<Poly, RingError> {
    if a.modulus.value != b.modulus.value {
        return Err(RingError::ModulusMismatch(a.modulus.value, b.modulus.value));
    }
    let domain = a.domain;
    let mut x = a.clone();
    let mut y = b.clone();
    x.to_ntt()?;
    y.to_ntt()?;
    x.mul_assign_ntt(&y)?;
    if domain == Domain::Coefficient {
        x.to_coeff()?;
    }
    Ok(x)
}

/// Galois element for a left rotation of both rows by `step` slots
/// (negative steps rotate right).
pub fn rotation_galois_element(step: i64, n: usize) -> usize {
    let row = (n / 2) as i64;
    let r = step.rem_euclid(row) as u64;
    let two_n = 2 * n as u64;
    let mut g = 1u64;
    for _ in 0..r {
        g = g * 3 % two_n;
    }
    g as usize
}

/// Galois element that swaps the two rows.
pub fn row_swap_galois_element(n: usize) -> usize {
    2 * n - 1
}

/// Vector of `Z_t` values laid out as two rows of equal length.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlotVector(pub Vec<u64>);

impl SlotVector {
    pub fn zeros(len: usize) -> Self {
        SlotVector(vec![0; len])
    }

    pub fn constant(len: usize, v: u64) -> Self {
        SlotVector(vec![v; len])
    }

    /// One at `index`, zero elsewhere.
    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut v = vec![0; len];
        v[index] = 1;
        SlotVector(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn row_len(&self) -> usize {
        self.0.len() / 2
    }

    pub fn add(&self, o: &Self, t: &Modulus) -> Self {
        SlotVector(self.0.iter().zip(&o.0).map(|(&a, &b)| t.add(a, b)).collect())
    }

    pub fn sub(&self, o: &Self, t: &Modulus) -> Self {
        SlotVector(self.0.iter().zip(&o.0).map(|(&a, &b)| t.sub(a, b)).collect())
    }

    pub fn mul(&self, o: &Self, t: &Modulus) -> Self {
        SlotVector(self.0.iter().zip(&o.0).map(|(&a, &b)| t.mul(a, b)).collect())
    }

    pub fn scale(&self, c: u64, t: &Modulus) -> Self {
        SlotVector(self.0.iter().map(|&a| t.mul(a, c)).collect())
    }

    /// Left rotation of each row by `step` (negative rotates right).
    pub fn rotate(&self, step: i64) -> Self {
        let row = self.row_len();
        let r = step.rem_euclid(row as i64) as usize;
        let mut out = Vec::with_capacity(self.len());
        for base in [0, row] {
            out.extend((0..row).map(|i| self.0[base + (i + r) % row]));
        }
        SlotVector(out)
    }

    pub fn row_swap(&self) -> Self {
        let row = self.row_len();
        let mut out = self.0[row..].to_vec();
        out.extend_from_slice(&self.0[..row]);
        SlotVector(out)
    }

    /// `out[i] = sum_{k < block} v[i + k]`, indices cyclic within each row.
    pub fn inner_sum(&self, block: usize, t: &Modulus) -> Self {
        let row = self.row_len();
        let mut out = Vec::with_capacity(self.len());
        for base in [0, row] {
            for i in 0..row {
                let mut s = 0;
                for k in 0..block {
                    s = t.add(s, self.0[base + (i + k) % row]);
                }
                out.push(s);
            }
        }
        SlotVector(out)
    }
}

/// Maps slot vectors of length N to plaintext polynomials mod `t` and back.
/// Slot `i` of row 0 sits at the root `psi^(3^i)`, slot `i` of row 1 at
/// `psi^(-3^i)`, so `X -> X^(3^r)` rotates rows left by `r`.
#[derive(Debug, Clone)]
pub struct BatchEncoder {
    t: Arc<Modulus>,
    n: usize,
    index_map: Vec<usize>,
}

impl BatchEncoder {
    pub fn new(t: Arc<Modulus>) -> Result<Self, RingError> {
        let n = t.ntt_degree().ok_or(RingError::NotNttFriendly {
            q: t.value(),
            n: 0,
        })?;
        let bits = n.trailing_zeros();
        let two_n = 2 * n;
        let row = n / 2;
        let mut index_map = vec![0; n];
        let mut pos = 1usize;
        for i in 0..row {
            index_map[i] = bit_reverse((pos - 1) / 2, bits);
            index_map[row + i] = bit_reverse((two_n - pos - 1) / 2, bits);
            pos = pos * 3 % two_n;
        }
        Ok(BatchEncoder { t, n, index_map })
    }

    pub fn degree(&self) -> usize {
        self.n
    }

    pub fn modulus(&self) -> &Arc<Modulus> {
        &self.t
    }

    pub fn encode(&self, v: &SlotVector) -> Result<Poly, RingError> {
        if v.len() != self.n {
            return Err(RingError::SlotLength {
                got: v.len(),
                n: self.n,
            });
        }
        let mut vals = vec![0u64; self.n];
        for (slot, &idx) in self.index_map.iter().enumerate() {
            vals[idx] = self.t.reduce(v.0[slot]);
        }
        self.t.ntt_inverse(&mut vals)?;
        Ok(Poly {
            coeffs: vals,
            domain: Domain::Coefficient,
            modulus: self.t.clone(),
        })
    }

    pub fn decode(&self, p: &Poly) -> Result<SlotVector, RingError> {
        if p.modulus.value() != self.t.value() {
            return Err(RingError::ModulusMismatch(p.modulus.value(), self.t.value()));
        }
        let mut q = p.clone();
        q.to_ntt()?;
        Ok(SlotVector(
            self.index_map.iter().map(|&idx| q.coeffs[idx]).collect(),
        ))
    }
}

/// `sum_j v[j] * delta^j mod t`, slots taken in row-major order.
pub fn slot_poly_eval(v: &SlotVector, delta: u64, t: &Modulus) -> u64 {
    let d = t.reduce(delta);
    v.0.iter().rev().fold(0, |acc, &c| t.add(t.mul(acc, d), t.reduce(c)))
}

/// Smallest prime in `[2^(bits-1), 2^bits)` that is 1 mod 2N.
pub fn find_plaintext_prime(bits: u32, n: usize) -> Result<u64, RingError> {
    let two_n = 2 * n as u64;
    let lo = 1u64 << (bits - 1);
    let hi = 1u64 << bits;
    let mut p = lo.div_ceil(two_n) * two_n + 1;
    while p < hi {
        if is_prime(p) {
            return Ok(p);
        }
        p += two_n;
    }
    Err(RingError::NoPrime { bits, two_n })
}

/// The `count` largest primes below `2^bits` that are 1 mod 2N, descending,
/// skipping any listed in `exclude`.
pub fn find_ntt_primes(
    bits: u32,
    n: usize,
    count: usize,
    exclude: &[u64],
) -> Result<Vec<u64>, RingError> {
    let two_n = 2 * n as u64;
    let lo = 1u64 << (bits - 1);
    let mut p = ((1u64 << bits) - 1) / two_n * two_n + 1;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if p < lo {
            return Err(RingError::NoPrime { bits, two_n });
        }
        if is_prime(p) && !exclude.contains(&p) {
            out.push(p);
        }
        p -= two_n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_negacyclic(a: &[u64], b: &[u64], q: u64) -> Vec<u64> {
        let n = a.len();
        let mut out = vec![0i128; n];
        for i in 0..n {
            for j in 0..n {
                let p = a[i] as i128 * b[j] as i128;
                if i + j < n {
                    out[i + j] += p;
                } else {
                    out[i + j - n] -= p;
                }
            }
        }
        out.iter().map(|&x| x.rem_euclid(q as i128) as u64).collect()
    }

    #[test]
    fn tiny_ring_add_and_square() {
        let q = Arc::new(Modulus::with_ntt(17, 2).unwrap());
        let a = Poly::from_coeffs(vec![3, 4], q.clone());
        let b = Poly::from_coeffs(vec![15, 14], q.clone());
        assert_eq!(poly_add(&a, &b).unwrap().coeffs, vec![1, 1]);
        let x = Poly::from_coeffs(vec![1, 1], q);
        assert_eq!(poly_mul(&x, &x).unwrap().coeffs, vec![0, 2]);
    }

    #[test]
    fn plaintext_prime_for_4096() {
        assert_eq!(find_plaintext_prime(16, 4096).unwrap(), 40961);
    }

    #[test]
    fn slot_poly_eval_small() {
        let t = Modulus::new(17).unwrap();
        assert_eq!(slot_poly_eval(&SlotVector(vec![5, 2]), 3, &t), 11);
    }

    #[test]
    fn primality_against_trial_division() {
        let trial = |n: u64| n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0);
        for n in 0..5000u64 {
            assert_eq!(is_prime(n), trial(n), "n = {n}");
        }
        // strong pseudoprimes to several small bases
        for n in [3215031751u64, 2152302898747, 3474749660383, 341550071728321] {
            assert!(!is_prime(n));
        }
        assert!(is_prime((1u64 << 61) - 1));
    }

    #[test]
    fn rejects_bad_moduli() {
        assert!(matches!(Modulus::new(1 << 61), Err(RingError::ModulusTooLarge(_))));
        assert!(matches!(Modulus::new(15), Err(RingError::NotPrime(15))));
        assert!(matches!(
            Modulus::with_ntt(19, 4),
            Err(RingError::NotNttFriendly { .. })
        ));
    }

    #[test]
    fn ntt_matches_direct_evaluation() {
        let n = 16;
        let q = Modulus::with_ntt(97, n).unwrap();
        let a: Vec<u64> = (0..n as u64).map(|i| (i * 7 + 3) % 97).collect();
        let mut f = a.clone();
        q.ntt_forward(&mut f).unwrap();
        let psi = q.primitive_root(2 * n as u64);
        let bits = n.trailing_zeros();
        for (i, &v) in f.iter().enumerate() {
            let x = q.pow(psi, 2 * bit_reverse(i, bits) as u64 + 1);
            let direct = a.iter().rev().fold(0, |acc, &c| q.add(q.mul(acc, x), c));
            assert_eq!(v, direct);
        }
        q.ntt_inverse(&mut f).unwrap();
        assert_eq!(f, a);
    }

    #[test]
    fn mul_matches_schoolbook() {
        let n = 64;
        let q = Arc::new(Modulus::with_ntt(find_ntt_primes(50, n, 1, &[]).unwrap()[0], n).unwrap());
        let a: Vec<u64> = (0..n as u64).map(|i| i * 0x1234_5678_9abc % q.value()).collect();
        let b: Vec<u64> = (0..n as u64).map(|i| (i + 11) * 0x0fed_cba9 % q.value()).collect();
        let p = poly_mul(
            &Poly::from_coeffs(a.clone(), q.clone()),
            &Poly::from_coeffs(b.clone(), q.clone()),
        )
        .unwrap();
        assert_eq!(p.coeffs, naive_negacyclic(&a, &b, q.value()));
    }

    #[test]
    fn batching_rotation_semantics() {
        let n = 16;
        let t = Arc::new(Modulus::with_ntt(find_plaintext_prime(12, n).unwrap(), n).unwrap());
        let enc = BatchEncoder::new(t.clone()).unwrap();
        let v = SlotVector((1..=n as u64).collect());
        let p = enc.encode(&v).unwrap();
        assert_eq!(enc.decode(&p).unwrap(), v);
        for step in [-3i64, -1, 1, 2, 5] {
            let g = rotation_galois_element(step, n);
            let r = enc.decode(&p.automorphism(g).unwrap()).unwrap();
            assert_eq!(r, v.rotate(step), "step {step}");
        }
        let s = enc.decode(&p.automorphism(row_swap_galois_element(n)).unwrap()).unwrap();
        assert_eq!(s, v.row_swap());
    }

    #[test]
    fn inner_sum_block_four() {
        let t = Modulus::new(17).unwrap();
        let mut v = vec![0u64; 16];
        v[..4].copy_from_slice(&[1, 2, 3, 4]);
        let r = SlotVector(v).inner_sum(4, &t);
        assert_eq!(r.0[0], 10);
    }

    #[test]
    fn poly_bytes_roundtrip_and_layout() {
        let q = Arc::new(Modulus::with_ntt(17, 2).unwrap());
        let p = Poly::from_coeffs(vec![3, 4], q.clone());
        let b = p.to_bytes();
        assert_eq!(b, vec![0, 2, 0, 0, 0, 3, 0, 0, 0, 0, 0, 0, 0, 4, 0, 0, 0, 0, 0, 0, 0]);
        let (back, used) = Poly::read_from(&b, q.clone()).unwrap();
        assert_eq!((back, used), (p, b.len()));
        assert!(Poly::read_from(&b[..10], q).is_err());
    }
}
