//! `VRTS` container: magic, `u16` version, object kind, parameter header,
//! then the payload. All integers are little-endian.

use crate::backend::{Ciphertext, HeError, HeParams};
use crate::bfv::{BfvCiphertext, GaloisKeys, KeySwitchKey, PublicKey, SecretKey};
use crate::mock::{MockCiphertext, MockParams};
use crate::params::{ParamSpec, Params};
use crate::ring::{Poly, SlotVector};
use crate::rns::RnsPoly;

pub const MAGIC: &[u8; 4] = b"VRTS";
pub const VERSION: u16 = 1;

pub const KIND_CIPHERTEXT: u8 = 1;
pub const KIND_CIPHERTEXT_LIST: u8 = 2;
pub const KIND_SECRET_KEY: u8 = 3;
pub const KIND_PUBLIC_KEY: u8 = 4;
pub const KIND_EVAL_KEYS: u8 = 5;

fn bad(msg: &str) -> HeError {
    HeError::Decode(msg.to_string())
}

/// Cursor over a byte slice.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], HeError> {
        if self.buf.len() - self.pos < n {
            return Err(bad("truncated input"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, HeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, HeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, HeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, HeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<(), HeError> {
        if self.remaining() != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(())
    }

    fn poly(&mut self, m: &std::sync::Arc<crate::ring::Modulus>) -> Result<Poly, HeError> {
        let (p, used) = Poly::read_from(&self.buf[self.pos..], m.clone())?;
        self.pos += used;
        Ok(p)
    }
}

/// Parameter header as it appears on the wire.
#[derive(Debug, Clone, PartialEq)]
pub enum Header {
    Bfv(ParamSpec),
    Mock { n: usize, t: u64, depth_limit: u32 },
}

impl Header {
    pub fn of(params: &HeParams) -> Header {
        match params {
            HeParams::Bfv(p) => Header::Bfv(p.spec.clone()),
            HeParams::Mock(m) => Header::Mock {
                n: m.n,
                t: m.t.value(),
                depth_limit: m.depth_limit,
            },
        }
    }

    pub fn to_params(&self) -> Result<HeParams, HeError> {
        Ok(match self {
            Header::Bfv(spec) => HeParams::Bfv(Params::new(spec.clone())?),
            Header::Mock { n, t, depth_limit } => {
                HeParams::Mock(MockParams::new(*n, *t, *depth_limit)?)
            }
        })
    }

    fn write(&self, out: &mut Vec<u8>) {
        match self {
            Header::Bfv(s) => {
                out.push(0);
                out.extend_from_slice(&(s.n as u32).to_le_bytes());
                out.extend_from_slice(&s.t.to_le_bytes());
                out.push(s.q.len() as u8);
                for q in &s.q {
                    out.extend_from_slice(&q.to_le_bytes());
                }
                out.push(s.eta as u8);
                out.push(s.decomp_bits as u8);
            }
            Header::Mock { n, t, depth_limit } => {
                out.push(1);
                out.extend_from_slice(&(*n as u32).to_le_bytes());
                out.extend_from_slice(&t.to_le_bytes());
                out.extend_from_slice(&depth_limit.to_le_bytes());
            }
        }
    }

    fn read(r: &mut Reader) -> Result<Header, HeError> {
        let tag = r.u8()?;
        let n = r.u32()? as usize;
        let t = r.u64()?;
        match tag {
            0 => {
                let k = r.u8()? as usize;
                let q = (0..k).map(|_| r.u64()).collect::<Result<_, _>>()?;
                let eta = r.u8()? as u32;
                let decomp_bits = r.u8()? as u32;
                Ok(Header::Bfv(ParamSpec {
                    n,
                    t,
                    q,
                    eta,
                    decomp_bits,
                }))
            }
            1 => Ok(Header::Mock {
                n,
                t,
                depth_limit: r.u32()?,
            }),
            _ => Err(bad("unknown backend tag")),
        }
    }
}

/// Wraps a payload in a container.
pub fn seal(kind: u8, params: &HeParams, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind);
    Header::of(params).write(&mut out);
    out.extend_from_slice(payload);
    out
}

/// Splits a container into kind, header and payload.
pub fn open(bytes: &[u8]) -> Result<(u8, Header, &[u8]), HeError> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    if r.u16()? != VERSION {
        return Err(bad("unsupported version"));
    }
    let kind = r.u8()?;
    let header = Header::read(&mut r)?;
    Ok((kind, header, r.rest()))
}

/// Opens a container of the expected kind whose header matches `params`.
pub fn open_for<'a>(bytes: &'a [u8], kind: u8, params: &HeParams) -> Result<&'a [u8], HeError> {
    let (k, header, payload) = open(bytes)?;
    if k != kind {
        return Err(bad("unexpected object kind"));
    }
    if header != Header::of(params) {
        return Err(HeError::BackendMismatch);
    }
    Ok(payload)
}

fn write_rns(p: &RnsPoly, out: &mut Vec<u8>) {
    for l in &p.limbs {
        l.write_to(out);
    }
}

fn read_rns(r: &mut Reader, params: &Params) -> Result<RnsPoly, HeError> {
    let limbs = params
        .q
        .moduli()
        .iter()
        .map(|m| r.poly(m))
        .collect::<Result<Vec<_>, _>>()?;
    if limbs.iter().any(|l| l.coeffs.len() != params.n) {
        return Err(bad("degree mismatch"));
    }
    Ok(RnsPoly { limbs })
}

pub fn write_ciphertext(c: &Ciphertext, out: &mut Vec<u8>) {
    match c {
        Ciphertext::Bfv(b) => {
            out.push(0);
            out.push(b.polys.len() as u8);
            for p in &b.polys {
                write_rns(p, out);
            }
        }
        Ciphertext::Mock(m) => {
            out.push(1);
            out.push(m.size);
            out.extend_from_slice(&m.depth.to_le_bytes());
            out.extend_from_slice(&m.nonce.to_le_bytes());
            write_slots(&m.slots, out);
        }
    }
}

pub fn read_ciphertext(r: &mut Reader, params: &HeParams) -> Result<Ciphertext, HeError> {
    let tag = r.u8()?;
    let size = r.u8()?;
    if !(2..=3).contains(&size) {
        return Err(bad("ciphertext size"));
    }
    match (tag, params) {
        (0, HeParams::Bfv(p)) => {
            let polys = (0..size)
                .map(|_| read_rns(r, p))
                .collect::<Result<_, _>>()?;
            Ok(Ciphertext::Bfv(BfvCiphertext { polys }))
        }
        (1, HeParams::Mock(m)) => {
            let depth = r.u32()?;
            let nonce = r.u64()?;
            let slots = read_slots(r)?;
            if slots.len() != m.n || slots.0.iter().any(|&x| x >= m.t.value()) {
                return Err(bad("mock slots out of range"));
            }
            Ok(Ciphertext::Mock(MockCiphertext {
                slots,
                depth,
                size,
                nonce,
            }))
        }
        _ => Err(HeError::BackendMismatch),
    }
}

pub fn write_slots(v: &SlotVector, out: &mut Vec<u8>) {
    out.extend_from_slice(&(v.len() as u32).to_le_bytes());
    for x in &v.0 {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn read_slots(r: &mut Reader) -> Result<SlotVector, HeError> {
    let n = r.u32()? as usize;
    if n > r.remaining() / 8 {
        return Err(bad("slot count exceeds input"));
    }
    Ok(SlotVector((0..n).map(|_| r.u64()).collect::<Result<_, _>>()?))
}

pub fn write_ciphertexts(cs: &[Ciphertext], out: &mut Vec<u8>) {
    out.extend_from_slice(&(cs.len() as u32).to_le_bytes());
    for c in cs {
        write_ciphertext(c, out);
    }
}

pub fn read_ciphertexts(r: &mut Reader, params: &HeParams) -> Result<Vec<Ciphertext>, HeError> {
    let n = r.u32()? as usize;
    if n > r.remaining() {
        return Err(bad("ciphertext count exceeds input"));
    }
    (0..n).map(|_| read_ciphertext(r, params)).collect()
}

pub fn ciphertext_to_bytes(c: &Ciphertext, params: &HeParams) -> Vec<u8> {
    let mut p = Vec::new();
    write_ciphertext(c, &mut p);
    seal(KIND_CIPHERTEXT, params, &p)
}

pub fn ciphertext_from_bytes(bytes: &[u8], params: &HeParams) -> Result<Ciphertext, HeError> {
    let mut r = Reader::new(open_for(bytes, KIND_CIPHERTEXT, params)?);
    let c = read_ciphertext(&mut r, params)?;
    r.finish()?;
    Ok(c)
}

pub fn ciphertexts_to_bytes(cs: &[Ciphertext], params: &HeParams) -> Vec<u8> {
    let mut p = Vec::new();
    write_ciphertexts(cs, &mut p);
    seal(KIND_CIPHERTEXT_LIST, params, &p)
}

pub fn ciphertexts_from_bytes(bytes: &[u8], params: &HeParams) -> Result<Vec<Ciphertext>, HeError> {
    let mut r = Reader::new(open_for(bytes, KIND_CIPHERTEXT_LIST, params)?);
    let c = read_ciphertexts(&mut r, params)?;
    r.finish()?;
    Ok(c)
}

pub fn secret_key_to_bytes(sk: &SecretKey) -> Vec<u8> {
    let payload: Vec<u8> = sk.coeffs.iter().map(|&c| c as i8 as u8).collect();
    seal(KIND_SECRET_KEY, &HeParams::Bfv(sk.params.clone()), &payload)
}

pub fn secret_key_from_bytes(bytes: &[u8]) -> Result<SecretKey, HeError> {
    let (kind, header, payload) = open(bytes)?;
    let (KIND_SECRET_KEY, HeParams::Bfv(params)) = (kind, header.to_params()?) else {
        return Err(bad("not a BFV secret key"));
    };
    if payload.len() != params.n {
        return Err(bad("secret key length"));
    }
    let coeffs: Vec<i64> = payload.iter().map(|&b| b as i8 as i64).collect();
    if coeffs.iter().any(|c| c.abs() > 1) {
        return Err(bad("secret key is not ternary"));
    }
    let mut ntt = RnsPoly::from_signed(&coeffs, params.q.moduli());
    ntt.to_ntt();
    Ok(SecretKey {
        params,
        coeffs,
        ntt,
    })
}

fn write_ksk(k: &KeySwitchKey, out: &mut Vec<u8>) {
    out.extend_from_slice(&(k.parts.len() as u32).to_le_bytes());
    for (b, a) in &k.parts {
        write_rns(b, out);
        write_rns(a, out);
    }
}

fn read_ksk(r: &mut Reader, params: &Params) -> Result<KeySwitchKey, HeError> {
    let n = r.u32()? as usize;
    if n != params.q.len() * params.digits {
        return Err(bad("key-switching key shape"));
    }
    let parts = (0..n)
        .map(|_| Ok((read_rns(r, params)?, read_rns(r, params)?)))
        .collect::<Result<_, HeError>>()?;
    Ok(KeySwitchKey { parts })
}

/// Public key, relinearization key and Galois keys in one container.
pub fn eval_keys_to_bytes(
    pk: &PublicKey,
    rlk: Option<&KeySwitchKey>,
    gk: &GaloisKeys,
) -> Vec<u8> {
    let mut p = Vec::new();
    write_rns(&pk.b, &mut p);
    write_rns(&pk.a, &mut p);
    match rlk {
        Some(k) => {
            p.push(1);
            write_ksk(k, &mut p);
        }
        None => p.push(0),
    }
    p.extend_from_slice(&(gk.keys.len() as u32).to_le_bytes());
    for (g, k) in &gk.keys {
        p.extend_from_slice(&(*g as u32).to_le_bytes());
        write_ksk(k, &mut p);
    }
    seal(KIND_EVAL_KEYS, &HeParams::Bfv(pk.params.clone()), &p)
}

pub fn eval_keys_from_bytes(
    bytes: &[u8],
) -> Result<(PublicKey, Option<KeySwitchKey>, GaloisKeys), HeError> {
    let (kind, header, payload) = open(bytes)?;
    let (KIND_EVAL_KEYS, HeParams::Bfv(params)) = (kind, header.to_params()?) else {
        return Err(bad("not a BFV evaluation key set"));
    };
    let mut r = Reader::new(payload);
    let b = read_rns(&mut r, &params)?;
    let a = read_rns(&mut r, &params)?;
    let rlk = match r.u8()? {
        0 => None,
        1 => Some(read_ksk(&mut r, &params)?),
        _ => return Err(bad("relinearization flag")),
    };
    let count = r.u32()? as usize;
    let mut gk = GaloisKeys::default();
    for _ in 0..count {
        let g = r.u32()? as usize;
        gk.keys.insert(g, read_ksk(&mut r, &params)?);
    }
    r.finish()?;
    Ok((PublicKey { params, b, a }, rlk, gk))
}
