//! Desk-scale versions of the four use cases, each with a plaintext oracle
//! computed directly from the data rather than by running the circuit.

use std::fmt;
use std::str::FromStr;

use anyhow::{bail, ensure, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use vhe_bfv::{Modulus, SlotVector};
use vhe_core::circuit::{Circuit, Gate, LabeledProgram, OutputBlock};

/// Characters per lookup entry.
pub const LOOKUP_CHARS: usize = 16;
/// Bits per lookup entry.
pub const LOOKUP_BITS: usize = LOOKUP_CHARS * 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum UseCaseKind {
    RideHailing,
    DotProduct,
    Lookup,
    Aggregation,
}

impl UseCaseKind {
    pub const ALL: [UseCaseKind; 4] = [
        UseCaseKind::RideHailing,
        UseCaseKind::DotProduct,
        UseCaseKind::Lookup,
        UseCaseKind::Aggregation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UseCaseKind::RideHailing => "ride-hailing",
            UseCaseKind::DotProduct => "dot-product",
            UseCaseKind::Lookup => "lookup",
            UseCaseKind::Aggregation => "aggregation",
        }
    }

    /// Drivers, vector length, database entries, or clients.
    pub fn default_scale(self) -> usize {
        match self {
            UseCaseKind::RideHailing => 8,
            UseCaseKind::DotProduct => 1024,
            UseCaseKind::Lookup => 32,
            UseCaseKind::Aggregation => 4,
        }
    }

    pub fn default_preset(self) -> &'static str {
        match self {
            UseCaseKind::Lookup => "n16384",
            _ => "n4096",
        }
    }

    /// Smallest slot count the circuit fits in.
    pub fn min_width(self, scale: usize) -> usize {
        match self {
            UseCaseKind::RideHailing => (2 * scale).next_power_of_two(),
            UseCaseKind::DotProduct => 2 * scale.next_power_of_two(),
            UseCaseKind::Lookup => 2 * scale.next_power_of_two() * LOOKUP_BITS,
            UseCaseKind::Aggregation => 2,
        }
    }

    /// Whether the circuit rotates, which pins a REP run to one ciphertext.
    pub fn rotates(self) -> bool {
        matches!(self, UseCaseKind::DotProduct | UseCaseKind::Lookup)
    }

    /// Logical width of a REP run on `n` slots, or `None` if it cannot fit.
    pub fn rep_width(self, scale: usize, n: usize, lambda: usize) -> Option<usize> {
        match self {
            UseCaseKind::Aggregation => Some(4096),
            UseCaseKind::RideHailing => Some(self.min_width(scale)),
            _ => {
                let w = n / lambda;
                (w >= self.min_width(scale)).then_some(w)
            }
        }
    }
}

impl fmt::Display for UseCaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UseCaseKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        UseCaseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| anyhow::anyhow!("unknown use case {s}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UseCaseSpec {
    pub kind: UseCaseKind,
    pub scale: usize,
    pub preset: String,
}

impl UseCaseSpec {
    pub fn new(kind: UseCaseKind) -> Self {
        UseCaseSpec {
            kind,
            scale: kind.default_scale(),
            preset: kind.default_preset().to_string(),
        }
    }
}

/// A program with concrete inputs and the expected output block.
#[derive(Debug, Clone)]
pub struct Instance {
    /// `None` for synthetic test programs.
    pub kind: Option<UseCaseKind>,
    pub scale: usize,
    pub prog: LabeledProgram,
    pub inputs: Vec<SlotVector>,
    /// Party supplying each input; party 0 receives the result.
    pub owners: Vec<usize>,
    pub expected: SlotVector,
    /// Lookup only: the database strings.
    pub entries: Vec<String>,
}

impl Instance {
    /// Human-readable reading of an output block.
    pub fn describe(&self, block: &SlotVector) -> String {
        let Some(kind) = self.kind else {
            let head: Vec<String> = block.0.iter().take(4).map(|v| v.to_string()).collect();
            return format!("result [{}, ..]", head.join(", "));
        };
        match kind {
            UseCaseKind::RideHailing => {
                let (k, d) = nearest_driver(block);
                format!("nearest driver {k} at squared distance {d}")
            }
            UseCaseKind::DotProduct => format!("dot product {}", block.0[0]),
            UseCaseKind::Lookup => match bits_to_string(&block.0) {
                Some(s) if !s.is_empty() => format!("found {s:?}"),
                Some(_) => "no match".into(),
                None => "undecodable result".into(),
            },
            UseCaseKind::Aggregation => {
                let head: Vec<String> = block.0.iter().take(4).map(|v| v.to_string()).collect();
                format!("aggregate [{}, ..]", head.join(", "))
            }
        }
    }

    /// Inputs owned by `party`.
    pub fn owned_by(&self, party: usize) -> impl Iterator<Item = usize> + '_ {
        self.owners
            .iter()
            .enumerate()
            .filter(move |(_, &o)| o == party)
            .map(|(i, _)| i)
    }
}

/// Index and squared distance of the closest driver in a ride-hailing block.
pub fn nearest_driver(block: &SlotVector) -> (usize, u64) {
    block
        .0
        .chunks(2)
        .map(|p| p.iter().sum::<u64>())
        .enumerate()
        .min_by_key(|&(k, d)| (d, k))
        .unwrap_or((0, 0))
}

fn labels(prefix: &str, names: &[String]) -> Vec<String> {
    names.iter().map(|n| format!("{prefix}/{n}")).collect()
}

/// Builds `kind` at `scale` on `width` slots with plaintext modulus `t`.
pub fn build(
    kind: UseCaseKind,
    scale: usize,
    width: usize,
    t: &Modulus,
    prefix: &str,
    rng: &mut impl Rng,
) -> Result<Instance> {
    ensure!(scale > 0, "scale must be positive");
    ensure!(
        width >= kind.min_width(scale) && width.is_power_of_two(),
        "{kind} at scale {scale} needs a power-of-two width of at least {}, got {width}",
        kind.min_width(scale)
    );
    match kind {
        UseCaseKind::RideHailing => ride_hailing(scale, width, t, prefix, rng),
        UseCaseKind::DotProduct => dot_product(scale, width, t, prefix, rng),
        UseCaseKind::Lookup => lookup(scale, width, prefix, rng),
        UseCaseKind::Aggregation => aggregation(scale, width, t, prefix, rng),
    }
}

fn ride_hailing(drivers: usize, width: usize, t: &Modulus, prefix: &str, rng: &mut impl Rng) -> Result<Instance> {
    ensure!(t.value() > 2 * 100 * 100, "plaintext modulus too small for coordinates");
    let coord = |rng: &mut _| -> [u64; 2] { [Rng::gen_range(rng, 0..100), Rng::gen_range(rng, 0..100)] };
    let rider = coord(rng);
    let mut inputs = Vec::new();
    let mut expected = SlotVector::zeros(2 * drivers);
    for k in 0..drivers {
        let p = coord(rng);
        let mut v = SlotVector::zeros(width);
        v.0[2 * k] = p[0];
        v.0[2 * k + 1] = p[1];
        inputs.push(v);
        for c in 0..2 {
            let d = rider[c].abs_diff(p[c]);
            expected.0[2 * k + c] = d * d;
        }
    }
    inputs.push(SlotVector((0..width).map(|i| rider[i % 2]).collect()));

    let mut gates: Vec<Gate> = (0..=drivers).map(|index| Gate::Input { index }).collect();
    let mut sum = 0;
    for k in 1..drivers {
        gates.push(Gate::Add { a: sum, b: k });
        sum = gates.len() - 1;
    }
    gates.push(Gate::Sub { a: drivers, b: sum });
    let diff = gates.len() - 1;
    gates.push(Gate::Mul { a: diff, b: diff, relin: true });

    let mut names: Vec<String> = (0..drivers).map(|k| format!("driver{k}")).collect();
    names.push("rider".into());
    let mut owners: Vec<usize> = (1..=drivers).collect();
    owners.push(0);
    Ok(Instance {
        kind: Some(UseCaseKind::RideHailing),
        scale: drivers,
        prog: LabeledProgram {
            circuit: Circuit { slots: width, gates },
            inputs: labels(prefix, &names),
            output_block: OutputBlock { start: 0, len: 2 * drivers },
        },
        inputs,
        owners,
        expected,
        entries: Vec::new(),
    })
}

fn dot_product(len: usize, width: usize, t: &Modulus, prefix: &str, rng: &mut impl Rng) -> Result<Instance> {
    ensure!(len.is_power_of_two(), "dot-product length must be a power of two");
    let vec = |rng: &mut _| {
        let mut v = SlotVector::zeros(width);
        for x in &mut v.0[..len] {
            *x = Rng::gen_range(rng, 0..16);
        }
        v
    };
    let a = vec(rng);
    let b = vec(rng);
    let dot = a.0.iter().zip(&b.0).fold(0, |acc, (&x, &y)| t.add(acc, t.mul(x, y)));
    Ok(Instance {
        kind: Some(UseCaseKind::DotProduct),
        scale: len,
        prog: LabeledProgram {
            circuit: Circuit {
                slots: width,
                gates: vec![
                    Gate::Input { index: 0 },
                    Gate::Input { index: 1 },
                    Gate::Mul { a: 0, b: 1, relin: true },
                    Gate::InnerSum { a: 2, block: len },
                ],
            },
            inputs: labels(prefix, &["a".into(), "b".into()]),
            output_block: OutputBlock { start: 0, len: 1 },
        },
        inputs: vec![a, b],
        owners: vec![0, 0],
        expected: SlotVector(vec![dot]),
        entries: Vec::new(),
    })
}

fn string_bits(s: &str) -> Vec<u64> {
    let mut bytes = s.as_bytes().to_vec();
    bytes.resize(LOOKUP_CHARS, 0);
    bytes
        .iter()
        .flat_map(|&c| (0..8).map(move |b| (c >> b & 1) as u64))
        .collect()
}

/// Inverse of the lookup bit layout; trailing NULs are dropped.
pub fn bits_to_string(bits: &[u64]) -> Option<String> {
    if bits.len() != LOOKUP_BITS || bits.iter().any(|&b| b > 1) {
        return None;
    }
    let bytes: Vec<u8> = bits
        .chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (b as u8) << i))
        .take_while(|&c| c != 0)
        .collect();
    String::from_utf8(bytes).ok()
}

fn random_domain(rng: &mut impl Rng) -> String {
    let len = rng.gen_range(4..=LOOKUP_CHARS - 4);
    let name: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
    let tld = ["com", "org", "net"][rng.gen_range(0..3)];
    format!("{name}.{tld}")
}

/// Encrypted search: the query's bits are compared against every entry,
/// the per-bit equalities are multiplied together, and the matching entry
/// is summed into the first block.
fn lookup(entries: usize, width: usize, prefix: &str, rng: &mut impl Rng) -> Result<Instance> {
    ensure!(entries.is_power_of_two(), "lookup entry count must be a power of two");
    let mut db: Vec<String> = Vec::new();
    while db.len() < entries {
        let d = random_domain(rng);
        if !db.contains(&d) {
            db.push(d);
        }
    }
    let hit = rng.gen_range(0..entries);
    let span = entries * LOOKUP_BITS;
    let mut db_bits = SlotVector::zeros(width);
    let mut query = SlotVector::zeros(width);
    for (i, e) in db.iter().enumerate() {
        db_bits.0[i * LOOKUP_BITS..(i + 1) * LOOKUP_BITS].copy_from_slice(&string_bits(e));
        query.0[i * LOOKUP_BITS..(i + 1) * LOOKUP_BITS].copy_from_slice(&string_bits(&db[hit]));
    }
    let not = |v: &SlotVector| {
        let mut out = SlotVector::zeros(width);
        for i in 0..span {
            out.0[i] = 1 - v.0[i];
        }
        out
    };
    let (db_not, query_not) = (not(&db_bits), not(&query));

    let mut g: Vec<Gate> = (0..4).map(|index| Gate::Input { index }).collect();
    let push = |g: &mut Vec<Gate>, gate| {
        g.push(gate);
        g.len() - 1
    };
    // bitwise equality: q*d + (1-q)(1-d)
    let same = push(&mut g, Gate::Mul { a: 2, b: 0, relin: true });
    let same_not = push(&mut g, Gate::Mul { a: 3, b: 1, relin: true });
    let mut x = push(&mut g, Gate::Add { a: same, b: same_not });
    let mut step = 1;
    while step < LOOKUP_BITS {
        let r = push(&mut g, Gate::Rotate { a: x, step: step as i64 });
        x = push(&mut g, Gate::Mul { a: x, b: r, relin: true });
        step *= 2;
    }
    let mut mask = SlotVector::zeros(width);
    for i in 0..entries {
        mask.0[i * LOOKUP_BITS] = 1;
    }
    x = push(&mut g, Gate::MulPlain { a: x, constant: mask });
    let mut step = 1;
    while step < LOOKUP_BITS {
        let r = push(&mut g, Gate::Rotate { a: x, step: -(step as i64) });
        x = push(&mut g, Gate::Add { a: x, b: r });
        step *= 2;
    }
    x = push(&mut g, Gate::Mul { a: x, b: 0, relin: true });
    let mut stride = LOOKUP_BITS;
    while stride < span {
        let r = push(&mut g, Gate::Rotate { a: x, step: stride as i64 });
        x = push(&mut g, Gate::Add { a: x, b: r });
        stride *= 2;
    }
    let _ = x;

    Ok(Instance {
        kind: Some(UseCaseKind::Lookup),
        scale: entries,
        prog: LabeledProgram {
            circuit: Circuit { slots: width, gates: g },
            inputs: labels(prefix, &["db".into(), "db-not".into(), "query".into(), "query-not".into()]),
            output_block: OutputBlock { start: 0, len: LOOKUP_BITS },
        },
        inputs: vec![db_bits, db_not, query, query_not],
        owners: vec![0; 4],
        expected: SlotVector(string_bits(&db[hit])),
        entries: db,
    })
}

fn aggregation(clients: usize, width: usize, t: &Modulus, prefix: &str, rng: &mut impl Rng) -> Result<Instance> {
    if t.value() <= (clients as u64) << 12 {
        bail!("plaintext modulus too small for {clients} quantized updates");
    }
    let inputs: Vec<SlotVector> = (0..clients)
        .map(|_| SlotVector((0..width).map(|_| rng.gen_range(0..1 << 12)).collect()))
        .collect();
    let expected = SlotVector((0..width).map(|i| inputs.iter().map(|v| v.0[i]).sum()).collect());
    let mut gates: Vec<Gate> = (0..clients).map(|index| Gate::Input { index }).collect();
    let mut acc = 0;
    for k in 1..clients {
        gates.push(Gate::Add { a: acc, b: k });
        acc = gates.len() - 1;
    }
    let names: Vec<String> = (0..clients).map(|k| format!("client{k}")).collect();
    Ok(Instance {
        kind: Some(UseCaseKind::Aggregation),
        scale: clients,
        prog: LabeledProgram {
            circuit: Circuit { slots: width, gates },
            inputs: labels(prefix, &names),
            output_block: OutputBlock { start: 0, len: width },
        },
        inputs,
        owners: (0..clients).collect(),
        expected,
        entries: Vec::new(),
    })
}

/// `x^(2^depth)` by repeated squaring on one random input; result degree
/// under the polynomial encoding is `2^depth`.
pub fn power_chain(depth: usize, width: usize, t: &Modulus, prefix: &str, rng: &mut impl Rng) -> Instance {
    let x = SlotVector((0..width).map(|_| rng.gen_range(0..t.value())).collect());
    let mut gates = vec![Gate::Input { index: 0 }];
    let mut expected = x.clone();
    for i in 0..depth {
        gates.push(Gate::Mul { a: i, b: i, relin: true });
        expected = expected.mul(&expected, t);
    }
    Instance {
        kind: None,
        scale: depth,
        prog: LabeledProgram {
            circuit: Circuit { slots: width, gates },
            inputs: vec![format!("{prefix}/x")],
            output_block: OutputBlock { start: 0, len: width },
        },
        inputs: vec![x],
        owners: vec![0],
        expected,
        entries: Vec::new(),
    }
}
