//! Amortized per-slot operation timings for plain BFV, REP and PE.
//!
//! Cases are timed in interleaved rounds and each reports its median, so
//! slow drift on the host affects every case alike.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use vhe_bfv::{Backend, Ciphertext, Evaluator, SlotVector};
use vhe_core::circuit::{Circuit, Gate, LabeledProgram, OutputBlock};
use vhe_core::pe::{PeAuth, PeEvaluator, DEFAULT_MAX_DEGREE};
use vhe_core::rep::{rep_auth, rep_eval, RepAuth, RepSecret};

use crate::setup::BackendSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchOp {
    Add,
    MulConst,
    Rot,
    Relin,
    /// Ciphertext product; PE runs it at result degrees 2, 4 and 8.
    Mul,
}

impl BenchOp {
    pub const ALL: [BenchOp; 5] = [BenchOp::Add, BenchOp::MulConst, BenchOp::Rot, BenchOp::Relin, BenchOp::Mul];
}

impl fmt::Display for BenchOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchOp::Add => "add",
            BenchOp::MulConst => "mul-const",
            BenchOp::Rot => "rot",
            BenchOp::Relin => "relin",
            BenchOp::Mul => "mul",
        })
    }
}

impl FromStr for BenchOp {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "add" => BenchOp::Add,
            "mul-const" => BenchOp::MulConst,
            "rot" => BenchOp::Rot,
            "relin" => BenchOp::Relin,
            "mul" => BenchOp::Mul,
            _ => bail!("unknown operation {s}"),
        })
    }
}

/// PE product degrees in the table.
pub const PE_MUL_DEGREES: [usize; 3] = [2, 4, 8];

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub preset: String,
    pub ops: Vec<BenchOp>,
    pub rep_lambdas: Vec<usize>,
    pub pe_lambdas: Vec<usize>,
    /// Interleaved timing rounds per case.
    pub rounds: usize,
    /// Target wall time of one timed batch.
    pub batch_ms: f64,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(preset: &str) -> Self {
        BenchConfig {
            preset: preset.to_string(),
            ops: BenchOp::ALL.to_vec(),
            rep_lambdas: vec![16, 32, 64],
            pe_lambdas: vec![16, 32],
            rounds: 9,
            batch_ms: 20.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub scheme: String,
    pub lambda: Option<usize>,
    pub op: BenchOp,
    /// PE result degree for products.
    pub degree: Option<usize>,
    /// Logical slots one timed operation covers.
    pub slots: usize,
    pub op_us: f64,
    pub per_slot_ns: f64,
    /// Against plain BFV on the same operation.
    pub vs_bfv: Option<f64>,
}

pub struct BenchReport {
    pub preset: String,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn find(&self, scheme: &str, lambda: Option<usize>, op: BenchOp, degree: Option<usize>) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme && r.lambda == lambda && r.op == op && r.degree == degree)
    }

    /// Per-slot time at `hi` over that at `lo`.
    pub fn lambda_ratio(&self, scheme: &str, op: BenchOp, lo: usize, hi: usize) -> Option<f64> {
        let a = self.find(scheme, Some(lo), op, None)?;
        let b = self.find(scheme, Some(hi), op, None)?;
        Some(b.per_slot_ns / a.per_slot_ns)
    }
}

struct Case {
    row: BenchRow,
    run: Box<dyn FnMut()>,
    iters: usize,
    samples: Vec<f64>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn row(scheme: &str, lambda: Option<usize>, op: BenchOp, degree: Option<usize>, slots: usize) -> BenchRow {
    BenchRow {
        scheme: scheme.to_string(),
        lambda,
        op,
        degree,
        slots,
        op_us: 0.0,
        per_slot_ns: 0.0,
        vs_bfv: None,
    }
}

fn random_vec(n: usize, t: u64, rng: &mut impl Rng) -> SlotVector {
    SlotVector((0..n).map(|_| rng.gen_range(0..t)).collect())
}

fn fresh(ev: &dyn Evaluator, rng: &mut ChaCha20Rng) -> Ciphertext {
    let v = random_vec(ev.slot_count(), ev.plain_modulus().value(), rng);
    ev.encrypt(&v, rng).expect("encrypt")
}

fn one_gate(width: usize, inputs: usize, gate: Gate) -> LabeledProgram {
    let mut gates: Vec<Gate> = (0..inputs).map(|index| Gate::Input { index }).collect();
    gates.push(gate);
    LabeledProgram {
        circuit: Circuit { slots: width, gates },
        inputs: (0..inputs).map(|k| format!("bench/{k}")).collect(),
        output_block: OutputBlock { start: 0, len: width },
    }
}

fn bfv_cases(backend: &Backend, ops: &[BenchOp], rng: &mut ChaCha20Rng) -> Vec<Case> {
    let n = backend.params().slot_count();
    let mut out = Vec::new();
    for &op in ops {
        let b = backend.clone();
        let ev = b.evaluator();
        let (x, y) = (fresh(ev, rng), fresh(ev, rng));
        let k = random_vec(n, ev.plain_modulus().value(), rng);
        let big = ev.mul_no_relin(&x, &y).expect("mul");
        let run: Box<dyn FnMut()> = Box::new(move || {
            let ev = b.evaluator();
            let r = match op {
                BenchOp::Add => ev.add(&x, &y),
                BenchOp::MulConst => ev.mul_plain(&x, &k),
                BenchOp::Rot => ev.rotate(&x, 1),
                BenchOp::Relin => ev.relinearize(&big),
                BenchOp::Mul => ev.mul(&x, &y),
            };
            std::hint::black_box(r.expect("bfv op"));
        });
        out.push(Case { row: row("bfv", None, op, None, n), run, iters: 1, samples: vec![] });
    }
    out
}

fn rep_cases(backend: &Backend, lambda: usize, ops: &[BenchOp], rng: &mut ChaCha20Rng) -> Result<Vec<Case>> {
    let n = backend.params().slot_count();
    let t = backend.params().plain_modulus().value();
    let mut out = Vec::new();
    for &op in ops {
        let sk = RepSecret::keygen(lambda, backend.clone(), rng)?;
        // rotations stay inside one ciphertext, so they run on a single chunk
        let width = if op == BenchOp::Rot { n / lambda } else { n };
        let auth = |label: &str, rng: &mut ChaCha20Rng| -> Result<RepAuth> {
            Ok(rep_auth(&random_vec(width, t, rng), label, &sk, rng)?)
        };
        let auths = vec![auth("bench/0", rng)?, auth("bench/1", rng)?];
        let run: Box<dyn FnMut()> = if op == BenchOp::Relin {
            // REP relinearizes every chunk of a product
            let ev = backend.evaluator();
            let big: Vec<Ciphertext> = auths[0]
                .cts
                .iter()
                .zip(&auths[1].cts)
                .map(|(a, b)| ev.mul_no_relin(a, b))
                .collect::<Result<_, _>>()?;
            let b = backend.clone();
            Box::new(move || {
                for c in &big {
                    std::hint::black_box(b.evaluator().relinearize(c).expect("relin"));
                }
            })
        } else {
            let gate = match op {
                BenchOp::Add => Gate::Add { a: 0, b: 1 },
                BenchOp::MulConst => Gate::MulPlain { a: 0, constant: random_vec(width, t, rng) },
                BenchOp::Rot => Gate::Rotate { a: 0, step: 1 },
                BenchOp::Mul => Gate::Mul { a: 0, b: 1, relin: true },
                BenchOp::Relin => unreachable!(),
            };
            let prog = one_gate(width, 2, gate);
            let b = backend.clone();
            Box::new(move || {
                std::hint::black_box(rep_eval(&prog, &auths, b.evaluator()).expect("rep op"));
            })
        };
        out.push(Case { row: row("rep", Some(lambda), op, None, width), run, iters: 1, samples: vec![] });
    }
    Ok(out)
}

fn pe_operand(ev: &dyn Evaluator, degree: usize, rng: &mut ChaCha20Rng) -> PeAuth {
    PeAuth { cts: (0..=degree).map(|_| fresh(ev, rng)).collect() }
}

fn pe_cases(backend: &Backend, lambda: usize, ops: &[BenchOp], rng: &mut ChaCha20Rng) -> Vec<Case> {
    let n = backend.params().slot_count();
    let mut out = Vec::new();
    for &op in ops {
        let ev = backend.evaluator();
        let t = ev.plain_modulus().value();
        let mut push = |gate: Gate, a: PeAuth, b: Option<PeAuth>, degree: Option<usize>| {
            let be = backend.clone();
            let mut pad = ChaCha20Rng::seed_from_u64(0);
            let run: Box<dyn FnMut()> = Box::new(move || {
                let mut cx = PeEvaluator { ev: be.evaluator(), max_degree: DEFAULT_MAX_DEGREE, rng: &mut pad };
                std::hint::black_box(cx.gate(&gate, &a, b.as_ref()).expect("pe op"));
            });
            out.push(Case { row: row("pe", Some(lambda), op, degree, n), run, iters: 1, samples: vec![] });
        };
        match op {
            BenchOp::Add => push(Gate::Add { a: 0, b: 1 }, pe_operand(ev, 1, rng), Some(pe_operand(ev, 1, rng)), None),
            BenchOp::MulConst => {
                let constant = random_vec(n, t, rng);
                push(Gate::MulPlain { a: 0, constant }, pe_operand(ev, 1, rng), None, None)
            }
            BenchOp::Rot => push(Gate::Rotate { a: 0, step: 1 }, pe_operand(ev, 1, rng), None, None),
            // components are relinearized inside each product
            BenchOp::Relin => {}
            BenchOp::Mul => {
                for d in PE_MUL_DEGREES {
                    let (a, b) = (pe_operand(ev, d / 2, rng), pe_operand(ev, d / 2, rng));
                    push(Gate::Mul { a: 0, b: 1, relin: true }, a, Some(b), Some(d));
                }
            }
        }
    }
    out
}

/// Times every case in `cfg`. Needs a BFV preset.
pub fn bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let spec = BackendSpec::preset(&cfg.preset);
    let n = spec.slot_count()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut steps = vec![1i64];
    steps.extend(cfg.rep_lambdas.iter().map(|&l| l as i64));
    let base = spec.backend(&steps, false, &mut rng)?;

    let mut cases = bfv_cases(&base, &cfg.ops, &mut rng);
    for &lambda in &cfg.rep_lambdas {
        cases.extend(rep_cases(&base, lambda, &cfg.ops, &mut rng)?);
    }
    for &lambda in &cfg.pe_lambdas {
        let pe = BackendSpec::Preset { name: cfg.preset.clone(), t_bits: Some(lambda as u32) };
        let backend = pe.backend(&[1], false, &mut rng)?;
        cases.extend(pe_cases(&backend, lambda, &cfg.ops, &mut rng));
    }

    // calibrate batch sizes, which also warms caches
    for c in &mut cases {
        let start = Instant::now();
        (c.run)();
        let once = start.elapsed().as_secs_f64() * 1e3;
        c.iters = ((cfg.batch_ms / once.max(1e-6)) as usize).clamp(1, 100_000);
    }
    for _ in 0..cfg.rounds {
        for c in &mut cases {
            let start = Instant::now();
            for _ in 0..c.iters {
                (c.run)();
            }
            c.samples.push(start.elapsed().as_secs_f64() * 1e6 / c.iters as f64);
        }
    }

    let mut rows: Vec<BenchRow> = cases
        .into_iter()
        .map(|mut c| {
            let us = median(&mut c.samples);
            c.row.op_us = us;
            c.row.per_slot_ns = us * 1e3 / c.row.slots as f64;
            c.row
        })
        .collect();
    let bfv: Vec<(BenchOp, f64)> = rows.iter().filter(|r| r.scheme == "bfv").map(|r| (r.op, r.per_slot_ns)).collect();
    for r in rows.iter_mut().filter(|r| r.scheme != "bfv") {
        r.vs_bfv = bfv.iter().find(|(op, _)| *op == r.op).map(|(_, ns)| r.per_slot_ns / ns);
    }
    debug_assert!(rows.iter().all(|r| r.slots <= n));
    Ok(BenchReport { preset: cfg.preset.clone(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_round_trip() {
        for op in BenchOp::ALL {
            assert_eq!(op.to_string().parse::<BenchOp>().unwrap(), op);
        }
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
