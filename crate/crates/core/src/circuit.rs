//! Arithmetic circuits over slot vectors, their JSON form, and the
//! interpreters that run them on plaintexts, ciphertexts, tags and
//! challenge values.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use vhe_bfv::{inner_sum_steps, Ciphertext, Evaluator, HeError, Modulus, SlotVector};

use crate::labels::{hash_node, prf_zt, Digest, Identifier, PrfKey};
use crate::AuthError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Gate {
    Input { index: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize, relin: bool },
    MulPlain { a: usize, constant: SlotVector },
    Rotate { a: usize, step: i64 },
    RowSwap { a: usize },
    InnerSum { a: usize, block: usize },
}

impl Gate {
    pub fn operands(&self) -> Vec<usize> {
        match *self {
            Gate::Input { .. } => vec![],
            Gate::Add { a, b } | Gate::Sub { a, b } | Gate::Mul { a, b, .. } => vec![a, b],
            Gate::MulPlain { a, .. }
            | Gate::Rotate { a, .. }
            | Gate::RowSwap { a }
            | Gate::InnerSum { a, .. } => vec![a],
        }
    }

    /// Byte identifying the gate kind inside tag hashes.
    pub fn type_byte(&self) -> u8 {
        match self {
            Gate::Input { .. } => 0,
            Gate::Add { .. } => 1,
            Gate::Sub { .. } => 2,
            Gate::Mul { .. } => 3,
            Gate::MulPlain { .. } => 4,
            Gate::Rotate { .. } => 5,
            Gate::RowSwap { .. } => 6,
            Gate::InnerSum { .. } => 7,
        }
    }

    /// Gate parameters as hashed into tags: the rotation step, the block,
    /// or the constant's slots, little-endian.
    pub fn param_bytes(&self) -> Vec<u8> {
        match self {
            Gate::Rotate { step, .. } => step.to_le_bytes().to_vec(),
            Gate::InnerSum { block, .. } => (*block as u64).to_le_bytes().to_vec(),
            Gate::MulPlain { constant, .. } => {
                constant.0.iter().flat_map(|v| v.to_le_bytes()).collect()
            }
            Gate::Mul { relin, .. } => vec![*relin as u8],
            _ => vec![],
        }
    }
}

/// Gates in topological order over `slots`-wide vectors; the last gate is
/// the output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Circuit {
    pub slots: usize,
    pub gates: Vec<Gate>,
}

/// Contiguous logical slots holding the result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub start: usize,
    pub len: usize,
}

/// A circuit plus the label of every input. Slot `j` of input `k` is named
/// `(inputs[k], j)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledProgram {
    pub circuit: Circuit,
    pub inputs: Vec<String>,
    pub output_block: OutputBlock,
}

impl Circuit {
    pub fn output(&self) -> usize {
        self.gates.len() - 1
    }

    pub fn input_count(&self) -> usize {
        self.gates
            .iter()
            .filter_map(|g| match g {
                Gate::Input { index } => Some(index + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self, inputs: usize) -> Result<(), AuthError> {
        let bad = |i: usize, why: &str| Err(AuthError::InvalidCircuit(format!("gate {i}: {why}")));
        if self.slots < 2 || !self.slots.is_power_of_two() {
            return Err(AuthError::InvalidCircuit(format!(
                "slot count {} is not a power of two",
                self.slots
            )));
        }
        if self.gates.is_empty() {
            return Err(AuthError::InvalidCircuit("no gates".into()));
        }
        for (i, g) in self.gates.iter().enumerate() {
            if g.operands().iter().any(|&o| o >= i) {
                return bad(i, "operand does not precede the gate");
            }
            match g {
                Gate::Input { index } if *index >= inputs => return bad(i, "input out of range"),
                Gate::MulPlain { constant, .. } if constant.len() != self.slots => {
                    return bad(i, "constant width differs from the circuit")
                }
                Gate::InnerSum { block, .. }
                    if *block == 0 || !block.is_power_of_two() || *block > self.slots / 2 =>
                {
                    return bad(i, "block must be a power of two within a row")
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Gates the output depends on.
    pub fn live(&self) -> Vec<bool> {
        let mut live = vec![false; self.gates.len()];
        live[self.output()] = true;
        for i in (0..self.gates.len()).rev() {
            if live[i] {
                for o in self.gates[i].operands() {
                    live[o] = true;
                }
            }
        }
        live
    }

    /// Multiplicative depth of every gate.
    pub fn depths(&self) -> Vec<u32> {
        let mut d = vec![0u32; self.gates.len()];
        for (i, g) in self.gates.iter().enumerate() {
            let m = g.operands().iter().map(|&o| d[o]).max().unwrap_or(0);
            d[i] = m + matches!(g, Gate::Mul { .. }) as u32;
        }
        d
    }

    pub fn depth(&self) -> u32 {
        self.depths()[self.output()]
    }

    /// Rotation steps the circuit needs once every logical step is scaled
    /// by `stride`.
    pub fn rotation_steps(&self, stride: usize) -> BTreeSet<i64> {
        let live = self.live();
        let mut out = BTreeSet::new();
        for (g, _) in self.gates.iter().zip(live).filter(|(_, l)| *l) {
            match g {
                Gate::Rotate { step, .. } => {
                    out.insert(step * stride as i64);
                }
                Gate::InnerSum { block, .. } => out.extend(inner_sum_steps(*block, stride)),
                _ => {}
            }
        }
        out
    }

    pub fn needs_row_swap(&self) -> bool {
        self.gates
            .iter()
            .zip(self.live())
            .any(|(g, l)| l && matches!(g, Gate::RowSwap { .. }))
    }

    pub fn has_rotations(&self) -> bool {
        !self.rotation_steps(1).is_empty() || self.needs_row_swap()
    }

    /// The same gates over `slots`-wide vectors. Plaintext constants are
    /// cut or cyclically extended row by row, so row structure is kept.
    pub fn with_width(&self, slots: usize) -> Circuit {
        let gates = self
            .gates
            .iter()
            .map(|g| match g {
                Gate::MulPlain { a, constant } => {
                    let (old, new) = (self.slots / 2, slots / 2);
                    let v = (0..slots)
                        .map(|i| constant.0[(i / new) * old + (i % new) % old])
                        .collect();
                    Gate::MulPlain {
                        a: *a,
                        constant: SlotVector(v),
                    }
                }
                other => other.clone(),
            })
            .collect();
        Circuit { slots, gates }
    }
}

impl LabeledProgram {
    /// See [`Circuit::with_width`]; the output block is clipped to fit.
    pub fn with_width(&self, slots: usize) -> LabeledProgram {
        let start = self.output_block.start.min(slots - 1);
        LabeledProgram {
            circuit: self.circuit.with_width(slots),
            inputs: self.inputs.clone(),
            output_block: OutputBlock {
                start,
                len: self.output_block.len.min(slots - start),
            },
        }
    }

    pub fn validate(&self) -> Result<(), AuthError> {
        self.circuit.validate(self.inputs.len())?;
        let mut seen = BTreeSet::new();
        if !self.inputs.iter().all(|l| seen.insert(l)) {
            return Err(AuthError::InvalidCircuit("duplicate input label".into()));
        }
        let b = self.output_block;
        if b.len == 0 || b.start + b.len > self.circuit.slots {
            return Err(AuthError::InvalidCircuit("output block out of range".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, AuthError> {
        let p: LabeledProgram =
            serde_json::from_str(s).map_err(|e| AuthError::InvalidCircuit(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

/// One way of giving meaning to gates.
pub trait Interpreter {
    type Value: Clone;
    type Error;

    fn gate(
        &mut self,
        id: usize,
        gate: &Gate,
        args: &[&Self::Value],
    ) -> Result<Self::Value, Self::Error>;
}

/// Values of every live wire (dead wires are `None`).
pub fn evaluate_wires<I: Interpreter>(
    c: &Circuit,
    interp: &mut I,
) -> Result<Vec<Option<I::Value>>, I::Error> {
    let live = c.live();
    let mut wires: Vec<Option<I::Value>> = vec![None; c.gates.len()];
    for (i, g) in c.gates.iter().enumerate() {
        if !live[i] {
            continue;
        }
        let ops = g.operands();
        let args: Vec<&I::Value> = ops
            .iter()
            .map(|&o| wires[o].as_ref().expect("operands of live gates are live"))
            .collect();
        let v = interp.gate(i, g, &args)?;
        wires[i] = Some(v);
    }
    Ok(wires)
}

pub fn evaluate<I: Interpreter>(c: &Circuit, interp: &mut I) -> Result<I::Value, I::Error> {
    let mut w = evaluate_wires(c, interp)?;
    Ok(w.swap_remove(c.output()).expect("output is live"))
}

/// Plaintext semantics.
pub struct PlainInterp<'a> {
    pub inputs: &'a [SlotVector],
    pub t: &'a Modulus,
}

impl Interpreter for PlainInterp<'_> {
    type Value = SlotVector;
    type Error = AuthError;

    fn gate(&mut self, _: usize, g: &Gate, a: &[&SlotVector]) -> Result<SlotVector, AuthError> {
        let t = self.t;
        Ok(match g {
            Gate::Input { index } => self.inputs[*index].clone(),
            Gate::Add { .. } => a[0].add(a[1], t),
            Gate::Sub { .. } => a[0].sub(a[1], t),
            Gate::Mul { .. } => a[0].mul(a[1], t),
            Gate::MulPlain { constant, .. } => a[0].mul(constant, t),
            Gate::Rotate { step, .. } => a[0].rotate(*step),
            Gate::RowSwap { .. } => a[0].row_swap(),
            Gate::InnerSum { block, .. } => a[0].inner_sum(*block, t),
        })
    }
}

pub fn eval_plain(c: &Circuit, inputs: &[SlotVector], t: &Modulus) -> Result<SlotVector, AuthError> {
    c.validate(inputs.len())?;
    if let Some(v) = inputs.iter().find(|v| v.len() != c.slots) {
        return Err(AuthError::WidthMismatch {
            expected: c.slots,
            got: v.len(),
        });
    }
    evaluate(c, &mut PlainInterp { inputs, t })
}

/// Homomorphic semantics on single ciphertexts (no authentication).
pub struct HeInterp<'a> {
    pub inputs: &'a [Ciphertext],
    pub ev: &'a dyn Evaluator,
}

impl Interpreter for HeInterp<'_> {
    type Value = Ciphertext;
    type Error = HeError;

    fn gate(&mut self, _: usize, g: &Gate, a: &[&Ciphertext]) -> Result<Ciphertext, HeError> {
        let ev = self.ev;
        match g {
            Gate::Input { index } => Ok(self.inputs[*index].clone()),
            Gate::Add { .. } => ev.add(a[0], a[1]),
            Gate::Sub { .. } => ev.sub(a[0], a[1]),
            Gate::Mul { relin: true, .. } => ev.mul(a[0], a[1]),
            Gate::Mul { relin: false, .. } => ev.mul_no_relin(a[0], a[1]),
            Gate::MulPlain { constant, .. } => ev.mul_plain(a[0], constant),
            Gate::Rotate { step, .. } => ev.rotate(a[0], *step),
            Gate::RowSwap { .. } => ev.row_swap(a[0]),
            Gate::InnerSum { block, .. } => ev.inner_sum(a[0], *block),
        }
    }
}

pub fn eval_he(
    c: &Circuit,
    inputs: &[Ciphertext],
    ev: &dyn Evaluator,
) -> Result<Ciphertext, AuthError> {
    c.validate(inputs.len())?;
    if c.slots != ev.slot_count() {
        return Err(AuthError::WidthMismatch {
            expected: ev.slot_count(),
            got: c.slots,
        });
    }
    Ok(evaluate(c, &mut HeInterp { inputs, ev })?)
}

struct HashInterp<'a> {
    leaves: &'a [Digest],
}

impl Interpreter for HashInterp<'_> {
    type Value = Digest;
    type Error = std::convert::Infallible;

    fn gate(&mut self, _: usize, g: &Gate, a: &[&Digest]) -> Result<Digest, Self::Error> {
        Ok(match g {
            Gate::Input { index } => self.leaves[*index],
            _ => {
                let children: Vec<Digest> = a.iter().map(|d| **d).collect();
                hash_node(g.type_byte(), &g.param_bytes(), &children)
            }
        })
    }
}

/// Tag of the output given one leaf tag per input.
pub fn hash_tree_eval(c: &Circuit, leaves: &[Digest]) -> Result<Digest, AuthError> {
    c.validate(leaves.len())?;
    match evaluate(c, &mut HashInterp { leaves }) {
        Ok(d) => Ok(d),
        Err(never) => match never {},
    }
}

/// How input slots are replaced by PRF values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    /// Slot `j` of input `k` becomes `F_K((label_k, j))`.
    Pe,
    /// Slot `i` of input `k`, replica `replica`, becomes
    /// `F_K((label_k, i), replica)`.
    Rep { replica: usize },
}

pub fn challenge_inputs(
    prog: &LabeledProgram,
    key: &PrfKey,
    t: &Modulus,
    conv: Convention,
) -> Vec<SlotVector> {
    let w = prog.circuit.slots;
    prog.inputs
        .iter()
        .map(|label| {
            SlotVector(
                (0..w)
                    .map(|i| match conv {
                        Convention::Pe => prf_zt(key, &Identifier::slot(label, i as u64), None, t),
                        Convention::Rep { replica } => prf_zt(
                            key,
                            &Identifier::slot(label, i as u64),
                            Some(replica as u64),
                            t,
                        ),
                    })
                    .collect(),
            )
        })
        .collect()
}

/// The circuit evaluated on challenge inputs.
pub fn eval_challenge(
    prog: &LabeledProgram,
    key: &PrfKey,
    t: &Modulus,
    conv: Convention,
) -> Result<SlotVector, AuthError> {
    eval_plain(&prog.circuit, &challenge_inputs(prog, key, t, conv), t)
}

/// Parameters for random programs, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub max_gates: usize,
    pub max_depth: u32,
    pub min_inputs: usize,
    pub max_inputs: usize,
    pub rotation_steps: Vec<i64>,
    pub inner_sum_blocks: Vec<usize>,
    pub weights: GateWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateWeights {
    pub add: u32,
    pub sub: u32,
    pub mul: u32,
    pub mul_plain: u32,
    pub rotate: u32,
    pub row_swap: u32,
    pub inner_sum: u32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::from_toml(include_str!("../config/random_programs.toml"))
            .expect("bundled generator config parses")
    }
}

impl GeneratorConfig {
    pub fn from_toml(s: &str) -> Result<Self, AuthError> {
        let c: GeneratorConfig =
            toml::from_str(s).map_err(|e| AuthError::InvalidCircuit(e.to_string()))?;
        if c.min_inputs == 0 || c.min_inputs > c.max_inputs || c.max_inputs >= c.max_gates {
            return Err(AuthError::InvalidCircuit("inconsistent input bounds".into()));
        }
        Ok(c)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, AuthError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| AuthError::InvalidCircuit(format!("{}: {e}", path.display())))?;
        Self::from_toml(&s)
    }
}

/// Random program with at most `max_gates` gates (inputs included) and
/// depth at most `max_depth`. Labels are `{prefix}/{k}`.
pub fn random_program(
    cfg: &GeneratorConfig,
    slots: usize,
    t: &Modulus,
    prefix: &str,
    rng: &mut impl Rng,
) -> LabeledProgram {
    let n_inputs = rng.gen_range(cfg.min_inputs..=cfg.max_inputs);
    let mut gates: Vec<Gate> = (0..n_inputs).map(|index| Gate::Input { index }).collect();
    let mut depth = vec![0u32; n_inputs];
    let n_ops = rng.gen_range(1..=cfg.max_gates - n_inputs);
    let w = &cfg.weights;
    let table = [
        w.add, w.sub, w.mul, w.mul_plain, w.rotate, w.row_swap, w.inner_sum,
    ];
    let total: u32 = table.iter().sum();
    for _ in 0..n_ops {
        let last = gates.len() - 1;
        // lean on the newest wire so most gates feed the output
        let a = if rng.gen_bool(0.6) { last } else { rng.gen_range(0..gates.len()) };
        let b = rng.gen_range(0..gates.len());
        let mut pick = rng.gen_range(0..total);
        let mut kind = 0;
        while pick >= table[kind] {
            pick -= table[kind];
            kind += 1;
        }
        let mul_ok = depth[a].max(depth[b]) < cfg.max_depth;
        let g = match kind {
            0 => Gate::Add { a, b },
            1 => Gate::Sub { a, b },
            2 if mul_ok => Gate::Mul { a, b, relin: true },
            2 => Gate::Add { a, b },
            3 => Gate::MulPlain {
                a,
                constant: SlotVector((0..slots).map(|_| rng.gen_range(0..t.value())).collect()),
            },
            4 => Gate::Rotate {
                a,
                step: cfg.rotation_steps[rng.gen_range(0..cfg.rotation_steps.len())],
            },
            5 => Gate::RowSwap { a },
            _ => Gate::InnerSum {
                a,
                block: cfg.inner_sum_blocks[rng.gen_range(0..cfg.inner_sum_blocks.len())]
                    .min(slots / 2),
            },
        };
        let d = g.operands().iter().map(|&o| depth[o]).max().unwrap_or(0)
            + matches!(g, Gate::Mul { .. }) as u32;
        depth.push(d);
        gates.push(g);
    }
    LabeledProgram {
        circuit: Circuit { slots, gates },
        inputs: (0..n_inputs).map(|k| format!("{prefix}/{k}")).collect(),
        output_block: OutputBlock { start: 0, len: 1 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t17() -> Modulus {
        Modulus::new(17).unwrap()
    }

    /// `(x - x')^2 + (y - y')^2` in slot 0 via an inner sum of width 2.
    fn squared_distance() -> Circuit {
        Circuit {
            slots: 8,
            gates: vec![
                Gate::Input { index: 0 },
                Gate::Input { index: 1 },
                Gate::Sub { a: 0, b: 1 },
                Gate::Mul { a: 2, b: 2, relin: true },
                Gate::InnerSum { a: 3, block: 2 },
            ],
        }
    }

    #[test]
    fn squared_distance_on_plaintexts() {
        let t = t17();
        let p = SlotVector(vec![5, 3, 0, 0, 0, 0, 0, 0]);
        let q = SlotVector(vec![2, 1, 0, 0, 0, 0, 0, 0]);
        let r = eval_plain(&squared_distance(), &[p, q], &t).unwrap();
        assert_eq!(r.0[0], (9 + 4) % 17);
    }

    #[test]
    fn identity_circuit_keeps_leaf_tag() {
        let c = Circuit {
            slots: 4,
            gates: vec![Gate::Input { index: 0 }],
        };
        let leaf = Digest([9; 64]);
        assert_eq!(hash_tree_eval(&c, &[leaf]).unwrap(), leaf);
    }

    #[test]
    fn tags_separate_rotation_steps() {
        let mk = |step| Circuit {
            slots: 8,
            gates: vec![Gate::Input { index: 0 }, Gate::Rotate { a: 0, step }],
        };
        let leaf = [Digest([1; 64])];
        assert_ne!(hash_tree_eval(&mk(1), &leaf).unwrap(), hash_tree_eval(&mk(2), &leaf).unwrap());
    }

    #[test]
    fn validation_catches_bad_shapes() {
        let mut c = squared_distance();
        c.gates.push(Gate::Add { a: 9, b: 0 });
        assert!(c.validate(2).is_err());
        let c = squared_distance();
        assert!(c.validate(1).is_err());
        let c = Circuit {
            slots: 8,
            gates: vec![Gate::Input { index: 0 }, Gate::InnerSum { a: 0, block: 3 }],
        };
        assert!(c.validate(1).is_err());
        let c = Circuit {
            slots: 8,
            gates: vec![Gate::Input { index: 0 }, Gate::MulPlain { a: 0, constant: SlotVector(vec![1; 4]) }],
        };
        assert!(c.validate(1).is_err());
    }

    #[test]
    fn depth_and_steps() {
        let c = squared_distance();
        assert_eq!(c.depth(), 1);
        assert_eq!(c.rotation_steps(1).into_iter().collect::<Vec<_>>(), vec![1]);
        assert_eq!(c.rotation_steps(8).into_iter().collect::<Vec<_>>(), vec![8]);
    }

    #[test]
    fn json_field_order_is_canonical() {
        let p = LabeledProgram {
            circuit: squared_distance(),
            inputs: vec!["a".into(), "b".into()],
            output_block: OutputBlock { start: 0, len: 1 },
        };
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.starts_with(r#"{"circuit":{"slots":8,"gates":[{"op":"input","index":0}"#));
        assert!(s.contains(r#"{"op":"mul","a":2,"b":2,"relin":true}"#));
        assert!(s.ends_with(r#""inputs":["a","b"],"output_block":{"start":0,"len":1}}"#));
        assert_eq!(LabeledProgram::from_json(&s).unwrap(), p);
        assert!(LabeledProgram::from_json(&s.replace("\"len\":1", "\"len\":9")).is_err());
    }

    #[test]
    fn bundled_generator_config() {
        let c = GeneratorConfig::default();
        assert_eq!((c.max_gates, c.max_depth), (8, 3));
    }
}
