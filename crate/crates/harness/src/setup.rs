//! Backend selection: a named BFV preset or the plaintext mock.

use std::fmt;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use vhe_bfv::{Backend, MockParams, Modulus, ParamSpec, Params};

/// Depth limit given to mock backends unless stated.
pub const MOCK_DEPTH: u32 = 64;

/// `n4096`-style preset names, optionally with a different plaintext size
/// (`n4096-d3@t32`), or `mock:<n>:<t>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendSpec {
    Preset { name: String, t_bits: Option<u32> },
    Mock { n: usize, t: u64, depth_limit: u32 },
}

impl BackendSpec {
    pub fn preset(name: &str) -> Self {
        BackendSpec::Preset {
            name: name.to_string(),
            t_bits: None,
        }
    }

    pub fn mock(n: usize, t: u64) -> Self {
        BackendSpec::Mock {
            n,
            t,
            depth_limit: MOCK_DEPTH,
        }
    }

    pub fn is_mock(&self) -> bool {
        matches!(self, BackendSpec::Mock { .. })
    }

    pub fn param_spec(&self) -> Result<Option<ParamSpec>> {
        match self {
            BackendSpec::Preset { name, t_bits } => {
                let spec = ParamSpec::preset(name)?;
                Ok(Some(match t_bits {
                    Some(b) => spec.with_plain_bits(*b)?,
                    None => spec,
                }))
            }
            BackendSpec::Mock { .. } => Ok(None),
        }
    }

    pub fn params(&self) -> Result<Option<Params>> {
        Ok(match self.param_spec()? {
            Some(s) => Some(Params::new(s)?),
            None => None,
        })
    }

    pub fn slot_count(&self) -> Result<usize> {
        Ok(match self {
            BackendSpec::Mock { n, .. } => *n,
            _ => self.param_spec()?.expect("preset").n,
        })
    }

    pub fn plain_modulus(&self) -> Result<Modulus> {
        let t = match self {
            BackendSpec::Mock { t, .. } => *t,
            _ => self.param_spec()?.expect("preset").t,
        };
        Ok(Modulus::new(t)?)
    }

    /// Multiplicative depth fresh ciphertexts can absorb.
    pub fn depth_capacity(&self) -> Result<u32> {
        Ok(match self {
            BackendSpec::Mock { depth_limit, .. } => *depth_limit,
            _ => self.param_spec()?.expect("preset").depth_capacity(),
        })
    }

    /// Fresh keys with Galois keys for `steps` (BFV only).
    pub fn backend(&self, steps: &[i64], row_swap: bool, rng: &mut dyn RngCore) -> Result<Backend> {
        Ok(match self {
            BackendSpec::Mock { n, t, depth_limit } => {
                Backend::mock(MockParams::new(*n, *t, *depth_limit)?)
            }
            _ => Backend::bfv(&self.params()?.expect("preset"), steps, row_swap, rng),
        })
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Preset { name, t_bits: None } => f.write_str(name),
            BackendSpec::Preset { name, t_bits: Some(b) } => write!(f, "{name}@t{b}"),
            BackendSpec::Mock { n, t, .. } => write!(f, "mock:{n}:{t}"),
        }
    }
}

impl FromStr for BackendSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("mock:") {
            let (n, t) = rest
                .split_once(':')
                .ok_or_else(|| anyhow!("expected mock:<n>:<t>"))?;
            let n = n.parse().context("mock slot count")?;
            let t = t.parse().context("mock plaintext modulus")?;
            MockParams::new(n, t, MOCK_DEPTH)?;
            return Ok(BackendSpec::mock(n, t));
        }
        let (name, t_bits) = match s.split_once("@t") {
            Some((name, b)) => (name, Some(b.parse().context("plaintext bits")?)),
            None => (s, None),
        };
        if !ParamSpec::preset_names().contains(&name) {
            return Err(anyhow!(
                "unknown parameters {name}; presets are {}",
                ParamSpec::preset_names().join(", ")
            ));
        }
        Ok(BackendSpec::Preset {
            name: name.to_string(),
            t_bits,
        })
    }
}

/// Left rotations by powers of two below `n / 2`, as the polynomial
/// protocol's packing needs.
pub fn pp_steps(n: usize) -> Vec<i64> {
    (0..).map(|k| 1i64 << k).take_while(|&s| (s as usize) < n / 2).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_presets_and_mocks() {
        assert_eq!("n4096".parse::<BackendSpec>().unwrap(), BackendSpec::preset("n4096"));
        let p: BackendSpec = "n4096@t33".parse().unwrap();
        assert_eq!(p.to_string(), "n4096@t33");
        assert_eq!(p.plain_modulus().unwrap().bits(), 33);
        let m: BackendSpec = "mock:32:65537".parse().unwrap();
        assert_eq!(m, BackendSpec::mock(32, 65537));
        assert!("mock:30:65537".parse::<BackendSpec>().is_err());
        assert!("n1234".parse::<BackendSpec>().is_err());
    }

    #[test]
    fn pp_steps_cover_half_a_row() {
        assert_eq!(pp_steps(32), vec![1, 2, 4, 8]);
    }
}
