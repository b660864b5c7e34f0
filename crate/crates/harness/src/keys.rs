//! Key directories for the file-based workflow.
//!
//! `public.json` names the scheme and backend; `eval.keys` holds the BFV
//! public, relinearization and Galois keys. The client additionally keeps
//! `secret.json` (PRF key plus `alpha` or the challenge set), `secret.key`
//! and `labels.txt`, the labels already issued.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use vhe_bfv::container::{eval_keys_from_bytes, eval_keys_to_bytes, secret_key_from_bytes, secret_key_to_bytes};
use vhe_bfv::{Backend, BfvDecryptor, BfvEvaluator, Evaluator, SecretKey};
use vhe_core::circuit::LabeledProgram;
use vhe_core::labels::PrfKey;
use vhe_core::pe::PeSecret;
use vhe_core::rep::RepSecret;

use crate::pipeline::{key_requirements, AuthKind, Mode};
use crate::setup::BackendSpec;

const PUBLIC: &str = "public.json";
const SECRET: &str = "secret.json";
const SECRET_KEY: &str = "secret.key";
const EVAL_KEYS: &str = "eval.keys";
const LABELS: &str = "labels.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Rep,
    Pe,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Rep => "rep",
            Scheme::Pe => "pe",
        })
    }
}

impl TryFrom<AuthKind> for Scheme {
    type Error = anyhow::Error;

    fn try_from(a: AuthKind) -> Result<Self> {
        match a {
            AuthKind::Rep => Ok(Scheme::Rep),
            AuthKind::Pe => Ok(Scheme::Pe),
            AuthKind::None => bail!("keys need an authenticator, rep or pe"),
        }
    }
}

/// What the cloud may read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicInfo {
    pub scheme: Scheme,
    /// Replication factor (REP only).
    pub lambda: Option<usize>,
    pub backend: BackendSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SecretInfo {
    prf_key: String,
    alpha: Option<u64>,
    subset: Option<Vec<usize>>,
}

pub enum ClientSecret {
    Rep(RepSecret),
    Pe(PeSecret),
}

pub struct KeyDir {
    pub path: PathBuf,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Rotation steps a key set covers when no program is given: every signed
/// power of two that stays within a row, scaled by the REP stride.
pub fn default_steps(n: usize, stride: usize) -> Vec<i64> {
    (0..)
        .map(|k| (1i64 << k) * stride as i64)
        .take_while(|&s| (s as usize) < n / 2)
        .flat_map(|s| [s, -s])
        .collect()
}

impl KeyDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        KeyDir { path: path.into() }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Fresh keys. Galois keys cover the default steps plus whatever the
    /// given programs need.
    pub fn generate(
        &self,
        backend: &BackendSpec,
        scheme: Scheme,
        lambda: usize,
        programs: &[LabeledProgram],
        rng: &mut dyn RngCore,
    ) -> Result<PublicInfo> {
        fs::create_dir_all(&self.path).with_context(|| format!("creating {}", self.path.display()))?;
        let n = backend.slot_count()?;
        let stride = if scheme == Scheme::Rep { lambda } else { 1 };
        let mut steps: BTreeSet<i64> = default_steps(n, stride).into_iter().collect();
        let mode = match scheme {
            Scheme::Rep => Mode::REP,
            Scheme::Pe => Mode::PE_PP,
        };
        for p in programs {
            steps.extend(key_requirements(p, mode, lambda, n).0);
        }
        let steps: Vec<i64> = steps.into_iter().collect();

        let handle = match backend.params()? {
            Some(params) => {
                let sk = SecretKey::generate(&params, rng);
                let pk = sk.public_key(rng);
                let rlk = sk.relin_key(rng);
                let gk = sk.galois_keys(&steps, true, rng);
                write(&self.file(EVAL_KEYS), eval_keys_to_bytes(&pk, Some(&rlk), &gk))?;
                write(&self.file(SECRET_KEY), secret_key_to_bytes(&sk))?;
                Backend::Bfv {
                    eval: Arc::new(BfvEvaluator::new(pk, Some(rlk), gk)),
                    dec: Arc::new(BfvDecryptor::new(sk)),
                }
            }
            None => backend.backend(&[], false, rng)?,
        };
        let (secret, lambda) = match scheme {
            Scheme::Rep => {
                let s = RepSecret::keygen(lambda, handle, rng)?;
                let info = SecretInfo {
                    prf_key: hex::encode(s.key().0),
                    alpha: None,
                    subset: Some(s.subset()),
                };
                (info, Some(lambda))
            }
            Scheme::Pe => {
                let s = PeSecret::keygen(handle, rng)?;
                let info = SecretInfo {
                    prf_key: hex::encode(s.key().0),
                    alpha: Some(s.alpha()),
                    subset: None,
                };
                (info, None)
            }
        };
        let public = PublicInfo {
            scheme,
            lambda,
            backend: backend.clone(),
        };
        write(&self.file(PUBLIC), serde_json::to_string_pretty(&public)?)?;
        write(&self.file(SECRET), serde_json::to_string_pretty(&secret)?)?;
        write(&self.file(LABELS), "")?;
        Ok(public)
    }

    pub fn public(&self) -> Result<PublicInfo> {
        let bytes = read(&self.file(PUBLIC))?;
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", self.file(PUBLIC).display()))
    }

    /// The cloud's view: evaluation keys only.
    pub fn evaluator(&self) -> Result<(PublicInfo, Arc<dyn Evaluator>)> {
        let public = self.public()?;
        let ev: Arc<dyn Evaluator> = if public.backend.is_mock() {
            match public.backend.backend(&[], false, &mut rand::thread_rng())? {
                Backend::Mock(m) => m,
                Backend::Bfv { .. } => unreachable!(),
            }
        } else {
            let (pk, rlk, gk) = eval_keys_from_bytes(&read(&self.file(EVAL_KEYS))?)?;
            Arc::new(BfvEvaluator::new(pk, rlk, gk))
        };
        Ok((public, ev))
    }

    /// The client's view: both key halves and the authenticator secret.
    pub fn secret(&self) -> Result<(PublicInfo, ClientSecret)> {
        let public = self.public()?;
        let handle = if public.backend.is_mock() {
            public.backend.backend(&[], false, &mut rand::thread_rng())?
        } else {
            let (pk, rlk, gk) = eval_keys_from_bytes(&read(&self.file(EVAL_KEYS))?)?;
            let sk = secret_key_from_bytes(&read(&self.file(SECRET_KEY))?)?;
            Backend::Bfv {
                eval: Arc::new(BfvEvaluator::new(pk, rlk, gk)),
                dec: Arc::new(BfvDecryptor::new(sk)),
            }
        };
        let info: SecretInfo = serde_json::from_slice(&read(&self.file(SECRET))?)
            .with_context(|| format!("parsing {}", self.file(SECRET).display()))?;
        let key: [u8; 32] = hex::decode(&info.prf_key)
            .ok()
            .and_then(|k| k.try_into().ok())
            .context("PRF key must be 32 hex-encoded bytes")?;
        let secret = match (public.scheme, info.subset, info.alpha) {
            (Scheme::Rep, Some(subset), _) => {
                let lambda = public.lambda.context("REP keys need lambda")?;
                ClientSecret::Rep(RepSecret::from_parts(PrfKey(key), lambda, &subset, handle)?)
            }
            (Scheme::Pe, _, Some(alpha)) => ClientSecret::Pe(PeSecret::from_parts(PrfKey(key), alpha, handle)?),
            _ => bail!("secret.json does not match the {} scheme", public.scheme),
        };
        Ok((public, secret))
    }

    /// Records `label` as used, refusing one issued before.
    pub fn issue_label(&self, label: &str) -> Result<()> {
        ensure!(!label.is_empty() && !label.contains('\n'), "labels are single non-empty lines");
        let path = self.file(LABELS);
        let mut text = fs::read_to_string(&path).unwrap_or_default();
        ensure!(!text.lines().any(|l| l == label), "label {label} was already issued");
        text.push_str(label);
        text.push('\n');
        write(&path, text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn scratch(name: &str) -> KeyDir {
        KeyDir::new(std::env::temp_dir().join(format!("vhe-keys-{name}-{}", std::process::id())))
    }

    #[test]
    fn default_steps_stay_in_a_row() {
        assert_eq!(default_steps(32, 1), vec![1, -1, 2, -2, 4, -4, 8, -8]);
        assert_eq!(default_steps(64, 8), vec![8, -8, 16, -16]);
    }

    #[test]
    fn mock_round_trip() {
        let dir = scratch("mock");
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        dir.generate(&BackendSpec::mock(64, 65537), Scheme::Rep, 8, &[], &mut rng).unwrap();
        let (public, secret) = dir.secret().unwrap();
        assert_eq!(public.lambda, Some(8));
        assert!(matches!(secret, ClientSecret::Rep(ref s) if s.subset().len() == 4));
        dir.issue_label("a").unwrap();
        assert!(dir.issue_label("a").is_err());
        fs::remove_dir_all(&dir.path).unwrap();
    }

    #[test]
    fn bfv_keys_reload() {
        let dir = scratch("bfv");
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        dir.generate(&BackendSpec::preset("n4096"), Scheme::Pe, 8, &[], &mut rng).unwrap();
        let (_, ev) = dir.evaluator().unwrap();
        let (_, secret) = dir.secret().unwrap();
        let ClientSecret::Pe(sk) = secret else { panic!("expected PE") };
        let m = vhe_bfv::SlotVector((0..4096).map(|i| i % 100).collect());
        let c = ev.encrypt(&m, &mut rng).unwrap();
        let r = ev.rotate(&c, -4).unwrap();
        let out = sk.backend().decryptor().decrypt(&r).unwrap();
        assert_eq!(out.0[4], m.0[0]);
        fs::remove_dir_all(&dir.path).unwrap();
    }
}
