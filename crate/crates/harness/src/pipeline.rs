//! End-to-end runs: the client authenticates, the cloud evaluates, and the
//! client verifies, with per-stage timings and ciphertext accounting.

use std::fmt;
use std::net::TcpListener;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use vhe_bfv::{Ciphertext, SlotVector};
use vhe_core::circuit::{eval_he, LabeledProgram};
use vhe_core::pe::{degree_profile, pe_auth, PeAuth, PeSecret, DEFAULT_MAX_DEGREE};
use vhe_core::protocols::transport::REQ_HIGH_TERMS;
use vhe_core::protocols::{
    client_session, cloud_session, Channel, Frame, MemChannel, Recorded, SessionOptions, Side,
    TcpChannel, Transcript,
};
use vhe_core::rep::{rep_auth, rep_eval, rep_open, RepSecret};
use vhe_core::{AuthError, Verdict};

use crate::setup::{pp_steps, BackendSpec};
use crate::usecase::{build, Instance, UseCaseSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AuthKind {
    None,
    Rep,
    Pe,
}

/// Authenticator plus the interactive options that apply to PE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mode {
    pub auth: AuthKind,
    pub pp: bool,
    pub req: bool,
}

impl Mode {
    pub const NONE: Mode = Mode::new(AuthKind::None, false, false);
    pub const REP: Mode = Mode::new(AuthKind::Rep, false, false);
    pub const PE: Mode = Mode::new(AuthKind::Pe, false, false);
    pub const PE_PP: Mode = Mode::new(AuthKind::Pe, true, false);
    pub const PE_REQ: Mode = Mode::new(AuthKind::Pe, false, true);

    pub const fn new(auth: AuthKind, pp: bool, req: bool) -> Self {
        Mode { auth, pp, req }
    }

    pub fn session_options(&self) -> SessionOptions {
        SessionOptions::new(self.req, self.pp)
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            self.auth == AuthKind::Pe || !(self.pp || self.req),
            "--pp and --req apply to PE only"
        );
        Ok(())
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.auth {
            AuthKind::None => "none",
            AuthKind::Rep => "rep",
            AuthKind::Pe => "pe",
        })?;
        if self.pp {
            f.write_str("+pp")?;
        }
        if self.req {
            f.write_str("+req")?;
        }
        Ok(())
    }
}

impl FromStr for Mode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('+');
        let auth = match parts.next() {
            Some("none") => AuthKind::None,
            Some("rep") => AuthKind::Rep,
            Some("pe") => AuthKind::Pe,
            _ => bail!("unknown authenticator in {s:?}"),
        };
        let mut mode = Mode::new(auth, false, false);
        for p in parts {
            match p {
                "pp" => mode.pp = true,
                "req" => mode.req = true,
                _ => bail!("unknown option {p:?} in {s:?}"),
            }
        }
        mode.validate()?;
        Ok(mode)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Transport {
    #[default]
    Mem,
    /// Loopback TCP on the given address (`port` 0 picks a free port).
    Tcp(String),
}

impl FromStr for Transport {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "mem" {
            return Ok(Transport::Mem);
        }
        match s.strip_prefix("tcp://") {
            Some(addr) if !addr.is_empty() => Ok(Transport::Tcp(addr.to_string())),
            _ => bail!("transport must be mem or tcp://host:port"),
        }
    }
}

/// Which way a frame is moving, seen from the cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToClient,
    ToCloud,
}

/// Cloud-side frame rewriter used to model a deviating prover.
pub type Hook = Box<dyn FnMut(Direction, &mut Frame) + Send>;

struct Tampered<C> {
    inner: C,
    hook: Option<Hook>,
}

impl<C: Channel> Channel for Tampered<C> {
    fn send(&mut self, mut f: Frame) -> Result<(), AuthError> {
        if let Some(h) = &mut self.hook {
            h(Direction::ToClient, &mut f);
        }
        self.inner.send(f)
    }

    fn recv(&mut self) -> Result<Frame, AuthError> {
        let mut f = self.inner.recv()?;
        if let Some(h) = &mut self.hook {
            h(Direction::ToCloud, &mut f);
        }
        Ok(f)
    }
}

/// Accumulates time spent blocked on the peer.
struct Timed<C> {
    inner: C,
    waiting: Duration,
}

impl<C: Channel> Channel for Timed<C> {
    fn send(&mut self, f: Frame) -> Result<(), AuthError> {
        self.inner.send(f)
    }

    fn recv(&mut self) -> Result<Frame, AuthError> {
        let start = Instant::now();
        let f = self.inner.recv();
        self.waiting += start.elapsed();
        f
    }
}

/// Outcome of one PE session.
pub struct SessionRun {
    pub value: Option<SlotVector>,
    pub verdict: Verdict,
    pub transcript: Transcript,
    pub result_degree: Option<usize>,
    pub cloud_error: Option<String>,
    /// Cloud compute time, excluding waits on the client.
    pub eval: Duration,
    /// Client compute time, excluding waits on the cloud.
    pub verify: Duration,
}

impl SessionRun {
    pub fn rounds(&self) -> usize {
        self.transcript
            .frames_to(Side::Client)
            .filter(|f| f.tag == REQ_HIGH_TERMS)
            .count()
    }
}

fn connect(transport: &Transport) -> Result<(Box<dyn Channel>, Box<dyn Channel>)> {
    Ok(match transport {
        Transport::Mem => {
            let (a, b) = MemChannel::pair();
            (Box::new(a), Box::new(b))
        }
        Transport::Tcp(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            let local = listener.local_addr()?;
            let client = TcpChannel::connect(local)?;
            let cloud = TcpChannel::accept(&listener)?;
            (Box::new(client), Box::new(cloud))
        }
    })
}

/// Runs the client and cloud halves of a PE session on two threads.
/// `cloud_prog` lets a test make the cloud evaluate a different program.
#[allow(clippy::too_many_arguments)]
pub fn run_pe_session(
    prog: &LabeledProgram,
    cloud_prog: Option<&LabeledProgram>,
    auths: &[PeAuth],
    sk: &PeSecret,
    opts: SessionOptions,
    client_seed: u64,
    cloud_seed: u64,
    transport: &Transport,
    hook: Option<Hook>,
) -> Result<SessionRun> {
    let log = Arc::new(Mutex::new(Transcript::default()));
    let (a, b) = connect(transport)?;
    let mut client_end = Timed {
        inner: Recorded::new(a, Side::Client, log.clone()),
        waiting: Duration::ZERO,
    };
    let mut cloud_end = Timed {
        inner: Tampered {
            inner: Recorded::new(b, Side::Cloud, log.clone()),
            hook,
        },
        waiting: Duration::ZERO,
    };
    let cloud_prog = cloud_prog.unwrap_or(prog);
    let ev = sk.backend().evaluator();
    let (client, cloud, cloud_time) = std::thread::scope(|s| {
        let cloud = s.spawn(|| {
            let start = Instant::now();
            let mut rng = ChaCha20Rng::seed_from_u64(cloud_seed);
            let r = cloud_session(cloud_prog, auths, ev, opts, &mut cloud_end, &mut rng);
            // dropping the channel unblocks a client still waiting on us
            let elapsed = start.elapsed().saturating_sub(cloud_end.waiting);
            drop(cloud_end);
            (r, elapsed)
        });
        let start = Instant::now();
        let mut rng = ChaCha20Rng::seed_from_u64(client_seed);
        let client = client_session(prog, sk, opts, &mut client_end, &mut rng);
        let client_time = start.elapsed().saturating_sub(client_end.waiting);
        drop(client_end);
        let (cloud, cloud_time) = cloud.join().expect("cloud thread panicked");
        ((client, client_time), cloud, cloud_time)
    });
    let ((client, verify), cloud) = (client, cloud);
    let cloud_error = cloud.as_ref().err().map(|e| e.to_string());
    let (value, verdict) = match client {
        Ok(r) => r,
        Err(e) => match &cloud_error {
            Some(c) => bail!("session failed: cloud: {c}; client: {e}"),
            None => return Err(e.into()),
        },
    };
    let transcript = log.lock().expect("transcript lock").clone();
    Ok(SessionRun {
        value,
        verdict,
        transcript,
        result_degree: cloud.ok().map(|a| a.degree()),
        cloud_error,
        eval: cloud_time,
        verify,
    })
}

/// Settings for one use-case run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub backend: BackendSpec,
    pub lambda: usize,
    pub mode: Mode,
    pub seed: u64,
    pub transport: Transport,
}

impl RunConfig {
    pub fn new(backend: BackendSpec, mode: Mode) -> Self {
        RunConfig {
            backend,
            lambda: 8,
            mode,
            seed: 0,
            transport: Transport::Mem,
        }
    }
}

/// One row of a use-case report. Times are milliseconds; ciphertext
/// counts are for party 0, the client that receives the result.
#[derive(Debug, Clone, Serialize)]
pub struct UseCaseReport {
    pub usecase: String,
    pub scale: usize,
    pub mode: String,
    pub backend: String,
    pub lambda: Option<usize>,
    pub width: usize,
    pub depth: u32,
    pub accepted: Option<bool>,
    pub matches_oracle: bool,
    pub outcome: String,
    pub create_ms: f64,
    pub eval_ms: f64,
    pub verify_ms: f64,
    pub sent: usize,
    pub received: usize,
    pub result_degree: Option<usize>,
    pub req_rounds: usize,
    pub create_ratio: Option<f64>,
    pub eval_ratio: Option<f64>,
    pub verify_ratio: Option<f64>,
    pub sent_ratio: Option<f64>,
    pub received_ratio: Option<f64>,
}

impl UseCaseReport {
    /// Fills the ratio columns against a baseline row.
    pub fn relative_to(&mut self, base: &UseCaseReport) {
        let r = |a: f64, b: f64| (b > 0.0).then(|| a / b);
        self.create_ratio = r(self.create_ms, base.create_ms);
        self.eval_ratio = r(self.eval_ms, base.eval_ms);
        self.verify_ratio = r(self.verify_ms, base.verify_ms);
        self.sent_ratio = r(self.sent as f64, base.sent as f64);
        self.received_ratio = r(self.received as f64, base.received as f64);
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn block(prog: &LabeledProgram, v: &SlotVector) -> SlotVector {
    let b = prog.output_block;
    SlotVector(v.0[b.start..b.start + b.len].to_vec())
}

/// Noise the polynomial-protocol response costs, in levels: two full-norm
/// plaintext products and a slot sum.
const PP_LEVELS: u32 = 2;

/// Rejects parameter and depth mismatches before any key is generated.
pub fn preflight(inst: &Instance, backend: &BackendSpec, mode: Mode) -> Result<()> {
    mode.validate()?;
    let c = &inst.prog.circuit;
    let depth = c.depth();
    let capacity = backend.depth_capacity()?;
    ensure!(
        depth <= capacity,
        "circuit depth {depth} exceeds the {capacity} levels {backend} supports"
    );
    if mode.pp && !backend.is_mock() {
        ensure!(
            depth + PP_LEVELS <= capacity,
            "the polynomial protocol needs {PP_LEVELS} levels beyond circuit depth {depth}; {backend} supports {capacity}"
        );
    }
    if mode.auth == AuthKind::Pe {
        let (degrees, _) = degree_profile(c, mode.req);
        let max = degrees.iter().flatten().max().copied().unwrap_or(1);
        ensure!(
            max <= DEFAULT_MAX_DEGREE,
            "encoding degree {max} exceeds {DEFAULT_MAX_DEGREE}; enable --req"
        );
        let d = degrees[c.output()].expect("output is live");
        let n = backend.slot_count()?;
        ensure!(
            !mode.pp || d + 2 <= n / 2,
            "the polynomial protocol needs degree + 2 <= {} slots",
            n / 2
        );
    }
    Ok(())
}

/// Galois steps and row-swap flag for running `prog` under `mode`.
pub fn key_requirements(prog: &LabeledProgram, mode: Mode, lambda: usize, n: usize) -> (Vec<i64>, bool) {
    let stride = if mode.auth == AuthKind::Rep { lambda } else { 1 };
    let mut steps = prog.circuit.rotation_steps(stride);
    if mode.pp {
        steps.extend(pp_steps(n));
    }
    (steps.into_iter().collect(), prog.circuit.needs_row_swap() || mode.pp)
}

/// Runs a use case end to end under `cfg`.
pub fn run_usecase(spec: &UseCaseSpec, cfg: &RunConfig) -> Result<UseCaseReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let n = cfg.backend.slot_count()?;
    let t = cfg.backend.plain_modulus()?;
    let width = match cfg.mode.auth {
        AuthKind::Rep => spec.kind.rep_width(spec.scale, n, cfg.lambda).ok_or_else(|| {
            anyhow!(
                "{} at scale {} does not fit one ciphertext of {n} slots at lambda {}",
                spec.kind,
                spec.scale,
                cfg.lambda
            )
        })?,
        _ => n,
    };
    let inst = build(spec.kind, spec.scale, width, &t, spec.kind.name(), &mut rng)?;
    run_instance(&inst, cfg, &mut rng)
}

/// Runs a prepared instance; `rng` drives keys and encryption.
pub fn run_instance(inst: &Instance, cfg: &RunConfig, rng: &mut ChaCha20Rng) -> Result<UseCaseReport> {
    preflight(inst, &cfg.backend, cfg.mode)?;
    let prog = &inst.prog;
    let n = cfg.backend.slot_count()?;
    let (steps, row_swap) = key_requirements(prog, cfg.mode, cfg.lambda, n);

    let start = Instant::now();
    let backend = cfg.backend.backend(&steps, row_swap, rng)?;
    let client_inputs: Vec<usize> = inst.owned_by(0).collect();
    let mut report = UseCaseReport {
        usecase: inst.kind.map_or("custom".into(), |k| k.to_string()),
        scale: inst.scale,
        mode: cfg.mode.to_string(),
        backend: cfg.backend.to_string(),
        lambda: (cfg.mode.auth == AuthKind::Rep).then_some(cfg.lambda),
        width: prog.circuit.slots,
        depth: prog.circuit.depth(),
        accepted: None,
        matches_oracle: false,
        outcome: String::new(),
        create_ms: 0.0,
        eval_ms: 0.0,
        verify_ms: 0.0,
        sent: 0,
        received: 0,
        result_degree: None,
        req_rounds: 0,
        create_ratio: None,
        eval_ratio: None,
        verify_ratio: None,
        sent_ratio: None,
        received_ratio: None,
    };
    let value = match cfg.mode.auth {
        AuthKind::None => {
            let ev = backend.evaluator();
            let cts: Vec<Ciphertext> = inst
                .inputs
                .iter()
                .map(|m| ev.encrypt(m, rng))
                .collect::<Result<_, _>>()?;
            report.create_ms = ms(start.elapsed());
            let t0 = Instant::now();
            let out = eval_he(&prog.circuit, &cts, ev)?;
            report.eval_ms = ms(t0.elapsed());
            let t0 = Instant::now();
            let v = backend.decryptor().decrypt(&out)?;
            report.verify_ms = ms(t0.elapsed());
            report.sent = client_inputs.len();
            report.received = 1;
            Some(block(prog, &v))
        }
        AuthKind::Rep => {
            let sk = RepSecret::keygen(cfg.lambda, backend, rng)?;
            let auths = inst
                .inputs
                .iter()
                .zip(&prog.inputs)
                .map(|(m, l)| rep_auth(m, l, &sk, rng))
                .collect::<Result<Vec<_>, _>>()?;
            report.create_ms = ms(start.elapsed());
            let t0 = Instant::now();
            let out = rep_eval(prog, &auths, sk.backend().evaluator())?;
            report.eval_ms = ms(t0.elapsed());
            let t0 = Instant::now();
            let (v, verdict) = rep_open(prog, &out, &sk);
            report.verify_ms = ms(t0.elapsed());
            report.accepted = Some(verdict.is_accept());
            report.sent = client_inputs.iter().map(|&i| auths[i].cts.len()).sum();
            report.received = out.cts.len();
            v
        }
        AuthKind::Pe => {
            let sk = PeSecret::keygen(backend, rng)?;
            let auths = authenticate_pe(inst, &sk, rng)?;
            report.create_ms = ms(start.elapsed());
            let run = run_pe_session(
                prog,
                None,
                &auths,
                &sk,
                cfg.mode.session_options(),
                rng.next_u64(),
                rng.next_u64(),
                &cfg.transport,
                None,
            )?;
            if let Some(e) = &run.cloud_error {
                bail!("cloud failed: {e}");
            }
            report.eval_ms = ms(run.eval);
            report.verify_ms = ms(run.verify);
            report.accepted = Some(run.verdict.is_accept());
            report.result_degree = run.result_degree;
            report.req_rounds = run.rounds();
            let uploaded: usize = client_inputs.iter().map(|&i| auths[i].cts.len()).sum();
            report.sent = uploaded + run.transcript.ciphertexts_to(Side::Cloud)?;
            report.received = run.transcript.ciphertexts_to(Side::Client)?;
            run.value.map(|v| block(prog, &v))
        }
    };
    if let Some(v) = &value {
        report.matches_oracle = *v == inst.expected;
        report.outcome = inst.describe(v);
    } else {
        report.outcome = "no result".into();
    }
    Ok(report)
}

pub fn authenticate_pe(inst: &Instance, sk: &PeSecret, rng: &mut dyn RngCore) -> Result<Vec<PeAuth>> {
    Ok(inst
        .inputs
        .iter()
        .zip(&inst.prog.inputs)
        .map(|(m, l)| pe_auth(m, l, sk, rng))
        .collect::<Result<_, _>>()?)
}

/// Runs the baseline and then each mode on the same instance and seed,
/// filling the ratio columns.
pub fn compare(spec: &UseCaseSpec, cfg: &RunConfig, modes: &[Mode]) -> Result<Vec<UseCaseReport>> {
    let base = run_usecase(spec, &RunConfig { mode: Mode::NONE, ..cfg.clone() })?;
    let mut rows = vec![base.clone()];
    for &mode in modes.iter().filter(|&&m| m != Mode::NONE) {
        let mut r = run_usecase(spec, &RunConfig { mode, ..cfg.clone() })?;
        r.relative_to(&base);
        rows.push(r);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::usecase::UseCaseKind;

    #[test]
    fn modes_round_trip() {
        for s in ["none", "rep", "pe", "pe+pp", "pe+req", "pe+pp+req"] {
            assert_eq!(s.parse::<Mode>().unwrap().to_string(), s);
        }
        assert!("rep+pp".parse::<Mode>().is_err());
        assert_eq!("tcp://127.0.0.1:0".parse::<Transport>().unwrap(), Transport::Tcp("127.0.0.1:0".into()));
    }

    #[test]
    fn mock_runs_match_the_oracle_in_every_mode() {
        let spec = UseCaseSpec {
            kind: UseCaseKind::RideHailing,
            scale: 8,
            preset: String::new(),
        };
        for mode in [Mode::NONE, Mode::REP, Mode::PE, Mode::PE_PP, Mode::PE_REQ] {
            let cfg = RunConfig::new(BackendSpec::mock(256, 65537), mode);
            let r = run_usecase(&spec, &cfg).unwrap();
            assert!(r.matches_oracle, "{mode}");
            assert_ne!(r.accepted, Some(false), "{mode}");
        }
    }

    #[test]
    fn lookup_without_req_is_refused_before_keygen() {
        let spec = UseCaseSpec {
            kind: UseCaseKind::Lookup,
            scale: 4,
            preset: String::new(),
        };
        let cfg = RunConfig::new(BackendSpec::mock(1024, 65537), Mode::PE);
        let err = run_usecase(&spec, &cfg).unwrap_err().to_string();
        assert!(err.contains("--req"), "{err}");
        let cfg = RunConfig::new(BackendSpec::mock(1024, 65537), Mode::PE_REQ);
        assert!(run_usecase(&spec, &cfg).unwrap().matches_oracle);
    }

    #[test]
    fn tcp_transport_matches_memory() {
        let spec = UseCaseSpec {
            kind: UseCaseKind::DotProduct,
            scale: 16,
            preset: String::new(),
        };
        let mut cfg = RunConfig::new(BackendSpec::mock(64, 65537), Mode::PE_PP);
        let mem = run_usecase(&spec, &cfg).unwrap();
        cfg.transport = Transport::Tcp("127.0.0.1:0".into());
        let tcp = run_usecase(&spec, &cfg).unwrap();
        assert_eq!((mem.accepted, mem.outcome), (tcp.accepted, tcp.outcome));
    }
}
