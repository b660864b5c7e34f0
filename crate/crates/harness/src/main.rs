use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use vhe_bfv::SlotVector;
use vhe_core::circuit::LabeledProgram;
use vhe_core::pe::{pe_auth, pe_eval, pe_open, PeAuth, PeEvaluator, DEFAULT_MAX_DEGREE};
use vhe_core::protocols::{client_session, cloud_session, Recorded, Side, TcpChannel, Transcript};
use vhe_core::rep::{rep_auth, rep_eval, rep_open, RepAuth};
use vhe_core::Verdict;
use vhe_harness::adversary::{simulate_adversary, AttackSpec, Strategy, Target};
use vhe_harness::bench::{bench, BenchConfig, BenchOp};
use vhe_harness::keys::{ClientSecret, KeyDir, Scheme};
use vhe_harness::pipeline::{compare, run_usecase, AuthKind, Mode, RunConfig, Transport};
use vhe_harness::report::write_table;
use vhe_harness::setup::BackendSpec;
use vhe_harness::usecase::{build, power_chain, UseCaseKind, UseCaseSpec};

/// Verifiable homomorphic computation: authenticate inputs, evaluate on
/// the cloud, and check results on the client.
#[derive(Parser)]
#[command(name = "vhe", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a key directory.
    Keygen(KeygenArgs),
    /// Authenticate a CSV of integers under a fresh label.
    Auth(AuthArgs),
    /// Evaluate a program on authenticated inputs (cloud side).
    Eval(EvalArgs),
    /// Decrypt and verify a result; exits nonzero on rejection.
    Verify(VerifyArgs),
    /// Simulate a covert cloud and report the acceptance rate.
    Attack(AttackArgs),
    /// Time homomorphic operations per slot.
    Bench(BenchArgs),
    /// Run a use case end to end.
    Usecase(UsecaseArgs),
    /// Cloud half of an interactive PE session over TCP.
    Serve(ServeArgs),
    /// Client half of an interactive PE session over TCP.
    Connect(ConnectArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct KeygenArgs {
    /// Preset (`n4096`, `n16384@t20`, ...) or `mock:<n>:<t>`.
    #[arg(long, default_value = "n4096")]
    params: BackendSpec,
    #[arg(long, value_enum)]
    auth: AuthKind,
    #[arg(long, default_value_t = 8)]
    lambda: usize,
    /// Programs whose rotations the Galois keys must cover.
    #[arg(long)]
    program: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AuthArgs {
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    label: String,
    /// Integers separated by commas or newlines; negatives wrap mod t.
    #[arg(long)]
    input: PathBuf,
    /// Logical width; defaults to the slot count (PE) or one chunk (REP).
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    program: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    program: PathBuf,
    #[arg(long)]
    result: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    /// e.g. `slot-perturb(4)`, `wrong-circuit`, `tamper-pp-response`.
    #[arg(long)]
    strategy: Strategy,
    #[arg(long, value_enum)]
    auth: AuthKind,
    #[arg(long, default_value_t = 8)]
    lambda: usize,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, default_value = "mock:4096:1099511627689")]
    params: BackendSpec,
    /// A use-case name, or `power-chain:<depth>`.
    #[arg(long)]
    usecase: Option<String>,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "n4096-d3")]
    params: String,
    #[arg(long, value_delimiter = ',', default_value = "add,mul-const,rot,relin,mul")]
    ops: Vec<BenchOp>,
    /// REP replication factors.
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    lambda: Vec<usize>,
    /// PE plaintext sizes in bits.
    #[arg(long, value_delimiter = ',', default_value = "16,32")]
    pe_lambda: Vec<usize>,
    #[arg(long, default_value_t = 9)]
    rounds: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct UsecaseArgs {
    #[arg(long)]
    name: UseCaseKind,
    #[arg(long, value_enum, default_value_t = AuthKind::Pe)]
    auth: AuthKind,
    #[arg(long)]
    pp: bool,
    #[arg(long)]
    req: bool,
    /// Defaults to the use case's preset.
    #[arg(long)]
    params: Option<BackendSpec>,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long, default_value_t = 8)]
    lambda: usize,
    /// Also run unauthenticated BFV and report ratios against it.
    #[arg(long)]
    baseline: bool,
    #[arg(long, default_value = "mem")]
    transport: Transport,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SessionFlags {
    #[arg(long)]
    pp: bool,
    #[arg(long)]
    req: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    program: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    #[command(flatten)]
    flags: SessionFlags,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ConnectArgs {
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    program: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
    #[command(flatten)]
    flags: SessionFlags,
    /// Save every frame this client sent, for auditing.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn rng(common: &Common) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(common.seed)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_program(path: &Path) -> Result<LabeledProgram> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(LabeledProgram::from_json(&text)?)
}

fn print_block(prog: &LabeledProgram, v: &SlotVector) {
    let b = prog.output_block;
    let s: Vec<String> = v.0[b.start..b.start + b.len].iter().map(u64::to_string).collect();
    println!("{}", s.join(","));
}

/// Prints the result on acceptance and the cause, locally, on rejection.
fn finish(verdict: Verdict, shown: Option<(&LabeledProgram, &SlotVector)>) -> ExitCode {
    match verdict {
        Verdict::Accept => {
            if let Some((prog, v)) = shown {
                print_block(prog, v);
            }
            ExitCode::SUCCESS
        }
        Verdict::Reject(cause) => {
            eprintln!("rejected: {cause:?}");
            ExitCode::FAILURE
        }
    }
}

fn keygen(a: KeygenArgs) -> Result<ExitCode> {
    let programs = a.program.iter().map(|p| load_program(p)).collect::<Result<Vec<_>>>()?;
    let public = KeyDir::new(&a.out).generate(&a.params, Scheme::try_from(a.auth)?, a.lambda, &programs, &mut rng(&a.common))?;
    eprintln!("{} keys for {} in {}", public.scheme, public.backend, a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn auth(a: AuthArgs) -> Result<ExitCode> {
    let dir = KeyDir::new(&a.keys);
    let (public, secret) = dir.secret()?;
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let n = public.backend.slot_count()?;
    let t = public.backend.plain_modulus()?;
    let values = text
        .split([',', '\n', '\r', ' ', '\t'])
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<i64>().with_context(|| format!("not an integer: {s}")))
        .collect::<Result<Vec<_>>>()?;
    let width = a.width.unwrap_or(match public.lambda {
        Some(l) => n / l,
        None => n,
    });
    ensure!(values.len() <= width, "{} values do not fit width {width}", values.len());
    let mut m = SlotVector::zeros(width);
    for (slot, v) in m.0.iter_mut().zip(values) {
        *slot = t.from_i64(v);
    }
    dir.issue_label(&a.label)?;
    let mut rng = rng(&a.common);
    let bytes = match &secret {
        ClientSecret::Rep(sk) => rep_auth(&m, &a.label, sk, &mut rng)?.to_bytes(&sk.backend().params()),
        ClientSecret::Pe(sk) => pe_auth(&m, &a.label, sk, &mut rng)?.to_bytes(&sk.backend().params()),
    };
    write(&a.out, bytes)?;
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let (public, ev) = KeyDir::new(&a.keys).evaluator()?;
    let prog = load_program(&a.program)?;
    let params = ev.params();
    let bytes = match public.scheme {
        Scheme::Rep => {
            let auths = a
                .inputs
                .iter()
                .map(|p| Ok(RepAuth::from_bytes(&read(p)?, &params)?))
                .collect::<Result<Vec<_>>>()?;
            rep_eval(&prog, &auths, ev.as_ref())?.to_bytes(&params)
        }
        Scheme::Pe => {
            let auths = a
                .inputs
                .iter()
                .map(|p| Ok(PeAuth::from_bytes(&read(p)?, &params)?))
                .collect::<Result<Vec<_>>>()?;
            let mut pad = rng(&a.common);
            let cx = PeEvaluator {
                ev: ev.as_ref(),
                max_degree: DEFAULT_MAX_DEGREE,
                rng: &mut pad,
            };
            pe_eval(&prog, &auths, cx, None)?.to_bytes(&params)
        }
    };
    write(&a.out, bytes)?;
    Ok(ExitCode::SUCCESS)
}

fn verify(a: VerifyArgs) -> Result<ExitCode> {
    let (_, secret) = KeyDir::new(&a.keys).secret()?;
    let prog = load_program(&a.program)?;
    let bytes = read(&a.result)?;
    Ok(match secret {
        ClientSecret::Rep(sk) => {
            let auth = RepAuth::from_bytes(&bytes, &sk.backend().params())?;
            let (value, verdict) = rep_open(&prog, &auth, &sk);
            // the REP decoder already returns the output block
            let shown = value.map(|v| {
                let mut full = SlotVector::zeros(prog.circuit.slots);
                let b = prog.output_block;
                full.0[b.start..b.start + b.len].copy_from_slice(&v.0[..b.len]);
                full
            });
            finish(verdict, shown.as_ref().map(|v| (&prog, v)))
        }
        ClientSecret::Pe(sk) => {
            let auth = PeAuth::from_bytes(&bytes, &sk.backend().params())?;
            let (value, verdict) = pe_open(&prog, &auth, &sk, None);
            finish(verdict, value.as_ref().map(|v| (&prog, v)))
        }
    })
}

fn attack(a: AttackArgs) -> Result<ExitCode> {
    let target = match a.auth {
        AuthKind::Rep => Target::Rep { lambda: a.lambda },
        AuthKind::Pe => Target::Pe,
        AuthKind::None => bail!("attacks need --auth rep or pe"),
    };
    let n = a.params.slot_count()?;
    let t = a.params.plain_modulus()?;
    let mut rng = rng(&a.common);
    let which = a.usecase.clone().unwrap_or_else(|| match target {
        Target::Rep { .. } => "ride-hailing".into(),
        Target::Pe => "power-chain:3".into(),
    });
    let inst = if let Some(depth) = which.strip_prefix("power-chain:") {
        power_chain(depth.parse().context("power-chain depth")?, n, &t, "attack", &mut rng)
    } else {
        let kind: UseCaseKind = which.parse()?;
        let scale = a.scale.unwrap_or(kind.default_scale());
        let width = match target {
            Target::Rep { lambda } => kind
                .rep_width(scale, n, lambda)
                .with_context(|| format!("{kind} does not fit REP at lambda {lambda} on {n} slots"))?,
            Target::Pe => n,
        };
        build(kind, scale, width, &t, "attack", &mut rng)?
    };
    let spec = AttackSpec {
        strategy: a.strategy,
        trials: a.trials,
        seed: a.common.seed,
    };
    let stats = simulate_adversary(&spec, target, &inst, &a.params)?;
    println!(
        "{} vs {} on {}: {}/{} accepted, rate {:.3e}, {:.0}% interval [{:.3e}, {:.3e}], analytic {:.3e}, {:.1}s",
        stats.strategy,
        stats.target,
        stats.backend,
        stats.accepts,
        stats.trials,
        stats.rate,
        stats.confidence * 100.0,
        stats.ci_low,
        stats.ci_high,
        stats.bound,
        stats.seconds
    );
    if let Some(out) = &a.out {
        write_table(out, "attack", std::slice::from_ref(&stats))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_bench(a: BenchArgs) -> Result<ExitCode> {
    let cfg = BenchConfig {
        ops: a.ops,
        rep_lambdas: a.lambda,
        pe_lambdas: a.pe_lambda,
        rounds: a.rounds,
        seed: a.common.seed,
        ..BenchConfig::new(&a.params)
    };
    let report = bench(&cfg)?;
    println!("{:<6}{:>8}{:>11}{:>8}{:>14}{:>14}{:>10}", "scheme", "lambda", "op", "degree", "op us", "ns/slot", "vs bfv");
    let dash = |v: Option<String>| v.unwrap_or_else(|| "-".into());
    for r in &report.rows {
        println!(
            "{:<6}{:>8}{:>11}{:>8}{:>14.1}{:>14.2}{:>10}",
            r.scheme,
            dash(r.lambda.map(|l| l.to_string())),
            r.op.to_string(),
            dash(r.degree.map(|d| d.to_string())),
            r.op_us,
            r.per_slot_ns,
            dash(r.vs_bfv.map(|x| format!("{x:.2}")))
        );
    }
    if let Some(out) = &a.out {
        write_table(out, "bench", &report.rows)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn usecase(a: UsecaseArgs) -> Result<ExitCode> {
    let mut spec = UseCaseSpec::new(a.name);
    if let Some(s) = a.scale {
        spec.scale = s;
    }
    let backend = a.params.unwrap_or_else(|| BackendSpec::preset(&spec.preset));
    let mode = Mode::new(a.auth, a.pp, a.req);
    let cfg = RunConfig {
        lambda: a.lambda,
        seed: a.common.seed,
        transport: a.transport,
        ..RunConfig::new(backend, mode)
    };
    let rows = if a.baseline {
        compare(&spec, &cfg, &[mode])?
    } else {
        vec![run_usecase(&spec, &cfg)?]
    };
    for r in &rows {
        let verdict = match r.accepted {
            Some(true) => "accept",
            Some(false) => "reject",
            None => "unverified",
        };
        println!(
            "{} {} on {}: {verdict}, oracle {}, create {:.1} ms, eval {:.1} ms, verify {:.1} ms, sent {}, received {}: {}",
            r.usecase,
            r.mode,
            r.backend,
            if r.matches_oracle { "match" } else { "MISMATCH" },
            r.create_ms,
            r.eval_ms,
            r.verify_ms,
            r.sent,
            r.received,
            r.outcome
        );
    }
    if let Some(out) = &a.out {
        write_table(out, "usecase", &rows)?;
    }
    let ok = rows.iter().all(|r| r.matches_oracle && r.accepted != Some(false));
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn pe_only(scheme: Scheme) -> Result<()> {
    ensure!(scheme == Scheme::Pe, "interactive sessions need PE keys");
    Ok(())
}

fn serve(a: ServeArgs) -> Result<ExitCode> {
    let (public, ev) = KeyDir::new(&a.keys).evaluator()?;
    pe_only(public.scheme)?;
    let prog = load_program(&a.program)?;
    let params = ev.params();
    let auths = a
        .inputs
        .iter()
        .map(|p| Ok(PeAuth::from_bytes(&read(p)?, &params)?))
        .collect::<Result<Vec<_>>>()?;
    let listener = TcpListener::bind(&a.listen).with_context(|| format!("binding {}", a.listen))?;
    eprintln!("listening on {}", listener.local_addr()?);
    let mut chan = TcpChannel::accept(&listener)?;
    let opts = Mode::new(AuthKind::Pe, a.flags.pp, a.flags.req).session_options();
    cloud_session(&prog, &auths, ev.as_ref(), opts, &mut chan, &mut rng(&a.common))?;
    Ok(ExitCode::SUCCESS)
}

fn connect(a: ConnectArgs) -> Result<ExitCode> {
    let (public, secret) = KeyDir::new(&a.keys).secret()?;
    pe_only(public.scheme)?;
    let ClientSecret::Pe(sk) = secret else { unreachable!() };
    let prog = load_program(&a.program)?;
    let log = std::sync::Arc::new(std::sync::Mutex::new(Transcript::default()));
    let mut chan = Recorded::new(TcpChannel::connect(&a.addr)?, Side::Client, log.clone());
    let opts = Mode::new(AuthKind::Pe, a.flags.pp, a.flags.req).session_options();
    let (value, verdict) = client_session(&prog, &sk, opts, &mut chan, &mut rng(&a.common))?;
    drop(chan);
    if let Some(path) = &a.transcript {
        log.lock().expect("transcript lock").save(path)?;
    }
    Ok(finish(verdict, value.as_ref().map(|v| (&prog, v))))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Keygen(a) => keygen(a),
        Cmd::Auth(a) => auth(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Verify(a) => verify(a),
        Cmd::Attack(a) => attack(a),
        Cmd::Bench(a) => run_bench(a),
        Cmd::Usecase(a) => usecase(a),
        Cmd::Serve(a) => serve(a),
        Cmd::Connect(a) => connect(a),
    };
    res.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
