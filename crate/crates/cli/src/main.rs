//! `slowbasis`: key rates, optimized curves, the intercept-resend attack and
//! Monte Carlo checks of the channel model, written as CSV.
//!
//! Exit status: 0 on success, 2 on a usage error (bad flag, bad config file,
//! unwritable output), 3 when a parameter violates the model's constraints.

mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slowbasis::attacksim::{run_attack, AttackScenario};
use slowbasis::montecarlo::{compare_to_analytic, McConfig};
use slowbasis::optimizer::{
    default_m_candidates, log_grid, optimize_point, optimize_with_m, sweep_curves, CurveSpec,
};
use slowbasis::{key_rate, ParamError, ProtocolParams};

use output::{attack_row, mc_row, rate_row, table, write_atomic};
use settings::{require, Settings};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Invalid(ParamError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Invalid(_) => 3,
        }
    }
}

impl From<ParamError> for CliError {
    fn from(e: ParamError) -> Self {
        CliError::Invalid(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Invalid(e) => write!(f, "{}: {e}", e.field()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "slowbasis",
    version,
    about = "RRDPS key rates with slow basis choice"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Invocation {
    /// JSON file whose keys are flag names; flags override it
    #[arg(long)]
    config: Option<PathBuf>,

    #[command(flatten)]
    settings: Settings,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Key rate at one fully specified operating point
    Keyrate(Invocation),
    /// Optimized key rate along a transmission grid, one curve per M
    Curve(Invocation),
    /// Optimized key rate at one transmission; searches M unless given
    Optimize(Invocation),
    /// Simulate the intercept-resend attack on slow-basis BB84
    Attack(Invocation),
    /// Compare simulated detection statistics with the closed forms
    McValidate(Invocation),
}

type Handler = fn(&Settings) -> Result<String, CliError>;

const PROTOCOL_KEYS: [&str; 6] = ["L", "detector", "e-sys", "d-c", "c-d", "T"];

fn base_params(s: &Settings) -> ProtocolParams {
    let d = ProtocolParams::default();
    ProtocolParams {
        block_len: s.block_len.unwrap_or(d.block_len),
        blocks_per_seq: s.m.unwrap_or(d.blocks_per_seq),
        mu: s.mu.unwrap_or(d.mu),
        nu_th: s.nu_th.unwrap_or(d.nu_th),
        eta: s.eta.unwrap_or(d.eta),
        e_sys: s.e_sys.unwrap_or(d.e_sys),
        dark_count: s.d_c.unwrap_or(d.dark_count),
        init_pulses: s.c_d.unwrap_or(d.init_pulses),
        detector: s.detector.map(Into::into).unwrap_or(d.detector),
        pulse_interval: s.pulse_interval.unwrap_or(d.pulse_interval),
    }
}

fn allowed<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut keys: Vec<&str> = PROTOCOL_KEYS.to_vec();
    keys.push("out");
    keys.extend_from_slice(extra);
    keys
}

fn keyrate(s: &Settings) -> Result<String, CliError> {
    s.restrict("keyrate", &allowed(&["M", "eta", "mu", "nu-th"]))?;
    let p = ProtocolParams {
        blocks_per_seq: require(s.m, "M")?,
        eta: require(s.eta, "eta")?,
        mu: require(s.mu, "mu")?,
        nu_th: require(s.nu_th, "nu-th")?,
        ..base_params(s)
    };
    let r = key_rate(&p)?;
    Ok(table(output::RATE_HEADER, [rate_row(&p, &r)]))
}

fn optimize(s: &Settings) -> Result<String, CliError> {
    s.restrict("optimize", &allowed(&["M", "eta"]))?;
    let eta = require(s.eta, "eta")?;
    let base = base_params(s);
    let best = match s.m {
        Some(m) => optimize_point(&base, eta, m)?,
        None => optimize_with_m(&base, eta, &default_m_candidates())?,
    };
    Ok(table(
        output::RATE_HEADER,
        [rate_row(&best.params, &best.result)],
    ))
}

fn curve(s: &Settings) -> Result<String, CliError> {
    s.restrict(
        "curve",
        &allowed(&["M-list", "eta-min", "eta-max", "points-per-decade"]),
    )?;
    let eta_min = s.eta_min.unwrap_or(1e-7);
    let eta_max = s.eta_max.unwrap_or(1.0);
    let per_decade = s.points_per_decade.unwrap_or(10);
    if !(eta_min > 0.0 && eta_min <= eta_max) {
        return Err(ParamError::invalid(
            "eta-min",
            format!("need 0 < eta-min <= eta-max, got {eta_min} and {eta_max}"),
        )
        .into());
    }
    if per_decade == 0 {
        return Err(ParamError::invalid("points-per-decade", "must be positive").into());
    }
    let spec = CurveSpec {
        eta_grid: log_grid(eta_min, eta_max, per_decade),
        m_values: require(s.m_list.clone(), "M-list")?,
        base: base_params(s),
    };
    let rows = sweep_curves(&spec)?
        .iter()
        .map(|o| rate_row(&o.params, &o.result))
        .collect::<Vec<_>>();
    Ok(table(output::RATE_HEADER, rows))
}

fn attack(s: &Settings) -> Result<String, CliError> {
    s.restrict(
        "attack",
        &[
            "p-z",
            "M",
            "n-sequences",
            "n-measured",
            "n-clean",
            "eta-nominal",
            "trials",
            "seed",
            "out",
        ],
    )?;
    let d = AttackScenario::default();
    let scenario = AttackScenario {
        p_z: s.p_z.unwrap_or(d.p_z),
        seq_len: s.m.unwrap_or(d.seq_len),
        n_sequences: s.n_sequences.unwrap_or(d.n_sequences),
        n_measured: s.n_measured.unwrap_or(d.n_measured),
        n_clean: s.n_clean.unwrap_or(d.n_clean),
        eta_nominal: s.eta_nominal.unwrap_or(d.eta_nominal),
    };
    let report = run_attack(&scenario, s.trials.unwrap_or(100_000), s.seed.unwrap_or(0))?;
    Ok(table(output::ATTACK_HEADER, [attack_row(&report)]))
}

fn mc_validate(s: &Settings) -> Result<String, CliError> {
    s.restrict(
        "mc-validate",
        &allowed(&["M", "eta", "mu", "nu-th", "trials", "seed", "mode"]),
    )?;
    let cfg = McConfig {
        params: base_params(s),
        trials: s.trials.unwrap_or(1_000_000),
        seed: s.seed.unwrap_or(0),
        mode: s.mode.map(Into::into).unwrap_or_default(),
    };
    let report = compare_to_analytic(&cfg)?;
    Ok(table(output::MC_HEADER, report.rows.iter().map(mc_row)))
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("QKD_THREADS") else {
        return Ok(());
    };
    let n = raw
        .trim()
        .parse::<usize>()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            CliError::Usage(format!("QKD_THREADS: {raw:?} is not a positive integer"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("QKD_THREADS: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let (inv, handler): (&Invocation, Handler) = match &cli.command {
        Command::Keyrate(i) => (i, keyrate),
        Command::Curve(i) => (i, curve),
        Command::Optimize(i) => (i, optimize),
        Command::Attack(i) => (i, attack),
        Command::McValidate(i) => (i, mc_validate),
    };
    let settings = match &inv.config {
        Some(path) => Settings::load(path)?.overlay(&inv.settings),
        None => inv.settings.clone(),
    };
    let csv = handler(&settings)?;
    match &settings.out {
        Some(path) => write_atomic(path, &csv)
            .map_err(|e| CliError::Usage(format!("out: cannot write {}: {e}", path.display()))),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("slowbasis: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
