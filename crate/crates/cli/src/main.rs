//! `frozen-time`: simulate feedback loops and check stability certificates.
//!
//! Exit codes: 0 success or condition holds, 1 input error, 2 divergent
//! simulation, 3 condition does not hold.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use frozen_time::certificates::{
    adaptive_plant_bound, check, compare, propose_time_sequence, psi_for, tolerable_variation_bound,
    CertificateInputs, CertificateReport, ComparisonRow, Variant,
};
use frozen_time::io::fmt_f64;
use frozen_time::simulator::{
    build_example1, build_example2_with, build_random_linear, collect_certificate_inputs, simulate, Example1Params,
    Example2Params, RandomParams, Scenario, SCHEMA_VERSION,
};
use serde::{Deserialize, Serialize};

const THREADS_ENV: &str = "FROZEN_TIME_THREADS";

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] frozen_time::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "frozen-time", version, about = "Frozen-time stability certificates for time-varying feedback loops")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write x, u and gain traces.
    Simulate(CommonArgs),
    /// Evaluate one certificate variant.
    Certify(CommonArgs),
    /// Evaluate several variants next to the worst-case baseline.
    Compare(CompareArgs),
    /// Tolerable N-width variation rate from scalar inputs.
    Bound(BoundArgs),
    /// Write a generated scenario file.
    GenExample(GenArgs),
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Precomputed certificate inputs JSON file (instead of a scenario).
    #[arg(long, conflicts_with = "scenario")]
    inputs: Option<PathBuf>,
    #[arg(long, default_value = "corollary2", value_parser = parse_variant)]
    variant: Variant,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Window width N for the N-width variants.
    #[arg(long, default_value_t = 1)]
    n_width: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Longest window allowed when proposing a time sequence.
    #[arg(long)]
    max_gap: Option<usize>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Variants to compare; the worst-case baseline is always added.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    variants: Option<Vec<Variant>>,
}

#[derive(Args, Debug)]
struct BoundArgs {
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    sigma0: f64,
    #[arg(long)]
    rho: f64,
    /// `sup_t ||l_t||`.
    #[arg(long)]
    sup_l: f64,
    #[arg(long, default_value_t = 1)]
    n_width: usize,
    /// Controller factor norm; adds the plant variation bound.
    #[arg(long)]
    factor_norm: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ExampleKind {
    /// Dead zone over a switched one-step loop with destabilizing episodes.
    Example1,
    /// Persistently varying 2x2 memoryless loop, always stabilizing.
    Example2,
    /// Random linear time-varying loop.
    Random,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_enum)]
    example: ExampleKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    horizon: usize,
    /// Example 1: time of the first destabilizing episode.
    #[arg(long, default_value_t = 40)]
    first_episode: usize,
    /// Example 1: episode period; 0 disables episodes.
    #[arg(long, default_value_t = 60)]
    episode_every: usize,
    #[arg(long, default_value_t = 3)]
    episode_len: usize,
    /// Output file; defaults to `<out-dir>/<example>.json`.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("unknown variant '{s}', expected one of {}", names.join(", "))
    })
}

/// Any output document, tagged with the schema version.
#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    #[serde(default = "schema_version")]
    schema_version: u32,
    #[serde(flatten)]
    body: T,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn versioned<T>(body: T) -> Versioned<T> {
    Versioned {
        schema_version: SCHEMA_VERSION,
        body,
    }
}

fn write_atomic(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(&path).map_err(|e| CliError::Input(format!("{}: {}", path.display(), e.error)))?;
    Ok(path)
}

fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(frozen_time::Error::from)?;
    s.push('\n');
    Ok(s)
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path, args: &CommonArgs) -> CliResult<Scenario> {
    let text = read(path)?;
    let mut s: Scenario =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if let Some(v) = args.sigma {
        s.sigma = v;
    }
    if let Some(v) = args.sigma0 {
        s.sigma0 = v;
    }
    if let Some(v) = args.rho {
        s.rho = v;
    }
    if let Some(v) = args.seed {
        s.seed = v;
    }
    s.validate()?;
    Ok(s)
}

fn load_inputs(args: &CommonArgs) -> CliResult<CertificateInputs> {
    let mut inputs = match (&args.scenario, &args.inputs) {
        (Some(path), _) => collect_certificate_inputs(&load_scenario(path, args)?)?,
        (None, Some(path)) => {
            let text = read(path)?;
            let v: Versioned<CertificateInputs> =
                serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            if v.schema_version != SCHEMA_VERSION {
                return Err(CliError::Input(format!(
                    "{}: unsupported schema_version {}",
                    path.display(),
                    v.schema_version
                )));
            }
            v.body
        }
        (None, None) => return Err(CliError::Input("one of --scenario or --inputs is required".into())),
    };
    if args.inputs.is_some() {
        // the traces were computed at the stored weights
        if args.sigma.is_some() || args.sigma0.is_some() {
            return Err(CliError::Input(
                "--sigma and --sigma0 cannot override precomputed inputs; recompute from a scenario".into(),
            ));
        }
        if let Some(v) = args.rho {
            inputs.rho = v;
        }
    }
    inputs.validate()?;
    Ok(inputs)
}

/// Inputs with a time sequence for `variant`: the given one, else a proposed
/// one, else singleton windows (with a note on why the proposal failed).
fn with_sequence(
    inputs: &CertificateInputs,
    variant: Variant,
    n: usize,
    max_gap: Option<usize>,
) -> CliResult<(CertificateInputs, Option<String>)> {
    if !variant.uses_sequence() || !inputs.time_sequence.is_empty() {
        return Ok((inputs.clone(), None));
    }
    let psi = psi_for(inputs, variant, n)?;
    let gap = max_gap.unwrap_or(inputs.len()).max(1);
    Ok(match propose_time_sequence(&psi, inputs.start_time, inputs.rho, gap) {
        Ok(seq) => (inputs.with_sequence(seq), None),
        Err(e) => (
            inputs.with_sequence(inputs.every_time()),
            Some(format!("{e}; evaluated on singleton windows")),
        ),
    })
}

fn certify_one(inputs: &CertificateInputs, args: &CommonArgs, variant: Variant) -> CliResult<CertificateReport> {
    let (inputs, note) = with_sequence(inputs, variant, args.n_width, args.max_gap)?;
    let mut r = check(&inputs, variant, args.n_width)?;
    r.notes.extend(note);
    Ok(r)
}

fn cmd_simulate(args: &CommonArgs) -> CliResult<ExitCode> {
    let path = args
        .scenario
        .as_ref()
        .ok_or_else(|| CliError::Input("--scenario is required".into()))?;
    let s = load_scenario(path, args)?;
    let r = simulate(&s)?;
    let dir = &args.out_dir;
    write_atomic(dir, "x.csv", &r.x.to_csv())?;
    write_atomic(dir, "u.csv", &r.u.to_csv())?;
    write_atomic(dir, "gain.csv", &r.gain_csv())?;
    let summary = r.summary(&s.name);
    write_atomic(dir, "summary.json", &to_json(&summary)?)?;
    if r.divergent {
        eprintln!("simulation diverged at t = {}", r.diverged_at.unwrap_or_default());
        return Ok(ExitCode::from(2));
    }
    println!(
        "simulated {} steps, max gain {}",
        summary.steps,
        fmt_f64(summary.max_gain)
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_certify(args: &CommonArgs) -> CliResult<ExitCode> {
    let inputs = load_inputs(args)?;
    let r = certify_one(&inputs, args, args.variant)?;
    let dir = &args.out_dir;
    write_atomic(dir, "inputs.json", &to_json(&versioned(&inputs))?)?;
    write_atomic(dir, "report.json", &to_json(&versioned(&r))?)?;
    write_atomic(dir, "margins.csv", &r.margins_csv())?;
    println!(
        "{}: {} (gain bound {}{})",
        r.variant.name(),
        if r.holds { "holds" } else { "does not hold" },
        fmt_f64(r.gain_bound),
        if r.gain_claimed { "" } else { ", not claimed" }
    );
    for note in &r.notes {
        println!("  note: {note}");
    }
    Ok(if r.holds { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

#[derive(Serialize)]
struct Comparison {
    n_width: usize,
    rows: Vec<ComparisonRow>,
}

fn cmd_compare(args: &CompareArgs) -> CliResult<ExitCode> {
    let common = &args.common;
    let inputs = load_inputs(common)?;
    let variants = args
        .variants
        .clone()
        .unwrap_or_else(|| vec![Variant::Theorem1, Variant::Corollary2, Variant::Corollary3Bound]);
    let mut rows = Vec::new();
    for v in variants.iter().copied().filter(|v| *v != Variant::ZamesWang) {
        let (seq_inputs, _) = with_sequence(&inputs, v, common.n_width, common.max_gap)?;
        rows.extend(compare(&seq_inputs, &[v], common.n_width)?.into_iter().filter(|r| r.condition == v));
    }
    rows.extend(compare(&inputs, &[Variant::ZamesWang], common.n_width)?);

    let table = Comparison {
        n_width: common.n_width,
        rows,
    };
    let dir = &common.out_dir;
    write_atomic(dir, "compare.json", &to_json(&versioned(&table))?)?;
    let csv = aligned_csv(&table.rows);
    write_atomic(dir, "compare.csv", &csv)?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

fn aligned_csv(rows: &[ComparisonRow]) -> String {
    let mut cells = vec![vec![
        "condition".to_string(),
        "holds".to_string(),
        "margin".to_string(),
        "gain_bound".to_string(),
    ]];
    for r in rows {
        cells.push(vec![
            r.condition.name().to_string(),
            r.holds.to_string(),
            fmt_f64(r.margin),
            fmt_f64(r.gain_bound),
        ]);
    }
    let widths: Vec<usize> = (0..4).map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in cells {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| if c == 3 { v.clone() } else { format!("{v:<w$}", w = widths[c]) })
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct BoundOutput {
    sigma: f64,
    sigma0: f64,
    rho: f64,
    sup_l: f64,
    n_width: usize,
    d_bar_bar: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    factor_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    plant_bound: Option<f64>,
}

fn cmd_bound(args: &BoundArgs) -> CliResult<ExitCode> {
    let d = tolerable_variation_bound(args.sup_l, args.sigma, args.sigma0, args.rho, args.n_width)?;
    let plant = args
        .factor_norm
        .map(|f| adaptive_plant_bound(f, args.sup_l, args.sigma, args.sigma0, args.rho, args.n_width))
        .transpose()?;
    let out = BoundOutput {
        sigma: args.sigma,
        sigma0: args.sigma0,
        rho: args.rho,
        sup_l: args.sup_l,
        n_width: args.n_width,
        d_bar_bar: d,
        factor_norm: args.factor_norm,
        plant_bound: plant,
    };
    print!("{}", to_json(&versioned(&out))?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(args: &GenArgs) -> CliResult<ExitCode> {
    let (name, s) = match args.example {
        ExampleKind::Example1 => {
            let params = if args.episode_every == 0 {
                Example1Params::without_episodes(args.horizon)
            } else {
                Example1Params::periodic(args.horizon, args.first_episode, args.episode_every, args.episode_len)
            };
            ("example1", build_example1(args.seed, &params)?)
        }
        ExampleKind::Example2 => (
            "example2",
            build_example2_with(
                args.seed,
                &Example2Params {
                    horizon: args.horizon,
                    ..Example2Params::default()
                },
            )?,
        ),
        ExampleKind::Random => (
            "random",
            build_random_linear(
                args.seed,
                &RandomParams {
                    horizon: args.horizon,
                    ..RandomParams::default()
                },
            )?,
        ),
    };
    let text = to_json(&s)?;
    let path = match &args.output {
        Some(p) => {
            let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let file = p
                .file_name()
                .ok_or_else(|| CliError::Input(format!("{}: not a file path", p.display())))?;
            write_atomic(dir, &file.to_string_lossy(), &text)?
        }
        None => write_atomic(&args.out_dir, &format!("{name}.json"), &text)?,
    };
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Input(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Input(e.to_string()))
}

fn run(cli: &Cli) -> CliResult<ExitCode> {
    configure_threads()?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Bound(a) => cmd_bound(a),
        Command::GenExample(a) => cmd_gen(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
