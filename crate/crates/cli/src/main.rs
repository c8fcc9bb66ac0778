use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use thiserror::Error;

use percheck::chain::{build_markov_chain, validate_stochastic, MarkovChain};
use percheck::confusion::{cm1, from_precision_recall, ClassSizes, ConfusionMatrix, SCENARIO_LABELS};
use percheck::engine::{check, simulate, EngineConfig, EngineError, EngineKind};
use percheck::io::{
    dot_string, format_sig, initial_index, load_confusion, prism_string, read_explicit, write_explicit, ConfigError,
    FormatError, ScenarioFile,
};
use percheck::logic::{parse, resolve_formula, Formula, LogicError};
use percheck::scenario::{make_controller, verify_controller, ScenarioParams, StopSemantics};
use percheck::sweep::{render_outputs, run_sweep, SweepSpec};

#[derive(Parser)]
#[command(name = "percheck", version, about = "Satisfaction probabilities for perception-in-the-loop controllers")]
struct Cli {
    /// Convergence threshold for the iterative engine.
    #[arg(long, global = true, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, global = true, value_enum, default_value_t = Engine::Linear)]
    engine: Engine,
    /// Overrides the stop semantics of scenario and sweep files.
    #[arg(long, global = true, value_enum)]
    semantics: Option<Semantics>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Engine {
    Linear,
    Iterate,
    Enumerate,
    Simulate,
}

impl From<Engine> for EngineKind {
    fn from(e: Engine) -> Self {
        match e {
            Engine::Linear => EngineKind::Linear,
            Engine::Iterate => EngineKind::Iterate,
            Engine::Enumerate => EngineKind::Enumerate,
            Engine::Simulate => EngineKind::Simulate,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Semantics {
    Absorb,
    Restart,
}

impl From<Semantics> for StopSemantics {
    fn from(s: Semantics) -> Self {
        match s {
            Semantics::Absorb => StopSemantics::Absorb,
            Semantics::Restart => StopSemantics::Restart,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Explicit,
    Prism,
    Dot,
}

#[derive(Args)]
struct Perception {
    /// `cm1`, `identity` or a confusion-matrix JSON file.
    #[arg(long, conflicts_with = "pr")]
    cm: Option<String>,
    /// Synthesize CM(p, r) from precision and recall, e.g. `0.8,0.8`.
    #[arg(long, value_parser = parse_pair)]
    pr: Option<(f64, f64)>,
}

#[derive(Subcommand)]
enum Command {
    /// Probability that a scenario satisfies a formula.
    Check {
        scenario: PathBuf,
        #[command(flatten)]
        perception: Perception,
        /// A formula, or `phi1`/`phi2`/`phi3`.
        #[arg(long)]
        formula: String,
        /// Step cap for enumeration and simulation.
        #[arg(long)]
        horizon: Option<u32>,
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
    },
    /// Evaluate a grid of scenarios and write CSV.
    Sweep {
        #[arg(required_unless_present = "preset")]
        spec: Option<PathBuf>,
        #[arg(long, value_parser = ["fig3", "fig4"], conflicts_with = "spec")]
        preset: Option<String>,
        /// Output path, overriding the spec.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record per-point wall time.
        #[arg(long)]
        timing: bool,
    },
    /// Write the scenario's Markov chain to disk.
    Export {
        scenario: PathBuf,
        #[command(flatten)]
        perception: Perception,
        #[arg(long, value_enum, default_value_t = Format::Explicit)]
        format: Format,
        /// File prefix; extensions are appended.
        #[arg(long)]
        out: PathBuf,
    },
    /// Read an explicit `.tra`/`.lab`/`.sta` triple and optionally check it.
    Import {
        prefix: PathBuf,
        #[arg(long)]
        formula: Option<String>,
    },
    /// Precision and recall of one class.
    Metrics {
        #[arg(long)]
        cm: String,
        #[arg(long)]
        class: String,
        /// Class sizes |D_j| in label order, e.g. `100,100,100`.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<f64>>,
    },
    /// Monte Carlo estimate with a 95% confidence interval.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        perception: Perception,
        #[arg(long)]
        formula: String,
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        #[arg(long)]
        horizon: Option<u32>,
    },
    /// Check φ1, φ2 and φ3 under perfect perception from every initial speed.
    VerifyController { scenario: PathBuf },
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (p, r) = s.split_once(',').ok_or("expected `p,r`")?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    Ok((num(p)?, num(r)?))
}

#[derive(Debug, Error)]
enum CliError {
    #[error("formula: {0}")]
    Parse(LogicError),
    #[error("config: {0}")]
    Config(String),
    #[error("engine: {0}")]
    Engine(EngineError),
    #[error("io: {0}")]
    Io(String),
    #[error("verify-controller: {0} violation(s)")]
    Verification(usize),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Config(_) => 3,
            CliError::Engine(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Format(f) => f.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Logic(l @ LogicError::Parse { .. }) => CliError::Parse(l),
            EngineError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Engine(other),
        }
    }
}

fn config(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn formula(text: &str, params: Option<&ScenarioParams>) -> Result<Formula, CliError> {
    let f = match params {
        Some(p) => resolve_formula(text, p),
        None => parse(text),
    };
    f.map_err(CliError::Parse)
}

fn matrix(p: &Perception) -> Result<ConfusionMatrix, CliError> {
    if let Some((pp, r)) = p.pr {
        return from_precision_recall(pp, r).map_err(config);
    }
    Ok(match p.cm.as_deref() {
        None | Some("cm1") => cm1(),
        Some("identity") => ConfusionMatrix::identity(&SCENARIO_LABELS),
        Some(path) => load_confusion(Path::new(path))?,
    })
}

struct Loaded {
    params: ScenarioParams,
    chain: MarkovChain,
}

fn load(cli: &Cli, scenario: &Path, perception: &Perception) -> Result<Loaded, CliError> {
    let file = ScenarioFile::load(scenario)?;
    let params = file.params(cli.semantics.map(Into::into)).map_err(config)?;
    let cm = matrix(perception)?;
    let chain =
        build_markov_chain(&params, &make_controller(&params), &cm, file.env, file.init()).map_err(config)?;
    Ok(Loaded { params, chain })
}

fn engine_config(cli: &Cli, samples: u64, horizon: Option<u32>) -> EngineConfig {
    EngineConfig {
        engine: cli.engine.into(),
        tolerance: cli.tol,
        samples,
        seed: cli.seed,
        horizon,
        ..EngineConfig::default()
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Check {
            scenario,
            perception,
            formula: text,
            horizon,
            samples,
        } => {
            let Loaded { params, chain } = load(cli, scenario, perception)?;
            let f = formula(text, Some(&params))?;
            let cfg = engine_config(cli, *samples, *horizon);
            let r = check(&chain, &f, 0, &cfg)?;
            println!("{:.9}", r.probability);
            println!(
                "{}",
                json!({
                    "probability": r.probability,
                    "engine": r.engine.to_string(),
                    "residual": r.residual,
                    "iterations": r.iterations,
                    "bounded": r.bounded,
                    "chain_states": chain.len(),
                    "formula": f.to_string(),
                })
            );
        }
        Command::Sweep {
            spec,
            preset,
            out,
            timing,
        } => {
            let mut s = match (spec, preset.as_deref()) {
                (Some(path), _) => SweepSpec::load(path)?,
                (None, Some("fig4")) => SweepSpec::fig4(),
                _ => SweepSpec::fig3(),
            };
            if let Some(sem) = cli.semantics {
                s.semantics = sem.into();
            }
            if let Some(o) = out {
                s.output = Some(o.clone());
            }
            s.timing |= *timing;
            let base = engine_config(cli, EngineConfig::default().samples, None);
            if cli.engine != Engine::Linear {
                s.engine = EngineKind::from(cli.engine).to_string();
            }
            let rows = run_sweep(&s, &base)?;
            for (path, text) in render_outputs(&s, &rows, Path::new("sweep.csv")) {
                write_file(&path, &text)?;
                println!("{}", path.display());
            }
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                eprintln!("{failed} of {} grid points failed; see the error column", rows.len());
            }
        }
        Command::Export {
            scenario,
            perception,
            format,
            out,
        } => {
            let Loaded { chain, .. } = load(cli, scenario, perception)?;
            let with = |ext: &str| PathBuf::from(format!("{}.{ext}", out.display()));
            let files = match format {
                Format::Explicit => {
                    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
                    }
                    write_explicit(&chain, out)?
                }
                Format::Prism => {
                    write_file(&with("pm"), &prism_string(&chain))?;
                    vec![with("pm")]
                }
                Format::Dot => {
                    write_file(&with("dot"), &dot_string(&chain))?;
                    vec![with("dot")]
                }
            };
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Import { prefix, formula: text } => {
            let chain = read_explicit(prefix)?;
            let report = validate_stochastic(&chain);
            println!(
                "states {} transitions {} env {} max_row_deviation {:e}",
                chain.len(),
                chain.transition_count(),
                chain.env(),
                report.max_deviation
            );
            if let Some(text) = text {
                let f = formula(text, None)?;
                let r = check(&chain, &f, initial_index(&chain), &engine_config(cli, 100_000, None))?;
                println!("{:.9}", r.probability);
            }
        }
        Command::Metrics { cm, class, sizes } => {
            let m = matrix(&Perception {
                cm: Some(cm.clone()),
                pr: None,
            })?;
            let i = m.index_of(class).map_err(config)?;
            match sizes {
                Some(s) => {
                    let sizes = ClassSizes::new(s.clone()).map_err(config)?;
                    let total: f64 = s.iter().sum();
                    let weights: Vec<f64> = s.iter().map(|x| x / total).collect();
                    println!("precision_paper {}", format_sig(m.precision_paper(i, &sizes).map_err(config)?, 12));
                    println!(
                        "precision_standard {}",
                        format_sig(m.precision_standard(i, Some(&weights)).map_err(config)?, 12)
                    );
                }
                None => {
                    println!("precision_paper (omitted: needs --sizes, the class sizes |D_j|)");
                    println!("precision_standard {}", format_sig(m.precision_standard(i, None).map_err(config)?, 12));
                }
            }
            println!("recall {}", format_sig(m.recall(i).map_err(config)?, 12));
        }
        Command::Simulate {
            scenario,
            perception,
            formula: text,
            samples,
            horizon,
        } => {
            if *samples == 0 {
                return Err(CliError::Config("--samples must be positive".into()));
            }
            let Loaded { params, chain } = load(cli, scenario, perception)?;
            let f = formula(text, Some(&params))?;
            let r = simulate(&chain, &f, 0, &engine_config(cli, *samples, *horizon))?;
            println!("{:.9} ± {:.9}", r.probability, r.residual);
            println!(
                "{}",
                json!({
                    "frequency": r.probability,
                    "half_width": r.residual,
                    "ci_low": (r.probability - r.residual).max(0.0),
                    "ci_high": (r.probability + r.residual).min(1.0),
                    "samples": r.iterations,
                    "seed": cli.seed,
                    "bounded": r.bounded,
                })
            );
        }
        Command::VerifyController { scenario } => {
            let file = ScenarioFile::load(scenario)?;
            let params = file.params(cli.semantics.map(Into::into)).map_err(config)?;
            let report = verify_controller(&params);
            println!("{report}");
            if !report.passed() {
                return Err(CliError::Verification(report.violations.len()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
