use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use uniform_delta_cli::error::{exit, CliError, Result};
use uniform_delta_cli::runner::log_outcome;
use uniform_delta_cli::{init_thread_pool, presets, run_config, run_study, worst_exit_code, RunConfig, StudyOutcome};

#[derive(Parser)]
#[command(name = "uniform-delta", version, about = "Diagnostics for uniform validity of delta-method approximations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the normalized remainder over a (t, m) grid.
    Scan(ScanArgs),
    /// Sampled remainder envelope over shrinking radii.
    Envelope(EnvelopeArgs),
    /// Check divergence certificates on a lattice.
    Diverge(DivergeArgs),
    /// Distance between X_n and its limit along a parameter sequence.
    Sequence(StudyArgs),
    /// Coverage of delta-method confidence intervals.
    Coverage(StudyArgs),
    /// Moment-inequality remainder study.
    Mineq(StudyArgs),
    /// Minimum-distance remainder scan around a model curve.
    Mindist(StudyArgs),
    /// Continuous-mapping counterexample table.
    CmtDemo(StudyArgs),
    /// Run every study of a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct Source {
    /// JSON config; runs its studies of this kind.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset study.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PhiArgs {
    /// Built-in map.
    #[arg(long, conflicts_with = "expr")]
    phi: Option<String>,
    /// Map as expressions in t1, t2, ...; components separated by `;`.
    #[arg(long)]
    expr: Option<String>,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    phi: PhiArgs,
    /// `lo:hi` per input dimension, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    t_range: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    m_range: Option<String>,
    /// Points per axis.
    #[arg(long)]
    grid: Option<u64>,
    /// `linear` or `log`.
    #[arg(long)]
    spacing: Option<String>,
    /// `auto` or `fd`.
    #[arg(long)]
    jacobian: Option<String>,
    #[command(flatten)]
    source: Source,
}

#[derive(Args)]
struct EnvelopeArgs {
    #[command(flatten)]
    phi: PhiArgs,
    /// Box of centers, `lo:hi` per dimension.
    #[arg(long = "box", allow_hyphen_values = true)]
    box_: Option<String>,
    /// Strictly decreasing radii, comma separated.
    #[arg(long)]
    eps: Option<String>,
    /// Samples per radius.
    #[arg(long)]
    samples: Option<u64>,
    #[command(flatten)]
    source: Source,
}

#[derive(Args)]
struct DivergeArgs {
    /// Sample sizes, comma separated.
    #[arg(long, default_value = "100,10000,1000000")]
    n: String,
    /// Lattice points per axis.
    #[arg(long)]
    grid: Option<u64>,
    #[command(flatten)]
    source: Source,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    source: Source,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output_dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_ranges(flag: &str, text: &str) -> Result<Value> {
    text.split(',')
        .map(|part| {
            let (lo, hi) = part
                .split_once(':')
                .ok_or_else(|| CliError::config(flag, format!("expected lo:hi, got `{part}`")))?;
            let p = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::config(flag, format!("`{s}` is not a number")))
            };
            Ok(json!([p(lo)?, p(hi)?]))
        })
        .collect::<Result<Vec<Value>>>()
        .map(Value::Array)
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::config(flag, format!("`{}` is not a valid entry", s.trim())))
        })
        .collect()
}

fn insert_phi(block: &mut Map<String, Value>, phi: &PhiArgs) {
    if let Some(p) = &phi.phi {
        block.insert("phi".into(), json!(p));
    }
    if let Some(e) = &phi.expr {
        block.insert("expr".into(), json!(e));
    }
}

/// Studies to run and whether each writes into `out/<name>`.
struct Plan {
    config: RunConfig,
    nested: bool,
    out: PathBuf,
}

fn from_source(kind: &str, source: &Source, flags: Option<Map<String, Value>>) -> Result<Plan> {
    if let Some(path) = &source.config {
        let text = std::fs::read_to_string(path)?;
        let mut doc: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::config("/", format!("invalid JSON: {e}")))?;
        if let Some(seed) = source.seed {
            doc["master_seed"] = json!(seed);
        }
        let mut config = RunConfig::from_value(&doc)?;
        config.studies.retain(|s| s.kind == kind);
        if config.studies.is_empty() {
            return Err(CliError::config("/studies", format!("no `{kind}` study in {}", path.display())));
        }
        return Ok(Plan {
            config,
            nested: true,
            out: source.out.clone(),
        });
    }
    let mut block = match (&source.preset, flags) {
        (Some(name), _) => presets::preset(kind, name)?,
        (None, Some(map)) => Value::Object(map),
        (None, None) => {
            let available = presets::names(kind);
            return Err(CliError::config(
                "--preset",
                format!("give --config FILE or --preset NAME (available: {})", available.join(", ")),
            ));
        }
    };
    block["kind"] = json!(kind);
    if let Some(seed) = source.seed {
        block["seed"] = json!(seed);
    }
    Ok(Plan {
        config: RunConfig::from_value(&json!({ "studies": [block] }))?,
        nested: false,
        out: source.out.clone(),
    })
}

fn execute(plan: &Plan) -> Vec<StudyOutcome> {
    if plan.nested {
        run_config(&plan.config, &plan.out)
    } else {
        plan.config
            .studies
            .iter()
            .map(|s| {
                let o = run_study(s, &plan.out);
                log_outcome(&o);
                o
            })
            .collect()
    }
}

fn summary(outcomes: &[StudyOutcome], with_result: bool) -> Value {
    Value::Array(
        outcomes
            .iter()
            .map(|o| {
                let mut v = serde_json::to_value(o).expect("outcomes serialize");
                if with_result {
                    v["result"] = o.result.clone();
                }
                v
            })
            .collect(),
    )
}

fn dispatch(cli: Cli) -> Result<i32> {
    init_thread_pool()?;
    let (plan, with_result) = match cli.command {
        Command::Scan(a) => {
            let flags = (a.phi.phi.is_some() || a.phi.expr.is_some()).then(|| -> Result<_> {
                let mut b = Map::new();
                insert_phi(&mut b, &a.phi);
                if let Some(r) = &a.t_range {
                    b.insert("t_range".into(), parse_ranges("--t-range", r)?);
                }
                if let Some(r) = &a.m_range {
                    b.insert("m_range".into(), parse_ranges("--m-range", r)?);
                }
                if let Some(g) = a.grid {
                    b.insert("grid".into(), json!(g));
                }
                if let Some(s) = &a.spacing {
                    b.insert("spacing".into(), json!(s));
                }
                if let Some(j) = &a.jacobian {
                    b.insert("jacobian".into(), json!(j));
                }
                Ok(b)
            });
            (from_source("scan", &a.source, flags.transpose()?)?, false)
        }
        Command::Envelope(a) => {
            let flags = (a.phi.phi.is_some() || a.phi.expr.is_some()).then(|| -> Result<_> {
                let mut b = Map::new();
                insert_phi(&mut b, &a.phi);
                if let Some(r) = &a.box_ {
                    let ranges = parse_ranges("--box", r)?;
                    let arr = ranges.as_array().expect("ranges are arrays");
                    b.insert("box_lo".into(), arr.iter().map(|p| p[0].clone()).collect());
                    b.insert("box_hi".into(), arr.iter().map(|p| p[1].clone()).collect());
                }
                if let Some(e) = &a.eps {
                    b.insert("eps".into(), json!(parse_list::<f64>("--eps", e)?));
                }
                if let Some(s) = a.samples {
                    b.insert("samples".into(), json!(s));
                }
                Ok(b)
            });
            (from_source("envelope", &a.source, flags.transpose()?)?, false)
        }
        Command::Diverge(a) => {
            let mut plan = if let Some(name) = &a.source.preset {
                let mut b = Map::new();
                b.insert("name".into(), json!(format!("diverge-{name}")));
                b.insert("preset".into(), json!(name));
                b.insert("n".into(), json!(parse_list::<u64>("--n", &a.n)?));
                if let Some(g) = a.grid {
                    b.insert("grid".into(), json!(g));
                }
                let source = Source {
                    config: None,
                    preset: None,
                    out: a.source.out.clone(),
                    seed: a.source.seed,
                };
                from_source("diverge", &source, Some(b))?
            } else {
                from_source("diverge", &a.source, None)?
            };
            if a.source.config.is_some() && a.grid.is_some() {
                return Err(CliError::config("--grid", "set the lattice size inside the config"));
            }
            plan.nested = plan.nested || plan.config.studies.len() > 1;
            (plan, true)
        }
        Command::Sequence(a) => (from_source("sequence", &a.source, None)?, false),
        Command::Coverage(a) => (from_source("coverage", &a.source, None)?, false),
        Command::Mineq(a) => (from_source("mineq", &a.source, None)?, false),
        Command::Mindist(a) => (from_source("mindist", &a.source, None)?, false),
        Command::CmtDemo(a) => (from_source("cmt-demo", &a.source, None)?, false),
        Command::Run(a) => {
            let text = std::fs::read_to_string(&a.config)?;
            let config = RunConfig::from_str(&text)?;
            let out = a
                .out
                .or_else(|| config.output_dir.clone())
                .unwrap_or_else(|| Path::new("out").to_path_buf());
            (
                Plan {
                    config,
                    nested: true,
                    out,
                },
                false,
            )
        }
    };
    let outcomes = execute(&plan);
    let text = serde_json::to_string_pretty(&summary(&outcomes, with_result))?;
    println!("{text}");
    Ok(worst_exit_code(&outcomes))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
