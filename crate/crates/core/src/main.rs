use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use randopen::config::{ExperimentConfig, Format};
use randopen::harness::{self, ConeFlags, RunOptions, Subcommand};
use randopen::scenarios::scenario_source;
use randopen::Error;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Solve,
    Escape,
    Correlations,
    Cones,
    Check,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Fmt {
    Csv,
    Json,
}

/// Transfer operators, cones and escape rates for random open interval maps.
#[derive(Debug, Parser)]
#[command(name = "randopen", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// Experiment file, or `builtin:<name>`. `check` without it runs every built-in scenario.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<Fmt>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    u: Option<f64>,
    #[arg(long)]
    v: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
}

fn load(spec: &str) -> randopen::Result<ExperimentConfig> {
    match spec.strip_prefix("builtin:") {
        Some(name) => {
            let src = scenario_source(name)?;
            ExperimentConfig::parse(src)
        }
        None => ExperimentConfig::from_path(std::path::Path::new(spec)),
    }
}

fn execute(cli: &Cli) -> randopen::Result<i32> {
    let cmd = match cli.command {
        Cmd::Solve => Subcommand::Solve,
        Cmd::Escape => Subcommand::Escape,
        Cmd::Correlations => Subcommand::Correlations,
        Cmd::Cones => Subcommand::Cones,
        Cmd::Check => Subcommand::Check,
    };
    let opts = RunOptions {
        seed: cli.seed,
        format: cli.format.map(|f| match f {
            Fmt::Csv => Format::Csv,
            Fmt::Json => Format::Json,
        }),
        cones: ConeFlags { a: cli.a, u: cli.u, v: cli.v, epsilon: cli.epsilon, depth: cli.depth, samples: cli.samples },
    };
    let (bundle, format, dir) = match &cli.config {
        Some(spec) => {
            let cfg = load(spec)?;
            let format = opts.format.unwrap_or(cfg.outputs.format);
            let dir = cli.out.clone().or_else(|| cfg.outputs.dir.clone().map(PathBuf::from));
            (harness::run(&cfg, cmd, &opts)?, format, dir)
        }
        None if matches!(cmd, Subcommand::Check) => {
            (harness::run_library_check(&opts)?, opts.format.unwrap_or(Format::Csv), cli.out.clone())
        }
        None => return Err(Error::invalid("--config is required")),
    };
    if let Some(dir) = dir {
        bundle.write_to(&dir)?;
    }
    print!("{}", bundle.render(format));
    for v in &bundle.violations {
        eprintln!("violation: {v}");
    }
    Ok(if bundle.violations.is_empty() { 0 } else { 2 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let code = match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
