use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use difflab::bounds::{corollary_spec_check, corollary_tv_check, PipelineRun};
use difflab::harness::{default_config, run_suite, split_values, sweep, ExperimentConfig, RunRecord, SUITES};
use difflab::{Error, Result};

/// Exact verification of discrete diffusion bounds.
#[derive(Debug, Parser)]
#[command(name = "difflab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run verification suites and write a CSV and JSON report.
    Verify {
        /// Suite name; defaults to the `suites` list of the config.
        suite: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config value, e.g. `--set perturbation.epsilon=0.25`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the pipeline once per value of one config axis.
    Sweep {
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the pipeline once and print every bound report.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Estimate the synchronous-coupling disagreement probability.
    Couple {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// List the registered suites.
    Suites,
}

fn load(path: Option<&Path>, fallback: impl FnOnce() -> Result<ExperimentConfig>, overrides: &[String]) -> Result<ExperimentConfig> {
    let base = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => fallback()?,
    };
    base.with_overrides(overrides)
}

fn write_record(record: &RunRecord, stem: &str) -> Result<PathBuf> {
    let csv = record.config.report_path(stem);
    record.write_csv(&csv)?;
    record.write_json(&csv.with_extension("json"))?;
    Ok(csv)
}

fn finish(records: &[RunRecord]) -> Result<()> {
    match records.iter().find(|r| !r.passed()) {
        Some(r) => Err(Error::Hypothesis(format!(
            "suite `{}` failed with min margin {:e}",
            r.suite,
            r.min_margin()
        ))),
        None => Ok(()),
    }
}

fn verify(suite: Option<String>, config: Option<PathBuf>, overrides: &[String]) -> Result<()> {
    let names = match (&suite, &config) {
        (Some(s), _) => vec![s.clone()],
        (None, Some(p)) => ExperimentConfig::load(p)?.suites,
        (None, None) => return Err(Error::Usage("name a suite or give a config listing suites".into())),
    };
    if names.is_empty() {
        return Err(Error::Usage("the config lists no suites".into()));
    }
    let mut records = Vec::new();
    for name in &names {
        let cfg = load(config.as_deref(), || default_config(name), overrides)?;
        let record = run_suite(name, &cfg)?;
        print!("{}", record.summary());
        let path = write_record(&record, &format!("verify_{name}"))?;
        println!("report: {}", path.display());
        records.push(record);
    }
    finish(&records)
}

fn run_sweep(axis: &str, values: &str, config: Option<PathBuf>, overrides: &[String]) -> Result<()> {
    let cfg = load(config.as_deref(), || default_config("cor_tv"), overrides)?;
    let table = sweep(&cfg, axis, &split_values(values))?;
    let path = cfg.report_path(&format!("sweep_{}", axis.replace('.', "_")));
    table.write_csv(&path)?;
    print!("{}", table.summary());
    println!("report: {}", path.display());
    table.verdict()
}

fn bounds(config: &Path, overrides: &[String]) -> Result<()> {
    let cfg = load(Some(config), || unreachable!(), overrides)?;
    let spec = cfg.rate_spec()?;
    let data = cfg.data(spec.space())?;
    let run = PipelineRun::execute(&spec, &data, &cfg.integrator, cfg.perturbation, cfg.start)?;
    let mut reports = vec![corollary_tv_check(&run)?];
    for ipm in cfg.metric_list() {
        let report = corollary_spec_check(&run, &ipm)?;
        if reports.iter().all(|r| r.id != report.id) {
            reports.push(report);
        }
    }
    println!("{}", serde_json::to_string_pretty(&reports).map_err(|e| Error::Io(e.to_string()))?);
    for r in &reports {
        println!(
            "{} {}: lhs={:.16e} rhs={:.16e} margin={:.16e}",
            if r.holds() { "PASS" } else { "FAIL" },
            r.id,
            r.lhs,
            r.rhs,
            r.margin
        );
    }
    match reports.iter().find(|r| !r.holds()) {
        Some(r) => Err(Error::Hypothesis(format!("bound `{}` violated", r.id))),
        None => Ok(()),
    }
}

fn couple(config: &Path, trials: usize, overrides: &[String]) -> Result<()> {
    let mut cfg = load(Some(config), || unreachable!(), overrides)?;
    cfg.trials = trials;
    cfg.validate()?;
    let record = run_suite("thm_c1", &cfg)?;
    if let Some(est) = record.coupling.first() {
        println!("{}", serde_json::to_string_pretty(est).map_err(|e| Error::Io(e.to_string()))?);
    }
    print!("{}", record.summary());
    let path = write_record(&record, "couple")?;
    println!("report: {}", path.display());
    finish(&[record])
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Verify {
            suite,
            config,
            overrides,
        } => verify(suite, config, &overrides),
        Command::Sweep {
            axis,
            values,
            config,
            overrides,
        } => run_sweep(&axis, &values, config, &overrides),
        Command::Bounds { config, overrides } => bounds(&config, &overrides),
        Command::Couple {
            config,
            trials,
            overrides,
        } => couple(&config, trials, &overrides),
        Command::Suites => {
            for s in SUITES {
                let kind = s.kind.map_or_else(|| "any".to_string(), |k| k.to_string());
                println!("{:<12} {:<8} {}", s.name, kind, s.description);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("difflab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
