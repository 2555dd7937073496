use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pi0kit_core::epv::{e_delta_t1, e_delta_t2, e_delta_z};
use pi0kit_core::estimators::{estimate_all, EstimatorConfig, InitialEstimator, Method};
use pi0kit_core::io::{ingest_matrix, EstimateReport, IngestionStats, LabelSpec, MatrixFormat, MethodResult};
use pi0kit_core::simulation::{
    run_study_with_progress, write_replications_csv, write_summary_csv, SimulationConfig, VarianceReading,
};
use pi0kit_core::testing::{test_matrix, TestFamily};

mod grid;

use grid::{parse_f64_list, parse_usize_list};

/// Estimate the proportion of true null hypotheses in large-scale testing.
#[derive(Parser, Debug)]
#[command(author, version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test every row of an expression matrix and estimate π₀
    Estimate(EstimateArgs),
    /// Run the block-correlated Gaussian simulation study
    Simulate(SimulateArgs),
    /// Tabulate the expected p-value e_δ over a grid of effect sizes
    Epv(EpvArgs),
}

#[derive(Args, Debug, Clone)]
struct EstimatorArgs {
    /// Methods to run, comma separated (storey_bootstrap, E1, E3, U)
    #[arg(long, value_delimiter = ',', default_value = "storey_bootstrap,E1,E3,U")]
    method: Vec<String>,

    /// Storey λ grid: list `0,0.05,...` or range `start:end:step`
    #[arg(long, default_value = "0:0.95:0.05")]
    lambda_grid: String,

    /// λ grid averaged by the U estimator
    #[arg(long, default_value = "0.2:0.5:0.05")]
    cheng_lambda_grid: String,

    /// Bootstrap resamples for Storey's λ selection
    #[arg(long, default_value_t = 100)]
    bootstrap_reps: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Use this value as the initial π₀ estimate instead of Storey's
    #[arg(long)]
    initial_pi0: Option<f64>,
}

impl EstimatorArgs {
    fn to_config(&self) -> Result<EstimatorConfig> {
        let methods = self
            .method
            .iter()
            .map(|m| m.parse::<Method>())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let config = EstimatorConfig {
            storey_lambda_grid: parse_f64_list(&self.lambda_grid)?,
            cheng_lambda_grid: parse_f64_list(&self.cheng_lambda_grid)?,
            bootstrap_reps: self.bootstrap_reps,
            initial_estimator: match self.initial_pi0 {
                Some(v) => InitialEstimator::External(v),
                None => InitialEstimator::StoreyBootstrap,
            },
            seed: self.seed,
            methods,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    Z,
    T1,
    T2,
}

impl From<FamilyArg> for TestFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Z => TestFamily::ZOneSided,
            FamilyArg::T1 => TestFamily::TOneSampleTwoSided,
            FamilyArg::T2 => TestFamily::TTwoSampleTwoSided,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum InputFormat {
    Csv,
    Tsv,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Table,
    Json,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Expression matrix: header row of sample ids, optional gene-id column
    input: PathBuf,

    /// Input format; inferred from the file extension when absent
    #[arg(long, value_enum)]
    format: Option<InputFormat>,

    /// Group label per sample column, comma separated
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["labels_file", "label_prefix"])]
    labels: Option<Vec<String>>,

    /// File holding the group labels
    #[arg(long, conflicts_with = "label_prefix")]
    labels_file: Option<PathBuf>,

    /// Take each label from the sample id up to this separator
    #[arg(long)]
    label_prefix: Option<char>,

    /// Test family; two-sample t when labels are given, one-sample t otherwise
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,

    /// Known standard deviation for the Z test
    #[arg(long)]
    sigma: Option<f64>,

    #[command(flatten)]
    estimator: EstimatorArgs,

    /// Write the JSON report here
    #[arg(long)]
    out: Option<PathBuf>,

    /// What to print on standard output
    #[arg(long, value_enum, default_value = "table")]
    output: OutputFormat,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 1000)]
    m: usize,

    /// Block size
    #[arg(long, default_value_t = 100)]
    b: usize,

    /// Number of blocks
    #[arg(long, default_value_t = 10)]
    r: usize,

    /// Sample sizes, comma separated
    #[arg(long, default_value = "25,50")]
    n: String,

    /// Within-block correlations
    #[arg(long, default_value = "0,0.2,0.5")]
    rho: String,

    /// True π₀ values, list or range
    #[arg(long, default_value = "0.1:0.9:0.1")]
    pi0: String,

    /// Replications per cell
    #[arg(long, default_value_t = 100)]
    reps: usize,

    /// Reading of "exponential(10)" for block variances
    #[arg(long, value_enum, default_value = "rate")]
    variance_reading: VarianceArg,

    /// Include the e, ẽ and ê columns in the summary
    #[arg(long)]
    oracle: bool,

    /// Also write per-replication estimates
    #[arg(long)]
    raw: bool,

    #[command(flatten)]
    estimator: EstimatorArgs,

    /// Directory for summary.csv, summary.json and replications.csv;
    /// without it the summary CSV goes to standard output
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum VarianceArg {
    Rate,
    Mean,
}

#[derive(Args, Debug)]
struct EpvArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,

    /// Sample size (z and t1)
    #[arg(long)]
    n: Option<usize>,

    /// Size of the first group (t2)
    #[arg(long)]
    n1: Option<usize>,

    /// Size of the second group (t2)
    #[arg(long)]
    n2: Option<usize>,

    /// Effect sizes: list or range `start:end:step`
    #[arg(long, default_value = "0:2:0.1")]
    delta: String,

    /// Write the CSV here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PI0KIT_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("PI0KIT_THREADS must be a positive integer, got '{v}'"))?;
        if n == 0 {
            bail!("PI0KIT_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn output_writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn cmd_estimate(args: &EstimateArgs) -> Result<bool> {
    let config = args.estimator.to_config()?;
    let format = match args.format {
        Some(InputFormat::Csv) => MatrixFormat::Csv,
        Some(InputFormat::Tsv) => MatrixFormat::Tsv,
        None => MatrixFormat::from_path(&args.input),
    };
    let labels = if let Some(l) = &args.labels {
        LabelSpec::Inline(l.clone())
    } else if let Some(p) = &args.labels_file {
        LabelSpec::File(p.clone())
    } else if let Some(c) = args.label_prefix {
        LabelSpec::HeaderPrefix(c)
    } else {
        LabelSpec::None
    };
    let family: TestFamily = match args.family {
        Some(f) => f.into(),
        None if labels != LabelSpec::None => TestFamily::TTwoSampleTwoSided,
        None => TestFamily::TOneSampleTwoSided,
    };

    let matrix = ingest_matrix(&args.input, format, &labels)
        .with_context(|| format!("reading {}", args.input.display()))?;
    if !matrix.dropped.is_empty() {
        eprintln!(
            "warning: dropped {} rows with missing or non-finite values",
            matrix.dropped.len()
        );
    }
    let outcomes = test_matrix(matrix.values.view(), matrix.groups.as_deref(), family, args.sigma)?;
    let p: Vec<f64> = outcomes.iter().map(|o| o.p_value).collect();
    let results = estimate_all(&p, &outcomes, &config)?;

    let report = EstimateReport::new(
        Some(args.input.display().to_string()),
        family,
        IngestionStats::from_matrix(&matrix),
        config,
        results,
    );
    for r in &report.results {
        match r {
            MethodResult::Estimate(e) => {
                for w in &e.warnings {
                    eprintln!("warning: {}: {w}", e.method);
                }
            }
            MethodResult::Failed { method, error } => eprintln!("error: {method}: {error}"),
        }
    }

    let json = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &args.out {
        std::fs::write(path, format!("{json}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut out = output_writer(None)?;
    match args.output {
        OutputFormat::Json => writeln!(out, "{json}")?,
        OutputFormat::Table => {
            writeln!(out, "method\tpi0\tinitial")?;
            for r in &report.results {
                match r {
                    MethodResult::Estimate(e) => writeln!(
                        out,
                        "{}\t{:.5}\t{}",
                        e.method,
                        e.value,
                        e.initial.as_deref().unwrap_or("-")
                    )?,
                    MethodResult::Failed { method, .. } => writeln!(out, "{method}\tNA\t-")?,
                }
            }
        }
    }
    out.flush()?;
    let all_failed = report.results.iter().all(|r| matches!(r, MethodResult::Failed { .. }));
    Ok(!all_failed)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<bool> {
    let config = SimulationConfig {
        m: args.m,
        n_grid: parse_usize_list(&args.n)?,
        pi0_grid: parse_f64_list(&args.pi0)?,
        b: args.b,
        r: args.r,
        rho_grid: parse_f64_list(&args.rho)?,
        replications: args.reps,
        seed: args.estimator.seed,
        variance_reading: match args.variance_reading {
            VarianceArg::Rate => VarianceReading::Rate,
            VarianceArg::Mean => VarianceReading::Mean,
        },
        estimator: args.estimator.to_config()?,
        ..SimulationConfig::default()
    };
    config.validate()?;
    let cells = config.cells().len();
    let per_cell = config.replications;
    let progress = move |done: usize, total: usize| {
        if done % per_cell == 0 || done == total {
            eprintln!("progress: {done}/{total} replications ({cells} cells)");
        }
    };
    let summary = run_study_with_progress(&config, &progress)?;
    let config_line = serde_json::to_string(&config)?;

    match &args.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let csv_path = dir.join("summary.csv");
            let mut w = output_writer(Some(&csv_path))?;
            write_summary_csv(&summary, Some(&config_line), args.oracle, &mut w)?;
            w.flush()?;
            let json_path = dir.join("summary.json");
            let body = serde_json::json!({
                "schema_version": pi0kit_core::io::REPORT_SCHEMA_VERSION,
                "config": &summary.config,
                "seed": summary.config.seed,
                "cells": &summary.cells,
            });
            std::fs::write(&json_path, format!("{}\n", serde_json::to_string_pretty(&body)?))?;
            if args.raw {
                let mut w = output_writer(Some(&dir.join("replications.csv")))?;
                write_replications_csv(&summary, &mut w)?;
                w.flush()?;
            }
            eprintln!("wrote {}", csv_path.display());
        }
        None => {
            let mut w = output_writer(None)?;
            write_summary_csv(&summary, Some(&config_line), args.oracle, &mut w)?;
            w.flush()?;
            if args.raw {
                eprintln!("warning: --raw needs --out-dir; per-replication output skipped");
            }
        }
    }
    Ok(true)
}

fn cmd_epv(args: &EpvArgs) -> Result<bool> {
    let deltas = parse_f64_list(&args.delta)?;
    let need = |v: Option<usize>, name: &str| v.ok_or_else(|| anyhow!("--{name} is required for this family"));
    let eval: Box<dyn Fn(f64) -> Result<f64>> = match args.family {
        FamilyArg::Z => {
            let n = need(args.n, "n")?;
            if n == 0 {
                bail!("--n must be positive");
            }
            Box::new(move |d| Ok(e_delta_z(d, n)))
        }
        FamilyArg::T1 => {
            let n = need(args.n, "n")?;
            Box::new(move |d| Ok(e_delta_t1(d, n)?))
        }
        FamilyArg::T2 => {
            let (n1, n2) = (need(args.n1, "n1")?, need(args.n2, "n2")?);
            Box::new(move |d| Ok(e_delta_t2(d, n1, n2)?))
        }
    };
    let mut out = output_writer(args.out.as_deref())?;
    writeln!(out, "delta,e_delta")?;
    for d in deltas {
        writeln!(out, "{d},{}", eval(d)?)?;
    }
    out.flush()?;
    Ok(true)
}

fn run(cli: &Cli) -> Result<bool> {
    configure_threads()?;
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Epv(a) => cmd_epv(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
