use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use nph2ph::analysis::{analyze, AnalysisOptions, Landmark};
use nph2ph::dataset::{parse_csv, validate};
use nph2ph::predict::kappa_piecewise_multi;
use nph2ph::simlab::{
    brute_r2_argmax, gen_nph_with, mc_bridge_null, mc_kappa, HazardEffect, SimSpec,
};
use nph2ph::transform::{CandidateSet, ScanOptions};
use nph2ph::{Error, Exec, TimeScale};

mod output;
mod svg;

use output::{write_atomic, Staged};

const EXIT_BAD_INPUT: u8 = 2;
const EXIT_NO_INFORMATIVE: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "nph2ph", version, about = "Re-analysis of two-arm survival trials under non-proportional hazards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the PH model, bridge diagnostics and nph2ph approximations.
    Analyze(AnalyzeArgs),
    /// Generate a trial from a JSON spec, optionally with an oracle table.
    Simulate(SimulateArgs),
    /// Check a CSV file and print the validation report.
    Validate {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(clap::Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "nph2ph-out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=2))]
    changepoints: u8,
    /// 0 skips the Legendre fit.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(0..=8))]
    legendre_order: u8,
    #[arg(long, default_value = "0.90,0.999", value_delimiter = ',')]
    bands: Vec<f64>,
    #[arg(long, default_value = "0.05,0.95", value_delimiter = ',')]
    eps: Vec<f64>,
    /// `auto`, `none` or a time on the original scale.
    #[arg(long, default_value = "auto")]
    landmark: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Monte Carlo pairs behind each reported concordance.
    #[arg(long, default_value_t = 200_000)]
    kappa_pairs: usize,
    #[arg(long, default_value_t = 5)]
    min_seg: usize,
    /// Also render each series as SVG.
    #[arg(long)]
    svg: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Oracle {
    Kappa,
    Bridge,
    R2argmax,
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    oracle: Option<Oracle>,
    /// Oracle TSV; defaults to the CSV path with `_<oracle>.tsv`.
    #[arg(long)]
    oracle_out: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    replicates: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pairs: usize,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn bad_input(err: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_BAD_INPUT,
            err: err.into(),
        }
    }

    fn from_core(err: Error) -> Self {
        let code = match err {
            Error::NoInformativeFailures => EXIT_NO_INFORMATIVE,
            Error::Numeric(_) | Error::ZeroVariance(_) | Error::EmptyRiskSet(_) => EXIT_NUMERIC,
            _ => EXIT_BAD_INPUT,
        };
        Self {
            code,
            err: err.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Self {
            code: 1,
            err,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let result = match cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Validate { input } => cmd_validate(&input),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads() {
    let Ok(value) = std::env::var("NPH2PH_THREADS") else {
        return;
    };
    match value.parse::<usize>() {
        Ok(n) if n > 0 => {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        _ => eprintln!("warning: ignoring NPH2PH_THREADS={value:?}"),
    }
}

fn read_input(path: &Path) -> Result<nph2ph::TrialData, Failure> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::bad_input)?;
    parse_csv(&bytes)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::bad_input)
}

fn parse_landmark(s: &str) -> Result<Landmark, Failure> {
    match s {
        "auto" => Ok(Landmark::Auto),
        "none" => Ok(Landmark::Off),
        t => match t.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(Landmark::At(v)),
            _ => Err(Failure::bad_input(anyhow::anyhow!(
                "--landmark must be auto, none or a non-negative time, got {t:?}"
            ))),
        },
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<u8, Failure> {
    let data = read_input(&args.input)?;
    let eps = match args.eps[..] {
        [a, b] => (a, b),
        _ => {
            return Err(Failure::bad_input(anyhow::anyhow!(
                "--eps takes two comma-separated values"
            )))
        }
    };
    let opts = AnalysisOptions {
        changepoints: args.changepoints as usize,
        legendre_order: args.legendre_order as usize,
        bands: args.bands.clone(),
        eps,
        landmark: parse_landmark(&args.landmark)?,
        seed: args.seed,
        kappa_pairs: args.kappa_pairs.max(1),
        scan: ScanOptions {
            min_seg: args.min_seg,
            exec: Exec::Parallel,
        },
        ..AnalysisOptions::default()
    };
    let analysis = analyze(&data, &opts).map_err(Failure::from_core)?;

    let mut staged = Staged::new(&args.out_dir);
    let report = serde_json::to_string_pretty(&analysis.report).context("serializing report")?;
    staged.add("report.json", report + "\n");
    staged.add("data.csv", data.to_csv());
    for s in &analysis.series {
        staged.add(&s.file_name(), s.to_tsv());
        if args.svg {
            staged.add(&format!("{}.svg", s.name), svg::render(s));
        }
    }
    staged.commit().map_err(Failure::from)?;

    if analysis.report.status == "partial" {
        eprintln!("warning: some stages failed numerically; see `nulls` in report.json");
        return Ok(EXIT_NUMERIC);
    }
    Ok(0)
}

fn oracle_path(args: &SimulateArgs, suffix: &str) -> PathBuf {
    args.oracle_out.clone().unwrap_or_else(|| {
        let stem = args
            .out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sim".into());
        args.out.with_file_name(format!("{stem}_{suffix}.tsv"))
    })
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8, Failure> {
    let text = std::fs::read_to_string(&args.spec)
        .with_context(|| format!("reading {}", args.spec.display()))
        .map_err(Failure::bad_input)?;
    let spec = SimSpec::from_json(&text)
        .with_context(|| format!("parsing {}", args.spec.display()))
        .map_err(Failure::bad_input)?;
    let effect = spec.validate().map_err(Failure::bad_input)?;
    let data = gen_nph_with(&spec, Exec::Parallel).map_err(Failure::from_core)?;

    let oracle = match args.oracle {
        None => None,
        Some(Oracle::Kappa) => {
            let lambda = spec.baseline_hazard;
            let scaled = HazardEffect {
                breaks: effect.breaks.iter().map(|b| b * lambda).collect(),
                log_hr: effect.log_hr.clone(),
            };
            let mc = mc_kappa(&scaled, args.pairs, spec.seed, Exec::Parallel)
                .map_err(Failure::bad_input)?;
            let formula = kappa_piecewise_multi(&scaled.breaks, &scaled.log_hr)
                .map_err(Failure::from_core)?;
            let tsv = format!(
                "estimate\tse\tpairs\tseed\tformula\n{}\t{}\t{}\t{}\t{}\n",
                mc.estimate, mc.se, mc.replicates, mc.seed, formula
            );
            Some((oracle_path(&args, "kappa"), tsv))
        }
        Some(Oracle::Bridge) => {
            let cal = mc_bridge_null(&spec, &[0.90, 0.999], args.replicates, Exec::Parallel)
                .map_err(Failure::from_core)?;
            Some((oracle_path(&args, "bridge"), cal.to_tsv()))
        }
        Some(Oracle::R2argmax) => {
            let ts = TimeScale::build(&data).map_err(Failure::from_core)?;
            let table = brute_r2_argmax(&ts, &CandidateSet::piecewise_class(), Exec::Parallel)
                .map_err(Failure::from_core)?;
            Some((oracle_path(&args, "r2argmax"), table.to_tsv()))
        }
    };

    write_atomic(&args.out, data.to_csv().as_bytes()).map_err(Failure::from)?;
    if let Some((path, tsv)) = oracle {
        write_atomic(&path, tsv.as_bytes()).map_err(Failure::from)?;
    }
    Ok(0)
}

fn cmd_validate(input: &Path) -> Result<u8, Failure> {
    let data = read_input(input)?;
    let report = validate(&data);
    println!(
        "{}",
        serde_json::to_string(&report).context("serializing validation report")?
    );
    Ok(0)
}
