use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use mregger::estimators::Model;
use mregger::report::{run_analyze, AnalysisOptions};
use mregger::simulation::{
    run_grid, run_scenario, with_threads, write_grid_csv, write_grid_text, write_scenario_csv,
    write_scenario_text, ScenarioFile, DESK_REPLICATES,
};
use mregger::{load_correlation, load_dataset, WeightScheme};

#[derive(Parser)]
#[command(name = "mregger", version, about = "Summary-data Mendelian randomization with IVW and MR-Egger")]
struct Cli {
    /// Worker threads for simulations (0 = all cores).
    #[arg(long, global = true, env = "MREGGER_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Jsonl,
}

#[derive(Subcommand)]
enum Command {
    /// Run estimators on a summary-statistics CSV.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        /// Number of risk factors in the file.
        #[arg(long)]
        k: usize,
        /// J x J variant correlation matrix (switches to generalized least squares).
        #[arg(long)]
        corr: Option<PathBuf>,
        /// Comma-separated subset of UI, UE, MI, ME.
        #[arg(long, default_value = "MI,ME", value_delimiter = ',')]
        methods: Vec<String>,
        /// Reference risk factor for orientation (required for UE/ME).
        #[arg(long = "ref")]
        reference: Option<String>,
        #[arg(long, default_value = "random")]
        scheme: WeightScheme,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Participants, for the F-statistic.
        #[arg(long, requires = "r2")]
        n: Option<u64>,
        /// Variance in the risk factor explained by the variants.
        #[arg(long, requires = "n")]
        r2: Option<f64>,
        /// Treat warnings as errors (exit status 1).
        #[arg(long)]
        strict: bool,
    },
    /// Run one simulation scenario from a flat TOML file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Run the full scenario grid.
    Grid {
        #[arg(long, default_value_t = DESK_REPLICATES)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Append the mediation grid.
        #[arg(long)]
        mediation: bool,
        /// Write CSV here and the text table next to it (`.txt`); otherwise print the text table.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

enum Outcome {
    Clean,
    Warned,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Warned) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let outcome = match cli.command {
        Command::Analyze { data, k, corr, methods, reference, scheme, level, format, n, r2, strict } => {
            let methods = methods.iter().map(|m| m.parse::<Model>()).collect::<Result<Vec<_>, _>>()?;
            let mut ds = load_dataset(&data, k).with_context(|| format!("reading {}", data.display()))?;
            if let Some(path) = corr {
                let c = load_correlation(&path, &ds).with_context(|| format!("reading {}", path.display()))?;
                ds = ds.with_correlation(c)?;
            }
            let opts = AnalysisOptions { methods, reference, scheme, level, n, r2 };
            let report = run_analyze(&ds, &opts)?;
            match format {
                Format::Text => report.write_text(&mut out)?,
                Format::Csv => report.write_csv(&mut out)?,
                Format::Jsonl => report.write_jsonl(&mut out)?,
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if strict && !report.warnings.is_empty() {
                Outcome::Warned
            } else {
                Outcome::Clean
            }
        }
        Command::Simulate { config, seed, reps, format } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut file = ScenarioFile::parse(&text)?;
            if seed.is_some() {
                file.seed = seed;
            }
            if reps.is_some() {
                file.replicates = reps;
            }
            let cfg = file.into_config()?;
            let summary = with_threads(cli.threads, || run_scenario(&cfg))??;
            match format {
                Format::Text => write_scenario_text(&summary, &mut out)?,
                Format::Csv => write_scenario_csv(&summary, &mut out)?,
                Format::Jsonl => writeln!(out, "{}", serde_json::to_string(&summary)?)?,
            }
            report_failures(summary.total_failures());
            Outcome::Clean
        }
        Command::Grid { reps, seed, mediation, out: path, format } => {
            if reps == 0 {
                bail!("--reps must be positive");
            }
            let rows = with_threads(cli.threads, || run_grid(reps, seed, mediation))??;
            match path {
                Some(p) => {
                    write_file(&p, |w| write_grid_csv(&rows, reps, seed, w))?;
                    write_file(&p.with_extension("txt"), |w| write_grid_text(&rows, reps, seed, w))?;
                }
                None => match format {
                    Format::Csv => write_grid_csv(&rows, reps, seed, &mut out)?,
                    Format::Jsonl => {
                        for r in &rows {
                            writeln!(out, "{}", serde_json::to_string(r)?)?;
                        }
                    }
                    Format::Text => write_grid_text(&rows, reps, seed, &mut out)?,
                },
            }
            report_failures(rows.iter().map(|r| r.summary.total_failures()).sum());
            Outcome::Clean
        }
    };
    out.flush()?;
    Ok(outcome)
}

fn report_failures(n: usize) {
    if n > 0 {
        eprintln!("warning: {n} estimator fit(s) failed; see the failures columns");
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> mregger::Result<()>) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}
