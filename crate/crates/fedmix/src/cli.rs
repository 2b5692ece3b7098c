//! Command-line entry points.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use fedmix_core::data::{partition_ds1, partition_ds2, skew_report, synth_generate, SynthSpec};
use fedmix_core::gradsuite::{run_gradient_suite, CaseKind, SUITE_SEEDS};

use crate::config::RunConfig;
use crate::dataset::{load_dataset, save_dataset};
use crate::error::{Error, Result};
use crate::report::{load_runs, render_report, sig6, Format, TableKind};
use crate::runner::{load_run_data, run_to_dir};

#[derive(Parser, Debug)]
#[command(name = "fedmix", version, about = "Federated mixer-architecture simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Scheme {
    Ds1,
    Ds2,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-label dataset directory.
    Synth {
        /// Generator settings as JSON; omitted fields take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a dataset across clients and report how skewed the split is.
    Partition {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        scheme: Scheme,
        #[arg(long, default_value_t = 7)]
        clients: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for shards.json and skew.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a federated experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train clients on worker threads.
        #[arg(long)]
        parallel: bool,
        /// Write the global model after every round.
        #[arg(long)]
        checkpoints: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Summarize round logs into tables.
    Report {
        /// Round logs (`rounds.jsonl`) or the run directories holding them.
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long, value_enum, default_value_t = TableKind::All)]
        table: TableKind,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every primitive and architecture.
    Gradcheck {
        #[arg(long, value_delimiter = ',', default_values_t = SUITE_SEEDS)]
        seeds: Vec<u64>,
    },
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::json(path, e))
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    let say = |out: &mut dyn Write, line: String| {
        let _ = writeln!(out, "{line}");
    };
    match command {
        Command::Synth { spec, seed, out: dir } => {
            let spec: SynthSpec = match spec {
                Some(p) => serde_json::from_str(&read_to_string(&p)?).map_err(|e| Error::json(&p, e))?,
                None => SynthSpec::default(),
            };
            let ds = synth_generate(&spec, seed)?;
            save_dataset(&ds, &dir)?;
            say(out, format!("wrote {} samples in {} groups to {}", ds.len(), ds.groups().len(), dir.display()));
        }
        Command::Partition {
            data,
            scheme,
            clients,
            seed,
            out: dir,
        } => {
            let ds = load_dataset(&data)?;
            let shards = match scheme {
                Scheme::Ds1 => partition_ds1(&ds, clients, seed)?,
                Scheme::Ds2 => partition_ds2(&ds)?,
            };
            let report = skew_report(&ds, &shards)?;
            let shards_path = dir.join("shards.json");
            write_file(&shards_path, &to_json(&shards, &shards_path)?)?;
            let skew_path = dir.join("skew.json");
            write_file(&skew_path, &to_json(&report, &skew_path)?)?;
            say(
                out,
                format!(
                    "{} clients, mean JS {}, size Gini {}",
                    shards.len(),
                    sig6(report.mean_js),
                    sig6(report.size_gini)
                ),
            );
        }
        Command::Run {
            config,
            out: dir,
            parallel,
            checkpoints,
            quiet,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.parallel |= parallel;
            cfg.checkpoints |= checkpoints;
            let (train, test) = load_run_data(&cfg)?;
            run_to_dir(&cfg, &train, &test, &dir, |r| {
                if !quiet {
                    say(
                        out,
                        format!(
                            "round {:>3}  micro-F1 {}  macro-F1 {}  test BCE {}",
                            r.round,
                            sig6(r.micro_f1),
                            sig6(r.macro_f1),
                            sig6(r.test_bce)
                        ),
                    );
                }
            })?;
        }
        Command::Report {
            inputs,
            format,
            table,
            out: target,
        } => {
            let text = render_report(&load_runs(&inputs)?, table, format);
            match target {
                Some(p) => write_file(&p, &text)?,
                None => {
                    let _ = out.write_all(text.as_bytes());
                }
            }
        }
        Command::Gradcheck { seeds } => {
            if seeds.is_empty() {
                return Err(Error::Usage("gradcheck needs at least one seed".into()));
            }
            let cases = run_gradient_suite(&seeds)?;
            for c in &cases {
                let kind = match c.kind {
                    CaseKind::Primitive => "primitive",
                    CaseKind::Model => "model",
                };
                let verdict = if c.passed() { "ok" } else { "FAIL" };
                say(out, format!("{verdict:<4} {kind:<9} {:<28} worst {:.3e} (tol {:.0e})", c.name, c.worst, c.tolerance));
            }
            let failed = cases.iter().filter(|c| !c.passed()).count();
            if failed > 0 {
                return Err(Error::Failed(format!("{failed} gradient checks failed")));
            }
        }
    }
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
