//! Tables from round logs: one row per run, a Table-1 style accuracy grid
//! (algorithm × architecture against scenario) and a Table-2 style
//! complexity table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fedmix_core::fl::RoundRecord;
use fedmix_core::model::Arch;
use fedmix_core::objectives::Algo;

use crate::error::{Error, Result};

/// Formats like C's `%.6g`.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    // rounding can carry into the next decade (999999.5 → 1e6)
    let exp = if format!("{:.5e}", x.abs()).ends_with(&format!("e{}", exp + 1)) { exp + 1 } else { exp };
    if (-4..6).contains(&exp) {
        let s = format!("{:.*}", (5 - exp).max(0) as usize, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{x:.5e}");
        let (mant, e) = s.split_once('e').expect("exponent");
        let mant = if mant.contains('.') { mant.trim_end_matches('0').trim_end_matches('.') } else { mant };
        let e: i32 = e.parse().expect("exponent");
        format!("{mant}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
    }
}

/// The final state and cost of one run (one JSONL file).
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub source: PathBuf,
    pub algo: Algo,
    pub arch: Arch,
    pub scenario: String,
    pub seed: u64,
    pub rounds: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub test_bce: f64,
    /// Client wall time per round, averaged over rounds and clients.
    pub seconds_per_round: f64,
    pub shared_params: usize,
    pub bytes_per_round: usize,
}

pub fn parse_rounds(text: &str, path: &Path) -> Result<Vec<RoundRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn summarize_run(records: &[RoundRecord], source: &Path) -> Result<RunSummary> {
    let last = records
        .last()
        .ok_or_else(|| Error::format(source, "no round records"))?;
    let per_round: Vec<f64> = records
        .iter()
        .map(|r| r.clients.iter().map(|c| c.wall_seconds).sum::<f64>() / r.clients.len().max(1) as f64)
        .collect();
    Ok(RunSummary {
        source: source.to_path_buf(),
        algo: last.algo,
        arch: last.arch,
        scenario: last.scenario.clone(),
        seed: last.seed,
        rounds: records.len(),
        micro_f1: last.micro_f1,
        macro_f1: last.macro_f1,
        test_bce: last.test_bce,
        seconds_per_round: per_round.iter().sum::<f64>() / per_round.len() as f64,
        shared_params: last.shared_params,
        bytes_per_round: last.bytes,
    })
}

pub fn load_runs(paths: &[PathBuf]) -> Result<Vec<RunSummary>> {
    if paths.is_empty() {
        return Err(Error::Usage("report needs at least one round log".into()));
    }
    paths
        .iter()
        .map(|p| {
            let file = if p.is_dir() { p.join("rounds.jsonl") } else { p.clone() };
            let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
            summarize_run(&parse_rounds(&text, &file)?, &file)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn strings<const N: usize>(xs: [&str; N]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn runs_table(runs: &[RunSummary]) -> Table {
    Table {
        title: "Runs".into(),
        header: strings([
            "source",
            "algo",
            "arch",
            "scenario",
            "seed",
            "rounds",
            "micro_f1",
            "macro_f1",
            "test_bce",
            "seconds_per_round",
            "shared_params",
            "bytes_per_round",
        ]),
        rows: runs
            .iter()
            .map(|r| {
                vec![
                    r.source.display().to_string(),
                    r.algo.name().into(),
                    r.arch.name().into(),
                    r.scenario.clone(),
                    r.seed.to_string(),
                    r.rounds.to_string(),
                    sig6(r.micro_f1),
                    sig6(r.macro_f1),
                    sig6(r.test_bce),
                    sig6(r.seconds_per_round),
                    r.shared_params.to_string(),
                    r.bytes_per_round.to_string(),
                ]
            })
            .collect(),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

type CellKey = (Algo, usize);

fn arch_rank(a: Arch) -> usize {
    Arch::ALL.iter().position(|&x| x == a).expect("listed")
}

fn by_row(runs: &[RunSummary]) -> BTreeMap<CellKey, Vec<&RunSummary>> {
    let mut rows: BTreeMap<CellKey, Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        rows.entry((r.algo, arch_rank(r.arch))).or_default().push(r);
    }
    rows
}

/// Final F1 in percent, averaged over seeds: rows are algorithm ×
/// architecture, columns are scenarios.
pub fn accuracy_table(runs: &[RunSummary]) -> Table {
    let mut scenarios: Vec<&str> = runs.iter().map(|r| r.scenario.as_str()).collect();
    scenarios.sort_unstable();
    scenarios.dedup();
    let mut header = strings(["algo", "arch"]);
    for s in &scenarios {
        header.push(format!("{} micro_f1 %", s.to_uppercase()));
        header.push(format!("{} macro_f1 %", s.to_uppercase()));
    }
    let rows = by_row(runs)
        .into_iter()
        .map(|((algo, arch), cell)| {
            let mut row = vec![algo.display_name().to_string(), Arch::ALL[arch].display_name().to_string()];
            for s in &scenarios {
                let hits: Vec<&&RunSummary> = cell.iter().filter(|r| r.scenario == *s).collect();
                if hits.is_empty() {
                    row.extend(["-".to_string(), "-".to_string()]);
                } else {
                    row.push(sig6(100.0 * mean(&hits.iter().map(|r| r.micro_f1).collect::<Vec<_>>())));
                    row.push(sig6(100.0 * mean(&hits.iter().map(|r| r.macro_f1).collect::<Vec<_>>())));
                }
            }
            row
        })
        .collect();
    Table {
        title: "Final-round F1 (%), mean over seeds".into(),
        header,
        rows,
    }
}

/// Per-client local training time per round and communication cost.
pub fn complexity_table(runs: &[RunSummary]) -> Table {
    let rows = by_row(runs)
        .into_iter()
        .map(|((algo, arch), cell)| {
            vec![
                algo.display_name().to_string(),
                Arch::ALL[arch].display_name().to_string(),
                sig6(mean(&cell.iter().map(|r| r.seconds_per_round).collect::<Vec<_>>())),
                cell[0].shared_params.to_string(),
                sig6(mean(&cell.iter().map(|r| r.bytes_per_round as f64).collect::<Vec<_>>())),
            ]
        })
        .collect();
    Table {
        title: "Local training time and shared parameters".into(),
        header: strings(["algo", "arch", "seconds_per_round", "shared_params", "bytes_per_round"]),
        rows,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Markdown,
    Text,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    pub fn to_markdown(&self) -> String {
        let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
        let mut out = format!("### {}\n\n", self.title);
        out += &line(&self.header);
        out += &line(&self.header.iter().map(|_| "---".to_string()).collect::<Vec<_>>());
        for r in &self.rows {
            out += &line(r);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|i| {
                self.rows
                    .iter()
                    .map(|r| r[i].chars().count())
                    .chain([self.header[i].chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
            padded.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = format!("{}\n", self.title);
        out += &line(&self.header);
        out += &line(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>());
        for r in &self.rows {
            out += &line(r);
        }
        out
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Markdown => self.to_markdown(),
            Format::Text => self.to_text(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum TableKind {
    Runs,
    Accuracy,
    Complexity,
    All,
}

/// Renders the requested tables. CSV output holds a single table, so
/// `All` falls back to the per-run table there.
pub fn render_report(runs: &[RunSummary], table: TableKind, format: Format) -> String {
    let tables = match (table, format) {
        (TableKind::All, Format::Csv) | (TableKind::Runs, _) => vec![runs_table(runs)],
        (TableKind::Accuracy, _) => vec![accuracy_table(runs)],
        (TableKind::Complexity, _) => vec![complexity_table(runs)],
        (TableKind::All, _) => vec![runs_table(runs), accuracy_table(runs), complexity_table(runs)],
    };
    tables.iter().map(|t| t.render(format)).collect::<Vec<_>>().join("\n")
}
