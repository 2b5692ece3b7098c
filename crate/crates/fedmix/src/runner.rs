//! Runs an experiment to an output directory, plus the std-only pieces the
//! core leaves open: a monotonic clock and a threaded client executor.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use fedmix_core::data::{skew_report, train_test_split, MultiLabelDataset, SkewReport};
use fedmix_core::fl::{evaluate, ClientExecutor, ClientJob, ClientUpdate, Clock, Evaluation, Experiment, RoundRecord, Sequential};
use fedmix_core::fl::ExperimentConfig;
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::load_dataset;
use crate::error::{Error, Result};
use crate::fmps;

/// Seconds since construction, from the OS monotonic clock.
pub struct MonotonicClock(Instant);

impl MonotonicClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Runs each client on its own scoped thread, at most `workers` at a time.
pub struct Threaded {
    pub workers: usize,
}

impl Threaded {
    pub fn new() -> Self {
        Self {
            workers: std::thread::available_parallelism().map_or(1, usize::from),
        }
    }
}

impl Default for Threaded {
    fn default() -> Self {
        Self::new()
    }
}

impl ClientExecutor for Threaded {
    fn run_clients(&self, clients: usize, job: &ClientJob<'_>) -> Vec<fedmix_core::Result<ClientUpdate>> {
        let workers = self.workers.clamp(1, clients.max(1));
        let mut slots: Vec<Option<fedmix_core::Result<ClientUpdate>>> = (0..clients).map(|_| None).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    s.spawn(move || {
                        (w..clients)
                            .step_by(workers)
                            .map(|i| (i, job(i)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("client worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|r| r.expect("every client ran")).collect()
    }
}

/// Train and test sets for a run config.
pub fn load_run_data(cfg: &RunConfig) -> Result<(MultiLabelDataset, MultiLabelDataset)> {
    let data = load_dataset(&cfg.data)?;
    match &cfg.test_data {
        Some(p) => Ok((data, load_dataset(p)?)),
        None => {
            let (train, test) = train_test_split(data.len(), cfg.test_fraction, cfg.experiment.seed)?;
            Ok((data.subset(&train)?, data.subset(&test)?))
        }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    schema: u32,
    experiment: &'a ExperimentConfig,
    rounds: usize,
    train_samples: usize,
    test_samples: usize,
    shard_sizes: Vec<usize>,
    skew: SkewReport,
    final_round: &'a RoundRecord,
    final_evaluation: Evaluation,
    total_wall_seconds: f64,
}

fn write_json_line(out: &mut impl Write, value: &impl Serialize, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| Error::json(path, e))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))
}

/// Runs `cfg` on the given data and writes `rounds.jsonl`, `summary.json`
/// and, if requested, `checkpoints/round_NNN.fmps` under `out_dir`.
pub fn run_to_dir(
    cfg: &RunConfig,
    train: &MultiLabelDataset,
    test: &MultiLabelDataset,
    out_dir: &Path,
    mut progress: impl FnMut(&RoundRecord),
) -> Result<Vec<RoundRecord>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let clock = MonotonicClock::new();
    let threaded = Threaded::new();
    let executor: &dyn ClientExecutor = if cfg.parallel { &threaded } else { &Sequential };
    let mut exp = Experiment::new(cfg.experiment.clone(), train, test)?;

    let rounds_path = out_dir.join("rounds.jsonl");
    let file = fs::File::create(&rounds_path).map_err(|e| Error::io(&rounds_path, e))?;
    let mut rounds_out = std::io::BufWriter::new(file);
    let ckpt_dir = out_dir.join("checkpoints");
    if cfg.checkpoints {
        fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    }

    let mut records = Vec::with_capacity(cfg.experiment.rounds);
    while !exp.finished() {
        let record = exp.step(executor, &clock)?;
        write_json_line(&mut rounds_out, &record, &rounds_path)?;
        rounds_out.flush().map_err(|e| Error::io(&rounds_path, e))?;
        if cfg.checkpoints {
            let path = ckpt_dir.join(format!("round_{:03}.fmps", record.round));
            fmps::write(&path, &exp.state().global, cfg.experiment.precision)?;
        }
        progress(&record);
        records.push(record);
    }

    let ec = exp.config();
    let final_evaluation = evaluate(exp.model(), &exp.state().global, test, ec.threshold, ec.eval_batch)?;
    let summary = Summary {
        schema: crate::config::SCHEMA_VERSION,
        experiment: ec,
        rounds: records.len(),
        train_samples: train.len(),
        test_samples: test.len(),
        shard_sizes: exp.shards().iter().map(|s| s.size()).collect(),
        skew: skew_report(train, exp.shards())?,
        final_round: records.last().expect("at least one round"),
        final_evaluation,
        total_wall_seconds: clock.now_seconds(),
    };
    let summary_path = out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::json(&summary_path, e))?;
    fs::write(&summary_path, text + "\n").map_err(|e| Error::io(&summary_path, e))?;
    Ok(records)
}
