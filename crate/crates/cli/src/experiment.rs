//! Full comparison runs: every (pair, model) cell trains both source models,
//! separates the pair's mixture and scores the estimates.
//!
//! Output directory:
//!
//! ```text
//! config.json            resolved configuration
//! experiment.json        corpus hash, settings and the list of finished cells
//! cells/pair_000_wgan.csv         scores of one cell
//! cells/pair_000_wgan_trace.csv   separation objective trace
//! results.csv            all cells, pairs in order, models in config order
//! summary.csv            per-model distribution of pair-mean scores
//! timings.csv            wall-clock seconds per cell
//! ```
//!
//! A cell counts as finished only when it is listed in `experiment.json` and
//! its score file parses; anything else is recomputed on the next run.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use gensep::corpus::{build_pair, corpus_hash, ExperimentPair};
use gensep::evaluation::{aggregate, BssScores, Distribution};
use gensep::models::ModelKind;
use gensep::pipeline::run_cell;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus_io::load_corpus;
use crate::error::{csv_err, io_err, CliError, CliResult};

const STATE_FILE: &str = "experiment.json";
const STATE_FORMAT: &str = "gensep-experiment/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub pair_id: usize,
    pub model_kind: ModelKind,
    /// `1`, `2`, or `mean` for the average of both sources.
    pub source_id: String,
    pub sdr_db: f64,
    pub sir_db: f64,
    pub sar_db: f64,
    pub runtime_s: Option<f64>,
    pub corpus_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model_kind: ModelKind,
    pub metric: String,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CellKey {
    pair_id: usize,
    model_kind: ModelKind,
}

/// Settings that must match for finished cells to be reused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Fingerprint {
    stft: gensep::signal::StftConfig,
    train: gensep::training::TrainConfig,
    separation: gensep::separation::SeparationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExperimentState {
    format: String,
    corpus_hash: String,
    settings: Fingerprint,
    finished: Vec<CellKey>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub corpus_hash: String,
    pub computed: usize,
    pub reused: usize,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
}

fn cell_stem(key: &CellKey) -> String {
    format!("pair_{:03}_{}", key.pair_id, key.model_kind)
}

fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn to_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.into_inner().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| csv_err(path, e))
}

fn score_rows(pair_id: usize, kind: ModelKind, per_source: &[BssScores; 2], mean: &BssScores, runtime: f64, hash: &str) -> Vec<ResultRow> {
    let row = |source_id: &str, s: &BssScores| ResultRow {
        pair_id,
        model_kind: kind,
        source_id: source_id.into(),
        sdr_db: s.sdr,
        sir_db: s.sir,
        sar_db: s.sar,
        runtime_s: Some(runtime),
        corpus_hash: hash.into(),
    };
    vec![row("1", &per_source[0]), row("2", &per_source[1]), row("mean", mean)]
}

fn load_cell(cells: &Path, key: &CellKey, hash: &str) -> Option<Vec<ResultRow>> {
    let rows: Vec<ResultRow> = read_rows(&cells.join(format!("{}.csv", cell_stem(key)))).ok()?;
    let ok = rows.len() == 3
        && rows.iter().all(|r| r.pair_id == key.pair_id && r.model_kind == key.model_kind && r.corpus_hash == hash);
    ok.then_some(rows)
}

fn summarize(rows: &[ResultRow], models: &[ModelKind]) -> CliResult<Vec<SummaryRow>> {
    let mut out = Vec::new();
    for &kind in models {
        let means: Vec<BssScores> = rows
            .iter()
            .filter(|r| r.model_kind == kind && r.source_id == "mean")
            .map(|r| BssScores { sdr: r.sdr_db, sir: r.sir_db, sar: r.sar_db })
            .collect();
        if means.is_empty() {
            continue;
        }
        let s = aggregate(&means)?;
        for (metric, d) in [("sdr_db", s.sdr), ("sir_db", s.sir), ("sar_db", s.sar)] {
            let Distribution { count, min, q1, median, q3, max } = d;
            out.push(SummaryRow { model_kind: kind, metric: metric.into(), count, min, q1, median, q3, max });
        }
    }
    Ok(out)
}

fn corpus_pairs(cfg: &RunConfig, corpus_dir: Option<&Path>) -> CliResult<(Vec<ExperimentPair>, String)> {
    match corpus_dir {
        Some(dir) => {
            let c = load_corpus(dir, cfg.stft.sample_rate)?;
            Ok((c.pairs, c.hash))
        }
        None => {
            let pairs = (0..cfg.corpus.pairs)
                .into_par_iter()
                .map(|i| build_pair(&cfg.corpus, i))
                .collect::<Result<Vec<_>, _>>()?;
            let hash = corpus_hash(&pairs);
            Ok((pairs, hash))
        }
    }
}

/// Runs (or resumes) a full experiment into `cfg.out_dir`. Parallelism comes
/// from the surrounding rayon pool; each cell is computed serially.
pub fn run_experiment(cfg: &RunConfig, corpus_dir: Option<&Path>) -> CliResult<ExperimentOutcome> {
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    let cells_dir = out.join("cells");
    fs::create_dir_all(&cells_dir).map_err(|e| io_err(&cells_dir, e))?;
    cfg.echo(&out)?;

    let (pairs, hash) = corpus_pairs(cfg, corpus_dir)?;
    let settings = Fingerprint { stft: cfg.stft, train: cfg.train.clone(), separation: cfg.separation.clone() };
    let state_path = out.join(STATE_FILE);
    let mut state = ExperimentState {
        format: STATE_FORMAT.into(),
        corpus_hash: hash.clone(),
        settings: settings.clone(),
        finished: Vec::new(),
    };
    if state_path.exists() {
        let text = fs::read_to_string(&state_path).map_err(|e| io_err(&state_path, e))?;
        match serde_json::from_str::<ExperimentState>(&text) {
            Ok(prev) if prev.format == STATE_FORMAT => {
                if prev.corpus_hash != hash || prev.settings != settings {
                    return Err(CliError::Config(format!(
                        "{} holds an experiment with a different corpus or settings; use a fresh output directory",
                        out.display()
                    )));
                }
                state.finished = prev.finished;
            }
            _ => eprintln!("warning: {} unreadable, recomputing every cell", state_path.display()),
        }
    }

    let all: Vec<CellKey> = pairs
        .iter()
        .flat_map(|p| cfg.models.iter().map(move |&k| CellKey { pair_id: p.id, model_kind: k }))
        .collect();
    let mut done = Vec::new();
    let mut pending = Vec::new();
    for key in all.iter().cloned() {
        let reusable = state.finished.contains(&key) && load_cell(&cells_dir, &key, &hash).is_some();
        if reusable {
            done.push(key);
        } else {
            pending.push(key);
        }
    }
    state.finished = done.clone();
    write_atomic(&state_path, serde_json::to_string_pretty(&state).expect("state serializes").as_bytes())?;
    let reused = done.len();
    let state = Mutex::new(state);

    pending.par_iter().try_for_each(|key| -> CliResult<()> {
        let pair = pairs.iter().find(|p| p.id == key.pair_id).expect("cell built from pair list");
        let start = Instant::now();
        let outcome = run_cell(pair, key.model_kind, &cfg.train, &cfg.separation, &cfg.stft)?;
        let secs = start.elapsed().as_secs_f64();
        let rows = score_rows(key.pair_id, key.model_kind, &outcome.scores.per_source, &outcome.scores.mean, secs, &hash);
        let stem = cell_stem(key);
        let trace_path = cells_dir.join(format!("{stem}_trace.csv"));
        write_atomic(&trace_path, outcome.separated.result.trace_csv().as_bytes())?;
        let cell_path = cells_dir.join(format!("{stem}.csv"));
        write_atomic(&cell_path, &to_csv(&cell_path, &rows)?)?;
        eprintln!(
            "pair {} {}: mean SDR {:.2} dB, SIR {:.2} dB, SAR {:.2} dB ({secs:.1} s)",
            key.pair_id, key.model_kind, outcome.scores.mean.sdr, outcome.scores.mean.sir, outcome.scores.mean.sar
        );
        let mut st = state.lock().expect("no panics while holding the lock");
        st.finished.push(key.clone());
        write_atomic(&state_path, serde_json::to_string_pretty(&*st).expect("state serializes").as_bytes())
    })?;

    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for key in &all {
        let cell = load_cell(&cells_dir, key, &hash)
            .ok_or_else(|| CliError::Data(format!("cell {} vanished during the run", cell_stem(key))))?;
        for mut r in cell {
            if r.source_id == "mean" {
                timings.push((key.pair_id, key.model_kind, r.runtime_s));
            }
            if !cfg.record_runtime {
                r.runtime_s = None;
            }
            rows.push(r);
        }
    }
    let results_path = out.join("results.csv");
    write_atomic(&results_path, &to_csv(&results_path, &rows)?)?;
    let summary = summarize(&rows, &cfg.models)?;
    let summary_path = out.join("summary.csv");
    write_atomic(&summary_path, &to_csv(&summary_path, &summary)?)?;

    #[derive(Serialize)]
    struct Timing {
        pair_id: usize,
        model_kind: ModelKind,
        runtime_s: Option<f64>,
    }
    let timings: Vec<Timing> =
        timings.into_iter().map(|(pair_id, model_kind, runtime_s)| Timing { pair_id, model_kind, runtime_s }).collect();
    let timings_path = out.join("timings.csv");
    write_atomic(&timings_path, &to_csv(&timings_path, &timings)?)?;

    Ok(ExperimentOutcome { out_dir: out, corpus_hash: hash, computed: pending.len(), reused, rows, summary })
}
