use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use gensep::corpus::build_pair;
use gensep::evaluation::{score_pair, BssScores};
use gensep::math::Mat;
use gensep::pipeline::{separate_waveform, source_train_config, Separated};
use gensep::signal::{read_wav, write_wav, Waveform};
use gensep::training::{self, load_checkpoint, save_checkpoint, TrainedSourceModel};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::corpus_io::{load_corpus, pair_dir_name, write_corpus, CorpusManifest};
use crate::error::{io_err, CliError, CliResult};
use crate::experiment::{run_experiment, ExperimentOutcome};
use crate::{EvaluateArgs, ExperimentArgs, SeparateArgs, SynthArgs, TrainArgs};

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

pub fn synth(mut cfg: RunConfig, args: &SynthArgs) -> CliResult<CorpusManifest> {
    if let Some(n) = args.pairs {
        cfg.corpus.pairs = n;
    }
    if let Some(s) = args.train_secs {
        cfg.corpus.train_secs = s;
    }
    if let Some(s) = args.test_secs {
        cfg.corpus.test_secs = s;
    }
    cfg.validate()?;
    let pairs =
        (0..cfg.corpus.pairs).into_par_iter().map(|i| build_pair(&cfg.corpus, i)).collect::<Result<Vec<_>, _>>()?;
    let manifest = write_corpus(&cfg.out_dir, &pairs, Some(&cfg.corpus))?;
    cfg.echo(&cfg.out_dir)?;
    eprintln!("wrote {} pairs to {} (corpus hash {})", pairs.len(), cfg.out_dir.display(), manifest.corpus_hash);
    Ok(manifest)
}

/// Checkpoint paths written for one pair: `source_1.json`, `source_2.json`.
pub fn checkpoint_paths(out: &Path, pair_id: usize) -> [PathBuf; 2] {
    let dir = out.join(pair_dir_name(pair_id));
    [dir.join("source_1.json"), dir.join("source_2.json")]
}

pub fn train(mut cfg: RunConfig, args: &TrainArgs) -> CliResult<Vec<[PathBuf; 2]>> {
    if let Some(kind) = args.model {
        cfg.train.model_kind = kind;
    }
    if let Some(n) = args.iterations {
        cfg.train.iterations = n;
    }
    cfg.validate()?;
    let corpus = load_corpus(&args.corpus, cfg.stft.sample_rate)?;
    let pairs: Vec<_> = match args.pair {
        Some(id) => {
            let p = corpus.pairs.iter().find(|p| p.id == id);
            vec![p.ok_or_else(|| CliError::Data(format!("corpus has no pair {id}")))?]
        }
        None => corpus.pairs.iter().collect(),
    };
    create_dir(&cfg.out_dir)?;
    cfg.echo(&cfg.out_dir)?;
    let jobs: Vec<_> = pairs.iter().flat_map(|&p| [(p, 0usize), (p, 1)]).collect();
    jobs.par_iter().try_for_each(|&(pair, k)| -> CliResult<()> {
        let frames = pair.sources[k].train_frames(&cfg.stft)?;
        let tc = source_train_config(&cfg.train, cfg.train.model_kind, pair.seed, k);
        let model = training::train(&frames.mag, &tc)?;
        let path = &checkpoint_paths(&cfg.out_dir, pair.id)[k];
        create_dir(path.parent().expect("checkpoint has a parent"))?;
        save_checkpoint(path, &model, &tc)?;
        write_file(&path.with_file_name(format!("source_{}_loss.csv", k + 1)), &model.telemetry.loss_curve_csv())
    })?;
    eprintln!("trained {} {} model(s) into {}", jobs.len(), cfg.train.model_kind, cfg.out_dir.display());
    Ok(pairs.iter().map(|p| checkpoint_paths(&cfg.out_dir, p.id)).collect())
}

fn magnitude_csv(m: &Mat) -> String {
    let mut out = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = (0..m.cols()).map(|c| m[(r, c)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Writes `estimate_{1,2}.wav`, `estimate_{1,2}_magnitude.csv` (bins by
/// frames) and `trace.csv`.
pub fn write_separation(dir: &Path, sep: &Separated) -> CliResult<()> {
    create_dir(dir)?;
    let mags = [&sep.result.s1_hat.mag, &sep.result.s2_hat.mag];
    for (k, (w, m)) in sep.estimates.iter().zip(mags).enumerate() {
        write_wav(&dir.join(format!("estimate_{}.wav", k + 1)), w)?;
        write_file(&dir.join(format!("estimate_{}_magnitude.csv", k + 1)), &magnitude_csv(m))?;
    }
    write_file(&dir.join("trace.csv"), &sep.result.trace_csv())
}

pub fn separate(mut cfg: RunConfig, args: &SeparateArgs) -> CliResult<Separated> {
    if let Some(n) = args.iterations {
        cfg.separation.iterations = n;
    }
    if let Some(a) = args.alpha {
        cfg.separation.alpha = a;
    }
    if let Some(b) = args.beta {
        cfg.separation.beta = b;
    }
    cfg.stft.validate()?;
    cfg.separation.validate()?;
    let models: Vec<TrainedSourceModel> =
        args.checkpoints.iter().map(|p| load_checkpoint(p).map(|(m, _)| m)).collect::<Result<_, _>>()?;
    for (m, p) in models.iter().zip(&args.checkpoints) {
        if m.data_dim() != cfg.stft.bins() {
            return Err(CliError::Data(format!(
                "{} models {} bins but the analysis yields {}",
                p.display(),
                m.data_dim(),
                cfg.stft.bins()
            )));
        }
    }
    let mixture = read_wav(&args.mixture, Some(cfg.stft.sample_rate))?;
    let sep = separate_waveform(&mixture, [&models[0], &models[1]], &cfg.separation, &cfg.stft)?;
    write_separation(&cfg.out_dir, &sep)?;
    cfg.echo(&cfg.out_dir)?;
    eprintln!("wrote estimates to {}", cfg.out_dir.display());
    Ok(sep)
}

#[derive(Debug, Serialize)]
struct ScoreRow<'a> {
    source_id: &'a str,
    sdr_db: f64,
    sir_db: f64,
    sar_db: f64,
}

/// Scores CSV with rows `1`, `2` and `mean`.
pub fn scores_csv(per_source: &[BssScores; 2], mean: &BssScores) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (id, s) in [("1", &per_source[0]), ("2", &per_source[1]), ("mean", mean)] {
        w.serialize(ScoreRow { source_id: id, sdr_db: s.sdr, sir_db: s.sir, sar_db: s.sar })
            .expect("in-memory CSV write");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
}

pub fn evaluate(args: &EvaluateArgs, out: Option<&Path>) -> CliResult<()> {
    let read = |p: &PathBuf| -> CliResult<Waveform> { Ok(read_wav(p, None)?) };
    let est = [read(&args.estimates[0])?, read(&args.estimates[1])?];
    let refs = [read(&args.references[0])?, read(&args.references[1])?];
    let scores = score_pair([&est[0], &est[1]], [&refs[0], &refs[1]])?;
    if scores.swapped {
        eprintln!("note: estimates matched the references in swapped order");
    }
    let text = scores_csv(&scores.per_source, &scores.mean);
    match out {
        Some(path) => write_file(path, &text),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

pub fn experiment(mut cfg: RunConfig, args: &ExperimentArgs) -> CliResult<ExperimentOutcome> {
    if let Some(n) = args.pairs {
        cfg.corpus.pairs = n;
    }
    if let Some(m) = &args.models {
        cfg.models.clone_from(m);
    }
    if let Some(n) = args.train_iterations {
        cfg.train.iterations = n;
    }
    if let Some(n) = args.separation_iterations {
        cfg.separation.iterations = n;
    }
    cfg.record_runtime |= args.record_runtime;
    let outcome = run_experiment(&cfg, args.corpus.as_deref())?;
    eprintln!(
        "{} cells computed, {} reused; results in {}",
        outcome.computed,
        outcome.reused,
        outcome.out_dir.display()
    );
    Ok(outcome)
}
