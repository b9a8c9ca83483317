use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

pub fn gensep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gensep")).args(args).output().expect("binary runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("UTF-8 temp path")
}

/// Writes a configuration small enough that a full experiment takes seconds
/// and returns its path.
pub fn tiny_config(dir: &Path, models: &[&str]) -> String {
    let cfg = json!({
        "stft": {"n_fft": 64, "hop": 16, "sample_rate": 4000},
        "corpus": {"pairs": 2, "train_secs": 1.2, "test_secs": 0.4, "train_utterances": 2, "sample_rate": 4000},
        "train": {"iterations": 30, "batch_size": 20, "log_every": 5,
                  "dims": {"data_dim": 33, "latent_dim": 8, "gen_hidden": 10, "critic_hidden": 6,
                           "vae_hidden": 10, "vae_latent": 4, "nmf_rank": 5}},
        "separation": {"iterations": 40, "trace_every": 10},
        "models": models
    });
    let path = dir.join("tiny.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}
