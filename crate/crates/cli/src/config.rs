use std::fs;
use std::path::{Path, PathBuf};

use gensep::corpus::CorpusConfig;
use gensep::models::ModelKind;
use gensep::separation::SeparationConfig;
use gensep::signal::StftConfig;
use gensep::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, CliResult};

/// Everything a run depends on. Missing fields take their defaults; unknown
/// fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub stft: StftConfig,
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub separation: SeparationConfig,
    /// Model kinds compared by `experiment`, in result order.
    pub models: Vec<ModelKind>,
    /// Fill the `runtime_s` column of the results table. Off by default so
    /// the table is reproducible byte for byte; timings always go to
    /// `timings.csv`.
    pub record_runtime: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            corpus: CorpusConfig::default(),
            train: TrainConfig::default(),
            separation: SeparationConfig::default(),
            models: ModelKind::ALL.to_vec(),
            record_runtime: false,
            out_dir: PathBuf::from("gensep-out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Uses `seed` for corpus generation, training and separation alike.
    pub fn set_seed(&mut self, seed: u64) {
        self.corpus.seed = seed;
        self.train.seed = seed;
        self.separation.seed = seed;
    }

    pub fn validate(&self) -> CliResult<()> {
        self.stft.validate()?;
        self.corpus.validate()?;
        self.train.validate()?;
        self.separation.validate()?;
        if self.train.dims.data_dim != self.stft.bins() {
            return Err(CliError::Config(format!(
                "train.dims.data_dim is {} but n_fft {} yields {} bins",
                self.train.dims.data_dim,
                self.stft.n_fft,
                self.stft.bins()
            )));
        }
        if self.corpus.sample_rate != self.stft.sample_rate {
            return Err(CliError::Config(format!(
                "corpus sample rate {} differs from analysis rate {}",
                self.corpus.sample_rate, self.stft.sample_rate
            )));
        }
        if self.models.is_empty() {
            return Err(CliError::Config("models must list at least one model kind".into()));
        }
        let mut seen = self.models.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.len() {
            return Err(CliError::Config("models lists a kind twice".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Writes the resolved configuration into `dir` as `config.json`.
    pub fn echo(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join("config.json");
        fs::write(&path, self.to_json()).map_err(|e| io_err(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.train.iterations, 4000);
        assert_eq!(c.separation.iterations, 20000);
        assert_eq!(c.corpus.pairs, 25);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"train": {"iterations": 7}, "models": ["nmf"]}"#).unwrap();
        assert_eq!(c.train.iterations, 7);
        assert_eq!(c.train.batch_size, 100);
        assert_eq!(c.models, vec![ModelKind::Nmf]);
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let mut c = RunConfig::default();
        c.stft.n_fft = 512;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let c = RunConfig { models: vec![ModelKind::Nmf, ModelKind::Nmf], ..Default::default() };
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
        let mut c = RunConfig::default();
        c.train.clip_lo = 0.5;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn seed_reaches_every_stage() {
        let mut c = RunConfig::default();
        c.set_seed(42);
        assert_eq!((c.corpus.seed, c.train.seed, c.separation.seed), (42, 42, 42));
    }
}
