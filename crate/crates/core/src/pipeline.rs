//! One experiment cell end to end: train a model per source, separate the
//! pair's mixture, reconstruct waveforms with Wiener masks and score them.

use crate::corpus::{derive_seed, ExperimentPair};
use crate::error::{Error, Result};
use crate::evaluation::{score_pair, PairScores};
use crate::models::ModelKind;
use crate::separation::{separate, SeparationConfig, SeparationResult};
use crate::signal::{magnitude_phase, stft, wiener_reconstruct, StftConfig, Waveform};
use crate::training::{train, TrainConfig, TrainedSourceModel};

/// Training configuration for source `index` of `pair`: `kind` replaces the
/// configured model kind and the seed is derived from the run seed, the pair
/// seed and the source index.
pub fn source_train_config(base: &TrainConfig, kind: ModelKind, pair_seed: u64, index: usize) -> TrainConfig {
    TrainConfig { model_kind: kind, seed: derive_seed(base.seed ^ pair_seed, index as u64), ..base.clone() }
}

pub fn pair_separation_config(base: &SeparationConfig, pair_seed: u64) -> SeparationConfig {
    SeparationConfig { seed: derive_seed(base.seed ^ pair_seed, 2), ..base.clone() }
}

/// Trains one model per source of `pair` on its training utterances.
pub fn train_pair_models(
    pair: &ExperimentPair,
    kind: ModelKind,
    base: &TrainConfig,
    stft_cfg: &StftConfig,
) -> Result<[TrainedSourceModel; 2]> {
    if base.dims.data_dim != stft_cfg.bins() {
        return Err(Error::config(format!(
            "models expect {} bins but the analysis yields {}",
            base.dims.data_dim,
            stft_cfg.bins()
        )));
    }
    let fit = |k: usize| -> Result<TrainedSourceModel> {
        let frames = pair.sources[k].train_frames(stft_cfg)?;
        train(&frames.mag, &source_train_config(base, kind, pair.seed, k))
    };
    Ok([fit(0)?, fit(1)?])
}

#[derive(Debug, Clone)]
pub struct Separated {
    pub result: SeparationResult,
    pub estimates: [Waveform; 2],
}

/// Separates a time-domain mixture and returns Wiener-masked estimates of the
/// same length.
pub fn separate_waveform(
    mixture: &Waveform,
    models: [&TrainedSourceModel; 2],
    cfg: &SeparationConfig,
    stft_cfg: &StftConfig,
) -> Result<Separated> {
    stft_cfg.validate()?;
    if mixture.sample_rate != stft_cfg.sample_rate {
        return Err(Error::input(format!(
            "mixture at {} Hz, analysis configured for {} Hz",
            mixture.sample_rate, stft_cfg.sample_rate
        )));
    }
    let (mag, phase) = magnitude_phase(&stft(mixture, stft_cfg.n_fft, stft_cfg.hop)?);
    let result = separate(&mag, models[0], models[1], cfg)?;
    let (e1, e2) = wiener_reconstruct(&result.s1_hat.mag, &result.s2_hat.mag, &mag, &phase)?;
    Ok(Separated { result, estimates: [e1, e2] })
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub pair_id: usize,
    pub kind: ModelKind,
    pub models: [TrainedSourceModel; 2],
    pub separated: Separated,
    pub scores: PairScores,
}

pub fn run_cell(
    pair: &ExperimentPair,
    kind: ModelKind,
    train_cfg: &TrainConfig,
    sep_cfg: &SeparationConfig,
    stft_cfg: &StftConfig,
) -> Result<CellOutcome> {
    let models = train_pair_models(pair, kind, train_cfg, stft_cfg)?;
    let separated =
        separate_waveform(&pair.mixture, [&models[0], &models[1]], &pair_separation_config(sep_cfg, pair.seed), stft_cfg)?;
    let refs = [&pair.references[0], &pair.references[1]];
    let scores = score_pair([&separated.estimates[0], &separated.estimates[1]], refs)?;
    Ok(CellOutcome { pair_id: pair.id, kind, models, separated, scores })
}
