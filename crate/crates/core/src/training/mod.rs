//! Training loops for every source model family.
//!
//! All trainers draw minibatches of `batch_size` frames uniformly with
//! replacement, use RMSprop, and check every parameter for NaN/Inf after each
//! step. Given the same data and [`TrainConfig`] they are bit-for-bit
//! deterministic.

mod adversarial;
mod checkpoint;
mod likelihood;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use adversarial::{train_gan, train_wgan};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use likelihood::{train_ml_autoencoder, train_nmf, train_vae};

use crate::error::{Error, Result};
use crate::math::{Mat, RmspropConfig};
use crate::models::{CriticParams, Elbo, ModelDims, ModelKind, SourceParams};

/// Generator objective used by the standard (sigmoid) GAN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanGeneratorLoss {
    /// Maximize `E log D(f(h))`.
    NonSaturating,
    /// Minimize `E log(1 − D(f(h)))`, the literal minimax objective.
    Minimax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    /// Generator updates for adversarial models, optimizer steps for
    /// likelihood models, full (H, W) alternations for NMF.
    pub iterations: usize,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub critic_steps_per_gen: usize,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub gan_generator_loss: GanGeneratorLoss,
    pub dims: ModelDims,
    /// Loss telemetry is recorded every `log_every` iterations.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model_kind: ModelKind::Wgan,
            iterations: 4000,
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            critic_steps_per_gen: 5,
            clip_lo: -0.01,
            clip_hi: 0.01,
            batch_size: 100,
            seed: 0,
            gan_generator_loss: GanGeneratorLoss::NonSaturating,
            dims: ModelDims::default(),
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn for_kind(model_kind: ModelKind) -> Self {
        Self { model_kind, ..Self::default() }
    }

    pub fn rmsprop(&self) -> RmspropConfig {
        RmspropConfig {
            learning_rate: self.learning_rate,
            decay: self.rmsprop_decay,
            epsilon: self.rmsprop_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0
            || self.critic_steps_per_gen == 0
            || self.batch_size == 0
            || self.log_every == 0
        {
            return Err(Error::config(
                "iterations, critic_steps_per_gen, batch_size and log_every must be positive",
            ));
        }
        if !(self.clip_lo < 0.0 && 0.0 < self.clip_hi) {
            return Err(Error::config(format!(
                "clip bounds [{}, {}] must straddle zero",
                self.clip_lo, self.clip_hi
            )));
        }
        self.rmsprop().validate()?;
        self.dims.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub iteration: usize,
    pub loss: f64,
}

/// What each trainer records as its loss:
///
/// | kind            | loss                                          |
/// |-----------------|-----------------------------------------------|
/// | nmf             | `KL(V ‖ WH)` per frame                          |
/// | ml_ae           | Poisson fit per frame on the batch            |
/// | vae             | negative ELBO per frame on the batch          |
/// | gan             | discriminator binary cross-entropy            |
/// | wgan, ae_wgan   | critic estimate `E D(s) − E D(f(h))`           |
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub loss_curve: Vec<LossPoint>,
    pub critic_updates: usize,
    pub generator_updates: usize,
    /// Largest `|param|` of the critic observed right after any critic step.
    pub max_critic_param_after_step: Option<f64>,
}

impl Telemetry {
    pub fn loss_curve_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for p in &self.loss_curve {
            out.push_str(&format!("{},{}\n", p.iteration, p.loss));
        }
        out
    }
}

/// A source model ready for separation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSourceModel {
    pub kind: ModelKind,
    pub source: SourceParams,
    pub critic: Option<CriticParams>,
    pub telemetry: Telemetry,
}

impl TrainedSourceModel {
    /// Checks that the parameter families and critic presence fit `kind`.
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        let family_ok = matches!(
            (&self.source, self.kind),
            (SourceParams::Nmf(_), ModelKind::Nmf)
                | (SourceParams::Vae(_), ModelKind::Vae)
                | (
                    SourceParams::Generator(_),
                    ModelKind::MlAe | ModelKind::Gan | ModelKind::Wgan | ModelKind::AeWgan
                )
        );
        if !family_ok {
            return Err(Error::config(format!("{} model carries the wrong parameter family", self.kind)));
        }
        if self.critic.is_some() != self.kind.has_critic() {
            return Err(Error::config(format!(
                "{} model {} a critic",
                self.kind,
                if self.kind.has_critic() { "lacks" } else { "must not carry" }
            )));
        }
        if let Some(c) = &self.critic {
            c.validate()?;
            if c.input_dim() != self.source.output_dim() {
                return Err(Error::dim("critic input does not match generator output"));
            }
        }
        Ok(())
    }

    pub fn data_dim(&self) -> usize {
        self.source.output_dim()
    }
}

/// Progress notifications delivered to an optional observer after every
/// optimizer step.
#[derive(Debug)]
pub enum TrainEvent<'a> {
    CriticStep {
        iteration: usize,
        critic: &'a CriticParams,
        critic_updates: usize,
        generator_updates: usize,
        objective: f64,
    },
    GeneratorStep {
        iteration: usize,
        critic_updates: usize,
        generator_updates: usize,
        objective: f64,
    },
    VaeStep {
        iteration: usize,
        elbo: Elbo,
    },
    Step {
        iteration: usize,
        loss: f64,
    },
}

pub type Observer<'o> = &'o mut dyn FnMut(&TrainEvent<'_>);

/// `dim × batch` matrix of i.i.d. standard normal draws.
pub fn sample_latent(batch: usize, dim: usize, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(dim, batch, |_, _| rng.sample(StandardNormal))
}

/// Uniform draw of `batch` frames (columns) with replacement.
pub fn sample_batch(data: &Mat, batch: usize, rng: &mut impl Rng) -> Mat {
    let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..data.cols())).collect();
    data.select_columns(&idx)
}

/// Minibatch RNG, on a different stream from the one seeding initialization.
pub(crate) fn training_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

pub(crate) fn check_data(data: &Mat, cfg: &TrainConfig, expected: ModelKind) -> Result<()> {
    cfg.validate()?;
    if cfg.model_kind != expected {
        return Err(Error::config(format!(
            "trainer for {expected} called with model_kind {}",
            cfg.model_kind
        )));
    }
    if data.cols() == 0 {
        return Err(Error::input("training data has no frames"));
    }
    if data.rows() != cfg.dims.data_dim {
        return Err(Error::dim(format!(
            "training frames have {} bins, model expects {}",
            data.rows(),
            cfg.dims.data_dim
        )));
    }
    if data.cols() < cfg.batch_size && expected != ModelKind::Nmf {
        return Err(Error::input(format!(
            "{} training frames is fewer than one batch of {}",
            data.cols(),
            cfg.batch_size
        )));
    }
    if data.data().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::input("training frames must be finite and non-negative"));
    }
    Ok(())
}

pub(crate) fn ensure_finite<'a>(
    tensors: impl IntoIterator<Item = &'a Mat>,
    what: &str,
    iteration: usize,
    telemetry: &Telemetry,
) -> Result<()> {
    if tensors.into_iter().all(Mat::is_finite) {
        return Ok(());
    }
    let last = telemetry.loss_curve.last().map_or(f64::NAN, |p| p.loss);
    Err(Error::Numerical(format!(
        "{what} became non-finite at iteration {iteration} (last recorded loss {last})"
    )))
}

/// Trains the model named by `cfg.model_kind`.
pub fn train(data: &Mat, cfg: &TrainConfig) -> Result<TrainedSourceModel> {
    train_observed(data, cfg, &mut |_| {})
}

pub fn train_observed(data: &Mat, cfg: &TrainConfig, observer: Observer<'_>) -> Result<TrainedSourceModel> {
    match cfg.model_kind {
        ModelKind::Wgan | ModelKind::AeWgan => adversarial::wgan(data, cfg, observer),
        ModelKind::Gan => adversarial::gan(data, cfg, observer),
        ModelKind::MlAe => likelihood::ml_autoencoder(data, cfg, observer),
        ModelKind::Vae => likelihood::vae(data, cfg, observer),
        ModelKind::Nmf => likelihood::nmf(data, cfg, observer),
    }
}
