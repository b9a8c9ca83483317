//! Source models of magnitude-spectrogram frames: forward/backward passes,
//! the Poisson (unnormalized KL) fit shared by every reconstruction term,
//! and parameter initialization.

mod critic;
mod generator;
mod nmf;
mod poisson;
mod vae;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use critic::{CriticCache, CriticGrads, CriticOutput, CriticParams};
pub use generator::{GeneratorCache, GeneratorGrads, GeneratorParams};
pub use nmf::{nmf_update, nmf_update_h, nmf_update_w, NmfParams};
pub use poisson::{kl_divergence, poisson_fit, RATE_FLOOR};
pub use vae::{gaussian_kl, vae_elbo, vae_forward, DecoderCache, Elbo, VaeCache, VaeOutput, VaeParams};

use crate::error::{Error, Result};
use crate::math::Mat;

/// The six model families compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Nmf,
    MlAe,
    Vae,
    Gan,
    Wgan,
    AeWgan,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Nmf,
        ModelKind::Gan,
        ModelKind::Wgan,
        ModelKind::AeWgan,
        ModelKind::MlAe,
        ModelKind::Vae,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Nmf => "nmf",
            ModelKind::MlAe => "ml_ae",
            ModelKind::Vae => "vae",
            ModelKind::Gan => "gan",
            ModelKind::Wgan => "wgan",
            ModelKind::AeWgan => "ae_wgan",
        }
    }

    /// Trained adversarially, so a critic comes with the generator.
    pub fn has_critic(self) -> bool {
        matches!(self, ModelKind::Gan | ModelKind::Wgan | ModelKind::AeWgan)
    }

    /// Generator input is a data frame rather than a latent draw.
    pub fn feeds_data(self) -> bool {
        matches!(self, ModelKind::MlAe | ModelKind::AeWgan)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown model kind `{s}`")))
    }
}

/// Layer sizes. Defaults: 513-bin frames, 513-dim Gaussian latents, 100
/// generator hidden units, 90 critic hidden units, 100/20 VAE encoder
/// hidden/latent units and rank-100 NMF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub gen_hidden: usize,
    pub critic_hidden: usize,
    pub vae_hidden: usize,
    pub vae_latent: usize,
    pub nmf_rank: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            data_dim: 513,
            latent_dim: 513,
            gen_hidden: 100,
            critic_hidden: 90,
            vae_hidden: 100,
            vae_latent: 20,
            nmf_rank: 100,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.data_dim,
            self.latent_dim,
            self.gen_hidden,
            self.critic_hidden,
            self.vae_hidden,
            self.vae_latent,
            self.nmf_rank,
        ];
        if all.iter().any(|&d| d == 0) {
            return Err(Error::config("every model dimension must be positive"));
        }
        Ok(())
    }

    /// Dimensionality of the quantity optimized at separation time.
    pub fn input_dim(&self, kind: ModelKind) -> usize {
        match kind {
            ModelKind::Nmf => self.nmf_rank,
            ModelKind::Vae => self.vae_latent,
            ModelKind::Gan | ModelKind::Wgan => self.latent_dim,
            ModelKind::MlAe | ModelKind::AeWgan => self.data_dim,
        }
    }
}

/// Generator-side parameters of a source model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SourceParams {
    Generator(GeneratorParams),
    Vae(VaeParams),
    Nmf(NmfParams),
}

impl SourceParams {
    pub fn output_dim(&self) -> usize {
        match self {
            SourceParams::Generator(g) => g.output_dim(),
            SourceParams::Vae(v) => v.data_dim(),
            SourceParams::Nmf(n) => n.w.rows(),
        }
    }

    pub fn tensors(&self) -> Vec<&Mat> {
        match self {
            SourceParams::Generator(g) => g.params().to_vec(),
            SourceParams::Vae(v) => v.params().to_vec(),
            SourceParams::Nmf(n) => vec![&n.w],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SourceParams::Generator(g) => g.validate(),
            SourceParams::Vae(v) => v.validate(),
            SourceParams::Nmf(n) => n.validate(),
        }
    }
}

/// Freshly initialized parameters for one model kind.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialParams {
    pub source: SourceParams,
    pub critic: Option<CriticParams>,
}

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.01;

/// Weights ~ N(0, 0.01²), biases 0, NMF dictionary ~ U(0.1, 1); the same
/// seed always yields the same parameters.
pub fn init_params(kind: ModelKind, dims: &ModelDims, seed: u64) -> Result<InitialParams> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("positive std");
    let mut gauss = |r: usize, c: usize| Mat::from_fn(r, c, |_, _| normal.sample(&mut rng));

    let source = match kind {
        ModelKind::Nmf => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            SourceParams::Nmf(NmfParams {
                w: Mat::from_fn(dims.data_dim, dims.nmf_rank, |_, _| rng.random_range(0.1..1.0)),
            })
        }
        ModelKind::Vae => {
            let mut p = VaeParams::zeros(dims.data_dim, dims.vae_hidden, dims.vae_latent);
            p.enc_w1 = gauss(dims.vae_hidden, dims.data_dim);
            p.mu_w2 = gauss(dims.vae_latent, dims.vae_hidden);
            p.logvar_w2 = gauss(dims.vae_latent, dims.vae_hidden);
            p.dec_w3 = gauss(dims.data_dim, dims.vae_latent);
            SourceParams::Vae(p)
        }
        ModelKind::Gan | ModelKind::Wgan | ModelKind::MlAe | ModelKind::AeWgan => {
            let input = dims.input_dim(kind);
            let mut p = GeneratorParams::zeros(input, dims.gen_hidden, dims.data_dim);
            p.w1 = gauss(dims.gen_hidden, input);
            p.w2 = gauss(dims.data_dim, dims.gen_hidden);
            SourceParams::Generator(p)
        }
    };
    let critic = kind.has_critic().then(|| {
        let output =
            if kind == ModelKind::Gan { CriticOutput::Sigmoid } else { CriticOutput::Identity };
        let mut c = CriticParams::zeros(dims.data_dim, dims.critic_hidden, output);
        c.v1 = gauss(dims.critic_hidden, dims.data_dim);
        c.v2 = gauss(1, dims.critic_hidden);
        c
    });
    Ok(InitialParams { source, critic })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelDims {
        ModelDims {
            data_dim: 9,
            latent_dim: 7,
            gen_hidden: 5,
            critic_hidden: 4,
            vae_hidden: 5,
            vae_latent: 3,
            nmf_rank: 2,
        }
    }

    #[test]
    fn same_seed_same_params_and_different_seed_differs() {
        for kind in ModelKind::ALL {
            let a = init_params(kind, &small(), 5).unwrap();
            let b = init_params(kind, &small(), 5).unwrap();
            let c = init_params(kind, &small(), 6).unwrap();
            assert_eq!(a, b, "{kind}");
            assert_ne!(a, c, "{kind}");
            assert_eq!(a.critic.is_some(), kind.has_critic());
        }
    }

    #[test]
    fn critic_init_lands_in_clip_box_after_one_clip() {
        let mut c = init_params(ModelKind::Wgan, &ModelDims::default(), 1).unwrap().critic.unwrap();
        c.clip(-0.01, 0.01).unwrap();
        assert!(c.max_abs_param() <= 0.01);
        let once = c.clone();
        c.clip(-0.01, 0.01).unwrap();
        assert_eq!(once, c);
    }

    #[test]
    fn default_layer_shapes() {
        let dims = ModelDims::default();
        let wgan = init_params(ModelKind::Wgan, &dims, 0).unwrap();
        let SourceParams::Generator(g) = &wgan.source else { panic!() };
        assert_eq!(g.w1.shape(), (100, 513));
        assert_eq!(g.w2.shape(), (513, 100));
        let c = wgan.critic.unwrap();
        assert_eq!((c.v1.shape(), c.v2.shape()), ((90, 513), (1, 90)));
        let SourceParams::Vae(v) = init_params(ModelKind::Vae, &dims, 0).unwrap().source else {
            panic!()
        };
        assert_eq!((v.enc_w1.shape(), v.mu_w2.shape(), v.dec_w3.shape()), ((100, 513), (20, 100), (513, 20)));
        let SourceParams::Nmf(n) = init_params(ModelKind::Nmf, &dims, 0).unwrap().source else {
            panic!()
        };
        assert_eq!(n.w.shape(), (513, 100));
        assert!(n.w.min() >= 0.1 && n.w.max_abs() < 1.0);
    }

    #[test]
    fn kind_names_roundtrip() {
        for kind in ModelKind::ALL {
            assert_eq!(kind.as_str().parse::<ModelKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.as_str()));
        }
        assert!(matches!("dcgan".parse::<ModelKind>(), Err(Error::Config(_))));
    }
}
