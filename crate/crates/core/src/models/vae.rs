use serde::{Deserialize, Serialize};

use super::poisson::poisson_fit;
use crate::error::{Error, Result};
use crate::math::{Activation, Mat};

/// Gaussian-latent VAE with a ReLU encoder, linear mean/log-variance heads
/// and a single softplus decoder layer producing Poisson rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeParams {
    pub enc_w1: Mat,
    pub enc_b1: Mat,
    pub mu_w2: Mat,
    pub mu_b2: Mat,
    pub logvar_w2: Mat,
    pub logvar_b2: Mat,
    pub dec_w3: Mat,
    pub dec_b3: Mat,
}

/// Values produced by [`vae_forward`].
#[derive(Debug, Clone)]
pub struct VaeOutput {
    pub rate: Mat,
    pub mu: Mat,
    pub logvar: Mat,
    pub z: Mat,
}

#[derive(Debug, Clone)]
pub struct VaeCache {
    input: Mat,
    noise: Mat,
    pre_hidden: Mat,
    hidden: Mat,
    pre_rate: Mat,
}

/// Decoder activations for latent-space backpropagation.
#[derive(Debug, Clone)]
pub struct DecoderCache {
    z: Mat,
    pre_rate: Mat,
}

/// ELBO split into its two parts, summed over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Elbo {
    pub value: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

impl VaeParams {
    pub fn zeros(data_dim: usize, hidden: usize, latent: usize) -> Self {
        Self {
            enc_w1: Mat::zeros(hidden, data_dim),
            enc_b1: Mat::zeros(hidden, 1),
            mu_w2: Mat::zeros(latent, hidden),
            mu_b2: Mat::zeros(latent, 1),
            logvar_w2: Mat::zeros(latent, hidden),
            logvar_b2: Mat::zeros(latent, 1),
            dec_w3: Mat::zeros(data_dim, latent),
            dec_b3: Mat::zeros(data_dim, 1),
        }
    }

    pub fn data_dim(&self) -> usize {
        self.enc_w1.cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_w2.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d) = self.enc_w1.shape();
        let l = self.latent_dim();
        self.enc_b1.ensure_shape(h, 1, "vae enc_b1")?;
        self.mu_w2.ensure_shape(l, h, "vae mu_w2")?;
        self.mu_b2.ensure_shape(l, 1, "vae mu_b2")?;
        self.logvar_w2.ensure_shape(l, h, "vae logvar_w2")?;
        self.logvar_b2.ensure_shape(l, 1, "vae logvar_b2")?;
        self.dec_w3.ensure_shape(d, l, "vae dec_w3")?;
        self.dec_b3.ensure_shape(d, 1, "vae dec_b3")
    }

    pub fn params(&self) -> [&Mat; 8] {
        [
            &self.enc_w1,
            &self.enc_b1,
            &self.mu_w2,
            &self.mu_b2,
            &self.logvar_w2,
            &self.logvar_b2,
            &self.dec_w3,
            &self.dec_b3,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Mat; 8] {
        [
            &mut self.enc_w1,
            &mut self.enc_b1,
            &mut self.mu_w2,
            &mut self.mu_b2,
            &mut self.logvar_w2,
            &mut self.logvar_b2,
            &mut self.dec_w3,
            &mut self.dec_b3,
        ]
    }

    /// Poisson rates `SP(W3·z + b3)` for a `latent × T` batch.
    pub fn decode(&self, z: &Mat) -> Result<(Mat, DecoderCache)> {
        if z.rows() != self.latent_dim() {
            return Err(Error::dim(format!(
                "decoder expects {}-dimensional latents, got {}",
                self.latent_dim(),
                z.rows()
            )));
        }
        let mut pre_rate = self.dec_w3.matmul(z)?;
        pre_rate.add_column_broadcast(&self.dec_b3)?;
        let rate = Activation::Softplus.forward(&pre_rate);
        Ok((rate, DecoderCache { z: z.clone(), pre_rate }))
    }

    /// Gradient of `Σ upstream ⊙ rate` with respect to the latents.
    pub fn decode_backward_input(&self, cache: &DecoderCache, upstream: &Mat) -> Result<Mat> {
        if cache.z.rows() != self.latent_dim() || cache.pre_rate.rows() != self.data_dim() {
            return Err(Error::Usage("decoder cache does not match these parameters".into()));
        }
        upstream.ensure_same_shape(&cache.pre_rate, "decoder upstream gradient")?;
        let d_pre = upstream.zip_map(&cache.pre_rate, |g, a| g * Activation::Softplus.derivative(a))?;
        self.dec_w3.matmul_tn(&d_pre)
    }
}

/// Encodes `S` (`data × T`), draws `z = μ + exp(½ log σ²) ⊙ noise`, decodes.
pub fn vae_forward(p: &VaeParams, s: &Mat, noise: &Mat) -> Result<(VaeOutput, VaeCache)> {
    if s.rows() != p.data_dim() {
        return Err(Error::dim(format!(
            "vae expects {}-dimensional frames, got {}",
            p.data_dim(),
            s.rows()
        )));
    }
    noise.ensure_shape(p.latent_dim(), s.cols(), "vae noise")?;
    let mut pre_hidden = p.enc_w1.matmul(s)?;
    pre_hidden.add_column_broadcast(&p.enc_b1)?;
    let hidden = Activation::Relu.forward(&pre_hidden);
    let mut mu = p.mu_w2.matmul(&hidden)?;
    mu.add_column_broadcast(&p.mu_b2)?;
    let mut logvar = p.logvar_w2.matmul(&hidden)?;
    logvar.add_column_broadcast(&p.logvar_b2)?;
    let mut z = logvar.zip_map(noise, |lv, e| (0.5 * lv).exp() * e)?;
    z.add_assign(&mu)?;
    let (rate, dec) = p.decode(&z)?;
    Ok((
        VaeOutput { rate, mu, logvar, z },
        VaeCache {
            input: s.clone(),
            noise: noise.clone(),
            pre_hidden,
            hidden,
            pre_rate: dec.pre_rate,
        },
    ))
}

/// `KL(N(μ, σ²) ‖ N(0, 1))` summed over latents and frames.
pub fn gaussian_kl(mu: &Mat, logvar: &Mat) -> f64 {
    mu.data()
        .iter()
        .zip(logvar.data())
        .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
        .sum()
}

/// Single-sample evidence lower bound (to be maximized) and its gradient
/// with respect to every parameter, in [`VaeParams::params`] order.
pub fn vae_elbo(p: &VaeParams, s: &Mat, noise: &Mat) -> Result<(Elbo, Vec<Mat>)> {
    let (out, cache) = vae_forward(p, s, noise)?;
    let (fit, d_rate) = poisson_fit(s, &out.rate)?;
    let kl = gaussian_kl(&out.mu, &out.logvar);

    // d ELBO / d rate = −(1 − s/rate)
    let d_pre_rate =
        d_rate.zip_map(&cache.pre_rate, |g, a| -g * Activation::Softplus.derivative(a))?;
    let d_w3 = d_pre_rate.matmul_nt(&out.z)?;
    let d_b3 = d_pre_rate.sum_columns();
    let d_z = p.dec_w3.matmul_tn(&d_pre_rate)?;

    // z = μ + exp(lv/2)·ε ; −KL contributes −μ and −½(exp(lv) − 1)
    let d_mu = d_z.zip_map(&out.mu, |g, m| g - m)?;
    let mut d_logvar = Mat::zeros(out.logvar.rows(), out.logvar.cols());
    for i in 0..d_logvar.len() {
        let lv = out.logvar.data()[i];
        let e = cache.noise.data()[i];
        let half = (0.5 * lv).exp();
        d_logvar.data_mut()[i] = d_z.data()[i] * e * 0.5 * half - 0.5 * (lv.exp() - 1.0);
    }

    let d_mu_w2 = d_mu.matmul_nt(&cache.hidden)?;
    let d_mu_b2 = d_mu.sum_columns();
    let d_lv_w2 = d_logvar.matmul_nt(&cache.hidden)?;
    let d_lv_b2 = d_logvar.sum_columns();
    let mut d_hidden = p.mu_w2.matmul_tn(&d_mu)?;
    d_hidden.add_assign(&p.logvar_w2.matmul_tn(&d_logvar)?)?;
    d_hidden.zip_apply(&cache.pre_hidden, |g, a| *g *= Activation::Relu.derivative(a))?;
    let d_w1 = d_hidden.matmul_nt(&cache.input)?;
    let d_b1 = d_hidden.sum_columns();

    Ok((
        Elbo { value: -fit - kl, reconstruction: -fit, kl },
        vec![d_w1, d_b1, d_mu_w2, d_mu_b2, d_lv_w2, d_lv_b2, d_w3, d_b3],
    ))
}
