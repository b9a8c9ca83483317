use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{clip_inplace, Activation, Mat};

/// Output head of a critic: sigmoid for a GAN discriminator, identity for a
/// Wasserstein critic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticOutput {
    Sigmoid,
    Identity,
}

impl CriticOutput {
    fn activation(self) -> Activation {
        match self {
            CriticOutput::Sigmoid => Activation::Sigmoid,
            CriticOutput::Identity => Activation::Identity,
        }
    }
}

/// `σ(V2·tanh(V1·s + c1) + c2)`, one scalar score per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticParams {
    pub v1: Mat,
    pub c1: Mat,
    pub v2: Mat,
    pub c2: Mat,
    pub output: CriticOutput,
}

#[derive(Debug, Clone)]
pub struct CriticCache {
    input: Mat,
    hidden: Mat,
    logits: Mat,
}

impl CriticCache {
    /// Pre-head values `V2·tanh(·) + c2`, `1 × T`.
    pub fn logits(&self) -> &Mat {
        &self.logits
    }
}

#[derive(Debug, Clone)]
pub struct CriticGrads {
    pub v1: Mat,
    pub c1: Mat,
    pub v2: Mat,
    pub c2: Mat,
    pub input: Mat,
}

impl CriticGrads {
    pub fn into_param_grads(self) -> Vec<Mat> {
        vec![self.v1, self.c1, self.v2, self.c2]
    }
}

impl CriticParams {
    pub fn zeros(input_dim: usize, hidden: usize, output: CriticOutput) -> Self {
        Self {
            v1: Mat::zeros(hidden, input_dim),
            c1: Mat::zeros(hidden, 1),
            v2: Mat::zeros(1, hidden),
            c2: Mat::zeros(1, 1),
            output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.v1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.v1.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_dim();
        self.c1.ensure_shape(h, 1, "critic c1")?;
        self.v2.ensure_shape(1, h, "critic v2")?;
        self.c2.ensure_shape(1, 1, "critic c2")?;
        if h == 0 || self.input_dim() == 0 {
            return Err(Error::dim("critic has an empty layer"));
        }
        Ok(())
    }

    pub fn params(&self) -> [&Mat; 4] {
        [&self.v1, &self.c1, &self.v2, &self.c2]
    }

    pub fn params_mut(&mut self) -> [&mut Mat; 4] {
        [&mut self.v1, &mut self.c1, &mut self.v2, &mut self.c2]
    }

    /// Clamps every weight and bias into `[lo, hi]`.
    pub fn clip(&mut self, lo: f64, hi: f64) -> Result<()> {
        for p in self.params_mut() {
            clip_inplace(p, lo, hi)?;
        }
        Ok(())
    }

    pub fn max_abs_param(&self) -> f64 {
        self.params().iter().map(|p| p.max_abs()).fold(0.0, f64::max)
    }

    pub fn forward(&self, input: &Mat) -> Result<(Mat, CriticCache)> {
        if input.rows() != self.input_dim() {
            return Err(Error::dim(format!(
                "critic expects {}-dimensional frames, got {}",
                self.input_dim(),
                input.rows()
            )));
        }
        let mut hidden = self.v1.matmul(input)?;
        hidden.add_column_broadcast(&self.c1)?;
        hidden.map_inplace(f64::tanh);
        let mut logits = self.v2.matmul(&hidden)?;
        logits.add_column_broadcast(&self.c2)?;
        let scores = self.output.activation().forward(&logits);
        Ok((scores, CriticCache { input: input.clone(), hidden, logits }))
    }

    /// Gradients of `Σ upstream ⊙ scores`.
    pub fn backward(&self, cache: &CriticCache, upstream: &Mat) -> Result<CriticGrads> {
        self.check_cache(cache)?;
        upstream.ensure_same_shape(&cache.logits, "critic upstream gradient")?;
        let act = self.output.activation();
        let d_logits = upstream.zip_map(&cache.logits, |g, a| g * act.derivative(a))?;
        self.backward_from_logits(cache, &d_logits)
    }

    /// Same as [`backward`](Self::backward) but starting from a gradient with
    /// respect to the pre-head logits, which keeps log-sigmoid objectives
    /// stable when the sigmoid saturates.
    pub fn backward_from_logits(&self, cache: &CriticCache, d_logits: &Mat) -> Result<CriticGrads> {
        self.check_cache(cache)?;
        d_logits.ensure_same_shape(&cache.logits, "critic logit gradient")?;
        let mut d_hidden = self.v2.matmul_tn(d_logits)?;
        d_hidden.zip_apply(&cache.hidden, |g, z| *g *= 1.0 - z * z)?;
        Ok(CriticGrads {
            v2: d_logits.matmul_nt(&cache.hidden)?,
            c2: d_logits.sum_columns(),
            v1: d_hidden.matmul_nt(&cache.input)?,
            c1: d_hidden.sum_columns(),
            input: self.v1.matmul_tn(&d_hidden)?,
        })
    }

    /// Parameter gradients from logit gradients, in [`params`](Self::params)
    /// order; skips the input gradient.
    pub fn backward_params_from_logits(&self, cache: &CriticCache, d_logits: &Mat) -> Result<Vec<Mat>> {
        self.check_cache(cache)?;
        d_logits.ensure_same_shape(&cache.logits, "critic logit gradient")?;
        let mut d_hidden = self.v2.matmul_tn(d_logits)?;
        d_hidden.zip_apply(&cache.hidden, |g, z| *g *= 1.0 - z * z)?;
        Ok(vec![
            d_hidden.matmul_nt(&cache.input)?,
            d_hidden.sum_columns(),
            d_logits.matmul_nt(&cache.hidden)?,
            d_logits.sum_columns(),
        ])
    }

    fn check_cache(&self, cache: &CriticCache) -> Result<()> {
        let t = cache.input.cols();
        if cache.input.rows() != self.input_dim()
            || cache.hidden.shape() != (self.hidden_dim(), t)
            || cache.logits.shape() != (1, t)
        {
            return Err(Error::Usage("critic cache does not match these parameters".into()));
        }
        Ok(())
    }
}
