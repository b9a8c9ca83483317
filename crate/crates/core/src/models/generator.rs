use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Activation, Mat};

/// Two-layer softplus network `SP(W2·SP(W1·h + b1) + b2)`.
///
/// Serves as the GAN/WGAN generator (Gaussian input), the autoencoding-WGAN
/// generator and the ML autoencoder (data-frame input).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

/// Activations saved by [`GeneratorParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct GeneratorCache {
    input: Mat,
    pre_hidden: Mat,
    hidden: Mat,
    pre_output: Mat,
}

#[derive(Debug, Clone)]
pub struct GeneratorGrads {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
    pub input: Mat,
}

impl GeneratorGrads {
    pub fn into_param_grads(self) -> Vec<Mat> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }
}

impl GeneratorParams {
    pub fn zeros(input_dim: usize, hidden: usize, output_dim: usize) -> Self {
        Self {
            w1: Mat::zeros(hidden, input_dim),
            b1: Mat::zeros(hidden, 1),
            w2: Mat::zeros(output_dim, hidden),
            b2: Mat::zeros(output_dim, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, i) = self.w1.shape();
        self.b1.ensure_shape(h, 1, "generator b1")?;
        self.w2.ensure_shape(self.w2.rows(), h, "generator w2")?;
        self.b2.ensure_shape(self.w2.rows(), 1, "generator b2")?;
        if i == 0 || h == 0 || self.w2.rows() == 0 {
            return Err(Error::dim("generator has an empty layer"));
        }
        Ok(())
    }

    pub fn params(&self) -> [&Mat; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> [&mut Mat; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Maps a `input_dim × T` batch to strictly positive `output_dim × T` frames.
    pub fn forward(&self, input: &Mat) -> Result<(Mat, GeneratorCache)> {
        if input.rows() != self.input_dim() {
            return Err(Error::dim(format!(
                "generator expects {}-dimensional inputs, got {}",
                self.input_dim(),
                input.rows()
            )));
        }
        let mut pre_hidden = self.w1.matmul(input)?;
        pre_hidden.add_column_broadcast(&self.b1)?;
        let hidden = Activation::Softplus.forward(&pre_hidden);
        let mut pre_output = self.w2.matmul(&hidden)?;
        pre_output.add_column_broadcast(&self.b2)?;
        let output = Activation::Softplus.forward(&pre_output);
        Ok((output, GeneratorCache { input: input.clone(), pre_hidden, hidden, pre_output }))
    }

    fn check_cache(&self, cache: &GeneratorCache, upstream: &Mat) -> Result<()> {
        let t = cache.input.cols();
        if cache.input.rows() != self.input_dim()
            || cache.pre_hidden.shape() != (self.hidden_dim(), t)
            || cache.pre_output.shape() != (self.output_dim(), t)
        {
            return Err(Error::Usage("generator cache does not match these parameters".into()));
        }
        upstream.ensure_shape(self.output_dim(), t, "generator upstream gradient")
    }

    /// Gradients at the output and hidden pre-activations.
    fn deltas(&self, cache: &GeneratorCache, upstream: &Mat) -> Result<(Mat, Mat)> {
        self.check_cache(cache, upstream)?;
        let mut d_out = upstream.clone();
        d_out.zip_apply(&cache.pre_output, |g, a| *g *= Activation::Softplus.derivative(a))?;
        let mut d_hidden = self.w2.matmul_tn(&d_out)?;
        d_hidden.zip_apply(&cache.pre_hidden, |g, a| *g *= Activation::Softplus.derivative(a))?;
        Ok((d_out, d_hidden))
    }

    /// Gradients of `Σ upstream ⊙ output` with respect to every parameter and the input.
    pub fn backward(&self, cache: &GeneratorCache, upstream: &Mat) -> Result<GeneratorGrads> {
        let (d_out, d_hidden) = self.deltas(cache, upstream)?;
        Ok(GeneratorGrads {
            w2: d_out.matmul_nt(&cache.hidden)?,
            b2: d_out.sum_columns(),
            w1: d_hidden.matmul_nt(&cache.input)?,
            b1: d_hidden.sum_columns(),
            input: self.w1.matmul_tn(&d_hidden)?,
        })
    }

    /// Parameter gradients only, in [`params`](Self::params) order.
    pub fn backward_params(&self, cache: &GeneratorCache, upstream: &Mat) -> Result<Vec<Mat>> {
        let (d_out, d_hidden) = self.deltas(cache, upstream)?;
        Ok(vec![
            d_hidden.matmul_nt(&cache.input)?,
            d_hidden.sum_columns(),
            d_out.matmul_nt(&cache.hidden)?,
            d_out.sum_columns(),
        ])
    }

    /// Input gradient only.
    pub fn backward_input(&self, cache: &GeneratorCache, upstream: &Mat) -> Result<Mat> {
        let (_, d_hidden) = self.deltas(cache, upstream)?;
        self.w1.matmul_tn(&d_hidden)
    }
}
