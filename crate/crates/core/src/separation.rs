//! Test-time separation: with both source models frozen, search for latent
//! trajectories whose decoded frames explain the mixture.
//!
//! The maximized objective over a `F × T` mixture `x` is
//!
//! ```text
//! J = −(1/T) Σ_t KL(x_t ‖ f₁(h₁ᵗ) + f₂(h₂ᵗ))
//!     + (α/T) Σ_t Σ_k D_k(f_k(h_kᵗ))
//!     − (β/(T−1)) Σ_t Σ_k ‖f_k(h_kᵗ⁺¹) − f_k(h_kᵗ)‖₁
//! ```
//!
//! where the critic term is present only for models trained with a critic
//! (`log D` for a sigmoid discriminator, raw `D` for a Wasserstein critic)
//! and the smoothness term only when `T ≥ 2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid_scalar, softplus_scalar, Direction, Mat, RmspropConfig, RmspropState};
use crate::models::{
    kl_divergence, nmf_update_h, poisson_fit, CriticOutput, CriticParams, DecoderCache, GeneratorCache,
    GeneratorParams, ModelKind, SourceParams, VaeParams,
};
use crate::signal::MagnitudeSpectrogram;
use crate::training::{sample_latent, TrainedSourceModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparationConfig {
    /// Weight of the critic term.
    pub alpha: f64,
    /// Weight of the temporal smoothness penalty.
    pub beta: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// The objective is recorded every `trace_every` iterations.
    pub trace_every: usize,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 0.1, iterations: 20000, learning_rate: 0.001, seed: 0, trace_every: 100 }
    }
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!(
                "alpha ({}) and beta ({}) must be finite and non-negative",
                self.alpha, self.beta
            )));
        }
        if self.iterations == 0 || self.trace_every == 0 {
            return Err(Error::config("iterations and trace_every must be positive"));
        }
        self.rmsprop().validate()
    }

    fn rmsprop(&self) -> RmspropConfig {
        RmspropConfig { learning_rate: self.learning_rate, ..RmspropConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub objective: f64,
    /// Running maximum of `objective` up to this point.
    pub best: f64,
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub s1_hat: MagnitudeSpectrogram,
    pub s2_hat: MagnitudeSpectrogram,
    /// Final latents per source: inputs for neural models, activations for NMF.
    pub latents: [Mat; 2],
    pub trace: Vec<TracePoint>,
}

impl SeparationResult {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,objective,best\n");
        for p in &self.trace {
            out.push_str(&format!("{},{},{}\n", p.iteration, p.objective, p.best));
        }
        out
    }
}

/// Objective value with its gradients with respect to both latent matrices.
#[derive(Debug, Clone)]
pub struct ObjectiveGrad {
    pub value: f64,
    pub h1: Mat,
    pub h2: Mat,
}

#[derive(Clone, Copy)]
enum Decoder<'a> {
    Generator(&'a GeneratorParams),
    Vae(&'a VaeParams),
}

enum DecoderTape {
    Generator(GeneratorCache),
    Vae(DecoderCache),
}

#[derive(Clone, Copy)]
struct Source<'a> {
    decoder: Decoder<'a>,
    critic: Option<&'a CriticParams>,
}

impl<'a> Source<'a> {
    fn new(m: &'a TrainedSourceModel) -> Result<Self> {
        let decoder = match &m.source {
            SourceParams::Generator(g) => Decoder::Generator(g),
            SourceParams::Vae(v) => Decoder::Vae(v),
            SourceParams::Nmf(_) => {
                return Err(Error::config("NMF models have no latent decoder; use nmf_separate"));
            }
        };
        Ok(Self { decoder, critic: m.critic.as_ref() })
    }

    fn input_dim(&self) -> usize {
        match self.decoder {
            Decoder::Generator(g) => g.input_dim(),
            Decoder::Vae(v) => v.latent_dim(),
        }
    }

    fn forward(&self, h: &Mat) -> Result<(Mat, DecoderTape)> {
        match self.decoder {
            Decoder::Generator(g) => g.forward(h).map(|(s, c)| (s, DecoderTape::Generator(c))),
            Decoder::Vae(v) => v.decode(h).map(|(s, c)| (s, DecoderTape::Vae(c))),
        }
    }

    fn backward(&self, tape: &DecoderTape, upstream: &Mat) -> Result<Mat> {
        match (self.decoder, tape) {
            (Decoder::Generator(g), DecoderTape::Generator(c)) => g.backward_input(c, upstream),
            (Decoder::Vae(v), DecoderTape::Vae(c)) => v.decode_backward_input(c, upstream),
            _ => unreachable!("tape produced by the same decoder"),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_mixture(x: &Mat, data_dim: usize) -> Result<()> {
    if x.rows() != data_dim {
        return Err(Error::dim(format!("mixture has {} bins, models expect {data_dim}", x.rows())));
    }
    if x.cols() == 0 {
        return Err(Error::input("mixture has no frames"));
    }
    if x.data().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::input("mixture magnitudes must be finite and non-negative"));
    }
    Ok(())
}

fn check_pair(m1: &TrainedSourceModel, m2: &TrainedSourceModel) -> Result<()> {
    m1.validate()?;
    m2.validate()?;
    if m1.kind != m2.kind {
        return Err(Error::config(format!("cannot pair a {} model with a {} model", m1.kind, m2.kind)));
    }
    if m1.data_dim() != m2.data_dim() {
        return Err(Error::dim(format!(
            "source models emit {} and {} bins",
            m1.data_dim(),
            m2.data_dim()
        )));
    }
    Ok(())
}

fn evaluate(
    x: &Mat,
    sources: [Source<'_>; 2],
    latents: [&Mat; 2],
    alpha: f64,
    beta: f64,
    want_grad: bool,
) -> Result<(f64, Option<[Mat; 2]>)> {
    let t = x.cols();
    for (k, (src, h)) in sources.iter().zip(latents).enumerate() {
        h.ensure_shape(src.input_dim(), t, &format!("latents of source {}", k + 1))?;
    }
    let (s1, tape1) = sources[0].forward(latents[0])?;
    let (s2, tape2) = sources[1].forward(latents[1])?;
    let inv_t = 1.0 / t as f64;

    let (fit, d_rate) = poisson_fit(x, &s1.add(&s2)?)?;
    let mut value = -fit * inv_t;
    let d_recon = d_rate.scale(-inv_t);
    let mut grads = [d_recon.clone(), d_recon];

    for (k, s) in [&s1, &s2].into_iter().enumerate() {
        if let (Some(critic), true) = (sources[k].critic, alpha > 0.0) {
            let (scores, cache) = critic.forward(s)?;
            let scale = alpha * inv_t;
            let d_logits = match critic.output {
                CriticOutput::Identity => {
                    value += scale * scores.sum();
                    Mat::filled(1, t, scale)
                }
                CriticOutput::Sigmoid => {
                    // log σ(a) = −softplus(−a), derivative σ(−a)
                    value -= scale * cache.logits().data().iter().map(|&a| softplus_scalar(-a)).sum::<f64>();
                    cache.logits().map(|a| scale * sigmoid_scalar(-a))
                }
            };
            if want_grad {
                grads[k].add_assign(&critic.backward_from_logits(&cache, &d_logits)?.input)?;
            }
        }

        if beta > 0.0 && t >= 2 {
            let c = beta / (t - 1) as f64;
            let mut penalty = 0.0;
            let g = &mut grads[k];
            for r in 0..s.rows() {
                let row = s.row(r);
                for j in 0..t - 1 {
                    let d = row[j + 1] - row[j];
                    penalty += d.abs();
                    let sg = c * sign(d);
                    g[(r, j + 1)] -= sg;
                    g[(r, j)] += sg;
                }
            }
            value -= c * penalty;
        }
    }

    if !want_grad {
        return Ok((value, None));
    }
    let [g1, g2] = grads;
    let h1 = sources[0].backward(&tape1, &g1)?;
    let h2 = sources[1].backward(&tape2, &g2)?;
    Ok((value, Some([h1, h2])))
}

/// Value of the separation objective at the given latents.
pub fn objective(
    x: &Mat,
    m1: &TrainedSourceModel,
    m2: &TrainedSourceModel,
    h1: &Mat,
    h2: &Mat,
    cfg: &SeparationConfig,
) -> Result<f64> {
    check_pair(m1, m2)?;
    check_mixture(x, m1.data_dim())?;
    let sources = [Source::new(m1)?, Source::new(m2)?];
    Ok(evaluate(x, sources, [h1, h2], cfg.alpha, cfg.beta, false)?.0)
}

/// Objective and its gradient with respect to both latent matrices. The L1
/// penalty uses the subgradient `sign(0) = 0`.
pub fn objective_grad(
    x: &Mat,
    m1: &TrainedSourceModel,
    m2: &TrainedSourceModel,
    h1: &Mat,
    h2: &Mat,
    cfg: &SeparationConfig,
) -> Result<ObjectiveGrad> {
    check_pair(m1, m2)?;
    check_mixture(x, m1.data_dim())?;
    let sources = [Source::new(m1)?, Source::new(m2)?];
    let (value, grads) = evaluate(x, sources, [h1, h2], cfg.alpha, cfg.beta, true)?;
    let [h1, h2] = grads.expect("gradient requested");
    Ok(ObjectiveGrad { value, h1, h2 })
}

/// Starting latents: standard normal for Gaussian-input models, the mixture
/// frames themselves for models whose input is a data frame.
fn initial_latents(kind: ModelKind, sources: &[Source<'_>; 2], x: &Mat, rng: &mut ChaCha8Rng) -> [Mat; 2] {
    let t = x.cols();
    let mut init = |src: &Source<'_>| {
        if kind.feeds_data() {
            x.clone()
        } else {
            sample_latent(t, src.input_dim(), rng)
        }
    };
    let h1 = init(&sources[0]);
    let h2 = init(&sources[1]);
    [h1, h2]
}

fn push_trace(trace: &mut Vec<TracePoint>, iteration: usize, objective: f64) -> Result<()> {
    if !objective.is_finite() {
        return Err(Error::Numerical(format!("separation objective became {objective} at iteration {iteration}")));
    }
    let best = trace.last().map_or(objective, |p| p.best.max(objective));
    trace.push(TracePoint { iteration, objective, best });
    Ok(())
}

/// Separates `x` into two source magnitude estimates. NMF pairs are routed to
/// [`nmf_separate`]; every other kind runs RMSprop ascent on the latents of
/// both sources jointly.
pub fn separate(
    x: &MagnitudeSpectrogram,
    m1: &TrainedSourceModel,
    m2: &TrainedSourceModel,
    cfg: &SeparationConfig,
) -> Result<SeparationResult> {
    cfg.validate()?;
    check_pair(m1, m2)?;
    if m1.kind == ModelKind::Nmf {
        return nmf_separate(x, m1, m2, cfg);
    }
    let mix = &x.mag;
    check_mixture(mix, m1.data_dim())?;
    let sources = [Source::new(m1)?, Source::new(m2)?];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let [mut h1, mut h2] = initial_latents(m1.kind, &sources, mix, &mut rng);
    let mut opt1 = RmspropState::for_param(&h1, cfg.rmsprop())?;
    let mut opt2 = RmspropState::for_param(&h2, cfg.rmsprop())?;
    let mut trace = Vec::new();

    for it in 0..cfg.iterations {
        let (value, grads) = evaluate(mix, sources, [&h1, &h2], cfg.alpha, cfg.beta, true)?;
        if it % cfg.trace_every == 0 {
            push_trace(&mut trace, it, value)?;
        }
        let [g1, g2] = grads.expect("gradient requested");
        opt1.step(&mut h1, &g1, Direction::Maximize)?;
        opt2.step(&mut h2, &g2, Direction::Maximize)?;
        if !(h1.is_finite() && h2.is_finite()) {
            return Err(Error::Numerical(format!("separation latents became non-finite at iteration {it}")));
        }
    }
    let (value, _) = evaluate(mix, sources, [&h1, &h2], cfg.alpha, cfg.beta, false)?;
    push_trace(&mut trace, cfg.iterations, value)?;

    let (s1, _) = sources[0].forward(&h1)?;
    let (s2, _) = sources[1].forward(&h2)?;
    Ok(SeparationResult {
        s1_hat: MagnitudeSpectrogram::new(s1, x.framing)?,
        s2_hat: MagnitudeSpectrogram::new(s2, x.framing)?,
        latents: [h1, h2],
        trace,
    })
}

/// Fixes the dictionary `[W₁ | W₂]` and runs multiplicative updates on the
/// activations to minimize `KL(x ‖ WH)`. The trace records `−KL/T`.
pub fn nmf_separate(
    x: &MagnitudeSpectrogram,
    m1: &TrainedSourceModel,
    m2: &TrainedSourceModel,
    cfg: &SeparationConfig,
) -> Result<SeparationResult> {
    cfg.validate()?;
    check_pair(m1, m2)?;
    let (SourceParams::Nmf(p1), SourceParams::Nmf(p2)) = (&m1.source, &m2.source) else {
        return Err(Error::config(format!("nmf_separate needs two NMF models, got {}", m1.kind)));
    };
    let mix = &x.mag;
    check_mixture(mix, m1.data_dim())?;
    let w = p1.w.hcat(&p2.w)?;
    let (r1, t) = (p1.rank(), mix.cols());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut h = Mat::from_fn(w.cols(), t, |_, _| rng.random_range(0.1..1.0));
    let inv_t = 1.0 / t as f64;
    let mut trace = Vec::new();

    for it in 0..cfg.iterations {
        if it % cfg.trace_every == 0 {
            push_trace(&mut trace, it, -kl_divergence(mix, &w.matmul(&h)?)? * inv_t)?;
        }
        nmf_update_h(&w, &mut h, mix)?;
        if !h.is_finite() {
            return Err(Error::Numerical(format!("NMF activations became non-finite at iteration {it}")));
        }
    }
    push_trace(&mut trace, cfg.iterations, -kl_divergence(mix, &w.matmul(&h)?)? * inv_t)?;

    let h1 = h.row_range(0, r1);
    let h2 = h.row_range(r1, h.rows());
    Ok(SeparationResult {
        s1_hat: MagnitudeSpectrogram::new(p1.w.matmul(&h1)?, x.framing)?,
        s2_hat: MagnitudeSpectrogram::new(p2.w.matmul(&h2)?, x.framing)?,
        latents: [h1, h2],
        trace,
    })
}
