use rand::Rng;

use super::{
    check_data, ensure_finite, sample_batch, sample_latent, training_rng, LossPoint, Observer,
    Telemetry, TrainConfig, TrainEvent, TrainedSourceModel,
};
use crate::error::Result;
use crate::math::{Direction, Mat, Rmsprop};
use crate::models::{
    init_params, kl_divergence, nmf_update, poisson_fit, vae_elbo, ModelKind, SourceParams,
};

/// Autoencoder `f(f⁻¹(s))` fit by Poisson likelihood.
pub fn train_ml_autoencoder(data: &Mat, cfg: &TrainConfig) -> Result<TrainedSourceModel> {
    ml_autoencoder(data, cfg, &mut |_| {})
}

/// VAE fit by ascent on the single-sample ELBO.
pub fn train_vae(data: &Mat, cfg: &TrainConfig) -> Result<TrainedSourceModel> {
    vae(data, cfg, &mut |_| {})
}

/// KL-NMF by multiplicative updates over the full training matrix.
pub fn train_nmf(data: &Mat, cfg: &TrainConfig) -> Result<TrainedSourceModel> {
    nmf(data, cfg, &mut |_| {})
}

fn record(tel: &mut Telemetry, cfg: &TrainConfig, it: usize, loss: f64) {
    if it % cfg.log_every == 0 || it + 1 == cfg.iterations {
        tel.loss_curve.push(LossPoint { iteration: it, loss });
    }
}

pub(super) fn ml_autoencoder(
    data: &Mat,
    cfg: &TrainConfig,
    observer: Observer<'_>,
) -> Result<TrainedSourceModel> {
    check_data(data, cfg, ModelKind::MlAe)?;
    let SourceParams::Generator(mut net) = init_params(ModelKind::MlAe, &cfg.dims, cfg.seed)?.source
    else {
        unreachable!("ml_ae initializes a generator shell")
    };
    let mut opt = Rmsprop::new(net.params(), cfg.rmsprop())?;
    let mut rng = training_rng(cfg.seed);
    let mut tel = Telemetry::default();
    let inv_b = 1.0 / cfg.batch_size as f64;

    for it in 0..cfg.iterations {
        let batch = sample_batch(data, cfg.batch_size, &mut rng);
        let (recon, cache) = net.forward(&batch)?;
        let (fit, d_recon) = poisson_fit(&batch, &recon)?;
        let loss = fit * inv_b;
        let grads = net.backward_params(&cache, &d_recon.scale(inv_b))?;
        opt.step(net.params_mut(), &grads, Direction::Minimize)?;
        record(&mut tel, cfg, it, loss);
        ensure_finite(net.params(), "autoencoder", it, &tel)?;
        observer(&TrainEvent::Step { iteration: it, loss });
    }
    Ok(TrainedSourceModel {
        kind: ModelKind::MlAe,
        source: SourceParams::Generator(net),
        critic: None,
        telemetry: tel,
    })
}

pub(super) fn vae(data: &Mat, cfg: &TrainConfig, observer: Observer<'_>) -> Result<TrainedSourceModel> {
    check_data(data, cfg, ModelKind::Vae)?;
    let SourceParams::Vae(mut p) = init_params(ModelKind::Vae, &cfg.dims, cfg.seed)?.source else {
        unreachable!("vae initializes vae params")
    };
    let mut opt = Rmsprop::new(p.params(), cfg.rmsprop())?;
    let mut rng = training_rng(cfg.seed);
    let mut tel = Telemetry::default();
    let inv_b = 1.0 / cfg.batch_size as f64;

    for it in 0..cfg.iterations {
        let batch = sample_batch(data, cfg.batch_size, &mut rng);
        let noise = sample_latent(cfg.batch_size, cfg.dims.vae_latent, &mut rng);
        let (elbo, grads) = vae_elbo(&p, &batch, &noise)?;
        let grads: Vec<Mat> = grads.iter().map(|g| g.scale(inv_b)).collect();
        opt.step(p.params_mut(), &grads, Direction::Maximize)?;
        record(&mut tel, cfg, it, -elbo.value * inv_b);
        if !elbo.value.is_finite() {
            ensure_finite([&Mat::filled(1, 1, f64::NAN)], "ELBO", it, &tel)?;
        }
        ensure_finite(p.params(), "vae", it, &tel)?;
        observer(&TrainEvent::VaeStep { iteration: it, elbo });
    }
    Ok(TrainedSourceModel { kind: ModelKind::Vae, source: SourceParams::Vae(p), critic: None, telemetry: tel })
}

pub(super) fn nmf(data: &Mat, cfg: &TrainConfig, observer: Observer<'_>) -> Result<TrainedSourceModel> {
    check_data(data, cfg, ModelKind::Nmf)?;
    let SourceParams::Nmf(mut p) = init_params(ModelKind::Nmf, &cfg.dims, cfg.seed)?.source else {
        unreachable!("nmf initializes a dictionary")
    };
    let mut rng = training_rng(cfg.seed);
    let mut h = Mat::from_fn(cfg.dims.nmf_rank, data.cols(), |_, _| rng.random_range(0.1..1.0));
    let mut tel = Telemetry::default();
    let inv_t = 1.0 / data.cols() as f64;

    for it in 0..cfg.iterations {
        nmf_update(&mut p, &mut h, data)?;
        ensure_finite([&p.w, &h], "nmf factors", it, &tel)?;
        if it % cfg.log_every == 0 || it + 1 == cfg.iterations {
            let loss = kl_divergence(data, &p.w.matmul(&h)?)? * inv_t;
            tel.loss_curve.push(LossPoint { iteration: it, loss });
            observer(&TrainEvent::Step { iteration: it, loss });
        }
    }
    Ok(TrainedSourceModel { kind: ModelKind::Nmf, source: SourceParams::Nmf(p), critic: None, telemetry: tel })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelDims;
    use crate::training::train_observed;

    fn dims() -> ModelDims {
        ModelDims { data_dim: 10, gen_hidden: 6, vae_hidden: 6, vae_latent: 3, nmf_rank: 3, ..Default::default() }
    }

    /// Frames built from three spectral shapes with random gains.
    fn toy_data(n: usize, seed: u64) -> Mat {
        let mut rng = training_rng(seed);
        let shapes: Vec<Vec<f64>> = (0..3)
            .map(|k| (0..10).map(|i| 0.05 + 3.0 * ((i as f64 - 3.0 * k as f64).powi(2) / -2.0).exp()).collect())
            .collect();
        let mut m = Mat::zeros(10, n);
        for c in 0..n {
            let g: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.5)).collect();
            for r in 0..10 {
                m[(r, c)] = (0..3).map(|k| g[k] * shapes[k][r]).sum();
            }
        }
        m
    }

    fn median(v: &mut [f64]) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    #[test]
    fn autoencoder_loss_falls_window_over_window() {
        let cfg = TrainConfig {
            iterations: 2000,
            batch_size: 20,
            dims: dims(),
            log_every: 1,
            ..TrainConfig::for_kind(ModelKind::MlAe)
        };
        let m = train_ml_autoencoder(&toy_data(200, 1), &cfg).unwrap();
        let losses: Vec<f64> = m.telemetry.loss_curve.iter().map(|p| p.loss).collect();
        assert!(losses.iter().all(|&l| l >= 0.0));
        let medians: Vec<f64> = losses.chunks(500).map(|w| median(&mut w.to_vec())).collect();
        for pair in medians.windows(2) {
            assert!(pair[1] < pair[0], "{medians:?}");
        }
    }

    #[test]
    fn autoencoder_gradient_vanishes_at_perfect_reconstruction() {
        // A frame equal to the network's own output for that input gives a zero gradient.
        let init = init_params(ModelKind::MlAe, &dims(), 3).unwrap();
        let SourceParams::Generator(net) = init.source else { unreachable!() };
        let x = Mat::filled(10, 1, 0.7);
        let (out, cache) = net.forward(&x).unwrap();
        let (fit, d) = poisson_fit(&out, &out).unwrap();
        assert!(fit.abs() < 1e-12);
        let grads = net.backward_params(&cache, &d).unwrap();
        assert!(grads.iter().all(|g| g.max_abs() == 0.0));
    }

    #[test]
    fn vae_elbo_is_finite_kl_non_negative_and_improves() {
        let cfg = TrainConfig {
            iterations: 1500,
            batch_size: 20,
            dims: dims(),
            log_every: 1,
            ..TrainConfig::for_kind(ModelKind::Vae)
        };
        let mut elbos = Vec::new();
        let mut observer = |e: &TrainEvent<'_>| {
            if let TrainEvent::VaeStep { elbo, .. } = e {
                assert!(elbo.value.is_finite());
                assert!(elbo.kl >= 0.0);
                elbos.push(elbo.value);
            }
        };
        train_observed(&toy_data(200, 2), &cfg, &mut observer).unwrap();
        let head: f64 = elbos[..100].iter().sum::<f64>() / 100.0;
        let tail: f64 = elbos[elbos.len() - 100..].iter().sum::<f64>() / 100.0;
        assert!(tail > head, "ELBO {head} -> {tail}");
    }

    #[test]
    fn nmf_training_is_monotone_and_non_negative() {
        let cfg = TrainConfig { iterations: 200, dims: dims(), log_every: 1, ..TrainConfig::for_kind(ModelKind::Nmf) };
        let m = train_nmf(&toy_data(60, 3), &cfg).unwrap();
        for w in m.telemetry.loss_curve.windows(2) {
            assert!(w[1].loss <= w[0].loss * (1.0 + 1e-12));
        }
        let SourceParams::Nmf(p) = &m.source else { unreachable!() };
        assert!(p.w.min() >= 0.0);
    }

    #[test]
    fn nmf_fits_rank_one_data() {
        let u: Vec<f64> = (0..10).map(|i| 0.5 + i as f64 * 0.3).collect();
        let v: Vec<f64> = (0..40).map(|j| 1.0 + (j % 7) as f64).collect();
        let data = Mat::from_fn(10, 40, |r, c| u[r] * v[c]);
        let cfg = TrainConfig {
            iterations: 3000,
            dims: ModelDims { nmf_rank: 1, ..dims() },
            ..TrainConfig::for_kind(ModelKind::Nmf)
        };
        let m = train_nmf(&data, &cfg).unwrap();
        assert!(m.telemetry.loss_curve.last().unwrap().loss < 1e-8);
    }
}
