use rand_chacha::ChaCha8Rng;

use super::{
    check_data, ensure_finite, sample_batch, sample_latent, training_rng, GanGeneratorLoss,
    LossPoint, Observer, Telemetry, TrainConfig, TrainEvent, TrainedSourceModel,
};
use crate::error::{Error, Result};
use crate::math::{sigmoid_scalar, softplus_scalar, Direction, Mat, Rmsprop};
use crate::models::{init_params, CriticParams, GeneratorParams, ModelKind, SourceParams};

/// Generator input for one batch: Gaussian latents, or real frames for the
/// autoencoding variant.
fn generator_input(data: &Mat, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Mat {
    if cfg.model_kind.feeds_data() {
        sample_batch(data, cfg.batch_size, rng)
    } else {
        sample_latent(cfg.batch_size, cfg.dims.latent_dim, rng)
    }
}

fn init_adversarial(cfg: &TrainConfig) -> Result<(GeneratorParams, CriticParams)> {
    let init = init_params(cfg.model_kind, &cfg.dims, cfg.seed)?;
    match (init.source, init.critic) {
        (SourceParams::Generator(g), Some(c)) => Ok((g, c)),
        _ => Err(Error::config(format!("{} is not an adversarial model", cfg.model_kind))),
    }
}

/// Wasserstein GAN with weight clipping (plain or autoencoding input).
pub fn train_wgan(data: &Mat, cfg: &TrainConfig) -> Result<TrainedSourceModel> {
    wgan(data, cfg, &mut |_| {})
}

/// Standard sigmoid-discriminator GAN.
pub fn train_gan(data: &Mat, cfg: &TrainConfig) -> Result<TrainedSourceModel> {
    gan(data, cfg, &mut |_| {})
}

pub(super) fn wgan(data: &Mat, cfg: &TrainConfig, observer: Observer<'_>) -> Result<TrainedSourceModel> {
    if !matches!(cfg.model_kind, ModelKind::Wgan | ModelKind::AeWgan) {
        return Err(Error::config(format!("WGAN trainer called for {}", cfg.model_kind)));
    }
    check_data(data, cfg, cfg.model_kind)?;
    let (mut gen, mut critic) = init_adversarial(cfg)?;
    critic.clip(cfg.clip_lo, cfg.clip_hi)?;
    let mut gen_opt = Rmsprop::new(gen.params(), cfg.rmsprop())?;
    let mut critic_opt = Rmsprop::new(critic.params(), cfg.rmsprop())?;
    let mut rng = training_rng(cfg.seed);
    let mut tel = Telemetry::default();
    let b = cfg.batch_size;
    let mut max_after_step: f64 = 0.0;

    // One forward over [real | fake] with upstream +1/B on real, −1/B on fake.
    let sign: Vec<f64> = (0..2 * b).map(|j| if j < b { 1.0 } else { -1.0 } / b as f64).collect();
    let d_critic = Mat::from_vec(1, 2 * b, sign)?;
    let d_gen_score = Mat::filled(1, b, 1.0 / b as f64);

    for it in 0..cfg.iterations {
        let mut estimate = 0.0;
        for _ in 0..cfg.critic_steps_per_gen {
            let real = sample_batch(data, b, &mut rng);
            let (fake, _) = gen.forward(&generator_input(data, cfg, &mut rng))?;
            let (scores, cache) = critic.forward(&real.hcat(&fake)?)?;
            estimate = scores.hadamard(&d_critic)?.sum();
            let grads = critic.backward_params_from_logits(&cache, &d_critic)?;
            critic_opt.step(critic.params_mut(), &grads, Direction::Maximize)?;
            critic.clip(cfg.clip_lo, cfg.clip_hi)?;
            tel.critic_updates += 1;
            max_after_step = max_after_step.max(critic.max_abs_param());
            ensure_finite(critic.params(), "critic", it, &tel)?;
            observer(&TrainEvent::CriticStep {
                iteration: it,
                critic: &critic,
                critic_updates: tel.critic_updates,
                generator_updates: tel.generator_updates,
                objective: estimate,
            });
        }

        let (fake, gen_cache) = gen.forward(&generator_input(data, cfg, &mut rng))?;
        let (scores, critic_cache) = critic.forward(&fake)?;
        let gen_objective = scores.mean();
        let d_fake = critic.backward(&critic_cache, &d_gen_score)?.input;
        let grads = gen.backward_params(&gen_cache, &d_fake)?;
        gen_opt.step(gen.params_mut(), &grads, Direction::Maximize)?;
        tel.generator_updates += 1;
        ensure_finite(gen.params(), "generator", it, &tel)?;
        observer(&TrainEvent::GeneratorStep {
            iteration: it,
            critic_updates: tel.critic_updates,
            generator_updates: tel.generator_updates,
            objective: gen_objective,
        });

        if it % cfg.log_every == 0 || it + 1 == cfg.iterations {
            tel.loss_curve.push(LossPoint { iteration: it, loss: estimate });
        }
    }
    tel.max_critic_param_after_step = Some(max_after_step);
    Ok(TrainedSourceModel {
        kind: cfg.model_kind,
        source: SourceParams::Generator(gen),
        critic: Some(critic),
        telemetry: tel,
    })
}

pub(super) fn gan(data: &Mat, cfg: &TrainConfig, observer: Observer<'_>) -> Result<TrainedSourceModel> {
    check_data(data, cfg, ModelKind::Gan)?;
    let (mut gen, mut disc) = init_adversarial(cfg)?;
    let mut gen_opt = Rmsprop::new(gen.params(), cfg.rmsprop())?;
    let mut disc_opt = Rmsprop::new(disc.params(), cfg.rmsprop())?;
    let mut rng = training_rng(cfg.seed);
    let mut tel = Telemetry::default();
    let b = cfg.batch_size;
    let inv_b = 1.0 / b as f64;

    for it in 0..cfg.iterations {
        let mut disc_loss = 0.0;
        for _ in 0..cfg.critic_steps_per_gen {
            let real = sample_batch(data, b, &mut rng);
            let (fake, _) = gen.forward(&sample_latent(b, cfg.dims.latent_dim, &mut rng))?;
            let (_, cache) = disc.forward(&real.hcat(&fake)?)?;
            // log σ(a) = −SP(−a), log(1 − σ(a)) = −SP(a)
            let logits = cache.logits();
            let mut objective = 0.0;
            let mut d_logits = Mat::zeros(1, 2 * b);
            for j in 0..2 * b {
                let a = logits[(0, j)];
                if j < b {
                    objective -= softplus_scalar(-a) * inv_b;
                    d_logits[(0, j)] = (1.0 - sigmoid_scalar(a)) * inv_b;
                } else {
                    objective -= softplus_scalar(a) * inv_b;
                    d_logits[(0, j)] = -sigmoid_scalar(a) * inv_b;
                }
            }
            disc_loss = -objective;
            let grads = disc.backward_params_from_logits(&cache, &d_logits)?;
            disc_opt.step(disc.params_mut(), &grads, Direction::Maximize)?;
            tel.critic_updates += 1;
            ensure_finite(disc.params(), "discriminator", it, &tel)?;
            observer(&TrainEvent::CriticStep {
                iteration: it,
                critic: &disc,
                critic_updates: tel.critic_updates,
                generator_updates: tel.generator_updates,
                objective,
            });
        }

        let (fake, gen_cache) = gen.forward(&sample_latent(b, cfg.dims.latent_dim, &mut rng))?;
        let (_, disc_cache) = disc.forward(&fake)?;
        let logits = disc_cache.logits();
        let (gen_objective, d_logits) = match cfg.gan_generator_loss {
            // ascend E log σ(a)
            GanGeneratorLoss::NonSaturating => (
                -logits.data().iter().map(|&a| softplus_scalar(-a)).sum::<f64>() * inv_b,
                logits.map(|a| (1.0 - sigmoid_scalar(a)) * inv_b),
            ),
            // ascend −E log(1 − σ(a)) = E SP(a)
            GanGeneratorLoss::Minimax => (
                logits.data().iter().map(|&a| softplus_scalar(a)).sum::<f64>() * inv_b,
                logits.map(|a| sigmoid_scalar(a) * inv_b),
            ),
        };
        let d_fake = disc.backward_from_logits(&disc_cache, &d_logits)?.input;
        let grads = gen.backward_params(&gen_cache, &d_fake)?;
        gen_opt.step(gen.params_mut(), &grads, Direction::Maximize)?;
        tel.generator_updates += 1;
        ensure_finite(gen.params(), "generator", it, &tel)?;
        observer(&TrainEvent::GeneratorStep {
            iteration: it,
            critic_updates: tel.critic_updates,
            generator_updates: tel.generator_updates,
            objective: gen_objective,
        });

        if it % cfg.log_every == 0 || it + 1 == cfg.iterations {
            tel.loss_curve.push(LossPoint { iteration: it, loss: disc_loss });
        }
    }
    Ok(TrainedSourceModel {
        kind: ModelKind::Gan,
        source: SourceParams::Generator(gen),
        critic: Some(disc),
        telemetry: tel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{kl_divergence, ModelDims};
    use crate::training::train_observed;

    fn small_dims() -> ModelDims {
        ModelDims { data_dim: 8, latent_dim: 6, gen_hidden: 5, critic_hidden: 4, ..Default::default() }
    }

    fn toy_data(cols: usize) -> Mat {
        Mat::from_fn(8, cols, |r, c| if r < 4 { 2.0 + (c % 3) as f64 } else { 0.1 })
    }

    #[test]
    fn wgan_schedule_and_clip_invariants() {
        let cfg = TrainConfig {
            iterations: 30,
            batch_size: 16,
            dims: small_dims(),
            ..TrainConfig::for_kind(ModelKind::Wgan)
        };
        let mut critic_steps = 0;
        let mut gen_steps = 0;
        let mut observer = |e: &TrainEvent<'_>| match e {
            TrainEvent::CriticStep { critic, critic_updates, generator_updates, .. } => {
                critic_steps += 1;
                assert!(critic.max_abs_param() <= 0.01);
                assert!(*critic_updates <= 5 * (generator_updates + 1));
                assert!(*critic_updates + 4 >= 5 * (generator_updates + 1));
            }
            TrainEvent::GeneratorStep { critic_updates, generator_updates, .. } => {
                gen_steps += 1;
                assert_eq!(*critic_updates, 5 * generator_updates);
            }
            _ => panic!("unexpected event"),
        };
        let model = train_observed(&toy_data(40), &cfg, &mut observer).unwrap();
        assert_eq!((critic_steps, gen_steps), (150, 30));
        assert_eq!(model.telemetry.critic_updates, 150);
        assert!(model.telemetry.max_critic_param_after_step.unwrap() <= 0.01);
        assert!(model.critic.is_some());
        model.validate().unwrap();
    }

    #[test]
    fn wgan_generator_moves_toward_a_point_mass() {
        let v: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 4.0 } else { 0.5 }).collect();
        let data = Mat::from_fn(8, 100, |r, _| v[r]);
        let target = Mat::from_fn(8, 200, |r, _| v[r]);
        let mean_kl = |m: &TrainedSourceModel| {
            let SourceParams::Generator(g) = &m.source else { unreachable!() };
            let h = sample_latent(200, 6, &mut training_rng(99));
            kl_divergence(&target, &g.forward(&h).unwrap().0).unwrap() / 200.0
        };
        let base = TrainConfig {
            batch_size: 32,
            dims: small_dims(),
            learning_rate: 5e-3,
            ..TrainConfig::for_kind(ModelKind::Wgan)
        };
        let early = train_wgan(&data, &TrainConfig { iterations: 1, ..base.clone() }).unwrap();
        let late = train_wgan(&data, &TrainConfig { iterations: 600, ..base }).unwrap();
        assert!(mean_kl(&late) < 0.5 * mean_kl(&early), "{} vs {}", mean_kl(&late), mean_kl(&early));
    }

    #[test]
    fn ae_wgan_and_gan_run_and_are_deterministic() {
        for kind in [ModelKind::AeWgan, ModelKind::Gan] {
            let dims = if kind == ModelKind::AeWgan {
                ModelDims { latent_dim: 8, ..small_dims() }
            } else {
                small_dims()
            };
            let cfg = TrainConfig { iterations: 20, batch_size: 8, dims, ..TrainConfig::for_kind(kind) };
            let a = crate::training::train(&toy_data(20), &cfg).unwrap();
            let b = crate::training::train(&toy_data(20), &cfg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn gan_discriminator_learns_separable_toy_data() {
        let cfg = TrainConfig {
            iterations: 100,
            batch_size: 16,
            dims: small_dims(),
            log_every: 1,
            ..TrainConfig::for_kind(ModelKind::Gan)
        };
        let data = Mat::from_fn(8, 50, |r, _| if r < 4 { 10.0 } else { 0.0 });
        let mut first_scores = None;
        let mut observer = |e: &TrainEvent<'_>| {
            if let TrainEvent::CriticStep { critic, critic_updates: 1, .. } = e {
                let (s, _) = critic.forward(&data).unwrap();
                assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
                first_scores = Some(s);
            }
        };
        let model = train_observed(&data, &cfg, &mut observer).unwrap();
        assert!(first_scores.is_some());
        let curve = &model.telemetry.loss_curve;
        let head: f64 = curve[..10].iter().map(|p| p.loss).sum::<f64>() / 10.0;
        let tail: f64 = curve[90..].iter().map(|p| p.loss).sum::<f64>() / 10.0;
        assert!(tail < head, "disc loss {head} -> {tail}");
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let cfg = TrainConfig { dims: small_dims(), ..TrainConfig::for_kind(ModelKind::MlAe) };
        assert!(matches!(train_wgan(&toy_data(200), &cfg), Err(Error::Config(_))));
        assert!(matches!(train_gan(&toy_data(200), &cfg), Err(Error::Config(_))));
    }
}
