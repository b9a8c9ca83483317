use serde::{Deserialize, Serialize};

use super::Mat;
use crate::error::{Error, Result};

/// Whether an optimizer step descends or ascends the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Minimize,
    Maximize,
}

/// Hyperparameters shared by every tensor an optimizer tracks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmspropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, decay: 0.9, epsilon: 1e-8 }
    }
}

impl RmspropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::config(format!("rmsprop decay {} outside (0, 1)", self.decay)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config(format!("rmsprop epsilon {} must be > 0", self.epsilon)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Running mean of squared gradients for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState {
    pub mean_sq: Mat,
    pub decay: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl RmspropState {
    pub fn new(rows: usize, cols: usize, cfg: RmspropConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            mean_sq: Mat::zeros(rows, cols),
            decay: cfg.decay,
            epsilon: cfg.epsilon,
            learning_rate: cfg.learning_rate,
        })
    }

    pub fn for_param(param: &Mat, cfg: RmspropConfig) -> Result<Self> {
        Self::new(param.rows(), param.cols(), cfg)
    }

    /// `mean_sq ← ρ·mean_sq + (1−ρ)·g²`, then `param ∓= η·g / (√mean_sq + ε)`.
    pub fn step(&mut self, param: &mut Mat, grad: &Mat, direction: Direction) -> Result<()> {
        param.ensure_same_shape(grad, "rmsprop gradient")?;
        param.ensure_same_shape(&self.mean_sq, "rmsprop state")?;
        let rho = self.decay;
        let eta = match direction {
            Direction::Minimize => -self.learning_rate,
            Direction::Maximize => self.learning_rate,
        };
        let eps = self.epsilon;
        for ((p, ms), &g) in param
            .data_mut()
            .iter_mut()
            .zip(self.mean_sq.data_mut().iter_mut())
            .zip(grad.data())
        {
            *ms = rho * *ms + (1.0 - rho) * g * g;
            *p += eta * g / (ms.sqrt() + eps);
        }
        Ok(())
    }
}

/// One `RmspropState` per tensor of a model, stepped together.
#[derive(Debug, Clone)]
pub struct Rmsprop {
    states: Vec<RmspropState>,
}

impl Rmsprop {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Mat>, cfg: RmspropConfig) -> Result<Self> {
        let states = params
            .into_iter()
            .map(|p| RmspropState::for_param(p, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { states })
    }

    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Mat>,
        grads: &[Mat],
        direction: Direction,
    ) -> Result<()> {
        let params: Vec<&mut Mat> = params.into_iter().collect();
        if params.len() != self.states.len() || grads.len() != self.states.len() {
            return Err(Error::dim(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.states.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((state, param), grad) in self.states.iter_mut().zip(params).zip(grads) {
            state.step(param, grad, direction)?;
        }
        Ok(())
    }
}

/// Clamps every entry to `[lo, hi]`.
pub fn clip_inplace(param: &mut Mat, lo: f64, hi: f64) -> Result<()> {
    if !(lo <= hi) {
        return Err(Error::config(format!("clip bounds [{lo}, {hi}] are inverted")));
    }
    param.map_inplace(|v| v.clamp(lo, hi));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_step_from_fresh_state() {
        let mut p = Mat::zeros(1, 1);
        let g = Mat::filled(1, 1, 1.0);
        let mut st = RmspropState::for_param(&p, RmspropConfig::default()).unwrap();
        st.step(&mut p, &g, Direction::Minimize).unwrap();
        assert!((st.mean_sq[(0, 0)] - 0.1).abs() < 1e-15);
        // 0.001 / (sqrt(0.1) + 1e-8)
        assert!((p[(0, 0)] + 0.0031622775601683794).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_decays_state_only() {
        let mut p = Mat::filled(2, 2, 0.3);
        let mut st = RmspropState::for_param(&p, RmspropConfig::default()).unwrap();
        st.mean_sq = Mat::filled(2, 2, 0.5);
        st.step(&mut p, &Mat::zeros(2, 2), Direction::Minimize).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.3));
        assert!(st.mean_sq.data().iter().all(|&v| (v - 0.45).abs() < 1e-15));
    }

    #[test]
    fn maximize_mirrors_minimize() {
        let g = Mat::from_vec(1, 3, vec![0.7, -2.0, 1e-3]).unwrap();
        let mut a = Mat::zeros(1, 3);
        let mut b = Mat::zeros(1, 3);
        let mut sa = RmspropState::for_param(&a, RmspropConfig::default()).unwrap();
        let mut sb = sa.clone();
        sa.step(&mut a, &g, Direction::Minimize).unwrap();
        sb.step(&mut b, &g, Direction::Maximize).unwrap();
        assert_eq!(a, b.scale(-1.0));
    }

    #[test]
    fn shape_mismatch_and_bad_config() {
        let mut p = Mat::zeros(2, 2);
        let mut st = RmspropState::for_param(&p, RmspropConfig::default()).unwrap();
        assert!(matches!(
            st.step(&mut p, &Mat::zeros(2, 1), Direction::Minimize),
            Err(Error::Dimension(_))
        ));
        let bad = RmspropConfig { decay: 1.0, ..Default::default() };
        assert!(RmspropState::for_param(&p, bad).is_err());
    }

    #[test]
    fn clip_reference_points() {
        let mut p = Mat::from_vec(1, 3, vec![0.05, -0.02, 0.005]).unwrap();
        clip_inplace(&mut p, -0.01, 0.01).unwrap();
        assert_eq!(p.data(), &[0.01, -0.01, 0.005]);
        assert!(matches!(clip_inplace(&mut p, 0.1, -0.1), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn clip_is_idempotent(v in proptest::collection::vec(-1.0f64..1.0, 1..40)) {
            let mut once = Mat::column_vector(v);
            clip_inplace(&mut once, -0.01, 0.01).unwrap();
            let mut twice = once.clone();
            clip_inplace(&mut twice, -0.01, 0.01).unwrap();
            prop_assert_eq!(once.data(), twice.data());
            prop_assert!(once.max_abs() <= 0.01);
        }

        /// Ascending `f` traces the same path as descending `-f`.
        #[test]
        fn ascent_equals_descent_on_negation(
            start in proptest::collection::vec(-2.0f64..2.0, 3),
            targets in proptest::collection::vec(-2.0f64..2.0, 3),
        ) {
            let t = Mat::column_vector(targets);
            // f(p) = -||p - t||², grad f = -2(p - t)
            let grad_f = |p: &Mat| p.sub(&t).unwrap().scale(-2.0);
            let mut up = Mat::column_vector(start.clone());
            let mut down = Mat::column_vector(start);
            let cfg = RmspropConfig { learning_rate: 0.05, ..Default::default() };
            let mut su = RmspropState::for_param(&up, cfg).unwrap();
            let mut sd = su.clone();
            for _ in 0..50 {
                let gu = grad_f(&up);
                su.step(&mut up, &gu, Direction::Maximize).unwrap();
                let gd = grad_f(&down).scale(-1.0);
                sd.step(&mut down, &gd, Direction::Minimize).unwrap();
            }
            prop_assert_eq!(up.data(), down.data());
        }
    }
}
