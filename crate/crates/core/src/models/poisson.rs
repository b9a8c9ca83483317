use crate::error::{Error, Result};
use crate::math::Mat;

/// Floor applied to model rates wherever they are divided by or logged.
pub const RATE_FLOOR: f64 = 1e-12;

/// Unnormalized KL divergence `Σ t·ln(t/λ) − t + λ` (with `0·ln 0 = 0`) and
/// its gradient `1 − t/λ` with respect to the rate.
///
/// This is the negative Poisson log-likelihood of `target` under `rate` with
/// the parameter-free `ln Γ(t+1)` term and the `t ln t − t` constant moved in
/// so the minimum is exactly zero at `rate = target`.
pub fn poisson_fit(target: &Mat, rate: &Mat) -> Result<(f64, Mat)> {
    target.ensure_same_shape(rate, "poisson rate")?;
    if target.data().iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::input("poisson target has negative or NaN entries"));
    }
    let mut loss = 0.0;
    let grad = target.zip_map(rate, |t, r| {
        let r = r.max(RATE_FLOOR);
        1.0 - t / r
    })?;
    for (&t, &r) in target.data().iter().zip(rate.data()) {
        loss += kl_term(t, r.max(RATE_FLOOR));
    }
    Ok((loss, grad))
}

/// Loss only; skips the gradient allocation.
pub fn kl_divergence(target: &Mat, rate: &Mat) -> Result<f64> {
    target.ensure_same_shape(rate, "poisson rate")?;
    if target.data().iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::input("poisson target has negative or NaN entries"));
    }
    Ok(target
        .data()
        .iter()
        .zip(rate.data())
        .map(|(&t, &r)| kl_term(t, r.max(RATE_FLOOR)))
        .sum())
}

#[inline]
fn kl_term(t: f64, r: f64) -> f64 {
    if t > 0.0 {
        t * (t / r).ln() - t + r
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn self_divergence_is_zero() {
        let x = Mat::from_vec(2, 2, vec![0.5, 3.0, 0.0, 1e-3]).unwrap();
        let (loss, grad) = poisson_fit(&x, &x).unwrap();
        // the zero target meets a floored rate of 1e-12
        assert!(loss.abs() < 1e-11);
        assert_eq!(grad[(0, 0)], 0.0);
        assert_eq!(grad[(0, 1)], 0.0);
    }

    #[test]
    fn two_against_one() {
        let (loss, grad) = poisson_fit(&Mat::filled(1, 1, 2.0), &Mat::filled(1, 1, 1.0)).unwrap();
        assert!((loss - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-15);
        assert!((loss - 0.386_294_361_119_890_6).abs() < 1e-12);
        assert_eq!(grad[(0, 0)], -1.0);
    }

    #[test]
    fn negative_target_is_an_input_error() {
        let t = Mat::filled(1, 2, -1.0);
        assert!(matches!(poisson_fit(&t, &Mat::filled(1, 2, 1.0)), Err(Error::Input(_))));
    }

    #[test]
    fn zero_rate_is_floored() {
        let (loss, grad) = poisson_fit(&Mat::filled(1, 1, 1.0), &Mat::zeros(1, 1)).unwrap();
        assert!(loss.is_finite() && grad[(0, 0)].is_finite());
    }

    proptest! {
        #[test]
        fn divergence_is_non_negative(
            pairs in proptest::collection::vec((0.0f64..50.0, 1e-6f64..50.0), 1..30)
        ) {
            let t = Mat::column_vector(pairs.iter().map(|p| p.0).collect());
            let r = Mat::column_vector(pairs.iter().map(|p| p.1).collect());
            let (loss, _) = poisson_fit(&t, &r).unwrap();
            prop_assert!(loss >= -1e-12);
            prop_assert!((kl_divergence(&t, &r).unwrap() - loss).abs() <= 1e-12 * loss.abs().max(1.0));
        }
    }
}
