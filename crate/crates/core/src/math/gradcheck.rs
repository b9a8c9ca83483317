//! Central-difference gradient oracle used to validate every hand-written
//! backward pass.

use super::Mat;
use crate::error::{Error, Result};

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every entry `i` of `x`.
pub fn finite_diff_grad(mut f: impl FnMut(&Mat) -> f64, x: &Mat, h: f64) -> Result<Mat> {
    if !(h > 0.0) {
        return Err(Error::config(format!("finite-difference step {h} must be > 0")));
    }
    let mut probe = x.clone();
    let mut grad = Mat::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numerical(format!(
                "oracle function returned a non-finite value at entry {i}"
            )));
        }
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vanish.
pub fn relative_error(a: &Mat, b: &Mat) -> f64 {
    let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
