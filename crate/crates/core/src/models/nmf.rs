use serde::{Deserialize, Serialize};

use super::poisson::RATE_FLOOR;
use crate::error::{Error, Result};
use crate::math::Mat;

/// Non-negative dictionary `W` (`F × K`) of a KL-NMF source model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfParams {
    pub w: Mat,
}

impl NmfParams {
    pub fn rank(&self) -> usize {
        self.w.cols()
    }

    pub fn validate(&self) -> Result<()> {
        ensure_non_negative(&self.w, "NMF dictionary")
    }
}

pub(crate) fn ensure_non_negative(m: &Mat, what: &str) -> Result<()> {
    if m.data().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::input(format!("{what} must be finite and non-negative")));
    }
    Ok(())
}

/// `[V ⊘ max(WH, floor) | 1]`, built in one pass.
fn ratio_with_ones_column(v: &Mat, wh: &Mat) -> Result<Mat> {
    v.ensure_same_shape(wh, "NMF reconstruction")?;
    let (f, t) = v.shape();
    let mut data = Vec::with_capacity(f * (t + 1));
    for r in 0..f {
        data.extend(v.row(r).iter().zip(wh.row(r)).map(|(&x, &y)| x / y.max(RATE_FLOOR)));
        data.push(1.0);
    }
    Mat::from_vec(f, t + 1, data)
}

/// `[V ⊘ max(WH, floor) ; 1ᵀ]`, built in one pass.
fn ratio_with_ones_row(v: &Mat, wh: &Mat) -> Result<Mat> {
    v.ensure_same_shape(wh, "NMF reconstruction")?;
    let (f, t) = v.shape();
    let mut data = Vec::with_capacity((f + 1) * t);
    data.extend(v.data().iter().zip(wh.data()).map(|(&x, &y)| x / y.max(RATE_FLOOR)));
    data.resize((f + 1) * t, 1.0);
    Mat::from_vec(f + 1, t, data)
}

/// Multiplicative updates shrink unused entries geometrically; once they
/// fall below the smallest normal float, arithmetic on them slows down by
/// orders of magnitude. They are flushed to exact zero, where the updates
/// keep them anyway.
fn flush_subnormal(x: f64) -> f64 {
    if x < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

/// One multiplicative KL step on the activations with `W` held fixed:
/// `H ← H ⊙ (Wᵀ(V ⊘ WH)) ⊘ (Wᵀ1)`.
pub fn nmf_update_h(w: &Mat, h: &mut Mat, v: &Mat) -> Result<()> {
    let (f, k) = w.shape();
    h.ensure_shape(k, v.cols(), "NMF activations")?;
    v.ensure_shape(f, h.cols(), "NMF target")?;
    let t = v.cols();
    // Numerator and denominator come out of one product (the extra column of
    // ones yields Wᵀ1) so both sides round identically and `V = WH` stays an
    // exact fixed point.
    let nd = w.matmul_tn(&ratio_with_ones_column(v, &w.matmul(h)?)?)?;
    for i in 0..k {
        let den = nd[(i, t)].max(RATE_FLOOR);
        for j in 0..t {
            h[(i, j)] = flush_subnormal(h[(i, j)] * (nd[(i, j)] / den));
        }
    }
    Ok(())
}

/// One multiplicative KL step on the dictionary with `H` held fixed:
/// `W ← W ⊙ ((V ⊘ WH)Hᵀ) ⊘ (1Hᵀ)`.
pub fn nmf_update_w(w: &mut Mat, h: &Mat, v: &Mat) -> Result<()> {
    let (f, k) = w.shape();
    h.ensure_shape(k, v.cols(), "NMF activations")?;
    v.ensure_shape(f, h.cols(), "NMF target")?;
    let nd = ratio_with_ones_row(v, &w.matmul(h)?)?.matmul_nt(h)?;
    for j in 0..k {
        let den = nd[(f, j)].max(RATE_FLOOR);
        for i in 0..f {
            w[(i, j)] = flush_subnormal(w[(i, j)] * (nd[(i, j)] / den));
        }
    }
    Ok(())
}

/// One full alternation: activations first, then the dictionary. Never
/// increases `KL(V ‖ WH)`.
pub fn nmf_update(params: &mut NmfParams, h: &mut Mat, v: &Mat) -> Result<()> {
    ensure_non_negative(&params.w, "NMF dictionary")?;
    ensure_non_negative(h, "NMF activations")?;
    ensure_non_negative(v, "NMF target")?;
    nmf_update_h(&params.w, h, v)?;
    nmf_update_w(&mut params.w, h, v)
}
