//! Source-separation scores (SDR, SIR, SAR) by orthogonal projection.
//!
//! This is the time-invariant form of BSS-eval: the estimate is projected
//! once onto the target reference and once onto the span of both references,
//! without the 512-tap distortion filters of the full toolkit. Scores from
//! the two variants are not directly comparable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Magnitude of the cap applied to every score, in dB.
pub const SCORE_CAP_DB: f64 = 200.0;

/// Reference pairs whose normalized Gram determinant falls below this are
/// treated as collinear.
const MIN_GRAM_DET: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BssScores {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

/// The estimate split into target, interference and artifact parts; they sum
/// to the estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub target: Vec<f64>,
    pub interference: Vec<f64>,
    pub artifact: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn energy(a: &[f64]) -> f64 {
    dot(a, a)
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { SCORE_CAP_DB };
    }
    (10.0 * (num / den).log10()).clamp(-SCORE_CAP_DB, SCORE_CAP_DB)
}

/// Splits `estimate` against `references[target]`, trimming all signals to
/// the shortest length.
pub fn decompose(estimate: &Waveform, references: [&Waveform; 2], target: usize) -> Result<Decomposition> {
    if target > 1 {
        return Err(Error::input(format!("target index {target} out of range for two references")));
    }
    let n = estimate.len().min(references[0].len()).min(references[1].len());
    let e = &estimate.samples[..n];
    let r = [&references[0].samples[..n], &references[1].samples[..n]];
    if energy(e) == 0.0 {
        return Err(Error::input("estimate has zero energy"));
    }
    if let Some(k) = r.iter().position(|x| energy(x) == 0.0) {
        return Err(Error::input(format!("reference {} has zero energy", k + 1)));
    }

    let (g11, g22, g12) = (energy(r[0]), energy(r[1]), dot(r[0], r[1]));
    let det = g11 * g22 - g12 * g12;
    let normalized = det / (g11 * g22);
    if normalized < MIN_GRAM_DET {
        return Err(Error::Conditioning(normalized));
    }
    let (b1, b2) = (dot(e, r[0]), dot(e, r[1]));
    let c1 = (g22 * b1 - g12 * b2) / det;
    let c2 = (g11 * b2 - g12 * b1) / det;
    let k = dot(e, r[target]) / energy(r[target]);

    let mut out = Decomposition { target: vec![0.0; n], interference: vec![0.0; n], artifact: vec![0.0; n] };
    for i in 0..n {
        let st = k * r[target][i];
        let proj = c1 * r[0][i] + c2 * r[1][i];
        out.target[i] = st;
        out.interference[i] = proj - st;
        out.artifact[i] = e[i] - proj;
    }
    Ok(out)
}

/// Scores one estimate against `references[target]`; every value is capped
/// to ±200 dB.
pub fn bss_eval(estimate: &Waveform, references: [&Waveform; 2], target: usize) -> Result<BssScores> {
    let d = decompose(estimate, references, target)?;
    let st = energy(&d.target);
    let ei = energy(&d.interference);
    let ea = energy(&d.artifact);
    let distortion: f64 = d.interference.iter().zip(&d.artifact).map(|(i, a)| (i + a).powi(2)).sum();
    let signal: f64 = d.target.iter().zip(&d.interference).map(|(t, i)| (t + i).powi(2)).sum();
    Ok(BssScores { sdr: ratio_db(st, distortion), sir: ratio_db(st, ei), sar: ratio_db(signal, ea) })
}

/// Scores for one separated mixture, indexed by reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub per_source: [BssScores; 2],
    pub mean: BssScores,
    /// True when estimate 1 was matched to reference 2.
    pub swapped: bool,
}

fn mean_scores(a: &BssScores, b: &BssScores) -> BssScores {
    BssScores { sdr: 0.5 * (a.sdr + b.sdr), sir: 0.5 * (a.sir + b.sir), sar: 0.5 * (a.sar + b.sar) }
}

/// Scores both estimates, choosing the estimate-to-reference assignment with
/// the larger mean SDR (the identity assignment wins ties).
pub fn score_pair(estimates: [&Waveform; 2], references: [&Waveform; 2]) -> Result<PairScores> {
    let direct = [bss_eval(estimates[0], references, 0)?, bss_eval(estimates[1], references, 1)?];
    let crossed = [bss_eval(estimates[1], references, 0)?, bss_eval(estimates[0], references, 1)?];
    let (per_source, swapped) =
        if crossed[0].sdr + crossed[1].sdr > direct[0].sdr + direct[1].sdr { (crossed, true) } else { (direct, false) };
    Ok(PairScores { per_source, mean: mean_scores(&per_source[0], &per_source[1]), swapped })
}

/// Order statistics of one metric; quartiles interpolate linearly between
/// order statistics (position `p·(n−1)` in the sorted sample).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("cannot summarize an empty set of scores"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::input("scores contain NaN"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self {
            count: v.len(),
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub sdr: Distribution,
    pub sir: Distribution,
    pub sar: Distribution,
}

pub fn aggregate(scores: &[BssScores]) -> Result<ScoreSummary> {
    let column = |f: fn(&BssScores) -> f64| scores.iter().map(f).collect::<Vec<_>>();
    Ok(ScoreSummary {
        sdr: Distribution::of(&column(|s| s.sdr))?,
        sir: Distribution::of(&column(|s| s.sir))?,
        sar: Distribution::of(&column(|s| s.sar))?,
    })
}
