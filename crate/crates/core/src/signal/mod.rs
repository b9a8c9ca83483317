//! Time/frequency analysis, 0 dB mixing and Wiener-mask reconstruction.

mod stft;
mod wav;

pub use stft::{
    hann, istft, magnitude_phase, magnitude_spectrogram, stft, ComplexSpectrogram, Framing,
    MagnitudeSpectrogram, Phase, StftConfig,
};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};
use crate::math::Mat;

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::input("sample rate must be positive"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("waveform contains non-finite samples"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, k: f64) -> Waveform {
        Waveform { samples: self.samples.iter().map(|v| v * k).collect(), sample_rate: self.sample_rate }
    }

    /// Zero-pads (never truncates) to `len` samples.
    pub fn padded_to(&self, len: usize) -> Waveform {
        let mut samples = self.samples.clone();
        if samples.len() < len {
            samples.resize(len, 0.0);
        }
        Waveform { samples, sample_rate: self.sample_rate }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// A 0 dB mixture and the two sources exactly as they enter it.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixture: Waveform,
    pub a: Waveform,
    pub b: Waveform,
}

/// Rescales `b` to the RMS of `a`, zero-pads both to the longer length and
/// sums them.
pub fn mix_at_0db(a: &Waveform, b: &Waveform) -> Result<Mixture> {
    if a.sample_rate != b.sample_rate {
        return Err(Error::input(format!(
            "cannot mix {} Hz with {} Hz audio",
            a.sample_rate, b.sample_rate
        )));
    }
    let (ra, rb) = (a.rms(), b.rms());
    if ra == 0.0 || rb == 0.0 {
        return Err(Error::input("cannot mix a silent source at 0 dB"));
    }
    let len = a.len().max(b.len());
    let a = a.padded_to(len);
    let b = b.scaled(ra / rb).padded_to(len);
    let samples = a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect();
    Ok(Mixture { mixture: Waveform { samples, sample_rate: a.sample_rate }, a, b })
}

/// Soft masks `ŝₖ / (ŝ₁ + ŝ₂)`; cells where both estimates vanish split 0.5/0.5.
pub fn wiener_masks(s1_hat: &Mat, s2_hat: &Mat) -> Result<(Mat, Mat)> {
    s1_hat.ensure_same_shape(s2_hat, "second source estimate")?;
    if s1_hat.data().iter().chain(s2_hat.data()).any(|&v| !(v >= 0.0)) {
        return Err(Error::input("source estimates must be non-negative"));
    }
    let m1 = s1_hat.zip_map(s2_hat, |a, b| {
        let den = a + b;
        if den > 0.0 {
            a / den.max(1e-12)
        } else {
            0.5
        }
    })?;
    let m2 = m1.map(|m| 1.0 - m);
    Ok((m1, m2))
}

/// Masked complex spectrograms `maskₖ ⊙ |X| ⊙ ∠X` for both sources.
pub fn wiener_spectrograms(
    s1_hat: &Mat,
    s2_hat: &Mat,
    mix_mag: &MagnitudeSpectrogram,
    mix_phase: &Phase,
) -> Result<(ComplexSpectrogram, ComplexSpectrogram)> {
    s1_hat.ensure_same_shape(&mix_mag.mag, "first source estimate")?;
    mix_phase.re.ensure_same_shape(&mix_mag.mag, "mixture phase")?;
    mix_phase.im.ensure_same_shape(&mix_mag.mag, "mixture phase")?;
    let (m1, m2) = wiener_masks(s1_hat, s2_hat)?;
    let build = |mask: &Mat| -> Result<ComplexSpectrogram> {
        let gain = mask.hadamard(&mix_mag.mag)?;
        Ok(ComplexSpectrogram {
            re: gain.hadamard(&mix_phase.re)?,
            im: gain.hadamard(&mix_phase.im)?,
            framing: mix_mag.framing,
        })
    };
    Ok((build(&m1)?, build(&m2)?))
}

/// Time-domain source estimates by Wiener masking of the mixture.
pub fn wiener_reconstruct(
    s1_hat: &Mat,
    s2_hat: &Mat,
    mix_mag: &MagnitudeSpectrogram,
    mix_phase: &Phase,
) -> Result<(Waveform, Waveform)> {
    let (c1, c2) = wiener_spectrograms(s1_hat, s2_hat, mix_mag, mix_phase)?;
    Ok((istft(&c1)?, istft(&c2)?))
}
