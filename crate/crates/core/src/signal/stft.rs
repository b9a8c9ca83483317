use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};
use crate::math::Mat;

/// Analysis parameters shared by every spectrogram in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { n_fft: 1024, hop: 256, sample_rate: 16_000 }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.n_fft.is_power_of_two() || self.n_fft < 2 {
            return Err(Error::config(format!("n_fft {} is not a power of two", self.n_fft)));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::config(format!(
                "hop {} must lie in 1..={}",
                self.hop, self.n_fft
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        Ok(())
    }

    /// Number of one-sided frequency bins, `n_fft/2 + 1`.
    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// How a spectrogram's frames map back onto the time axis.
///
/// `signal_len` is known for spectrograms produced by [`stft`]; those were
/// analysed with `n_fft − hop` leading zeros so every original sample sits
/// under a full stack of overlapping windows, and synthesis trims that
/// padding again. Hand-built spectrograms leave it `None` and synthesise the
/// raw overlap-add of all frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Framing {
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub signal_len: Option<usize>,
}

impl Framing {
    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub re: Mat,
    pub im: Mat,
    pub framing: Framing,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.re.cols()
    }

    fn validate(&self) -> Result<()> {
        let f = self.framing.bins();
        self.re.ensure_shape(f, self.re.cols(), "spectrogram real part")?;
        self.im.ensure_same_shape(&self.re, "spectrogram imaginary part")?;
        Ok(())
    }
}

/// Non-negative `F × T` matrix of STFT magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub mag: Mat,
    pub framing: Framing,
}

impl MagnitudeSpectrogram {
    pub fn new(mag: Mat, framing: Framing) -> Result<Self> {
        mag.ensure_shape(framing.bins(), mag.cols(), "magnitude spectrogram")?;
        if mag.data().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::input("magnitude spectrogram has negative or non-finite entries"));
        }
        Ok(Self { mag, framing })
    }

    pub fn bins(&self) -> usize {
        self.mag.rows()
    }

    pub fn frames(&self) -> usize {
        self.mag.cols()
    }
}

/// Unit-modulus phase factors, one per spectrogram cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub re: Mat,
    pub im: Mat,
}

/// Periodic Hann window, `0.5 − 0.5·cos(2πn/N)`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Overlap-add gain of the squared window, `Σ w²[n] / hop`. Constant across
/// time whenever the window/hop pair satisfies COLA for `w²` (Hann at 75 %
/// overlap gives exactly 1.5).
fn ola_gain(window: &[f64], hop: usize) -> f64 {
    window.iter().map(|w| w * w).sum::<f64>() / hop as f64
}

pub fn stft(w: &Waveform, n_fft: usize, hop: usize) -> Result<ComplexSpectrogram> {
    let cfg = StftConfig { n_fft, hop, sample_rate: w.sample_rate };
    cfg.validate()?;
    if w.samples.is_empty() {
        return Err(Error::input("cannot analyse an empty waveform"));
    }
    let lead = n_fft - hop;
    let len = w.samples.len();
    let frames = (lead + len - 1) / hop + 1;
    let padded_len = (frames - 1) * hop + n_fft;
    let mut padded = vec![0.0; padded_len];
    padded[lead..lead + len].copy_from_slice(&w.samples);

    let window = hann(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let bins = cfg.bins();
    let mut re = Mat::zeros(bins, frames);
    let mut im = Mat::zeros(bins, frames);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        let start = t * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(padded[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            re[(k, t)] = buf[k].re;
            im[(k, t)] = buf[k].im;
        }
    }
    Ok(ComplexSpectrogram {
        re,
        im,
        framing: Framing { n_fft, hop, sample_rate: w.sample_rate, signal_len: Some(len) },
    })
}

/// Weighted overlap-add synthesis with the Hann window, normalised by the
/// window's constant overlap gain.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    s.validate()?;
    let Framing { n_fft, hop, sample_rate, signal_len } = s.framing;
    StftConfig { n_fft, hop, sample_rate }.validate()?;
    let frames = s.frames();
    let bins = s.framing.bins();
    let window = hann(n_fft);
    let gain = ola_gain(&window, hop);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_fft);

    let total = if frames == 0 { 0 } else { (frames - 1) * hop + n_fft };
    let mut out = vec![0.0; total];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let scale = 1.0 / (n_fft as f64 * gain);
    for t in 0..frames {
        for k in 0..bins {
            buf[k] = Complex::new(s.re[(k, t)], s.im[(k, t)]);
        }
        // Hermitian completion of the one-sided spectrum.
        for k in bins..n_fft {
            buf[k] = buf[n_fft - k].conj();
        }
        buf[0].im = 0.0;
        if n_fft % 2 == 0 {
            buf[n_fft / 2].im = 0.0;
        }
        ifft.process(&mut buf);
        let start = t * hop;
        for i in 0..n_fft {
            out[start + i] += buf[i].re * window[i] * scale;
        }
    }

    let samples = match signal_len {
        Some(len) => {
            let lead = n_fft - hop;
            let mut trimmed = vec![0.0; len];
            let avail = total.saturating_sub(lead).min(len);
            trimmed[..avail].copy_from_slice(&out[lead..lead + avail]);
            trimmed
        }
        None => out,
    };
    Ok(Waveform { samples, sample_rate })
}

/// Splits a complex spectrogram into magnitudes and unit phase factors.
/// Zero cells get phase `1 + 0i`.
pub fn magnitude_phase(s: &ComplexSpectrogram) -> (MagnitudeSpectrogram, Phase) {
    let mag = s.re.zip_map(&s.im, f64::hypot).expect("validated equal shapes");
    let mut phase_re = Mat::zeros(mag.rows(), mag.cols());
    let mut phase_im = Mat::zeros(mag.rows(), mag.cols());
    for i in 0..mag.len() {
        let m = mag.data()[i];
        if m > 0.0 {
            phase_re.data_mut()[i] = s.re.data()[i] / m;
            phase_im.data_mut()[i] = s.im.data()[i] / m;
        } else {
            phase_re.data_mut()[i] = 1.0;
        }
    }
    (MagnitudeSpectrogram { mag, framing: s.framing }, Phase { re: phase_re, im: phase_im })
}

/// Magnitude spectrogram of a waveform under `cfg`.
pub fn magnitude_spectrogram(w: &Waveform, cfg: &StftConfig) -> Result<MagnitudeSpectrogram> {
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::input(format!(
            "waveform at {} Hz, analysis configured for {} Hz",
            w.sample_rate, cfg.sample_rate
        )));
    }
    Ok(magnitude_phase(&stft(w, cfg.n_fft, cfg.hop)?).0)
}
