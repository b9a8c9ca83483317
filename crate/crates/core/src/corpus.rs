//! Speech-like training and test material: a harmonic synthesizer with
//! male-like and female-like voice profiles, ingestion of WAV directories,
//! and construction of paired experiment sets mixed at 0 dB.
//!
//! All synthesized audio is quantized to the 16-bit PCM grid, so writing it
//! to WAV and reading it back is lossless.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signal::{magnitude_spectrogram, mix_at_0db, read_wav, MagnitudeSpectrogram, StftConfig, Waveform};

/// Resonance of the vocal tract, modelled as a Lorentzian bump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub freq_hz: f64,
    pub bandwidth_hz: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceProfile {
    pub label: String,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    pub formants: Vec<Formant>,
    /// Peak pitch deviation of the vibrato, as a fraction of F0.
    pub vibrato_depth: f64,
    pub vibrato_rate_hz: f64,
}

impl SourceProfile {
    pub fn male() -> Self {
        Self {
            label: "male".into(),
            f0_min_hz: 85.0,
            f0_max_hz: 155.0,
            formants: vec![
                Formant { freq_hz: 550.0, bandwidth_hz: 90.0, gain: 1.0 },
                Formant { freq_hz: 1250.0, bandwidth_hz: 120.0, gain: 0.55 },
                Formant { freq_hz: 2400.0, bandwidth_hz: 180.0, gain: 0.3 },
            ],
            vibrato_depth: 0.02,
            vibrato_rate_hz: 5.0,
        }
    }

    pub fn female() -> Self {
        Self {
            label: "female".into(),
            f0_min_hz: 165.0,
            f0_max_hz: 255.0,
            formants: vec![
                Formant { freq_hz: 850.0, bandwidth_hz: 110.0, gain: 1.0 },
                Formant { freq_hz: 2000.0, bandwidth_hz: 150.0, gain: 0.7 },
                Formant { freq_hz: 3200.0, bandwidth_hz: 220.0, gain: 0.45 },
            ],
            vibrato_depth: 0.03,
            vibrato_rate_hz: 5.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(self.f0_min_hz) && self.f0_min_hz <= self.f0_max_hz && self.f0_max_hz.is_finite()) {
            return Err(Error::config(format!(
                "profile {}: F0 range [{}, {}] Hz is invalid",
                self.label, self.f0_min_hz, self.f0_max_hz
            )));
        }
        if self.formants.is_empty()
            || self.formants.iter().any(|f| !(positive(f.freq_hz) && positive(f.bandwidth_hz) && positive(f.gain)))
        {
            return Err(Error::config(format!("profile {}: formants must be non-empty and positive", self.label)));
        }
        if !(0.0..0.5).contains(&self.vibrato_depth) || !(self.vibrato_rate_hz >= 0.0) {
            return Err(Error::config(format!("profile {}: vibrato out of range", self.label)));
        }
        Ok(())
    }

    /// A speaker drawn from this profile: formant frequencies shifted by a
    /// common factor in [0.92, 1.08].
    pub fn instance(&self, rng: &mut impl Rng) -> Self {
        let shift = rng.random_range(0.92..1.08);
        let mut p = self.clone();
        for f in &mut p.formants {
            f.freq_hz *= shift;
        }
        p
    }

    fn envelope(&self, freq: f64, formant_scale: f64) -> f64 {
        let tilt = 1.0 / (1.0 + freq / 1000.0);
        let bumps: f64 = self
            .formants
            .iter()
            .map(|f| {
                let d = (freq - f.freq_hz * formant_scale) / f.bandwidth_hz;
                f.gain / (1.0 + d * d)
            })
            .sum();
        tilt * (0.02 + bumps)
    }
}

/// Highest harmonic frequency rendered.
const MAX_HARMONIC_HZ: f64 = 5000.0;
/// Peak level of a synthesized utterance.
const SYNTH_PEAK: f64 = 0.5;
const PCM_SCALE: f64 = 32768.0;

/// Snaps samples to the PCM16 grid. Adding `0.0` turns `-0.0` into `+0.0`,
/// which is what a WAV roundtrip yields, so hashes survive the disk.
fn quantize(samples: &mut [f64]) {
    for v in samples {
        *v = (*v * PCM_SCALE).round().clamp(-PCM_SCALE, PCM_SCALE - 1.0) / PCM_SCALE + 0.0;
    }
}

/// Renders a voiced utterance: syllables with gliding pitch and vibrato,
/// harmonics shaped by the profile's formants (re-targeted per syllable to
/// imitate changing vowels), raised-cosine onsets and short pauses.
pub fn synth_source(profile: &SourceProfile, duration_secs: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    profile.validate()?;
    if !(duration_secs > 0.0 && duration_secs.is_finite()) || sample_rate == 0 {
        return Err(Error::config("duration and sample rate must be positive"));
    }
    let sr = sample_rate as f64;
    let n = (duration_secs * sr).round() as usize;
    let nyquist_cap = (0.45 * sr).min(MAX_HARMONIC_HZ);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n];
    let mut pos = 0usize;
    let mut vib_phase = rng.random_range(0.0..2.0 * PI);

    while pos < n {
        pos += (rng.random_range(0.03..0.12) * sr) as usize;
        let len = ((rng.random_range(0.15..0.45) * sr) as usize).min(n.saturating_sub(pos));
        if len == 0 {
            break;
        }
        let f_start = rng.random_range(profile.f0_min_hz..=profile.f0_max_hz);
        let f_end = rng.random_range(profile.f0_min_hz..=profile.f0_max_hz);
        let vowel = rng.random_range(0.85..1.15);
        let level = rng.random_range(0.5..1.0);
        let ramp = (0.02 * sr) as usize;
        let max_k = (nyquist_cap / profile.f0_min_hz) as usize;
        let mut phases: Vec<f64> = (0..max_k).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

        for i in 0..len {
            let frac = i as f64 / len as f64;
            vib_phase += 2.0 * PI * profile.vibrato_rate_hz / sr;
            let f0 = (f_start + (f_end - f_start) * frac) * (1.0 + profile.vibrato_depth * vib_phase.sin());
            let onset = if i < ramp { 0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos() } else { 1.0 };
            let tail = len - 1 - i;
            let offset = if tail < ramp { 0.5 - 0.5 * (PI * tail as f64 / ramp as f64).cos() } else { 1.0 };
            let mut v = 0.0;
            for (k, ph) in phases.iter_mut().enumerate() {
                let fk = (k + 1) as f64 * f0;
                if fk >= nyquist_cap {
                    break;
                }
                *ph += 2.0 * PI * fk / sr;
                v += profile.envelope(fk, vowel) * ph.sin();
            }
            out[pos + i] = level * onset * offset * v;
        }
        pos += len;
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::config("duration too short to contain a syllable"));
    }
    out.iter_mut().for_each(|v| *v *= SYNTH_PEAK / peak);
    quantize(&mut out);
    Waveform::new(out, sample_rate)
}

/// Training utterances and one held-out test utterance of a single speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCorpus {
    pub label: String,
    pub seed: u64,
    pub train: Vec<Waveform>,
    pub test: Waveform,
}

impl SourceCorpus {
    /// Magnitude frames of every training utterance, concatenated in time.
    pub fn train_frames(&self, cfg: &StftConfig) -> Result<MagnitudeSpectrogram> {
        let mut frames: Option<MagnitudeSpectrogram> = None;
        for w in &self.train {
            let s = magnitude_spectrogram(w, cfg)?;
            frames = Some(match frames {
                None => s,
                Some(mut acc) => {
                    acc.mag = acc.mag.hcat(&s.mag)?;
                    acc.framing.signal_len = None;
                    acc
                }
            });
        }
        frames.ok_or_else(|| Error::input(format!("source {} has no training utterances", self.label)))
    }

    pub fn train_duration_secs(&self) -> f64 {
        self.train.iter().map(Waveform::duration_secs).sum()
    }
}

/// Loads every `*.wav` file in `dir`; in lexicographic order, the last one is
/// the test utterance and the others are for training.
pub fn ingest_wav_dir(dir: &Path, sample_rate: u32, label: &str) -> Result<SourceCorpus> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            files.push(path);
        }
    }
    files.sort();
    if files.len() < 2 {
        return Err(Error::input(format!(
            "{}: need at least two WAV files (training + test), found {}",
            dir.display(),
            files.len()
        )));
    }
    let mut waves = files.iter().map(|f| read_wav(f, Some(sample_rate))).collect::<Result<Vec<_>>>()?;
    let test = waves.pop().expect("at least two files");
    Ok(SourceCorpus { label: label.to_owned(), seed: 0, train: waves, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub pairs: usize,
    pub train_secs: f64,
    pub test_secs: f64,
    pub train_utterances: usize,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { pairs: 25, train_secs: 30.0, test_secs: 3.0, train_utterances: 9, sample_rate: 16000, seed: 0 }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs == 0 || self.train_utterances == 0 || self.sample_rate == 0 {
            return Err(Error::config("pairs, train_utterances and sample_rate must be positive"));
        }
        if !(self.train_secs > 0.0 && self.test_secs > 0.0 && self.train_secs.is_finite() && self.test_secs.is_finite()) {
            return Err(Error::config("train_secs and test_secs must be positive"));
        }
        Ok(())
    }
}

/// One speaker pair: the first source is male-like, the second female-like.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPair {
    pub id: usize,
    pub seed: u64,
    pub sources: [SourceCorpus; 2],
    /// Test utterances as they enter the mixture (equal RMS, zero-padded).
    pub references: [Waveform; 2],
    pub mixture: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSet {
    pub pairs: Vec<ExperimentPair>,
    /// SHA-256 over every sample of every pair, hex encoded.
    pub hash: String,
}

/// Distinct sub-seeds: an odd multiplier makes `i ↦ seed` injective.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Peak level the mixture is scaled down to when it would otherwise clip.
const MIX_PEAK: f64 = 0.9;

fn synth_corpus(profile: &SourceProfile, cfg: &CorpusConfig, seed: u64) -> Result<SourceCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speaker = profile.instance(&mut rng);
    let utter_secs = cfg.train_secs / cfg.train_utterances as f64;
    let train = (0..cfg.train_utterances)
        .map(|j| synth_source(&speaker, utter_secs, cfg.sample_rate, derive_seed(seed, j as u64)))
        .collect::<Result<Vec<_>>>()?;
    let test = synth_source(&speaker, cfg.test_secs, cfg.sample_rate, derive_seed(seed, u32::MAX as u64))?;
    Ok(SourceCorpus { label: profile.label.clone(), seed, train, test })
}

/// Builds pair `index` of the experiment set described by `cfg`.
pub fn build_pair(cfg: &CorpusConfig, index: usize) -> Result<ExperimentPair> {
    cfg.validate()?;
    let seed = derive_seed(cfg.seed, index as u64);
    let male = synth_corpus(&SourceProfile::male(), cfg, derive_seed(seed, 0))?;
    let female = synth_corpus(&SourceProfile::female(), cfg, derive_seed(seed, 1))?;
    pair_from_sources(index, seed, [male, female])
}

/// Mixes the test utterances of two corpora at 0 dB. The references are
/// quantized to the PCM grid and the mixture is their exact sum, scaled
/// jointly so the mixture peak stays at or below 0.9.
pub fn pair_from_sources(id: usize, seed: u64, sources: [SourceCorpus; 2]) -> Result<ExperimentPair> {
    let mix = mix_at_0db(&sources[0].test, &sources[1].test)?;
    let peak = mix.mixture.peak();
    let k = if peak > MIX_PEAK { MIX_PEAK / peak } else { 1.0 };
    let mut a = mix.a.scaled(k);
    let mut b = mix.b.scaled(k);
    quantize(&mut a.samples);
    quantize(&mut b.samples);
    let samples = a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect();
    let mixture = Waveform::new(samples, a.sample_rate)?;
    Ok(ExperimentPair { id, seed, sources, references: [a, b], mixture })
}

pub fn build_experiment_set(cfg: &CorpusConfig) -> Result<ExperimentSet> {
    cfg.validate()?;
    let pairs = (0..cfg.pairs).map(|i| build_pair(cfg, i)).collect::<Result<Vec<_>>>()?;
    Ok(ExperimentSet { hash: corpus_hash(&pairs), pairs })
}

/// Content hash of a list of pairs; any change to any sample changes it.
pub fn corpus_hash(pairs: &[ExperimentPair]) -> String {
    let mut h = Sha256::new();
    let mut feed = |w: &Waveform| {
        h.update((w.len() as u64).to_le_bytes());
        h.update(w.sample_rate.to_le_bytes());
        for v in &w.samples {
            h.update(v.to_le_bytes());
        }
    };
    for p in pairs {
        for s in &p.sources {
            s.train.iter().for_each(&mut feed);
            feed(&s.test);
        }
        p.references.iter().for_each(&mut feed);
        feed(&p.mixture);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
