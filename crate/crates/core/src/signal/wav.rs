use std::path::Path;

use hound::{SampleFormat, WavSpec};

use super::Waveform;
use crate::error::{Error, Result};

const FULL_SCALE: f64 = 32768.0;

/// Reads a mono 16-bit PCM file. When `expected_rate` is given, any other
/// rate is rejected (no resampling).
pub fn read_wav(path: &Path, expected_rate: Option<u32>) -> Result<Waveform> {
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return Err(Error::input(format!(
            "{}: expected mono 16-bit PCM, found {} channel(s) at {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    if let Some(rate) = expected_rate {
        if spec.sample_rate != rate {
            return Err(Error::input(format!(
                "{}: sample rate {} Hz, expected {rate} Hz",
                path.display(),
                spec.sample_rate
            )));
        }
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes mono 16-bit PCM, clamping to full scale.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &v in &w.samples {
        let q = (v * FULL_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(q).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_roundtrip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = Waveform::new((0..500).map(|i| (i as f64 * 0.01).sin() * 0.8).collect(), 16_000)
            .unwrap();
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path, Some(16_000)).unwrap();
        assert_eq!(back.len(), w.len());
        assert!(back.samples.iter().zip(&w.samples).all(|(a, b)| (a - b).abs() <= 0.5 / FULL_SCALE));
    }

    #[test]
    fn rate_mismatch_and_garbage_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        write_wav(&path, &Waveform::new(vec![0.0; 10], 8_000).unwrap()).unwrap();
        assert!(matches!(read_wav(&path, Some(16_000)), Err(Error::Input(_))));
        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"not a wav file").unwrap();
        assert!(matches!(read_wav(&junk, None), Err(Error::Wav { .. })));
    }
}
