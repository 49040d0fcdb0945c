use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    /// Samples in `[-1, 1]`.
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>) -> Self {
        AudioClip {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads 16-bit PCM mono 16 kHz WAV; samples are scaled by `1 / 32768`.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Audio(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Audio(format!(
            "{}: sample rate {} Hz, expected {SAMPLE_RATE} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Audio(format!(
            "{}: {:?} {}-bit samples, only 16-bit PCM is supported",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Quantizes to 16-bit PCM, rounding to nearest and saturating.
pub fn quantize(v: f64) -> i16 {
    (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &clip.samples {
        w.write_sample(quantize(s))?;
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_convention() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for s in [-32768i16, 32767, 0, 0] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.samples, vec![-1.0, 32767.0 / 32768.0, 0.0, 0.0]);
    }

    #[test]
    fn roundtrip_is_exact_on_the_quantization_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wav");
        let samples: Vec<f64> = (0..500).map(|i| ((i * 7919) % 65536) as f64 / 32768.0 - 1.0).collect();
        write_wav(&AudioClip::new(samples.clone()), &path).unwrap();
        assert_eq!(read_wav(&path).unwrap().samples, samples);

        let off_grid: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin() * 0.9).collect();
        write_wav(&AudioClip::new(off_grid.clone()), &path).unwrap();
        for (a, b) in read_wav(&path).unwrap().samples.iter().zip(&off_grid) {
            assert!((a - b).abs() <= 0.5 / 32768.0);
        }
    }

    #[test]
    fn silence_reads_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.wav");
        write_wav(&AudioClip::new(vec![0.0; 64]), &path).unwrap();
        assert!(read_wav(&path).unwrap().samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn rejects_stereo_rate_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("s.wav");
        let mut spec = hound::WavSpec {
            channels: 2,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&stereo), Err(Error::Audio(_))));

        spec.channels = 1;
        spec.sample_rate = 44_100;
        let rate = dir.path().join("r.wav");
        let mut w = hound::WavWriter::create(&rate, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&rate), Err(Error::Audio(_))));

        let junk = dir.path().join("j.wav");
        std::fs::write(&junk, b"RIFF\x00\x00nope").unwrap();
        assert!(read_wav(&junk).is_err());
    }
}
