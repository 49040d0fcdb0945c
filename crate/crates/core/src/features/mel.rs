use super::stft::{stft, Window};
use super::wav::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: SAMPLE_RATE,
            n_fft: 2048,
            hop: 256,
            window: Window::Hamming,
            n_mels: 128,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::Config(format!("feature: {d}")));
        if self.hop == 0 || self.n_fft < 2 {
            return bad(format!("n_fft {} / hop {} out of range", self.n_fft, self.hop));
        }
        if self.n_mels == 0 || self.n_mels > self.n_fft / 2 + 1 {
            return bad(format!("n_mels {} must be in 1..={}", self.n_mels, self.n_fft / 2 + 1));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return bad(format!("need 0 <= fmin < fmax <= {nyquist}, got {} / {}", self.fmin, self.fmax));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return bad(format!("log_floor {} must be positive", self.log_floor));
        }
        Ok(())
    }

    /// Seconds per model output frame when time is pooled by `time_pool`.
    pub fn frame_duration(&self, time_pool: usize) -> f64 {
        (self.hop * time_pool) as f64 / self.sample_rate as f64
    }
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= min_log_hz {
        min_log_mel + (hz / min_log_hz).ln() / logstep
    } else {
        hz / f_sp
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        min_log_hz * (logstep * (mel - min_log_mel)).exp()
    } else {
        f_sp * mel
    }
}

#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// `[n_mels, n_fft / 2 + 1]`
    pub weights: Tensor,
    /// Center frequency of each filter in Hz.
    pub centers: Vec<f64>,
    /// Half-open range of FFT bins where each filter is nonzero.
    pub support: Vec<(usize, usize)>,
}

/// Triangular filters equally spaced on the mel scale, each scaled to unit
/// area (`2 / bandwidth`).
pub fn mel_filterbank(cfg: &MelConfig) -> Result<MelFilterbank> {
    cfg.validate()?;
    let bins = cfg.n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let fft_freq = |k: usize| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mut w = vec![0.0; cfg.n_mels * bins];
    for m in 0..cfg.n_mels {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (r - l);
        for k in 0..bins {
            let f = fft_freq(k);
            let v = ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0);
            w[m * bins + k] = v * norm;
        }
    }
    let support = (0..cfg.n_mels)
        .map(|m| {
            let row = &w[m * bins..(m + 1) * bins];
            let lo = row.iter().position(|&v| v > 0.0).unwrap_or(0);
            let hi = row.iter().rposition(|&v| v > 0.0).map_or(lo, |i| i + 1);
            (lo, hi)
        })
        .collect();
    Ok(MelFilterbank {
        support,
        weights: Tensor::from_vec(&[cfg.n_mels, bins], w)?,
        centers: edges[1..=cfg.n_mels].to_vec(),
    })
}

/// Log mel spectrogram `[1, 1, frames, n_mels]` of a clip.
pub fn logmel(clip: &AudioClip, cfg: &MelConfig) -> Result<Tensor> {
    let fb = mel_filterbank(cfg)?;
    logmel_with(clip, cfg, &fb)
}

pub fn logmel_with(clip: &AudioClip, cfg: &MelConfig, fb: &MelFilterbank) -> Result<Tensor> {
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::Audio(format!(
            "clip sample rate {} differs from feature rate {}",
            clip.sample_rate, cfg.sample_rate
        )));
    }
    let spec = stft(&clip.samples, cfg.n_fft, cfg.hop, cfg.window)?;
    let (frames, bins) = (spec.shape()[0], spec.shape()[1]);
    let w = fb.weights.data();
    let mut out = Vec::with_capacity(frames * cfg.n_mels);
    let mut power = vec![0.0; bins];
    for t in 0..frames {
        for (p, &m) in power.iter_mut().zip(&spec.data()[t * bins..(t + 1) * bins]) {
            *p = m * m;
        }
        for m in 0..cfg.n_mels {
            let (lo, hi) = fb.support[m];
            let e: f64 = w[m * bins + lo..m * bins + hi].iter().zip(&power[lo..hi]).map(|(a, b)| a * b).sum();
            out.push((e + cfg.log_floor).ln());
        }
    }
    Tensor::from_vec(&[1, 1, frames, cfg.n_mels], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, secs: f64, amp: f64) -> AudioClip {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        AudioClip::new(
            (0..n)
                .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
                .collect(),
        )
    }

    #[test]
    fn mel_scale_roundtrip_and_knee() {
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
        assert!((hz_to_mel(6400.0) - 42.0).abs() < 1e-12);
        for hz in [0.0, 37.0, 999.0, 1000.0, 4321.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn filters_positive_and_contiguous() {
        let fb = mel_filterbank(&MelConfig::default()).unwrap();
        let bins = fb.weights.shape()[1];
        for m in 0..128 {
            let row = &fb.weights.data()[m * bins..(m + 1) * bins];
            assert!(row.iter().sum::<f64>() > 0.0, "filter {m} empty");
            let nz: Vec<usize> = (0..bins).filter(|&k| row[k] > 0.0).collect();
            assert_eq!(nz.last().unwrap() - nz[0] + 1, nz.len(), "filter {m} has gaps");
        }
        assert!(fb.centers.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn zero_signal_is_log_floor() {
        let cfg = MelConfig::default();
        let m = logmel(&AudioClip::new(vec![0.0; 4000]), &cfg).unwrap();
        assert_eq!(m.shape(), &[1, 1, 16, 128]);
        let floor = 1e-10f64.ln();
        assert!(m.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn sine_peaks_at_nearest_center() {
        let cfg = MelConfig::default();
        let fb = mel_filterbank(&cfg).unwrap();
        let m = logmel(&sine(440.0, 1.0, 0.5), &cfg).unwrap();
        let nearest = (0..128)
            .min_by(|&a, &b| (fb.centers[a] - 440.0).abs().total_cmp(&(fb.centers[b] - 440.0).abs()))
            .unwrap();
        for t in 5..m.shape()[2] - 5 {
            let row: Vec<f64> = (0..128).map(|f| m.at(&[0, 0, t, f])).collect();
            let arg = (0..128).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(arg, nearest);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = MelConfig {
            n_mels: 2000,
            ..MelConfig::default()
        };
        assert!(c.validate().is_err());
        c.n_mels = 128;
        c.fmax = 9000.0;
        assert!(c.validate().is_err());
        c.fmax = 8000.0;
        c.log_floor = 0.0;
        assert!(c.validate().is_err());
    }
}
