use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    Hamming,
}

impl Window {
    /// Symmetric window of length `n`: `0.54 - 0.46 cos(2 pi i / (n - 1))`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hamming => {
                if n == 1 {
                    return vec![1.0];
                }
                (0..n)
                    .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
                    .collect()
            }
        }
    }
}

/// Mirror index into `[0, n)` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub fn frame_count(len: usize, hop: usize) -> usize {
    len / hop + 1
}

/// Magnitude spectrogram `[frames, n_fft / 2 + 1]` with reflect centering.
///
/// Frame `m` covers samples centered on `m * hop`.
pub fn stft(samples: &[f64], n_fft: usize, hop: usize, window: Window) -> Result<Tensor> {
    if hop == 0 {
        return Err(Error::invalid("stft", "hop must be positive"));
    }
    if n_fft < 2 {
        return Err(Error::invalid("stft", "n_fft must be at least 2"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("stft", "empty signal"));
    }
    let n = samples.len();
    let frames = frame_count(n, hop);
    let bins = n_fft / 2 + 1;
    let win = window.coefficients(n_fft);
    let pad = (n_fft / 2) as isize;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Vec::with_capacity(frames * bins);
    for m in 0..frames {
        let start = (m * hop) as isize - pad;
        for (j, (b, w)) in buf.iter_mut().zip(&win).enumerate() {
            *b = Complex::new(samples[reflect(start + j as isize, n)] * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.extend(buf[..bins].iter().map(|c| c.norm()));
    }
    Tensor::from_vec(&[frames, bins], out)
}
