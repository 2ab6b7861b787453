use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::error::{Error, Result};

/// Symmetric Hamming window, `0.54 − 0.46·cos(2πn/(W−1))`.
pub fn hamming_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Number of full frames in `n_samples`; a signal shorter than one window
/// still produces a single (zero-padded) frame.
pub fn n_frames(n_samples: usize, window: usize, hop: usize) -> usize {
    if n_samples <= window {
        1
    } else {
        (n_samples - window) / hop + 1
    }
}

/// Hamming-windowed short-time Fourier transform with a zero-padded FFT.
pub struct Stft {
    window: Vec<f64>,
    hop: usize,
    fft_size: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("window_len", &self.window.len())
            .field("hop", &self.hop)
            .field("fft_size", &self.fft_size)
            .finish()
    }
}

impl Stft {
    pub fn new(window_len: usize, hop: usize, fft_size: usize) -> Result<Self> {
        if window_len == 0 || hop == 0 || fft_size < window_len {
            return Err(Error::Config(format!(
                "invalid STFT geometry: window {window_len}, hop {hop}, fft {fft_size}"
            )));
        }
        Ok(Stft {
            window: hamming_window(window_len),
            hop,
            fft_size,
            fft: FftPlanner::new().plan_fft_forward(fft_size),
        })
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frame_count(&self, n_samples: usize) -> usize {
        n_frames(n_samples, self.window.len(), self.hop)
    }

    /// One row of `n_bins` complex coefficients per frame.
    pub fn frames(&self, samples: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let win = self.window.len();
        let count = self.frame_count(samples.len());
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        (0..count)
            .map(|i| {
                let start = i * self.hop;
                buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
                for n in 0..win {
                    let s = samples.get(start + n).copied().unwrap_or(0.0);
                    buf[n] = Complex::new(s * self.window[n], 0.0);
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                buf[..self.n_bins()].to_vec()
            })
            .collect()
    }

    /// Magnitude-squared spectra.
    pub fn power_frames(&self, samples: &[f64]) -> Vec<Vec<f64>> {
        self.frames(samples)
            .into_iter()
            .map(|row| row.into_iter().map(|c| c.norm_sqr()).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct O(N²) DFT of one windowed, zero-padded frame.
    fn naive_dft_magnitudes(frame: &[f64], size: usize) -> Vec<f64> {
        let mut padded = frame.to_vec();
        padded.resize(size, 0.0);
        (0..=size / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &x) in padded.iter().enumerate() {
                    let angle = -2.0 * std::f64::consts::PI * (k * n) as f64 / size as f64;
                    re += x * angle.cos();
                    im += x * angle.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    fn sine(freq: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin())
            .collect()
    }

    #[test]
    fn one_second_gives_99_frames() {
        let stft = Stft::new(320, 160, 512).unwrap();
        assert_eq!(stft.frame_count(16_000), 99);
        assert_eq!(stft.frames(&vec![0.0; 16_000]).len(), 99);
    }

    #[test]
    fn short_clip_is_one_frame() {
        let stft = Stft::new(320, 160, 512).unwrap();
        assert_eq!(stft.frames(&[0.5; 100]).len(), 1);
        assert_eq!(n_frames(320, 320, 160), 1);
        assert_eq!(n_frames(479, 320, 160), 1);
        assert_eq!(n_frames(480, 320, 160), 2);
    }

    #[test]
    fn silence_has_zero_magnitude() {
        let stft = Stft::new(320, 160, 512).unwrap();
        for row in stft.power_frames(&vec![0.0; 4000]) {
            assert!(row.iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn one_khz_peaks_at_bin_32() {
        let stft = Stft::new(320, 160, 512).unwrap();
        let signal = sine(1000.0, 16_000);
        let frames = stft.frames(&signal);
        assert_eq!(frames[0].len(), 257);
        for row in &frames {
            let peak = (0..row.len())
                .max_by(|&a, &b| row[a].norm().total_cmp(&row[b].norm()))
                .unwrap();
            assert_eq!(peak, 32);
        }
        let window = hamming_window(320);
        let windowed: Vec<f64> = signal[..320].iter().zip(&window).map(|(s, w)| s * w).collect();
        let oracle = naive_dft_magnitudes(&windowed, 512);
        let oracle_peak = (0..oracle.len())
            .max_by(|&a, &b| oracle[a].total_cmp(&oracle[b]))
            .unwrap();
        assert_eq!(oracle_peak, 32);
        for (a, b) in frames[0].iter().zip(&oracle) {
            assert!((a.norm() - b).abs() < 1e-9);
        }
    }

    #[test]
    fn hamming_is_symmetric() {
        let w = hamming_window(320);
        assert!((w[0] - 0.08).abs() < 1e-12);
        assert!((w[319] - 0.08).abs() < 1e-12);
        for n in 0..160 {
            assert!((w[n] - w[319 - n]).abs() < 1e-12);
        }
    }
}
