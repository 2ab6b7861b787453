use crate::error::{Error, Result};

/// HTK Mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with centres equally spaced on the HTK Mel scale.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    weights: Vec<f64>,
    n_mels: usize,
    n_bins: usize,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    /// `n_bins` linearly spaced FFT bins cover `0..=sample_rate/2`.
    pub fn new(n_mels: usize, n_bins: usize, sample_rate: f64, fmin: f64, fmax: f64) -> Result<Self> {
        let nyquist = sample_rate / 2.0;
        if n_mels == 0 || n_bins < 2 {
            return Err(Error::Config(format!(
                "mel filterbank needs n_mels > 0 and n_bins >= 2, got {n_mels}/{n_bins}"
            )));
        }
        if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
            return Err(Error::Config(format!(
                "invalid mel frequency range {fmin}..{fmax} Hz (Nyquist {nyquist} Hz)"
            )));
        }
        let mel_lo = hz_to_mel(fmin);
        let mel_hi = hz_to_mel(fmax);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = nyquist / (n_bins - 1) as f64;

        let mut weights = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for b in 0..n_bins {
                let f = b as f64 * bin_hz;
                let rising = (f - lo) / (center - lo);
                let falling = (hi - f) / (hi - center);
                weights[m * n_bins + b] = rising.min(falling).max(0.0);
            }
        }
        Ok(MelFilterbank {
            weights,
            n_mels,
            n_bins,
            centers_hz: edges[1..=n_mels].to_vec(),
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn filter(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// Mel energies of one power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        (0..self.n_mels)
            .map(|m| self.filter(m).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}
