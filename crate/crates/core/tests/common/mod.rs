#![allow(dead_code)]

use lgfa::audio::Spectrogram;
use lgfa::model::LgfaConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random spectrogram matching `cfg`, values in [-3, 3).
pub fn random_spec(cfg: &LgfaConfig, seed: u64) -> Spectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_mels * cfg.n_frames * cfg.channels;
    let values = (0..n).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
    Spectrogram::new(values, cfg.n_mels, cfg.n_frames, cfg.channels, "random", 0.01).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
