//! Deterministic inputs shared by the benchmarks.

use gull_core::{AudioBuffer, Embeddings};
use ndarray::Array3;

/// A chirp with a little hash noise, `seconds` long.
pub fn test_signal(sample_rate: u32, seconds: f64) -> AudioBuffer {
    let n = (sample_rate as f64 * seconds) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            let phase = 2.0 * std::f64::consts::PI * (200.0 * t + 900.0 * t * t);
            0.5 * phase.sin() + 0.01 * hash_unit(i as u64)
        })
        .collect();
    AudioBuffer::new(samples, sample_rate).expect("finite samples")
}

/// Embeddings with entries in `[-1, 1)`.
pub fn test_embeddings(frames: usize, bands: usize, dim: usize) -> Embeddings {
    Embeddings(Array3::from_shape_fn((frames, bands, dim), |(t, k, n)| {
        hash_unit(((t * 131 + k) * 257 + n) as u64)
    }))
}

fn hash_unit(i: u64) -> f64 {
    let mut z = i.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_are_bounded_and_deterministic() {
        let a = test_signal(16_000, 0.1);
        assert_eq!(a.len(), 1600);
        assert!(a.samples.iter().all(|s| s.abs() <= 0.51));
        assert_eq!(a, test_signal(16_000, 0.1));
        let e = test_embeddings(3, 4, 5);
        assert!(e.0.iter().all(|v| (-1.0..1.0).contains(v)));
    }
}
