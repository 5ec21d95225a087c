use ndarray::{Array1, Array2, ArrayView2};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters from 0 Hz to Nyquist, `n_mels x bins`.
///
/// A filter narrower than the bin spacing would be empty; it then takes a
/// single unit weight on the bin nearest its centre.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
}

impl MelFilterbank {
    pub fn new(window_len: usize, n_mels: usize, sample_rate: u32) -> Self {
        let bins = window_len / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let bin_hz = sample_rate as f64 / window_len as f64;
        let top = hz_to_mel(nyquist);
        let points: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = Array2::zeros((n_mels, bins));
        for m in 0..n_mels {
            let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
            for b in 0..bins {
                let f = b as f64 * bin_hz;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights[[m, b]] = w;
            }
            if weights.row(m).iter().all(|&w| w == 0.0) {
                let nearest = ((mid / bin_hz).round() as usize).min(bins - 1);
                weights[[m, nearest]] = 1.0;
            }
        }
        Self { weights }
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.weights.ncols()
    }

    /// Mel spectrogram of a magnitude spectrogram (`bins x T`).
    pub fn apply(&self, magnitude: ArrayView2<f64>) -> Array2<f64> {
        self.weights.dot(&magnitude)
    }

    pub fn apply_frame(&self, magnitude: &Array1<f64>) -> Array1<f64> {
        self.weights.dot(magnitude)
    }
}
