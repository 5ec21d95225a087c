use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::AudioBuffer;
use crate::config::ModelConfig;
use crate::error::{GullError, Result};

/// One-sided complex spectrogram, `F x T` (bins by frames).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: Array2<Complex64>,
    pub window_ms: u32,
    pub hop_ms: u32,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn num_bins(&self) -> usize {
        self.bins.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.bins.ncols()
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Square root of the periodic Hann window; its square overlap-adds to one at 50% overlap.
pub fn sqrt_hann_window(len: usize) -> Vec<f64> {
    hann_window(len).into_iter().map(f64::sqrt).collect()
}

/// Causal framed STFT: frame `t` covers samples `[t*hop, t*hop + window)`,
/// the signal tail is zero-padded, and `T = ceil(len / hop)`.
#[derive(Clone)]
pub struct Stft {
    window_len: usize,
    hop: usize,
    analysis: Vec<f64>,
    synthesis: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft")
            .field("window_len", &self.window_len)
            .field("hop", &self.hop)
            .finish()
    }
}

impl Stft {
    pub fn new(analysis: Vec<f64>, synthesis: Vec<f64>, hop: usize) -> Self {
        assert_eq!(analysis.len(), synthesis.len());
        assert!(hop > 0 && !analysis.is_empty());
        let window_len = analysis.len();
        let mut planner = FftPlanner::new();
        Self {
            window_len,
            hop,
            forward: planner.plan_fft_forward(window_len),
            inverse: planner.plan_fft_inverse(window_len),
            analysis,
            synthesis,
        }
    }

    /// Square-root Hann analysis and synthesis at the codec's window and hop.
    pub fn for_config(config: &ModelConfig) -> Self {
        let win = sqrt_hann_window(config.window_len());
        Self::new(win.clone(), win, config.hop_len())
    }

    /// Hann analysis window for loss and discriminator spectrograms.
    pub fn hann(window_len: usize, hop: usize) -> Self {
        let win = hann_window(window_len);
        Self::new(win.clone(), win, hop)
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn num_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn num_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    /// Spectrum of the frame starting at `start`; samples past the end read as zero.
    pub fn analyze_frame(&self, samples: &[f64], start: usize) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = (0..self.window_len)
            .map(|n| {
                let x = samples.get(start + n).copied().unwrap_or(0.0);
                Complex64::new(x * self.analysis[n], 0.0)
            })
            .collect();
        self.forward.process(&mut buf);
        buf.truncate(self.num_bins());
        buf
    }

    pub fn analyze(&self, samples: &[f64]) -> Array2<Complex64> {
        let frames = self.num_frames(samples.len());
        let mut out = Array2::zeros((self.num_bins(), frames));
        for t in 0..frames {
            let spec = self.analyze_frame(samples, t * self.hop);
            for (f, v) in spec.into_iter().enumerate() {
                out[[f, t]] = v;
            }
        }
        out
    }

    /// Weighted overlap-add; returns `T * hop` samples.
    pub fn synthesize(&self, bins: &Array2<Complex64>) -> Vec<f64> {
        let frames = bins.ncols();
        let n = self.window_len;
        let f_count = self.num_bins();
        let mut out = vec![0.0; frames * self.hop + n];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let scale = 1.0 / n as f64;
        for t in 0..frames {
            for (f, slot) in buf.iter_mut().enumerate().take(f_count) {
                *slot = bins[[f, t]];
            }
            // DC and Nyquist are real for a real signal
            buf[0].im = 0.0;
            if n % 2 == 0 {
                buf[n / 2].im = 0.0;
            }
            for f in f_count..n {
                buf[f] = buf[n - f].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * self.hop;
            for (i, v) in buf.iter().enumerate() {
                out[start + i] += v.re * scale * self.synthesis[i];
            }
        }
        out.truncate(frames * self.hop);
        out
    }
}

pub fn stft(audio: &AudioBuffer, config: &ModelConfig) -> Result<Spectrogram> {
    if audio.sample_rate != config.operating_sr {
        return Err(GullError::Audio(format!(
            "STFT expects {} Hz audio, got {} Hz",
            config.operating_sr, audio.sample_rate
        )));
    }
    let stft = Stft::for_config(config);
    Ok(Spectrogram {
        bins: stft.analyze(&audio.samples),
        window_ms: config.window_ms,
        hop_ms: config.hop_ms,
        sample_rate: config.operating_sr,
    })
}

pub fn istft(spec: &Spectrogram, config: &ModelConfig) -> Result<AudioBuffer> {
    if spec.num_bins() != config.num_bins() || spec.sample_rate != config.operating_sr {
        return Err(GullError::Shape(format!(
            "spectrogram has {} bins at {} Hz, config expects {} at {} Hz",
            spec.num_bins(),
            spec.sample_rate,
            config.num_bins(),
            config.operating_sr
        )));
    }
    let stft = Stft::for_config(config);
    Ok(AudioBuffer {
        samples: stft.synthesize(&spec.bins),
        sample_rate: config.operating_sr,
    })
}
