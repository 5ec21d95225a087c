//! Training objectives evaluated as plain functions.
//!
//! Values for one decoder path; the sampled `(w, d)` and full `(W, D)` paths
//! are scored separately and summed by the caller.

pub mod discriminator;
pub mod mel;

use ndarray::{Array2, Array3};
use num_complex::Complex64;

pub use discriminator::{
    prepare_input, valid_bins, DiscOutput, Discriminator, DiscriminatorSet, SpectralConv, DISC_CHANNELS,
    DISC_WINDOWS, LEAKY_SLOPE,
};
pub use mel::MelFilterbank;

use crate::dsp::Stft;
use crate::error::{GullError, Result};

/// `(window, mel bands)` of the reconstruction loss; hop is a quarter window.
pub const LOSS_RESOLUTIONS: [(usize, usize); 7] = [
    (32, 5),
    (64, 10),
    (128, 20),
    (256, 40),
    (512, 80),
    (1024, 160),
    (2048, 320),
];
pub const COMMIT_WEIGHT: f64 = 0.2;
const FM_FLOOR: f64 = 1e-12;

fn mean_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64
}

/// Normalized magnitude and mel MAE of `s` against reference `x` (`bins x T`).
pub fn spectral_distance(
    s: &Array2<Complex64>,
    x: &Array2<Complex64>,
    mel: &MelFilterbank,
) -> Result<(f64, f64)> {
    if s.dim() != x.dim() || x.nrows() != mel.num_bins() || x.is_empty() {
        return Err(GullError::Shape(format!(
            "spectrograms {:?} and {:?} for a {}-bin filterbank",
            s.dim(),
            x.dim(),
            mel.num_bins()
        )));
    }
    let ms = s.mapv(Complex64::norm);
    let mx = x.mapv(Complex64::norm);
    let mag_norm = mx.mean().unwrap_or(0.0);
    let (mel_s, mel_x) = (mel.apply(ms.view()), mel.apply(mx.view()));
    let mel_norm = mel_x.mean().unwrap_or(0.0);
    if mag_norm <= 0.0 || mel_norm <= 0.0 {
        return Err(GullError::ZeroEnergy("reconstruction loss reference"));
    }
    Ok((
        mean_abs_diff(&ms, &mx) / mag_norm,
        mean_abs_diff(&mel_s, &mel_x) / mel_norm,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolutionDistance {
    pub window: usize,
    pub magnitude: f64,
    pub mel: f64,
}

/// Multi-resolution magnitude + mel loss on waveforms.
#[derive(Debug, Clone)]
pub struct ReconstructionLoss {
    pub sample_rate: u32,
    resolutions: Vec<(Stft, MelFilterbank)>,
}

impl ReconstructionLoss {
    pub fn new(sample_rate: u32) -> Self {
        let resolutions = LOSS_RESOLUTIONS
            .iter()
            .map(|&(win, mels)| (Stft::hann(win, win / 4), MelFilterbank::new(win, mels, sample_rate)))
            .collect();
        Self {
            sample_rate,
            resolutions,
        }
    }

    pub fn per_resolution(&self, s: &[f64], x: &[f64]) -> Result<Vec<ResolutionDistance>> {
        if s.len() != x.len() {
            return Err(GullError::Shape(format!(
                "signals of {} and {} samples",
                s.len(),
                x.len()
            )));
        }
        self.resolutions
            .iter()
            .map(|(stft, mel)| {
                let (magnitude, mel) = spectral_distance(&stft.analyze(s), &stft.analyze(x), mel)?;
                Ok(ResolutionDistance {
                    window: stft.window_len(),
                    magnitude,
                    mel,
                })
            })
            .collect()
    }

    pub fn evaluate(&self, s: &[f64], x: &[f64]) -> Result<f64> {
        Ok(self
            .per_resolution(s, x)?
            .iter()
            .map(|r| r.magnitude + r.mel)
            .sum())
    }
}

pub fn reconstruction_loss(s: &[f64], x: &[f64], sample_rate: u32) -> Result<f64> {
    ReconstructionLoss::new(sample_rate).evaluate(s, x)
}

fn check_pairs(a: &[Array3<f64>], b: &[Array3<f64>], what: &str) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(GullError::Shape(format!("{what}: {} vs {} maps", a.len(), b.len())));
    }
    for (p, q) in a.iter().zip(b) {
        if p.dim() != q.dim() || p.is_empty() {
            return Err(GullError::Shape(format!("{what}: map shapes {:?} vs {:?}", p.dim(), q.dim())));
        }
    }
    Ok(())
}

/// `(discriminator loss, generator loss)` averaged over discriminators.
///
/// The generator term is `E[D(S)^2]`.
pub fn lsgan_losses(real: &[Array3<f64>], fake: &[Array3<f64>]) -> Result<(f64, f64)> {
    check_pairs(real, fake, "LSGAN scores")?;
    let n = real.len() as f64;
    let mut d_loss = 0.0;
    let mut g_loss = 0.0;
    for (r, f) in real.iter().zip(fake) {
        let fake_sq = f.mapv(|v| v * v).mean().expect("non-empty");
        d_loss += r.mapv(|v| (v - 1.0) * (v - 1.0)).mean().expect("non-empty") + fake_sq;
        g_loss += fake_sq;
    }
    Ok((d_loss / n, g_loss / n))
}

/// Layer-normalized feature MAE, averaged over layers then discriminators.
pub fn feature_matching_loss(fake: &[DiscOutput], real: &[DiscOutput]) -> Result<f64> {
    if fake.is_empty() || fake.len() != real.len() {
        return Err(GullError::Shape(format!(
            "feature matching over {} vs {} discriminators",
            fake.len(),
            real.len()
        )));
    }
    let mut total = 0.0;
    for (f, r) in fake.iter().zip(real) {
        check_pairs(&f.features, &r.features, "feature maps")?;
        let mut acc = 0.0;
        for (fs, fx) in f.features.iter().zip(&r.features) {
            let count = fx.len() as f64;
            let mae = fs.iter().zip(fx.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / count;
            let scale = (fx.iter().map(|v| v.abs()).sum::<f64>() / count).max(FM_FLOOR);
            acc += mae / scale;
        }
        total += acc / f.features.len() as f64;
    }
    Ok(total / fake.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub reconstruction: f64,
    pub feature_matching: f64,
    pub generator: f64,
    pub commitment: f64,
}

pub fn total_generator_loss(parts: &LossParts) -> f64 {
    parts.reconstruction + parts.feature_matching + parts.generator + COMMIT_WEIGHT * parts.commitment
}
