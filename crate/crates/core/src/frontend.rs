//! Gain-shape features and subband embeddings.
//!
//! Each subband frame `x` (complex, `G` bins) becomes the `2G + 1` real vector
//! `[Re(x)/|x|, Im(x)/|x|, log|x|]`, which is RMVN-normalized and projected to
//! `N` dimensions with band-specific parameters.

use ndarray::{Array1, ArrayView1};
use num_complex::Complex64;
use rand::Rng;

use crate::dsp::SubbandSpectrogram;
use crate::error::{GullError, Result};
use crate::nn::{Linear, Rmvn};
use crate::tensor::Embeddings;

/// Norms below this are clamped before division and log.
pub const GAIN_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GainShapeVector(pub Array1<f64>);

impl GainShapeVector {
    /// Number of complex bins `G` this vector describes.
    pub fn bins(&self) -> usize {
        (self.0.len() - 1) / 2
    }

    pub fn shape_part(&self) -> ArrayView1<'_, f64> {
        self.0.slice(ndarray::s![..2 * self.bins()])
    }

    pub fn log_gain(&self) -> f64 {
        self.0[self.0.len() - 1]
    }
}

pub fn gain_shape(frame: &[Complex64]) -> GainShapeVector {
    let g = frame.len();
    let norm = frame.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt().max(GAIN_FLOOR);
    let mut v = Array1::zeros(2 * g + 1);
    for (i, c) in frame.iter().enumerate() {
        v[i] = c.re / norm;
        v[g + i] = c.im / norm;
    }
    v[2 * g] = norm.ln();
    GainShapeVector(v)
}

pub fn inverse_gain_shape(g: &GainShapeVector) -> Vec<Complex64> {
    let bins = g.bins();
    let gain = g.log_gain().exp();
    (0..bins)
        .map(|i| Complex64::new(g.0[i] * gain, g.0[bins + i] * gain))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontendBand {
    pub rmvn: Rmvn,
    pub fc: Linear,
}

impl FrontendBand {
    pub fn embed(&self, frame: &[Complex64]) -> Array1<f64> {
        let g = gain_shape(frame);
        self.fc.forward(self.rmvn.forward(g.0.view()).view())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontendParams {
    pub bands: Vec<FrontendBand>,
}

impl FrontendParams {
    pub fn random<R: Rng>(bin_counts: &[usize], dim: usize, eps: f64, rng: &mut R) -> Self {
        let bands = bin_counts
            .iter()
            .map(|&g| FrontendBand {
                rmvn: Rmvn::identity(2 * g + 1, eps),
                fc: Linear::random(2 * g + 1, dim, rng),
            })
            .collect();
        Self { bands }
    }

    pub fn dim(&self) -> usize {
        self.bands.first().map_or(0, |b| b.fc.out_dim())
    }
}

/// Embeds the first `k_hat` subbands into an `N x K̂ x T` tensor.
pub fn embed_subbands(
    subbands: &SubbandSpectrogram,
    params: &FrontendParams,
    k_hat: usize,
) -> Result<Embeddings> {
    if k_hat == 0 || k_hat > subbands.bands.len() || k_hat > params.bands.len() {
        return Err(GullError::Shape(format!(
            "cannot embed {k_hat} bands from {} subbands with {} parameter sets",
            subbands.bands.len(),
            params.bands.len()
        )));
    }
    let frames = subbands.num_frames();
    let mut out = Embeddings::zeros(params.dim(), k_hat, frames);
    let mut frame = Vec::new();
    for (k, (band, p)) in subbands.bands.iter().zip(&params.bands).take(k_hat).enumerate() {
        if p.rmvn.dim() != 2 * band.nrows() + 1 || p.fc.in_dim() != p.rmvn.dim() {
            return Err(GullError::Shape(format!(
                "band {k} has {} bins but its frontend expects {}",
                band.nrows(),
                (p.rmvn.dim().saturating_sub(1)) / 2
            )));
        }
        for t in 0..frames {
            frame.clear();
            frame.extend(band.column(t).iter().copied());
            out.column_mut(k, t).assign(&p.embed(&frame));
        }
    }
    Ok(out)
}
