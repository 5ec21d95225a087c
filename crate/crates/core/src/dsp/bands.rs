use ndarray::{concatenate, s, Array2, Axis};
use num_complex::Complex64;

use super::Spectrogram;
use crate::config::BandLayout;
use crate::error::{GullError, Result};

/// `K` complex matrices, the k-th of shape `G_k x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSpectrogram {
    pub bands: Vec<Array2<Complex64>>,
    pub window_ms: u32,
    pub hop_ms: u32,
    pub sample_rate: u32,
}

impl SubbandSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.bands.first().map_or(0, |b| b.ncols())
    }
}

pub fn split_bands(spec: &Spectrogram, layout: &BandLayout) -> Result<SubbandSpectrogram> {
    if spec.num_bins() != layout.num_bins() {
        return Err(GullError::Shape(format!(
            "spectrogram has {} bins, layout expects {}",
            spec.num_bins(),
            layout.num_bins()
        )));
    }
    let bands = layout
        .offsets()
        .into_iter()
        .zip(layout.bin_counts())
        .map(|(start, &g)| spec.bins.slice(s![start..start + g, ..]).to_owned())
        .collect();
    Ok(SubbandSpectrogram {
        bands,
        window_ms: spec.window_ms,
        hop_ms: spec.hop_ms,
        sample_rate: spec.sample_rate,
    })
}

pub fn merge_bands(subbands: &SubbandSpectrogram, layout: &BandLayout) -> Result<Spectrogram> {
    if subbands.bands.len() != layout.num_bands() {
        return Err(GullError::Shape(format!(
            "{} subbands given, layout has {}",
            subbands.bands.len(),
            layout.num_bands()
        )));
    }
    let frames = subbands.num_frames();
    for (k, (band, &g)) in subbands.bands.iter().zip(layout.bin_counts()).enumerate() {
        if band.nrows() != g || band.ncols() != frames {
            return Err(GullError::Shape(format!(
                "subband {k} is {}x{}, expected {g}x{frames}",
                band.nrows(),
                band.ncols()
            )));
        }
    }
    let views: Vec<_> = subbands.bands.iter().map(|b| b.view()).collect();
    let bins = concatenate(Axis(0), &views).map_err(|e| GullError::Shape(e.to_string()))?;
    Ok(Spectrogram {
        bins,
        window_ms: subbands.window_ms,
        hop_ms: subbands.hop_ms,
        sample_rate: subbands.sample_rate,
    })
}
