//! Multi-resolution STFT discriminators.
//!
//! Input is the valid-bin spectrogram of a waveform as two channels
//! (real, imaginary), scaled to unit L2 norm. Each discriminator is six
//! bias-free 3x3 convolutions with leaky ReLU and a 1x1 score head; the
//! six activations are the features used for feature matching.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView4};
use rand::Rng;

use crate::dsp::Stft;
use crate::error::{GullError, Result};
use crate::nn::uniform;

pub const DISC_WINDOWS: [usize; 5] = [256, 512, 1024, 2048, 4096];
pub const DISC_CHANNELS: [usize; 6] = [32, 32, 64, 64, 128, 128];
pub const LEAKY_SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-12;

fn normalize(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt().max(NORM_EPS);
    v / n
}

/// Convolution whose effective weight is `raw / sigma`, with `sigma` estimated
/// by one power iteration from the stored left singular vector `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralConv {
    raw: Array4<f64>,
    u: Array1<f64>,
    weight: Array4<f64>,
    bias: Option<Array1<f64>>,
    stride: usize,
    padding: usize,
}

impl SpectralConv {
    pub fn new(raw: Array4<f64>, u: Array1<f64>, bias: Option<Array1<f64>>, stride: usize, padding: usize) -> Result<Self> {
        let (co, ci, kh, kw) = raw.dim();
        if u.len() != co || bias.as_ref().is_some_and(|b| b.len() != co) || stride == 0 {
            return Err(GullError::Shape(format!(
                "convolution {:?} with u of length {} and bias {:?}",
                raw.dim(),
                u.len(),
                bias.as_ref().map(Array1::len)
            )));
        }
        let mat = raw
            .view()
            .into_shape_with_order((co, ci * kh * kw))
            .expect("contiguous weight");
        let v = normalize(mat.t().dot(&u));
        let wv = mat.dot(&v);
        let u_next = normalize(wv.clone());
        let sigma = u_next.dot(&wv);
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(GullError::Shape("spectral norm estimate is not positive".into()));
        }
        let weight = raw.mapv(|x| x / sigma);
        Ok(Self {
            raw,
            u,
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn random<R: Rng>(co: usize, ci: usize, k: usize, bias: bool, stride: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((ci * k * k) as f64).sqrt();
        let raw = uniform((co, ci, k, k), bound, rng);
        let u = normalize(uniform(co, 1.0, rng));
        let bias = bias.then(|| uniform(co, bound, rng));
        Self::new(raw, u, bias, stride, k / 2).expect("random convolution is valid")
    }

    pub fn raw(&self) -> ArrayView4<'_, f64> {
        self.raw.view()
    }

    pub fn u(&self) -> &Array1<f64> {
        &self.u
    }

    pub fn bias(&self) -> Option<&Array1<f64>> {
        self.bias.as_ref()
    }

    pub fn effective_weight(&self) -> ArrayView4<'_, f64> {
        self.weight.view()
    }

    pub fn in_channels(&self) -> usize {
        self.raw.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.raw.dim().0
    }

    pub fn forward(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        let (ci, h, w) = x.dim();
        let (co, wci, kh, kw) = self.weight.dim();
        if ci != wci {
            return Err(GullError::Shape(format!("convolution expects {wci} channels, got {ci}")));
        }
        let (p, st) = (self.padding, self.stride);
        if h + 2 * p < kh || w + 2 * p < kw {
            return Err(GullError::Shape(format!("input {h}x{w} is smaller than the kernel")));
        }
        let oh = (h + 2 * p - kh) / st + 1;
        let ow = (w + 2 * p - kw) / st + 1;
        let mut out = Array3::zeros((co, oh, ow));
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        for o in 0..co {
            let mut plane = vec![0.0; oh * ow];
            for c in 0..ci {
                let src = &xs[c * h * w..(c + 1) * h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wt = self.weight[[o, c, ky, kx]];
                        if wt == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * st + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &src[iy as usize * w..(iy as usize + 1) * w];
                            let dst = &mut plane[oy * ow..(oy + 1) * ow];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * st + kx) as isize - p as isize;
                                if ix >= 0 && ix < w as isize {
                                    *d += wt * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
            let b = self.bias.as_ref().map_or(0.0, |b| b[o]);
            out.slice_mut(s![o, .., ..])
                .assign(&Array2::from_shape_vec((oh, ow), plane).expect("plane").mapv(|v| v + b));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscOutput {
    pub score: Array3<f64>,
    pub features: Vec<Array3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub window: usize,
    pub blocks: Vec<SpectralConv>,
    pub head: SpectralConv,
}

/// Number of STFT bins at or below `cutoff_hz`.
pub fn valid_bins(window: usize, sample_rate: u32, cutoff_hz: f64) -> usize {
    let bins = window / 2 + 1;
    let n = (cutoff_hz * window as f64 / sample_rate as f64 + 1e-9).floor() as usize + 1;
    n.min(bins)
}

/// Two-channel, unit-energy discriminator input (`2 x bins x T`).
pub fn prepare_input(audio: &[f64], window: usize, bins: usize) -> Array3<f64> {
    let spec = Stft::hann(window, window / 2).analyze(audio);
    let frames = spec.ncols();
    let bins = bins.min(spec.nrows());
    let mut x = Array3::zeros((2, bins, frames));
    for f in 0..bins {
        for t in 0..frames {
            x[[0, f, t]] = spec[[f, t]].re;
            x[[1, f, t]] = spec[[f, t]].im;
        }
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        x.mapv_inplace(|v| v / norm);
    }
    x
}

impl Discriminator {
    pub fn random<R: Rng>(window: usize, rng: &mut R) -> Self {
        let mut ci = 2;
        let blocks = DISC_CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &co)| {
                let stride = if i % 2 == 0 { 1 } else { 2 };
                let conv = SpectralConv::random(co, ci, 3, false, stride, rng);
                ci = co;
                conv
            })
            .collect();
        let head = SpectralConv::random(1, ci, 1, true, 1, rng);
        Self { window, blocks, head }
    }

    pub fn forward(&self, x: &Array3<f64>) -> Result<DiscOutput> {
        let mut h = x.clone();
        let mut features = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            h = block.forward(&h)?;
            h.mapv_inplace(|v| if v >= 0.0 { v } else { LEAKY_SLOPE * v });
            features.push(h.clone());
        }
        let score = self.head.forward(&h)?;
        Ok(DiscOutput { score, features })
    }

    pub fn forward_audio(&self, audio: &[f64], sample_rate: u32, cutoff_hz: f64) -> Result<DiscOutput> {
        let bins = valid_bins(self.window, sample_rate, cutoff_hz);
        self.forward(&prepare_input(audio, self.window, bins))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorSet {
    pub discs: Vec<Discriminator>,
}

impl DiscriminatorSet {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        Self {
            discs: DISC_WINDOWS.iter().map(|&w| Discriminator::random(w, rng)).collect(),
        }
    }

    pub fn forward(&self, audio: &[f64], sample_rate: u32, cutoff_hz: f64) -> Result<Vec<DiscOutput>> {
        self.discs
            .iter()
            .map(|d| d.forward_audio(audio, sample_rate, cutoff_hz))
            .collect()
    }
}
