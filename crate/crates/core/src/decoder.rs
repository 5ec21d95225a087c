//! Elastic band-split RNN decoder and GLU reconstruction heads.
//!
//! Each elastic layer produces `W` candidate outputs per `(k, t)`; only the
//! first `w` are computed and mixed with TAC weights. The decoder runs the
//! first `d` of its `D` blocks, so any `(w, d)` decodes the same codes.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;
use rand::Rng;

use crate::config::ModelConfig;
use crate::dsp::{merge_bands, Spectrogram, SubbandSpectrogram};
use crate::error::{check_range, GullError, Result};
use crate::nn::{sigmoid, Linear, LstmCell, LstmState, Rmvn};
use crate::tensor::Embeddings;

/// Transform-average-concatenate weighting over the active slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Tac {
    pub u: Linear,
    pub q: Linear,
    pub b: Linear,
}

impl Tac {
    pub fn random<R: Rng>(aux: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            u: Linear::random(aux, hidden, rng),
            q: Linear::random(hidden, hidden, rng),
            b: Linear::random(2 * hidden, 1, rng),
        }
    }

    pub fn zeros(aux: usize, hidden: usize) -> Self {
        Self {
            u: Linear::zeros(aux, hidden),
            q: Linear::zeros(hidden, hidden),
            b: Linear::zeros(2 * hidden, 1),
        }
    }

    fn check(&self, aux: usize) -> bool {
        let hidden = self.u.out_dim();
        self.u.in_dim() == aux
            && self.q.in_dim() == hidden
            && self.q.out_dim() == hidden
            && self.b.in_dim() == 2 * hidden
            && self.b.out_dim() == 1
    }

    /// Softmax weights for the `w` rows of `d` (`w x V`).
    pub fn weights(&self, d: ArrayView2<f64>) -> Result<Array1<f64>> {
        let w = d.nrows();
        if w == 0 || d.ncols() != self.u.in_dim() {
            return Err(GullError::Shape(format!(
                "TAC input {:?}, expected (w >= 1) x {}",
                d.dim(),
                self.u.in_dim()
            )));
        }
        let u: Vec<Array1<f64>> = d
            .rows()
            .into_iter()
            .map(|row| self.u.forward(row).mapv(f64::tanh))
            .collect();
        let mut mean = Array1::zeros(self.u.out_dim());
        for ui in &u {
            mean += ui;
        }
        mean /= w as f64;
        let q = self.q.forward(mean.view()).mapv(f64::tanh);
        let scores: Vec<f64> = u
            .iter()
            .map(|ui| self.b.forward(concatenate![Axis(0), ui.view(), q.view()].view())[0])
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Array1<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total = exps.sum();
        Ok(exps / total)
    }
}

/// `x + sum_i p_i * weight_i` over the first `w` slots of the head output.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticRnn {
    pub rmvn: Rmvn,
    pub cell: LstmCell,
    pub head: Linear,
    pub tac: Tac,
    width: usize,
    aux: usize,
}

impl ElasticRnn {
    pub fn new(rmvn: Rmvn, cell: LstmCell, head: Linear, tac: Tac, width: usize, aux: usize) -> Result<Self> {
        let dim = rmvn.dim();
        if width == 0
            || cell.input_dim() != dim
            || head.in_dim() != cell.hidden_dim()
            || head.out_dim() != width * (dim + aux)
            || !tac.check(aux)
        {
            return Err(GullError::Shape(format!(
                "elastic layer with N={dim}, W={width}, V={aux} has inconsistent parameters"
            )));
        }
        Ok(Self {
            rmvn,
            cell,
            head,
            tac,
            width,
            aux,
        })
    }

    pub fn random<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let (n, m, w, v) = (cfg.embed_dim, cfg.rnn_hidden, cfg.elastic_width, cfg.elastic_aux_dim);
        Self::new(
            Rmvn::identity(n, cfg.rmvn_eps),
            LstmCell::random(n, m, rng),
            Linear::random(m, w * (n + v), rng),
            Tac::random(v, cfg.tac_hidden, rng),
            w,
            v,
        )
        .expect("random layer is consistent")
    }

    pub fn dim(&self) -> usize {
        self.rmvn.dim()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn hidden(&self) -> usize {
        self.cell.hidden_dim()
    }

    /// Active slots as (`w x N` candidates, `w x V` TAC features).
    pub fn slots(&self, z: ArrayView1<f64>, w: usize) -> (Array2<f64>, Array2<f64>) {
        let n = self.dim();
        let slot = n + self.aux;
        let out = self.head.forward_rows(z, 0..w * slot);
        let out = out.into_shape_with_order((w, slot)).expect("w slots");
        (out.slice(s![.., ..n]).to_owned(), out.slice(s![.., n..]).to_owned())
    }

    pub fn step(&self, x: ArrayView1<f64>, w: usize, state: &mut LstmState) -> Array1<f64> {
        let z = self.cell.step(self.rmvn.forward(x).view(), state);
        let (p, d) = self.slots(z.view(), w);
        let weights = self.tac.weights(d.view()).expect("validated width");
        weights.dot(&p) + x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticBlock {
    pub time: ElasticRnn,
    pub band: ElasticRnn,
}

/// Per-stream recurrent state: `time[block][band]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    time: Vec<Vec<LstmState>>,
}

impl DecoderState {
    pub fn bands(&self) -> usize {
        self.time.first().map_or(0, Vec::len)
    }

    pub fn reset(&mut self) {
        for s in self.time.iter_mut().flatten() {
            s.h.fill(0.0);
            s.c.fill(0.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    blocks: Vec<ElasticBlock>,
    dim: usize,
    hidden: usize,
    width: usize,
}

impl Decoder {
    pub fn new(blocks: Vec<ElasticBlock>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| GullError::Shape("decoder needs at least one block".into()))?;
        let (dim, hidden, width) = (first.time.dim(), first.time.hidden(), first.time.width());
        for (i, b) in blocks.iter().enumerate() {
            for l in [&b.time, &b.band] {
                if (l.dim(), l.hidden(), l.width()) != (dim, hidden, width) {
                    return Err(GullError::Shape(format!(
                        "decoder block {i} is inconsistent with N={dim}, M={hidden}, W={width}"
                    )));
                }
            }
        }
        Ok(Self {
            blocks,
            dim,
            hidden,
            width,
        })
    }

    pub fn random<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let blocks = (0..cfg.num_decoder_layers)
            .map(|_| ElasticBlock {
                time: ElasticRnn::random(cfg, rng),
                band: ElasticRnn::random(cfg, rng),
            })
            .collect();
        Self::new(blocks).expect("random blocks are consistent")
    }

    pub fn blocks(&self) -> &[ElasticBlock] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn init_state(&self, bands: usize) -> DecoderState {
        DecoderState {
            time: vec![vec![LstmState::zeros(self.hidden); bands]; self.blocks.len()],
        }
    }

    fn check(&self, w: usize, d: usize, dim: usize, bands: usize, state: &DecoderState) -> Result<()> {
        check_range("decoder width", w, 1, self.width)?;
        check_range("decoder depth", d, 1, self.blocks.len())?;
        if dim != self.dim {
            return Err(GullError::Shape(format!("decoder expects N={}, got {dim}", self.dim)));
        }
        if state.time.len() != self.blocks.len() || state.bands() != bands {
            return Err(GullError::Shape(format!(
                "decoder state covers {} blocks x {} bands, input needs {} x {bands}",
                state.time.len(),
                state.bands(),
                self.blocks.len()
            )));
        }
        Ok(())
    }

    /// Batch evaluation of the first `d` blocks at width `w`.
    pub fn forward(&self, r: &Embeddings, w: usize, d: usize, state: &mut DecoderState) -> Result<Embeddings> {
        let (frames, bands) = (r.frames(), r.bands());
        self.check(w, d, r.dim(), bands, state)?;
        let mut x = r.clone();
        for (block, states) in self.blocks.iter().zip(&mut state.time).take(d) {
            for (k, st) in states.iter_mut().enumerate() {
                for t in 0..frames {
                    let y = block.time.step(x.column(k, t), w, st);
                    x.column_mut(k, t).assign(&y);
                }
            }
            for t in 0..frames {
                let mut st = LstmState::zeros(self.hidden);
                for k in 0..bands {
                    let y = block.band.step(x.column(k, t), w, &mut st);
                    x.column_mut(k, t).assign(&y);
                }
            }
        }
        Ok(x)
    }

    /// One frame (`K x N`) through the first `d` blocks.
    pub fn step(&self, frame: ArrayView2<f64>, w: usize, d: usize, state: &mut DecoderState) -> Result<Array2<f64>> {
        let (bands, dim) = frame.dim();
        self.check(w, d, dim, bands, state)?;
        let mut x = frame.to_owned();
        for (block, states) in self.blocks.iter().zip(&mut state.time).take(d) {
            for (k, st) in states.iter_mut().enumerate() {
                let y = block.time.step(x.row(k), w, st);
                x.row_mut(k).assign(&y);
            }
            let mut st = LstmState::zeros(self.hidden);
            for k in 0..bands {
                let y = block.band.step(x.row(k), w, &mut st);
                x.row_mut(k).assign(&y);
            }
        }
        Ok(x)
    }
}

/// Per-band `N -> 4G` projection followed by a GLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconHeads {
    pub bands: Vec<Linear>,
}

impl ReconHeads {
    pub fn random<R: Rng>(bin_counts: &[usize], dim: usize, rng: &mut R) -> Self {
        Self {
            bands: bin_counts.iter().map(|&g| Linear::random(dim, 4 * g, rng)).collect(),
        }
    }

    pub fn zeros(bin_counts: &[usize], dim: usize) -> Self {
        Self {
            bands: bin_counts.iter().map(|&g| Linear::zeros(dim, 4 * g)).collect(),
        }
    }

    /// Complex bins of one subband frame.
    pub fn band_frame(&self, k: usize, x: ArrayView1<f64>) -> Vec<Complex64> {
        let y = self.bands[k].forward(x);
        let half = y.len() / 2;
        let g = half / 2;
        let glu = |i: usize| y[i] * sigmoid(y[half + i]);
        (0..g).map(|i| Complex64::new(glu(i), glu(g + i))).collect()
    }
}

/// Assembles the full-band spectrogram from `K̄` decoded subbands; higher bands are zero.
pub fn reconstruct(decoded: &Embeddings, heads: &ReconHeads, cfg: &ModelConfig) -> Result<Spectrogram> {
    let layout = &cfg.band_layout;
    let k_bar = decoded.bands();
    check_range("target subbands", k_bar, 0, layout.num_bands())?;
    if heads.bands.len() != layout.num_bands() {
        return Err(GullError::Shape(format!(
            "{} reconstruction heads for {} bands",
            heads.bands.len(),
            layout.num_bands()
        )));
    }
    let frames = decoded.frames();
    let mut bands = Vec::with_capacity(layout.num_bands());
    for (k, &g) in layout.bin_counts().iter().enumerate() {
        let head = &heads.bands[k];
        if head.in_dim() != decoded.dim() || head.out_dim() != 4 * g {
            return Err(GullError::Shape(format!(
                "reconstruction head {k} maps {} -> {}, expected {} -> {}",
                head.in_dim(),
                head.out_dim(),
                decoded.dim(),
                4 * g
            )));
        }
        let mut band = Array2::zeros((g, frames));
        if k < k_bar {
            for t in 0..frames {
                let bins = heads.band_frame(k, decoded.column(k, t));
                band.column_mut(t).assign(&Array1::from(bins));
            }
        }
        bands.push(band);
    }
    let sub = SubbandSpectrogram {
        bands,
        window_ms: cfg.window_ms,
        hop_ms: cfg.hop_ms,
        sample_rate: cfg.operating_sr,
    };
    merge_bands(&sub, layout)
}
