//! Causal band-split RNN encoder.
//!
//! Each block runs a residual LSTM along time (per subband, stateful across
//! frames) followed by a residual LSTM along the subband axis (per frame,
//! scanning low to high bands from a zero state). Lower bands therefore never
//! see higher bands, and frame `t` never sees frames after `t`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{GullError, Result};
use crate::nn::{Linear, LstmCell, LstmState, Rmvn};
use crate::tensor::Embeddings;

/// `x + proj(lstm(rmvn(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRnn {
    pub rmvn: Rmvn,
    pub cell: LstmCell,
    pub proj: Linear,
}

impl ResidualRnn {
    pub fn random<R: Rng>(dim: usize, hidden: usize, eps: f64, rng: &mut R) -> Self {
        Self {
            rmvn: Rmvn::identity(dim, eps),
            cell: LstmCell::random(dim, hidden, rng),
            proj: Linear::random(hidden, dim, rng),
        }
    }

    fn check(&self, dim: usize, hidden: usize) -> bool {
        self.rmvn.dim() == dim
            && self.cell.input_dim() == dim
            && self.cell.hidden_dim() == hidden
            && self.proj.in_dim() == hidden
            && self.proj.out_dim() == dim
    }

    pub fn step(&self, x: ArrayView1<f64>, state: &mut LstmState) -> Array1<f64> {
        let z = self.cell.step(self.rmvn.forward(x).view(), state);
        self.proj.forward(z.view()) + x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsrnnBlock {
    pub time: ResidualRnn,
    pub band: ResidualRnn,
}

/// Per-stream recurrent state: `time[block][band]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    time: Vec<Vec<LstmState>>,
}

impl EncoderState {
    pub fn bands(&self) -> usize {
        self.time.first().map_or(0, Vec::len)
    }

    pub fn reset(&mut self) {
        for block in &mut self.time {
            for s in block {
                s.h.fill(0.0);
                s.c.fill(0.0);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    blocks: Vec<BsrnnBlock>,
    dim: usize,
    hidden: usize,
}

impl Encoder {
    pub fn new(blocks: Vec<BsrnnBlock>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| GullError::Shape("encoder needs at least one block".into()))?;
        let dim = first.time.rmvn.dim();
        let hidden = first.time.cell.hidden_dim();
        for (i, b) in blocks.iter().enumerate() {
            if !b.time.check(dim, hidden) || !b.band.check(dim, hidden) {
                return Err(GullError::Shape(format!(
                    "encoder block {i} is inconsistent with N={dim}, M={hidden}"
                )));
            }
        }
        Ok(Self {
            blocks,
            dim,
            hidden,
        })
    }

    pub fn random<R: Rng>(layers: usize, dim: usize, hidden: usize, eps: f64, rng: &mut R) -> Self {
        let blocks = (0..layers)
            .map(|_| BsrnnBlock {
                time: ResidualRnn::random(dim, hidden, eps, rng),
                band: ResidualRnn::random(dim, hidden, eps, rng),
            })
            .collect();
        Self::new(blocks).expect("random blocks are consistent")
    }

    pub fn blocks(&self) -> &[BsrnnBlock] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn init_state(&self, bands: usize) -> EncoderState {
        EncoderState {
            time: vec![vec![LstmState::zeros(self.hidden); bands]; self.blocks.len()],
        }
    }

    fn check_state(&self, state: &EncoderState, bands: usize) -> Result<()> {
        if state.time.len() != self.blocks.len() || state.bands() != bands {
            return Err(GullError::Shape(format!(
                "encoder state covers {} blocks x {} bands, input needs {} x {bands}",
                state.time.len(),
                state.bands(),
                self.blocks.len()
            )));
        }
        Ok(())
    }

    /// Batch evaluation, one layer at a time over the whole sequence.
    /// Output columns have unit L2 norm.
    pub fn forward(&self, e: &Embeddings, state: &mut EncoderState) -> Result<Embeddings> {
        if e.dim() != self.dim {
            return Err(GullError::Shape(format!(
                "encoder expects N={}, got {}",
                self.dim,
                e.dim()
            )));
        }
        let (frames, bands) = (e.frames(), e.bands());
        self.check_state(state, bands)?;
        let mut x = e.clone();
        for (block, states) in self.blocks.iter().zip(&mut state.time) {
            for (k, st) in states.iter_mut().enumerate() {
                for t in 0..frames {
                    let y = block.time.step(x.column(k, t), st);
                    x.column_mut(k, t).assign(&y);
                }
            }
            for t in 0..frames {
                let mut st = LstmState::zeros(self.hidden);
                for k in 0..bands {
                    let y = block.band.step(x.column(k, t), &mut st);
                    x.column_mut(k, t).assign(&y);
                }
            }
        }
        x.normalize_columns();
        Ok(x)
    }

    /// One frame (`K x N`) through every block.
    pub fn step(&self, frame: ArrayView2<f64>, state: &mut EncoderState) -> Result<Array2<f64>> {
        let (bands, dim) = frame.dim();
        if dim != self.dim {
            return Err(GullError::Shape(format!(
                "encoder expects N={}, got {dim}",
                self.dim
            )));
        }
        self.check_state(state, bands)?;
        let mut x = frame.to_owned();
        for (block, states) in self.blocks.iter().zip(&mut state.time) {
            for (k, st) in states.iter_mut().enumerate() {
                let y = block.time.step(x.row(k), st);
                x.row_mut(k).assign(&y);
            }
            let mut st = LstmState::zeros(self.hidden);
            for k in 0..bands {
                let y = block.band.step(x.row(k), &mut st);
                x.row_mut(k).assign(&y);
            }
        }
        for mut row in x.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
        Ok(x)
    }
}
