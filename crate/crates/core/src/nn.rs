//! Dense building blocks shared by the encoder and decoder.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{GullError, Result};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fully-connected layer, weight stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(GullError::Shape(format!(
                "linear weight has {} rows but bias has {} entries",
                weight.nrows(),
                bias.len()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    /// PyTorch-style uniform init in `[-1/sqrt(in), 1/sqrt(in)]`.
    pub fn random<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            weight: uniform((out_dim, in_dim), bound, rng),
            bias: uniform(out_dim, bound, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weight.dot(&x) + &self.bias
    }

    /// Only the output rows in `rows`.
    pub fn forward_rows(&self, x: ArrayView1<f64>, rows: Range<usize>) -> Array1<f64> {
        self.weight.slice(s![rows.clone(), ..]).dot(&x) + self.bias.slice(s![rows])
    }
}

/// Rescaled mean-variance normalization over the entries of one vector
/// (population variance).
pub fn rmvn(
    g: ArrayView1<f64>,
    alpha: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    eps: f64,
) -> Array1<f64> {
    let n = g.len() as f64;
    let mean = g.sum() / n;
    let var = g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    let mut out = Array1::zeros(g.len());
    for i in 0..g.len() {
        out[i] = (g[i] - mean) * inv * alpha[i] + beta[i];
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rmvn {
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
    pub eps: f64,
}

impl Rmvn {
    pub fn new(alpha: Array1<f64>, beta: Array1<f64>, eps: f64) -> Result<Self> {
        if alpha.len() != beta.len() {
            return Err(GullError::Shape(format!(
                "rmvn alpha has {} entries, beta {}",
                alpha.len(),
                beta.len()
            )));
        }
        Ok(Self { alpha, beta, eps })
    }

    pub fn identity(dim: usize, eps: f64) -> Self {
        Self {
            alpha: Array1::ones(dim),
            beta: Array1::zeros(dim),
            eps,
        }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Array1<f64> {
        rmvn(x, self.alpha.view(), self.beta.view(), self.eps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Array1::zeros(hidden),
            c: Array1::zeros(hidden),
        }
    }
}

/// LSTM cell with PyTorch gate order (input, forget, cell, output).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub weight_ih: Array2<f64>,
    pub weight_hh: Array2<f64>,
    pub bias_ih: Array1<f64>,
    pub bias_hh: Array1<f64>,
}

impl LstmCell {
    pub fn new(
        weight_ih: Array2<f64>,
        weight_hh: Array2<f64>,
        bias_ih: Array1<f64>,
        bias_hh: Array1<f64>,
    ) -> Result<Self> {
        let hidden = weight_hh.ncols();
        let ok = weight_ih.nrows() == 4 * hidden
            && weight_hh.nrows() == 4 * hidden
            && bias_ih.len() == 4 * hidden
            && bias_hh.len() == 4 * hidden;
        if !ok {
            return Err(GullError::Shape(format!(
                "inconsistent LSTM shapes: ih {:?}, hh {:?}, biases {} / {}",
                weight_ih.dim(),
                weight_hh.dim(),
                bias_ih.len(),
                bias_hh.len()
            )));
        }
        Ok(Self {
            weight_ih,
            weight_hh,
            bias_ih,
            bias_hh,
        })
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            weight_ih: Array2::zeros((4 * hidden, input)),
            weight_hh: Array2::zeros((4 * hidden, hidden)),
            bias_ih: Array1::zeros(4 * hidden),
            bias_hh: Array1::zeros(4 * hidden),
        }
    }

    pub fn random<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            weight_ih: uniform((4 * hidden, input), bound, rng),
            weight_hh: uniform((4 * hidden, hidden), bound, rng),
            bias_ih: uniform(4 * hidden, bound, rng),
            bias_hh: uniform(4 * hidden, bound, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight_ih.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight_hh.ncols()
    }

    /// Advances `state` by one step and returns the new hidden vector.
    pub fn step(&self, x: ArrayView1<f64>, state: &mut LstmState) -> Array1<f64> {
        let m = self.hidden_dim();
        let gates = self.weight_ih.dot(&x) + &self.bias_ih + self.weight_hh.dot(&state.h) + &self.bias_hh;
        for j in 0..m {
            let i = sigmoid(gates[j]);
            let f = sigmoid(gates[m + j]);
            let g = gates[2 * m + j].tanh();
            let o = sigmoid(gates[3 * m + j]);
            state.c[j] = f * state.c[j] + i * g;
            state.h[j] = o * state.c[j].tanh();
        }
        state.h.clone()
    }
}

pub(crate) fn uniform<Sh, R>(shape: Sh, bound: f64, rng: &mut R) -> ndarray::Array<f64, Sh::Dim>
where
    Sh: ndarray::ShapeBuilder,
    R: Rng,
{
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    ndarray::Array::from_shape_simple_fn(shape, || dist.sample(rng))
}
