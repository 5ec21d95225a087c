use ndarray::{Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut1, Axis};

use crate::error::{GullError, Result};

/// Real embedding tensor with logical shape `N x K x T`, stored frame-major
/// as `[T, K, N]` so one frame is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings(pub Array3<f64>);

impl Embeddings {
    pub fn zeros(dim: usize, bands: usize, frames: usize) -> Self {
        Self(Array3::zeros((frames, bands, dim)))
    }

    pub fn from_frames(frames: &[Array2<f64>]) -> Result<Self> {
        let (bands, dim) = frames.first().map_or((0, 0), |f| f.dim());
        let mut out = Array3::zeros((frames.len(), bands, dim));
        for (t, f) in frames.iter().enumerate() {
            if f.dim() != (bands, dim) {
                return Err(GullError::Shape(format!(
                    "frame {t} is {:?}, expected {:?}",
                    f.dim(),
                    (bands, dim)
                )));
            }
            out.index_axis_mut(Axis(0), t).assign(f);
        }
        Ok(Self(out))
    }

    pub fn dim(&self) -> usize {
        self.0.dim().2
    }

    pub fn bands(&self) -> usize {
        self.0.dim().1
    }

    pub fn frames(&self) -> usize {
        self.0.dim().0
    }

    pub fn column(&self, k: usize, t: usize) -> ArrayView1<'_, f64> {
        self.0.index_axis(Axis(0), t).index_axis_move(Axis(0), k)
    }

    pub fn column_mut(&mut self, k: usize, t: usize) -> ArrayViewMut1<'_, f64> {
        self.0.index_axis_mut(Axis(0), t).index_axis_move(Axis(0), k)
    }

    /// `K x N` view of one frame.
    pub fn frame(&self, t: usize) -> ArrayView2<'_, f64> {
        self.0.index_axis(Axis(0), t)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.0.dim() != other.0.dim() {
            return f64::INFINITY;
        }
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Normalizes every `(k, t)` column to unit L2 norm; exact-zero columns stay zero.
    pub fn normalize_columns(&mut self) {
        for mut col in self.0.lanes_mut(Axis(2)) {
            let norm = col.dot(&col).sqrt();
            if norm > 0.0 {
                col.mapv_inplace(|v| v / norm);
            }
        }
    }
}
