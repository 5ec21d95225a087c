//! Spherical residual vector quantization.
//!
//! Hierarchy 1 picks the nearest unit-norm codeword. Every further hierarchy
//! refines the running estimate by choosing one Householder reflection
//! `I - 2 o o^T` from a small per-subband bank. Row 0 of every bank is the
//! zero vector, i.e. the identity, so adding a hierarchy can never increase
//! the quantization error. All estimates stay on the unit sphere.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bitstream::{FrameCodes, SubbandCode};
use crate::error::{check_range, GullError, Result};
use crate::tensor::Embeddings;

/// Rotation vectors below this norm act as the identity.
pub const IDENTITY_THRESHOLD: f64 = 1e-8;
/// Codes unused for this many consecutive updates are replaced.
pub const DEAD_CODE_AGE: u32 = 100;

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn normalized(v: ArrayView1<f64>) -> Option<Array1<f64>> {
    let norm = v.dot(&v).sqrt();
    (norm >= IDENTITY_THRESHOLD).then(|| v.mapv(|x| x / norm))
}

fn reflect(e: ArrayView1<f64>, unit: ArrayView1<f64>) -> Array1<f64> {
    let proj = 2.0 * e.dot(&unit);
    let mut out = e.to_owned();
    out.scaled_add(-proj, &unit);
    out
}

/// Householder reflection of `e` by the (unnormalized) vector `o`.
pub fn apply_rotation(e: ArrayView1<f64>, o: ArrayView1<f64>) -> Array1<f64> {
    match normalized(o) {
        Some(unit) => reflect(e, unit.view()),
        None => e.to_owned(),
    }
}

/// First-hierarchy codebook of one subband with its EMA statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    codes: Array2<f64>,
    ema_size: Array1<f64>,
    ema_sum: Array2<f64>,
    ages: Vec<u32>,
}

impl Codebook {
    /// Rows are normalized; EMA statistics start empty.
    pub fn new(mut codes: Array2<f64>) -> Result<Self> {
        for mut row in codes.rows_mut() {
            let unit = normalized(row.view())
                .ok_or_else(|| GullError::Shape("codebook contains a zero row".into()))?;
            row.assign(&unit);
        }
        let (c, n) = codes.dim();
        Self::with_stats(codes, Array1::zeros(c), Array2::zeros((c, n)))
    }

    /// Rows are taken as given (stored codebooks are already unit-norm).
    pub fn with_stats(codes: Array2<f64>, ema_size: Array1<f64>, ema_sum: Array2<f64>) -> Result<Self> {
        let (c, _) = codes.dim();
        if c == 0 || ema_size.len() != c || ema_sum.dim() != codes.dim() {
            return Err(GullError::Shape(format!(
                "codebook {:?} with EMA size {} and sum {:?}",
                codes.dim(),
                ema_size.len(),
                ema_sum.dim()
            )));
        }
        if ema_size.iter().any(|&v| v < 0.0) {
            return Err(GullError::Shape("negative EMA cluster size".into()));
        }
        if codes.rows().into_iter().any(|row| normalized(row).is_none()) {
            return Err(GullError::Shape("codebook contains a zero row".into()));
        }
        Ok(Self {
            codes,
            ema_size,
            ema_sum,
            ages: vec![0; c],
        })
    }

    pub fn random<R: Rng>(size: usize, dim: usize, rng: &mut R) -> Self {
        let codes = Array2::from_shape_simple_fn((size, dim), || rng.sample::<f64, _>(StandardNormal));
        Self::new(codes).expect("gaussian rows are non-zero")
    }

    pub fn codes(&self) -> ArrayView2<'_, f64> {
        self.codes.view()
    }

    pub fn ema_size(&self) -> ArrayView1<'_, f64> {
        self.ema_size.view()
    }

    pub fn ema_sum(&self) -> ArrayView2<'_, f64> {
        self.ema_sum.view()
    }

    pub fn ages(&self) -> &[u32] {
        &self.ages
    }

    pub fn set_age(&mut self, index: usize, age: u32) {
        self.ages[index] = age;
    }

    pub fn len(&self) -> usize {
        self.codes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.codes.ncols()
    }

    /// Nearest codeword by Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, c: ArrayView1<f64>) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, row) in self.codes.rows().into_iter().enumerate() {
            let d = squared_distance(row, c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    }
}

/// Householder vectors of one subband for hierarchies `2..=H`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationBank {
    raw: Vec<Array2<f64>>,
    /// `None` where the raw vector is (numerically) zero.
    units: Vec<Vec<Option<Array1<f64>>>>,
}

impl RotationBank {
    /// `per_hierarchy[h - 2]` holds the vectors of hierarchy `h`. Row 0 must be zero.
    pub fn new(per_hierarchy: Vec<Array2<f64>>) -> Result<Self> {
        for (i, bank) in per_hierarchy.iter().enumerate() {
            if bank.nrows() == 0 || bank.row(0).iter().any(|&v| v != 0.0) {
                return Err(GullError::Shape(format!(
                    "rotation bank of hierarchy {} must start with the zero vector",
                    i + 2
                )));
            }
        }
        let units = per_hierarchy
            .iter()
            .map(|bank| bank.rows().into_iter().map(normalized).collect())
            .collect();
        Ok(Self {
            raw: per_hierarchy,
            units,
        })
    }

    pub fn random<R: Rng>(hierarchies: usize, size: usize, dim: usize, rng: &mut R) -> Self {
        let banks = (1..hierarchies)
            .map(|_| {
                let mut b = Array2::from_shape_simple_fn((size, dim), || rng.sample::<f64, _>(StandardNormal));
                b.row_mut(0).fill(0.0);
                b
            })
            .collect();
        Self::new(banks).expect("row 0 zeroed")
    }

    /// Vectors of hierarchy `h` (`h >= 2`).
    pub fn vectors(&self, h: usize) -> ArrayView2<'_, f64> {
        self.raw[h - 2].view()
    }

    pub fn hierarchies(&self) -> usize {
        self.raw.len() + 1
    }

    fn rotate(&self, h: usize, j: usize, e: ArrayView1<f64>) -> Array1<f64> {
        match &self.units[h - 2][j] {
            Some(unit) => reflect(e, unit.view()),
            None => e.to_owned(),
        }
    }
}

/// Result of quantizing one vector: indices and the estimate after each hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub code: SubbandCode,
    pub stages: Vec<Array1<f64>>,
}

impl Quantized {
    pub fn estimate(&self) -> ArrayView1<'_, f64> {
        self.stages.last().expect("at least one stage").view()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubbandQuantizer {
    pub codebook: Codebook,
    pub rotations: RotationBank,
}

impl SubbandQuantizer {
    pub fn hierarchies(&self) -> usize {
        self.rotations.hierarchies()
    }

    pub fn quantize(&self, c: ArrayView1<f64>, h: usize) -> Result<Quantized> {
        check_range("hierarchy", h, 1, self.hierarchies())?;
        if c.len() != self.codebook.dim() {
            return Err(GullError::Shape(format!(
                "vector of length {} for codebook dimension {}",
                c.len(),
                self.codebook.dim()
            )));
        }
        let first = self.codebook.nearest(c);
        let mut e = self.codebook.codes.row(first).to_owned();
        let mut stages = vec![e.clone()];
        let mut rotations = Vec::with_capacity(h - 1);
        for level in 2..=h {
            let mut best_j = 0;
            let mut best_d = f64::INFINITY;
            let mut best_e = e.clone();
            for j in 0..self.rotations.raw[level - 2].nrows() {
                let candidate = self.rotations.rotate(level, j, e.view());
                let d = squared_distance(candidate.view(), c);
                if d < best_d {
                    best_d = d;
                    best_j = j;
                    best_e = candidate;
                }
            }
            e = best_e;
            rotations.push(best_j as u8);
            stages.push(e.clone());
        }
        Ok(Quantized {
            code: SubbandCode {
                first: first as u16,
                rotations,
            },
            stages,
        })
    }

    pub fn dequantize(&self, code: &SubbandCode) -> Result<Array1<f64>> {
        check_range("hierarchy", code.hierarchies(), 1, self.hierarchies())?;
        check_range("codebook index", code.first as usize, 0, self.codebook.len() - 1)?;
        let mut e = self.codebook.codes.row(code.first as usize).to_owned();
        for (i, &j) in code.rotations.iter().enumerate() {
            let level = i + 2;
            check_range("rotation index", j as usize, 0, self.rotations.raw[i].nrows() - 1)?;
            e = self.rotations.rotate(level, j as usize, e.view());
        }
        Ok(e)
    }
}

/// Quantizers for every subband of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Srvq {
    pub bands: Vec<SubbandQuantizer>,
}

/// Codes plus the per-hierarchy quantized tensors `e^1..e^h`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedStream {
    pub frames: Vec<FrameCodes>,
    pub stages: Vec<Embeddings>,
}

impl Srvq {
    pub fn random<R: Rng>(
        bands: usize,
        codebook_size: usize,
        rotations: usize,
        hierarchies: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            bands: (0..bands)
                .map(|_| SubbandQuantizer {
                    codebook: Codebook::random(codebook_size, dim, rng),
                    rotations: RotationBank::random(hierarchies, rotations, dim, rng),
                })
                .collect(),
        }
    }

    pub fn quantize(&self, c: &Embeddings, h: usize) -> Result<QuantizedStream> {
        if c.bands() > self.bands.len() {
            return Err(GullError::Shape(format!(
                "{} subbands for {} quantizers",
                c.bands(),
                self.bands.len()
            )));
        }
        let mut stages = vec![Embeddings::zeros(c.dim(), c.bands(), c.frames()); h];
        let mut frames = Vec::with_capacity(c.frames());
        for t in 0..c.frames() {
            let mut codes = Vec::with_capacity(c.bands());
            for (k, q) in self.bands.iter().take(c.bands()).enumerate() {
                let out = q.quantize(c.column(k, t), h)?;
                for (stage, e) in stages.iter_mut().zip(&out.stages) {
                    stage.column_mut(k, t).assign(e);
                }
                codes.push(out.code);
            }
            frames.push(FrameCodes { bands: codes });
        }
        Ok(QuantizedStream { frames, stages })
    }

    /// Rebuilds `R^h` (`N x K̂ x T`) from codes.
    pub fn dequantize(&self, frames: &[FrameCodes], dim: usize) -> Result<Embeddings> {
        let bands = frames.first().map_or(0, |f| f.bands.len());
        let mut out = Embeddings::zeros(dim, bands, frames.len());
        for (t, frame) in frames.iter().enumerate() {
            if frame.bands.len() != bands || bands > self.bands.len() {
                return Err(GullError::Shape(format!(
                    "frame {t} has {} subbands, expected {bands}",
                    frame.bands.len()
                )));
            }
            for (k, code) in frame.bands.iter().enumerate() {
                let e = self.bands[k].dequantize(code)?;
                out.column_mut(k, t).assign(&e);
            }
        }
        Ok(out)
    }
}

/// One EMA step over `assignments` of (code index, encoder vector).
///
/// Every code's statistics decay; rows of codes that received data are set to
/// the normalized smoothed mean. Assigned codes have their age reset, all
/// others age by one.
pub fn ema_update(book: &mut Codebook, assignments: &[(usize, ArrayView1<f64>)], decay: f64, eps: f64) {
    assert!(decay > 0.0 && decay < 1.0, "decay must lie in (0, 1)");
    let (size, dim) = book.codes.dim();
    let mut counts = Array1::<f64>::zeros(size);
    let mut sums = Array2::<f64>::zeros((size, dim));
    for (j, c) in assignments {
        counts[*j] += 1.0;
        sums.row_mut(*j).scaled_add(1.0, c);
    }
    book.ema_size.zip_mut_with(&counts, |s, &n| *s = decay * *s + (1.0 - decay) * n);
    book.ema_sum.zip_mut_with(&sums, |s, &v| *s = decay * *s + (1.0 - decay) * v);

    let total: f64 = book.ema_size.sum();
    for j in 0..size {
        if counts[j] > 0.0 {
            let smoothed = (book.ema_size[j] + eps) / (total + size as f64 * eps) * total;
            let mean = book.ema_sum.row(j).mapv(|v| v / smoothed);
            if let Some(unit) = normalized(mean.view()) {
                book.codes.row_mut(j).assign(&unit);
            }
            book.ages[j] = 0;
        } else {
            book.ages[j] = book.ages[j].saturating_add(1);
        }
    }
}

/// Replaces every code whose age reached [`DEAD_CODE_AGE`] with a vector drawn
/// uniformly from `batch`. Dead codes are visited in index order, one draw each.
/// Returns the replaced indices.
pub fn replace_dead_codes(book: &mut Codebook, batch: ArrayView2<f64>, seed: u64) -> Result<Vec<usize>> {
    if batch.nrows() == 0 {
        return Err(GullError::Shape("dead-code replacement needs a non-empty batch".into()));
    }
    if batch.ncols() != book.dim() {
        return Err(GullError::Shape(format!(
            "batch dimension {} for codebook dimension {}",
            batch.ncols(),
            book.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut replaced = Vec::new();
    for j in 0..book.len() {
        if book.ages[j] < DEAD_CODE_AGE {
            continue;
        }
        let pick = rng.random_range(0..batch.nrows());
        if let Some(unit) = normalized(batch.row(pick)) {
            book.codes.row_mut(j).assign(&unit);
            book.ema_size[j] = 0.0;
            book.ema_sum.row_mut(j).fill(0.0);
        }
        book.ages[j] = 0;
        replaced.push(j);
    }
    Ok(replaced)
}

/// Commitment loss value over all hierarchies. `stages[h - 1]` holds `e^h`.
///
/// The second and third terms differ only in where gradients stop, so both
/// evaluate to the same number here.
pub fn commitment_loss(c: &Embeddings, stages: &[Embeddings]) -> Result<f64> {
    let first = stages
        .first()
        .ok_or_else(|| GullError::Shape("commitment loss needs at least one hierarchy".into()))?;
    for s in stages {
        if s.0.dim() != c.0.dim() {
            return Err(GullError::Shape(format!(
                "stage shape {:?} vs encoder output {:?}",
                s.0.dim(),
                c.0.dim()
            )));
        }
    }
    let cells = (c.bands() * c.frames()) as f64;
    if cells == 0.0 {
        return Ok(0.0);
    }
    let mean_distance = |e: &Embeddings| -> f64 {
        let mut acc = 0.0;
        for t in 0..c.frames() {
            for k in 0..c.bands() {
                acc += squared_distance(c.column(k, t), e.column(k, t)).sqrt();
            }
        }
        acc
    };
    let first_term = mean_distance(first) / cells;
    if stages.len() == 1 {
        return Ok(first_term);
    }
    let rest = (cells * (stages.len() - 1) as f64).recip();
    let later: f64 = stages[1..].iter().map(mean_distance).sum::<f64>() * rest;
    Ok(first_term + 2.0 * later)
}

/// Zero-pads `N x K̂ x T` up to `K̄` subbands.
pub fn pad_superres(r: &Embeddings, k_bar: usize) -> Result<Embeddings> {
    if k_bar < r.bands() {
        return Err(GullError::OutOfRange {
            what: "target subbands",
            value: k_bar,
            min: r.bands(),
            max: usize::MAX,
        });
    }
    let mut out = Embeddings::zeros(r.dim(), k_bar, r.frames());
    for t in 0..r.frames() {
        out.0
            .index_axis_mut(Axis(0), t)
            .slice_mut(ndarray::s![..r.bands(), ..])
            .assign(&r.frame(t));
    }
    Ok(out)
}
