//! `.gullw` named-tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GULW" | version u16 | reserved u16 (0)
//! metadata count u32 | { key len u32, key utf8, value len u32, value utf8 }*   keys strictly ascending
//! tensor count u32   | { name len u32, name utf8, dtype u8 (1 = f32), rank u8, dims u64* }*   names strictly ascending
//! payload len u64    | tensor data, f32 row-major, in manifest order
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::config::ModelConfig;
use crate::losses::{DISC_CHANNELS, DISC_WINDOWS};

pub const MAGIC: &[u8; 4] = b"GULW";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;
const MAX_RANK: usize = 8;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum WeightsError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated container: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(u8),
    #[error("payload is {actual} bytes, manifest describes {expected}")]
    PayloadMismatch { expected: u64, actual: u64 },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("missing tensor `{0}`")]
    Missing(String),
    #[error("tensor `{name}` has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("missing metadata `{0}`")]
    MissingMetadata(String),
    #[error("bad metadata `{key}`: {reason}")]
    BadMetadata { key: String, reason: String },
    #[error("weights do not match the model: {0}")]
    Invalid(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, WeightsError> {
        let count = element_count(&shape)
            .ok_or_else(|| WeightsError::CorruptManifest(format!("shape {shape:?} overflows")))?;
        if count != data.len() || shape.len() > MAX_RANK {
            return Err(WeightsError::CorruptManifest(format!(
                "shape {shape:?} holds {count} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64<'a>(shape: &[usize], values: impl IntoIterator<Item = &'a f64>) -> Self {
        let data: Vec<f32> = values.into_iter().map(|&v| v as f32).collect();
        Self::new(shape.to_vec(), data).expect("value count matches shape")
    }

    pub fn from_array<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> Self {
        let std = a.as_standard_layout();
        Self::from_f64(a.shape(), std.iter())
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_f64(&[1], [v].iter())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn to_array(&self) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&self.shape), self.to_f64()).expect("shape checked on construction")
    }

    pub fn nbytes(&self) -> usize {
        self.data.len() * 4
    }
}

fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    metadata: BTreeMap<String, String>,
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), WeightsError> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(WeightsError::Duplicate(name));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn meta(&self, key: &str) -> Result<&str, WeightsError> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| WeightsError::MissingMetadata(key.into()))
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    /// The named tensor, checked against `shape`.
    pub fn tensor(&self, name: &str, shape: &[usize]) -> Result<&Tensor, WeightsError> {
        let t = self.get(name).ok_or_else(|| WeightsError::Missing(name.into()))?;
        if t.shape != shape {
            return Err(WeightsError::ShapeMismatch {
                name: name.into(),
                expected: shape.to_vec(),
                actual: t.shape.clone(),
            });
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.tensors.values().map(Tensor::nbytes).sum();
        let mut out = Vec::with_capacity(64 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.push(DTYPE_F32);
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        out.extend_from_slice(&(payload as u64).to_le_bytes());
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightsError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(WeightsError::BadMagic);
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(WeightsError::UnsupportedVersion(version));
        }
        if r.u16()? != 0 {
            return Err(WeightsError::CorruptManifest("reserved field is not zero".into()));
        }

        let mut metadata = BTreeMap::new();
        let count = r.u32()?;
        for _ in 0..count {
            let key = r.string()?;
            let value = r.string()?;
            if metadata.keys().next_back().is_some_and(|last: &String| *last >= key) {
                return Err(WeightsError::CorruptManifest(format!("metadata key `{key}` out of order")));
            }
            metadata.insert(key, value);
        }

        let count = r.u32()?;
        let mut manifest: Vec<(String, Vec<usize>)> = Vec::new();
        let mut total: u64 = 0;
        for _ in 0..count {
            let name = r.string()?;
            if manifest.last().is_some_and(|(last, _)| *last >= name) {
                return Err(WeightsError::CorruptManifest(format!("tensor `{name}` out of order")));
            }
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(WeightsError::UnsupportedDtype(dtype));
            }
            let rank = r.u8()? as usize;
            if rank > MAX_RANK {
                return Err(WeightsError::CorruptManifest(format!("tensor `{name}` has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = usize::try_from(r.u64()?)
                    .map_err(|_| WeightsError::CorruptManifest(format!("tensor `{name}` dimension overflows")))?;
                shape.push(d);
            }
            let bytes = element_count(&shape)
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| WeightsError::CorruptManifest(format!("tensor `{name}` is too large")))?;
            total = total
                .checked_add(bytes as u64)
                .ok_or_else(|| WeightsError::CorruptManifest("payload size overflows".into()))?;
            manifest.push((name, shape));
        }

        let declared = r.u64()?;
        if declared != total {
            return Err(WeightsError::PayloadMismatch {
                expected: total,
                actual: declared,
            });
        }
        let remaining = (bytes.len() - r.pos) as u64;
        if remaining < total {
            return Err(WeightsError::PayloadMismatch {
                expected: total,
                actual: remaining,
            });
        }

        let mut tensors = BTreeMap::new();
        for (name, shape) in manifest {
            let n = element_count(&shape).expect("checked above");
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(name, Tensor { shape, data });
        }
        if r.pos != bytes.len() {
            return Err(WeightsError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WeightsError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| WeightsError::Io(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WeightsError> {
        let bytes = std::fs::read(path).map_err(|e| WeightsError::Io(e.to_string()))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        if self.bytes.len() - self.pos < n {
            return Err(WeightsError::Truncated {
                offset: self.pos,
                needed: n,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, WeightsError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WeightsError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, WeightsError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, WeightsError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| WeightsError::CorruptManifest("name is not UTF-8".into()))
    }
}

fn lstm_shapes(out: &mut BTreeMap<String, Vec<usize>>, prefix: &str, input: usize, hidden: usize) {
    out.insert(format!("{prefix}.cell.weight_ih"), vec![4 * hidden, input]);
    out.insert(format!("{prefix}.cell.weight_hh"), vec![4 * hidden, hidden]);
    out.insert(format!("{prefix}.cell.bias_ih"), vec![4 * hidden]);
    out.insert(format!("{prefix}.cell.bias_hh"), vec![4 * hidden]);
}

fn linear_shapes(out: &mut BTreeMap<String, Vec<usize>>, prefix: &str, input: usize, output: usize) {
    out.insert(format!("{prefix}.weight"), vec![output, input]);
    out.insert(format!("{prefix}.bias"), vec![output]);
}

fn rmvn_shapes(out: &mut BTreeMap<String, Vec<usize>>, prefix: &str, dim: usize) {
    out.insert(format!("{prefix}.rmvn.alpha"), vec![dim]);
    out.insert(format!("{prefix}.rmvn.beta"), vec![dim]);
}

/// Every tensor the codec itself consumes.
pub fn expected_shapes(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let n = cfg.embed_dim;
    let m = cfg.rnn_hidden;
    let mut out = BTreeMap::new();
    for (k, &g) in cfg.band_layout.bin_counts().iter().enumerate() {
        rmvn_shapes(&mut out, &format!("frontend.band{k}"), 2 * g + 1);
        linear_shapes(&mut out, &format!("frontend.band{k}.fc"), 2 * g + 1, n);
        linear_shapes(&mut out, &format!("recon.band{k}.glu"), n, 4 * g);
        let c = cfg.codebook_size();
        out.insert(format!("vq.band{k}.codebook"), vec![c, n]);
        out.insert(format!("vq.band{k}.ema_size"), vec![c]);
        out.insert(format!("vq.band{k}.ema_sum"), vec![c, n]);
        for h in 2..=cfg.num_hierarchies {
            out.insert(format!("vq.band{k}.h{h}.rotations"), vec![cfg.rotations_per_hierarchy(), n]);
        }
    }
    for i in 0..cfg.num_encoder_layers {
        for dir in ["time", "band"] {
            let p = format!("enc.block{i}.{dir}");
            rmvn_shapes(&mut out, &p, n);
            lstm_shapes(&mut out, &p, n, m);
            linear_shapes(&mut out, &format!("{p}.proj"), m, n);
        }
    }
    let (w, v, t) = (cfg.elastic_width, cfg.elastic_aux_dim, cfg.tac_hidden);
    for i in 0..cfg.num_decoder_layers {
        for dir in ["time", "band"] {
            let p = format!("dec.block{i}.{dir}");
            rmvn_shapes(&mut out, &p, n);
            lstm_shapes(&mut out, &p, n, m);
            linear_shapes(&mut out, &format!("{p}.head"), m, w * (n + v));
            linear_shapes(&mut out, &format!("{p}.tac.u"), v, t);
            linear_shapes(&mut out, &format!("{p}.tac.q"), t, t);
            linear_shapes(&mut out, &format!("{p}.tac.b"), 2 * t, 1);
        }
    }
    out
}

/// Discriminator tensors; optional in a store.
pub fn discriminator_shapes() -> BTreeMap<String, Vec<usize>> {
    let mut out = BTreeMap::new();
    for win in DISC_WINDOWS {
        let mut ci = 2;
        for (i, &co) in DISC_CHANNELS.iter().enumerate() {
            out.insert(format!("disc.r{win}.block{i}.weight"), vec![co, ci, 3, 3]);
            out.insert(format!("disc.r{win}.block{i}.u"), vec![co]);
            ci = co;
        }
        out.insert(format!("disc.r{win}.head.weight"), vec![1, ci, 1, 1]);
        out.insert(format!("disc.r{win}.head.u"), vec![1]);
        out.insert(format!("disc.r{win}.head.bias"), vec![1]);
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShapeReport {
    pub missing: Vec<String>,
    pub extra: Vec<String>,
    pub mismatched: Vec<(String, Vec<usize>, Vec<usize>)>,
    pub violations: Vec<String>,
}

impl ShapeReport {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty() && self.mismatched.is_empty() && self.violations.is_empty()
    }
}

impl std::fmt::Display for ShapeReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for name in &self.missing {
            writeln!(f, "missing: {name}")?;
        }
        for name in &self.extra {
            writeln!(f, "unexpected: {name}")?;
        }
        for (name, expected, actual) in &self.mismatched {
            writeln!(f, "shape: {name} is {actual:?}, expected {expected:?}")?;
        }
        for v in &self.violations {
            writeln!(f, "invariant: {v}")?;
        }
        Ok(())
    }
}

/// Row norms of a stored codebook are accepted within this distance of 1.
pub const UNIT_ROW_TOLERANCE: f64 = 1e-4;

pub fn validate_shapes(store: &ParamStore, cfg: &ModelConfig) -> ShapeReport {
    let required = expected_shapes(cfg);
    let optional = discriminator_shapes();
    let mut report = ShapeReport::default();
    for (name, shape) in &required {
        match store.get(name) {
            None => report.missing.push(name.clone()),
            Some(t) if t.shape() != shape.as_slice() => {
                report.mismatched.push((name.clone(), shape.clone(), t.shape().to_vec()))
            }
            Some(_) => {}
        }
    }
    for (name, t) in store.tensors() {
        if required.contains_key(name) {
            continue;
        }
        match optional.get(name) {
            None => report.extra.push(name.clone()),
            Some(shape) if t.shape() != shape.as_slice() => {
                report.mismatched.push((name.clone(), shape.clone(), t.shape().to_vec()))
            }
            Some(_) => {}
        }
    }
    let present: Vec<_> = optional.keys().filter(|k| store.get(k).is_some()).collect();
    if !present.is_empty() && present.len() != optional.len() {
        for name in optional.keys().filter(|k| store.get(k).is_none()) {
            report.missing.push(name.clone());
        }
    }

    for k in 0..cfg.num_bands() {
        let name = format!("vq.band{k}.codebook");
        if let Some(t) = store.get(&name).filter(|t| t.shape().len() == 2 && t.shape()[1] > 0) {
            for (j, row) in t.data().chunks(t.shape()[1]).enumerate() {
                let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > UNIT_ROW_TOLERANCE {
                    report.violations.push(format!("{name} row {j} has norm {norm:.6}"));
                    break;
                }
            }
        }
        if let Some(t) = store.get(&format!("vq.band{k}.ema_size")) {
            if t.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
                report.violations.push(format!("vq.band{k}.ema_size has negative entries"));
            }
        }
        for h in 2..=cfg.num_hierarchies {
            let name = format!("vq.band{k}.h{h}.rotations");
            if let Some(t) = store.get(&name).filter(|t| t.shape().len() == 2) {
                if t.data()[..t.shape()[1].min(t.data().len())].iter().any(|&v| v != 0.0) {
                    report.violations.push(format!("{name} row 0 is not the zero vector"));
                }
            }
        }
    }
    for (name, t) in store.tensors() {
        if t.data().iter().any(|v| !v.is_finite()) {
            report.violations.push(format!("{name} contains non-finite values"));
        }
    }
    report
}
