//! Parity fixtures: recorded inputs and expected outputs of forward ops.
//!
//! A fixture is a `.gullw` container with metadata `fixture_op` (plus
//! op-specific arguments) and tensors named `in.*` and `out.*`. Replaying a
//! fixture evaluates the op on the stored inputs against a [`GullModel`] and
//! compares every `out.*` tensor.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayD, Axis, Ix1, Ix2, Ix3, IxDyn};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bitstream::{FrameCodes, SubbandCode};
use crate::decoder::reconstruct;
use crate::error::{GullError, Result};
use crate::frontend::gain_shape;
use crate::losses::{
    feature_matching_loss, lsgan_losses, reconstruction_loss, total_generator_loss, DiscOutput, LossParts,
};
use crate::model::GullModel;
use crate::nn::rmvn;
use crate::srvq::commitment_loss;
use crate::tensor::Embeddings;
use crate::weights::{ParamStore, Tensor};

pub const FIXTURE_EXTENSION: &str = "gullfx";
pub const FIXTURE_TOLERANCE: f64 = 1e-5;

pub const OPS: [&str; 15] = [
    "gain_shape",
    "rmvn",
    "encoder_forward",
    "srvq_quantize",
    "srvq_dequantize",
    "commitment_loss",
    "tac_weights",
    "decoder_forward",
    "reconstruct",
    "discriminator_forward",
    "reconstruction_loss",
    "lsgan_losses",
    "feature_matching_loss",
    "total_generator_loss",
    "decode_embeddings",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub name: String,
    pub store: ParamStore,
}

impl Fixture {
    pub fn op(&self) -> Result<&str> {
        Ok(self.store.meta("fixture_op")?)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<std::path::PathBuf> {
        let path = dir.as_ref().join(format!("{}.{FIXTURE_EXTENSION}", self.name));
        self.store.save(&path)?;
        Ok(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self {
            name,
            store: ParamStore::load(path)?,
        })
    }
}

/// Every fixture file in `dir`, sorted by name.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<Fixture>> {
    let entries = std::fs::read_dir(dir.as_ref()).map_err(|e| GullError::Fixture(e.to_string()))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == FIXTURE_EXTENSION))
        .collect();
    paths.sort();
    paths.into_iter().map(Fixture::load).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub name: String,
    pub op: String,
    /// Largest `|got - expected| / max(1, |expected|)` over all outputs.
    pub max_error: f64,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.max_error <= FIXTURE_TOLERANCE
    }
}

type Tensors = BTreeMap<String, ArrayD<f64>>;

struct Args<'a> {
    store: &'a ParamStore,
    inputs: Tensors,
}

impl Args<'_> {
    fn meta_usize(&self, key: &str) -> Result<usize> {
        let v = self.store.meta(key)?;
        v.parse()
            .map_err(|_| GullError::Fixture(format!("metadata `{key}` = `{v}` is not an integer")))
    }

    fn meta_f64(&self, key: &str) -> Result<f64> {
        let v = self.store.meta(key)?;
        v.parse()
            .map_err(|_| GullError::Fixture(format!("metadata `{key}` = `{v}` is not a number")))
    }

    fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.inputs
            .get(name)
            .ok_or_else(|| GullError::Fixture(format!("missing input `{name}`")))
    }

    fn get1(&self, name: &str) -> Result<Array1<f64>> {
        dim::<Ix1>(self.get(name)?, name)
    }

    fn get2(&self, name: &str) -> Result<Array2<f64>> {
        dim::<Ix2>(self.get(name)?, name)
    }

    fn get3(&self, name: &str) -> Result<Array3<f64>> {
        dim::<Ix3>(self.get(name)?, name)
    }

    fn embeddings(&self, name: &str) -> Result<Embeddings> {
        Ok(Embeddings(self.get3(name)?))
    }

    fn indexed(&self, prefix: &str) -> Vec<Array3<f64>> {
        (0..)
            .map_while(|i| self.inputs.get(&format!("{prefix}{i}")))
            .filter_map(|a| a.clone().into_dimensionality::<Ix3>().ok())
            .collect()
    }

    fn disc_outputs(&self, side: &str) -> Vec<DiscOutput> {
        (0..)
            .map_while(|i| {
                let features = self.indexed(&format!("in.{side}.d{i}.f"));
                (!features.is_empty()).then(|| DiscOutput {
                    score: Array3::zeros((1, 1, 1)),
                    features,
                })
            })
            .collect()
    }
}

fn dim<D: ndarray::Dimension>(a: &ArrayD<f64>, name: &str) -> Result<ndarray::Array<f64, D>> {
    a.clone()
        .into_dimensionality::<D>()
        .map_err(|_| GullError::Fixture(format!("input `{name}` has shape {:?}", a.shape())))
}

fn scalar(v: f64) -> ArrayD<f64> {
    ArrayD::from_elem(IxDyn(&[1]), v)
}

fn codes_from(first: &Array2<f64>, rotations: &Array3<f64>) -> Result<Vec<FrameCodes>> {
    let (t, k) = first.dim();
    if rotations.dim().0 != t || rotations.dim().1 != k {
        return Err(GullError::Fixture("index tensors disagree in shape".into()));
    }
    let as_index = |v: f64, max: f64| -> Result<f64> {
        if v.fract() != 0.0 || v < 0.0 || v > max {
            return Err(GullError::Fixture(format!("invalid code index {v}")));
        }
        Ok(v)
    };
    (0..t)
        .map(|ti| {
            Ok(FrameCodes {
                bands: (0..k)
                    .map(|ki| {
                        Ok(SubbandCode {
                            first: as_index(first[[ti, ki]], u16::MAX as f64)? as u16,
                            rotations: rotations
                                .slice(ndarray::s![ti, ki, ..])
                                .iter()
                                .map(|&v| Ok(as_index(v, u8::MAX as f64)? as u8))
                                .collect::<Result<_>>()?,
                        })
                    })
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

fn evaluate(model: &GullModel, op: &str, args: &Args) -> Result<Tensors> {
    let mut out = Tensors::new();
    let cfg = &model.config;
    match op {
        "gain_shape" => {
            let (re, im) = (args.get2("in.re")?, args.get2("in.im")?);
            let (b, g) = re.dim();
            let mut y = Array2::zeros((b, 2 * g + 1));
            for i in 0..b {
                let frame: Vec<Complex64> = (0..g).map(|j| Complex64::new(re[[i, j]], im[[i, j]])).collect();
                y.row_mut(i).assign(&gain_shape(&frame).0);
            }
            out.insert("out.g".into(), y.into_dyn());
        }
        "rmvn" => {
            let x = args.get2("in.x")?;
            let (alpha, beta) = (args.get1("in.alpha")?, args.get1("in.beta")?);
            let eps = args.meta_f64("eps")?;
            let mut y = x.clone();
            for (mut row, src) in y.rows_mut().into_iter().zip(x.rows()) {
                row.assign(&rmvn(src, alpha.view(), beta.view(), eps));
            }
            out.insert("out.y".into(), y.into_dyn());
        }
        "encoder_forward" => {
            let e = args.embeddings("in.e")?;
            let c = model.encoder.forward(&e, &mut model.encoder.init_state(e.bands()))?;
            out.insert("out.c".into(), c.0.into_dyn());
        }
        "srvq_quantize" => {
            let c = args.embeddings("in.c")?;
            let h = args.meta_usize("h")?;
            let q = model.srvq.quantize(&c, h)?;
            let (t, k) = (c.frames(), c.bands());
            let mut first = Array2::zeros((t, k));
            let mut rot = Array3::zeros((t, k, h - 1));
            for (ti, frame) in q.frames.iter().enumerate() {
                for (ki, code) in frame.bands.iter().enumerate() {
                    first[[ti, ki]] = code.first as f64;
                    for (j, &r) in code.rotations.iter().enumerate() {
                        rot[[ti, ki, j]] = r as f64;
                    }
                }
            }
            out.insert("out.first".into(), first.into_dyn());
            out.insert("out.rotations".into(), rot.into_dyn());
            out.insert("out.e".into(), q.stages.last().expect("h >= 1").0.clone().into_dyn());
        }
        "srvq_dequantize" => {
            let frames = codes_from(&args.get2("in.first")?, &args.get3("in.rotations")?)?;
            let r = model.srvq.dequantize(&frames, cfg.embed_dim)?;
            out.insert("out.r".into(), r.0.into_dyn());
        }
        "commitment_loss" => {
            let c = args.embeddings("in.c")?;
            let stages = args.get("in.stages")?;
            let stages: Vec<Embeddings> = stages
                .axis_iter(Axis(0))
                .map(|s| dim::<Ix3>(&s.to_owned(), "in.stages").map(Embeddings))
                .collect::<Result<_>>()?;
            out.insert("out.loss".into(), scalar(commitment_loss(&c, &stages)?));
        }
        "tac_weights" => {
            let block = args.meta_usize("block")?;
            let layer = model
                .decoder
                .blocks()
                .get(block)
                .ok_or_else(|| GullError::Fixture(format!("no decoder block {block}")))?;
            let layer = match args.store.meta("direction")? {
                "time" => &layer.time,
                "band" => &layer.band,
                other => return Err(GullError::Fixture(format!("unknown direction `{other}`"))),
            };
            let w = layer.tac.weights(args.get2("in.d")?.view())?;
            out.insert("out.weights".into(), w.into_dyn());
        }
        "decoder_forward" => {
            let r = args.embeddings("in.r")?;
            let (w, d) = (args.meta_usize("w")?, args.meta_usize("d")?);
            let y = model.decoder.forward(&r, w, d, &mut model.decoder.init_state(r.bands()))?;
            out.insert("out.y".into(), y.0.into_dyn());
        }
        "reconstruct" => {
            let spec = reconstruct(&args.embeddings("in.y")?, &model.recon, cfg)?;
            out.insert("out.re".into(), spec.bins.mapv(|c| c.re).into_dyn());
            out.insert("out.im".into(), spec.bins.mapv(|c| c.im).into_dyn());
        }
        "discriminator_forward" => {
            let window = args.meta_usize("window")?;
            let set = model
                .discriminators
                .as_ref()
                .ok_or_else(|| GullError::Fixture("model has no discriminators".into()))?;
            let disc = set
                .discs
                .iter()
                .find(|d| d.window == window)
                .ok_or_else(|| GullError::Fixture(format!("no discriminator for window {window}")))?;
            let y = disc.forward(&args.get3("in.x")?)?;
            out.insert("out.score".into(), y.score.into_dyn());
            for (j, f) in y.features.into_iter().enumerate() {
                out.insert(format!("out.feature{j}"), f.into_dyn());
            }
        }
        "reconstruction_loss" => {
            let sr = args.meta_usize("sample_rate")? as u32;
            let (s, x) = (args.get1("in.s")?, args.get1("in.x")?);
            let loss = reconstruction_loss(s.as_slice().expect("owned"), x.as_slice().expect("owned"), sr)?;
            out.insert("out.loss".into(), scalar(loss));
        }
        "lsgan_losses" => {
            let (d, g) = lsgan_losses(&args.indexed("in.real"), &args.indexed("in.fake"))?;
            out.insert("out.d_loss".into(), scalar(d));
            out.insert("out.g_loss".into(), scalar(g));
        }
        "feature_matching_loss" => {
            let loss = feature_matching_loss(&args.disc_outputs("fake"), &args.disc_outputs("real"))?;
            out.insert("out.loss".into(), scalar(loss));
        }
        "total_generator_loss" => {
            let p = args.get1("in.parts")?;
            if p.len() != 4 {
                return Err(GullError::Fixture("in.parts must hold 4 values".into()));
            }
            let parts = LossParts {
                reconstruction: p[0],
                feature_matching: p[1],
                generator: p[2],
                commitment: p[3],
            };
            out.insert("out.total".into(), scalar(total_generator_loss(&parts)));
        }
        "decode_embeddings" => {
            let frames = codes_from(&args.get2("in.first")?, &args.get3("in.rotations")?)?;
            let (w, d) = (args.meta_usize("w")?, args.meta_usize("d")?);
            let k_bar = args.meta_usize("target_bands")?;
            let r = model.srvq.dequantize(&frames, cfg.embed_dim)?;
            let r = crate::srvq::pad_superres(&r, k_bar)?;
            let y = model.decoder.forward(&r, w, d, &mut model.decoder.init_state(k_bar))?;
            out.insert("out.y".into(), y.0.into_dyn());
        }
        other => return Err(GullError::Fixture(format!("unknown fixture op `{other}`"))),
    }
    Ok(out)
}

fn split(store: &ParamStore) -> Tensors {
    store
        .tensors()
        .iter()
        .filter(|(k, _)| k.starts_with("in."))
        .map(|(k, t)| (k.clone(), t.to_array()))
        .collect()
}

pub fn replay(model: &GullModel, fixture: &Fixture) -> Result<Outcome> {
    let op = fixture.op()?.to_string();
    let args = Args {
        store: &fixture.store,
        inputs: split(&fixture.store),
    };
    let got = evaluate(model, &op, &args)?;
    let mut max_error: f64 = 0.0;
    let mut compared = 0;
    for (name, t) in fixture.store.tensors().iter().filter(|(k, _)| k.starts_with("out.")) {
        let value = got
            .get(name)
            .ok_or_else(|| GullError::Fixture(format!("{}: op produced no `{name}`", fixture.name)))?;
        if value.shape() != t.shape() {
            return Err(GullError::Fixture(format!(
                "{}: `{name}` has shape {:?}, fixture expects {:?}",
                fixture.name,
                value.shape(),
                t.shape()
            )));
        }
        for (a, &b) in value.iter().zip(t.data()) {
            let b = b as f64;
            let err = (a - b).abs() / b.abs().max(1.0);
            max_error = max_error.max(if err.is_nan() { f64::INFINITY } else { err });
        }
        compared += 1;
    }
    if compared == 0 {
        return Err(GullError::Fixture(format!("{}: no outputs recorded", fixture.name)));
    }
    Ok(Outcome {
        name: fixture.name.clone(),
        op,
        max_error,
    })
}

struct Builder {
    name: String,
    store: ParamStore,
}

impl Builder {
    fn new(name: impl Into<String>, op: &str) -> Self {
        let mut store = ParamStore::new();
        store.set_metadata("fixture_op", op);
        Self {
            name: name.into(),
            store,
        }
    }

    fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.store.set_metadata(key, value.to_string());
        self
    }

    fn input<D: ndarray::Dimension>(mut self, name: &str, a: &ndarray::Array<f64, D>) -> Self {
        self.store
            .insert(format!("in.{name}"), Tensor::from_array(a))
            .expect("unique input names");
        self
    }

    fn finish(mut self, model: &GullModel) -> Result<Fixture> {
        let op = self.store.meta("fixture_op")?.to_string();
        let args = Args {
            store: &self.store,
            inputs: split(&self.store),
        };
        let outputs = evaluate(model, &op, &args)?;
        for (name, value) in outputs {
            self.store.insert(name, Tensor::from_array(&value))?;
        }
        Ok(Fixture {
            name: self.name,
            store: self.store,
        })
    }
}

fn unit_columns(t: usize, k: usize, n: usize, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let mut e = Embeddings(crate::nn::uniform((t, k, n), 1.0, rng));
    e.normalize_columns();
    e.0
}

/// Fixtures for every op over the given model, including zero inputs and
/// the extreme decoder widths and depths.
pub fn emit_fixtures(model: &GullModel, seed: u64) -> Result<Vec<Fixture>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = &model.config;
    let n = cfg.embed_dim;
    let (frames, k_hat) = (3, cfg.valid_subbands(16_000).unwrap_or(1).min(cfg.num_bands()));
    let k = cfg.num_bands();
    let u = |shape: &[usize], rng: &mut ChaCha8Rng| -> ArrayD<f64> {
        crate::nn::uniform(IxDyn(shape), 1.0, rng)
    };
    let mut out = Vec::new();

    for (case, scale) in [("random", 1.0), ("zero", 0.0)] {
        let g = 5;
        out.push(
            Builder::new(format!("gain_shape_{case}"), "gain_shape")
                .input("re", &(u(&[4, g], &mut rng) * scale))
                .input("im", &(u(&[4, g], &mut rng) * scale))
                .finish(model)?,
        );
        out.push(
            Builder::new(format!("rmvn_{case}"), "rmvn")
                .meta("eps", cfg.rmvn_eps)
                .input("x", &(u(&[4, 11], &mut rng) * scale))
                .input("alpha", &u(&[11], &mut rng))
                .input("beta", &u(&[11], &mut rng))
                .finish(model)?,
        );
        out.push(
            Builder::new(format!("encoder_forward_{case}"), "encoder_forward")
                .input("e", &(u(&[frames, k_hat, n], &mut rng) * scale))
                .finish(model)?,
        );
        let c = unit_columns(frames, k_hat, n, &mut rng) * scale;
        for h in [1, cfg.num_hierarchies] {
            out.push(
                Builder::new(format!("srvq_quantize_h{h}_{case}"), "srvq_quantize")
                    .meta("h", h)
                    .input("c", &c)
                    .finish(model)?,
            );
        }
        let stages = ndarray::stack(
            Axis(0),
            &(0..cfg.num_hierarchies)
                .map(|_| unit_columns(frames, k_hat, n, &mut rng) * scale)
                .collect::<Vec<_>>()
                .iter()
                .map(|a| a.view())
                .collect::<Vec<_>>(),
        )
        .expect("equal shapes");
        out.push(
            Builder::new(format!("commitment_loss_{case}"), "commitment_loss")
                .input("c", &c)
                .input("stages", &stages)
                .finish(model)?,
        );
        for w in [1, cfg.elastic_width] {
            out.push(
                Builder::new(format!("tac_weights_w{w}_{case}"), "tac_weights")
                    .meta("block", 0)
                    .meta("direction", "time")
                    .input("d", &(u(&[w, cfg.elastic_aux_dim], &mut rng) * scale))
                    .finish(model)?,
            );
        }
        let r = u(&[frames, k, n], &mut rng) * scale;
        for w in [1, cfg.elastic_width] {
            for d in [1, cfg.num_decoder_layers] {
                out.push(
                    Builder::new(format!("decoder_forward_w{w}_d{d}_{case}"), "decoder_forward")
                        .meta("w", w)
                        .meta("d", d)
                        .input("r", &r)
                        .finish(model)?,
                );
            }
        }
        out.push(
            Builder::new(format!("reconstruct_{case}"), "reconstruct")
                .input("y", &(u(&[frames, k_hat, n], &mut rng) * scale))
                .finish(model)?,
        );
        if let Some(set) = &model.discriminators {
            let d = &set.discs[0];
            let bins = d.window / 2 + 1;
            let mut x = u(&[2, bins, 4], &mut rng) * scale;
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                x /= norm;
            }
            out.push(
                Builder::new(format!("discriminator_forward_{case}"), "discriminator_forward")
                    .meta("window", d.window)
                    .input("x", &x)
                    .finish(model)?,
            );
        }
        let len = cfg.operating_sr as usize / 20;
        out.push(
            Builder::new(format!("reconstruction_loss_{case}"), "reconstruction_loss")
                .meta("sample_rate", cfg.operating_sr)
                .input("s", &(u(&[len], &mut rng) * scale))
                .input("x", &u(&[len], &mut rng))
                .finish(model)?,
        );
        let mut lsgan = Builder::new(format!("lsgan_losses_{case}"), "lsgan_losses");
        let mut fm = Builder::new(format!("feature_matching_loss_{case}"), "feature_matching_loss");
        for i in 0..5 {
            lsgan = lsgan
                .input(&format!("real{i}"), &(u(&[1, 3, 2 + i], &mut rng) * scale))
                .input(&format!("fake{i}"), &(u(&[1, 3, 2 + i], &mut rng) * scale));
            for j in 0..6 {
                let shape = [2, 2 + j, 3];
                fm = fm
                    .input(&format!("real.d{i}.f{j}"), &(u(&shape, &mut rng) * scale))
                    .input(&format!("fake.d{i}.f{j}"), &(u(&shape, &mut rng) * scale));
            }
        }
        out.push(lsgan.finish(model)?);
        out.push(fm.finish(model)?);
        let parts = u(&[4], &mut rng).mapv(f64::abs) * scale;
        out.push(
            Builder::new(format!("total_generator_loss_{case}"), "total_generator_loss")
                .input("parts", &parts)
                .finish(model)?,
        );
    }

    // indices from a real quantization, decoded at the extreme widths/depths
    let c = Embeddings(unit_columns(frames, k_hat, n, &mut rng));
    let q = model.srvq.quantize(&c, cfg.num_hierarchies)?;
    let mut first = Array2::zeros((frames, k_hat));
    let mut rot = Array3::zeros((frames, k_hat, cfg.num_hierarchies - 1));
    for (t, f) in q.frames.iter().enumerate() {
        for (b, code) in f.bands.iter().enumerate() {
            first[[t, b]] = code.first as f64;
            for (j, &r) in code.rotations.iter().enumerate() {
                rot[[t, b, j]] = r as f64;
            }
        }
    }
    out.push(
        Builder::new("srvq_dequantize_random", "srvq_dequantize")
            .input("first", &first)
            .input("rotations", &rot)
            .finish(model)?,
    );
    out.push(
        Builder::new("srvq_dequantize_zero", "srvq_dequantize")
            .input("first", &Array2::<f64>::zeros((frames, k_hat)))
            .input("rotations", &Array3::<f64>::zeros((frames, k_hat, cfg.num_hierarchies - 1)))
            .finish(model)?,
    );
    for w in [1, cfg.elastic_width] {
        for d in [1, cfg.num_decoder_layers] {
            out.push(
                Builder::new(format!("decode_embeddings_w{w}_d{d}"), "decode_embeddings")
                    .meta("w", w)
                    .meta("d", d)
                    .meta("target_bands", k)
                    .input("first", &first)
                    .input("rotations", &rot)
                    .finish(model)?,
            );
        }
    }
    Ok(out)
}
