//! A complete codec: parameters for every stage plus the encode and decode paths.

use ndarray::{Array1, Array2, Array4, Ix1, Ix2, Ix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bitstream::{self, FrameCodes, StreamHeader};
use crate::config::{ModelConfig, ModelType};
use crate::decoder::{reconstruct, Decoder, ElasticBlock, ElasticRnn, ReconHeads, Tac};
use crate::dsp::{istft, resample, split_bands, stft, AudioBuffer};
use crate::encoder::{BsrnnBlock, Encoder, ResidualRnn};
use crate::error::{check_range, GullError, Result};
use crate::frontend::{embed_subbands, FrontendBand, FrontendParams};
use crate::losses::{Discriminator, DiscriminatorSet, SpectralConv, DISC_WINDOWS};
use crate::nn::{Linear, LstmCell, Rmvn};
use crate::srvq::{Codebook, QuantizedStream, RotationBank, Srvq, SubbandQuantizer};
use crate::tensor::Embeddings;
use crate::weights::{validate_shapes, ParamStore, Tensor, WeightsError, FORMAT_VERSION};

/// Receiver-side decoding choices; none of them appear in the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    pub width: usize,
    pub depth: usize,
    /// Overrides the target rate stored in the header.
    pub target_sr: Option<u32>,
}

impl DecodeOptions {
    pub fn full(cfg: &ModelConfig) -> Self {
        Self {
            width: cfg.elastic_width,
            depth: cfg.num_decoder_layers,
            target_sr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub header: StreamHeader,
    pub frames: Vec<FrameCodes>,
    /// Encoder output `c` (`N x K̂ x T`).
    pub embeddings: Embeddings,
    /// `e^1..e^h`.
    pub stages: Vec<Embeddings>,
}

impl Encoded {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(bitstream::serialize(&self.header, &self.frames)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GullModel {
    pub config: ModelConfig,
    pub frontend: FrontendParams,
    pub encoder: Encoder,
    pub srvq: Srvq,
    pub decoder: Decoder,
    pub recon: ReconHeads,
    pub discriminators: Option<DiscriminatorSet>,
}

impl GullModel {
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = &config;
        let bins = cfg.band_layout.bin_counts();
        let frontend = FrontendParams::random(bins, cfg.embed_dim, cfg.rmvn_eps, &mut rng);
        let encoder = Encoder::random(cfg.num_encoder_layers, cfg.embed_dim, cfg.rnn_hidden, cfg.rmvn_eps, &mut rng);
        let srvq = Srvq::random(
            cfg.num_bands(),
            cfg.codebook_size(),
            cfg.rotations_per_hierarchy(),
            cfg.num_hierarchies,
            cfg.embed_dim,
            &mut rng,
        );
        let decoder = Decoder::random(cfg, &mut rng);
        let recon = ReconHeads::random(bins, cfg.embed_dim, &mut rng);
        Ok(Self {
            config,
            frontend,
            encoder,
            srvq,
            decoder,
            recon,
            discriminators: None,
        })
    }

    pub fn with_random_discriminators(mut self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.discriminators = Some(DiscriminatorSet::random(&mut rng));
        self
    }

    pub fn model_type(&self) -> ModelType {
        self.config.model_type
    }

    /// Frontend embeddings of the valid subbands (`N x K̂ x T`).
    pub fn embed(&self, audio: &AudioBuffer) -> Result<Embeddings> {
        let cfg = &self.config;
        let k_hat = cfg.valid_subbands(audio.sample_rate)?;
        let audio = resample(audio, cfg.operating_sr);
        let spec = stft(&audio, cfg)?;
        let sub = split_bands(&spec, &cfg.band_layout)?;
        embed_subbands(&sub, &self.frontend, k_hat)
    }

    pub fn encode(&self, audio: &AudioBuffer, h: usize, target_sr: u32) -> Result<Encoded> {
        let cfg = &self.config;
        check_range("hierarchies", h, 1, cfg.num_hierarchies)?;
        cfg.valid_subbands(target_sr)?;
        let e = self.embed(audio)?;
        let frame_count = u32::try_from(e.frames()).map_err(|_| GullError::Audio("input is too long".into()))?;
        let header = StreamHeader {
            model_type: cfg.model_type,
            input_sr: audio.sample_rate,
            target_sr,
            num_hierarchies: h as u8,
            frame_count,
        };
        header.validate()?;
        let c = self.encoder.forward(&e, &mut self.encoder.init_state(e.bands()))?;
        let QuantizedStream { frames, stages } = self.srvq.quantize(&c, h)?;
        Ok(Encoded {
            header,
            frames,
            embeddings: c,
            stages,
        })
    }

    /// Decoded subband embeddings (`N x K̄ x T`) before the reconstruction heads.
    pub fn decode_embeddings(
        &self,
        header: &StreamHeader,
        frames: &[FrameCodes],
        opts: &DecodeOptions,
    ) -> Result<Embeddings> {
        let target = self.check_stream(header, frames, opts)?;
        let k_bar = self.config.valid_subbands(target)?;
        let n = self.config.embed_dim;
        if frames.is_empty() {
            return Ok(Embeddings::zeros(n, k_bar, 0));
        }
        let r = self.srvq.dequantize(frames, n)?;
        let r = crate::srvq::pad_superres(&r, k_bar)?;
        self.decoder
            .forward(&r, opts.width, opts.depth, &mut self.decoder.init_state(k_bar))
    }

    pub fn decode(&self, header: &StreamHeader, frames: &[FrameCodes], opts: &DecodeOptions) -> Result<AudioBuffer> {
        let target = self.check_stream(header, frames, opts)?;
        let y = self.decode_embeddings(header, frames, opts)?;
        let spec = reconstruct(&y, &self.recon, &self.config)?;
        let audio = istft(&spec, &self.config)?;
        Ok(resample(&audio, target))
    }

    pub fn decode_bytes(&self, bytes: &[u8], opts: &DecodeOptions) -> Result<AudioBuffer> {
        let (header, frames) = bitstream::deserialize(bytes)?;
        self.decode(&header, &frames, opts)
    }

    fn check_stream(&self, header: &StreamHeader, frames: &[FrameCodes], opts: &DecodeOptions) -> Result<u32> {
        header.validate()?;
        if header.model_type != self.config.model_type {
            return Err(GullError::Config(crate::config::ConfigError::Invalid(format!(
                "{} stream given to a {} model",
                header.model_type, self.config.model_type
            ))));
        }
        if header.num_hierarchies as usize > self.config.num_hierarchies {
            return Err(GullError::OutOfRange {
                what: "hierarchies",
                value: header.num_hierarchies as usize,
                min: 1,
                max: self.config.num_hierarchies,
            });
        }
        if frames.len() != header.frame_count as usize {
            return Err(bitstream::BitstreamError::FrameCountMismatch {
                header: header.frame_count,
                actual: frames.len(),
            }
            .into());
        }
        check_range("decoder width", opts.width, 1, self.decoder.width())?;
        check_range("decoder depth", opts.depth, 1, self.decoder.depth())?;
        let target = opts.target_sr.unwrap_or(header.target_sr);
        StreamHeader {
            target_sr: target,
            ..*header
        }
        .validate()?;
        Ok(target)
    }

    pub fn to_store(&self) -> ParamStore {
        let cfg = &self.config;
        let mut s = ParamStore::new();
        s.set_metadata("model_type", cfg.model_type.to_string());
        s.set_metadata("config", cfg.to_toml_string());
        s.set_metadata("config_hash", cfg.hash());
        s.set_metadata("rmvn_eps", format!("{:e}", cfg.rmvn_eps));
        s.set_metadata("ema_decay", format!("{}", cfg.ema_decay));
        s.set_metadata("ema_eps", format!("{:e}", cfg.ema_eps));
        s.set_metadata("format_version", FORMAT_VERSION.to_string());

        let mut put = |name: String, t: Tensor| s.insert(name, t).expect("unique tensor names");
        for (k, band) in self.frontend.bands.iter().enumerate() {
            put_rmvn(&mut put, &format!("frontend.band{k}"), &band.rmvn);
            put_linear(&mut put, &format!("frontend.band{k}.fc"), &band.fc);
        }
        for (i, block) in self.encoder.blocks().iter().enumerate() {
            for (dir, l) in [("time", &block.time), ("band", &block.band)] {
                let p = format!("enc.block{i}.{dir}");
                put_rmvn(&mut put, &p, &l.rmvn);
                put_cell(&mut put, &p, &l.cell);
                put_linear(&mut put, &format!("{p}.proj"), &l.proj);
            }
        }
        for (k, q) in self.srvq.bands.iter().enumerate() {
            let p = format!("vq.band{k}");
            put(format!("{p}.codebook"), Tensor::from_array(&q.codebook.codes().to_owned()));
            put(format!("{p}.ema_size"), Tensor::from_array(&q.codebook.ema_size().to_owned()));
            put(format!("{p}.ema_sum"), Tensor::from_array(&q.codebook.ema_sum().to_owned()));
            for h in 2..=q.hierarchies() {
                put(format!("{p}.h{h}.rotations"), Tensor::from_array(&q.rotations.vectors(h).to_owned()));
            }
        }
        for (i, block) in self.decoder.blocks().iter().enumerate() {
            for (dir, l) in [("time", &block.time), ("band", &block.band)] {
                let p = format!("dec.block{i}.{dir}");
                put_rmvn(&mut put, &p, &l.rmvn);
                put_cell(&mut put, &p, &l.cell);
                put_linear(&mut put, &format!("{p}.head"), &l.head);
                put_linear(&mut put, &format!("{p}.tac.u"), &l.tac.u);
                put_linear(&mut put, &format!("{p}.tac.q"), &l.tac.q);
                put_linear(&mut put, &format!("{p}.tac.b"), &l.tac.b);
            }
        }
        for (k, head) in self.recon.bands.iter().enumerate() {
            put_linear(&mut put, &format!("recon.band{k}.glu"), head);
        }
        if let Some(set) = &self.discriminators {
            for d in &set.discs {
                let p = format!("disc.r{}", d.window);
                for (i, b) in d.blocks.iter().enumerate() {
                    put(format!("{p}.block{i}.weight"), Tensor::from_array(&b.raw().to_owned()));
                    put(format!("{p}.block{i}.u"), Tensor::from_array(b.u()));
                }
                put(format!("{p}.head.weight"), Tensor::from_array(&d.head.raw().to_owned()));
                put(format!("{p}.head.u"), Tensor::from_array(d.head.u()));
                put(
                    format!("{p}.head.bias"),
                    Tensor::from_array(d.head.bias().expect("head has a bias")),
                );
            }
        }
        s
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let config = ModelConfig::from_toml_str(store.meta("config")?)?;
        let hash = store.meta("config_hash")?;
        if hash != config.hash() {
            return Err(WeightsError::BadMetadata {
                key: "config_hash".into(),
                reason: "does not match the embedded configuration".into(),
            }
            .into());
        }
        let model_type: ModelType = store.meta("model_type")?.parse().map_err(|_| WeightsError::BadMetadata {
            key: "model_type".into(),
            reason: "unknown model type".into(),
        })?;
        if model_type != config.model_type {
            return Err(WeightsError::BadMetadata {
                key: "model_type".into(),
                reason: "disagrees with the embedded configuration".into(),
            }
            .into());
        }
        let report = validate_shapes(store, &config);
        if !report.is_empty() {
            return Err(WeightsError::Invalid(report.to_string().trim_end().replace('\n', "; ")).into());
        }

        let cfg = &config;
        let eps = cfg.rmvn_eps;
        let frontend = FrontendParams {
            bands: (0..cfg.num_bands())
                .map(|k| {
                    Ok(FrontendBand {
                        rmvn: get_rmvn(store, &format!("frontend.band{k}"), eps)?,
                        fc: get_linear(store, &format!("frontend.band{k}.fc"))?,
                    })
                })
                .collect::<Result<_>>()?,
        };
        let encoder = Encoder::new(
            (0..cfg.num_encoder_layers)
                .map(|i| {
                    let layer = |dir: &str| -> Result<ResidualRnn> {
                        let p = format!("enc.block{i}.{dir}");
                        Ok(ResidualRnn {
                            rmvn: get_rmvn(store, &p, eps)?,
                            cell: get_cell(store, &p)?,
                            proj: get_linear(store, &format!("{p}.proj"))?,
                        })
                    };
                    Ok(BsrnnBlock {
                        time: layer("time")?,
                        band: layer("band")?,
                    })
                })
                .collect::<Result<_>>()?,
        )?;
        let srvq = Srvq {
            bands: (0..cfg.num_bands())
                .map(|k| {
                    let p = format!("vq.band{k}");
                    let codebook = Codebook::with_stats(
                        get2(store, &format!("{p}.codebook"))?,
                        get1(store, &format!("{p}.ema_size"))?,
                        get2(store, &format!("{p}.ema_sum"))?,
                    )?;
                    let rotations = RotationBank::new(
                        (2..=cfg.num_hierarchies)
                            .map(|h| get2(store, &format!("{p}.h{h}.rotations")))
                            .collect::<Result<_>>()?,
                    )?;
                    Ok(SubbandQuantizer { codebook, rotations })
                })
                .collect::<Result<_>>()?,
        };
        let decoder = Decoder::new(
            (0..cfg.num_decoder_layers)
                .map(|i| {
                    let layer = |dir: &str| -> Result<ElasticRnn> {
                        let p = format!("dec.block{i}.{dir}");
                        ElasticRnn::new(
                            get_rmvn(store, &p, eps)?,
                            get_cell(store, &p)?,
                            get_linear(store, &format!("{p}.head"))?,
                            Tac {
                                u: get_linear(store, &format!("{p}.tac.u"))?,
                                q: get_linear(store, &format!("{p}.tac.q"))?,
                                b: get_linear(store, &format!("{p}.tac.b"))?,
                            },
                            cfg.elastic_width,
                            cfg.elastic_aux_dim,
                        )
                    };
                    Ok(ElasticBlock {
                        time: layer("time")?,
                        band: layer("band")?,
                    })
                })
                .collect::<Result<_>>()?,
        )?;
        let recon = ReconHeads {
            bands: (0..cfg.num_bands())
                .map(|k| get_linear(store, &format!("recon.band{k}.glu")))
                .collect::<Result<_>>()?,
        };
        let discriminators = if store.get(&format!("disc.r{}.head.weight", DISC_WINDOWS[0])).is_some() {
            Some(load_discriminators(store)?)
        } else {
            None
        };
        Ok(Self {
            config,
            frontend,
            encoder,
            srvq,
            decoder,
            recon,
            discriminators,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        Ok(self.to_store().save(path)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_store(&ParamStore::load(path)?)
    }
}

fn load_discriminators(store: &ParamStore) -> Result<DiscriminatorSet> {
    let discs = DISC_WINDOWS
        .iter()
        .map(|&window| {
            let p = format!("disc.r{window}");
            let blocks = (0..crate::losses::DISC_CHANNELS.len())
                .map(|i| {
                    let stride = if i % 2 == 0 { 1 } else { 2 };
                    SpectralConv::new(
                        get4(store, &format!("{p}.block{i}.weight"))?,
                        get1(store, &format!("{p}.block{i}.u"))?,
                        None,
                        stride,
                        1,
                    )
                })
                .collect::<Result<_>>()?;
            let head = SpectralConv::new(
                get4(store, &format!("{p}.head.weight"))?,
                get1(store, &format!("{p}.head.u"))?,
                Some(get1(store, &format!("{p}.head.bias"))?),
                1,
                0,
            )?;
            Ok(Discriminator { window, blocks, head })
        })
        .collect::<Result<_>>()?;
    Ok(DiscriminatorSet { discs })
}

fn put_linear(put: &mut impl FnMut(String, Tensor), p: &str, l: &Linear) {
    put(format!("{p}.weight"), Tensor::from_array(&l.weight));
    put(format!("{p}.bias"), Tensor::from_array(&l.bias));
}

fn put_rmvn(put: &mut impl FnMut(String, Tensor), p: &str, r: &Rmvn) {
    put(format!("{p}.rmvn.alpha"), Tensor::from_array(&r.alpha));
    put(format!("{p}.rmvn.beta"), Tensor::from_array(&r.beta));
}

fn put_cell(put: &mut impl FnMut(String, Tensor), p: &str, c: &LstmCell) {
    put(format!("{p}.cell.weight_ih"), Tensor::from_array(&c.weight_ih));
    put(format!("{p}.cell.weight_hh"), Tensor::from_array(&c.weight_hh));
    put(format!("{p}.cell.bias_ih"), Tensor::from_array(&c.bias_ih));
    put(format!("{p}.cell.bias_hh"), Tensor::from_array(&c.bias_hh));
}

fn get_any(store: &ParamStore, name: &str) -> Result<ndarray::ArrayD<f64>> {
    Ok(store
        .get(name)
        .ok_or_else(|| WeightsError::Missing(name.into()))?
        .to_array())
}

fn rank_error(name: &str) -> GullError {
    GullError::Shape(format!("tensor `{name}` has the wrong rank"))
}

pub(crate) fn get1(store: &ParamStore, name: &str) -> Result<Array1<f64>> {
    get_any(store, name)?.into_dimensionality::<Ix1>().map_err(|_| rank_error(name))
}

pub(crate) fn get2(store: &ParamStore, name: &str) -> Result<Array2<f64>> {
    get_any(store, name)?.into_dimensionality::<Ix2>().map_err(|_| rank_error(name))
}

pub(crate) fn get4(store: &ParamStore, name: &str) -> Result<Array4<f64>> {
    get_any(store, name)?.into_dimensionality::<Ix4>().map_err(|_| rank_error(name))
}

fn get_linear(store: &ParamStore, p: &str) -> Result<Linear> {
    Linear::new(get2(store, &format!("{p}.weight"))?, get1(store, &format!("{p}.bias"))?)
}

fn get_rmvn(store: &ParamStore, p: &str, eps: f64) -> Result<Rmvn> {
    Rmvn::new(
        get1(store, &format!("{p}.rmvn.alpha"))?,
        get1(store, &format!("{p}.rmvn.beta"))?,
        eps,
    )
}

fn get_cell(store: &ParamStore, p: &str) -> Result<LstmCell> {
    LstmCell::new(
        get2(store, &format!("{p}.cell.weight_ih"))?,
        get2(store, &format!("{p}.cell.weight_hh"))?,
        get1(store, &format!("{p}.cell.bias_ih"))?,
        get1(store, &format!("{p}.cell.bias_hh"))?,
    )
}

/// Small but structurally complete configuration for tests and benches.
pub fn toy_config(model_type: ModelType) -> ModelConfig {
    let mut cfg = ModelConfig::build(model_type);
    cfg.embed_dim = 8;
    cfg.rnn_hidden = 16;
    cfg.num_encoder_layers = 2;
    cfg.num_decoder_layers = 4;
    cfg.elastic_aux_dim = 4;
    cfg.tac_hidden = 4;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::expected_shapes;

    fn tone(sr: u32, secs: f64) -> AudioBuffer {
        let n = (sr as f64 * secs) as usize;
        let samples = (0..n)
            .map(|i| 0.3 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / sr as f64).sin())
            .collect();
        AudioBuffer::new(samples, sr).unwrap()
    }

    #[test]
    fn store_round_trip_rebuilds_the_same_model() {
        let model = GullModel::random(toy_config(ModelType::Speech), 1).unwrap();
        let store = model.to_store();
        assert!(validate_shapes(&store, &model.config).is_empty());
        assert_eq!(store.len(), expected_shapes(&model.config).len());
        let bytes = store.to_bytes();
        let loaded = GullModel::from_store(&ParamStore::from_bytes(&bytes).unwrap()).unwrap();
        // f32 storage: the reloaded model is a fixed point of another round trip
        let again = GullModel::from_store(&loaded.to_store()).unwrap();
        assert_eq!(loaded.to_store(), again.to_store());
        assert_eq!(loaded.to_store().to_bytes(), bytes);
    }

    #[test]
    fn report_names_missing_and_bad_tensors() {
        let model = GullModel::random(toy_config(ModelType::Speech), 2).unwrap();
        let mut store = model.to_store();
        store.remove("vq.band0.codebook");
        let report = validate_shapes(&store, &model.config);
        assert_eq!(report.missing, vec!["vq.band0.codebook".to_string()]);
        assert!(GullModel::from_store(&store).is_err());

        let mut store = model.to_store();
        let t = store.remove("vq.band1.codebook").unwrap();
        let scaled: Vec<f32> = t.data().iter().map(|v| v * 2.0).collect();
        store.insert("vq.band1.codebook", Tensor::new(t.shape().to_vec(), scaled).unwrap()).unwrap();
        store.insert("stray", Tensor::scalar(0.0)).unwrap();
        let report = validate_shapes(&store, &model.config);
        assert!(report.violations.iter().any(|v| v.contains("vq.band1.codebook")));
        assert_eq!(report.extra, vec!["stray".to_string()]);
    }

    #[test]
    fn tampered_config_hash_is_rejected() {
        let model = GullModel::random(toy_config(ModelType::Speech), 3).unwrap();
        let mut store = model.to_store();
        store.set_metadata("config_hash", "00");
        assert!(matches!(
            GullModel::from_store(&store),
            Err(GullError::Weights(WeightsError::BadMetadata { .. }))
        ));
    }

    #[test]
    fn discriminators_survive_the_store() {
        let model = GullModel::random(toy_config(ModelType::Music), 4)
            .unwrap()
            .with_random_discriminators(5);
        let store = model.to_store();
        assert!(validate_shapes(&store, &model.config).is_empty());
        let loaded = GullModel::from_store(&store).unwrap();
        assert!(loaded.discriminators.is_some());
        let mut partial = store.clone();
        partial.remove("disc.r512.block3.u");
        assert!(!validate_shapes(&partial, &model.config).missing.is_empty());
    }

    #[test]
    fn encode_decode_shapes() {
        let model = GullModel::random(toy_config(ModelType::Speech), 6).unwrap();
        let audio = tone(16_000, 0.25);
        let enc = model.encode(&audio, 3, 16_000).unwrap();
        assert_eq!(enc.header.frame_count, 25);
        assert_eq!(enc.frames[0].bands.len(), 4);
        let bytes = enc.to_bytes().unwrap();
        assert_eq!(bytes.len(), 14 + 25 * 4 * 24 / 8);
        let out = model.decode_bytes(&bytes, &DecodeOptions::full(&model.config)).unwrap();
        assert_eq!(out.sample_rate, 16_000);
        assert_eq!(out.len(), 4000);
        assert!(out.samples.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn decode_rejects_bad_requests() {
        let model = GullModel::random(toy_config(ModelType::Speech), 7).unwrap();
        let audio = tone(16_000, 0.05);
        let enc = model.encode(&audio, 1, 16_000).unwrap();
        let full = DecodeOptions::full(&model.config);
        for bad in [
            DecodeOptions { width: 0, ..full },
            DecodeOptions { width: 11, ..full },
            DecodeOptions { depth: 5, ..full },
            DecodeOptions { target_sr: Some(8_000), ..full },
            DecodeOptions { target_sr: Some(44_100), ..full },
        ] {
            assert!(model.decode(&enc.header, &enc.frames, &bad).is_err(), "{bad:?}");
        }
        assert!(model.encode(&audio, 0, 16_000).is_err());
        assert!(model.encode(&audio, 6, 16_000).is_err());
        assert!(model.encode(&tone(44_100, 0.05), 1, 44_100).is_err());
        let music = GullModel::random(toy_config(ModelType::Music), 8).unwrap();
        assert!(music.decode(&enc.header, &enc.frames, &full).is_err());
    }
}
