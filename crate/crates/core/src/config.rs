//! Model variants, subband layouts and bitrate accounting.
//!
//! Two variants exist: a 48 kHz speech model with ten subbands and a
//! 44.1 kHz music model with twenty. Frames are 20 ms windows at a 10 ms hop,
//! which puts the STFT on a 50 Hz bin grid and makes every band width an
//! integral number of bins.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("sample rate {sample_rate} Hz is not supported by the {model_type} model")]
    UnsupportedSampleRate {
        model_type: ModelType,
        sample_rate: u32,
    },

    #[error("hierarchy count {h} out of range 1..={max}")]
    HierarchyOutOfRange { h: usize, max: usize },

    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("failed to parse configuration: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelType {
    Speech,
    Music,
}

impl ModelType {
    pub fn operating_sr(self) -> u32 {
        match self {
            ModelType::Speech => 48_000,
            ModelType::Music => 44_100,
        }
    }

    pub fn supported_input_srs(self) -> &'static [u32] {
        match self {
            ModelType::Speech => &[8_000, 16_000, 24_000, 32_000, 48_000],
            ModelType::Music => &[16_000, 24_000, 32_000, 44_100],
        }
    }

    /// Nominal band widths in Hz, lowest band first.
    fn band_widths_hz(self) -> Vec<f64> {
        match self {
            ModelType::Speech => {
                let mut w = vec![2000.0; 8];
                w.extend([4000.0, 4000.0]);
                w
            }
            ModelType::Music => {
                let mut w = vec![400.0; 10];
                w.extend([1000.0; 4]);
                w.extend([2000.0; 4]);
                w.push(4000.0);
                // everything between 20 kHz and Nyquist
                w.push(22_050.0 - 20_000.0);
                w
            }
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ModelType::Speech => 0,
            ModelType::Music => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelType::Speech),
            1 => Some(ModelType::Music),
            _ => None,
        }
    }
}

impl fmt::Display for ModelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelType::Speech => f.write_str("speech"),
            ModelType::Music => f.write_str("music"),
        }
    }
}

impl std::str::FromStr for ModelType {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "speech" => Ok(ModelType::Speech),
            "music" => Ok(ModelType::Music),
            other => Err(ConfigError::Parse(format!("unknown model type `{other}`"))),
        }
    }
}

/// Partition of the one-sided STFT bins into contiguous subbands.
///
/// Band `k` owns the bins whose centre frequency lies in `(low_k, high_k]`;
/// the DC bin belongs to the first band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandLayout {
    bin_counts: Vec<usize>,
    band_edges_hz: Vec<(f64, f64)>,
}

impl BandLayout {
    pub fn from_widths_hz(bin_width_hz: f64, widths_hz: &[f64]) -> Result<Self, ConfigError> {
        if widths_hz.is_empty() {
            return Err(ConfigError::Invalid("band layout needs at least one band".into()));
        }
        // bins with centre <= f, DC excluded
        let bins_upto = |f: f64| (f / bin_width_hz + 1e-9).floor() as usize;
        let mut low = 0.0;
        let mut bin_counts = Vec::with_capacity(widths_hz.len());
        let mut band_edges_hz = Vec::with_capacity(widths_hz.len());
        for (k, &w) in widths_hz.iter().enumerate() {
            if w.is_nan() || w <= 0.0 {
                return Err(ConfigError::Invalid(format!("band {k} has width {w} Hz")));
            }
            let high = low + w;
            let mut g = bins_upto(high) - bins_upto(low);
            if k == 0 {
                g += 1;
            }
            if g == 0 {
                return Err(ConfigError::Invalid(format!("band {k} owns no bins")));
            }
            bin_counts.push(g);
            band_edges_hz.push((low, high));
            low = high;
        }
        Ok(Self {
            bin_counts,
            band_edges_hz,
        })
    }

    /// A single band spanning every bin.
    pub fn single(num_bins: usize, nyquist_hz: f64) -> Self {
        Self {
            bin_counts: vec![num_bins],
            band_edges_hz: vec![(0.0, nyquist_hz)],
        }
    }

    pub fn num_bands(&self) -> usize {
        self.bin_counts.len()
    }

    pub fn bin_counts(&self) -> &[usize] {
        &self.bin_counts
    }

    pub fn band_edges_hz(&self) -> &[(f64, f64)] {
        &self.band_edges_hz
    }

    pub fn num_bins(&self) -> usize {
        self.bin_counts.iter().sum()
    }

    /// First bin of each band.
    pub fn offsets(&self) -> Vec<usize> {
        self.bin_counts
            .iter()
            .scan(0, |acc, &g| {
                let start = *acc;
                *acc += g;
                Some(start)
            })
            .collect()
    }
}

/// Every architecture hyperparameter of a model variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub model_type: ModelType,
    pub operating_sr: u32,
    pub band_layout: BandLayout,
    pub window_ms: u32,
    pub hop_ms: u32,
    pub embed_dim: usize,
    pub num_encoder_layers: usize,
    pub num_decoder_layers: usize,
    pub rnn_hidden: usize,
    pub elastic_width: usize,
    pub elastic_aux_dim: usize,
    pub tac_hidden: usize,
    pub num_hierarchies: usize,
    pub bits_per_hierarchy: Vec<u32>,
    pub supported_input_srs: Vec<u32>,
    pub rmvn_eps: f64,
    pub ema_decay: f64,
    pub ema_eps: f64,
}

pub const FIRST_HIERARCHY_BITS: u32 = 12;
pub const ROTATION_BITS: u32 = 6;
pub const MAX_HIERARCHIES: usize = 5;

impl ModelConfig {
    pub fn build(model_type: ModelType) -> Self {
        let operating_sr = model_type.operating_sr();
        let window_ms = 20;
        let bin_width = 1000.0 / window_ms as f64;
        let band_layout = BandLayout::from_widths_hz(bin_width, &model_type.band_widths_hz())
            .expect("built-in band layouts are valid");
        let num_hierarchies = MAX_HIERARCHIES;
        Self {
            model_type,
            operating_sr,
            band_layout,
            window_ms,
            hop_ms: 10,
            embed_dim: 64,
            num_encoder_layers: 4,
            num_decoder_layers: 4,
            rnn_hidden: 128,
            elastic_width: 10,
            elastic_aux_dim: 16,
            tac_hidden: 16,
            num_hierarchies,
            bits_per_hierarchy: standard_bits(num_hierarchies),
            supported_input_srs: model_type.supported_input_srs().to_vec(),
            rmvn_eps: 1e-5,
            ema_decay: 0.99,
            ema_eps: 1e-5,
        }
    }

    pub fn speech() -> Self {
        Self::build(ModelType::Speech)
    }

    pub fn music() -> Self {
        Self::build(ModelType::Music)
    }

    pub fn window_len(&self) -> usize {
        (self.operating_sr as usize * self.window_ms as usize) / 1000
    }

    pub fn hop_len(&self) -> usize {
        (self.operating_sr as usize * self.hop_ms as usize) / 1000
    }

    pub fn num_bins(&self) -> usize {
        self.window_len() / 2 + 1
    }

    pub fn num_bands(&self) -> usize {
        self.band_layout.num_bands()
    }

    pub fn frame_rate(&self) -> u32 {
        1000 / self.hop_ms
    }

    pub fn codebook_size(&self) -> usize {
        1 << self.bits_per_hierarchy[0]
    }

    pub fn rotations_per_hierarchy(&self) -> usize {
        1 << self.bits_per_hierarchy.get(1).copied().unwrap_or(ROTATION_BITS)
    }

    /// Number of subbands lying entirely below the Nyquist frequency of `input_sr`.
    pub fn valid_subbands(&self, input_sr: u32) -> Result<usize, ConfigError> {
        if !self.supported_input_srs.contains(&input_sr) || input_sr > self.operating_sr {
            return Err(ConfigError::UnsupportedSampleRate {
                model_type: self.model_type,
                sample_rate: input_sr,
            });
        }
        let nyquist = input_sr as f64 / 2.0;
        let k = self
            .band_layout
            .band_edges_hz()
            .iter()
            .take_while(|(_, high)| *high <= nyquist + 1e-6)
            .count();
        Ok(k.max(1))
    }

    pub fn bits_per_frame_band(&self, h: usize) -> Result<u32, ConfigError> {
        if h == 0 || h > self.num_hierarchies {
            return Err(ConfigError::HierarchyOutOfRange {
                h,
                max: self.num_hierarchies,
            });
        }
        Ok(self.bits_per_hierarchy[..h].iter().sum())
    }

    /// Payload bitrate in bits per second, header excluded.
    pub fn bitrate_bps(&self, input_sr: u32, h: usize) -> Result<u64, ConfigError> {
        let bits = self.bits_per_frame_band(h)? as u64;
        let k_hat = self.valid_subbands(input_sr)? as u64;
        Ok(k_hat * self.frame_rate() as u64 * bits)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.operating_sr != self.model_type.operating_sr() {
            return invalid(format!(
                "{} model operates at {} Hz, got {}",
                self.model_type,
                self.model_type.operating_sr(),
                self.operating_sr
            ));
        }
        if self.window_ms != 20 || self.hop_ms != 10 {
            return invalid("window/hop must be 20 ms / 10 ms".into());
        }
        if self.band_layout.num_bins() != self.num_bins() {
            return invalid(format!(
                "band layout covers {} bins, spectrogram has {}",
                self.band_layout.num_bins(),
                self.num_bins()
            ));
        }
        let span: f64 = self.band_layout.band_edges_hz().iter().map(|(l, h)| h - l).sum();
        if (span - self.operating_sr as f64 / 2.0).abs() > 1e-6 {
            return invalid(format!("band widths sum to {span} Hz"));
        }
        if self.num_hierarchies == 0 || self.num_hierarchies > MAX_HIERARCHIES {
            return invalid(format!("num_hierarchies = {}", self.num_hierarchies));
        }
        if self.bits_per_hierarchy != standard_bits(self.num_hierarchies) {
            return invalid(format!(
                "bits_per_hierarchy must be {:?}",
                standard_bits(self.num_hierarchies)
            ));
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("num_encoder_layers", self.num_encoder_layers),
            ("num_decoder_layers", self.num_decoder_layers),
            ("rnn_hidden", self.rnn_hidden),
            ("elastic_width", self.elastic_width),
            ("elastic_aux_dim", self.elastic_aux_dim),
            ("tac_hidden", self.tac_hidden),
        ] {
            if v == 0 {
                return invalid(format!("{name} must be positive"));
            }
        }
        if [self.rmvn_eps, self.ema_eps].iter().any(|e| e.is_nan() || *e <= 0.0) {
            return invalid("epsilons must be positive".into());
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return invalid(format!("ema_decay {} outside (0, 1)", self.ema_decay));
        }
        let supported = self.model_type.supported_input_srs();
        if self.supported_input_srs.is_empty()
            || self.supported_input_srs.iter().any(|sr| !supported.contains(sr))
        {
            return invalid(format!("supported_input_srs must be drawn from {supported:?}"));
        }
        Ok(())
    }

    /// Parses the key-value (TOML) form. Unlisted keys keep the variant default.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut cfg = Self::build(file.model_type);
        macro_rules! apply {
            ($($field:ident),*) => { $(if let Some(v) = file.$field { cfg.$field = v; })* };
        }
        apply!(
            embed_dim,
            num_encoder_layers,
            num_decoder_layers,
            rnn_hidden,
            elastic_width,
            elastic_aux_dim,
            tac_hidden,
            num_hierarchies,
            rmvn_eps,
            ema_decay,
            ema_eps,
            supported_input_srs
        );
        if let Some(v) = file.operating_sr {
            cfg.operating_sr = v;
        }
        if let Some(v) = file.window_ms {
            cfg.window_ms = v;
        }
        if let Some(v) = file.hop_ms {
            cfg.hop_ms = v;
        }
        cfg.bits_per_hierarchy = file
            .bits_per_hierarchy
            .unwrap_or_else(|| standard_bits(cfg.num_hierarchies));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical key-value form; `from_toml_str(to_toml_string())` is the identity.
    pub fn to_toml_string(&self) -> String {
        let file = ConfigFile {
            model_type: self.model_type,
            operating_sr: Some(self.operating_sr),
            window_ms: Some(self.window_ms),
            hop_ms: Some(self.hop_ms),
            embed_dim: Some(self.embed_dim),
            num_encoder_layers: Some(self.num_encoder_layers),
            num_decoder_layers: Some(self.num_decoder_layers),
            rnn_hidden: Some(self.rnn_hidden),
            elastic_width: Some(self.elastic_width),
            elastic_aux_dim: Some(self.elastic_aux_dim),
            tac_hidden: Some(self.tac_hidden),
            num_hierarchies: Some(self.num_hierarchies),
            bits_per_hierarchy: Some(self.bits_per_hierarchy.clone()),
            supported_input_srs: Some(self.supported_input_srs.clone()),
            rmvn_eps: Some(self.rmvn_eps),
            ema_decay: Some(self.ema_decay),
            ema_eps: Some(self.ema_eps),
        };
        toml::to_string(&file).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical key-value form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn standard_bits(h: usize) -> Vec<u32> {
    let mut bits = vec![ROTATION_BITS; h];
    if let Some(first) = bits.first_mut() {
        *first = FIRST_HIERARCHY_BITS;
    }
    bits
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    model_type: ModelType,
    operating_sr: Option<u32>,
    window_ms: Option<u32>,
    hop_ms: Option<u32>,
    embed_dim: Option<usize>,
    num_encoder_layers: Option<usize>,
    num_decoder_layers: Option<usize>,
    rnn_hidden: Option<usize>,
    elastic_width: Option<usize>,
    elastic_aux_dim: Option<usize>,
    tac_hidden: Option<usize>,
    num_hierarchies: Option<usize>,
    bits_per_hierarchy: Option<Vec<u32>>,
    supported_input_srs: Option<Vec<u32>>,
    rmvn_eps: Option<f64>,
    ema_decay: Option<f64>,
    ema_eps: Option<f64>,
}
