//! `.gull` stream format.
//!
//! ```text
//! offset size  field
//! 0      4     magic "GULL"
//! 4      1     version (1)
//! 5      1     model type (0 speech, 1 music)
//! 6      1     input sample-rate code
//! 7      1     target sample-rate code
//! 8      1     hierarchies h (1..=5)
//! 9      4     frame count, u32 little-endian
//! 13     1     reserved (0)
//! 14     ...   payload
//! ```
//!
//! Sample-rate codes: 0 = 8 kHz, 1 = 16 kHz, 2 = 24 kHz, 3 = 32 kHz,
//! 4 = 44.1 kHz, 5 = 48 kHz.
//!
//! The payload packs, MSB first, for every frame and every valid subband the
//! 12-bit codebook index followed by `h - 1` 6-bit rotation indices. The last
//! byte is zero-padded. No entropy coding is applied.

use thiserror::Error;

use crate::config::{ModelConfig, ModelType, FIRST_HIERARCHY_BITS, MAX_HIERARCHIES, ROTATION_BITS};

pub const MAGIC: [u8; 4] = *b"GULL";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;

const SAMPLE_RATES: [u32; 6] = [8_000, 16_000, 24_000, 32_000, 44_100, 48_000];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitstreamError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported stream version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown model type code {0}")]
    InvalidModelType(u8),
    #[error("invalid sample-rate code {0}")]
    InvalidSampleRateCode(u8),
    #[error("{model_type} streams cannot use {sample_rate} Hz")]
    SampleRateNotSupported { model_type: ModelType, sample_rate: u32 },
    #[error("target rate {target} Hz is below input rate {input} Hz")]
    TargetBelowInput { input: u32, target: u32 },
    #[error("hierarchy count {0} outside 1..=5")]
    HierarchyOutOfRange(u8),
    #[error("stream truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-zero padding bits in final payload byte")]
    NonZeroPadding,
    #[error("header announces {header} frames, {actual} given")]
    FrameCountMismatch { header: u32, actual: usize },
    #[error("frame {frame}: {detail}")]
    InvalidFrame { frame: usize, detail: String },
}

pub fn sample_rate_code(sample_rate: u32) -> Option<u8> {
    SAMPLE_RATES.iter().position(|&sr| sr == sample_rate).map(|i| i as u8)
}

pub fn sample_rate_from_code(code: u8) -> Option<u32> {
    SAMPLE_RATES.get(code as usize).copied()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub model_type: ModelType,
    pub input_sr: u32,
    pub target_sr: u32,
    pub num_hierarchies: u8,
    pub frame_count: u32,
}

impl StreamHeader {
    pub fn validate(&self) -> Result<(), BitstreamError> {
        let supported = self.model_type.supported_input_srs();
        for sr in [self.input_sr, self.target_sr] {
            if sample_rate_code(sr).is_none() || !supported.contains(&sr) {
                return Err(BitstreamError::SampleRateNotSupported {
                    model_type: self.model_type,
                    sample_rate: sr,
                });
            }
        }
        if self.target_sr < self.input_sr {
            return Err(BitstreamError::TargetBelowInput {
                input: self.input_sr,
                target: self.target_sr,
            });
        }
        if self.num_hierarchies == 0 || self.num_hierarchies as usize > MAX_HIERARCHIES {
            return Err(BitstreamError::HierarchyOutOfRange(self.num_hierarchies));
        }
        Ok(())
    }

    /// Valid subbands `K̂` implied by the input rate.
    pub fn valid_subbands(&self) -> usize {
        ModelConfig::build(self.model_type)
            .valid_subbands(self.input_sr)
            .expect("validated header")
    }

    pub fn target_subbands(&self) -> usize {
        ModelConfig::build(self.model_type)
            .valid_subbands(self.target_sr)
            .expect("validated header")
    }

    pub fn bits_per_band(&self) -> usize {
        FIRST_HIERARCHY_BITS as usize + ROTATION_BITS as usize * (self.num_hierarchies as usize - 1)
    }

    pub fn payload_bits(&self) -> usize {
        self.frame_count as usize * self.valid_subbands() * self.bits_per_band()
    }

    pub fn payload_bytes(&self) -> usize {
        self.payload_bits().div_ceil(8)
    }

    pub fn duration_secs(&self) -> f64 {
        self.frame_count as f64 / 100.0
    }

    /// Payload bits per second of audio.
    pub fn bitrate_bps(&self) -> u64 {
        (self.valid_subbands() * self.bits_per_band() * 100) as u64
    }

    fn to_bytes(self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(&MAGIC);
        out[4] = VERSION;
        out[5] = self.model_type.code();
        out[6] = sample_rate_code(self.input_sr).expect("validated");
        out[7] = sample_rate_code(self.target_sr).expect("validated");
        out[8] = self.num_hierarchies;
        out[9..13].copy_from_slice(&self.frame_count.to_le_bytes());
        out[13] = 0;
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, BitstreamError> {
        if bytes.len() < HEADER_LEN {
            return Err(BitstreamError::Truncated {
                needed: HEADER_LEN,
                available: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(BitstreamError::BadMagic(magic));
        }
        if bytes[4] != VERSION {
            return Err(BitstreamError::UnsupportedVersion(bytes[4]));
        }
        let model_type =
            ModelType::from_code(bytes[5]).ok_or(BitstreamError::InvalidModelType(bytes[5]))?;
        let input_sr =
            sample_rate_from_code(bytes[6]).ok_or(BitstreamError::InvalidSampleRateCode(bytes[6]))?;
        let target_sr =
            sample_rate_from_code(bytes[7]).ok_or(BitstreamError::InvalidSampleRateCode(bytes[7]))?;
        let header = Self {
            model_type,
            input_sr,
            target_sr,
            num_hierarchies: bytes[8],
            frame_count: u32::from_le_bytes(bytes[9..13].try_into().unwrap()),
        };
        header.validate()?;
        Ok(header)
    }
}

/// Indices for one subband at one frame: codebook index plus one rotation per extra hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubbandCode {
    pub first: u16,
    pub rotations: Vec<u8>,
}

impl SubbandCode {
    pub fn hierarchies(&self) -> usize {
        1 + self.rotations.len()
    }
}

/// Codes of every valid subband for one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameCodes {
    pub bands: Vec<SubbandCode>,
}

struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    filled: u32,
}

impl BitWriter {
    fn new(capacity: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(capacity),
            acc: 0,
            filled: 0,
        }
    }

    fn put(&mut self, value: u32, bits: u32) {
        self.acc = (self.acc << bits) | (value as u64 & ((1 << bits) - 1));
        self.filled += bits;
        while self.filled >= 8 {
            self.filled -= 8;
            self.bytes.push((self.acc >> self.filled) as u8);
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.bytes.push((self.acc << (8 - self.filled)) as u8);
        }
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    acc: u64,
    filled: u32,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self {
            bytes,
            pos: 0,
            acc: 0,
            filled: 0,
        }
    }

    /// Caller guarantees enough input remains.
    fn get(&mut self, bits: u32) -> u32 {
        while self.filled < bits {
            self.acc = (self.acc << 8) | self.bytes[self.pos] as u64;
            self.pos += 1;
            self.filled += 8;
        }
        self.filled -= bits;
        ((self.acc >> self.filled) & ((1 << bits) - 1)) as u32
    }

    fn remaining_bits_value(&self) -> u64 {
        self.acc & ((1u64 << self.filled) - 1)
    }
}

pub fn serialize(header: &StreamHeader, frames: &[FrameCodes]) -> Result<Vec<u8>, BitstreamError> {
    header.validate()?;
    if frames.len() != header.frame_count as usize {
        return Err(BitstreamError::FrameCountMismatch {
            header: header.frame_count,
            actual: frames.len(),
        });
    }
    let k_hat = header.valid_subbands();
    let rotations = header.num_hierarchies as usize - 1;
    let mut writer = BitWriter::new(HEADER_LEN + header.payload_bytes());
    writer.bytes.extend_from_slice(&header.to_bytes());
    for (t, frame) in frames.iter().enumerate() {
        if frame.bands.len() != k_hat {
            return Err(BitstreamError::InvalidFrame {
                frame: t,
                detail: format!("{} subbands, expected {k_hat}", frame.bands.len()),
            });
        }
        for code in &frame.bands {
            if code.rotations.len() != rotations
                || code.first as u32 >= 1 << FIRST_HIERARCHY_BITS
                || code.rotations.iter().any(|&r| r as u32 >= 1 << ROTATION_BITS)
            {
                return Err(BitstreamError::InvalidFrame {
                    frame: t,
                    detail: format!("invalid code {code:?} for h = {}", header.num_hierarchies),
                });
            }
            writer.put(code.first as u32, FIRST_HIERARCHY_BITS);
            for &r in &code.rotations {
                writer.put(r as u32, ROTATION_BITS);
            }
        }
    }
    Ok(writer.finish())
}

pub fn deserialize(bytes: &[u8]) -> Result<(StreamHeader, Vec<FrameCodes>), BitstreamError> {
    let header = StreamHeader::from_bytes(bytes)?;
    let payload = &bytes[HEADER_LEN..];
    let needed = header.payload_bytes();
    if payload.len() < needed {
        return Err(BitstreamError::Truncated {
            needed: HEADER_LEN + needed,
            available: bytes.len(),
        });
    }
    if payload.len() > needed {
        return Err(BitstreamError::TrailingBytes(payload.len() - needed));
    }
    let k_hat = header.valid_subbands();
    let rotations = header.num_hierarchies as usize - 1;
    let mut reader = BitReader::new(payload);
    let frames = (0..header.frame_count)
        .map(|_| FrameCodes {
            bands: (0..k_hat)
                .map(|_| SubbandCode {
                    first: reader.get(FIRST_HIERARCHY_BITS) as u16,
                    rotations: (0..rotations).map(|_| reader.get(ROTATION_BITS) as u8).collect(),
                })
                .collect(),
        })
        .collect();
    if reader.remaining_bits_value() != 0 {
        return Err(BitstreamError::NonZeroPadding);
    }
    Ok((header, frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_stream(rng: &mut ChaCha8Rng) -> (StreamHeader, Vec<FrameCodes>) {
        let model_type = if rng.random() { ModelType::Speech } else { ModelType::Music };
        let srs = model_type.supported_input_srs();
        let i = rng.random_range(0..srs.len());
        let j = rng.random_range(i..srs.len());
        let header = StreamHeader {
            model_type,
            input_sr: srs[i],
            target_sr: srs[j],
            num_hierarchies: rng.random_range(1..=5),
            frame_count: rng.random_range(0..20),
        };
        let k_hat = header.valid_subbands();
        let frames = (0..header.frame_count)
            .map(|_| FrameCodes {
                bands: (0..k_hat)
                    .map(|_| SubbandCode {
                        first: rng.random_range(0..4096),
                        rotations: (1..header.num_hierarchies)
                            .map(|_| rng.random_range(0..64))
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        (header, frames)
    }

    fn speech16(h: u8, frames: u32) -> StreamHeader {
        StreamHeader {
            model_type: ModelType::Speech,
            input_sr: 16_000,
            target_sr: 48_000,
            num_hierarchies: h,
            frame_count: frames,
        }
    }

    #[test]
    fn empty_stream_is_header_only() {
        let bytes = serialize(&speech16(3, 0), &[]).unwrap();
        assert_eq!(bytes.len(), 14);
        assert_eq!(&bytes[..4], b"GULL");
        let (h, f) = deserialize(&bytes).unwrap();
        assert_eq!(h, speech16(3, 0));
        assert!(f.is_empty());
    }

    #[test]
    fn one_second_payload_size() {
        let header = speech16(3, 100);
        let frame = FrameCodes {
            bands: vec![
                SubbandCode {
                    first: 4095,
                    rotations: vec![63, 0]
                };
                4
            ],
        };
        let bytes = serialize(&header, &vec![frame; 100]).unwrap();
        assert_eq!(bytes.len() - HEADER_LEN, 1200);
        assert_eq!(header.bitrate_bps(), 9_600);
        assert_eq!(
            header.bitrate_bps(),
            ModelConfig::speech().bitrate_bps(16_000, 3).unwrap()
        );
    }

    #[test]
    fn msb_first_packing() {
        let header = StreamHeader {
            model_type: ModelType::Speech,
            input_sr: 8_000,
            target_sr: 8_000,
            num_hierarchies: 2,
            frame_count: 1,
        };
        let frames = vec![FrameCodes {
            bands: vec![
                SubbandCode { first: 0xABC, rotations: vec![0b101010] },
                SubbandCode { first: 0x001, rotations: vec![0b111111] },
            ],
        }];
        let bytes = serialize(&header, &frames).unwrap();
        // 1010_1011_1100 101010 | 0000_0000_0001 111111
        assert_eq!(&bytes[HEADER_LEN..], &[0xAB, 0xCA, 0x80, 0x07, 0xF0]);
    }

    #[test]
    fn round_trip_random_streams() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (header, frames) = random_stream(&mut rng);
            let bytes = serialize(&header, &frames).unwrap();
            assert_eq!(bytes.len(), HEADER_LEN + header.payload_bytes());
            assert_eq!(deserialize(&bytes).unwrap(), (header, frames));
        }
    }

    #[test]
    fn typed_errors() {
        let good = serialize(&speech16(2, 3), &vec![
            FrameCodes { bands: vec![SubbandCode { first: 1, rotations: vec![2] }; 4] };
            3
        ])
        .unwrap();

        let mut bad = good.clone();
        bad[0] ^= 0xFF;
        assert!(matches!(deserialize(&bad), Err(BitstreamError::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(deserialize(&bad), Err(BitstreamError::UnsupportedVersion(2)));

        let mut bad = good.clone();
        bad[6] = 9;
        assert_eq!(deserialize(&bad), Err(BitstreamError::InvalidSampleRateCode(9)));

        let mut bad = good.clone();
        bad[6] = 4; // 44.1 kHz is not a speech rate
        assert!(matches!(deserialize(&bad), Err(BitstreamError::SampleRateNotSupported { .. })));

        let mut bad = good.clone();
        bad[8] = 6;
        assert_eq!(deserialize(&bad), Err(BitstreamError::HierarchyOutOfRange(6)));

        assert!(matches!(
            deserialize(&good[..good.len() - 1]),
            Err(BitstreamError::Truncated { .. })
        ));
        assert!(matches!(deserialize(&good[..5]), Err(BitstreamError::Truncated { .. })));

        let mut bad = good.clone();
        bad.push(0);
        assert_eq!(deserialize(&bad), Err(BitstreamError::TrailingBytes(1)));

        // 8 kHz: 2 bands x 18 bits leaves 4 padding bits
        let header = StreamHeader { input_sr: 8_000, ..speech16(2, 1) };
        let one = serialize(&header, &[FrameCodes {
            bands: vec![SubbandCode { first: 1, rotations: vec![2] }; 2],
        }])
        .unwrap();
        let mut bad = one.clone();
        *bad.last_mut().unwrap() |= 1;
        assert_eq!(deserialize(&bad), Err(BitstreamError::NonZeroPadding));
    }

    #[test]
    fn serialize_rejects_inconsistent_frames() {
        assert!(matches!(
            serialize(&speech16(1, 2), &[]),
            Err(BitstreamError::FrameCountMismatch { .. })
        ));
        let frame = FrameCodes { bands: vec![SubbandCode { first: 0, rotations: vec![] }; 3] };
        assert!(serialize(&speech16(1, 1), &[frame]).is_err());
        let frame = FrameCodes { bands: vec![SubbandCode { first: 4096, rotations: vec![] }; 4] };
        assert!(serialize(&speech16(1, 1), &[frame]).is_err());
    }
}
