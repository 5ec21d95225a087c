use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use gull_core::AudioBuffer;
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult, ErrorKind};

/// Writes through a temporary file in the destination directory, so a failed
/// command never leaves a partial output behind.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut File) -> CliResult<()>) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::from(e).context(format!("creating {}", path.display())))?;
    write(tmp.as_file_mut())?;
    tmp.as_file_mut().sync_all()?;
    tmp.persist(path)
        .map_err(|e| CliError::from(e.error).context(format!("writing {}", path.display())))?;
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_atomic(path, |f| Ok(f.write_all(bytes)?))
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::from(e).context(format!("reading {}", path.display())))
}

/// Reads any PCM or float WAV; multichannel input is averaged to mono.
pub fn read_wav(path: &Path) -> CliResult<AudioBuffer> {
    let reader = hound::WavReader::open(path).map_err(|e| CliError::from(e).context(format!("reading {}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()?
        }
    };
    let samples = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioBuffer::new(samples, spec.sample_rate)
        .map_err(|e| CliError::from(e).context(format!("reading {}", path.display())))
}

/// Mono 32-bit float WAV.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> CliResult<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    write_atomic(path, |file| {
        let mut writer = hound::WavWriter::new(BufWriter::new(file), spec)?;
        for &s in &audio.samples {
            writer.write_sample(s as f32)?;
        }
        writer.finalize()?;
        Ok(())
    })
}

pub fn ensure_exists(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::msg(ErrorKind::Io, format!("{} does not exist", path.display())))
    }
}
