use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gull_core::bitstream::deserialize;
use gull_core::dsp::resample;
use gull_core::{toy_config, AudioBuffer, DecodeOptions, GullModel, ModelConfig, ModelType};

use crate::error::{CliError, CliResult, ErrorKind};
use crate::io::{ensure_exists, read_bytes, read_wav, write_bytes, write_wav};
use crate::metrics::evaluate;

#[derive(Debug, Parser)]
#[command(name = "gull", version, about = "Scalable subband neural audio codec")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a WAV file into a .gull stream.
    Encode(EncodeArgs),
    /// Decode a .gull stream into a WAV file.
    Decode(DecodeArgs),
    /// Print the header of a .gull stream.
    Inspect {
        input: PathBuf,
    },
    /// Compare a decoded WAV against its reference.
    Eval {
        reference: PathBuf,
        decoded: PathBuf,
    },
    /// Write randomly initialized weights.
    GenWeights(GenWeightsArgs),
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(short, long)]
    pub weights: PathBuf,
    /// Number of quantizer hierarchies.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5), conflicts_with = "bitrate")]
    pub hierarchies: Option<u8>,
    /// Payload bitrate in bits per second, or kbps with a `k` suffix.
    #[arg(long, value_parser = parse_bitrate)]
    pub bitrate: Option<u64>,
    /// Rate the decoder should produce; defaults to the input rate.
    #[arg(long)]
    pub target_sr: Option<u32>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(short, long)]
    pub weights: PathBuf,
    /// Elastic decoder width; defaults to the full width.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=10))]
    pub width: Option<u8>,
    /// Decoder blocks to run; defaults to all of them.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub depth: Option<u8>,
    /// Output rate; must not be below the stream's input rate.
    #[arg(long)]
    pub target_sr: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelSize {
    Toy,
    Full,
}

#[derive(Debug, Args)]
pub struct GenWeightsArgs {
    pub output: PathBuf,
    #[arg(long, default_value = "speech")]
    pub model: ModelType,
    #[arg(long, value_enum, default_value = "toy")]
    pub size: ModelSize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Include discriminator weights.
    #[arg(long)]
    pub discriminators: bool,
}

fn parse_bitrate(s: &str) -> Result<u64, String> {
    let (number, scale) = match s.strip_suffix(['k', 'K']) {
        Some(n) => (n, 1000.0),
        None => (s, 1.0),
    };
    let value: f64 = number.parse().map_err(|_| format!("`{s}` is not a bitrate"))?;
    if !(value.is_finite() && value > 0.0) {
        return Err(format!("`{s}` is not a positive bitrate"));
    }
    Ok((value * scale).round() as u64)
}

fn load_model(path: &std::path::Path) -> CliResult<GullModel> {
    ensure_exists(path)?;
    GullModel::load(path).map_err(|e| CliError::from(e).context(format!("loading weights {}", path.display())))
}

fn other(model_type: ModelType) -> ModelType {
    match model_type {
        ModelType::Speech => ModelType::Music,
        ModelType::Music => ModelType::Speech,
    }
}

/// Rejects rates the loaded model cannot take, naming the other model when it could.
fn check_rate(model_type: ModelType, sample_rate: u32, what: &str) -> CliResult<()> {
    if model_type.supported_input_srs().contains(&sample_rate) {
        return Ok(());
    }
    let alt = other(model_type);
    if alt.supported_input_srs().contains(&sample_rate) {
        return Err(CliError::msg(
            ErrorKind::ModelMismatch,
            format!("{what} of {sample_rate} Hz needs {alt} weights, but {model_type} weights were given"),
        ));
    }
    Err(CliError::msg(
        ErrorKind::Audio,
        format!(
            "{what} of {sample_rate} Hz is not supported; {model_type} weights accept {:?}",
            model_type.supported_input_srs()
        ),
    ))
}

fn hierarchies_for(cfg: &ModelConfig, sr: u32, args: &EncodeArgs) -> CliResult<usize> {
    match (args.hierarchies, args.bitrate) {
        (Some(h), _) => Ok(h as usize),
        (None, None) => Ok(cfg.num_hierarchies),
        (None, Some(bps)) => {
            let options: Vec<u64> = (1..=cfg.num_hierarchies)
                .map(|h| cfg.bitrate_bps(sr, h))
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::from(gull_core::GullError::from(e)))?;
            options.iter().position(|&b| b == bps).map(|i| i + 1).ok_or_else(|| {
                CliError::msg(
                    ErrorKind::Usage,
                    format!("{bps} bps is not available at {sr} Hz; choose one of {options:?}"),
                )
            })
        }
    }
}

pub fn run(cli: Cli, out: &mut impl Write) -> CliResult<()> {
    match cli.command {
        Command::Encode(args) => encode(&args, out),
        Command::Decode(args) => decode(&args, out),
        Command::Inspect { input } => inspect(&input, out),
        Command::Eval { reference, decoded } => eval(&reference, &decoded, out),
        Command::GenWeights(args) => gen_weights(&args, out),
    }
}

fn encode(args: &EncodeArgs, out: &mut impl Write) -> CliResult<()> {
    let model = load_model(&args.weights)?;
    let audio = read_wav(&args.input)?;
    let model_type = model.model_type();
    check_rate(model_type, audio.sample_rate, "input rate")?;
    let target = args.target_sr.unwrap_or(audio.sample_rate);
    check_rate(model_type, target, "target rate")?;
    let h = hierarchies_for(&model.config, audio.sample_rate, args)?;
    let encoded = model.encode(&audio, h, target)?;
    let bytes = encoded.to_bytes()?;
    write_bytes(&args.output, &bytes)?;
    let header = encoded.header;
    writeln!(
        out,
        "encoded {:.3} s at {} Hz with h={}: {} frames, {} bytes, payload bitrate {} bps ({:.1} kbps)",
        audio.duration_secs(),
        audio.sample_rate,
        h,
        header.frame_count,
        bytes.len(),
        header.bitrate_bps(),
        header.bitrate_bps() as f64 / 1000.0
    )?;
    Ok(())
}

fn decode(args: &DecodeArgs, out: &mut impl Write) -> CliResult<()> {
    let model = load_model(&args.weights)?;
    let bytes = read_bytes(&args.input)?;
    let (header, frames) = deserialize(&bytes).map_err(|e| CliError::new(ErrorKind::Stream, e))?;
    if header.model_type != model.model_type() {
        return Err(CliError::msg(
            ErrorKind::ModelMismatch,
            format!("{} stream given to {} weights", header.model_type, model.model_type()),
        ));
    }
    if let Some(sr) = args.target_sr {
        check_rate(header.model_type, sr, "target rate")?;
        if sr < header.input_sr {
            return Err(CliError::msg(
                ErrorKind::Usage,
                format!("target rate {sr} Hz is below the stream's input rate {} Hz", header.input_sr),
            ));
        }
    }
    let full = DecodeOptions::full(&model.config);
    let opts = DecodeOptions {
        width: args.width.map_or(full.width, usize::from),
        depth: args.depth.map_or(full.depth, usize::from),
        target_sr: args.target_sr,
    };
    let audio = model.decode(&header, &frames, &opts)?;
    write_wav(&args.output, &audio)?;
    writeln!(
        out,
        "decoded {} frames to {} samples at {} Hz (width {}, depth {})",
        header.frame_count,
        audio.len(),
        audio.sample_rate,
        opts.width,
        opts.depth
    )?;
    Ok(())
}

fn inspect(input: &std::path::Path, out: &mut impl Write) -> CliResult<()> {
    let bytes = read_bytes(input)?;
    let (header, _) = deserialize(&bytes).map_err(|e| CliError::new(ErrorKind::Stream, e))?;
    writeln!(out, "model type:     {}", header.model_type)?;
    writeln!(out, "input rate:     {} Hz", header.input_sr)?;
    writeln!(out, "target rate:    {} Hz", header.target_sr)?;
    writeln!(out, "hierarchies:    {}", header.num_hierarchies)?;
    writeln!(out, "subbands:       {} coded, {} decoded", header.valid_subbands(), header.target_subbands())?;
    writeln!(out, "frames:         {}", header.frame_count)?;
    writeln!(out, "duration:       {:.2} s", header.duration_secs())?;
    writeln!(out, "bitrate:        {} bps", header.bitrate_bps())?;
    writeln!(out, "size:           {} bytes", bytes.len())?;
    Ok(())
}

fn eval(reference: &std::path::Path, decoded: &std::path::Path, out: &mut impl Write) -> CliResult<()> {
    let x = read_wav(reference)?;
    let s = read_wav(decoded)?;
    let s = if s.sample_rate == x.sample_rate {
        s
    } else {
        resample(&s, x.sample_rate)
    };
    eval_buffers(&x, &s, out)
}

fn eval_buffers(x: &AudioBuffer, s: &AudioBuffer, out: &mut impl Write) -> CliResult<()> {
    // one 20 ms analysis window either way
    let max_lag = (x.sample_rate / 50) as usize;
    let report = evaluate(&x.samples, &s.samples, x.sample_rate, max_lag)?;
    writeln!(out, "lag:     {} samples", report.lag)?;
    writeln!(out, "snr:     {:.2} dB", report.snr_db)?;
    match &report.distances {
        Some(distances) => {
            for d in distances {
                writeln!(out, "window {:>4}: magnitude {:.6} mel {:.6}", d.window, d.magnitude, d.mel)?;
            }
            let total: f64 = distances.iter().map(|d| d.magnitude + d.mel).sum();
            writeln!(out, "spectral distance: {total:.6}")?;
        }
        None => writeln!(out, "spectral distance: undefined for a silent reference")?,
    }
    Ok(())
}

fn gen_weights(args: &GenWeightsArgs, out: &mut impl Write) -> CliResult<()> {
    let config = match args.size {
        ModelSize::Toy => toy_config(args.model),
        ModelSize::Full => ModelConfig::build(args.model),
    };
    let mut model = GullModel::random(config, args.seed)?;
    if args.discriminators {
        model = model.with_random_discriminators(args.seed.wrapping_add(1));
    }
    let bytes = model.to_store().to_bytes();
    write_bytes(&args.output, &bytes)?;
    writeln!(
        out,
        "wrote {} {:?} weights ({} bytes, seed {})",
        args.model,
        args.size,
        bytes.len(),
        args.seed
    )?;
    Ok(())
}
