//! `nbtf`: synthesize, train, propagate, render and evaluate neural BTFs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nbtf::btf::synth::Preset;
use nbtf::btf::{Direction, Precision};
use nbtf::{Error, TensorError};

#[derive(Parser, Debug)]
#[command(name = "nbtf", version, about = "Neural bidirectional texture functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic BTF from a preset SVBRDF.
    Synth(SynthArgs),
    /// Train autoencoder and renderer on a BTF.
    Train(TrainArgs),
    /// Encode a guidance image into a neural BTF bundle.
    Propagate(PropagateArgs),
    /// Render slices of a neural BTF bundle.
    Render(RenderArgs),
    /// Score a checkpoint against a BTF and report the PCA baseline.
    Eval(EvalArgs),
    /// Write one grayscale PNG per latent channel.
    Latents(LatentsArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Lambertian,
    GgxTextured,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Lambertian => Preset::Lambertian,
            PresetArg::GgxTextured => Preset::GgxTextured,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Angles {
    /// Every direction pair of the preset.
    Preset,
    /// The preset without its held-out pairs.
    Train,
    /// Only the held-out pairs.
    HeldOut,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecisionArg {
    F16,
    F32,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F16 => Precision::F16,
            PrecisionArg::F32 => Precision::F32,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    preset: PresetArg,
    /// Texels per side.
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, value_enum, default_value = "preset")]
    angles: Angles,
    #[arg(long, value_enum, default_value = "f32")]
    precision: PrecisionArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML run configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Single-threaded numerics and zero wall times, for byte-identical outputs.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    steps: Option<u64>,
    /// Overrides `dataset`.
    #[arg(long)]
    btf: Option<PathBuf>,
    /// Overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print a progress line every N steps; 0 disables it.
    #[arg(long, default_value_t = 100)]
    log_every: u64,
}

#[derive(Args, Debug)]
struct PropagateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// PNG (sRGB) or PFM (linear) image, or an NBTF whose near-normal slice is used.
    #[arg(long)]
    guidance: PathBuf,
    /// Downsampling factor in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    scale: f32,
    /// Declare the guidance cyclic and report the seam metric.
    #[arg(long)]
    tileable: bool,
    #[arg(long, value_enum, default_value = "f32")]
    precision: PrecisionArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    nbtx: PathBuf,
    /// Camera direction `theta,phi` in degrees.
    #[arg(long, value_parser = parse_direction, default_value = "0,0")]
    cam: Direction,
    /// Light direction `theta,phi` in degrees.
    #[arg(long, value_parser = parse_direction, default_value = "45,0")]
    light: Direction,
    /// PNG or PFM output for a single slice.
    #[arg(long, required_unless_present = "sweep")]
    out: Option<PathBuf>,
    /// Turntable: N slices with both azimuths rotated through a full turn.
    #[arg(long, requires = "out_dir", conflicts_with = "out")]
    sweep: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Image format of sweep frames.
    #[arg(long, default_value = "png")]
    ext: String,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    btf: PathBuf,
    /// Separate guidance image; defaults to the near-normal slice of `--btf`.
    #[arg(long)]
    guidance: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4])]
    pca_ranks: Vec<usize>,
    /// Directory for report.csv and report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LatentsArgs {
    #[arg(long)]
    nbtx: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    let (t, p) = s.split_once(',').ok_or_else(|| format!("expected theta,phi, got {s:?}"))?;
    let num = |v: &str| v.trim().parse::<f32>().map_err(|e| format!("{v:?}: {e}"));
    Direction::new(num(t)?, num(p)?).map_err(|e| e.to_string())
}

/// `(kind, exit code)` of a library error.
fn classify(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Format { .. } => ("format", 3),
        Error::Validation(_) => ("validation", 3),
        Error::Numeric(_) => ("numeric", 4),
        Error::Tensor(TensorError::NonFinite { .. }) => ("numeric", 4),
        Error::Tensor(_) => ("tensor", 2),
        Error::Config(_) => ("config", 2),
        Error::Dimension(_) => ("dimension", 2),
        Error::Lookup(_) => ("lookup", 2),
        Error::Io { .. } => ("io", 2),
    }
}

fn error_line(kind: &str, code: u8, msg: &str) -> String {
    format!("error kind={kind} exit={code} msg={}", msg.replace('\n', " "))
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("NEUBTF_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("NEUBTF_THREADS={v:?} is not a positive integer"))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let first = e.to_string();
            eprintln!("{}", error_line("usage", 2, first.lines().next().unwrap_or("invalid arguments")));
            return ExitCode::from(2);
        }
    };
    if let Err(msg) = init_threads() {
        eprintln!("{}", error_line("usage", 2, &msg));
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Propagate(a) => commands::propagate(a),
        Command::Render(a) => commands::render(a),
        Command::Eval(a) => commands::eval(a),
        Command::Latents(a) => commands::latents(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("{}", error_line(kind, code, &e.to_string()));
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn directions_parse() {
        let d = parse_direction("30, 270").unwrap();
        assert_eq!((d.theta(), d.phi()), (30.0, 270.0));
        assert!(parse_direction("30").is_err());
        assert!(parse_direction("95,0").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(classify(&Error::Validation("x".into())).1, 3);
        assert_eq!(classify(&Error::Numeric("x".into())).1, 4);
        assert_eq!(classify(&Error::Config("x".into())).1, 2);
        assert_eq!(error_line("format", 3, "a\nb"), "error kind=format exit=3 msg=a b");
    }
}
