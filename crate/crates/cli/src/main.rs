use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod input;

/// Semiclassical quantization of rational polygon billiards.
#[derive(Parser, Debug)]
#[command(name = "polyquant", version)]
pub struct Cli {
    /// Seed recorded in every output; all computations are deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a built-in family as a spec file.
    Family(FamilyArgs),
    /// Build the elementary polygon pattern.
    Epp(EppArgs),
    /// Genus from the pattern's Euler characteristic and the closed form.
    Genus(SpecArgs),
    /// Periods of the pattern with their count and integer rank.
    Periods(EppArgs),
    /// Simultaneous rational approximation of a list of reals.
    Dirichlet(DirichletArgs),
    /// Quantized momenta and energies.
    Spectrum(SpectrumArgs),
    /// Sample a quantized wavefunction on a grid.
    Field(FieldArgs),
    /// Boundary residuals against their bounds.
    Verify(VerifyArgs),
    /// Shortest periodic orbits of a billiard with circular holes.
    Orbits(OrbitsArgs),
    /// Replace a circular hole by a tangent polygon built from periodic orbits.
    Approximate(ApproximateArgs),
}

#[derive(Args, Debug)]
pub struct Output {
    /// Write JSON here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyName {
    RectHoles,
    RectRotatedHoles,
    Sinai,
}

#[derive(Args, Debug)]
pub struct FamilyArgs {
    #[arg(value_enum)]
    pub name: FamilyName,
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    /// Hole as four comma-separated numbers: left,bottom,right,top for
    /// rect-holes; x0,y0,s,t for rect-rotated-holes. Repeatable.
    #[arg(long = "hole", value_parser = parse_quad)]
    pub holes: Vec<[f64; 4]>,
    #[arg(long, default_value_t = 0.51)]
    pub w: f64,
    #[arg(long, default_value_t = 0.47)]
    pub h: f64,
    #[arg(long, default_value_t = 0.2)]
    pub r: f64,
    /// Sinai only: replace the circle by its circumscribed dodecagon.
    #[arg(long)]
    pub polygonal: bool,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct SpecArgs {
    pub spec: PathBuf,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct EppArgs {
    pub spec: PathBuf,
    /// Base vertex as an index on the outer polygon, or polygon:index.
    /// Defaults to the outer vertex with the largest angle denominator.
    #[arg(long, value_parser = parse_vertex)]
    pub vertex: Option<(usize, usize)>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct DirichletArgs {
    /// Reals to approximate; fractions such as 3/4 are handled exactly.
    #[arg(required = true, num_args = 1.., allow_negative_numbers = true)]
    pub values: Vec<String>,
    #[arg(long = "N", default_value_t = 10_000)]
    pub n: u64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FrameKind {
    Auto,
    Rect,
    Sinai,
    Derived,
}

#[derive(Args, Debug)]
pub struct QuantArgs {
    pub spec: PathBuf,
    #[arg(long, value_parser = parse_vertex)]
    pub vertex: Option<(usize, usize)>,
    #[arg(long = "N", default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_quality: u64,
    /// Reference periods: rect uses (2a,0),(0,2b); sinai uses (2,0),(1,√3);
    /// derived takes the periods of pairings --d1 and --d2.
    #[arg(long, value_enum, default_value_t = FrameKind::Auto)]
    pub frame: FrameKind,
    #[arg(long)]
    pub d1: Option<usize>,
    #[arg(long)]
    pub d2: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub quant: QuantArgs,
    /// Quantum numbers run over 0 < |m|, |n| ≤ range.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(i64).range(1..))]
    pub range: i64,
    /// Periodic skeleton a·D₁ + b·D₂ given as a,b with rational entries.
    #[arg(long, value_parser = parse_skeleton)]
    pub skeleton: Option<(num_rational::Rational64, num_rational::Rational64)>,
    /// ε in the condition E₀ ≤ ε·p²/2 for periodic states.
    #[arg(long, default_value_t = polyquant::spectrum::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct FieldArgs {
    #[command(flatten)]
    pub quant: QuantArgs,
    #[arg(long, allow_negative_numbers = true, default_value_t = 1)]
    pub m: i64,
    #[arg(long, allow_negative_numbers = true, default_value_t = 1)]
    pub n: i64,
    #[arg(long, default_value_t = 128, value_parser = at_least_two)]
    pub nx: usize,
    #[arg(long, default_value_t = 128, value_parser = at_least_two)]
    pub ny: usize,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub quant: QuantArgs,
    #[arg(long, allow_negative_numbers = true, default_value_t = 1)]
    pub m: i64,
    #[arg(long, allow_negative_numbers = true, default_value_t = 1)]
    pub n: i64,
    #[arg(long, default_value_t = 1024, value_parser = at_least_two)]
    pub samples: usize,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct OrbitsArgs {
    pub spec: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub max_bounces: usize,
    #[arg(long)]
    pub max_length: Option<f64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct ApproximateArgs {
    pub spec: PathBuf,
    #[arg(long, default_value_t = 21)]
    pub k: usize,
    #[arg(long, default_value_t = 8)]
    pub max_bounces: usize,
    /// Use the K shortest orbits as they come instead of the grid-aligned ones.
    #[arg(long)]
    pub all_orbits: bool,
    /// Write the full report (orbits, tangencies, envelope) here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

fn parse_quad(s: &str) -> Result<[f64; 4], String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected four comma-separated numbers".to_string())
}

fn at_least_two(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 2 => Ok(v),
        Ok(v) => Err(format!("must be at least 2, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_vertex(s: &str) -> Result<(usize, usize), String> {
    let parse = |x: &str| x.parse::<usize>().map_err(|e| format!("bad vertex `{s}`: {e}"));
    match s.split_once(':') {
        Some((p, i)) => Ok((parse(p)?, parse(i)?)),
        None => Ok((0, parse(s)?)),
    }
}

fn parse_skeleton(s: &str) -> Result<(num_rational::Rational64, num_rational::Rational64), String> {
    let (a, b) = s.split_once(',').ok_or("expected a,b")?;
    Ok((commands::parse_fraction(a)?, commands::parse_fraction(b)?))
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn invalid(e: impl Display) -> Self {
        Failure { code: 1, message: e.to_string() }
    }

    pub fn usage(e: impl Display) -> Self {
        Failure { code: 2, message: e.to_string() }
    }

    pub fn numerical(e: impl Display) -> Self {
        Failure { code: 3, message: e.to_string() }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("BILLIARD_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| Failure::usage(format!("BILLIARD_THREADS must be a positive integer, got `{v}`")))?;
    if n == 0 {
        return Err(Failure::usage("BILLIARD_THREADS must be at least 1"));
    }
    // a second configuration attempt in the same process is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match configure_threads().and_then(|_| commands::run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
