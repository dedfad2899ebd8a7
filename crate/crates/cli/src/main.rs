//! `deus`: generate toy decoders, expand them in depth, check function
//! preservation and inspect the result.
//!
//! Exit codes:
//!
//! | code | meaning                                              |
//! |------|------------------------------------------------------|
//! | 0    | success                                              |
//! | 1    | `verify-fp` found a logit difference above tolerance |
//! | 2    | unreadable or malformed archive, token file or I/O   |
//! | 3    | expansion plan cannot be built (includes `lesa`)     |
//! | 4    | transport solver failure                             |
//! | 64   | invalid flags or flag combinations                   |

/// `println!` that ignores a closed stdout instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deus_core::sinkhorn::{DEFAULT_EPSILON, DEFAULT_MAX_ITER, DEFAULT_TOL};
use deus_core::{Method, PositionStrategy};

pub const EXIT_VERIFY_FAILED: u8 = 1;
pub const EXIT_FORMAT: u8 = 2;
pub const EXIT_PLAN: u8 = 3;
pub const EXIT_SOLVER: u8 = 4;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "deus", version, about = "Depth up-scaling for toy decoder checkpoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded random toy model.
    Gen(GenArgs),
    /// Write a seeded random token file.
    Tokens(TokensArgs),
    /// Insert new layers into an archive.
    Expand(ExpandArgs),
    /// Compare the logits of two archives on a token file.
    VerifyFp(VerifyArgs),
    /// Print the perplexity of an archive on a token file.
    Ppl(PplArgs),
    /// Summarize an archive.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    /// Defaults to `--heads`.
    #[arg(long)]
    kv_heads: Option<usize>,
    /// Defaults to `hidden / heads`.
    #[arg(long)]
    head_dim: Option<usize>,
    #[arg(long, default_value_t = 172)]
    d_ff: usize,
    #[arg(long, default_value_t = 256)]
    vocab: usize,
    #[arg(long, default_value_t = 10000.0)]
    rope_theta: f64,
    #[arg(long, default_value_t = 1e-5)]
    rms_eps: f64,
}

#[derive(Debug, Args)]
struct TokensArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    len: usize,
    #[arg(long, default_value_t = 256)]
    vocab: usize,
}

#[derive(Debug, Args)]
struct ExpandArgs {
    /// Base archive.
    base: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value = "opt-deus", value_parser = parse_method)]
    method: Method,
    /// btm, mid, top or tb (interpolation methods only; default top).
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<PositionStrategy>,
    /// Fraction of base layers to add (interpolation methods only; default 0.5).
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Use `--eps` as is instead of scaling it by the mean cost.
    #[arg(long)]
    raw_eps: bool,
    /// Restrict Q/K/V transport to rows of the same head.
    #[arg(long)]
    head_blocked: bool,
    /// LLaMA-PRO: number of groups.
    #[arg(long)]
    g: Option<usize>,
    /// LLaMA-PRO: layers per group; SOLAR: layers kept from each end.
    #[arg(long)]
    m: Option<usize>,
    /// LLaMA-PRO: copies per group (default 1).
    #[arg(long)]
    p: Option<usize>,
    /// Plan sidecar path (default `<out>.plan.json`).
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Freeze-mask path (default `<out>.freeze.json`).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Add per-fusion transport diagnostics to the plan sidecar.
    #[arg(long)]
    trace: bool,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    base: PathBuf,
    expanded: PathBuf,
    #[arg(long)]
    tokens: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Also print the per-position maximum logit difference.
    #[arg(long)]
    trace: bool,
}

#[derive(Debug, Args)]
struct PplArgs {
    archive: PathBuf,
    #[arg(long)]
    tokens: PathBuf,
}

#[derive(Debug, Args)]
struct InspectArgs {
    archive: PathBuf,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: deus_core::upscale::UpscaleError| e.to_string())
}

fn parse_strategy(s: &str) -> Result<PositionStrategy, String> {
    s.parse().map_err(|e: deus_core::upscale::UpscaleError| e.to_string())
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<deus_core::Error> for Failure {
    fn from(e: deus_core::Error) -> Self {
        use deus_core::ErrorCategory;
        let code = match e.category() {
            ErrorCategory::Format => EXIT_FORMAT,
            ErrorCategory::Plan => EXIT_PLAN,
            ErrorCategory::Solver => EXIT_SOLVER,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

macro_rules! failure_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                deus_core::Error::from(e).into()
            }
        }
    )*};
}

failure_from!(
    deus_core::checkpoint::ArchiveError,
    deus_core::checkpoint::ConfigError,
    deus_core::toy_llama::ForwardError,
    deus_core::upscale::UpscaleError
);

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: EXIT_FORMAT,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Tokens(a) => commands::tokens(a),
        Command::Expand(a) => commands::expand(a),
        Command::VerifyFp(a) => commands::verify_fp(a),
        Command::Ppl(a) => commands::ppl(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
