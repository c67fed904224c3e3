use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod cli;

#[derive(Parser)]
#[command(
    name = "convbse",
    version,
    about = "Joint blind source separation and dereverberation"
)]
struct Cli {
    /// Worker threads for per-frequency parallelism (default: all cores).
    #[arg(long, global = true, env = "CONVBSE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a noisy reverberant mixture with oracle references.
    Synth(SynthArgs),
    /// Separate a multichannel mixture into source images.
    Separate(SeparateArgs),
    /// Score estimated images against references.
    Eval(EvalArgs),
    /// Per-iteration cost of the BCD schedules, modeled and measured.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for mixture, references, and manifest.
    #[arg(long, default_value = "synth_out")]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 6)]
    noise_count: usize,
    #[arg(long, default_value_t = 10.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 400.0)]
    rt60_ms: f64,
    #[arg(long, default_value_t = 4)]
    mics: usize,
    #[arg(long, default_value_t = 12.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional speech WAVs (one per target) instead of synthetic sources.
    #[arg(long, num_args = 0..)]
    speech: Vec<PathBuf>,
    /// Replay a previous run from its manifest, ignoring other flags.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct SeparateArgs {
    /// Input multichannel WAV.
    input: PathBuf,
    /// Output directory.
    outdir: PathBuf,
    #[arg(long, default_value = "ive-conv-alg1")]
    variant: String,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    d1: usize,
    #[arg(long, default_value_t = 5)]
    d2: usize,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, default_value_t = 5)]
    g_period: usize,
    #[arg(long, default_value_t = 2048)]
    frame_len: usize,
    #[arg(long, default_value_t = 512)]
    hop: usize,
    /// Also write the residual noise image.
    #[arg(long)]
    noise_image: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated source-image WAVs.
    #[arg(long, num_args = 1.., required = true)]
    estimates: Vec<PathBuf>,
    /// Oracle reference WAVs, same count.
    #[arg(long, num_args = 1.., required = true)]
    references: Vec<PathBuf>,
    /// CSV summary output path.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value = "unknown")]
    method: String,
    #[arg(long, default_value = "mix")]
    mixture: String,
    /// Allow a 512-tap distortion filter instead of a plain gain.
    #[arg(long)]
    short_filter: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Microphone counts to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![4usize, 6])]
    mics: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    d1: usize,
    #[arg(long, default_value_t = 5)]
    d2: usize,
    #[arg(long, default_value_t = 257)]
    f: usize,
    #[arg(long, default_value_t = 300)]
    t: usize,
    #[arg(long, default_value_t = 3)]
    iters: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let result = match cli.command {
        Command::Synth(args) => cli::cmd_synth(args),
        Command::Separate(args) => cli::cmd_separate(args),
        Command::Eval(args) => cli::cmd_eval(args),
        Command::Bench(args) => cli::cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
