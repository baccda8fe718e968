//! `zsdc` command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "zsdc", version, about = "Zero-shot road audio compression: data, codec, edge and central nodes, experiments")]
struct Cli {
    /// Overrides `seed` from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Plain `key=value` file of experiment settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize labeled driving events as WAV files plus labels.csv.
    GenData {
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a codec on the generic corpus and write the model.
    TrainCodec {
        #[arg(long)]
        out: PathBuf,
        /// Generic corpus size (defaults to `corpus_clips`).
        #[arg(long)]
        clips: Option<usize>,
    },
    /// Encode a WAV file to a latent bitstream.
    Encode {
        #[arg(long)]
        codec_model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        post_id: Option<String>,
        /// UTC seconds.
        #[arg(long)]
        captured_at: Option<i64>,
    },
    /// Decode a latent bitstream to a 44.1 kHz WAV file.
    Decode {
        #[arg(long)]
        codec_model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Encode a directory of clips on an edge node and ship them to a
    /// central server.
    RunEdge(EdgeArgs),
    /// Serve an archive until killed.
    RunCentral {
        /// Defaults to 0.0.0.0 on $ZSDC_PORT or 7440.
        #[arg(long)]
        listen_addr: Option<String>,
        #[arg(long)]
        archive_dir: PathBuf,
        #[arg(long)]
        codec_model: PathBuf,
    },
    /// Run the full experiment and write the report tables.
    Evaluate {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        scale: Option<f64>,
        /// Use this model instead of training one.
        #[arg(long)]
        codec_model: Option<PathBuf>,
        /// Run the edge to central pipeline over loopback TCP.
        #[arg(long)]
        net: bool,
    },
    /// Write the log-mel spectrogram of a WAV file as a PGM image.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Plot decode(encode(input)) with this model instead.
        #[arg(long)]
        codec_model: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct EdgeArgs {
    #[arg(long)]
    codec_model: PathBuf,
    /// WAV files, with labels.csv if present.
    #[arg(long)]
    input_dir: PathBuf,
    /// Defaults to 127.0.0.1 on $ZSDC_PORT or 7440.
    #[arg(long)]
    server_addr: Option<String>,
    #[arg(long)]
    capacity_bytes: Option<u64>,
    #[arg(long)]
    fill_threshold: Option<f64>,
    #[arg(long)]
    flush_interval_s: Option<i64>,
    #[arg(long)]
    max_batch_bytes: Option<u64>,
    /// Post id for clips not listed in labels.csv.
    #[arg(long, default_value = "edge")]
    post_id: String,
    /// Record log restored at start and written after every step.
    #[arg(long)]
    state_log: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(commands::Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
