// `!(x > 0.0)` is how NaN gets rejected along with the rest
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use crowdcast_core::chat::{open_csv_source, open_line_source, ChatSource};
use crowdcast_core::config::{ConfigError, EngineConfig, LoadedConfig};
use crowdcast_core::engine::{analyze, EngineError};
use crowdcast_core::tempo::{classify_bpm_with, estimate_bpm, PcmTrack, DEFAULT_TEMPO_THRESHOLD_BPM};
use crowdcast_transport::{bind, serve, simulate, ServeError, ServeOptions, SimError, SimOptions};
use thiserror::Error;

#[derive(Parser)]
#[command(name = "crowdcast", version, about = "Turn live concert chat into virtual crowd reactions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process a recorded concert as fast as possible and write the event log.
    Analyze {
        #[command(flatten)]
        engine: EngineArgs,
        /// Event log destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay or relay chat in real time to WebSocket clients.
    Serve {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, default_value_t = 9001)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Virtual seconds per wall second, or `inf`.
        #[arg(long)]
        speed: Option<f64>,
        /// Read live chat as JSON lines on stdin instead of the configured file.
        #[arg(long)]
        live: bool,
        /// Hold the first tick until this many clients have joined.
        #[arg(long, default_value_t = 0)]
        wait_for: usize,
        /// Per-client outbound queue bound, in messages.
        #[arg(long, default_value_t = crowdcast_transport::server::DEFAULT_QUEUE_BOUND)]
        queue_bound: usize,
        /// Also write the server's event log here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Connect as a headless client, check the stream and rebuild the crowd.
    Simulate {
        #[arg(long, default_value = "ws://127.0.0.1:9001")]
        url: String,
        /// Crowd size; the server's value when omitted.
        #[arg(long)]
        avatars: Option<usize>,
        /// Variation seed; the server's seed when omitted.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the received stream as an event log.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print one line per received event.
        #[arg(long)]
        render: bool,
        #[arg(long, default_value = "simulator")]
        name: String,
    },
    /// Estimate the tempo of a 16-bit PCM WAV file.
    EstimateBpm {
        wav: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TEMPO_THRESHOLD_BPM)]
        threshold: f64,
    },
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Chat CSV, overriding the config file.
    #[arg(long)]
    chat: Option<PathBuf>,
    /// Crowd size announced to clients, overriding the config file.
    #[arg(long)]
    avatars: Option<usize>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Io(_) => 2,
            Self::Sim(e) => e.exit_code() as u8,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Io(_) => Self::Io(e.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<ServeError> for CliError {
    fn from(e: ServeError) -> Self {
        match e {
            ServeError::Engine(inner) => inner.into(),
            ServeError::Speed(_) => Self::Config(e.to_string()),
            other => Self::Io(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

struct Prepared {
    loaded: LoadedConfig,
    seed: u64,
}

fn prepare(args: &EngineArgs) -> Result<Prepared, CliError> {
    let mut cfg = EngineConfig::from_file(&args.config)?;
    if let Some(chat) = &args.chat {
        cfg.paths.chat = Some(chat.clone());
    }
    if let Some(n) = args.avatars {
        cfg.n_avatars = n;
    }
    let seed = match args.seed.or(cfg.seed) {
        Some(s) => s,
        None => {
            let s = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0);
            eprintln!("seed: {s} (generated)");
            s
        }
    };
    cfg.seed = Some(seed);
    Ok(Prepared { loaded: cfg.load()?, seed })
}

fn chat_file(loaded: &LoadedConfig) -> Result<Box<dyn ChatSource>, CliError> {
    let cfg = &loaded.config;
    let path = cfg
        .paths
        .chat
        .as_ref()
        .ok_or_else(|| CliError::Config("no chat file: set paths.chat or pass --chat".into()))?;
    let source = open_csv_source(path, &cfg.chat_columns).map_err(|e| CliError::Config(e.to_string()))?;
    let stats = source.stats();
    if stats.skipped_rows > 0 {
        eprintln!("{}: skipped {} malformed rows", path.display(), stats.skipped_rows);
    }
    Ok(Box::new(source))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn cmd_analyze(engine: EngineArgs, out: Option<PathBuf>) -> Result<(), CliError> {
    let Prepared { loaded, seed } = prepare(&engine)?;
    let source = chat_file(&loaded)?;
    let summary = match &out {
        Some(path) => {
            let (summary, mut w) = analyze(&loaded, seed, source, create(path)?)?;
            w.flush().map_err(|e| io_err(path, e))?;
            summary
        }
        None => analyze(&loaded, seed, source, io::stdout().lock())?.0,
    };
    // keep stdout clean for the log when it goes there
    if out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Io(format!("cannot start runtime: {e}")))
}

#[allow(clippy::too_many_arguments)]
fn cmd_serve(
    engine: EngineArgs,
    host: String,
    port: u16,
    speed: Option<f64>,
    live: bool,
    wait_for: usize,
    queue_bound: usize,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let Prepared { loaded, seed } = prepare(&engine)?;
    let speed = speed.unwrap_or(loaded.config.speed);
    if !(speed > 0.0) {
        return Err(CliError::Config(format!("speed must be positive or inf, got {speed}")));
    }
    let source: Box<dyn ChatSource> =
        if live { Box::new(open_line_source(io::BufReader::new(io::stdin()))) } else { chat_file(&loaded)? };
    let log: Option<Box<dyn Write + Send>> = match &out {
        Some(p) => Some(Box::new(create(p)?)),
        None => None,
    };
    let rt = runtime()?;
    let report = rt.block_on(async {
        let listener = bind(&format!("{host}:{port}")).await?;
        let addr = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
        eprintln!("listening on ws://{addr}");
        let opts = ServeOptions { seed, speed, queue_bound, wait_for, log, ..Default::default() };
        Ok::<_, CliError>(serve(listener, loaded, source, opts).await?)
    })?;
    println!("{}", report.summary);
    println!("clients: {} joined, {} cut off", report.clients_joined, report.clients_overflowed);
    Ok(())
}

fn cmd_simulate(
    url: String,
    avatars: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    render: bool,
    name: String,
) -> Result<(), CliError> {
    let mut opts = SimOptions::new(url);
    opts.client_name = name;
    opts.n_avatars = avatars;
    opts.seed = seed;
    if render {
        opts.render = Some(Box::new(io::stdout()));
    }
    if let Some(p) = &out {
        opts.log = Some(Box::new(create(p)?));
    }
    let report = runtime()?.block_on(simulate(opts))?;
    let crowd = &report.crowd;
    eprintln!(
        "ok: {} ticks, {} reactions; crowd of {} ends {} x{:.2} with {} varied",
        report.ticks,
        report.reactions,
        crowd.len(),
        crowd.movement(),
        crowd.playback_rate(),
        crowd.variant_count()
    );
    Ok(())
}

fn cmd_estimate_bpm(wav: PathBuf, threshold: f64) -> Result<(), CliError> {
    let track = PcmTrack::read_wav(&wav).map_err(|e| CliError::Config(format!("{}: {e}", wav.display())))?;
    let bpm = estimate_bpm(&track).map_err(|e| CliError::Config(format!("{}: {e}", wav.display())))?;
    let class = classify_bpm_with(bpm, threshold).map_err(|e| CliError::Config(e.to_string()))?;
    println!("{bpm:.1} bpm ({})", if class == crowdcast_core::tempo::TempoClass::Fast { "fast" } else { "slow" });
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze { engine, out } => cmd_analyze(engine, out),
        Command::Serve { engine, port, host, speed, live, wait_for, queue_bound, out } => {
            cmd_serve(engine, host, port, speed, live, wait_for, queue_bound, out)
        }
        Command::Simulate { url, avatars, seed, out, render, name } => {
            cmd_simulate(url, avatars, seed, out, render, name)
        }
        Command::EstimateBpm { wav, threshold } => cmd_estimate_bpm(wav, threshold),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
