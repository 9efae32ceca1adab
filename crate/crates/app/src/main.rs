use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use faceprotect::verify::DEFAULT_TAU;
use faceprotect_app::commands;
use faceprotect_app::config::Config;
use faceprotect_app::error::{CliError, EXIT_CONFIG};
use faceprotect_app::service::{self, AppState};

/// Protect face images with feature-mapped watermarks and detect tampering.
///
/// Exit codes: 0 real / success, 1 fake or unprotected, 2 configuration or
/// checkpoint error, 3 data error, 4 training aborted, 5 no face found.
#[derive(Parser)]
#[command(name = "faceprotect", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the watermark generator from the [godwgm] config section.
    TrainGodwgm {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the hiding/recovery codec from the [wvs] config section.
    TrainWvs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a protected copy of an image plus a `.embed.json` sidecar.
    Embed {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        godwgm: PathBuf,
        #[arg(long)]
        wvs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a detection report; the exit code carries the verdict.
    Detect {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        godwgm: PathBuf,
        #[arg(long)]
        wvs: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
    },
    /// Detection metrics per tamper mode plus visual quality ([bench] section).
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the HTTP service ([serve] section).
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(config: &PathBuf, seed: Option<u64>) -> Result<Config, CliError> {
    let mut cfg = Config::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::TrainGodwgm { config, seed } => {
            let s = commands::train_godwgm(&load(&config, seed)?)?;
            println!("checkpoint {} (id {})\nlog {}", s.checkpoint.display(), s.checkpoint_id, s.log.display());
            Ok(0)
        }
        Command::TrainWvs { config, seed } => {
            let s = commands::train_wvs(&load(&config, seed)?)?;
            println!("checkpoint {} (id {})\nlog {}", s.checkpoint.display(), s.checkpoint_id, s.log.display());
            Ok(0)
        }
        Command::Embed { image, godwgm, wvs, out } => {
            let record = commands::embed(&image, &godwgm, &wvs, &out)?;
            println!("{}", serde_json::to_string_pretty(&record).expect("record serialises"));
            Ok(0)
        }
        Command::Detect { image, godwgm, wvs, tau } => {
            let report = commands::detect_file(&image, &godwgm, &wvs, tau)?;
            println!("{}", report.to_json());
            Ok(commands::verdict_exit_code(&report))
        }
        Command::Bench { config, seed } => {
            let report = commands::bench(&load(&config, seed)?)?;
            print!("{}", report.to_table());
            for row in report.metric_rows() {
                println!("{}", row.to_line());
            }
            Ok(0)
        }
        Command::Serve { config } => {
            let cfg = load(&config, None)?;
            let sec = cfg.section(&cfg.serve, "serve")?.clone();
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?;
            rt.block_on(async move {
                let state = AppState::from_config(&sec).map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?;
                let listener = tokio::net::TcpListener::bind(&sec.bind)
                    .await
                    .map_err(|e| CliError::new(EXIT_CONFIG, format!("bind {}: {e}", sec.bind)))?;
                tracing::info!("listening on {}", sec.bind);
                service::serve(listener, Arc::new(state), service::shutdown_signal())
                    .await
                    .map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))
            })?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
