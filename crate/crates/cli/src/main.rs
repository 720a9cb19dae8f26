mod args;
mod commands;
mod print;

use std::process::ExitCode;

use clap::Parser;
use supertask_client::{ClientError, HttpClient};
use supertask_service::api::ApiErrorCode;
use supertask_service::{start, ServeConfig, Service};
use tracing_subscriber::EnvFilter;

use args::{Cli, Command};

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration: exit 2.
    Usage(String),
    /// Unreadable or invalid input data: exit 3.
    Input(String),
    /// Anything else: exit 1.
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Input(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Api(api) => match api.code {
                ApiErrorCode::BadRequest | ApiErrorCode::BadConfig => {
                    CliError::Usage(api.to_string())
                }
                ApiErrorCode::BadLog => CliError::Input(api.to_string()),
                ApiErrorCode::Internal => CliError::Runtime(api.to_string()),
            },
            other => CliError::Runtime(other.to_string()),
        }
    }
}

/// The service to talk to: the one named by `--server`, or a private one
/// on an ephemeral port that is shut down afterwards.
async fn connect(server: Option<String>) -> Result<(HttpClient, Option<Service>), CliError> {
    if let Some(url) = server {
        return Ok((HttpClient::new(url), None));
    }
    let service = start(ServeConfig {
        port: 0,
        tcp_port: None,
        ..ServeConfig::default()
    })
    .await
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok((HttpClient::new(service.base_url()), Some(service)))
}

async fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Serve(a) = cli.command {
        return commands::serve(a).await;
    }
    let (client, embedded) = connect(cli.server).await?;
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&client, a).await,
        Command::Analyze(a) => commands::analyze(&client, a).await,
        Command::Fit(a) => commands::fit(&client, a).await,
        Command::Recover(a) => commands::recover(&client, a).await,
        Command::Benchmark(a) => commands::benchmark(&client, a).await,
        Command::Serve(_) => unreachable!("handled above"),
    };
    if let Some(service) = embedded {
        service
            .shutdown()
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve(_)) {
        "info"
    } else {
        "warn"
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
