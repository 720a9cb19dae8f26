use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use supertask_core::fitting::Model;
use supertask_core::AgentKind;
use supertask_service::api::{AgentSpec, Report};

/// Environment variable naming the default output root (default `out`).
pub const OUT_ENV: &str = "SUPERTASK_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "supertask",
    version,
    about = "Simulate, serve and analyze multi-mission task sessions"
)]
pub struct Cli {
    /// Service to run commands against; without it an embedded service is
    /// started for the duration of the command.
    #[arg(long, global = true, env = "SUPERTASK_SERVER")]
    pub server: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Play agents through seeded sessions and write one log per run.
    Simulate(SimulateArgs),
    /// Compute reports over event logs and write CSV tables.
    Analyze(AnalyzeArgs),
    /// Fit a model to each log.
    Fit(FitArgs),
    /// Simulate, refit and summarize a parameter grid.
    Recover(RecoverArgs),
    /// Compare agents across missions.
    Benchmark(BenchmarkArgs),
    /// Run the session service until interrupted.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// `all`, or one mission id.
    #[arg(long, default_value = "all", value_parser = parse_missions)]
    pub mission: Missions,
    #[arg(long, value_parser = parse_agent_kind)]
    pub agent: AgentKind,
    /// Agent parameter overrides, `key=value`.
    #[arg(long, num_args = 1.., value_parser = parse_kv)]
    pub params: Vec<(String, String)>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub runs: u32,
    /// Output directory (default `<root>/simulate/seed-<seed>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Log files or directories of `.jsonl` logs.
    #[arg(long, required = true, num_args = 1..)]
    pub log: Vec<PathBuf>,
    #[arg(long, default_value = "all")]
    pub report: Report,
    /// Directory for CSV tables (default `<root>/analyze/t-<unix time>`).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub log: Vec<PathBuf>,
    #[arg(long, value_parser = parse_model)]
    pub model: Model,
    /// CSV file (default `<root>/fit/t-<unix time>/fits.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[arg(long, default_value = "qlearn", value_parser = parse_model)]
    pub model: Model,
    /// `alpha=a1,a2,...;beta=b1,b2,...`, crossed.
    #[arg(long, default_value = "alpha=0.1,0.3,0.5;beta=2,6", value_parser = parse_grid)]
    pub grid: Grid,
    #[arg(long, default_value_t = 500)]
    pub trials: u32,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (default `<root>/recover/seed-<seed>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Comma-separated agents, each `kind` or `kind[key=value;...]`.
    #[arg(long, required = true, value_parser = parse_agents)]
    pub agents: Agents,
    /// `all`, or comma-separated mission ids.
    #[arg(long, default_value = "all", value_parser = parse_missions)]
    pub missions: Missions,
    #[arg(long, default_value_t = 200)]
    pub runs: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (default `<root>/benchmark/seed-<seed>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1", env = "SUPERTASK_HOST")]
    pub host: String,
    /// HTTP port; 0 picks a free one.
    #[arg(long, default_value_t = 7878, env = "SUPERTASK_PORT")]
    pub port: u16,
    /// NDJSON socket port; 0 picks a free one.
    #[arg(long, default_value_t = 7879, env = "SUPERTASK_TCP_PORT")]
    pub tcp_port: u16,
    /// Serve HTTP only.
    #[arg(long)]
    pub no_tcp: bool,
    #[arg(long, default_value_t = 64, env = "SUPERTASK_MAX_SESSIONS")]
    pub max_sessions: usize,
    /// Session log directory (default `<root>/serve/logs`).
    #[arg(long, env = "SUPERTASK_LOG_DIR")]
    pub log_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Missions(pub Vec<u32>);

#[derive(Debug, Clone)]
pub struct Grid(pub Vec<(f64, f64)>);

#[derive(Debug, Clone)]
pub struct Agents(pub Vec<AgentSpec>);

fn parse_agent_kind(s: &str) -> Result<AgentKind, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_model(s: &str) -> Result<Model, String> {
    s.parse().map_err(|e| format!("{e}"))
}

pub fn parse_kv(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(format!("expected key=value, got {s:?}")),
    }
}

pub fn parse_missions(s: &str) -> Result<Missions, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Missions(vec![1, 2, 3]));
    }
    let ids = s
        .split(',')
        .map(|p| match p.trim().parse::<u32>() {
            Ok(id @ 1..=3) => Ok(id),
            _ => Err(format!("unknown mission {p:?} (expected all, 1, 2 or 3)")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Missions(ids))
}

fn parse_list(key: &str, values: &str) -> Result<Vec<f64>, String> {
    values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad {key} value {v:?}"))
        })
        .collect()
}

pub fn parse_grid(s: &str) -> Result<Grid, String> {
    let (mut alphas, mut betas) = (None, None);
    for part in s.split(';').filter(|p| !p.trim().is_empty()) {
        let (k, v) = parse_kv(part)?;
        match k.as_str() {
            "alpha" => alphas = Some(parse_list("alpha", &v)?),
            "beta" => betas = Some(parse_list("beta", &v)?),
            _ => return Err(format!("unknown grid axis {k:?} (expected alpha and beta)")),
        }
    }
    let (Some(alphas), Some(betas)) = (alphas, betas) else {
        return Err("grid needs both alpha=... and beta=...".into());
    };
    Ok(Grid(
        alphas
            .iter()
            .flat_map(|&a| betas.iter().map(move |&b| (a, b)))
            .collect(),
    ))
}

fn parse_agent_spec(s: &str) -> Result<AgentSpec, String> {
    let s = s.trim();
    let (kind, params) = match s.split_once('[') {
        Some((kind, rest)) => {
            let inner = rest
                .strip_suffix(']')
                .ok_or_else(|| format!("unclosed '[' in {s:?}"))?;
            let params = inner
                .split(';')
                .filter(|p| !p.trim().is_empty())
                .map(parse_kv)
                .collect::<Result<Vec<_>, _>>()?;
            (kind, params)
        }
        None => (s, Vec::new()),
    };
    Ok(AgentSpec {
        kind: parse_agent_kind(kind)?,
        params,
    })
}

/// Splits on commas outside brackets, so `hier_q[alpha=0.5;beta=2],random`
/// is two agents.
pub fn parse_agents(s: &str) -> Result<Agents, String> {
    let mut specs = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                specs.push(parse_agent_spec(&s[start..i])?);
                start = i + 1;
            }
            _ => {}
        }
    }
    specs.push(parse_agent_spec(&s[start..])?);
    Ok(Agents(specs))
}
