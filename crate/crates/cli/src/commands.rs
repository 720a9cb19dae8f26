use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use supertask_client::HttpClient;
use supertask_service::api::*;
use supertask_service::ServeConfig;

use crate::args::*;
use crate::print;
use crate::CliError;

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn seed_dir(command: &str, seed: u64) -> PathBuf {
    out_root().join(command).join(format!("seed-{seed}"))
}

fn time_dir(command: &str) -> PathBuf {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    out_root().join(command).join(format!("t-{secs}"))
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Expands directories to their `.jsonl` files, sorted by name.
pub fn collect_logs(paths: &[PathBuf]) -> Result<Vec<NamedLog>, CliError> {
    let mut files = Vec::new();
    for p in paths {
        let meta = fs::metadata(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        if meta.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(CliError::Input("no .jsonl logs found".into()));
    }
    files
        .into_iter()
        .map(|f| {
            let text = fs::read_to_string(&f)
                .map_err(|e| CliError::Input(format!("{}: {e}", f.display())))?;
            Ok(NamedLog {
                name: f.display().to_string(),
                text,
            })
        })
        .collect()
}

pub async fn simulate(client: &HttpClient, a: SimulateArgs) -> Result<(), CliError> {
    let resp = client
        .simulate(&SimulateRequest {
            missions: a.mission.0,
            agent: a.agent,
            params: a.params,
            seed: a.seed,
            runs: a.runs,
            include_logs: true,
        })
        .await?;
    let dir = a.out.unwrap_or_else(|| seed_dir("simulate", a.seed));
    create_dir(&dir)?;
    // Stale logs from a larger earlier run would make the directory differ.
    for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))?.flatten() {
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("run-") && name.ends_with(".jsonl") {
            fs::remove_file(entry.path()).map_err(|e| io_err(&entry.path(), e))?;
        }
    }
    let mut summary = String::from("run,session_id,seed,score,n_trials,accuracy\r\n");
    for r in &resp.runs {
        let log = r.log.as_deref().unwrap_or_default();
        write(&dir.join(format!("run-{:04}.jsonl", r.run)), log)?;
        summary.push_str(&format!(
            "{},{},{},{},{},{}\r\n",
            r.run,
            r.session_id,
            r.seed,
            r.score,
            r.n_trials,
            supertask_core::logstore::fmt_g6(r.accuracy)
        ));
    }
    write(&dir.join("summary.csv"), &summary)?;
    print::simulate(&resp);
    println!("wrote {} log(s) to {}", resp.runs.len(), dir.display());
    Ok(())
}

pub async fn analyze(client: &HttpClient, a: AnalyzeArgs) -> Result<(), CliError> {
    let logs = collect_logs(&a.log)?;
    let resp = client
        .analyze(&AnalyzeRequest {
            logs,
            report: a.report,
        })
        .await?;
    let dir = a.csv.unwrap_or_else(|| time_dir("analyze"));
    create_dir(&dir)?;
    for (name, text) in &resp.csv {
        write(&dir.join(name), text)?;
    }
    print::analyze(&resp);
    println!(
        "\nwrote {} to {}",
        resp.csv.keys().cloned().collect::<Vec<_>>().join(", "),
        dir.display()
    );
    Ok(())
}

pub async fn fit(client: &HttpClient, a: FitArgs) -> Result<(), CliError> {
    let logs = collect_logs(&a.log)?;
    let resp = client
        .fit(&FitRequest {
            logs,
            model: a.model,
        })
        .await?;
    let path = a.out.unwrap_or_else(|| time_dir("fit").join("fits.csv"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write(&path, &resp.csv)?;
    print::fit(&resp);
    let flagged = resp.rows.iter().filter(|r| r.result.is_err()).count();
    if flagged > 0 {
        println!(
            "{flagged} of {} log(s) could not be fitted (flagged rows)",
            resp.rows.len()
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub async fn recover(client: &HttpClient, a: RecoverArgs) -> Result<(), CliError> {
    let resp = client
        .recover(&RecoverRequest {
            model: a.model,
            grid: a.grid.0,
            trials: a.trials,
            reps: a.reps,
            seed: a.seed,
        })
        .await?;
    let dir = a.out.unwrap_or_else(|| seed_dir("recover", a.seed));
    create_dir(&dir)?;
    write(&dir.join("recovery.csv"), &resp.csv)?;
    print::recover(&resp.report);
    println!("wrote {}", dir.join("recovery.csv").display());
    Ok(())
}

pub async fn benchmark(client: &HttpClient, a: BenchmarkArgs) -> Result<(), CliError> {
    let resp = client
        .benchmark(&BenchmarkRequest {
            agents: a.agents.0,
            missions: a.missions.0,
            runs: a.runs,
            seed: a.seed,
        })
        .await?;
    let dir = a.out.unwrap_or_else(|| seed_dir("benchmark", a.seed));
    create_dir(&dir)?;
    write(&dir.join("benchmark.csv"), &resp.csv)?;
    print::benchmark(&resp);
    println!("wrote {}", dir.join("benchmark.csv").display());
    Ok(())
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

pub async fn serve(a: ServeArgs) -> Result<(), CliError> {
    let log_dir = a
        .log_dir
        .unwrap_or_else(|| out_root().join("serve").join("logs"));
    let config = ServeConfig {
        host: a.host,
        port: a.port,
        tcp_port: (!a.no_tcp).then_some(a.tcp_port),
        max_sessions: a.max_sessions,
        log_dir: Some(log_dir.clone()),
    };
    let service = supertask_service::start(config)
        .await
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    // Whoever reads the addresses may close the pipe afterwards.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "http {}", service.base_url());
    if let Some(addr) = service.tcp_addr() {
        let _ = writeln!(out, "ndjson {addr}");
    }
    let _ = writeln!(out, "logs {}", log_dir.display());
    let _ = out.flush();
    drop(out);
    shutdown_signal().await;
    tracing::info!("interrupted; shutting down");
    service
        .shutdown()
        .await
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}
