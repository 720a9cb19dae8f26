//! Human-readable tables on stdout. The CSV files are the stable output;
//! these are for reading at a terminal.

use comfy_table::presets::UTF8_BORDERS_ONLY;
use comfy_table::{CellAlignment, Table};
use supertask_core::domain::ErrorClass;
use supertask_core::fitting::RecoveryReport;
use supertask_core::logstore::fmt_g6;
use supertask_service::api::*;

/// Per-session rows are listed only up to this many sessions.
const MAX_SESSION_ROWS: usize = 20;

fn table(header: &[&str]) -> Table {
    let mut t = Table::new();
    t.load_preset(UTF8_BORDERS_ONLY)
        .set_header(header.iter().copied());
    for i in 1..header.len() {
        if let Some(c) = t.column_mut(i) {
            c.set_cell_alignment(CellAlignment::Right);
        }
    }
    t
}

fn g(v: f64) -> String {
    fmt_g6(v)
}

fn og(v: Option<f64>) -> String {
    v.map(fmt_g6).unwrap_or_else(|| "-".into())
}

fn section(title: &str, t: &Table) {
    println!("\n{title}\n{t}");
}

fn too_many(n: usize, file: &str) {
    println!("({n} sessions; per-session rows are in {file})");
}

pub fn simulate(resp: &SimulateResponse) {
    let mut t = table(&["run", "session_id", "score", "trials", "accuracy"]);
    for r in &resp.runs {
        t.add_row(vec![
            r.run.to_string(),
            r.session_id.clone(),
            r.score.to_string(),
            r.n_trials.to_string(),
            g(r.accuracy),
        ]);
    }
    println!("{t}");
    let n = resp.runs.len() as f64;
    let mean = resp.runs.iter().map(|r| r.score as f64).sum::<f64>() / n;
    println!("{} runs, mean score {}", resp.runs.len(), g(mean));
}

pub fn analyze(resp: &AnalyzeResponse) {
    let n = resp.sessions.len();
    println!(
        "{n} session(s), {} trials",
        resp.sessions.iter().map(|s| s.n_trials).sum::<usize>()
    );

    if let Some(sw) = &resp.switch {
        let mut t = table(&[
            "session",
            "d_rt_ms",
            "d_acc",
            "sem_rt_ms",
            "sem_acc",
            "n_switch",
            "n_repeat",
        ]);
        let mut row = |name: &str, r: &supertask_core::analytics::SwitchCostResult| {
            t.add_row(vec![
                name.to_string(),
                g(r.d_rt_ms),
                g(r.d_acc),
                og(r.sem_rt_ms),
                og(r.sem_acc),
                r.n_switch.to_string(),
                r.n_repeat.to_string(),
            ]);
        };
        if n <= MAX_SESSION_ROWS {
            for (name, r) in &sw.sessions {
                match r {
                    Ok(r) => row(name, r),
                    Err(e) => println!("{name}: switch cost undefined: {e}"),
                }
            }
        }
        if let Some(a) = &sw.aggregate {
            row("ALL (within-subject SEM)", a);
        }
        section("Switch cost (switch minus repeat)", &t);
        if n > MAX_SESSION_ROWS {
            too_many(n, "switch.csv");
        }
    }

    if let Some(er) = &resp.errors {
        let mut header = vec!["session", "errors/trials"];
        let names: Vec<String> = ErrorClass::ALL[1..].iter().map(|c| c.to_string()).collect();
        header.extend(names.iter().map(String::as_str));
        let mut t = table(&header);
        let mut row = |name: &str, b: &supertask_core::analytics::ErrorBreakdown| {
            let errors: usize = b.counts[1..].iter().sum();
            let mut cells = vec![name.to_string(), format!("{errors}/{}", b.total)];
            cells.extend((1..4).map(|i| format!("{} ({})", b.counts[i], g(b.rates[i]))));
            t.add_row(cells);
        };
        if n <= MAX_SESSION_ROWS {
            for (name, b) in &er.sessions {
                row(name, b);
            }
        }
        row("ALL", &er.pooled);
        section("Error taxonomy, count (rate among errors)", &t);
    }

    if let Some(cv) = &resp.curve {
        let mut t = table(&[
            "exposure",
            "higher_order_acc",
            "lower_order_acc",
            "n",
            "low_confidence",
        ]);
        for p in &cv.pooled.points {
            t.add_row(vec![
                p.exposure_index.to_string(),
                og(p.higher_order_acc),
                og(p.lower_order_acc),
                p.n.to_string(),
                p.low_confidence.to_string(),
            ]);
        }
        section("Learning curve, pooled over sessions", &t);
        if cv.pooled.points.is_empty() {
            println!("(no learned-rule trials)");
        }
    }

    if let Some(tr) = &resp.trust {
        let mut t = table(&[
            "session",
            "partner",
            "control",
            "engaged/offers",
            "p_engage",
        ]);
        let shown = tr
            .entries
            .iter()
            .filter(|e| n <= MAX_SESSION_ROWS || e.session == tr.entries[0].session);
        for e in shown {
            t.add_row(vec![
                e.session.clone(),
                e.partner_type.clone(),
                e.controllability.clone(),
                format!("{}/{}", e.engaged, e.offers),
                og(e.p_engage),
            ]);
        }
        section("Trust (engagement by partner type)", &t);
        if n > MAX_SESSION_ROWS {
            too_many(n, "trust.csv");
        }
        println!(
            "final-third ordering KIND > CLUMSY > JERK: {}/{} sessions",
            tr.ordered_final_third, tr.n_sessions
        );
    }

    if let Some(av) = &resp.avoid {
        let mut t = table(&["session", "avoid FULL", "avoid PARTIAL", "PARTIAL - FULL"]);
        if n <= MAX_SESSION_ROWS {
            for (name, a) in &av.sessions {
                t.add_row(vec![name.clone(), og(a.full), og(a.partial), og(a.delta())]);
            }
        }
        section("Avoidance by controllability", &t);
        println!(
            "mean PARTIAL - FULL: {}; PARTIAL above FULL in {}/{} sessions",
            og(av.mean_delta),
            av.partial_above_full,
            av.sessions.len()
        );
    }
}

pub fn fit(resp: &FitResponse) {
    let mut t = table(&[
        "log",
        "model",
        "estimates",
        "loglik",
        "trials",
        "converged",
        "flags",
    ]);
    for row in &resp.rows {
        match &row.result {
            Ok(f) => {
                let est: Vec<String> = f
                    .estimates
                    .iter()
                    .map(|(k, v)| format!("{k}={}", g(*v)))
                    .collect();
                let mut flags = f.warnings.clone();
                flags.extend(f.at_bound.iter().map(|p| format!("{p} at bound")));
                t.add_row(vec![
                    row.name.clone(),
                    f.model.to_string(),
                    est.join(" "),
                    og(f.loglik),
                    f.n_trials.to_string(),
                    f.converged.to_string(),
                    flags.join("; "),
                ]);
            }
            Err(e) => {
                t.add_row(vec![
                    row.name.clone(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    "false".into(),
                    e.clone(),
                ]);
            }
        }
    }
    println!("{t}");
}

pub fn recover(report: &RecoveryReport) {
    let mut t = table(&[
        "truth",
        "param",
        "mean",
        "median",
        "sd",
        "bias",
        "rmse",
        "ok/failed",
        "flags",
    ]);
    for cell in &report.cells {
        let truth: Vec<String> = cell
            .truth
            .iter()
            .map(|(k, v)| format!("{k}={}", g(*v)))
            .collect();
        for p in &cell.params {
            t.add_row(vec![
                truth.join(" "),
                p.name.clone(),
                g(p.mean),
                g(p.median),
                og(p.sd),
                g(p.bias),
                g(p.rmse),
                format!("{}/{}", cell.n_ok, cell.n_failed),
                cell.flags.join("; "),
            ]);
        }
    }
    println!(
        "{} recovery, {} trials x {} replicates, seed {}\n{t}",
        report.model, report.trials_per_run, report.n_replicates, report.seed
    );
}

pub fn benchmark(resp: &BenchmarkResponse) {
    let mut t = table(&[
        "agent",
        "mission",
        "runs",
        "mean_score",
        "accuracy",
        "d_rt_ms",
        "d_acc",
        "trust_ordered",
        "avoid_delta",
    ]);
    for r in &resp.rows {
        t.add_row(vec![
            r.agent.clone(),
            r.mission_id.to_string(),
            r.runs.to_string(),
            g(r.mean_score),
            g(r.accuracy),
            og(r.d_rt_ms),
            og(r.d_acc),
            og(r.trust_ordered),
            og(r.avoid_delta),
        ]);
    }
    println!("{t}");
}
