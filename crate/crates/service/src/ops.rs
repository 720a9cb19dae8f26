//! The batch operations behind `/v1/simulate`, `/v1/analyze`, `/v1/fit`,
//! `/v1/recover` and `/v1/benchmark`. All are synchronous and CPU-bound;
//! runs and sessions are spread over the rayon pool and reassembled in
//! input order, so outputs depend only on the request.

use std::collections::BTreeMap;

use rayon::prelude::*;
use supertask_core::agents::{AgentConfig, HierQParams};
use supertask_core::analytics::{
    aggregate_switch_costs, avoidance_rate, error_breakdown, final_third, learning_curve,
    switch_cost, trust_matrix, ErrorBreakdown, LearningCurve, SwitchCostResult,
};
use supertask_core::domain::{Controllability, MissionKind, PartnerType};
use supertask_core::engine::TrialRecord;
use supertask_core::fitting::{fit_mle, parameter_recovery, FitOptions, FIXED_LAPSE};
use supertask_core::logstore::{
    export_csv, fmt_g6, serialize_log, session_id_for, Table, TrustRow, View,
};
use supertask_core::sim::{derive_seed, simulate_logged, simulate_records};
use supertask_core::{parse_log, replay, SessionConfig};

use crate::api::*;

/// Upper bound on runs per request.
pub const MAX_RUNS: u32 = 100_000;

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError::new(ApiErrorCode::BadRequest, msg)
}

fn bad_config(msg: impl Into<String>) -> ApiError {
    ApiError::new(ApiErrorCode::BadConfig, msg)
}

fn mission_ids(missions: &[u32]) -> Result<Vec<u32>, ApiError> {
    let ids = if missions.is_empty() {
        vec![1, 2, 3]
    } else {
        missions.to_vec()
    };
    match SessionConfig::for_missions(&ids, 0) {
        Some(_) => Ok(ids),
        None => Err(bad_config(format!(
            "unknown mission in {ids:?} (expected 1, 2 or 3)"
        ))),
    }
}

fn agent_config(kind: supertask_core::AgentKind, params: &Params) -> Result<AgentConfig, ApiError> {
    AgentConfig::new(kind, 0)
        .with_params(params.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .map_err(|e| bad_config(e.to_string()))
}

fn check_runs(runs: u32) -> Result<(), ApiError> {
    if runs == 0 || runs > MAX_RUNS {
        return Err(bad_request(format!(
            "runs must be in 1..={MAX_RUNS}, got {runs}"
        )));
    }
    Ok(())
}

fn accuracy(records: &[TrialRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64
}

/// Seeds for run `run` of a simulate request: (session seed, agent seed).
pub fn run_seeds(seed: u64, run: u64) -> (u64, u64) {
    let session = derive_seed(seed, &[run]);
    (session, derive_seed(session, &[1]))
}

pub fn simulate(req: &SimulateRequest) -> Result<SimulateResponse, ApiError> {
    check_runs(req.runs)?;
    let ids = mission_ids(&req.missions)?;
    let base = agent_config(req.agent, &req.params)?;
    let runs = (0..req.runs)
        .into_par_iter()
        .map(|run| {
            let (session_seed, agent_seed) = run_seeds(req.seed, run as u64);
            let config = SessionConfig::for_missions(&ids, session_seed).expect("ids checked");
            let agent = AgentConfig {
                seed: agent_seed,
                ..base.clone()
            };
            let session_id = session_id_for(req.seed, run as u64);
            let session = simulate_logged(&session_id, config, &agent)
                .map_err(|e| bad_config(e.to_string()))?;
            let records = session.state().records();
            Ok(SimulatedRun {
                run,
                session_id,
                seed: session_seed,
                score: session.state().score(),
                n_trials: records.len(),
                accuracy: accuracy(records),
                log: req.include_logs.then(|| serialize_log(session.events())),
            })
        })
        .collect::<Result<Vec<_>, ApiError>>()?;
    Ok(SimulateResponse { runs })
}

/// A parsed and replay-checked log.
pub struct LoadedLog {
    pub name: String,
    pub session_id: String,
    pub records: Vec<TrialRecord>,
    pub score: i64,
}

pub fn load_logs(logs: &[NamedLog]) -> Result<Vec<LoadedLog>, ApiError> {
    if logs.is_empty() {
        return Err(bad_request("no logs given"));
    }
    logs.par_iter()
        .map(|log| {
            let events = parse_log(&log.text).map_err(|e| ApiError {
                code: ApiErrorCode::BadLog,
                message: e.kind.to_string(),
                log: Some(log.name.clone()),
                line: Some(e.line),
            })?;
            let r = replay(&events).map_err(|e| ApiError {
                code: ApiErrorCode::BadLog,
                message: e.to_string(),
                log: Some(log.name.clone()),
                line: None,
            })?;
            Ok(LoadedLog {
                name: log.name.clone(),
                session_id: events[0].session_id.clone(),
                records: r.records,
                score: r.score,
            })
        })
        .collect()
}

fn cued_switch(records: &[TrialRecord]) -> Vec<TrialRecord> {
    records
        .iter()
        .filter(|r| r.mission_kind == MissionKind::CuedSwitch)
        .cloned()
        .collect()
}

fn switch_cost_of(records: &[TrialRecord]) -> Result<SwitchCostResult, String> {
    let m1 = cued_switch(records);
    if m1.is_empty() {
        return Err("no cued-switch trials".into());
    }
    switch_cost(&m1).map_err(|e| e.to_string())
}

fn csv(table: &Table<'_>, view: View) -> String {
    export_csv(table, view).expect("table matches its view")
}

pub fn analyze(req: &AnalyzeRequest) -> Result<AnalyzeResponse, ApiError> {
    let logs = load_logs(&req.logs)?;
    let sessions = logs
        .iter()
        .map(|l| SessionInfo {
            name: l.name.clone(),
            session_id: l.session_id.clone(),
            score: l.score,
            n_trials: l.records.len(),
        })
        .collect();
    let mut out = AnalyzeResponse {
        sessions,
        switch: None,
        errors: None,
        curve: None,
        trust: None,
        avoid: None,
        csv: BTreeMap::new(),
    };
    let trials: Vec<(&str, &[TrialRecord])> = logs
        .iter()
        .map(|l| (l.session_id.as_str(), &l.records[..]))
        .collect();
    out.csv.insert(
        "trials.csv".into(),
        csv(&Table::Trials(trials), View::Trials),
    );

    if req.report.includes(Report::Switch) {
        let per: Vec<(String, Result<SwitchCostResult, String>)> = logs
            .par_iter()
            .map(|l| (l.name.clone(), switch_cost_of(&l.records)))
            .collect();
        let ok: Vec<(&str, &SwitchCostResult)> = logs
            .iter()
            .zip(&per)
            .filter_map(|(l, (_, r))| r.as_ref().ok().map(|r| (l.session_id.as_str(), r)))
            .collect();
        let results: Vec<SwitchCostResult> = ok.iter().map(|(_, r)| (*r).clone()).collect();
        let aggregate = aggregate_switch_costs(&results).ok();
        let mut rows = ok.clone();
        if let Some(a) = &aggregate {
            rows.push(("ALL", a));
        }
        out.csv
            .insert("switch.csv".into(), csv(&Table::Switch(rows), View::Switch));
        out.switch = Some(SwitchReport {
            sessions: per,
            aggregate,
        });
    }

    if req.report.includes(Report::Errors) {
        let per: Vec<(String, ErrorBreakdown)> = logs
            .iter()
            .map(|l| (l.name.clone(), error_breakdown(&l.records)))
            .collect();
        let all: Vec<TrialRecord> = logs
            .iter()
            .flat_map(|l| l.records.iter().cloned())
            .collect();
        out.errors = Some(ErrorsReport {
            sessions: per,
            pooled: error_breakdown(&all),
        });
    }

    if req.report.includes(Report::Curve) {
        let per: Vec<(String, LearningCurve)> = logs
            .iter()
            .map(|l| (l.name.clone(), learning_curve(&l.records)))
            .collect();
        let pooled = LearningCurve::pool(per.iter().map(|(_, c)| c));
        let mut rows: Vec<(&str, &LearningCurve)> = logs
            .iter()
            .zip(&per)
            .map(|(l, (_, c))| (l.session_id.as_str(), c))
            .collect();
        if logs.len() > 1 {
            rows.push(("ALL", &pooled));
        }
        out.csv
            .insert("curve.csv".into(), csv(&Table::Curve(rows), View::Curve));
        out.curve = Some(CurveReport {
            sessions: per,
            pooled,
        });
    }

    let social: Vec<&LoadedLog> = logs
        .iter()
        .filter(|l| l.records.iter().any(|r| r.engaged().is_some()))
        .collect();
    if req.report.includes(Report::Trust) || req.report.includes(Report::Avoid) {
        let rows: Vec<TrustRow> = social
            .iter()
            .map(|l| TrustRow {
                matrix: trust_matrix(&l.records),
                avoidance: avoidance_rate(&l.records),
            })
            .collect();
        let table: Vec<(&str, &TrustRow)> = social
            .iter()
            .zip(&rows)
            .map(|(l, r)| (l.session_id.as_str(), r))
            .collect();
        out.csv
            .insert("trust.csv".into(), csv(&Table::Trust(table), View::Trust));

        if req.report.includes(Report::Trust) {
            let mut entries = Vec::new();
            for (l, row) in social.iter().zip(&rows) {
                for partner in PartnerType::ALL {
                    for phase in [Controllability::Full, Controllability::Partial] {
                        let c = row.matrix.cell(partner, phase);
                        if c.offers > 0 {
                            entries.push(TrustEntry {
                                session: l.name.clone(),
                                partner_type: partner.to_string(),
                                controllability: phase.to_string(),
                                engaged: c.engaged,
                                offers: c.offers,
                                p_engage: c.p_engage(),
                            });
                        }
                    }
                }
            }
            let ordered = social
                .iter()
                .filter(|l| trust_matrix(&final_third(&l.records)).ordered())
                .count();
            out.trust = Some(TrustReport {
                entries,
                ordered_final_third: ordered,
                n_sessions: social.len(),
            });
        }
        if req.report.includes(Report::Avoid) {
            let per: Vec<(String, _)> = social
                .iter()
                .zip(&rows)
                .map(|(l, r)| (l.name.clone(), r.avoidance))
                .collect();
            let deltas: Vec<f64> = per.iter().filter_map(|(_, a)| a.delta()).collect();
            out.avoid = Some(AvoidReport {
                mean_delta: (!deltas.is_empty())
                    .then(|| deltas.iter().sum::<f64>() / deltas.len() as f64),
                partial_above_full: deltas.iter().filter(|&&d| d > 0.0).count(),
                sessions: per,
            });
        }
    }
    Ok(out)
}

pub fn fit(req: &FitRequest) -> Result<FitResponse, ApiError> {
    let logs = load_logs(&req.logs)?;
    let opts = FitOptions::default();
    let results: Vec<_> = logs
        .par_iter()
        .map(|l| fit_mle(&l.records, req.model, &opts))
        .collect();
    let table: Vec<(&str, &_)> = logs
        .iter()
        .zip(&results)
        .map(|(l, r)| (l.session_id.as_str(), r))
        .collect();
    let csv = csv(&Table::Fits(table), View::Fits);
    let rows = logs
        .iter()
        .zip(results)
        .map(|(l, r)| FitRow {
            name: l.name.clone(),
            session_id: l.session_id.clone(),
            result: r.map_err(|e| e.to_string()),
        })
        .collect();
    Ok(FitResponse { rows, csv })
}

pub fn recover(req: &RecoverRequest) -> Result<RecoverResponse, ApiError> {
    if req.reps == 0 {
        return Err(bad_request("reps must be at least 1"));
    }
    if req.trials < 2 {
        return Err(bad_request("trials must be at least 2"));
    }
    let mut grid = Vec::new();
    for &(alpha, beta) in &req.grid {
        if !(alpha > 0.0 && alpha <= 1.0) || !(beta >= 0.0 && beta.is_finite()) {
            return Err(bad_config(format!(
                "grid cell ({alpha}, {beta}) needs alpha in (0, 1] and beta >= 0"
            )));
        }
        grid.push(HierQParams {
            alpha,
            beta,
            lapse: FIXED_LAPSE,
        });
    }
    let report = parameter_recovery(req.model, &grid, req.trials, req.reps, req.seed)
        .map_err(|e| bad_config(e.to_string()))?;
    let csv = csv(&Table::Recovery(&report), View::Recovery);
    Ok(RecoverResponse { report, csv })
}

/// Display label of an agent and its overrides, e.g. `hier_q[alpha=0.5;beta=2]`.
pub fn agent_label(spec: &AgentSpec) -> String {
    if spec.params.is_empty() {
        spec.kind.to_string()
    } else {
        let p: Vec<String> = spec
            .params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        format!("{}[{}]", spec.kind, p.join(";"))
    }
}

struct RunMetrics {
    score: i64,
    accuracy: f64,
    switch: Option<SwitchCostResult>,
    ordered: Option<bool>,
    avoid_delta: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn benchmark(req: &BenchmarkRequest) -> Result<BenchmarkResponse, ApiError> {
    if req.agents.is_empty() {
        return Err(bad_request("at least one agent is required"));
    }
    check_runs(req.runs)?;
    let ids = mission_ids(&req.missions)?;
    let configs: Vec<AgentConfig> = req
        .agents
        .iter()
        .map(|a| agent_config(a.kind, &a.params))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (spec, base) in req.agents.iter().zip(&configs) {
        for &mission in &ids {
            let metrics: Vec<RunMetrics> = (0..req.runs)
                .into_par_iter()
                .map(|run| {
                    // Same task seeds for every agent.
                    let session_seed = derive_seed(req.seed, &[mission as u64, run as u64]);
                    let config =
                        SessionConfig::single_mission(mission, session_seed).expect("ids checked");
                    let agent = AgentConfig {
                        seed: derive_seed(session_seed, &[1]),
                        ..base.clone()
                    };
                    let records =
                        simulate_records(config, &agent).expect("default missions are valid");
                    let kind = records.first().map(|r| r.mission_kind);
                    let social = kind == Some(MissionKind::Social);
                    RunMetrics {
                        score: records.iter().map(|r| r.payoff).sum(),
                        accuracy: accuracy(&records),
                        switch: (kind == Some(MissionKind::CuedSwitch))
                            .then(|| switch_cost(&records).ok())
                            .flatten(),
                        ordered: social.then(|| trust_matrix(&final_third(&records)).ordered()),
                        avoid_delta: social.then(|| avoidance_rate(&records).delta()).flatten(),
                    }
                })
                .collect();
            rows.push(BenchmarkRow {
                agent: agent_label(spec),
                mission_id: mission,
                runs: req.runs,
                mean_score: mean(metrics.iter().map(|m| m.score as f64)).unwrap_or(0.0),
                accuracy: mean(metrics.iter().map(|m| m.accuracy)).unwrap_or(0.0),
                d_rt_ms: mean(
                    metrics
                        .iter()
                        .filter_map(|m| m.switch.as_ref().map(|s| s.d_rt_ms)),
                ),
                d_acc: mean(
                    metrics
                        .iter()
                        .filter_map(|m| m.switch.as_ref().map(|s| s.d_acc)),
                ),
                trust_ordered: mean(
                    metrics
                        .iter()
                        .filter_map(|m| m.ordered.map(|o| o as u8 as f64)),
                ),
                avoid_delta: mean(metrics.iter().filter_map(|m| m.avoid_delta)),
            });
        }
    }
    let csv = benchmark_csv(&rows);
    Ok(BenchmarkResponse { rows, csv })
}

pub const BENCHMARK_HEADER: [&str; 9] = [
    "agent",
    "mission_id",
    "runs",
    "mean_score",
    "accuracy",
    "d_rt_ms",
    "d_acc",
    "trust_ordered",
    "avoid_delta",
];

fn benchmark_csv(rows: &[BenchmarkRow]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let opt = |v: Option<f64>| v.map(fmt_g6).unwrap_or_default();
    w.write_record(BENCHMARK_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.agent.clone(),
            r.mission_id.to_string(),
            r.runs.to_string(),
            fmt_g6(r.mean_score),
            fmt_g6(r.accuracy),
            opt(r.d_rt_ms),
            opt(r.d_acc),
            opt(r.trust_ordered),
            opt(r.avoid_delta),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}
