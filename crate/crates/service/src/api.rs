//! Request and response types of the `/v1/*` operation endpoints.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use supertask_core::agents::AgentKind;
use supertask_core::analytics::{AvoidanceRates, ErrorBreakdown, LearningCurve, SwitchCostResult};
use supertask_core::fitting::{FitResult, Model, RecoveryReport};

/// `key=value` parameter overrides, applied in order.
pub type Params = Vec<(String, String)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRequest {
    /// Mission ids to play, in order; empty means all three.
    #[serde(default)]
    pub missions: Vec<u32>,
    pub agent: AgentKind,
    #[serde(default)]
    pub params: Params,
    pub seed: u64,
    pub runs: u32,
    /// Return the full `.jsonl` log of each run.
    #[serde(default = "yes")]
    pub include_logs: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedRun {
    pub run: u32,
    pub session_id: String,
    pub seed: u64,
    pub score: i64,
    pub n_trials: usize,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateResponse {
    pub runs: Vec<SimulatedRun>,
}

/// A log shipped to the service; `name` is echoed in errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedLog {
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Report {
    Switch,
    Errors,
    Curve,
    Trust,
    Avoid,
    All,
}

impl Report {
    pub const EACH: [Report; 5] = [
        Report::Switch,
        Report::Errors,
        Report::Curve,
        Report::Trust,
        Report::Avoid,
    ];

    pub fn includes(self, other: Report) -> bool {
        self == other || self == Report::All
    }
}

impl FromStr for Report {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|_| {
            format!("unknown report {s:?} (expected switch, errors, curve, trust, avoid or all)")
        })
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("unit variant");
        f.write_str(v.as_str().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    pub logs: Vec<NamedLog>,
    pub report: Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub name: String,
    pub session_id: String,
    pub score: i64,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchReport {
    /// Per session; `Err` carries why the cost is undefined.
    pub sessions: Vec<(String, Result<SwitchCostResult, String>)>,
    /// Across-session means with within-subject SEMs (two or more sessions).
    pub aggregate: Option<SwitchCostResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorsReport {
    pub sessions: Vec<(String, ErrorBreakdown)>,
    pub pooled: ErrorBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub sessions: Vec<(String, LearningCurve)>,
    pub pooled: LearningCurve,
}

/// Engagement counts in one (partner, phase) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustEntry {
    pub session: String,
    pub partner_type: String,
    pub controllability: String,
    pub engaged: usize,
    pub offers: usize,
    pub p_engage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustReport {
    pub entries: Vec<TrustEntry>,
    /// Sessions whose final-third engagement is strictly KIND > CLUMSY > JERK.
    pub ordered_final_third: usize,
    pub n_sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvoidReport {
    pub sessions: Vec<(String, AvoidanceRates)>,
    /// Mean PARTIAL minus FULL avoidance over sessions where both exist.
    pub mean_delta: Option<f64>,
    pub partial_above_full: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeResponse {
    pub sessions: Vec<SessionInfo>,
    pub switch: Option<SwitchReport>,
    pub errors: Option<ErrorsReport>,
    pub curve: Option<CurveReport>,
    pub trust: Option<TrustReport>,
    pub avoid: Option<AvoidReport>,
    /// CSV exports keyed by file name.
    pub csv: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRequest {
    pub logs: Vec<NamedLog>,
    pub model: Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub name: String,
    pub session_id: String,
    pub result: Result<FitResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResponse {
    pub rows: Vec<FitRow>,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverRequest {
    pub model: Model,
    /// (alpha, beta) cells.
    pub grid: Vec<(f64, f64)>,
    pub trials: u32,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverResponse {
    pub report: RecoveryReport,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub kind: AgentKind,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRequest {
    pub agents: Vec<AgentSpec>,
    /// Empty means all three.
    #[serde(default)]
    pub missions: Vec<u32>,
    pub runs: u32,
    pub seed: u64,
}

/// One agent on one mission, averaged over runs. Metrics that do not
/// apply to the mission are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub agent: String,
    pub mission_id: u32,
    pub runs: u32,
    pub mean_score: f64,
    pub accuracy: f64,
    pub d_rt_ms: Option<f64>,
    pub d_acc: Option<f64>,
    /// Fraction of runs with strict final-third trust ordering.
    pub trust_ordered: Option<f64>,
    pub avoid_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResponse {
    pub rows: Vec<BenchmarkRow>,
    pub csv: String,
}

/// Error body of a failed `/v1/*` operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ApiErrorCode,
    pub message: String,
    /// Offending log, when the error is about one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ApiErrorCode {
    BadRequest,
    BadConfig,
    BadLog,
    Internal,
}

impl ApiError {
    pub fn new(code: ApiErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
            log: None,
            line: None,
        }
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.log, self.line) {
            (Some(log), Some(line)) => write!(f, "{log}:{line}: {}", self.message),
            (Some(log), None) => write!(f, "{log}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ApiError {}
