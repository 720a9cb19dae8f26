//! JSON Lines event logs, replay, and CSV export.
//!
//! One event per line with keys in a fixed order. Logs never contain
//! floating-point numbers: times are integer milliseconds and fractions
//! are stored in millionths.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analytics::{AvoidanceRates, LearningCurve, SwitchCostResult, TrustMatrix};
use crate::domain::{Address, Controllability, PartnerType};
use crate::engine::{
    Boundary, ConfigError, PlayerAction, Prompt, ProtocolError, SessionConfig, SessionState,
    StepOutcome, TrialRecord,
};
use crate::fitting::{FitError, FitResult, RecoveryReport};
use crate::sim::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventType {
    SessionStart,
    Prompt,
    Action,
    Feedback,
    BlockEnd,
    MissionEnd,
    SessionEnd,
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventType::SessionStart => "SESSION_START",
            EventType::Prompt => "PROMPT",
            EventType::Action => "ACTION",
            EventType::Feedback => "FEEDBACK",
            EventType::BlockEnd => "BLOCK_END",
            EventType::MissionEnd => "MISSION_END",
            EventType::SessionEnd => "SESSION_END",
        })
    }
}

/// Field order here is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub session_id: String,
    pub seq: u64,
    pub seed: u64,
    pub mission_id: i64,
    pub block_index: i64,
    pub trial_index: i64,
    pub event_type: EventType,
    pub t_ms: u64,
    pub payload: Value,
}

impl EventRecord {
    pub fn address(&self) -> Option<Address> {
        Some(Address {
            mission_id: self.mission_id.try_into().ok()?,
            block_index: self.block_index.try_into().ok()?,
            trial_index: self.trial_index.try_into().ok()?,
        })
    }

    fn payload_field<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Option<T> {
        serde_json::from_value(self.payload.get(key)?.clone()).ok()
    }

    pub fn prompt(&self) -> Option<Prompt> {
        (self.event_type == EventType::Prompt)
            .then(|| self.payload_field("prompt"))
            .flatten()
    }

    pub fn action(&self) -> Option<PlayerAction> {
        (self.event_type == EventType::Action)
            .then(|| self.payload_field("action"))
            .flatten()
    }

    pub fn config(&self) -> Option<SessionConfig> {
        (self.event_type == EventType::SessionStart)
            .then(|| self.payload_field("config"))
            .flatten()
    }

    pub fn score(&self) -> Option<i64> {
        self.payload_field("score")
    }
}

pub fn serialize_event(e: &EventRecord) -> String {
    serde_json::to_string(e).expect("event serializes")
}

pub fn serialize_log(events: &[EventRecord]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serialize_event(e));
        out.push('\n');
    }
    out
}

/// Session ids are UUIDs in any of the standard text forms.
pub fn is_valid_session_id(id: &str) -> bool {
    uuid::Uuid::parse_str(id).is_ok()
}

/// Deterministic UUID-formatted id for a seed and run index.
pub fn session_id_for(seed: u64, run: u64) -> String {
    let hi = derive_seed(seed, &[run, 0x5E55]);
    let lo = derive_seed(seed, &[run, 0x1D]);
    let mut bytes = [0u8; 16];
    bytes[..8].copy_from_slice(&hi.to_be_bytes());
    bytes[8..].copy_from_slice(&lo.to_be_bytes());
    uuid::Builder::from_random_bytes(bytes)
        .into_uuid()
        .to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogErrorKind {
    #[error("malformed event: {0}")]
    Malformed(String),
    #[error("unknown event_type {0:?}")]
    UnknownEventType(String),
    #[error("floating-point number in event")]
    FloatInLog,
    #[error("seq gap (expected {expected}, got {got})")]
    SeqGap { expected: u64, got: u64 },
    #[error("session_id or seed differs from the first event")]
    MixedSession,
    #[error("invalid session_id {0:?}")]
    BadSessionId(String),
    #[error("alternation violation: {got} after {after}")]
    Alternation { after: String, got: EventType },
    #[error("log does not end with SESSION_END")]
    Truncated,
    #[error("empty log")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} at line {line}", describe(.kind))]
pub struct LogError {
    pub line: usize,
    pub kind: LogErrorKind,
}

fn describe(kind: &LogErrorKind) -> String {
    match kind {
        // "seq gap at line k" reads better than "seq gap (...) at line k"
        LogErrorKind::SeqGap { .. } => "seq gap".to_string(),
        other => other.to_string(),
    }
}

impl LogError {
    pub fn detail(&self) -> String {
        format!("line {}: {}", self.line, self.kind)
    }
}

fn contains_float(v: &Value) -> bool {
    match v {
        Value::Number(n) => !(n.is_u64() || n.is_i64()),
        Value::Array(a) => a.iter().any(contains_float),
        Value::Object(o) => o.values().any(contains_float),
        _ => false,
    }
}

/// Parses one line without any cross-line checks.
pub fn parse_event(line: &str) -> Result<EventRecord, LogErrorKind> {
    let raw: Value =
        serde_json::from_str(line).map_err(|e| LogErrorKind::Malformed(e.to_string()))?;
    if contains_float(&raw) {
        return Err(LogErrorKind::FloatInLog);
    }
    if let Some(t) = raw.get("event_type").and_then(Value::as_str) {
        if serde_json::from_value::<EventType>(Value::String(t.to_string())).is_err() {
            return Err(LogErrorKind::UnknownEventType(t.to_string()));
        }
    }
    let e: EventRecord =
        serde_json::from_value(raw).map_err(|e| LogErrorKind::Malformed(e.to_string()))?;
    if !is_valid_session_id(&e.session_id) {
        return Err(LogErrorKind::BadSessionId(e.session_id));
    }
    Ok(e)
}

/// Incremental validator; feed events in order.
#[derive(Debug, Clone, Default)]
pub struct LogValidator {
    last: Option<EventType>,
    first: Option<(String, u64)>,
    next_seq: u64,
}

impl LogValidator {
    pub fn push(&mut self, e: &EventRecord) -> Result<(), LogErrorKind> {
        use EventType::*;
        if e.seq != self.next_seq {
            return Err(LogErrorKind::SeqGap {
                expected: self.next_seq,
                got: e.seq,
            });
        }
        match &self.first {
            None => self.first = Some((e.session_id.clone(), e.seed)),
            Some((id, seed)) if *id != e.session_id || *seed != e.seed => {
                return Err(LogErrorKind::MixedSession)
            }
            _ => {}
        }
        let ok = match (self.last, e.event_type) {
            (None, SessionStart) => true,
            (Some(SessionStart), Prompt) => true,
            (Some(Prompt), Action) => true,
            (Some(Action), Prompt | Feedback) => true,
            (Some(Feedback), Prompt | BlockEnd) => true,
            (Some(BlockEnd), Prompt | MissionEnd) => true,
            (Some(MissionEnd), Prompt | SessionEnd) => true,
            _ => false,
        };
        if !ok {
            return Err(LogErrorKind::Alternation {
                after: self
                    .last
                    .map_or("start of log".to_string(), |t| t.to_string()),
                got: e.event_type,
            });
        }
        self.last = Some(e.event_type);
        self.next_seq += 1;
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.last == Some(EventType::SessionEnd)
    }
}

fn parse_lines(text: &str, require_complete: bool) -> Result<Vec<EventRecord>, LogError> {
    let mut v = LogValidator::default();
    let mut out = Vec::new();
    let mut n_lines = 0;
    for (i, line) in text.lines().enumerate() {
        n_lines = i + 1;
        let e = parse_event(line).map_err(|kind| LogError { line: i + 1, kind })?;
        v.push(&e).map_err(|kind| LogError { line: i + 1, kind })?;
        out.push(e);
    }
    if out.is_empty() {
        return Err(LogError {
            line: 1,
            kind: LogErrorKind::Empty,
        });
    }
    if require_complete && !v.is_complete() {
        return Err(LogError {
            line: n_lines,
            kind: LogErrorKind::Truncated,
        });
    }
    Ok(out)
}

/// Parses and validates a complete session log.
pub fn parse_log(text: &str) -> Result<Vec<EventRecord>, LogError> {
    parse_lines(text, true)
}

/// As [`parse_log`], but accepts a log of a session still in progress.
pub fn parse_log_prefix(text: &str) -> Result<Vec<EventRecord>, LogError> {
    parse_lines(text, false)
}

/// An engine session that records every event it produces.
#[derive(Debug, Clone)]
pub struct RecordedSession {
    session_id: String,
    state: SessionState,
    events: Vec<EventRecord>,
    clock_ms: u64,
    prompt_seq: Option<u64>,
}

impl RecordedSession {
    pub fn start(session_id: &str, config: SessionConfig) -> Result<Self, ConfigError> {
        let state = SessionState::new(config.clone())?;
        let mut s = RecordedSession {
            session_id: session_id.to_string(),
            state,
            events: Vec::new(),
            clock_ms: 0,
            prompt_seq: None,
        };
        s.push(
            EventType::SessionStart,
            None,
            serde_json::json!({ "config": config }),
        );
        s.push_prompt();
        Ok(s)
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn into_events(self) -> Vec<EventRecord> {
        self.events
    }

    /// Seq of the PROMPT event awaiting an action.
    pub fn pending_prompt_seq(&self) -> Option<u64> {
        self.prompt_seq
    }

    fn push(&mut self, event_type: EventType, address: Option<Address>, payload: Value) {
        let (m, b, t) = address.map_or((-1, -1, -1), |a| {
            (
                a.mission_id as i64,
                a.block_index as i64,
                a.trial_index as i64,
            )
        });
        self.events.push(EventRecord {
            session_id: self.session_id.clone(),
            seq: self.events.len() as u64,
            seed: self.state.config().seed,
            mission_id: m,
            block_index: b,
            trial_index: t,
            event_type,
            t_ms: self.clock_ms,
            payload,
        });
    }

    fn push_prompt(&mut self) {
        let prompt = self.state.pending_prompt();
        if prompt.is_terminal() {
            self.prompt_seq = None;
            let score = self.state.score();
            self.push(
                EventType::SessionEnd,
                None,
                serde_json::json!({ "score": score }),
            );
        } else {
            self.prompt_seq = Some(self.events.len() as u64);
            self.push(
                EventType::Prompt,
                prompt.address(),
                serde_json::json!({ "prompt": prompt }),
            );
        }
    }

    /// Applies an action; errors leave both the engine and the log untouched.
    pub fn apply(&mut self, action: PlayerAction) -> Result<StepOutcome, ProtocolError> {
        let address = self.state.pending_prompt().address();
        let out = self.state.submit_action(action)?;
        self.clock_ms += u64::from(action.rt_ms());
        self.push(
            EventType::Action,
            address,
            serde_json::json!({ "action": action }),
        );
        if let Some(fb) = &out.feedback {
            self.push(
                EventType::Feedback,
                Some(fb.address),
                serde_json::json!({ "feedback": fb }),
            );
        }
        for b in &out.boundaries {
            match *b {
                Boundary::BlockEnd {
                    mission_id,
                    block_index,
                    score,
                } => {
                    let (m, bi) = (mission_id as i64, block_index as i64);
                    self.push(
                        EventType::BlockEnd,
                        None,
                        serde_json::json!({ "score": score }),
                    );
                    let last = self.events.last_mut().unwrap();
                    last.mission_id = m;
                    last.block_index = bi;
                }
                Boundary::MissionEnd { mission_id, score } => {
                    self.push(
                        EventType::MissionEnd,
                        None,
                        serde_json::json!({ "score": score }),
                    );
                    self.events.last_mut().unwrap().mission_id = mission_id as i64;
                }
            }
        }
        self.push_prompt();
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("log does not start with a SESSION_START carrying a config")]
    NoConfig,
    #[error("logged config rejected: {0}")]
    Config(#[from] ConfigError),
    #[error("replay diverges from the log at seq {seq}")]
    Divergence { seq: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub records: Vec<TrialRecord>,
    pub score: i64,
    pub events: Vec<EventRecord>,
}

/// Re-drives the engine from the logged config and actions and checks that
/// every regenerated event equals the logged one.
pub fn replay(log: &[EventRecord]) -> Result<Replay, ReplayError> {
    let first = log.first().ok_or(ReplayError::NoConfig)?;
    let config = first.config().ok_or(ReplayError::NoConfig)?;
    if config.seed != first.seed {
        return Err(ReplayError::Divergence { seq: 0 });
    }
    let mut session = RecordedSession::start(&first.session_id, config)?;
    for e in log.iter().filter(|e| e.event_type == EventType::Action) {
        let Some(action) = e.action() else {
            return Err(ReplayError::Divergence { seq: e.seq });
        };
        if session.apply(action).is_err() {
            break;
        }
    }
    let regenerated = session.events();
    if let Some(i) =
        (0..log.len().max(regenerated.len())).find(|&i| log.get(i) != regenerated.get(i))
    {
        return Err(ReplayError::Divergence { seq: i as u64 });
    }
    let score = session.state().score();
    let events = regenerated.to_vec();
    Ok(Replay {
        records: session.state().records().to_vec(),
        score,
        events,
    })
}

/// Formats like C's `%.6g`.
pub fn fmt_g6(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum View {
    Trials,
    Switch,
    Curve,
    Trust,
    Fits,
    Recovery,
}

impl View {
    pub const ALL: [View; 6] = [
        View::Trials,
        View::Switch,
        View::Curve,
        View::Trust,
        View::Fits,
        View::Recovery,
    ];

    pub fn header(self) -> &'static [&'static str] {
        match self {
            View::Trials => &[
                "session_id",
                "mission_id",
                "block_index",
                "trial_index",
                "mission_kind",
                "cue_id",
                "signaled_rule",
                "true_rule",
                "letter",
                "digit",
                "degradation",
                "congruency",
                "is_switch",
                "actions",
                "final_response",
                "correct",
                "error_class",
                "payoff",
                "partner_type",
                "controllability",
                "delegated",
                "control_lost",
                "rt_ms",
            ],
            View::Switch => &[
                "session_id",
                "d_rt_ms",
                "d_acc",
                "sem_rt_ms",
                "sem_acc",
                "n_switch",
                "n_repeat",
            ],
            View::Curve => &[
                "session_id",
                "exposure_index",
                "higher_order_acc",
                "lower_order_acc",
                "n",
                "n_higher",
                "n_lower",
                "low_confidence",
            ],
            View::Trust => &[
                "session_id",
                "partner_type",
                "controllability",
                "engaged",
                "offers",
                "p_engage",
                "p_avoid",
            ],
            View::Fits => &[
                "session_id",
                "model",
                "parameter",
                "estimate",
                "loglik",
                "n_trials",
                "converged",
                "at_bound",
                "flag",
            ],
            View::Recovery => &[
                "model",
                "alpha_true",
                "beta_true",
                "parameter",
                "true_value",
                "mean",
                "median",
                "sd",
                "bias",
                "rmse",
                "n_ok",
                "n_failed",
                "flags",
            ],
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(enum_name(self).as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExportError {
    #[error("unknown view {0:?} (expected one of TRIALS, SWITCH, CURVE, TRUST, FITS, RECOVERY)")]
    UnknownView(String),
    #[error("a {table} table cannot be exported as {view}")]
    ViewMismatch { table: &'static str, view: View },
}

impl FromStr for View {
    type Err = ExportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(Value::String(s.to_ascii_uppercase()))
            .map_err(|_| ExportError::UnknownView(s.to_string()))
    }
}

/// Per-session trust results, including avoidance by phase.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustRow {
    pub matrix: TrustMatrix,
    pub avoidance: AvoidanceRates,
}

/// Exportable results, each row keyed by a session label.
#[derive(Debug, Clone)]
pub enum Table<'a> {
    Trials(Vec<(&'a str, &'a [TrialRecord])>),
    Switch(Vec<(&'a str, &'a SwitchCostResult)>),
    Curve(Vec<(&'a str, &'a LearningCurve)>),
    Trust(Vec<(&'a str, &'a TrustRow)>),
    Fits(Vec<(&'a str, &'a Result<FitResult, FitError>)>),
    Recovery(&'a RecoveryReport),
}

impl Table<'_> {
    fn name(&self) -> &'static str {
        match self {
            Table::Trials(_) => "trials",
            Table::Switch(_) => "switch-cost",
            Table::Curve(_) => "learning-curve",
            Table::Trust(_) => "trust",
            Table::Fits(_) => "fit",
            Table::Recovery(_) => "recovery",
        }
    }

    fn view(&self) -> View {
        match self {
            Table::Trials(_) => View::Trials,
            Table::Switch(_) => View::Switch,
            Table::Curve(_) => View::Curve,
            Table::Trust(_) => View::Trust,
            Table::Fits(_) => View::Fits,
            Table::Recovery(_) => View::Recovery,
        }
    }
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(Value::String(s)) => s,
        _ => String::new(),
    }
}

fn opt_f(v: Option<f64>) -> String {
    v.map(fmt_g6).unwrap_or_default()
}

fn opt_name<T: Serialize>(v: Option<T>) -> String {
    v.map(|x| enum_name(&x)).unwrap_or_default()
}

pub fn export_csv(table: &Table<'_>, view: View) -> Result<String, ExportError> {
    if table.view() != view {
        return Err(ExportError::ViewMismatch {
            table: table.name(),
            view,
        });
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let mut row = |fields: Vec<String>| w.write_record(&fields).expect("in-memory write");
    row(view.header().iter().map(|s| s.to_string()).collect());
    match table {
        Table::Trials(sessions) => {
            for (id, records) in sessions {
                for r in records.iter() {
                    row(vec![
                        id.to_string(),
                        r.address.mission_id.to_string(),
                        r.address.block_index.to_string(),
                        r.address.trial_index.to_string(),
                        enum_name(&r.mission_kind),
                        r.cue_id.to_string(),
                        opt_name(r.signaled_rule),
                        enum_name(&r.true_rule),
                        r.stimulus.letter().to_string(),
                        r.stimulus.digit().to_string(),
                        fmt_g6(r.stimulus.degradation().get()),
                        enum_name(&r.congruency),
                        r.is_switch.map(|b| b.to_string()).unwrap_or_default(),
                        r.actions
                            .iter()
                            .map(|a| a.kind().to_string())
                            .collect::<Vec<_>>()
                            .join("|"),
                        enum_name(&r.final_response),
                        r.correct.to_string(),
                        enum_name(&r.error_class),
                        r.payoff.to_string(),
                        opt_name(r.partner_type),
                        opt_name(r.controllability),
                        r.delegated.to_string(),
                        r.control_lost.to_string(),
                        r.rt_ms.to_string(),
                    ]);
                }
            }
        }
        Table::Switch(rows) => {
            for (id, s) in rows {
                row(vec![
                    id.to_string(),
                    fmt_g6(s.d_rt_ms),
                    fmt_g6(s.d_acc),
                    opt_f(s.sem_rt_ms),
                    opt_f(s.sem_acc),
                    s.n_switch.to_string(),
                    s.n_repeat.to_string(),
                ]);
            }
        }
        Table::Curve(rows) => {
            for (id, c) in rows {
                for p in &c.points {
                    row(vec![
                        id.to_string(),
                        p.exposure_index.to_string(),
                        opt_f(p.higher_order_acc),
                        opt_f(p.lower_order_acc),
                        p.n.to_string(),
                        p.n_higher.to_string(),
                        p.n_lower.to_string(),
                        p.low_confidence.to_string(),
                    ]);
                }
            }
        }
        Table::Trust(rows) => {
            for (id, t) in rows {
                for partner in PartnerType::ALL {
                    for phase in [Controllability::Full, Controllability::Partial] {
                        let c = t.matrix.cell(partner, phase);
                        if c.offers == 0 {
                            continue;
                        }
                        row(vec![
                            id.to_string(),
                            enum_name(&partner),
                            enum_name(&phase),
                            c.engaged.to_string(),
                            c.offers.to_string(),
                            opt_f(c.p_engage()),
                            opt_f(c.p_engage().map(|p| 1.0 - p)),
                        ]);
                    }
                }
                let a = &t.avoidance;
                for (phase, rate, n) in [
                    (Controllability::Full, a.full, a.n_full),
                    (Controllability::Partial, a.partial, a.n_partial),
                ] {
                    if n == 0 {
                        continue;
                    }
                    let avoided = rate.map_or(0, |r| (r * n as f64).round() as usize);
                    row(vec![
                        id.to_string(),
                        "ALL".to_string(),
                        enum_name(&phase),
                        (n - avoided).to_string(),
                        n.to_string(),
                        opt_f(rate.map(|r| 1.0 - r)),
                        opt_f(rate),
                    ]);
                }
            }
        }
        Table::Fits(rows) => {
            for (id, fit) in rows {
                match fit {
                    Ok(f) => {
                        let mut flag = f.warnings.clone();
                        if !f.converged {
                            flag.push("not converged".into());
                        }
                        for (name, est) in &f.estimates {
                            row(vec![
                                id.to_string(),
                                f.model.to_string(),
                                name.clone(),
                                fmt_g6(*est),
                                opt_f(f.loglik),
                                f.n_trials.to_string(),
                                f.converged.to_string(),
                                f.at_bound.contains(name).to_string(),
                                flag.join("; "),
                            ]);
                        }
                    }
                    Err(e) => row(vec![
                        id.to_string(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        "false".into(),
                        String::new(),
                        e.to_string(),
                    ]),
                }
            }
        }
        Table::Recovery(rep) => {
            for cell in &rep.cells {
                for p in &cell.params {
                    row(vec![
                        rep.model.to_string(),
                        fmt_g6(cell.truth["alpha"]),
                        fmt_g6(cell.truth["beta"]),
                        p.name.clone(),
                        fmt_g6(p.true_value),
                        fmt_g6(p.mean),
                        fmt_g6(p.median),
                        opt_f(p.sd),
                        fmt_g6(p.bias),
                        fmt_g6(p.rmse),
                        cell.n_ok.to_string(),
                        cell.n_failed.to_string(),
                        cell.flags.join("; "),
                    ]);
                }
            }
        }
    }
    let bytes = w.into_inner().expect("in-memory flush");
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentConfig, AgentKind};
    use crate::analytics::switch_cost;
    use crate::sim::simulate_logged;

    fn logged(mission: u32, seed: u64) -> Vec<EventRecord> {
        let config = SessionConfig::single_mission(mission, seed).unwrap();
        simulate_logged(
            &session_id_for(seed, 0),
            config,
            &AgentConfig::new(AgentKind::Random, seed),
        )
        .unwrap()
        .into_events()
    }

    #[test]
    fn g6_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (0.5, "0.5"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (-88.4, "-88.4"),
            (1.0 / 3.0, "0.333333"),
            (999999.5, "1e+06"),
            (0.1040880, "0.104088"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_g6(x), want, "{x}");
        }
    }

    #[test]
    fn first_line_starts_with_session_id() {
        let log = logged(1, 3);
        let line = serialize_event(&log[0]);
        assert!(line.starts_with(r#"{"session_id":""#), "{line}");
        assert!(line.contains(r#""seq":0,"seed":3,"mission_id":-1"#));
        assert_eq!(log[0].event_type, EventType::SessionStart);
    }

    #[test]
    fn round_trip_and_count() {
        let log = logged(3, 5);
        let text = serialize_log(&log);
        let parsed = parse_log(&text).unwrap();
        assert_eq!(parsed, log);
        assert_eq!(text.lines().count(), log.len());
    }

    #[test]
    fn seq_gap_is_reported_by_line() {
        let log = logged(1, 1);
        let mut lines: Vec<String> = log.iter().take(4).map(serialize_event).collect();
        lines.remove(2);
        let err = parse_log(&lines.join("\n")).unwrap_err();
        assert_eq!(err.to_string(), "seq gap at line 3");
    }

    #[test]
    fn action_before_prompt_is_rejected() {
        let log = logged(1, 1);
        let mut bad = vec![log[0].clone(), log[2].clone()];
        bad[1].seq = 1;
        let err = parse_log(&serialize_log(&bad)).unwrap_err();
        assert_eq!(err.line, 2);
        assert!(
            matches!(err.kind, LogErrorKind::Alternation { .. }),
            "{err}"
        );
    }

    #[test]
    fn unknown_event_type_and_floats_are_rejected() {
        let log = logged(1, 1);
        let line = serialize_event(&log[0]).replace("SESSION_START", "SESSION_BEGIN");
        assert_eq!(
            parse_event(&line),
            Err(LogErrorKind::UnknownEventType("SESSION_BEGIN".into()))
        );
        let line = serialize_event(&log[1]).replace(r#""t_ms":0"#, r#""t_ms":0.5"#);
        assert_eq!(parse_event(&line), Err(LogErrorKind::FloatInLog));
        assert!(matches!(parse_event("{"), Err(LogErrorKind::Malformed(_))));
    }

    #[test]
    fn truncated_log_needs_prefix_parser() {
        let log = logged(1, 2);
        let text = serialize_log(&log[..10]);
        assert_eq!(parse_log(&text).unwrap_err().kind, LogErrorKind::Truncated);
        assert_eq!(parse_log_prefix(&text).unwrap().len(), 10);
    }

    #[test]
    fn replay_is_exact_and_pure() {
        let log = logged(3, 8);
        let a = replay(&log).unwrap();
        let b = replay(&log).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.events, log);
        assert_eq!(Some(a.score), log.last().unwrap().score());
        assert_eq!(a.records.len(), 120);
    }

    #[test]
    fn tampered_stimulus_diverges_at_its_seq() {
        let mut log = logged(2, 4);
        let target = log
            .iter()
            .position(|e| e.event_type == EventType::Prompt && e.trial_index == 5)
            .unwrap();
        let digit = &mut log[target].payload["prompt"]["trial"]["stimulus"]["digit"];
        let d = digit.as_u64().unwrap();
        *digit = Value::from(if d == 1 { 2 } else { 1 });
        assert_eq!(
            replay(&log),
            Err(ReplayError::Divergence { seq: target as u64 })
        );
    }

    #[test]
    fn trials_view_row_count_and_determinism() {
        let log = logged(1, 6);
        let rep = replay(&log).unwrap();
        let block0: Vec<TrialRecord> = rep
            .records
            .iter()
            .filter(|r| r.address.block_index == 0)
            .cloned()
            .collect();
        let t = Table::Trials(vec![(log[0].session_id.as_str(), &block0)]);
        let a = export_csv(&t, View::Trials).unwrap();
        assert_eq!(a.lines().count(), 49);
        assert_eq!(a, export_csv(&t, View::Trials).unwrap());
        assert!(export_csv(&t, View::Switch).is_err());
    }

    #[test]
    fn switch_view_columns() {
        let log = logged(1, 6);
        let rep = replay(&log).unwrap();
        let s = switch_cost(&rep.records).unwrap();
        let csv = export_csv(&Table::Switch(vec![("s", &s)]), View::Switch).unwrap();
        assert!(csv.starts_with("session_id,d_rt_ms,d_acc,sem_rt_ms,sem_acc,n_switch,n_repeat\r\n"));
    }

    #[test]
    fn views_parse_case_insensitively() {
        assert_eq!("trust".parse::<View>().unwrap(), View::Trust);
        assert_eq!("FITS".parse::<View>().unwrap(), View::Fits);
        assert!(matches!(
            "PLOTS".parse::<View>(),
            Err(ExportError::UnknownView(_))
        ));
    }

    #[test]
    fn session_ids_are_uuids() {
        let id = session_id_for(42, 3);
        assert!(uuid::Uuid::parse_str(&id).is_ok());
        assert_eq!(id, session_id_for(42, 3));
        assert_ne!(id, session_id_for(42, 4));
    }
}
