//! Session table: the synchronous core of the protocol.
//!
//! Each session sits behind its own mutex, so messages for one session are
//! applied in arrival order while different sessions proceed in parallel.
//! Every error reply leaves the session untouched.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use supertask_core::engine::ProtocolError;
use supertask_core::logstore::{is_valid_session_id, session_id_for};
use supertask_core::sim::derive_seed;
use supertask_core::{serialize_event, PlayerAction, RecordedSession, SessionConfig};

use crate::protocol::{
    EndBody, ErrorBody, ErrorCode, FeedbackBody, HelloBody, MessageKind, PromptBody,
    SessionCreated, SessionNewBody, WireMessage, PROTOCOL_VERSION,
};

#[derive(Debug, Clone)]
pub struct TableConfig {
    /// Upper bound on unfinished sessions.
    pub max_sessions: usize,
    /// Where `<session_id>.jsonl` logs go; `None` keeps logs in memory only.
    pub log_dir: Option<PathBuf>,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            max_sessions: 64,
            log_dir: None,
        }
    }
}

struct Entry {
    session: RecordedSession,
    log: Option<File>,
    /// Events already written to `log`.
    written: usize,
}

impl Entry {
    fn persist(&mut self) -> io::Result<()> {
        let Some(file) = self.log.as_mut() else {
            self.written = self.session.events().len();
            return Ok(());
        };
        let pending = &self.session.events()[self.written..];
        if pending.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for e in pending {
            buf.push_str(&serialize_event(e));
            buf.push('\n');
        }
        // One write per batch keeps lines whole.
        file.write_all(buf.as_bytes())?;
        file.flush()?;
        self.written += pending.len();
        Ok(())
    }
}

struct Slot {
    finished: AtomicBool,
    entry: Mutex<Entry>,
}

impl Slot {
    fn lock(&self) -> MutexGuard<'_, Entry> {
        self.entry.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Default)]
struct Inner {
    sessions: HashMap<String, Arc<Slot>>,
    active: usize,
}

pub struct SessionTable {
    config: TableConfig,
    inner: Mutex<Inner>,
    nonce: AtomicU64,
}

fn error_reply(code: ErrorCode, msg: &WireMessage, message: impl Into<String>) -> Vec<WireMessage> {
    vec![WireMessage::error(
        code,
        msg.session_id.as_deref(),
        msg.seq,
        message,
    )]
}

fn prompt_message(session: &RecordedSession) -> WireMessage {
    let state = session.state();
    match session.pending_prompt_seq() {
        Some(seq) => {
            let prompt = state.pending_prompt().view();
            let legal = prompt.legal_actions().to_vec();
            WireMessage::new(
                MessageKind::Prompt,
                Some(session.session_id()),
                Some(seq),
                PromptBody {
                    prompt,
                    legal,
                    score: state.score(),
                },
            )
        }
        None => {
            let end_seq = session.events().last().map(|e| e.seq);
            WireMessage::new(
                MessageKind::End,
                Some(session.session_id()),
                end_seq,
                EndBody {
                    score: state.score(),
                    n_trials: state.records().len(),
                },
            )
        }
    }
}

impl SessionTable {
    pub fn new(config: TableConfig) -> io::Result<Self> {
        if let Some(dir) = &config.log_dir {
            fs::create_dir_all(dir)?;
        }
        Ok(SessionTable {
            config,
            inner: Mutex::new(Inner::default()),
            nonce: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &TableConfig {
        &self.config
    }

    fn inner(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn slot(&self, id: &str) -> Option<Arc<Slot>> {
        self.inner().sessions.get(id).cloned()
    }

    pub fn active_sessions(&self) -> usize {
        self.inner().active
    }

    pub fn log_path(&self, session_id: &str) -> Option<PathBuf> {
        self.config
            .log_dir
            .as_ref()
            .map(|d| d.join(format!("{session_id}.jsonl")))
    }

    /// Engine fingerprint and log length, for checking that errors do not
    /// mutate a session.
    pub fn fingerprint(&self, session_id: &str) -> Option<(u64, usize)> {
        let slot = self.slot(session_id)?;
        let e = slot.lock();
        Some((e.session.state().fingerprint(), e.session.events().len()))
    }

    /// Serialized log of a session, as far as it has been applied.
    pub fn log_text(&self, session_id: &str) -> Option<String> {
        let slot = self.slot(session_id)?;
        let e = slot.lock();
        Some(supertask_core::logstore::serialize_log(e.session.events()))
    }

    /// Parses one raw line or request body and handles it.
    pub fn handle_text(&self, text: &str) -> Vec<WireMessage> {
        match serde_json::from_str::<WireMessage>(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => vec![WireMessage::error(
                ErrorCode::BadMessage,
                None,
                None,
                format!("malformed message: {e}"),
            )],
        }
    }

    pub fn handle(&self, msg: WireMessage) -> Vec<WireMessage> {
        match msg.kind {
            MessageKind::Hello => self.hello(&msg),
            MessageKind::SessionNew => self.session_new(&msg),
            MessageKind::Act => self.act(&msg),
            other => error_reply(
                ErrorCode::BadMessage,
                &msg,
                format!("{other} is a server message; clients send HELLO, SESSION_NEW or ACT"),
            ),
        }
    }

    fn hello_body(&self, resumed: bool) -> HelloBody {
        HelloBody {
            server: "supertask".into(),
            protocol: PROTOCOL_VERSION,
            active_sessions: self.active_sessions(),
            max_sessions: self.config.max_sessions,
            resumed,
        }
    }

    fn hello(&self, msg: &WireMessage) -> Vec<WireMessage> {
        let Some(id) = msg.session_id.as_deref() else {
            return vec![WireMessage::new(
                MessageKind::Hello,
                None,
                None,
                self.hello_body(false),
            )];
        };
        let Some(slot) = self.slot(id) else {
            return error_reply(ErrorCode::NotFound, msg, format!("no session {id}"));
        };
        let e = slot.lock();
        vec![
            WireMessage::new(MessageKind::Hello, Some(id), None, self.hello_body(true)),
            prompt_message(&e.session),
        ]
    }

    fn fresh_seed(&self) -> u64 {
        let nanos = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos() as u64);
        derive_seed(nanos, &[self.nonce.fetch_add(1, Ordering::Relaxed)])
    }

    fn session_new(&self, msg: &WireMessage) -> Vec<WireMessage> {
        let body: SessionNewBody = if msg.body.is_null() {
            SessionNewBody::default()
        } else {
            match msg.body_as() {
                Ok(b) => b,
                Err(e) => {
                    return error_reply(
                        ErrorCode::BadMessage,
                        msg,
                        format!("bad SESSION_NEW body: {e}"),
                    )
                }
            }
        };
        let seed = body
            .seed
            .or(body.config.as_ref().map(|c| c.seed))
            .unwrap_or_else(|| self.fresh_seed());
        let config = match body.config {
            Some(c) => SessionConfig { seed, ..c },
            None => {
                let ids = if body.missions.is_empty() {
                    vec![1, 2, 3]
                } else {
                    body.missions.clone()
                };
                match SessionConfig::for_missions(&ids, seed) {
                    Some(c) => c,
                    None => {
                        return error_reply(
                            ErrorCode::BadConfig,
                            msg,
                            format!("unknown mission in {ids:?}"),
                        )
                    }
                }
            }
        };
        if let Some(id) = &body.session_id {
            if !is_valid_session_id(id) {
                return error_reply(
                    ErrorCode::BadMessage,
                    msg,
                    format!("session_id {id:?} is not a UUID"),
                );
            }
        }

        let mut inner = self.inner();
        if inner.active >= self.config.max_sessions {
            return error_reply(
                ErrorCode::Capacity,
                msg,
                format!("{} sessions already running", self.config.max_sessions),
            );
        }
        let id = match body.session_id {
            Some(id) if inner.sessions.contains_key(&id) => {
                return error_reply(
                    ErrorCode::BadMessage,
                    msg,
                    format!("session {id} already exists"),
                );
            }
            Some(id) => id,
            None => (0..)
                .map(|k| session_id_for(seed, k))
                .find(|id| !inner.sessions.contains_key(id))
                .expect("unbounded search"),
        };
        let session = match RecordedSession::start(&id, config.clone()) {
            Ok(s) => s,
            Err(e) => return error_reply(ErrorCode::BadConfig, msg, e.to_string()),
        };
        let log = match self.log_path(&id) {
            Some(path) => match OpenOptions::new().create_new(true).append(true).open(&path) {
                Ok(f) => Some(f),
                Err(e) => {
                    tracing::error!(path = %path.display(), "cannot create session log: {e}");
                    return error_reply(
                        ErrorCode::BadConfig,
                        msg,
                        format!("cannot create session log: {e}"),
                    );
                }
            },
            None => None,
        };
        let mut entry = Entry {
            session,
            log,
            written: 0,
        };
        if let Err(e) = entry.persist() {
            tracing::error!(session = %id, "log write failed: {e}");
        }
        let created = WireMessage::new(
            MessageKind::SessionNew,
            Some(&id),
            None,
            SessionCreated {
                seed,
                n_trials: config.n_trials(),
                missions: config.missions.iter().map(|m| m.mission_id).collect(),
            },
        );
        let prompt = prompt_message(&entry.session);
        inner.sessions.insert(
            id.clone(),
            Arc::new(Slot {
                finished: AtomicBool::new(false),
                entry: Mutex::new(entry),
            }),
        );
        inner.active += 1;
        tracing::info!(session = %id, seed, "session started");
        vec![created, prompt]
    }

    fn act(&self, msg: &WireMessage) -> Vec<WireMessage> {
        let Some(id) = msg.session_id.as_deref() else {
            return error_reply(ErrorCode::BadMessage, msg, "ACT requires a session_id");
        };
        let Some(slot) = self.slot(id) else {
            return error_reply(ErrorCode::NotFound, msg, format!("no session {id}"));
        };
        let action: PlayerAction = match msg.body_as() {
            Ok(a) => a,
            Err(e) => return error_reply(ErrorCode::BadMessage, msg, format!("bad ACT body: {e}")),
        };
        let Some(seq) = msg.seq else {
            return error_reply(
                ErrorCode::BadMessage,
                msg,
                "ACT requires the seq of the prompt it answers",
            );
        };
        let mut entry = slot.lock();
        let Some(expected) = entry.session.pending_prompt_seq() else {
            return error_reply(ErrorCode::StaleSeq, msg, "session is over");
        };
        if seq != expected {
            return vec![WireMessage::new(
                MessageKind::Error,
                Some(id),
                Some(seq),
                ErrorBody {
                    code: ErrorCode::StaleSeq,
                    message: format!(
                        "ACT answers prompt {seq}, but the pending prompt is {expected}"
                    ),
                    legal: None,
                    expected_seq: Some(expected),
                },
            )];
        }
        let before = entry.session.events().len();
        let outcome = match entry.session.apply(action) {
            Ok(o) => o,
            Err(e) => {
                let (code, legal) = match &e {
                    ProtocolError::IllegalAction { legal, .. } => {
                        (ErrorCode::IllegalAction, Some(legal.clone()))
                    }
                    ProtocolError::SessionOver => (ErrorCode::StaleSeq, None),
                };
                return vec![WireMessage::new(
                    MessageKind::Error,
                    Some(id),
                    Some(seq),
                    ErrorBody {
                        code,
                        message: e.to_string(),
                        legal,
                        expected_seq: None,
                    },
                )];
            }
        };
        if let Err(e) = entry.persist() {
            // The next successful write catches the file up.
            tracing::error!(session = %id, "log write failed: {e}");
        }
        let mut replies = Vec::new();
        if let Some(fb) = outcome.feedback {
            let fb_seq = entry.session.events()[before..]
                .iter()
                .find(|e| e.event_type == supertask_core::logstore::EventType::Feedback)
                .map(|e| e.seq);
            replies.push(WireMessage::new(
                MessageKind::Feedback,
                Some(id),
                fb_seq,
                FeedbackBody {
                    feedback: fb,
                    boundaries: outcome.boundaries.clone(),
                },
            ));
        }
        replies.push(prompt_message(&entry.session));
        if entry.session.state().is_finished() && !slot.finished.swap(true, Ordering::SeqCst) {
            drop(entry);
            let mut inner = self.inner();
            inner.active = inner.active.saturating_sub(1);
            tracing::info!(session = %id, "session finished");
        }
        replies
    }

    /// Forces every open log to stable storage.
    pub fn sync_logs(&self) -> io::Result<()> {
        let slots: Vec<Arc<Slot>> = self.inner().sessions.values().cloned().collect();
        for slot in slots {
            let mut e = slot.lock();
            e.persist()?;
            if let Some(f) = &e.log {
                f.sync_data()?;
            }
        }
        Ok(())
    }
}
