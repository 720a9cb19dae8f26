//! Wire format shared by the NDJSON socket and `POST /v1/message`.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use supertask_core::engine::{ActionKind, Boundary, Feedback};
use supertask_core::PromptView;

/// Version reported in HELLO replies; bumped on incompatible changes.
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    Hello,
    SessionNew,
    Prompt,
    Act,
    Feedback,
    End,
    Error,
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageKind::Hello => "HELLO",
            MessageKind::SessionNew => "SESSION_NEW",
            MessageKind::Prompt => "PROMPT",
            MessageKind::Act => "ACT",
            MessageKind::Feedback => "FEEDBACK",
            MessageKind::End => "END",
            MessageKind::Error => "ERROR",
        })
    }
}

/// One protocol message. `body` depends on `kind`; see the README for
/// the per-kind schemas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireMessage {
    pub kind: MessageKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default)]
    pub body: Value,
}

impl WireMessage {
    pub fn new(
        kind: MessageKind,
        session_id: Option<&str>,
        seq: Option<u64>,
        body: impl Serialize,
    ) -> Self {
        WireMessage {
            kind,
            session_id: session_id.map(str::to_string),
            seq,
            body: serde_json::to_value(body).expect("protocol bodies serialize"),
        }
    }

    pub fn hello() -> Self {
        WireMessage::new(
            MessageKind::Hello,
            None,
            None,
            Value::Object(Default::default()),
        )
    }

    pub fn resume(session_id: &str) -> Self {
        WireMessage::new(
            MessageKind::Hello,
            Some(session_id),
            None,
            Value::Object(Default::default()),
        )
    }

    pub fn session_new(body: &SessionNewBody) -> Self {
        WireMessage::new(MessageKind::SessionNew, None, None, body)
    }

    pub fn act(session_id: &str, seq: u64, action: &supertask_core::PlayerAction) -> Self {
        WireMessage::new(MessageKind::Act, Some(session_id), Some(seq), action)
    }

    pub fn error(
        code: ErrorCode,
        session_id: Option<&str>,
        seq: Option<u64>,
        message: impl Into<String>,
    ) -> Self {
        WireMessage::new(
            MessageKind::Error,
            session_id,
            seq,
            ErrorBody {
                code,
                message: message.into(),
                legal: None,
                expected_seq: None,
            },
        )
    }

    pub fn body_as<T: serde::de::DeserializeOwned>(&self) -> Result<T, serde_json::Error> {
        T::deserialize(&self.body)
    }

    /// Whether this message closes the reply batch for a request. A batch
    /// always ends in PROMPT, END or ERROR, except that a HELLO without a
    /// session id is answered by a single HELLO.
    pub fn ends_batch(&self, request: MessageKind) -> bool {
        match self.kind {
            MessageKind::Prompt | MessageKind::End | MessageKind::Error => true,
            MessageKind::Hello => request == MessageKind::Hello && self.session_id.is_none(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    NotFound,
    IllegalAction,
    BadMessage,
    StaleSeq,
    Capacity,
    BadConfig,
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("unit variant");
        f.write_str(v.as_str().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legal: Option<Vec<ActionKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_seq: Option<u64>,
}

/// Body of a client SESSION_NEW. With no `config`, `missions` picks
/// default missions (all three when empty).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionNewBody {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missions: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<supertask_core::SessionConfig>,
    /// Caller-chosen session id (a UUID); derived from the seed otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

/// Server SESSION_NEW acknowledgement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub seed: u64,
    pub n_trials: u32,
    pub missions: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloBody {
    pub server: String,
    pub protocol: u32,
    pub active_sessions: usize,
    pub max_sessions: usize,
    #[serde(default)]
    pub resumed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBody {
    pub prompt: PromptView,
    pub legal: Vec<ActionKind>,
    pub score: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackBody {
    pub feedback: Feedback,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boundaries: Vec<Boundary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndBody {
    pub score: i64,
    pub n_trials: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn act_wire_shape() {
        let a = supertask_core::PlayerAction::Respond {
            side: supertask_core::domain::ResponseSide::Left,
            rt_ms: 525,
        };
        let m = WireMessage::act("x", 3, &a);
        assert_eq!(
            serde_json::to_value(&m).unwrap(),
            json!({"kind":"ACT","session_id":"x","seq":3,"body":{"type":"RESPOND","side":"LEFT","rt_ms":525}})
        );
    }

    #[test]
    fn unknown_fields_and_kinds_are_rejected() {
        assert!(serde_json::from_str::<WireMessage>(r#"{"kind":"HELLO","extra":1}"#).is_err());
        assert!(serde_json::from_str::<WireMessage>(r#"{"kind":"NOPE"}"#).is_err());
        let m: WireMessage = serde_json::from_str(r#"{"kind":"HELLO"}"#).unwrap();
        assert_eq!(m.body, Value::Null);
    }

    #[test]
    fn batch_ends() {
        let hello = WireMessage::hello();
        assert!(hello.ends_batch(MessageKind::Hello));
        assert!(!WireMessage::resume("s").ends_batch(MessageKind::Hello));
        let fb = WireMessage::new(MessageKind::Feedback, Some("s"), Some(1), json!({}));
        assert!(!fb.ends_batch(MessageKind::Act));
        assert!(
            WireMessage::error(ErrorCode::StaleSeq, None, None, "x").ends_batch(MessageKind::Act)
        );
        assert_eq!(ErrorCode::IllegalAction.to_string(), "ILLEGAL_ACTION");
    }
}
