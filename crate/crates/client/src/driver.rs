use supertask_core::Agent;
use supertask_service::protocol::{
    EndBody, ErrorBody, FeedbackBody, PromptBody, SessionCreated, SessionNewBody,
};
use supertask_service::{MessageKind, WireMessage};

use crate::{ClientError, Exchange};

/// Outcome of a session played through the service.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayedSession {
    pub session_id: String,
    pub seed: u64,
    pub score: i64,
    pub n_trials: usize,
}

fn body<T: serde::de::DeserializeOwned>(msg: &WireMessage) -> Result<T, ClientError> {
    msg.body_as()
        .map_err(|e| ClientError::Protocol(format!("bad {:?} body: {e}", msg.kind)))
}

/// Opens a session and plays it to the end: each PROMPT goes to
/// `agent.act`, each FEEDBACK to `agent.observe`.
pub async fn play_session<E: Exchange>(
    conn: &mut E,
    new: &SessionNewBody,
    agent: &mut (dyn Agent + Send),
) -> Result<PlayedSession, ClientError> {
    let replies = conn.exchange(&WireMessage::session_new(new)).await?;
    let first = replies
        .first()
        .ok_or_else(|| ClientError::Protocol("empty reply".into()))?;
    if first.kind == MessageKind::Error {
        return Err(ClientError::Rejected(body(first)?));
    }
    let created: SessionCreated = body(first)?;
    let session_id = first
        .session_id
        .clone()
        .ok_or_else(|| ClientError::Protocol("SESSION_NEW reply without session id".into()))?;
    let mut last = replies.last().cloned().expect("non-empty");
    loop {
        match last.kind {
            MessageKind::Prompt => {
                let prompt: PromptBody = body(&last)?;
                let seq = last
                    .seq
                    .ok_or_else(|| ClientError::Protocol("PROMPT without seq".into()))?;
                let action = agent.act(&prompt.prompt);
                let replies = conn
                    .exchange(&WireMessage::act(&session_id, seq, &action))
                    .await?;
                for r in &replies {
                    match r.kind {
                        MessageKind::Feedback => agent.observe(&body::<FeedbackBody>(r)?.feedback),
                        MessageKind::Error => {
                            return Err(ClientError::Rejected(body::<ErrorBody>(r)?))
                        }
                        _ => {}
                    }
                }
                last = replies
                    .last()
                    .cloned()
                    .ok_or_else(|| ClientError::Protocol("empty reply".into()))?;
            }
            MessageKind::End => {
                let end: EndBody = body(&last)?;
                return Ok(PlayedSession {
                    session_id,
                    seed: created.seed,
                    score: end.score,
                    n_trials: end.n_trials,
                });
            }
            other => {
                return Err(ClientError::Protocol(format!(
                    "unexpected {other:?} while playing"
                )))
            }
        }
    }
}
