//! Drives agents through sessions in-process.

use crate::agents::{Agent, AgentConfig};
use crate::engine::{ConfigError, SessionConfig, SessionState, TrialRecord};
use crate::logstore::RecordedSession;

/// Plays until the session ends. Agents must only emit legal actions.
pub fn play(state: &mut SessionState, agent: &mut dyn Agent) {
    while !state.is_finished() {
        let view = state.pending_prompt().view();
        let action = agent.act(&view);
        let out = state
            .submit_action(action)
            .unwrap_or_else(|e| panic!("agent emitted an illegal action: {e}"));
        if let Some(fb) = out.feedback {
            agent.observe(&fb);
        }
    }
}

pub fn simulate_records(
    config: SessionConfig,
    agent: &AgentConfig,
) -> Result<Vec<TrialRecord>, ConfigError> {
    let mut state = SessionState::new(config)?;
    play(&mut state, agent.build().as_mut());
    Ok(state.into_records())
}

/// As [`play`], recording the full event log.
pub fn simulate_logged(
    session_id: &str,
    config: SessionConfig,
    agent: &AgentConfig,
) -> Result<RecordedSession, ConfigError> {
    let mut session = RecordedSession::start(session_id, config)?;
    let mut agent = agent.build();
    while !session.state().is_finished() {
        let view = session.state().pending_prompt().view();
        let action = agent.act(&view);
        let out = session
            .apply(action)
            .unwrap_or_else(|e| panic!("agent emitted an illegal action: {e}"));
        if let Some(fb) = out.feedback {
            agent.observe(&fb);
        }
    }
    Ok(session)
}

/// SplitMix64 mixing of a base seed with a list of indices.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base;
    for &p in parts {
        x ^= p
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(x << 6)
            .wrapping_add(x >> 2);
        x = splitmix(x);
    }
    splitmix(x)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentKind;
    use crate::engine::ActionKind;

    #[test]
    fn every_agent_finishes_a_full_session_legally() {
        for kind in AgentKind::ALL {
            let recs = simulate_records(
                SessionConfig::default_session(11),
                &AgentConfig::new(kind, 3),
            )
            .unwrap();
            assert_eq!(recs.len(), 444, "{kind}");
            for r in &recs {
                if let Some(k) = r.offer_response() {
                    assert!(matches!(k, ActionKind::Avoid | ActionKind::Engage));
                }
            }
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, &[0, 1]);
        assert_eq!(a, derive_seed(7, &[0, 1]));
        assert_ne!(a, derive_seed(7, &[1, 0]));
        assert_ne!(a, derive_seed(8, &[0, 1]));
    }
}
