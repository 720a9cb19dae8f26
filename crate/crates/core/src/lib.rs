//! Task engine, generative agents, analytics and model fitting for a
//! three-mission rule-switching, rule-learning and partner-trust game.
//!
//! Everything here is synchronous and deterministic given a seed. The
//! `service` crate exposes [`engine::SessionState`] over the wire.

pub mod agents;
pub mod analytics;
pub mod ddm;
pub mod domain;
pub mod engine;
pub mod fitting;
pub mod logstore;
pub mod optim;
pub mod sim;

pub use agents::{Agent, AgentConfig, AgentKind};
pub use domain::{Address, MissionSpec, Rule};
pub use engine::{PlayerAction, Prompt, PromptView, SessionConfig, SessionState, TrialRecord};
pub use logstore::{parse_log, replay, serialize_event, EventRecord, RecordedSession};
