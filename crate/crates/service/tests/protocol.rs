use serde_json::json;
use supertask_core::agents::Agent;
use supertask_core::domain::ResponseSide;
use supertask_core::engine::ActionKind;
use supertask_core::logstore::serialize_log;
use supertask_core::sim::simulate_logged;
use supertask_core::{parse_log, replay, AgentConfig, AgentKind, PlayerAction, SessionConfig};
use supertask_service::protocol::{ErrorBody, FeedbackBody, PromptBody, SessionNewBody};
use supertask_service::{ErrorCode, MessageKind, SessionTable, TableConfig, WireMessage};

fn table(max_sessions: usize, log_dir: Option<std::path::PathBuf>) -> SessionTable {
    SessionTable::new(TableConfig {
        max_sessions,
        log_dir,
    })
    .unwrap()
}

fn new_session(t: &SessionTable, seed: u64, missions: &[u32]) -> (String, WireMessage) {
    let replies = t.handle(WireMessage::session_new(&SessionNewBody {
        seed: Some(seed),
        missions: missions.to_vec(),
        ..Default::default()
    }));
    assert_eq!(replies.len(), 2, "{replies:?}");
    assert_eq!(replies[0].kind, MessageKind::SessionNew);
    let id = replies[0].session_id.clone().unwrap();
    (id, replies[1].clone())
}

fn error_code(replies: &[WireMessage]) -> ErrorCode {
    assert_eq!(replies.len(), 1, "{replies:?}");
    assert_eq!(replies[0].kind, MessageKind::Error);
    replies[0].body_as::<ErrorBody>().unwrap().code
}

/// Plays `agent` through the table; returns every server message.
fn drive(
    t: &SessionTable,
    id: &str,
    first: WireMessage,
    agent: &mut dyn Agent,
) -> Vec<WireMessage> {
    let mut seen = vec![first.clone()];
    let mut prompt = first;
    while prompt.kind == MessageKind::Prompt {
        let body: PromptBody = prompt.body_as().unwrap();
        let action = agent.act(&body.prompt);
        assert!(body.legal.contains(&action.kind()));
        let replies = t.handle(WireMessage::act(id, prompt.seq.unwrap(), &action));
        for r in &replies {
            if r.kind == MessageKind::Feedback {
                agent.observe(&r.body_as::<FeedbackBody>().unwrap().feedback);
            }
        }
        seen.extend(replies.iter().cloned());
        prompt = replies.last().unwrap().clone();
    }
    assert_eq!(prompt.kind, MessageKind::End);
    seen
}

#[test]
fn session_new_starts_at_mission1_trial0() {
    let t = table(4, None);
    let (id, prompt) = new_session(&t, 7, &[]);
    assert!(supertask_core::logstore::is_valid_session_id(&id));
    assert_eq!(prompt.kind, MessageKind::Prompt);
    assert_eq!(prompt.seq, Some(1));
    let body: PromptBody = prompt.body_as().unwrap();
    let a = body.prompt.trial().unwrap().address;
    assert_eq!((a.mission_id, a.block_index, a.trial_index), (1, 0, 0));
    assert_eq!(body.legal, vec![ActionKind::Respond]);
}

#[test]
fn stale_and_duplicate_seq_are_rejected_without_mutation() {
    let t = table(4, None);
    let (id, prompt) = new_session(&t, 7, &[1]);
    let act = PlayerAction::Respond {
        side: ResponseSide::Left,
        rt_ms: 500,
    };
    let seq = prompt.seq.unwrap();
    let before = t.fingerprint(&id).unwrap();
    let stale = t.handle(WireMessage::act(&id, seq + 5, &act));
    assert_eq!(error_code(&stale), ErrorCode::StaleSeq);
    assert_eq!(
        stale[0].body_as::<ErrorBody>().unwrap().expected_seq,
        Some(seq)
    );
    assert_eq!(t.fingerprint(&id).unwrap(), before);

    let ok = t.handle(WireMessage::act(&id, seq, &act));
    assert_eq!(ok[0].kind, MessageKind::Feedback);
    let after = t.fingerprint(&id).unwrap();
    let dup = t.handle(WireMessage::act(&id, seq, &act));
    assert_eq!(error_code(&dup), ErrorCode::StaleSeq);
    assert_eq!(t.fingerprint(&id).unwrap(), after);
}

#[test]
fn illegal_action_lists_legal_ones() {
    let t = table(4, None);
    let (id, prompt) = new_session(&t, 3, &[1]);
    let before = t.fingerprint(&id).unwrap();
    let replies = t.handle(WireMessage::act(
        &id,
        prompt.seq.unwrap(),
        &PlayerAction::Engage { rt_ms: 10 },
    ));
    assert_eq!(error_code(&replies), ErrorCode::IllegalAction);
    let body: ErrorBody = replies[0].body_as().unwrap();
    assert_eq!(body.legal, Some(vec![ActionKind::Respond]));
    assert_eq!(t.fingerprint(&id).unwrap(), before);
}

#[test]
fn malformed_and_unknown_messages() {
    let t = table(4, None);
    let (id, prompt) = new_session(&t, 3, &[1]);
    let before = t.fingerprint(&id).unwrap();
    assert_eq!(
        error_code(&t.handle_text("{not json")),
        ErrorCode::BadMessage
    );
    assert_eq!(
        error_code(&t.handle_text(r#"{"kind":"PROMPT"}"#)),
        ErrorCode::BadMessage
    );
    let bad_body = WireMessage::new(
        MessageKind::Act,
        Some(&id),
        prompt.seq,
        json!({"type": "JUMP"}),
    );
    assert_eq!(error_code(&t.handle(bad_body)), ErrorCode::BadMessage);
    let no_seq = WireMessage::new(
        MessageKind::Act,
        Some(&id),
        None,
        json!({"type":"RESPOND","side":"LEFT","rt_ms":1}),
    );
    assert_eq!(error_code(&t.handle(no_seq)), ErrorCode::BadMessage);
    let unknown = WireMessage::act(
        "00000000-0000-4000-8000-000000000000",
        1,
        &PlayerAction::Avoid { rt_ms: 1 },
    );
    assert_eq!(error_code(&t.handle(unknown)), ErrorCode::NotFound);
    assert_eq!(
        error_code(&t.handle(WireMessage::resume("nope"))),
        ErrorCode::NotFound
    );
    assert_eq!(t.fingerprint(&id).unwrap(), before);
}

#[test]
fn config_errors_and_capacity() {
    let t = table(1, None);
    let bad = t.handle(WireMessage::session_new(&SessionNewBody {
        missions: vec![9],
        ..Default::default()
    }));
    assert_eq!(error_code(&bad), ErrorCode::BadConfig);
    let mut cfg = SessionConfig::default_session(1);
    cfg.missions[0].blocks.clear();
    let bad = t.handle(WireMessage::session_new(&SessionNewBody {
        config: Some(cfg),
        ..Default::default()
    }));
    assert_eq!(error_code(&bad), ErrorCode::BadConfig);
    let bad_id = t.handle(WireMessage::session_new(&SessionNewBody {
        session_id: Some("not-a-uuid".into()),
        ..Default::default()
    }));
    assert_eq!(error_code(&bad_id), ErrorCode::BadMessage);

    new_session(&t, 1, &[1]);
    let full = t.handle(WireMessage::session_new(&SessionNewBody::default()));
    assert_eq!(error_code(&full), ErrorCode::Capacity);
}

#[test]
fn finished_sessions_free_capacity_and_report_end() {
    let t = table(1, None);
    let (id, first) = new_session(&t, 11, &[1]);
    let mut agent = AgentConfig::new(AgentKind::Random, 1).build();
    drive(&t, &id, first, agent.as_mut());
    assert_eq!(t.active_sessions(), 0);
    let resumed = t.handle(WireMessage::resume(&id));
    assert_eq!(resumed[1].kind, MessageKind::End);
    let late = t.handle(WireMessage::act(&id, 3, &PlayerAction::Avoid { rt_ms: 1 }));
    assert_eq!(error_code(&late), ErrorCode::StaleSeq);
    new_session(&t, 12, &[1]);
}

#[test]
fn scripted_session_log_parses_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let t = table(4, Some(dir.path().to_path_buf()));
    let (id, first) = new_session(&t, 42, &[]);
    let agent_cfg = AgentConfig::new(AgentKind::PartnerBelief, 5);
    let messages = drive(&t, &id, first, agent_cfg.build().as_mut());

    let text = std::fs::read_to_string(t.log_path(&id).unwrap()).unwrap();
    assert_eq!(text, t.log_text(&id).unwrap());
    let events = parse_log(&text).unwrap();
    let r = replay(&events).unwrap();
    assert_eq!(r.records.len(), 444);
    let end = messages.last().unwrap();
    assert_eq!(end.body["score"], json!(r.score));

    // The served session is the offline simulation of the same agent.
    let offline = simulate_logged(&id, SessionConfig::default_session(42), &agent_cfg).unwrap();
    assert_eq!(serialize_log(offline.events()), text);
}

#[test]
fn server_messages_never_carry_hidden_fields() {
    let t = table(4, None);
    let (id, first) = new_session(&t, 8, &[]);
    let messages = drive(
        &t,
        &id,
        first,
        AgentConfig::new(AgentKind::HierQ, 2).build().as_mut(),
    );
    for m in &messages {
        let text = serde_json::to_string(m).unwrap();
        for hidden in ["true_rule", "p_correct", "partner_type", "\"partner\""] {
            assert!(!text.contains(hidden), "{hidden} leaked in {text}");
        }
        if let Ok(p) = m.body_as::<PromptBody>() {
            if let Some(trial) = p.prompt.trial() {
                if trial.mission_kind != supertask_core::domain::MissionKind::CuedSwitch {
                    assert!(trial.signaled_rule.is_none());
                }
            }
        }
    }
}

#[test]
fn reply_stream_is_a_function_of_config_seed_and_actions() {
    let run = || {
        let t = table(4, None);
        let (id, first) = new_session(&t, 99, &[2, 3]);
        drive(
            &t,
            &id,
            first,
            AgentConfig::new(AgentKind::HierQ, 4).build().as_mut(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn interleaved_sessions_do_not_affect_each_other() {
    let solo = {
        let t = table(4, None);
        let (id, first) = new_session(&t, 1, &[1]);
        drive(
            &t,
            &id,
            first,
            AgentConfig::new(AgentKind::Random, 1).build().as_mut(),
        );
        t.log_text(&id).unwrap()
    };
    let t = table(4, None);
    let (a, pa) = new_session(&t, 1, &[1]);
    let (b, pb) = new_session(&t, 2, &[1]);
    let ids = [a.clone(), b.clone()];
    let mut prompts = [pa, pb];
    let mut agents = [
        AgentConfig::new(AgentKind::Random, 1).build(),
        AgentConfig::new(AgentKind::Random, 2).build(),
    ];
    while prompts.iter().any(|p| p.kind == MessageKind::Prompt) {
        for (i, p) in prompts.iter_mut().enumerate() {
            if p.kind != MessageKind::Prompt {
                continue;
            }
            let body: PromptBody = p.body_as().unwrap();
            let action = agents[i].act(&body.prompt);
            let replies = t.handle(WireMessage::act(&ids[i], p.seq.unwrap(), &action));
            for r in &replies {
                if r.kind == MessageKind::Feedback {
                    agents[i].observe(&r.body_as::<FeedbackBody>().unwrap().feedback);
                }
            }
            *p = replies.last().unwrap().clone();
        }
    }
    assert_eq!(t.log_text(&a).unwrap(), solo);
    assert!(parse_log(&t.log_text(&b).unwrap()).is_ok());
}
