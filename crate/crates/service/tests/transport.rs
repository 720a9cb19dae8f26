use std::net::SocketAddr;

use supertask_core::agents::Agent;
use supertask_core::logstore::{parse_log_prefix, serialize_log, LogErrorKind};
use supertask_core::sim::simulate_logged;
use supertask_core::{parse_log, replay, AgentConfig, AgentKind, SessionConfig};
use supertask_service::protocol::{FeedbackBody, HelloBody, PromptBody, SessionNewBody};
use supertask_service::{start, MessageKind, ServeConfig, Service, WireMessage};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;

struct Conn {
    lines: tokio::io::Lines<BufReader<OwnedReadHalf>>,
    write: OwnedWriteHalf,
}

impl Conn {
    async fn open(addr: SocketAddr) -> Conn {
        let stream = TcpStream::connect(addr).await.unwrap();
        stream.set_nodelay(true).unwrap();
        let (read, write) = stream.into_split();
        Conn {
            lines: BufReader::new(read).lines(),
            write,
        }
    }

    async fn send_raw(&mut self, line: &str) -> Vec<WireMessage> {
        self.write
            .write_all(format!("{line}\n").as_bytes())
            .await
            .unwrap();
        let request =
            serde_json::from_str::<WireMessage>(line).map_or(MessageKind::Error, |m| m.kind);
        let mut replies = Vec::new();
        loop {
            let line = self
                .lines
                .next_line()
                .await
                .unwrap()
                .expect("server closed the connection");
            let msg: WireMessage = serde_json::from_str(&line).unwrap();
            let done = msg.ends_batch(request);
            replies.push(msg);
            if done {
                return replies;
            }
        }
    }

    async fn send(&mut self, msg: &WireMessage) -> Vec<WireMessage> {
        self.send_raw(&serde_json::to_string(msg).unwrap()).await
    }
}

async fn service(log_dir: &std::path::Path, max_sessions: usize) -> Service {
    start(ServeConfig {
        host: "127.0.0.1".into(),
        port: 0,
        tcp_port: Some(0),
        max_sessions,
        log_dir: Some(log_dir.to_path_buf()),
    })
    .await
    .unwrap()
}

/// Plays a session over one connection for at most `stop_after` actions;
/// returns the last message seen.
async fn play(
    conn: &mut Conn,
    first: WireMessage,
    id: &str,
    agent: &mut (dyn Agent + Send),
    stop_after: usize,
) -> WireMessage {
    let mut prompt = first;
    let mut acted = 0;
    while prompt.kind == MessageKind::Prompt && acted < stop_after {
        let body: PromptBody = prompt.body_as().unwrap();
        let action = agent.act(&body.prompt);
        let replies = conn
            .send(&WireMessage::act(id, prompt.seq.unwrap(), &action))
            .await;
        for r in &replies {
            assert_ne!(r.kind, MessageKind::Error, "{r:?}");
            if r.kind == MessageKind::Feedback {
                agent.observe(&r.body_as::<FeedbackBody>().unwrap().feedback);
            }
        }
        prompt = replies.last().unwrap().clone();
        acted += 1;
    }
    prompt
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_clients_get_independent_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), 8).await;
    let addr = svc.tcp_addr().unwrap();
    let mut tasks = Vec::new();
    for seed in [10u64, 20, 30] {
        tasks.push(tokio::spawn(async move {
            let mut conn = Conn::open(addr).await;
            let hello = conn.send(&WireMessage::hello()).await;
            assert_eq!(hello[0].kind, MessageKind::Hello);
            let replies = conn
                .send(&WireMessage::session_new(&SessionNewBody {
                    seed: Some(seed),
                    missions: vec![1, 3],
                    ..Default::default()
                }))
                .await;
            let id = replies[0].session_id.clone().unwrap();
            let cfg = AgentConfig::new(AgentKind::PartnerBelief, seed);
            let end = play(
                &mut conn,
                replies[1].clone(),
                &id,
                cfg.build().as_mut(),
                usize::MAX,
            )
            .await;
            assert_eq!(end.kind, MessageKind::End);
            (id, seed, cfg)
        }));
    }
    let mut ids = Vec::new();
    for t in tasks {
        ids.push(t.await.unwrap());
    }
    let table = svc.table().clone();
    svc.shutdown().await.unwrap();
    for (id, seed, cfg) in ids {
        let text = std::fs::read_to_string(table.log_path(&id).unwrap()).unwrap();
        let offline = simulate_logged(
            &id,
            SessionConfig::for_missions(&[1, 3], seed).unwrap(),
            &cfg,
        )
        .unwrap();
        assert_eq!(serialize_log(offline.events()), text);
    }
}

#[tokio::test]
async fn resume_after_disconnect() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), 2).await;
    let addr = svc.tcp_addr().unwrap();
    let cfg = AgentConfig::new(AgentKind::HierQ, 3);
    let mut agent = cfg.build();

    let mut conn = Conn::open(addr).await;
    let replies = conn
        .send(&WireMessage::session_new(&SessionNewBody {
            seed: Some(77),
            missions: vec![2],
            ..Default::default()
        }))
        .await;
    let id = replies[0].session_id.clone().unwrap();
    let last = play(&mut conn, replies[1].clone(), &id, agent.as_mut(), 25).await;
    drop(conn);

    let mut conn = Conn::open(addr).await;
    let resumed = conn.send(&WireMessage::resume(&id)).await;
    assert_eq!(resumed.len(), 2);
    assert!(resumed[0].body_as::<HelloBody>().unwrap().resumed);
    assert_eq!(resumed[1], last);
    // The connection now defaults to the resumed session.
    let body: PromptBody = resumed[1].body_as().unwrap();
    let action = agent.act(&body.prompt);
    let mut act = WireMessage::act(&id, resumed[1].seq.unwrap(), &action);
    act.session_id = None;
    let replies = conn.send(&act).await;
    assert_eq!(replies[0].kind, MessageKind::Feedback);
    agent.observe(&replies[0].body_as::<FeedbackBody>().unwrap().feedback);
    let end = play(
        &mut conn,
        replies[1].clone(),
        &id,
        agent.as_mut(),
        usize::MAX,
    )
    .await;
    assert_eq!(end.kind, MessageKind::End);

    let offline =
        simulate_logged(&id, SessionConfig::for_missions(&[2], 77).unwrap(), &cfg).unwrap();
    assert_eq!(
        svc.table().log_text(&id).unwrap(),
        serialize_log(offline.events())
    );
    svc.shutdown().await.unwrap();
}

#[tokio::test]
async fn bad_lines_get_errors_and_keep_the_connection() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), 2).await;
    let mut conn = Conn::open(svc.tcp_addr().unwrap()).await;
    let r = conn.send_raw("this is not json").await;
    assert_eq!(r[0].kind, MessageKind::Error);
    let r = conn
        .send_raw(r#"{"kind":"ACT","seq":1,"body":{"type":"AVOID","rt_ms":1}}"#)
        .await;
    assert_eq!(r[0].kind, MessageKind::Error);
    let hello = conn.send(&WireMessage::hello()).await;
    let body: HelloBody = hello[0].body_as().unwrap();
    assert_eq!(
        (body.protocol, body.max_sessions, body.resumed),
        (1, 2, false)
    );
    svc.shutdown().await.unwrap();
}

#[tokio::test]
async fn shutdown_leaves_complete_replayable_logs() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), 4).await;
    let addr = svc.tcp_addr().unwrap();
    let mut conn = Conn::open(addr).await;
    let replies = conn
        .send(&WireMessage::session_new(&SessionNewBody {
            seed: Some(5),
            ..Default::default()
        }))
        .await;
    let id = replies[0].session_id.clone().unwrap();
    let mut agent = AgentConfig::new(AgentKind::Random, 5).build();
    let last = play(&mut conn, replies[1].clone(), &id, agent.as_mut(), 40).await;
    assert_eq!(last.kind, MessageKind::Prompt);
    let path = svc.table().log_path(&id).unwrap();
    svc.shutdown().await.unwrap();

    // The connection is closed by shutdown.
    assert!(conn.lines.next_line().await.unwrap().is_none());
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.ends_with('\n'));
    // Unfinished, so only a valid prefix; every line made it to disk.
    assert_eq!(parse_log(&text).unwrap_err().kind, LogErrorKind::Truncated);
    let events = parse_log_prefix(&text).unwrap();
    assert_eq!(replay(&events).unwrap().records.len(), 40);
}

#[tokio::test]
async fn bind_conflict_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), 1).await;
    let err = start(ServeConfig {
        port: svc.http_addr().port(),
        tcp_port: None,
        ..ServeConfig::default()
    })
    .await
    .err()
    .expect("port is taken");
    assert!(
        matches!(err, supertask_service::ServeError::Bind { .. }),
        "{err}"
    );
    svc.shutdown().await.unwrap();
}
