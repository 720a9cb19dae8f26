use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use supertask_core::{parse_log, replay};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_supertask"));
    c.env_remove("SUPERTASK_SERVER")
        .env_remove("SUPERTASK_OUT")
        .env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn simulate_writes_a_valid_log() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(
        &[
            "simulate",
            "--mission",
            "1",
            "--agent",
            "instructed_ddm",
            "--seed",
            "7",
            "--runs",
            "1",
        ],
        dir.path(),
    );
    assert!(stdout.contains("1 runs, mean score"), "{stdout}");
    let out = dir.path().join("out/simulate/seed-7");
    let text = std::fs::read_to_string(out.join("run-0000.jsonl")).unwrap();
    let r = replay(&parse_log(&text).unwrap()).unwrap();
    assert_eq!(r.records.len(), 144);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("run,session_id,seed,score,n_trials,accuracy\r\n"));
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn simulate_is_reproducible_and_honours_the_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--agent",
        "hier_q",
        "--params",
        "alpha=0.4",
        "beta=5",
        "--seed",
        "7",
        "--runs",
        "200",
    ];
    let first = bin()
        .args(args)
        .current_dir(dir.path())
        .env("SUPERTASK_OUT", "a")
        .output()
        .unwrap();
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let mut more = args.to_vec();
    more.extend(["--out", "b"]);
    ok(&more, dir.path());
    let a = files(&dir.path().join("a/simulate/seed-7"));
    assert_eq!(a.len(), 201);
    assert_eq!(a, files(&dir.path().join("b")));

    // A smaller rerun into the same directory leaves no stale logs behind.
    ok(
        &[
            "simulate", "--agent", "random", "--seed", "7", "--runs", "2", "--out", "b",
        ],
        dir.path(),
    );
    assert_eq!(files(&dir.path().join("b")).len(), 3);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["simulate", "--agent", "robot"][..],
        &["simulate", "--agent", "hier_q", "--params", "alpha=7"],
        &["simulate", "--agent", "hier_q", "--params", "gamma=1"],
        &["simulate", "--agent", "random", "--mission", "5"],
        &["simulate", "--agent", "random", "--runs", "0"],
        &["recover", "--grid", "alpha=0.1"],
        &["benchmark", "--agents", "random[beta"],
    ] {
        let out = run(args, dir.path());
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn analyze_reports_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "simulate",
            "--mission",
            "1",
            "--agent",
            "instructed_ddm",
            "--seed",
            "3",
            "--runs",
            "30",
            "--out",
            "runs",
        ],
        dir.path(),
    );

    let single = ok(
        &[
            "analyze",
            "--log",
            "runs/run-0000.jsonl",
            "--report",
            "switch",
            "--csv",
            "one",
        ],
        dir.path(),
    );
    assert!(
        single.contains("d_rt_ms") && single.contains("sem_rt_ms"),
        "{single}"
    );
    let switch = std::fs::read_to_string(dir.path().join("one/switch.csv")).unwrap();
    assert!(
        switch.starts_with("session_id,d_rt_ms,d_acc,sem_rt_ms,sem_acc,n_switch,n_repeat\r\n"),
        "{switch}"
    );
    assert_eq!(switch.lines().count(), 2);

    let all = ok(&["analyze", "--log", "runs", "--csv", "many"], dir.path());
    assert!(all.contains("ALL (within-subject SEM)"), "{all}");
    assert!(
        all.contains("30 sessions; per-session rows are in switch.csv"),
        "{all}"
    );
    let switch = std::fs::read_to_string(dir.path().join("many/switch.csv")).unwrap();
    assert_eq!(switch.lines().count(), 1 + 30 + 1);
    assert!(switch.lines().last().unwrap().starts_with("ALL,"));
    let trials = std::fs::read_to_string(dir.path().join("many/trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 30 * 144);
}

#[test]
fn corrupt_and_missing_logs_exit_3_with_location() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "simulate",
            "--mission",
            "2",
            "--agent",
            "random",
            "--seed",
            "1",
            "--runs",
            "1",
            "--out",
            "runs",
        ],
        dir.path(),
    );
    let path = dir.path().join("runs/run-0000.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.remove(6);
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();

    let out = run(&["analyze", "--log", "runs"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run-0000.jsonl:7:"), "{err}");

    let out = run(
        &["fit", "--log", "nowhere.jsonl", "--model", "qlearn"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    let out = run(&["analyze", "--log", "empty"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn fit_estimates_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "simulate",
            "--mission",
            "2",
            "--agent",
            "hier_q",
            "--params",
            "alpha=0.3",
            "beta=6",
            "--seed",
            "2",
            "--runs",
            "3",
            "--out",
            "m2",
        ],
        dir.path(),
    );
    ok(
        &[
            "simulate",
            "--mission",
            "3",
            "--agent",
            "partner_belief",
            "--seed",
            "2",
            "--runs",
            "1",
            "--out",
            "m3",
        ],
        dir.path(),
    );
    let stdout = ok(
        &[
            "fit", "--log", "m2", "--model", "qlearn", "--out", "fits.csv",
        ],
        dir.path(),
    );
    assert!(
        stdout.contains("alpha=") && stdout.contains("beta="),
        "{stdout}"
    );
    let csv = std::fs::read_to_string(dir.path().join("fits.csv")).unwrap();
    assert!(
        csv.starts_with("session_id,model,parameter,estimate,loglik"),
        "{csv}"
    );
    assert_eq!(csv.lines().count(), 1 + 3 * 2);

    // Wrong mission kind: a flagged row and still exit 0.
    let stdout = ok(
        &["fit", "--log", "m3", "--model", "ez", "--out", "ez.csv"],
        dir.path(),
    );
    assert!(stdout.contains("could not be fitted"), "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("ez.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().contains(",false,"), "{csv}");
}

#[test]
fn recover_is_reproducible_and_flags_single_replicates() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec![
            "recover",
            "--grid",
            "alpha=0.3;beta=4",
            "--trials",
            "150",
            "--reps",
            "1",
            "--seed",
            "5",
            "--out",
            out,
        ]
    };
    let stdout = ok(&args("r1"), dir.path());
    assert!(
        stdout.contains("sd undefined: fewer than two replicates"),
        "{stdout}"
    );
    ok(&args("r2"), dir.path());
    let a = std::fs::read(dir.path().join("r1/recovery.csv")).unwrap();
    assert_eq!(
        a,
        std::fs::read(dir.path().join("r2/recovery.csv")).unwrap()
    );
    let text = String::from_utf8(a).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let sd = header.iter().position(|h| *h == "sd").unwrap();
    for line in text.lines().skip(1) {
        assert_eq!(line.split(',').nth(sd), Some(""), "{line}");
    }
}

#[test]
fn benchmark_tables() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(
        &[
            "benchmark",
            "--agents",
            "random",
            "--missions",
            "1",
            "--runs",
            "5",
            "--out",
            "one",
        ],
        dir.path(),
    );
    assert!(stdout.contains("random"));
    let csv = std::fs::read_to_string(dir.path().join("one/benchmark.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    let args = [
        "benchmark",
        "--agents",
        "random,hier_q",
        "--missions",
        "2",
        "--runs",
        "200",
        "--seed",
        "4",
    ];
    let mut a1 = args.to_vec();
    a1.extend(["--out", "b1"]);
    let mut a2 = args.to_vec();
    a2.extend(["--out", "b2"]);
    ok(&a1, dir.path());
    ok(&a2, dir.path());
    let csv = std::fs::read_to_string(dir.path().join("b1/benchmark.csv")).unwrap();
    assert_eq!(
        csv,
        std::fs::read_to_string(dir.path().join("b2/benchmark.csv")).unwrap()
    );
    let score = |agent: &str| -> f64 {
        let row = csv
            .lines()
            .find(|l| l.starts_with(&format!("{agent},")))
            .unwrap();
        row.split(',').nth(3).unwrap().parse().unwrap()
    };
    assert!(score("hier_q") > score("random"), "{csv}");
}

struct Server {
    child: Child,
    http: String,
    ndjson: String,
}

fn spawn_server(cwd: &Path, extra: &[&str]) -> Server {
    let mut child = bin()
        .args(["serve", "--port", "0", "--tcp-port", "0"])
        .args(extra)
        .current_dir(cwd)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let mut field = |prefix: &str| {
        let line = lines.next().unwrap().unwrap();
        line.strip_prefix(prefix)
            .unwrap_or_else(|| panic!("{line}"))
            .to_string()
    };
    let http = field("http ");
    let ndjson = field("ndjson ");
    field("logs ");
    Server {
        child,
        http,
        ndjson,
    }
}

fn interrupt(server: &mut Server) -> std::process::ExitStatus {
    let status = Command::new("kill")
        .args(["-INT", &server.child.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    server.child.wait().unwrap()
}

#[test]
fn serve_hello_and_clean_interrupt() {
    let dir = tempfile::tempdir().unwrap();
    let mut server = spawn_server(dir.path(), &[]);
    let mut stream = std::net::TcpStream::connect(&server.ndjson).unwrap();
    stream
        .write_all(b"{\"kind\":\"HELLO\",\"body\":{}}\n")
        .unwrap();
    let mut line = String::new();
    BufReader::new(stream.try_clone().unwrap())
        .read_line(&mut line)
        .unwrap();
    let hello: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(hello["kind"], "HELLO");
    assert_eq!(hello["body"]["protocol"], 1);

    // Open a session and take a few steps, then interrupt mid-session.
    stream
        .write_all(b"{\"kind\":\"SESSION_NEW\",\"body\":{\"seed\":3,\"missions\":[1]}}\n")
        .unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut created = String::new();
    reader.read_line(&mut created).unwrap();
    let created: serde_json::Value = serde_json::from_str(&created).unwrap();
    let id = created["session_id"].as_str().unwrap().to_string();
    let mut prompt = String::new();
    reader.read_line(&mut prompt).unwrap();
    let seq = serde_json::from_str::<serde_json::Value>(&prompt).unwrap()["seq"]
        .as_u64()
        .unwrap();
    writeln!(
        stream,
        r#"{{"kind":"ACT","seq":{seq},"body":{{"type":"RESPOND","side":"LEFT","rt_ms":640}}}}"#
    )
    .unwrap();
    let mut feedback = String::new();
    reader.read_line(&mut feedback).unwrap();
    assert!(feedback.contains("FEEDBACK"), "{feedback}");
    reader.read_line(&mut feedback).unwrap();

    // A second CLI process uses the running service.
    ok(
        &[
            "--server",
            &server.http,
            "simulate",
            "--agent",
            "random",
            "--mission",
            "1",
            "--runs",
            "1",
            "--out",
            "remote",
        ],
        dir.path(),
    );

    let status = interrupt(&mut server);
    assert!(status.success(), "{status:?}");
    let log =
        std::fs::read_to_string(dir.path().join(format!("out/serve/logs/{id}.jsonl"))).unwrap();
    assert!(log.ends_with('\n'));
    let events = supertask_core::logstore::parse_log_prefix(&log).unwrap();
    assert_eq!(replay(&events).unwrap().records.len(), 1);
}

#[test]
fn serve_on_an_occupied_port_fails() {
    let dir = tempfile::tempdir().unwrap();
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = bin()
        .args(["serve", "--port", &port, "--no-tcp", "--log-dir"])
        .arg(PathBuf::from(dir.path()).join("logs"))
        .output()
        .unwrap();
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot bind"));
}

#[test]
fn unreachable_server_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "--server",
            "http://127.0.0.1:1",
            "simulate",
            "--agent",
            "random",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}
