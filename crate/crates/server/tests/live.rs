use awac_core::allocator::{ApprovalPolicy, TaskKind};
use awac_core::env::AllocationAction;
use awac_core::session::{replay, SessionConfig, SessionSnapshot};
use awac_server::protocol::{ServerMessage, Sprite};
use awac_server::{serve, AppState, Created, Health, ServerConfig};
use futures::{SinkExt, StreamExt};
use std::io::BufReader;
use std::path::PathBuf;
use std::time::Duration;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

struct Server {
    base: String,
    ws_base: String,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
    log_dir: PathBuf,
    _dir: tempfile::TempDir,
}

async fn start_server() -> Server {
    let dir = tempfile::tempdir().unwrap();
    let log_dir = dir.path().join("logs");
    let state = AppState::new(ServerConfig::new(&log_dir));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(serve(listener, state, async {
        let _ = rx.await;
    }));
    Server {
        base: format!("http://{addr}"),
        ws_base: format!("ws://{addr}"),
        stop: Some(tx),
        task,
        log_dir,
        _dir: dir,
    }
}

fn quick_config(plan: Vec<TaskKind>) -> SessionConfig {
    SessionConfig {
        task_plan: plan,
        set_duration_s: 1.2,
        isa_window_s: 2.0,
        approval_window_s: 2.0,
        break_s: 0.2,
        abnormal_rate: 120.0,
        normal_rate: 30.0,
        object_dwell_s: 0.6,
        approval: ApprovalPolicy::Interactive,
        ..SessionConfig::default()
    }
}

async fn create(client: &reqwest::Client, srv: &Server, cfg: &SessionConfig, seed: u64) -> String {
    let resp = client
        .post(format!("{}/sessions", srv.base))
        .json(&serde_json::json!({ "config": cfg, "seed": seed }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 201);
    resp.json::<Created>().await.unwrap().session_id
}

async fn state(client: &reqwest::Client, srv: &Server, id: &str) -> SessionSnapshot {
    client
        .get(format!("{}/sessions/{id}/state", srv.base))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap()
}

/// Plays one operator: clicks every abnormal object, answers ISA with `isa`,
/// and answers approval prompts from `approvals` in order.
async fn play(url: String, isa: i32, approvals: Vec<bool>) -> Vec<ServerMessage> {
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let mut seen = Vec::new();
    let mut approvals = approvals.into_iter();
    while let Some(Ok(msg)) = ws.next().await {
        let Message::Text(text) = msg else { continue };
        let m: ServerMessage = serde_json::from_str(&text).unwrap();
        let reply = match &m {
            ServerMessage::ObjectSpawn {
                view,
                object_id,
                sprite: Sprite::Skeleton,
                ..
            } => Some(serde_json::json!({"type": "click", "view": view, "object_id": object_id})),
            ServerMessage::IsaPrompt { .. } => Some(serde_json::json!({"type": "isa_response", "score": isa})),
            ServerMessage::ApprovalPrompt { .. } => approvals
                .next()
                .map(|a| serde_json::json!({"type": "approval_decision", "accept": a})),
            _ => None,
        };
        let done = matches!(m, ServerMessage::SessionEnd { .. });
        seen.push(m);
        if let Some(r) = reply {
            ws.send(Message::Text(r.to_string().into())).await.unwrap();
        }
        if done {
            break;
        }
    }
    seen
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn health_reports_service_and_version() {
    let srv = start_server().await;
    let h: Health = reqwest::get(format!("{}/health", srv.base)).await.unwrap().json().await.unwrap();
    assert_eq!(h.service, "awac");
    assert_eq!(h.version, env!("CARGO_PKG_VERSION"));
    assert_eq!(h.schema_version, 1);
    let missing = reqwest::get(format!("{}/sessions/nope/state", srv.base)).await.unwrap();
    assert_eq!(missing.status(), 404);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn task_g_session_with_rejected_then_accepted_approval() {
    let srv = start_server().await;
    let client = reqwest::Client::new();
    let id = create(&client, &srv, &quick_config(vec![TaskKind::G]), 3).await;
    let url = |k: usize| format!("{}/sessions/{id}/ws?operator={k}&schema_version=1", srv.ws_base);
    let op0 = tokio::spawn(play(url(0), 2, vec![]));
    let op1 = tokio::spawn(play(url(1), -2, vec![false, true]));
    tokio::time::sleep(Duration::from_millis(200)).await;
    let resp = client.post(format!("{}/sessions/{id}/start", srv.base)).send().await.unwrap();
    assert_eq!(resp.status(), 200);

    let (m0, m1) = tokio::time::timeout(Duration::from_secs(30), async { (op0.await.unwrap(), op1.await.unwrap()) })
        .await
        .expect("session finishes");

    assert!(matches!(m0[0], ServerMessage::Hello { operator: 0, .. }));
    // only the operator gaining views is asked
    assert!(!m0.iter().any(|m| matches!(m, ServerMessage::ApprovalPrompt { .. })));
    assert_eq!(m1.iter().filter(|m| matches!(m, ServerMessage::ApprovalPrompt { .. })).count(), 2);
    assert_eq!(m0.iter().filter(|m| matches!(m, ServerMessage::IsaPrompt { .. })).count(), 2);

    let grids: Vec<AllocationAction> = m1
        .iter()
        .filter_map(|m| match m {
            ServerMessage::SetStart { .. } => Some(None),
            ServerMessage::ViewGrid { assignment, .. } => Some(Some(assignment.clone())),
            _ => None,
        })
        .collect::<Vec<_>>()
        .windows(2)
        .filter_map(|w| match w {
            [None, Some(a)] => Some(a.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(grids.len(), 3);
    assert_eq!(grids[0].views, vec![3, 3]);
    assert_eq!(grids[1].views, vec![3, 3], "rejected approval leaves the assignment");
    assert!(grids[2].views[1] > 3, "accepted approval moves views to operator 1");

    let snap = state(&client, &srv, &id).await;
    let log = client
        .get(format!("{}/sessions/{id}/log", srv.base))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    let out = replay(BufReader::new(log.as_bytes())).unwrap();
    assert!(out.finished);
    assert_eq!(out.ledger.team_total, snap.team_total);
    assert!(out.ledger.abnormal_hits > 0);
    let end_total = m0.iter().rev().find_map(|m| match m {
        ServerMessage::SessionEnd { team_total, .. } => Some(*team_total),
        _ => None,
    });
    assert_eq!(end_total, Some(snap.team_total));

    let on_disk = std::fs::read_to_string(srv.log_dir.join(format!("{id}.jsonl"))).unwrap();
    assert_eq!(on_disk, log);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_keep_independent_ledgers() {
    let srv = start_server().await;
    let client = reqwest::Client::new();
    let cfg = quick_config(vec![TaskKind::A]);
    let a = create(&client, &srv, &cfg, 1).await;
    let b = create(&client, &srv, &cfg, 2).await;
    let url = |id: &str, k: usize| format!("{}/sessions/{id}/ws?operator={k}", srv.ws_base);
    // session a has active players, session b runs unattended
    let pa0 = tokio::spawn(play(url(&a, 0), 0, vec![]));
    let pa1 = tokio::spawn(play(url(&a, 1), 0, vec![]));
    tokio::time::sleep(Duration::from_millis(200)).await;
    for id in [&a, &b] {
        client.post(format!("{}/sessions/{id}/start", srv.base)).send().await.unwrap();
    }
    tokio::time::timeout(Duration::from_secs(30), async {
        pa0.await.unwrap();
        pa1.await.unwrap();
    })
    .await
    .unwrap();
    loop {
        if state(&client, &srv, &b).await.phase == awac_core::session::SessionPhase::Finished {
            break;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    let sa = state(&client, &srv, &a).await;
    let sb = state(&client, &srv, &b).await;
    assert!(sa.team_total > 0);
    assert_eq!(sb.team_total, 0);
    for id in [&a, &b] {
        let text = std::fs::read_to_string(srv.log_dir.join(format!("{id}.jsonl"))).unwrap();
        let out = replay(BufReader::new(text.as_bytes())).unwrap();
        assert!(out.finished);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn shutdown_mid_session_leaves_replayable_log() {
    let mut srv = start_server().await;
    let client = reqwest::Client::new();
    let mut cfg = quick_config(vec![TaskKind::H, TaskKind::A]);
    cfg.set_duration_s = 30.0;
    let id = create(&client, &srv, &cfg, 5).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("{}/sessions/{id}/ws?operator=0", srv.ws_base))
        .await
        .unwrap();
    client.post(format!("{}/sessions/{id}/start", srv.base)).send().await.unwrap();
    let mut clicked = false;
    while let Some(Ok(Message::Text(text))) = ws.next().await {
        if let ServerMessage::ObjectSpawn { view, object_id, .. } = serde_json::from_str(&text).unwrap() {
            let msg = serde_json::json!({"type": "click", "view": view, "object_id": object_id});
            ws.send(Message::Text(msg.to_string().into())).await.unwrap();
            clicked = true;
        }
        if let ServerMessage::ScoreUpdate { .. } = serde_json::from_str(&text).unwrap() {
            break;
        }
    }
    assert!(clicked);
    let live = state(&client, &srv, &id).await;
    srv.stop.take().unwrap().send(()).unwrap();
    tokio::time::timeout(Duration::from_secs(10), &mut srv.task)
        .await
        .expect("graceful shutdown")
        .unwrap()
        .unwrap();
    let text = std::fs::read_to_string(srv.log_dir.join(format!("{id}.jsonl"))).unwrap();
    let out = replay(BufReader::new(text.as_bytes())).unwrap();
    assert!(!out.finished);
    assert_eq!(out.ledger.team_total, live.team_total);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn rejects_bad_schema_and_operator() {
    let srv = start_server().await;
    let client = reqwest::Client::new();
    let id = create(&client, &srv, &quick_config(vec![TaskKind::A]), 0).await;
    for q in ["operator=0&schema_version=99", "operator=7"] {
        let err = tokio_tungstenite::connect_async(format!("{}/sessions/{id}/ws?{q}", srv.ws_base)).await;
        assert!(err.is_err(), "{q}");
    }
    let bad = client
        .post(format!("{}/sessions", srv.base))
        .json(&serde_json::json!({ "config": { "set_duration_s": -1.0 } }))
        .send()
        .await
        .unwrap();
    assert_eq!(bad.status(), 400);
    let survey = client
        .post(format!("{}/sessions/{id}/survey", srv.base))
        .json(&serde_json::json!({ "operator": 1, "kind": "NASA-TLX", "payload": {"mental": 55} }))
        .send()
        .await
        .unwrap();
    assert_eq!(survey.status(), 204);
    let pred = client
        .post(format!("{}/sessions/{id}/predictions", srv.base))
        .json(&serde_json::json!({ "operator": 0, "s_obj": 1.5 }))
        .send()
        .await
        .unwrap();
    assert_eq!(pred.status(), 400);
    let log = client
        .get(format!("{}/sessions/{id}/log", srv.base))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert!(log.contains(r#""kind":"NASA-TLX","payload":{"mental":55}"#));
}
