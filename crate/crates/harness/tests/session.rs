use std::time::Duration;

use futures_util::{SinkExt, Stream, StreamExt};
use gridmind::session;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

async fn start() -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(session::serve(listener));
    format!("127.0.0.1:{}", addr.port())
}

fn create_body(seed: u64, timeout_secs: u64) -> Value {
    json!({
        "seed": seed,
        "episode": { "mode": "active", "per_task": 1, "probe_every": 0, "budget": 3, "k": 4 },
        "timeout_secs": timeout_secs,
    })
}

async fn post(c: &Client, url: String, body: Value) -> (StatusCode, Value) {
    let r = c.post(url).json(&body).send().await.unwrap();
    let status = r.status();
    (status, r.json().await.unwrap_or(Value::Null))
}

async fn get(c: &Client, url: String) -> (StatusCode, Value) {
    let r = c.get(url).send().await.unwrap();
    let status = r.status();
    (status, r.json().await.unwrap_or(Value::Null))
}

/// A reply of the pending kind, as (route, body).
fn reply_for(expects: &str, turn: &mut u32) -> (&'static str, Value) {
    match expects {
        "ack" => ("ack", json!({})),
        "action" => {
            *turn += 1;
            ("action", json!({ "action": if *turn % 2 == 1 { "Observe" } else { "Rotate(90)" } }))
        }
        "map" => ("probe", json!({ "map": { "global": {} } })),
        "uncertainty" => ("probe", json!({ "selected": [] })),
        "changes" => ("changes", json!({ "claims": [] })),
        "answer" => ("answer", json!({ "text": "" })),
        other => panic!("unexpected kind {other}"),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn http_session_runs_to_scores() {
    let base = format!("http://{}", start().await);
    let c = Client::new();
    let (st, snap) = post(&c, format!("{base}/sessions"), create_body(0, 30)).await;
    assert_eq!(st, StatusCode::CREATED);
    let id = snap["id"].as_u64().unwrap();
    assert_eq!(snap["expects"], "ack");
    assert_eq!(snap["pending"]["type"], "briefing");

    let (st, b) = get(&c, format!("{base}/sessions/{id}/briefing")).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(b["object_names"].as_array().unwrap().len(), 12);
    assert_eq!(b["budget"], 3);

    // Out of turn: an action while the briefing awaits an ack.
    let (st, _) = post(&c, format!("{base}/sessions/{id}/action"), json!({ "action": "Observe" })).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _) = get(&c, format!("{base}/sessions/{id}/observation")).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _) = get(&c, format!("{base}/sessions/{id}/scores")).await;
    assert_eq!(st, StatusCode::CONFLICT);

    let (st, snap) = post(&c, format!("{base}/sessions/{id}/ack"), json!({})).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(snap["expects"], "action");
    let (st, snap) = post(&c, format!("{base}/sessions/{id}/action"), json!({ "action": "Observe" })).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(snap["pending"]["last"]["action"], "Observe");
    let (st, obs) = get(&c, format!("{base}/sessions/{id}/observation")).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(obs["turn"], 1);
    assert!(obs["outcome"].get("observation").is_some() || obs["outcome"]["type"] == "observation", "{obs}");

    let (st, _) = post(&c, format!("{base}/sessions/{id}/answer"), json!({ "text": "x" })).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _) = post(&c, format!("{base}/sessions/{id}/action"), json!({ "nope": 1 })).await;
    assert!(st.is_client_error() && st != StatusCode::CONFLICT);

    let mut turn = 1;
    let mut snap = snap;
    for _ in 0..200 {
        if snap["finished"] == true {
            break;
        }
        let (route, body) = reply_for(snap["expects"].as_str().unwrap(), &mut turn);
        let (st, next) = post(&c, format!("{base}/sessions/{id}/{route}"), body).await;
        assert_eq!(st, StatusCode::OK, "{next}");
        snap = next;
    }
    assert_eq!(snap["finished"], true);
    assert!(snap["error"].is_null());
    let (st, rec) = get(&c, format!("{base}/sessions/{id}/scores")).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(rec["answers"].as_array().unwrap().len(), 9);
    assert_eq!(rec["summary"]["steps"], 3);
    assert_eq!(rec["summary"]["timeouts"], 0);

    let (st, _) = post(&c, format!("{base}/sessions/{id}/ack"), json!({})).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _) = get(&c, format!("{base}/sessions/999/scores")).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_replies_have_a_single_winner() {
    let base = format!("http://{}", start().await);
    let c = Client::new();
    let (_, snap) = post(&c, format!("{base}/sessions"), create_body(1, 30)).await;
    let id = snap["id"].as_u64().unwrap();
    let url = format!("{base}/sessions/{id}/ack");
    let tasks: Vec<_> = (0..8).map(|_| tokio::spawn(post_owned(c.clone(), url.clone()))).collect();
    let mut ok = 0;
    for t in tasks {
        match t.await.unwrap() {
            StatusCode::OK => ok += 1,
            StatusCode::CONFLICT => {}
            s => panic!("{s}"),
        }
    }
    assert_eq!(ok, 1);
    let (_, snap) = get(&c, format!("{base}/sessions/{id}")).await;
    assert_eq!(snap["expects"], "action");
}

async fn post_owned(c: Client, url: String) -> StatusCode {
    c.post(url).json(&json!({})).send().await.unwrap().status()
}

#[tokio::test(flavor = "multi_thread")]
async fn silent_session_times_out_into_observe() {
    let base = format!("http://{}", start().await);
    let c = Client::new();
    let (_, snap) = post(&c, format!("{base}/sessions"), create_body(2, 1)).await;
    let id = snap["id"].as_u64().unwrap();
    post(&c, format!("{base}/sessions/{id}/ack"), json!({})).await;
    tokio::time::sleep(Duration::from_millis(1600)).await;
    let (st, obs) = get(&c, format!("{base}/sessions/{id}/observation")).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(obs["action"], "Observe");
}

#[tokio::test(flavor = "multi_thread")]
async fn websocket_drives_a_session_with_a_single_writer() {
    let host = start().await;
    let base = format!("http://{host}");
    let c = Client::new();
    let (_, snap) = post(&c, format!("{base}/sessions"), create_body(3, 30)).await;
    let id = snap["id"].as_u64().unwrap();
    let ws_url = format!("ws://{host}/sessions/{id}/ws");
    let (mut ws, _) = tokio_tungstenite::connect_async(&ws_url).await.unwrap();

    // A second socket and plain HTTP writers are both refused.
    match tokio_tungstenite::connect_async(&ws_url).await {
        Err(tokio_tungstenite::tungstenite::Error::Http(r)) => assert_eq!(r.status(), StatusCode::CONFLICT.as_u16()),
        other => panic!("second socket accepted: {:?}", other.map(|_| ())),
    }
    let (st, _) = post(&c, format!("{base}/sessions/{id}/ack"), json!({})).await;
    assert_eq!(st, StatusCode::CONFLICT);

    let first = recv(&mut ws).await.unwrap();
    assert_eq!(first["expects"], "ack");

    ws.send(Message::Text(json!({ "type": "answer", "text": "x" }).to_string().into())).await.unwrap();
    let err = recv(&mut ws).await.unwrap();
    assert_eq!(err["status"], 409);
    ws.send(Message::Text("not json".into())).await.unwrap();
    assert_eq!(recv(&mut ws).await.unwrap()["status"], 400);

    let mut turn = 0;
    let mut snap = first;
    let mut seen = 1;
    while snap["finished"] != true {
        let kind = snap["expects"].as_str().unwrap().to_string();
        let (_, body) = reply_for(&kind, &mut turn);
        let mut msg = body.as_object().unwrap().clone();
        msg.insert("type".into(), json!(kind));
        ws.send(Message::Text(Value::Object(msg).to_string().into())).await.unwrap();
        snap = recv(&mut ws).await.unwrap();
        assert!(snap.get("status").is_none(), "{snap}");
        seen += 1;
        assert!(seen < 200);
    }
    assert!(recv(&mut ws).await.is_none());
    let (st, rec) = get(&c, format!("{base}/sessions/{id}/scores")).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(rec["answers"].as_array().unwrap().len(), 9);
}

async fn recv<S>(ws: &mut S) -> Option<Value>
where
    S: Stream<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        match ws.next().await {
            Some(Ok(Message::Text(t))) => return Some(serde_json::from_str(&t).unwrap()),
            Some(Ok(Message::Close(_))) | None => return None,
            Some(Ok(_)) => continue,
            Some(Err(e)) => panic!("{e}"),
        }
    }
}
