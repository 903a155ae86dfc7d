use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use lastmeter_core::fixtures;
use lastmeter_core::orchestrator::Ports;
use lastmeter_core::{LiveSession, UserPrefs};
use lastmeter_server::client::{parse_script, run_script, to_jsonl, ScriptClient};
use lastmeter_server::{router, serve, AppState, Poi, GOLDEN_EPOCH};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tower::ServiceExt;


fn state() -> Arc<AppState> {
    let poi = Poi::new(fixtures::golden_square(), fixtures::GOLDEN_SQUARE_ANNOTATIONS).unwrap();
    Arc::new(AppState::new(vec![poi], Ports::default(), Some(GOLDEN_EPOCH)))
}

async fn spawn_server(st: Arc<AppState>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, st));
    format!("127.0.0.1:{}", addr.port())
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/golden").join(name)
}

fn script() -> Vec<Value> {
    parse_script(&std::fs::read_to_string(data("headless_script.jsonl")).unwrap()).unwrap()
}

fn check_golden(name: &str, frames: &[Value]) {
    let text = to_jsonl(frames);
    let path = data(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &text).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden {}; run with UPDATE_GOLDEN=1", path.display()));
    for (i, (a, b)) in text.lines().zip(want.lines()).enumerate() {
        assert_eq!(a, b, "{name}: frame {i} differs");
    }
    assert_eq!(text.lines().count(), want.lines().count(), "{name}: frame count");
}

#[tokio::test(flavor = "multi_thread")]
async fn headless_flow_matches_golden() {
    let st = state();
    let addr = spawn_server(st.clone()).await;
    let frames = run_script(&format!("ws://{addr}/ws?poi=golden_square&user=alice"), &script()).await.unwrap();

    let types: Vec<&str> = frames.iter().map(|f| f["type"].as_str().unwrap()).collect();
    for (i, f) in frames.iter().enumerate() {
        assert_eq!(f["v"], 1);
        assert_eq!(f["seq"], i as u64);
    }
    for t in ["state", "reply", "route", "instruction", "compass", "annotation_trigger", "prompt", "playback", "vibration", "prefs_update", "error"] {
        assert!(types.contains(&t), "no {t} frame");
    }
    let ops: Vec<&str> = frames
        .iter()
        .filter(|f| f["type"] == "reply")
        .flat_map(|f| f["actions"].as_array().unwrap().iter())
        .filter_map(|a| a["op"].as_str())
        .collect();
    assert_eq!(ops, ["created", "edited", "deleted"]);
    assert_eq!(frames[frames.len() - 2]["kind"], "schema");
    let after_prefs = frames.iter().skip_while(|f| f["type"] != "prefs_update");
    let turn = after_prefs.filter(|f| f["type"] == "instruction").next().expect("instruction after prefs");
    assert!(turn["text"].as_str().unwrap().contains(" steps"), "{}", turn["text"]);
    check_golden("headless_flow.jsonl", &frames);

    // the deleted note is gone from the shared store
    let store = st.pois["golden_square"].store.read().unwrap();
    assert!(store.all().iter().all(|a| a.author != "alice"));
}

#[tokio::test(flavor = "multi_thread")]
async fn server_is_a_thin_adapter() {
    let addr = spawn_server(state()).await;
    let via_ws = run_script(&format!("ws://{addr}/ws?poi=golden_square&user=alice"), &script()).await.unwrap();

    let (mut s, first) = LiveSession::open("s1", fixtures::golden_world(), "alice", UserPrefs::default(), GOLDEN_EPOCH);
    let mut direct: Vec<Value> = first.iter().map(|m| serde_json::to_value(m).unwrap()).collect();
    for f in script() {
        direct.extend(s.handle_text(&f.to_string()).iter().map(|m| serde_json::to_value(m).unwrap()));
    }
    assert_eq!(via_ws, direct);
}

#[tokio::test(flavor = "multi_thread")]
async fn sessions_share_the_store() {
    let addr = spawn_server(state()).await;
    let (mut a, _) = ScriptClient::connect(&format!("ws://{addr}/ws?poi=golden_square&user=alice")).await.unwrap();
    let (mut b, first) = ScriptClient::connect(&format!("ws://{addr}/ws?poi=golden_square&user=bob")).await.unwrap();
    assert_eq!(first[0]["session_id"], "s2");
    let r = a.send(&json!({"type": "query", "text": "Add a note here saying 'Bench wobbles'"})).await.unwrap();
    assert_eq!(r[0]["actions"][0]["op"], "created");

    let r = b.send(&json!({"type": "query", "text": "Delete the note about bench wobbles"})).await.unwrap();
    assert_eq!(r[0]["text"], "Only the author of that note can change it.");
    let r = b.send(&json!({"type": "query", "text": "Are there any notes nearby?"})).await.unwrap();
    assert!(r[0]["text"].as_str().unwrap().contains("Bench wobbles"), "{}", r[0]["text"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_poi_is_reported() {
    let addr = spawn_server(state()).await;
    let (_, first) = ScriptClient::connect(&format!("ws://{addr}/ws?poi=atlantis&user=alice")).await.unwrap();
    assert_eq!(first[0]["type"], "error");
    assert_eq!(first[0]["kind"], "unknown_poi");
}

async fn call(st: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = router(st.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), 1 << 24).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn rest_api() {
    let st = state();
    let (s, v) = call(&st, "GET", "/pois", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v[0]["id"], "golden_square");
    assert_eq!(v[0]["annotation_count"], 39);
    let (s, v) = call(&st, "GET", "/pois/golden_square", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["objects"].as_array().unwrap().len(), fixtures::golden_square().objects.len());
    assert_eq!(call(&st, "GET", "/pois/nowhere", None).await.0, StatusCode::NOT_FOUND);

    let (_, v) = call(&st, "GET", "/annotations?category=safety", None).await;
    assert_eq!(v.as_array().unwrap().len(), 12);
    let (_, v) = call(&st, "GET", "/annotations?text=statue", None).await;
    assert!(!v.as_array().unwrap().is_empty());
    let (_, v) = call(&st, "GET", "/annotations?x=0&y=-19.2&radius=2", None).await;
    assert_eq!(v[0]["id"], "ann_07");
    assert_eq!(call(&st, "GET", "/annotations?radius=2", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&st, "GET", "/annotations?category=gossip", None).await.0, StatusCode::BAD_REQUEST);

    let body = json!({"author": "carol", "text": "Watch out, loose cable!", "anchor": {"point": [3.0, -15.0]}});
    let (s, created) = call(&st, "POST", "/annotations", Some(body)).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(created["category"], "safety");
    let id = created["id"].as_str().unwrap().to_string();
    let (s, got) = call(&st, "GET", &format!("/annotations/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(got, created);

    let (s, _) = call(&st, "PATCH", &format!("/annotations/{id}"), Some(json!({"author": "mallory", "text": "x"}))).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = call(&st, "PATCH", &format!("/annotations/{id}"), Some(json!({"author": "carol", "text": " "}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = call(&st, "PATCH", &format!("/annotations/{id}"), Some(json!({"author": "carol", "text": "Cable removed", "category": "layout"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((v["text"].as_str(), v["category"].as_str()), (Some("Cable removed"), Some("layout")));
    assert_eq!(call(&st, "PATCH", "/annotations/ann_99", Some(json!({"author": "carol", "text": "y"}))).await.0, StatusCode::NOT_FOUND);

    let bad = json!({"author": "carol", "text": "hi", "anchor": {"object": "unicorn"}});
    assert_eq!(call(&st, "POST", "/annotations", Some(bad)).await.0, StatusCode::BAD_REQUEST);
    let bad = json!({"author": "carol", "text": "hi", "anchor": {"point": [0, 0]}, "mood": 1});
    let (s, v) = call(&st, "POST", "/annotations", Some(bad)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("mood"));

    assert_eq!(call(&st, "DELETE", &format!("/annotations/{id}"), None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&st, "DELETE", &format!("/annotations/{id}?author=mallory"), None).await.0, StatusCode::FORBIDDEN);
    assert_eq!(call(&st, "DELETE", &format!("/annotations/{id}?author=carol"), None).await.0, StatusCode::OK);
    assert_eq!(call(&st, "GET", &format!("/annotations/{id}"), None).await.0, StatusCode::NOT_FOUND);
}
