use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use fogchain_api::{router_with, ApiService};
use fogchain_core::contracts::canonical;
use fogchain_core::device_sim::{registration_for, uniform_fleet};
use fogchain_core::ids::HOUR;
use fogchain_core::{Deployment, DeploymentConfig};

struct Harness {
    deployment: Deployment,
    service: Arc<ApiService>,
}

impl Harness {
    fn new(devices: usize) -> Harness {
        let config = DeploymentConfig { compression: None, ..DeploymentConfig::default() };
        let deployment = Deployment::new(config, uniform_fleet(devices, 7)).unwrap();
        let service = Arc::new(ApiService::new(deployment.shared().clone(), None));
        Harness { deployment, service }
    }

    fn app(&self) -> Router {
        router_with(self.service.clone(), Duration::from_millis(5))
    }

    async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
        let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
        let resp = self.app().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, value)
    }

    fn block(&mut self) {
        self.deployment.settle().unwrap();
    }

    fn registration(&self, index: usize) -> Value {
        let spec = self.deployment.gateway().spec(&fogchain_core::device_sim::fleet_device_id(index)).unwrap();
        serde_json::to_value(registration_for(index, &spec, 60)).unwrap()
    }

    async fn register(&mut self, index: usize) {
        let (status, _) = self.call("POST", "/devices", Some(self.registration(index))).await;
        assert_eq!(status, StatusCode::ACCEPTED);
    }
}

fn rule_a() -> Value {
    serde_json::to_value(canonical::policy_rule()).unwrap()
}

fn rule_b() -> Value {
    serde_json::to_value(canonical::policy_rule_b()).unwrap()
}

#[tokio::test]
async fn write_is_pending_until_a_block_confirms_it() {
    let mut h = Harness::new(1);
    let (status, ack) = h.call("POST", "/devices", Some(h.registration(0))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(ack["status"], "pending");
    let tx = ack["tx_id"].as_u64().unwrap();

    let (_, view) = h.call("GET", &format!("/tx/{tx}"), None).await;
    assert_eq!(view["status"], "pending");
    let (status, _) = h.call("GET", "/devices/dev-0001", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    h.block();
    let (_, view) = h.call("GET", &format!("/tx/{tx}"), None).await;
    assert_eq!(view["status"], "confirmed");
    assert_eq!(view["gas_used"], 137_200);
    assert_eq!(view["block_height"], 1);

    let (status, device) = h.call("GET", "/devices/dev-0001", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(device["block_height"], 1);
    assert_eq!(device["data"]["state"], "active");
    assert_eq!(device["data"]["ip_address"], "10.100.100.101");
    assert!(device["data"].get("credentials").is_none());
}

#[tokio::test]
async fn validation_and_lookup_errors() {
    let mut h = Harness::new(1);
    let (status, body) = h.call("GET", "/devices", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["data"], json!([]));

    h.register(0).await;
    h.block();
    let (status, body) = h.call("POST", "/devices", Some(h.registration(0))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "duplicate_device");

    let mut average = rule_a();
    average["threshold_type"] = json!("Average");
    let (status, _) = h.call("POST", "/devices/dev-0001/policies", Some(average)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = h.call("POST", "/devices", Some(json!({"device_id": "x"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = h.call("GET", "/devices/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = h.call("POST", "/devices/nope/policies", Some(rule_a())).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = h.call("DELETE", "/devices/dev-0001/policies/99", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = h.call("DELETE", "/devices/dev-0001/policies/abc", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = h.call("GET", "/tx/12345", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = h.call("GET", "/devices/dev-0001/history?from=10&to=5", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn policy_lifecycle_through_routes() {
    let mut h = Harness::new(1);
    h.register(0).await;
    h.block();
    for rule in [rule_a(), rule_b()] {
        let (status, _) = h.call("POST", "/devices/dev-0001/policies", Some(rule)).await;
        assert_eq!(status, StatusCode::ACCEPTED);
    }
    h.block();
    let (_, body) = h.call("GET", "/devices/dev-0001/policies", None).await;
    let rows = body["data"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["attribute"], "Attribute A");
    assert_eq!(rows[0]["threshold_type"], "Minimum");
    assert_eq!(rows[1]["attribute"], "Attribute B");
    assert_eq!(rows[1]["max_violations"], 10);

    let pid = rows[1]["policy_id"].as_u64().unwrap();
    let mut tighter = rule_b();
    tighter["threshold_value"] = json!(90.0);
    let (status, _) = h.call("PUT", &format!("/devices/dev-0001/policies/{pid}"), Some(tighter)).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    h.block();
    let (_, body) = h.call("GET", "/devices/dev-0001/policies", None).await;
    assert_eq!(body["data"][1]["threshold_value"], 90.0);

    let (status, _) = h.call("DELETE", &format!("/devices/dev-0001/policies/{pid}"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    h.block();
    let (_, body) = h.call("GET", "/devices/dev-0001/policies", None).await;
    assert_eq!(body["data"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn device_update_and_delete() {
    let mut h = Harness::new(1);
    h.register(0).await;
    h.block();
    let (status, _) = h.call("PUT", "/devices/dev-0001", Some(json!({"model": "sim-sensor-v2"}))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    h.block();
    let (_, body) = h.call("GET", "/devices/dev-0001", None).await;
    assert_eq!(body["data"]["model"], "sim-sensor-v2");

    let (status, _) = h.call("DELETE", "/devices/dev-0001", None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    h.block();
    let (_, body) = h.call("GET", "/devices/dev-0001", None).await;
    assert_eq!(body["data"]["state"], "deleted");
    let (_, body) = h.call("GET", "/devices", None).await;
    assert_eq!(body["data"], json!([]));
    let (status, _) = h.call("DELETE", "/devices/dev-0001", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn hashes_and_history_after_archival() {
    let mut h = Harness::new(2);
    h.register(0).await;
    h.register(1).await;
    h.block();
    h.deployment.run_until(2 * HOUR).unwrap();
    h.block();

    let (_, body) = h.call("GET", "/devices/dev-0002/hashes", None).await;
    let hashes = body["data"].as_array().unwrap();
    assert_eq!(hashes.len(), 2);
    assert_eq!(hashes[0]["window_index"], 0);
    assert_eq!(hashes[1]["window_index"], 1);

    let (status, body) = h.call("GET", "/devices/dev-0002/history?from=0", None).await;
    assert_eq!(status, StatusCode::OK);
    let data = &body["data"];
    assert_eq!(data["sources"][0]["source"], "archived");
    // one poll per minute per attribute over two windows, plus the poll at 2h
    let samples = data["samples"].as_array().unwrap();
    assert!(samples.len() >= 2 * 2 * 60, "{} samples", samples.len());
    let generated = h.deployment.gateway().generated(&"dev-0002".into());
    assert_eq!(samples.len(), generated.len());
}

#[tokio::test]
async fn metrics_start_at_zero_and_track_reads() {
    let mut h = Harness::new(1);
    let (_, m) = h.call("GET", "/metrics", None).await;
    for v in m["avg_response_time_ms"].as_object().unwrap().values() {
        assert_eq!(v.as_f64(), Some(0.0));
    }
    assert_eq!(m["avg_gas"]["add_device"], 0.0);

    h.register(0).await;
    h.block();
    h.call("GET", "/devices", None).await;
    h.call("GET", "/devices/dev-0001/hashes", None).await;
    let (_, m) = h.call("GET", "/metrics", None).await;
    assert!(m["avg_response_time_ms"]["list_devices"].as_f64().unwrap() > 0.0);
    assert!(m["avg_response_time_ms"]["get_hashes"].as_f64().unwrap() > 0.0);
    assert_eq!(m["avg_response_time_ms"]["history"], 0.0);
    assert_eq!(m["read_counts"]["list_devices"], 1);
    assert_eq!(m["avg_gas"]["add_device"], 137_200.0);
    assert_eq!(m["tx_counts"]["add_device"]["confirmed"], 1);
}

/// Reads SSE frames until `n` events arrive; returns (id, event, data) triples.
async fn read_events(body: Body, n: usize) -> Vec<(u64, String, Value)> {
    let mut body = body;
    let mut text = String::new();
    let mut out = Vec::new();
    while out.len() < n {
        let frame = tokio::time::timeout(Duration::from_secs(5), body.frame()).await.expect("stream stalled");
        let frame = frame.expect("stream ended").unwrap();
        let Ok(data): Result<Bytes, _> = frame.into_data() else { continue };
        text.push_str(std::str::from_utf8(&data).unwrap());
        while let Some(end) = text.find("\n\n") {
            let chunk: String = text.drain(..end + 2).collect();
            let (mut id, mut event, mut data) = (None, String::new(), String::new());
            for line in chunk.lines() {
                if let Some(v) = line.strip_prefix("id:") {
                    id = Some(v.trim().parse().unwrap());
                } else if let Some(v) = line.strip_prefix("event:") {
                    event = v.trim().to_owned();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.trim());
                }
            }
            if let Some(id) = id {
                out.push((id, event, serde_json::from_str(&data).unwrap()));
            }
        }
    }
    out
}

async fn open(h: &Harness, uri: &str, last_event_id: Option<u64>) -> Body {
    let mut req = Request::builder().uri(uri);
    if let Some(id) = last_event_id {
        req = req.header("last-event-id", id.to_string());
    }
    let resp = h.app().oneshot(req.body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    resp.into_body()
}

#[tokio::test]
async fn event_stream_delivers_in_order_to_every_subscriber() {
    let mut h = Harness::new(3);
    let first = open(&h, "/events/stream", None).await;
    let second = open(&h, "/events/stream", None).await;
    for i in 0..3 {
        h.register(i).await;
    }
    h.block();

    let a = read_events(first, 3).await;
    let b = read_events(second, 3).await;
    assert_eq!(a, b);
    assert_eq!(a.iter().map(|e| e.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    for (i, (_, event, data)) in a.iter().enumerate() {
        assert_eq!(event, "confirmation");
        assert_eq!(data["type"], "confirmation");
        assert_eq!(data["op_kind"], "add_device");
        assert_eq!(data["device_id"], format!("dev-{:04}", i + 1));
    }
}

#[tokio::test]
async fn event_stream_resumes_from_cursor() {
    let mut h = Harness::new(3);
    for i in 0..3 {
        h.register(i).await;
    }
    h.block();

    let replay = read_events(open(&h, "/events/stream?since=1", None).await, 2).await;
    assert_eq!(replay.iter().map(|e| e.0).collect::<Vec<_>>(), vec![1, 2]);
    let resumed = read_events(open(&h, "/events/stream", Some(0)).await, 2).await;
    assert_eq!(resumed, replay);

    // without a cursor only new entries arrive
    let live = open(&h, "/events/stream", None).await;
    h.call("DELETE", "/devices/dev-0002", None).await;
    h.block();
    let fresh = read_events(live, 1).await;
    assert_eq!(fresh[0].0, 3);
    assert_eq!(fresh[0].2["op_kind"], "delete_device");
}

#[tokio::test]
async fn device_stream_filters_and_carries_violations() {
    let mut h = Harness::new(2);
    h.register(0).await;
    h.register(1).await;
    h.block();
    let (status, _) = h.call("GET", "/devices/dev-0404/events/stream", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // every Attribute A reading is below 1000, so each poll past the budget fires
    let mut always = rule_a();
    always["threshold_value"] = json!(1000.0);
    always["max_violations"] = json!(0);
    h.call("POST", "/devices/dev-0002/policies", Some(always)).await;
    let stream = open(&h, "/devices/dev-0002/events/stream?since=0", None).await;
    h.block();
    h.deployment.run_until(h.deployment.now() + 3 * 60_000).unwrap();

    let events = read_events(stream, 3).await;
    assert!(events.iter().all(|(_, _, d)| d["device_id"] == "dev-0002"));
    assert_eq!(events[0].1, "confirmation");
    assert_eq!(events[1].1, "confirmation");
    assert_eq!(events[2].1, "violation");
    assert_eq!(events[2].2["criticality"], "Medium");
    assert_eq!(events[2].2["attribute"], "Attribute A");
    assert!(events.windows(2).all(|w| w[0].0 < w[1].0));
}
