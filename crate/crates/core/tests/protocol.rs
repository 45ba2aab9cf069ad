use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use serde_json::Value;
use vstylist::backends::protocol::{
    decode_image, EmbedRequest, EmbedResponse, ErrorBody, GenerateRequest, GenerateResponse, RenderRequest,
    RenderResponse, ScoreRequest, ScoreResponse,
};
use vstylist::backends::{Endpoint, HttpTransport, MockBackend, MockHttpServer, Scenario, Transport};
use vstylist::Error;

const CASES: [(&str, Endpoint, u16); 8] = [
    ("text", Endpoint::Text, 200),
    ("text_with_image", Endpoint::Text, 400),
    ("vision", Endpoint::Vision, 200),
    ("render", Endpoint::Render, 200),
    ("embed", Endpoint::Embed, 200),
    ("embed_image", Endpoint::Embed, 200),
    ("score", Endpoint::Score, 200),
    ("score_video", Endpoint::Score, 200),
];

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/protocol")
}

fn read(name: &str) -> Vec<u8> {
    fs::read(dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn backend() -> Arc<MockBackend> {
    let scenario = Scenario::load(&dir().join("scenario.json")).unwrap();
    Arc::new(MockBackend::new(scenario).unwrap())
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn check_request_types(name: &str, endpoint: Endpoint, body: &[u8]) {
    let ok = match endpoint {
        Endpoint::Text | Endpoint::Vision => serde_json::from_slice::<GenerateRequest>(body).is_ok(),
        Endpoint::Render => serde_json::from_slice::<RenderRequest>(body).is_ok(),
        Endpoint::Embed => serde_json::from_slice::<EmbedRequest>(body).is_ok(),
        Endpoint::Score => serde_json::from_slice::<ScoreRequest>(body).is_ok(),
    };
    assert!(ok, "{name} request does not match its schema");
}

fn check_response_shape(name: &str, endpoint: Endpoint, request: &[u8], status: u16, body: &[u8]) {
    if status != 200 {
        let err: ErrorBody = serde_json::from_slice(body).unwrap();
        assert!(!err.error.code.is_empty() && !err.error.message.is_empty(), "{name}");
        return;
    }
    match endpoint {
        Endpoint::Text | Endpoint::Vision => {
            let resp: GenerateResponse = serde_json::from_slice(body).unwrap();
            assert!(!resp.text.is_empty(), "{name}");
        }
        Endpoint::Render => {
            let req: RenderRequest = serde_json::from_slice(request).unwrap();
            let resp: RenderResponse = serde_json::from_slice(body).unwrap();
            let sent = req.frames.unwrap();
            assert_eq!(resp.frames.len(), sent.len(), "{name}");
            for (i, (a, b)) in sent.iter().zip(&resp.frames).enumerate() {
                let (a, b) = (decode_image(i, a).unwrap(), decode_image(i, b).unwrap());
                assert_eq!((a.width, a.height), (b.width, b.height), "{name} frame {i}");
            }
        }
        Endpoint::Embed => {
            let req: EmbedRequest = serde_json::from_slice(request).unwrap();
            let resp: EmbedResponse = serde_json::from_slice(body).unwrap();
            assert_eq!(resp.vectors.len(), req.items.len(), "{name}");
            let dim = resp.vectors[0].len();
            for v in &resp.vectors {
                assert_eq!(v.len(), dim, "{name}");
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-9, "{name}: norm {norm}");
            }
        }
        Endpoint::Score => {
            let req: ScoreRequest = serde_json::from_slice(request).unwrap();
            let resp: ScoreResponse = serde_json::from_slice(body).unwrap();
            let expected = if req.kind.is_image_level() { req.frames.len() } else { 1 };
            assert_eq!(resp.values.len(), expected, "{name}");
            assert!(resp.values.iter().all(|v| (0.0..=1.0).contains(v)), "{name}: {:?}", resp.values);
        }
    }
}

#[test]
fn requests_match_schemas() {
    for (name, endpoint, _) in CASES {
        check_request_types(name, endpoint, &read(&format!("{name}.request.json")));
    }
}

#[test]
fn mock_reproduces_golden_responses() {
    let mock = backend();
    for (name, endpoint, status) in CASES {
        let request = read(&format!("{name}.request.json"));
        let golden = read(&format!("{name}.response.json"));
        let (got_status, body) = mock.handle(endpoint, &request);
        assert_eq!(got_status, status, "{name}");
        assert_eq!(json(&body), json(&golden), "{name}");
        check_response_shape(name, endpoint, &request, got_status, &body);
    }
    assert_eq!(mock.calls().len(), CASES.len());
}

#[test]
fn golden_responses_have_valid_shapes() {
    for (name, endpoint, status) in CASES {
        let request = read(&format!("{name}.request.json"));
        let golden = read(&format!("{name}.response.json"));
        check_response_shape(name, endpoint, &request, status, &golden);
    }
}

#[test]
fn scripted_reply_for_ping() {
    let golden: GenerateResponse = serde_json::from_slice(&read("text.response.json")).unwrap();
    assert_eq!(golden.text, "pong");
}

#[test]
fn http_round_trip_matches_golden() {
    let server = MockHttpServer::start(backend(), "127.0.0.1:0", 2, None).unwrap();
    let http = HttpTransport::new(&server.base_url(), 10, None);
    for (name, endpoint, status) in CASES {
        let request = read(&format!("{name}.request.json"));
        let golden = json(&read(&format!("{name}.response.json")));
        match http.post(endpoint, &request) {
            Ok(body) => {
                assert_eq!(status, 200, "{name}");
                assert_eq!(json(&body), golden, "{name}");
            }
            Err(Error::Status { status: got, body, .. }) => {
                assert_eq!(got, status, "{name}");
                assert_eq!(json(body.as_bytes()), golden, "{name}");
            }
            Err(e) => panic!("{name}: {e}"),
        }
    }
    assert_eq!(server.backend().calls().len(), CASES.len());
}

#[test]
fn http_healthz_and_unknown_paths() {
    let server = MockHttpServer::start(backend(), "127.0.0.1:0", 1, None).unwrap();
    let base = server.base_url();
    let health = ureq::get(&format!("{base}/healthz")).call().unwrap().into_string().unwrap();
    assert_eq!(json(health.as_bytes()), serde_json::json!({"status": "ok"}));
    match ureq::post(&format!("{base}/v1/nope")).send_string("{}") {
        Err(ureq::Error::Status(404, _)) => {}
        other => panic!("expected 404, got {:?}", other.map(|r| r.status())),
    }
    match ureq::get(&format!("{base}{}", Endpoint::Text.path())).call() {
        Err(ureq::Error::Status(405, _)) => {}
        other => panic!("expected 405, got {:?}", other.map(|r| r.status())),
    }
}

#[test]
fn http_bearer_token_is_enforced() {
    let server = MockHttpServer::start(backend(), "127.0.0.1:0", 1, Some("secret".into())).unwrap();
    let request = read("text.request.json");
    let anonymous = HttpTransport::new(&server.base_url(), 10, None);
    match anonymous.post(Endpoint::Text, &request) {
        Err(Error::Status { status: 401, .. }) => {}
        other => panic!("expected 401, got {other:?}"),
    }
    let authorized = HttpTransport::new(&server.base_url(), 10, Some("secret".into()));
    let body = authorized.post(Endpoint::Text, &request).unwrap();
    assert_eq!(json(&body), json(&read("text.response.json")));
}

#[test]
fn malformed_body_is_rejected_with_error_body() {
    let mock = backend();
    for endpoint in Endpoint::ALL {
        let (status, body) = mock.handle(endpoint, b"{not json");
        assert_eq!(status, 400, "{endpoint}");
        let err: ErrorBody = serde_json::from_slice(&body).unwrap();
        assert_eq!(err.error.code, "bad_request");
    }
}
