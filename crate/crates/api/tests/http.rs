mod common;

use std::sync::Arc;

use common::*;
use mooclet_api::{ApiBackend, ApiRequest, BackgroundServer, Client, Transport};
use mooclet_core::sim::{run_simulation, run_simulation_on, LearnerModel, SimConfig, SimPolicy};
use mooclet_core::{BetaPrior, EngineConfig};
use serde_json::{json, Value};

fn start(seed: u64) -> (BackgroundServer, Arc<mooclet_api::Service>) {
    let svc = Arc::new(service(seed));
    let server = BackgroundServer::start(svc.clone(), "127.0.0.1:0").unwrap();
    (server, svc)
}

fn send(client: &Client, req: ApiRequest, token: &str) -> mooclet_api::ApiResponse {
    client.send(req.token(token))
}

#[test]
fn content_survives_the_wire_byte_for_byte() {
    let (server, _svc) = start(11);
    let client = Client::new(server.url(), None);
    let m: Value = send(&client, ApiRequest::post("/v1/mooclets", &json!({"name": "wire"})), ADMIN)
        .decode()
        .unwrap();
    let raw = r#"{"html":"<p>café &amp; ünïcode</p>","n":1.50,"list":[ 1, 2 ]}"#;
    let body = format!(r#"{{"name":"a","content":{raw}}}"#);
    let mut req = ApiRequest::new(mooclet_api::Method::Post, format!("/v1/mooclet/{}/versions", m["id"].as_str().unwrap()));
    req.body = body.into_bytes();
    assert_eq!(send(&client, req, ADMIN).status, 201);
    let resp = send(&client, ApiRequest::get(format!("/v1/mooclet/{}/run?learner=x", m["id"].as_str().unwrap())), PLATFORM);
    assert_eq!(resp.status, 200);
    assert!(resp.text().contains(raw), "{}", resp.text());
}

#[test]
fn missing_token_and_unknown_method_over_http() {
    let (server, _svc) = start(12);
    let client = Client::new(server.url(), None);
    let resp = client.send(ApiRequest::get("/v1/mooclets"));
    assert_eq!(resp.status, 401);
    assert_eq!(resp.api_error().unwrap().code, mooclet_core::ErrorKind::Permission);

    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let resp = agent
        .delete(format!("{}/v1/mooclets", server.url()))
        .header("authorization", format!("Bearer {ADMIN}"))
        .call()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 405);
}

#[test]
fn logs_and_exports_have_their_media_types() {
    let (server, svc) = start(13);
    let client = Client::new(server.url(), Some(ADMIN.into()));
    let (m, _) = create_mooclet(&svc, "media", json!({"kind": "uniform_random"}), true, &[1.0, 1.0]);
    for l in ["a", "b", "c"] {
        assert_eq!(send(&client, ApiRequest::get(format!("/v1/mooclet/{m}/run?learner={l}")), PLATFORM).status, 200);
    }
    let log = client.send(ApiRequest::get(format!("/v1/mooclet/{m}/assignments")));
    assert_eq!(log.content_type, mooclet_api::NDJSON);
    let lines: Vec<Value> = log.text().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    // local and remote views agree
    let mut local = Vec::new();
    svc.engine().write_assignment_log(&mut local, Some(m)).unwrap();
    assert_eq!(log.body, local);

    let export = client.send(ApiRequest::post("/v1/export", &json!({})));
    assert_eq!(export.content_type, mooclet_api::CSV);
    assert!(export.text().starts_with("timestamp,"));
    assert_eq!(export.text().lines().count(), 4);
}

#[test]
fn idempotency_header_is_honored() {
    let (server, svc) = start(14);
    let client = Client::new(server.url(), Some(PLATFORM.into()));
    let (m, _) = create_mooclet(&svc, "idem", json!({"kind": "uniform_random"}), false, &[1.0, 1.0, 1.0]);
    let req = || ApiRequest::get(format!("/v1/mooclet/{m}/run?learner=k")).idempotency_key("abc");
    let a = client.send(req());
    let b = client.send(req());
    assert_eq!(a, b);
    assert_eq!(svc.engine().assignments_for(m).len(), 1);
}

fn sim_config(policy: SimPolicy) -> SimConfig {
    SimConfig {
        model: LearnerModel::bernoulli(40, &[0.6, 0.4]),
        policy,
        horizon: 300,
        seeds: vec![],
        window: 50,
    }
}

#[test]
fn simulation_over_http_matches_in_process() {
    for (seed, policy) in [
        (21, SimPolicy::Thompson { prior: BetaPrior::default() }),
        (22, SimPolicy::Weighted { weights: vec![1.0, 3.0] }),
    ] {
        let config = sim_config(policy);
        let local = run_simulation(&config, seed).unwrap();

        let mut svc = mooclet_api::Service::new(Arc::new(mooclet_core::Engine::new(EngineConfig::deterministic(seed))));
        svc.add_principal(ADMIN, mooclet_core::Principal::new("ops", mooclet_core::Role::Admin), None)
            .unwrap();
        let server = BackgroundServer::start(Arc::new(svc), "127.0.0.1:0").unwrap();
        let mut backend = ApiBackend::new(Client::new(server.url(), None), Some(ADMIN.into()));
        let remote = run_simulation_on(&mut backend, &config, seed).unwrap();
        assert_eq!(remote.to_json(), local.to_json());
        assert_eq!(remote.trace_csv(), local.trace_csv());
    }
}
