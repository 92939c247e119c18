mod common;

use common::*;
use mooclet_api::{status_for, ApiError, ApiRequest};
use mooclet_core::{Error, ErrorKind};
use serde_json::json;

fn code(resp: &mooclet_api::ApiResponse) -> ErrorKind {
    resp.api_error().expect("an error response").code
}

#[test]
fn every_engine_error_maps_to_a_code_and_status() {
    let cases = [
        (Error::NotFound("m9".into()), ErrorKind::NotFound, 404),
        (Error::Validation("x".into()), ErrorKind::Validation, 400),
        (Error::Permission("x".into()), ErrorKind::Permission, 403),
        (Error::Budget("x".into()), ErrorKind::Budget, 429),
        (Error::NoVersions("m1".into()), ErrorKind::NoVersions, 409),
        (Error::Conflict("x".into()), ErrorKind::Conflict, 409),
        (Error::Provenance("x".into()), ErrorKind::Provenance, 409),
        (Error::DuplicateReward("x".into()), ErrorKind::Conflict, 409),
        (Error::StateCorruption("x".into()), ErrorKind::Internal, 500),
        (Error::Journal("x".into()), ErrorKind::Internal, 500),
        (Error::Io(std::io::Error::other("disk")), ErrorKind::Internal, 500),
        (Error::Internal("x".into()), ErrorKind::Internal, 500),
    ];
    for (err, kind, status) in cases {
        let api = ApiError::from(err);
        assert_eq!(api.code, kind);
        assert_eq!(api.status(), status);
        // and back again
        assert_eq!(api.clone().into_core().kind(), kind);
    }
    for kind in ErrorKind::ALL {
        let wire = serde_json::to_string(&ApiError::new(kind, "m")).unwrap();
        assert!(wire.contains(&format!("\"code\":\"{}\"", kind.code())));
        assert_eq!(serde_json::from_str::<ApiError>(&wire).unwrap().code, kind);
        assert!(status_for(kind) >= 400);
    }
}

#[test]
fn each_code_is_reachable_through_the_router() {
    let svc = service(2);
    let (m, vs) = create_mooclet(&svc, "e", json!({"kind": "uniform_random"}), true, &[1.0]);
    let (empty, _) = create_mooclet(&svc, "empty", json!({"kind": "uniform_random"}), true, &[]);

    let resp = call(&svc, ApiRequest::get("/v1/mooclet/m999"), ADMIN);
    assert_eq!((resp.status, code(&resp)), (404, ErrorKind::NotFound));

    let mut bad = ApiRequest::new(mooclet_api::Method::Post, "/v1/mooclets");
    bad.body = b"{not json".to_vec();
    let resp = call(&svc, bad, ADMIN);
    assert_eq!((resp.status, code(&resp)), (400, ErrorKind::Validation));
    let resp = call(&svc, ApiRequest::post(format!("/v1/mooclet/{m}/versions"), &json!({"name": "n", "content": {}, "weight": -1})), ADMIN);
    assert_eq!(code(&resp), ErrorKind::Validation);
    let resp = call(&svc, ApiRequest::get(format!("/v1/mooclet/{m}/run")), ADMIN);
    assert_eq!(code(&resp), ErrorKind::Validation);

    let resp = call(&svc, ApiRequest::post("/v1/value", &json!({"learner": "a", "variable": "v", "value": 1})), RESEARCHER);
    assert_eq!((resp.status, code(&resp)), (403, ErrorKind::Permission));
    let resp = svc.handle(ApiRequest::get("/v1/mooclets").token("nope"));
    assert_eq!((resp.status, code(&resp)), (401, ErrorKind::Permission));

    let resp = run(&svc, empty, "a", PLATFORM);
    assert_eq!((resp.status, code(&resp)), (409, ErrorKind::NoVersions));

    let var = json!({"name": "dup", "kind": "outcome", "value_type": "number"});
    ok(&svc, ApiRequest::post("/v1/variables", &var), ADMIN);
    let resp = call(&svc, ApiRequest::post("/v1/variables", &var), ADMIN);
    assert_eq!((resp.status, code(&resp)), (409, ErrorKind::Conflict));

    let reward = json!({"mooclet": m, "version": vs[0], "learner": "never", "outcome": 1});
    let resp = call(&svc, ApiRequest::post("/v1/reward", &reward), PLATFORM);
    assert_eq!((resp.status, code(&resp)), (409, ErrorKind::Provenance));
    run(&svc, m, "once", PLATFORM);
    let reward = json!({"mooclet": m, "version": vs[0], "learner": "once", "outcome": 0});
    ok(&svc, ApiRequest::post("/v1/reward", &reward), PLATFORM);
    let resp = call(&svc, ApiRequest::post("/v1/reward", &reward), PLATFORM);
    assert_eq!(code(&resp), ErrorKind::Conflict);

    let limited = service_with(mooclet_core::EngineConfig::deterministic(2), 0.5);
    ok(&limited, ApiRequest::post("/v1/variables", &var), ADMIN);
    let dp = json!({"op": "count", "variable": "dup", "epsilon": 0.6});
    let resp = call(&limited, ApiRequest::post("/v1/dp", &dp), RESEARCHER);
    assert_eq!((resp.status, code(&resp)), (429, ErrorKind::Budget));

    let resp = call(&svc, ApiRequest::put("/v1/mooclets", &json!({})), ADMIN);
    assert_eq!(resp.status, 405);
    let resp = call(&svc, ApiRequest::get("/v1/nothing"), ADMIN);
    assert_eq!(code(&resp), ErrorKind::NotFound);
}
