#![allow(dead_code)]

use std::sync::Arc;

use mooclet_api::{ApiRequest, ApiResponse, Method, Service};
use mooclet_core::{Engine, EngineConfig, MoocletId, Principal, QuestionId, Role, VersionId};
use serde_json::{json, Value};

pub const PLATFORM: &str = "t-platform";
pub const INSTRUCTOR: &str = "t-instructor";
pub const RESEARCHER: &str = "t-researcher";
pub const ADMIN: &str = "t-admin";

pub const ROLES: [(Role, &str); 4] = [
    (Role::Platform, PLATFORM),
    (Role::Instructor, INSTRUCTOR),
    (Role::Researcher, RESEARCHER),
    (Role::Admin, ADMIN),
];

pub fn service_with(config: EngineConfig, researcher_budget: f64) -> Service {
    let mut svc = Service::new(Arc::new(Engine::new(config)));
    svc.add_principal(PLATFORM, Principal::new("lms", Role::Platform), None).unwrap();
    svc.add_principal(INSTRUCTOR, Principal::new("ana", Role::Instructor), None).unwrap();
    svc.add_principal(RESEARCHER, Principal::new("lee", Role::Researcher), Some(researcher_budget))
        .unwrap();
    svc.add_principal(ADMIN, Principal::new("ops", Role::Admin), None).unwrap();
    svc
}

pub fn service(seed: u64) -> Service {
    service_with(EngineConfig::deterministic(seed), 1e6)
}

pub fn call(svc: &Service, req: ApiRequest, token: &str) -> ApiResponse {
    svc.handle(req.token(token))
}

pub fn ok(svc: &Service, req: ApiRequest, token: &str) -> Value {
    let resp = call(svc, req, token);
    assert!(resp.is_success(), "{} {}", resp.status, resp.text());
    serde_json::from_slice(&resp.body).unwrap_or(Value::Null)
}

pub fn create_mooclet(svc: &Service, name: &str, policy: Value, sticky: bool, versions: &[f64]) -> (MoocletId, Vec<VersionId>) {
    let m = ok(
        svc,
        ApiRequest::post("/v1/mooclets", &json!({"name": name, "policy": policy, "sticky": sticky})),
        ADMIN,
    );
    let id: MoocletId = serde_json::from_value(m["id"].clone()).unwrap();
    let vs = versions
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let v = ok(
                svc,
                ApiRequest::post(
                    format!("/v1/mooclet/{id}/versions"),
                    &json!({"name": format!("v{i}"), "content": {"arm": i}, "weight": w}),
                ),
                ADMIN,
            );
            serde_json::from_value(v["id"].clone()).unwrap()
        })
        .collect();
    (id, vs)
}

pub fn run(svc: &Service, mooclet: MoocletId, learner: &str, token: &str) -> ApiResponse {
    call(svc, ApiRequest::get(format!("/v1/mooclet/{mooclet}/run?learner={learner}")), token)
}

pub fn assigned_version(resp: &ApiResponse) -> VersionId {
    let v: Value = serde_json::from_slice(&resp.body).unwrap();
    serde_json::from_value(v["version"]["id"].clone()).unwrap()
}

/// The documented role matrix, written out independently of the router's
/// own table: (method, path pattern, roles allowed).
pub const EXPECTED_MATRIX: &[(&str, &str, &[&str])] = &[
    ("GET", "/v1/mooclets", &["platform", "instructor", "researcher", "admin"]),
    ("POST", "/v1/mooclets", &["instructor", "admin"]),
    ("GET", "/v1/mooclet/{id}", &["platform", "instructor", "researcher", "admin"]),
    ("POST", "/v1/mooclet/{id}/versions", &["instructor", "admin"]),
    ("PUT", "/v1/mooclet/{id}/version/{version}", &["instructor", "admin"]),
    ("PUT", "/v1/mooclet/{id}/policy", &["instructor", "admin"]),
    ("PUT", "/v1/mooclet/{id}/pin", &["instructor", "admin"]),
    ("GET", "/v1/mooclet/{id}/run", &["platform", "admin"]),
    ("GET", "/v1/mooclet/{id}/assignments", &["instructor", "researcher", "admin"]),
    ("POST", "/v1/reward", &["platform", "admin"]),
    ("POST", "/v1/value", &["platform", "admin"]),
    ("GET", "/v1/variables", &["platform", "instructor", "researcher", "admin"]),
    ("POST", "/v1/variables", &["instructor", "researcher", "admin"]),
    ("POST", "/v1/query", &["instructor", "researcher", "admin"]),
    ("POST", "/v1/dp", &["researcher"]),
    ("GET", "/v1/budget", &["researcher"]),
    ("POST", "/v1/export", &["researcher", "admin"]),
    ("POST", "/v1/import", &["admin"]),
    ("GET", "/v1/stats/{id}", &["instructor", "researcher", "admin"]),
    ("GET", "/v1/questions", &["instructor", "researcher", "admin"]),
    ("POST", "/v1/questions", &["instructor", "researcher", "admin"]),
    ("GET", "/v1/question/{id}/options", &["instructor", "researcher", "admin"]),
    ("POST", "/v1/question/{id}/responses", &["instructor", "researcher"]),
];

pub struct World {
    pub mooclet: MoocletId,
    pub versions: Vec<VersionId>,
    pub question: QuestionId,
    /// Version assigned to `rw-<role>` for the reward probe.
    pub reward_versions: Vec<(Role, VersionId)>,
}

pub fn world(svc: &Service) -> World {
    let (mooclet, versions) = create_mooclet(svc, "matrix", json!({"kind": "uniform_random"}), true, &[1.0, 1.0]);
    ok(
        svc,
        ApiRequest::post(
            "/v1/variables",
            &json!({"name": "score", "kind": "outcome", "value_type": "number", "bounds": {"lo": 0.0, "hi": 1.0}}),
        ),
        ADMIN,
    );
    ok(svc, ApiRequest::post("/v1/value", &json!({"learner": "x", "variable": "score", "value": 1.0})), ADMIN);
    let q = ok(
        svc,
        ApiRequest::post("/v1/questions", &json!({"prompt": "What would you improve?", "options": ["homework exercises"]})),
        ADMIN,
    );
    let question = serde_json::from_value(q["id"].clone()).unwrap();
    let reward_versions = ROLES
        .iter()
        .map(|(role, _)| {
            let resp = run(svc, mooclet, &format!("rw-{}", role.as_str()), ADMIN);
            (*role, assigned_version(&resp))
        })
        .collect();
    World {
        mooclet,
        versions,
        question,
        reward_versions,
    }
}

/// A well-formed request for `method path` made on behalf of `role`.
pub fn probe(world: &World, method: &str, pattern: &str, role: Role) -> ApiRequest {
    let path = pattern
        .replace("{id}", &if pattern.starts_with("/v1/question/") {
            world.question.to_string()
        } else {
            world.mooclet.to_string()
        })
        .replace("{version}", &world.versions[0].to_string());
    let r = role.as_str();
    let body = match (method, pattern) {
        ("POST", "/v1/mooclets") => json!({"name": format!("by-{r}")}),
        ("POST", "/v1/mooclet/{id}/versions") => json!({"name": format!("by-{r}"), "content": {"x": 1}}),
        ("PUT", "/v1/mooclet/{id}/version/{version}") => json!({"weight": 2.0}),
        ("PUT", "/v1/mooclet/{id}/policy") => json!({"kind": "uniform_random"}),
        ("PUT", "/v1/mooclet/{id}/pin") => json!({"version": null}),
        ("POST", "/v1/reward") => {
            let v = world.reward_versions.iter().find(|(x, _)| *x == role).unwrap().1;
            json!({"mooclet": world.mooclet, "version": v, "learner": format!("rw-{r}"), "outcome": 1})
        }
        ("POST", "/v1/value") => json!({"learner": format!("p-{r}"), "variable": "score", "value": 0.5}),
        ("POST", "/v1/variables") => json!({"name": format!("var-{r}"), "kind": "covariate", "value_type": "text"}),
        ("POST", "/v1/query") | ("POST", "/v1/export") => json!({}),
        ("POST", "/v1/dp") => json!({"op": "count", "variable": "score", "epsilon": 0.01}),
        ("POST", "/v1/import") => json!({"csv": "timestamp,learner,variable,value,mooclet,version,assignment\n"}),
        ("POST", "/v1/questions") => json!({"prompt": format!("asked by {r}")}),
        ("POST", "/v1/question/{id}/responses") => json!({"selected": ["homework exercises"]}),
        _ => Value::Null,
    };
    let target = if pattern.ends_with("/run") {
        format!("{path}?learner=run-{r}")
    } else {
        path
    };
    let req = ApiRequest::new(Method::parse(method).unwrap(), target);
    if body.is_null() {
        req
    } else {
        req.json(&body)
    }
}

/// Runs every (endpoint, role) pair. Returns the number of pairs checked,
/// or every mismatch.
pub fn check_role_matrix() -> Result<usize, Vec<String>> {
    let svc = service(1);
    let w = world(&svc);
    let mut failures = Vec::new();
    let mut checked = 0;

    // the expected table and the router agree on which endpoints exist
    for ep in mooclet_api::ENDPOINTS {
        if !EXPECTED_MATRIX.iter().any(|(m, p, _)| *m == ep.method.as_str() && *p == ep.path) {
            failures.push(format!("{} {} is served but undocumented", ep.method, ep.path));
        }
    }
    for (method, pattern, allowed) in EXPECTED_MATRIX {
        for (role, token) in ROLES {
            checked += 1;
            let resp = call(&svc, probe(&w, method, pattern, role), token);
            let expect = allowed.contains(&role.as_str());
            let denied = resp.status == 403
                && resp.api_error().is_some_and(|e| e.code == mooclet_core::ErrorKind::Permission);
            let good = if expect { resp.is_success() } else { denied };
            if !good {
                failures.push(format!(
                    "{method} {pattern} as {}: expected {}, got {} {}",
                    role.as_str(),
                    if expect { "success" } else { "permission denial" },
                    resp.status,
                    resp.text()
                ));
            }
        }
        // no token at all is always rejected
        checked += 1;
        let resp = svc.handle(probe(&w, method, pattern, Role::Admin));
        if resp.status != 401 {
            failures.push(format!("{method} {pattern} without token: got {}", resp.status));
        }
    }
    if failures.is_empty() {
        Ok(checked)
    } else {
        Err(failures)
    }
}
