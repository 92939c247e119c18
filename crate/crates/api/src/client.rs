//! Blocking HTTP client, plus a [`SimBackend`] that drives any
//! [`Transport`] through the public endpoints.

use std::time::Duration;

use mooclet_core::sim::SimBackend;
use mooclet_core::{
    AssignmentRecord, Error, ErrorKind, Mooclet, MoocletId, PolicySpec, Provenance, RecordFilter,
    Result, Value, ValueRecord, Variable, Version, VersionId,
};
use serde::de::DeserializeOwned;

use crate::error::ApiError;
use crate::http::IDEMPOTENCY_HEADER;
use crate::service::{
    AddVersionBody, ApiRequest, ApiResponse, CreateMoocletBody, Outcome, PushValueBody, RewardBody,
    Transport,
};
use crate::Method;

pub struct Client {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl Client {
    pub fn new(base: impl Into<String>, token: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Client {
            base: base.into().trim_end_matches('/').to_owned(),
            token,
            agent,
        }
    }

    fn exchange(&self, req: &ApiRequest) -> std::result::Result<ApiResponse, ureq::Error> {
        let mut builder = ureq::http::Request::builder()
            .method(req.method.as_str())
            .uri(format!("{}{}", self.base, req.target))
            .header("content-type", "application/json");
        if let Some(t) = req.token.as_ref().or(self.token.as_ref()) {
            builder = builder.header("authorization", format!("Bearer {t}"));
        }
        if let Some(k) = &req.idempotency_key {
            builder = builder.header(IDEMPOTENCY_HEADER, k);
        }
        let request = builder.body(req.body.clone())?;
        let mut resp = self.agent.run(request)?;
        let status = resp.status().as_u16();
        let content_type = match resp.headers().get("content-type").and_then(|v| v.to_str().ok()) {
            Some(ct) if ct.starts_with("application/x-ndjson") => crate::service::NDJSON,
            Some(ct) if ct.starts_with("text/csv") => crate::service::CSV,
            _ => crate::service::JSON,
        };
        let body = resp.body_mut().with_config().limit(1 << 30).read_to_vec()?;
        Ok(ApiResponse {
            status,
            content_type,
            body,
        })
    }
}

impl Transport for Client {
    fn send(&self, request: ApiRequest) -> ApiResponse {
        self.exchange(&request).unwrap_or_else(|e| {
            ApiResponse::error(ApiError::new(
                ErrorKind::Internal,
                format!("request to {} failed: {e}", self.base),
            ))
        })
    }
}

/// Runs simulations through the API. The token must belong to an admin,
/// the only role allowed every call a simulation makes.
pub struct ApiBackend<T> {
    transport: T,
    token: Option<String>,
}

impl<T: Transport> ApiBackend<T> {
    /// `token` is attached to requests that lack one.
    pub fn new(transport: T, token: Option<String>) -> Self {
        ApiBackend { transport, token }
    }

    fn send(&self, mut req: ApiRequest) -> ApiResponse {
        if req.token.is_none() {
            req.token = self.token.clone();
        }
        self.transport.send(req)
    }

    fn call<R: DeserializeOwned>(&self, req: ApiRequest) -> Result<R> {
        self.send(req).decode().map_err(ApiError::into_core)
    }
}

impl<T: Transport> SimBackend for ApiBackend<T> {
    fn define_variable(&mut self, variable: Variable) -> Result<()> {
        self.call::<Variable>(ApiRequest::post("/v1/variables", &variable)).map(drop)
    }

    fn create_mooclet(&mut self, name: &str, policy: PolicySpec, sticky: bool) -> Result<MoocletId> {
        let body = CreateMoocletBody {
            name: name.into(),
            policy,
            sticky,
        };
        self.call::<Mooclet>(ApiRequest::post("/v1/mooclets", &body)).map(|m| m.id)
    }

    fn add_version(&mut self, mooclet: MoocletId, name: &str, content: &str, weight: f64) -> Result<VersionId> {
        let body = AddVersionBody {
            name: name.into(),
            content: mooclet_core::content_from_str(content)?,
            weight,
        };
        self.call::<Version>(ApiRequest::post(format!("/v1/mooclet/{mooclet}/versions"), &body))
            .map(|v| v.id)
    }

    fn set_policy(&mut self, mooclet: MoocletId, policy: PolicySpec) -> Result<()> {
        self.call::<Mooclet>(ApiRequest::put(format!("/v1/mooclet/{mooclet}/policy"), &policy))
            .map(drop)
    }

    fn assign(&mut self, mooclet: MoocletId, learner: &str) -> Result<AssignmentRecord> {
        let target = format!(
            "/v1/mooclet/{mooclet}/run?{}",
            form_urlencoded::Serializer::new(String::new())
                .append_pair("learner", learner)
                .finish()
        );
        self.call::<mooclet_core::Assignment>(ApiRequest::get(target)).map(|a| a.record)
    }

    fn push_value(
        &mut self,
        learner: &str,
        variable: &str,
        value: Value,
        provenance: Option<Provenance>,
    ) -> Result<()> {
        let body = PushValueBody {
            learner: learner.into(),
            variable: variable.into(),
            value,
            provenance,
        };
        self.call::<ValueRecord>(ApiRequest::post("/v1/value", &body)).map(drop)
    }

    fn reward(&mut self, mooclet: MoocletId, version: VersionId, learner: &str, success: bool) -> Result<()> {
        let body = RewardBody {
            mooclet,
            version,
            learner: learner.into(),
            outcome: Outcome::Flag(success),
        };
        self.call::<serde_json::Value>(ApiRequest::post("/v1/reward", &body)).map(drop)
    }

    fn assignment_log(&mut self, mooclet: MoocletId) -> Result<Vec<AssignmentRecord>> {
        let resp = self.send(ApiRequest::get(format!("/v1/mooclet/{mooclet}/assignments")));
        if let Some(e) = resp.api_error() {
            return Err(e.into_core());
        }
        resp.text()
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Internal(format!("bad log line: {e}"))))
            .collect()
    }

    fn values(&mut self, filter: &RecordFilter) -> Result<Vec<ValueRecord>> {
        self.call(ApiRequest::new(Method::Post, "/v1/query").json(filter))
    }
}
