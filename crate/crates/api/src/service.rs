//! Transport-independent request handling.
//!
//! [`Service::handle`] takes an [`ApiRequest`] (method, path with query,
//! bearer token, optional idempotency key, JSON body) and returns an
//! [`ApiResponse`]. The axum adapter in [`crate::http`] and the in-process
//! CLI mode both go through it.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Arc;

use mooclet_core::{
    AggregateQuery, Context, Engine, ErrorKind, MoocletId, PolicySpec, Principal, Provenance,
    QuestionId, RecordFilter, Respondent, Role, Value, Variable, VersionId, VersionUpdate,
};
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::config::ServiceConfig;
use crate::error::{ApiError, ErrorBody};
use crate::routes::{self, Endpoint, Method, Op, Resolved};

pub const JSON: &str = "application/json";
pub const NDJSON: &str = "application/x-ndjson";
pub const CSV: &str = "text/csv; charset=utf-8";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiRequest {
    pub method: Method,
    /// Path plus optional `?query`.
    pub target: String,
    pub token: Option<String>,
    pub idempotency_key: Option<String>,
    pub body: Vec<u8>,
}

impl ApiRequest {
    pub fn new(method: Method, target: impl Into<String>) -> Self {
        ApiRequest {
            method,
            target: target.into(),
            token: None,
            idempotency_key: None,
            body: Vec::new(),
        }
    }

    pub fn get(target: impl Into<String>) -> Self {
        Self::new(Method::Get, target)
    }

    pub fn post<T: Serialize + ?Sized>(target: impl Into<String>, body: &T) -> Self {
        Self::new(Method::Post, target).json(body)
    }

    pub fn put<T: Serialize + ?Sized>(target: impl Into<String>, body: &T) -> Self {
        Self::new(Method::Put, target).json(body)
    }

    pub fn json<T: Serialize + ?Sized>(mut self, body: &T) -> Self {
        self.body = serde_json::to_vec(body).expect("request body serializes");
        self
    }

    pub fn token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn idempotency_key(mut self, key: impl Into<String>) -> Self {
        self.idempotency_key = Some(key.into());
        self
    }

    fn split_target(&self) -> (&str, Vec<(String, String)>) {
        match self.target.split_once('?') {
            Some((path, query)) => (
                path,
                form_urlencoded::parse(query.as_bytes()).into_owned().collect(),
            ),
            None => (&self.target, Vec::new()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiResponse {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl ApiResponse {
    pub fn json<T: Serialize + ?Sized>(status: u16, value: &T) -> Self {
        ApiResponse {
            status,
            content_type: JSON,
            body: serde_json::to_vec(value).expect("response serializes"),
        }
    }

    pub fn error(err: ApiError) -> Self {
        Self::json(err.status(), &ErrorBody { error: err })
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn text(&self) -> &str {
        std::str::from_utf8(&self.body).unwrap_or("")
    }

    /// The error carried by a failed response.
    pub fn api_error(&self) -> Option<ApiError> {
        if self.is_success() {
            return None;
        }
        Some(
            serde_json::from_slice::<ErrorBody>(&self.body)
                .map(|b| b.error)
                .unwrap_or_else(|_| {
                    ApiError::new(
                        ErrorKind::Internal,
                        format!("HTTP {}: {}", self.status, self.text()),
                    )
                }),
        )
    }

    /// Decodes a successful JSON body, or returns the response's error.
    pub fn decode<T: DeserializeOwned>(&self) -> Result<T, ApiError> {
        if let Some(e) = self.api_error() {
            return Err(e);
        }
        serde_json::from_slice(&self.body)
            .map_err(|e| ApiError::new(ErrorKind::Internal, format!("undecodable response: {e}")))
    }
}

/// Anything that answers API requests: the in-process service or a remote
/// server.
pub trait Transport {
    fn send(&self, request: ApiRequest) -> ApiResponse;
}

impl<T: Transport + ?Sized> Transport for &T {
    fn send(&self, request: ApiRequest) -> ApiResponse {
        (**self).send(request)
    }
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, request: ApiRequest) -> ApiResponse {
        (**self).send(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Fingerprint {
    method: Method,
    target: String,
    body: Vec<u8>,
}

type Slot = Arc<Mutex<Option<(Fingerprint, ApiResponse)>>>;

pub struct Service {
    engine: Arc<Engine>,
    principals: HashMap<String, Principal>,
    /// Keyed by (principal name, idempotency key). Kept in memory only.
    replies: Mutex<HashMap<(String, String), Slot>>,
}

impl Service {
    pub fn new(engine: Arc<Engine>) -> Self {
        Service {
            engine,
            principals: HashMap::new(),
            replies: Mutex::new(HashMap::new()),
        }
    }

    /// Opens (or creates) the engine and registers the configured principals.
    pub fn from_config(config: &ServiceConfig) -> mooclet_core::Result<Self> {
        let engine = match &config.data_dir {
            Some(dir) => Engine::open(dir, config.engine_config())?,
            None => Engine::new(config.engine_config()),
        };
        let mut service = Service::new(Arc::new(engine));
        for p in &config.principals {
            service.add_principal(&p.token, Principal::new(&p.name, p.role), p.epsilon_total)?;
        }
        Ok(service)
    }

    pub fn add_principal(
        &mut self,
        token: &str,
        principal: Principal,
        epsilon_total: Option<f64>,
    ) -> mooclet_core::Result<()> {
        if let Some(eps) = epsilon_total {
            self.engine.register_budget(&principal.name, eps)?;
        }
        self.principals.insert(token.to_owned(), principal);
        Ok(())
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn handle(&self, req: ApiRequest) -> ApiResponse {
        let Some(principal) = req.token.as_deref().and_then(|t| self.principals.get(t)) else {
            let mut r = ApiResponse::error(ApiError::new(
                ErrorKind::Permission,
                "missing or unknown bearer token",
            ));
            r.status = 401;
            return r;
        };
        let (path, query) = req.split_target();
        let (endpoint, params) = match routes::resolve(req.method, path) {
            Resolved::Found(ep, params) => (ep, params),
            Resolved::WrongMethod => {
                let mut r = ApiResponse::error(ApiError::validation(format!(
                    "{} is not supported on {path}",
                    req.method
                )));
                r.status = 405;
                return r;
            }
            Resolved::Missing => {
                return ApiResponse::error(ApiError::new(
                    ErrorKind::NotFound,
                    format!("endpoint {path}"),
                ))
            }
        };
        if !endpoint.allows(principal.role) {
            return ApiResponse::error(ApiError::new(
                ErrorKind::Permission,
                format!(
                    "{} {} is not available to the {} role",
                    endpoint.method,
                    endpoint.path,
                    principal.role.as_str()
                ),
            ));
        }
        let call = Call {
            engine: &self.engine,
            principal,
            params: &params,
            query: &query,
            body: &req.body,
        };
        match (&req.idempotency_key, endpoint.mutating) {
            (Some(key), true) => self.replay_or_run(key, &req, endpoint, call),
            _ => call.dispatch(endpoint.op),
        }
    }

    fn replay_or_run(
        &self,
        key: &str,
        req: &ApiRequest,
        endpoint: &Endpoint,
        call: Call<'_>,
    ) -> ApiResponse {
        let slot = self
            .replies
            .lock()
            .entry((call.principal.name.clone(), key.to_owned()))
            .or_default()
            .clone();
        // held while the request runs so a concurrent duplicate waits for it
        let mut slot = slot.lock();
        let fingerprint = Fingerprint {
            method: req.method,
            target: req.target.clone(),
            body: req.body.clone(),
        };
        if let Some((seen, reply)) = &*slot {
            if *seen == fingerprint {
                return reply.clone();
            }
            return ApiResponse::error(ApiError::new(
                ErrorKind::Conflict,
                "idempotency key was already used for a different request",
            ));
        }
        let reply = call.dispatch(endpoint.op);
        if reply.status < 500 {
            *slot = Some((fingerprint, reply.clone()));
        }
        reply
    }
}

impl Transport for Service {
    fn send(&self, request: ApiRequest) -> ApiResponse {
        self.handle(request)
    }
}

// ---- request bodies -------------------------------------------------------

fn default_true() -> bool {
    true
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateMoocletBody {
    pub name: String,
    #[serde(default = "uniform")]
    pub policy: PolicySpec,
    #[serde(default = "default_true")]
    pub sticky: bool,
}

fn uniform() -> PolicySpec {
    PolicySpec::UniformRandom
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AddVersionBody {
    pub name: String,
    pub content: Box<RawValue>,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PinBody {
    pub version: Option<VersionId>,
}

/// Binary outcome; accepts `true`/`false` or `1`/`0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Outcome {
    Flag(bool),
    Number(u8),
}

impl Outcome {
    fn success(self) -> Result<bool, ApiError> {
        match self {
            Outcome::Flag(b) => Ok(b),
            Outcome::Number(0) => Ok(false),
            Outcome::Number(1) => Ok(true),
            Outcome::Number(n) => Err(ApiError::validation(format!("outcome must be 0 or 1, got {n}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardBody {
    pub mooclet: MoocletId,
    pub version: VersionId,
    pub learner: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushValueBody {
    pub learner: String,
    pub variable: String,
    pub value: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpBody {
    #[serde(flatten)]
    pub query: AggregateQuery,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportBody {
    pub csv: String,
    #[serde(default)]
    pub catalog: Vec<Variable>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportReply {
    pub imported: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateQuestionBody {
    pub prompt: String,
    #[serde(default)]
    pub options: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResponseBody {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_text: Option<String>,
    #[serde(default)]
    pub selected: Vec<String>,
}

// ---- dispatch -------------------------------------------------------------

struct Call<'a> {
    engine: &'a Engine,
    principal: &'a Principal,
    params: &'a [String],
    query: &'a [(String, String)],
    body: &'a [u8],
}

type Reply = Result<ApiResponse, ApiError>;

fn ok<T: Serialize + ?Sized>(value: &T) -> Reply {
    Ok(ApiResponse::json(200, value))
}

fn created<T: Serialize + ?Sized>(value: &T) -> Reply {
    Ok(ApiResponse::json(201, value))
}

impl Call<'_> {
    fn dispatch(&self, op: Op) -> ApiResponse {
        self.run(op).unwrap_or_else(ApiResponse::error)
    }

    fn body<T: DeserializeOwned>(&self) -> Result<T, ApiError> {
        let bytes = if self.body.iter().all(u8::is_ascii_whitespace) {
            b"{}".as_slice()
        } else {
            self.body
        };
        serde_json::from_slice(bytes).map_err(|e| ApiError::validation(format!("malformed body: {e}")))
    }

    fn param<T: FromStr<Err = mooclet_core::Error>>(&self, i: usize) -> Result<T, ApiError> {
        Ok(self.params[i].parse::<T>()?)
    }

    fn query_param(&self, name: &str) -> Option<&str> {
        self.query.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    /// `ctx.<variable>=<value>` query parameters, typed by the catalog.
    fn context(&self) -> Result<Context, ApiError> {
        let mut ctx = Context::new();
        for (k, v) in self.query {
            if let Some(name) = k.strip_prefix("ctx.") {
                let var = self
                    .engine
                    .list_variables()
                    .into_iter()
                    .find(|x| x.name == name)
                    .ok_or_else(|| ApiError::new(ErrorKind::NotFound, format!("variable {name:?}")))?;
                ctx.insert(name.to_owned(), Value::parse_as(var.value_type, v)?);
            }
        }
        Ok(ctx)
    }

    fn run(&self, op: Op) -> Reply {
        let e = self.engine;
        match op {
            Op::ListMooclets => ok(&e.mooclets()),
            Op::CreateMooclet => {
                let b: CreateMoocletBody = self.body()?;
                created(&e.create_mooclet(&b.name, b.policy, b.sticky)?)
            }
            Op::GetMooclet => ok(&e.mooclet(self.param(0)?)?),
            Op::AddVersion => {
                let b: AddVersionBody = self.body()?;
                created(&e.add_version(self.param(0)?, &b.name, b.content, b.weight)?)
            }
            Op::UpdateVersion => {
                let b: VersionUpdate = self.body()?;
                ok(&e.update_version(self.param(0)?, self.param(1)?, b)?)
            }
            Op::SetPolicy => {
                let b: PolicySpec = self.body()?;
                ok(&e.set_policy(self.param(0)?, b)?)
            }
            Op::SetPin => {
                let b: PinBody = self.body()?;
                ok(&e.pin_version(self.param(0)?, b.version)?)
            }
            Op::Run => {
                let learner = self
                    .query_param("learner")
                    .filter(|l| !l.is_empty())
                    .ok_or_else(|| ApiError::validation("query parameter `learner` is required"))?;
                ok(&e.assign(self.param(0)?, learner, &self.context()?)?)
            }
            Op::AssignmentLog => {
                let id: MoocletId = self.param(0)?;
                e.mooclet(id)?;
                let mut out = Vec::new();
                e.write_assignment_log(&mut out, Some(id))?;
                Ok(ApiResponse {
                    status: 200,
                    content_type: NDJSON,
                    body: out,
                })
            }
            Op::Reward => {
                let b: RewardBody = self.body()?;
                ok(&e.update_reward(b.mooclet, b.version, &b.learner, b.outcome.success()?)?)
            }
            Op::PushValue => {
                let b: PushValueBody = self.body()?;
                created(&e.push_value(&b.learner, &b.variable, b.value, b.provenance)?)
            }
            Op::ListVariables => ok(&e.list_variables()),
            Op::DefineVariable => {
                let b: Variable = self.body()?;
                created(&e.define_variable(b)?)
            }
            Op::Query => {
                let f: RecordFilter = self.body()?;
                ok(&e.query_values(&f, self.principal)?)
            }
            Op::Dp => {
                let b: DpBody = self.body()?;
                ok(&e.dp_aggregate(&b.query, b.epsilon, self.principal)?)
            }
            Op::Budget => match e.budget(&self.principal.name) {
                Some(b) => ok(&b),
                None => Err(ApiError::new(
                    ErrorKind::NotFound,
                    format!("privacy budget for {:?}", self.principal.name),
                )),
            },
            Op::Export => {
                let f: RecordFilter = self.body()?;
                let mut out = Vec::new();
                e.export(&f, self.principal, &mut out)?;
                Ok(ApiResponse {
                    status: 200,
                    content_type: CSV,
                    body: out,
                })
            }
            Op::Import => {
                let b: ImportBody = self.body()?;
                let imported = e.import(b.csv.as_bytes(), &b.catalog)?;
                ok(&ImportReply { imported })
            }
            Op::Stats => ok(&e.stats(self.param(0)?)?),
            Op::ListQuestions => ok(&e.questions()),
            Op::CreateQuestion => {
                let b: CreateQuestionBody = self.body()?;
                created(&e.create_question(&b.prompt, &b.options)?)
            }
            Op::Options => ok(&e.get_options(self.param::<QuestionId>(0)?)?),
            Op::Respond => {
                let b: ResponseBody = self.body()?;
                let role = match self.principal.role {
                    Role::Researcher => Respondent::Researcher,
                    _ => Respondent::Instructor,
                };
                created(&e.submit_response(
                    self.param(0)?,
                    role,
                    b.free_text.as_deref(),
                    &b.selected,
                )?)
            }
        }
    }
}
