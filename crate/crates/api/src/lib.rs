//! Network boundary of the MOOClet engine.
//!
//! All endpoints live under `/v1`, take and return JSON, and authenticate
//! with `Authorization: Bearer <token>`. State-changing requests may carry
//! an `Idempotency-Key` header; a repeated key with the same request
//! returns the first response without running it again.
//!
//! The endpoint table with its role matrix is [`routes::ENDPOINTS`].
//! Requests are handled by [`Service`], which does not care about the
//! transport: [`http`] puts it behind axum, and [`Client`] talks to it over
//! the wire.
//!
//! ```
//! use std::sync::Arc;
//! use mooclet_api::{ApiRequest, Service};
//! use mooclet_core::{Engine, EngineConfig, Principal, Role};
//!
//! let mut svc = Service::new(Arc::new(Engine::new(EngineConfig::deterministic(1))));
//! svc.add_principal("t-inst", Principal::new("ana", Role::Instructor), None).unwrap();
//!
//! let req = ApiRequest::post("/v1/mooclets", &serde_json::json!({"name": "quiz-hints"}))
//!     .token("t-inst");
//! let resp = svc.handle(req);
//! assert_eq!(resp.status, 201);
//! ```

pub mod client;
pub mod config;
pub mod error;
pub mod http;
pub mod routes;
pub mod service;

pub use client::{ApiBackend, Client};
pub use config::{ConfigError, PrincipalConfig, ServiceConfig};
pub use error::{status_for, ApiError};
pub use routes::{Endpoint, Method, Op, ENDPOINTS};
pub use http::{router, serve, serve_until_ctrl_c, BackgroundServer, IDEMPOTENCY_HEADER};
pub use service::{ApiRequest, ApiResponse, Service, Transport, CSV, JSON, NDJSON};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/api-reference.md")]
    pub struct ApiReference;
}
