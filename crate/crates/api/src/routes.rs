//! The endpoint table. Each entry pairs a path pattern with the roles
//! allowed to call it. Every request is matched against this table before it
//! reaches the engine.

use std::fmt;

use mooclet_core::Role;
use Role::{Admin, Instructor, Platform, Researcher};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Get,
    Post,
    Put,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
            Method::Put => "PUT",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "GET" => Some(Method::Get),
            "POST" => Some(Method::Post),
            "PUT" => Some(Method::Put),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    ListMooclets,
    CreateMooclet,
    GetMooclet,
    AddVersion,
    UpdateVersion,
    SetPolicy,
    SetPin,
    Run,
    AssignmentLog,
    Reward,
    PushValue,
    ListVariables,
    DefineVariable,
    Query,
    Dp,
    Budget,
    Export,
    Import,
    Stats,
    ListQuestions,
    CreateQuestion,
    Options,
    Respond,
}

#[derive(Debug, Clone, Copy)]
pub struct Endpoint {
    pub op: Op,
    pub method: Method,
    /// Path pattern; `{id}` and `{version}` match one segment.
    pub path: &'static str,
    pub roles: &'static [Role],
    /// State-changing; honors `Idempotency-Key`.
    pub mutating: bool,
}

const EVERYONE: &[Role] = &[Platform, Instructor, Researcher, Admin];
const MANAGERS: &[Role] = &[Instructor, Admin];
const READERS: &[Role] = &[Instructor, Researcher, Admin];
const PLATFORMS: &[Role] = &[Platform, Admin];
const RESEARCH: &[Role] = &[Researcher, Admin];
const RESPONDENTS: &[Role] = &[Instructor, Researcher];

macro_rules! ep {
    ($op:ident, $m:ident, $path:literal, $roles:expr, $mutating:literal) => {
        Endpoint {
            op: Op::$op,
            method: Method::$m,
            path: $path,
            roles: $roles,
            mutating: $mutating,
        }
    };
}

pub const ENDPOINTS: &[Endpoint] = &[
    ep!(ListMooclets, Get, "/v1/mooclets", EVERYONE, false),
    ep!(CreateMooclet, Post, "/v1/mooclets", MANAGERS, true),
    ep!(GetMooclet, Get, "/v1/mooclet/{id}", EVERYONE, false),
    ep!(AddVersion, Post, "/v1/mooclet/{id}/versions", MANAGERS, true),
    ep!(UpdateVersion, Put, "/v1/mooclet/{id}/version/{version}", MANAGERS, true),
    ep!(SetPolicy, Put, "/v1/mooclet/{id}/policy", MANAGERS, true),
    ep!(SetPin, Put, "/v1/mooclet/{id}/pin", MANAGERS, true),
    ep!(Run, Get, "/v1/mooclet/{id}/run", PLATFORMS, true),
    ep!(AssignmentLog, Get, "/v1/mooclet/{id}/assignments", READERS, false),
    ep!(Reward, Post, "/v1/reward", PLATFORMS, true),
    ep!(PushValue, Post, "/v1/value", PLATFORMS, true),
    ep!(ListVariables, Get, "/v1/variables", EVERYONE, false),
    ep!(DefineVariable, Post, "/v1/variables", READERS, true),
    ep!(Query, Post, "/v1/query", READERS, false),
    ep!(Dp, Post, "/v1/dp", &[Researcher], true),
    ep!(Budget, Get, "/v1/budget", &[Researcher], false),
    ep!(Export, Post, "/v1/export", RESEARCH, false),
    ep!(Import, Post, "/v1/import", &[Admin], true),
    ep!(Stats, Get, "/v1/stats/{id}", READERS, false),
    ep!(ListQuestions, Get, "/v1/questions", READERS, false),
    ep!(CreateQuestion, Post, "/v1/questions", READERS, true),
    ep!(Options, Get, "/v1/question/{id}/options", READERS, false),
    ep!(Respond, Post, "/v1/question/{id}/responses", RESPONDENTS, true),
];

impl Endpoint {
    pub fn allows(&self, role: Role) -> bool {
        self.roles.contains(&role)
    }

    /// Path parameters when `path` matches this endpoint's pattern.
    pub fn matches(&self, path: &str) -> Option<Vec<String>> {
        let mut params = Vec::new();
        let mut pattern = self.path.split('/');
        let mut actual = path.split('/');
        loop {
            match (pattern.next(), actual.next()) {
                (None, None) => return Some(params),
                (Some(p), Some(a)) if p.starts_with('{') => {
                    if a.is_empty() {
                        return None;
                    }
                    params.push(a.to_owned());
                }
                (Some(p), Some(a)) if p == a => {}
                _ => return None,
            }
        }
    }
}

pub enum Resolved {
    Found(&'static Endpoint, Vec<String>),
    /// The path exists under another method.
    WrongMethod,
    Missing,
}

pub fn resolve(method: Method, path: &str) -> Resolved {
    let path = path.strip_suffix('/').filter(|p| !p.is_empty()).unwrap_or(path);
    let mut seen = false;
    for ep in ENDPOINTS {
        if let Some(params) = ep.matches(path) {
            if ep.method == method {
                return Resolved::Found(ep, params);
            }
            seen = true;
        }
    }
    if seen {
        Resolved::WrongMethod
    } else {
        Resolved::Missing
    }
}
