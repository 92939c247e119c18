//! `mooclet`: command-line client, working against a server or a local
//! data directory.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mooclet_api::{
    serve_until_ctrl_c, ApiError, ApiRequest, ApiResponse, Client, Method, Service, ServiceConfig,
    Transport, CSV, NDJSON,
};
use mooclet_core::sim::{compare_policies, run_simulation, ComparisonEntry, SimConfig};
use mooclet_core::{ErrorKind, Principal, Role};
use serde::Deserialize;
use serde_json::{json, Value};

/// Token of the implicit admin used by `--local` without configured principals.
const LOCAL_TOKEN: &str = "local-admin";

#[derive(Parser)]
#[command(name = "mooclet", version, about = "Adaptive experiments in course content")]
struct Cli {
    /// Server base URL.
    #[arg(long, global = true, env = "MOOCLET_SERVER", default_value = "http://127.0.0.1:8080")]
    server: String,

    /// Work on a data directory directly instead of talking to a server.
    /// Takes precedence over `--server`.
    #[arg(long, global = true, value_name = "DIR")]
    local: Option<PathBuf>,

    /// Service configuration (TOML), used by `serve` and `--local`.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[arg(long, global = true, env = "MOOCLET_TOKEN", hide_env_values = true)]
    token: Option<String>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    /// Sent as `Idempotency-Key` with state-changing requests.
    #[arg(long, global = true)]
    idempotency_key: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Create a MOOClet.
    Create {
        name: String,
        /// Policy as JSON, e.g. '{"kind":"thompson_bernoulli"}'.
        #[arg(long, default_value = r#"{"kind":"uniform_random"}"#)]
        policy: String,
        /// Draw again on every request instead of repeating the first version.
        #[arg(long)]
        no_sticky: bool,
    },
    /// List MOOClets.
    List,
    /// Show one MOOClet.
    Show { mooclet: String },
    /// Pin a version for all future assignments, or clear the pin.
    Pin {
        mooclet: String,
        version: Option<String>,
        #[arg(long, conflicts_with = "version")]
        clear: bool,
    },
    #[command(subcommand)]
    Version(VersionCmd),
    #[command(subcommand)]
    Policy(PolicyCmd),
    /// Assign a version to a learner.
    Run {
        mooclet: String,
        learner: String,
        /// Context values, `variable=value`.
        #[arg(long = "ctx", value_name = "VAR=VALUE")]
        context: Vec<String>,
    },
    /// Record a binary outcome for a learner's assignment.
    Reward {
        mooclet: String,
        version: String,
        learner: String,
        #[arg(value_parser = clap::value_parser!(u8).range(0..=1))]
        outcome: u8,
    },
    /// Assignment log of a MOOClet, one JSON object per line.
    Log { mooclet: String },
    /// Per-version counts and posteriors.
    Stats { mooclet: String },
    #[command(subcommand)]
    Value(ValueCmd),
    #[command(subcommand)]
    Vars(VarsCmd),
    /// Records matching a filter.
    Query(FilterArgs),
    /// Records as CSV.
    Export {
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Load records from an exported CSV.
    Import {
        csv: PathBuf,
        /// Variable definitions (JSON array) to create first.
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    #[command(subcommand)]
    Sim(SimCmd),
    /// Run the HTTP service.
    Serve {
        /// Overrides `listen` from the config.
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Subcommand)]
enum VersionCmd {
    /// Add a version.
    Add {
        mooclet: String,
        name: String,
        /// Content as JSON; kept byte for byte.
        #[arg(long)]
        content: String,
        #[arg(long, default_value_t = 1.0)]
        weight: f64,
    },
    /// Change a version's weight or archive it.
    Update {
        mooclet: String,
        version: String,
        #[arg(long)]
        weight: Option<f64>,
        #[arg(long)]
        archived: Option<bool>,
    },
}

#[derive(Subcommand)]
enum PolicyCmd {
    /// Replace the policy; the argument is the policy JSON.
    Set { mooclet: String, policy: String },
}

#[derive(Subcommand)]
enum ValueCmd {
    /// Record a value. Numbers and booleans are taken as such, anything
    /// else as text.
    Push {
        learner: String,
        variable: String,
        value: String,
        /// Assignment this value is an outcome of, as
        /// `mooclet,version,assignment`.
        #[arg(long)]
        provenance: Option<String>,
    },
}

#[derive(Subcommand)]
enum VarsCmd {
    List,
    Define {
        name: String,
        #[arg(long)]
        kind: String,
        #[arg(long = "type")]
        value_type: String,
        #[arg(long, default_value = "")]
        description: String,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        bounds: Option<Vec<f64>>,
    },
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    variable: Option<String>,
    /// Learner pseudonym.
    #[arg(long)]
    learner: Option<String>,
}

#[derive(Subcommand)]
enum SimCmd {
    /// Simulate one seed and write the report.
    Run {
        config: PathBuf,
        /// Defaults to the first seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compare the `[[compare]]` policies of a config on paired seeds.
    Compare {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Deserialize)]
struct CompareFile {
    #[serde(flatten)]
    config: SimConfig,
    compare: Vec<ComparisonEntry>,
}

#[derive(Debug)]
enum CliError {
    Api(ApiError),
    Usage(String),
}

impl From<ApiError> for CliError {
    fn from(e: ApiError) -> Self {
        CliError::Api(e)
    }
}

impl From<mooclet_core::Error> for CliError {
    fn from(e: mooclet_core::Error) -> Self {
        CliError::Api(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Api(ApiError::new(ErrorKind::Internal, e.to_string()))
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Validation
        | ErrorKind::Conflict
        | ErrorKind::Budget
        | ErrorKind::NoVersions
        | ErrorKind::Provenance => 1,
        ErrorKind::NotFound | ErrorKind::Permission => 2,
        ErrorKind::Internal => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Api(e)) => {
            if cli.format == Format::Json {
                eprintln!("{}", json!({"error": e}));
            } else {
                eprintln!("error[{}]: {}", e.code.code(), e.message);
            }
            ExitCode::from(exit_code(e.code))
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ServiceConfig, CliError> {
    match &cli.config {
        Some(path) => ServiceConfig::load(path).map_err(|e| usage(e.to_string())),
        None => Ok(ServiceConfig::default()),
    }
}

fn local_service(cli: &Cli, dir: &Path) -> Result<(Service, Option<String>), CliError> {
    let mut config = load_config(cli)?;
    config.data_dir = Some(dir.to_owned());
    let mut service = Service::from_config(&config)?;
    if config.principals.is_empty() {
        service.add_principal(LOCAL_TOKEN, Principal::new("local", Role::Admin), None)?;
        return Ok((service, Some(LOCAL_TOKEN.into())));
    }
    Ok((service, cli.token.clone()))
}

fn parse_json(what: &str, text: &str) -> Result<Value, CliError> {
    serde_json::from_str(text).map_err(|e| usage(format!("{what} is not valid JSON: {e}")))
}

/// Numbers and booleans as themselves, everything else as text.
fn parse_value(text: &str) -> Value {
    match serde_json::from_str::<Value>(text) {
        Ok(v @ (Value::Number(_) | Value::Bool(_) | Value::String(_))) => v,
        _ => Value::String(text.to_owned()),
    }
}

fn query_string(pairs: &[(String, String)]) -> String {
    let mut q = form_urlencoded::Serializer::new(String::new());
    q.extend_pairs(pairs);
    format!("?{}", q.finish())
}

fn filter_body(f: &FilterArgs) -> Value {
    let mut body = serde_json::Map::new();
    if let Some(v) = &f.variable {
        body.insert("variable".into(), v.clone().into());
    }
    if let Some(l) = &f.learner {
        body.insert("learner".into(), l.clone().into());
    }
    Value::Object(body)
}

/// The request a command makes, or `None` for commands handled locally.
fn request_for(cmd: &Command) -> Result<Option<ApiRequest>, CliError> {
    let req = match cmd {
        Command::Create {
            name,
            policy,
            no_sticky,
        } => ApiRequest::post(
            "/v1/mooclets",
            &json!({"name": name, "policy": parse_json("policy", policy)?, "sticky": !no_sticky}),
        ),
        Command::List => ApiRequest::get("/v1/mooclets"),
        Command::Show { mooclet } => ApiRequest::get(format!("/v1/mooclet/{mooclet}")),
        Command::Pin {
            mooclet,
            version,
            clear,
        } => {
            if version.is_none() && !clear {
                return Err(usage("give a version to pin, or --clear"));
            }
            ApiRequest::put(format!("/v1/mooclet/{mooclet}/pin"), &json!({"version": version}))
        }
        Command::Version(VersionCmd::Add {
            mooclet,
            name,
            content,
            weight,
        }) => {
            parse_json("content", content)?;
            // spliced in as text so the content keeps its exact bytes
            let body = format!(
                r#"{{"name":{},"weight":{},"content":{}}}"#,
                Value::from(name.as_str()),
                json!(weight),
                content
            );
            let mut req = ApiRequest::new(Method::Post, format!("/v1/mooclet/{mooclet}/versions"));
            req.body = body.into_bytes();
            req
        }
        Command::Version(VersionCmd::Update {
            mooclet,
            version,
            weight,
            archived,
        }) => ApiRequest::put(
            format!("/v1/mooclet/{mooclet}/version/{version}"),
            &json!({"weight": weight, "archived": archived}),
        ),
        Command::Policy(PolicyCmd::Set { mooclet, policy }) => ApiRequest::put(
            format!("/v1/mooclet/{mooclet}/policy"),
            &parse_json("policy", policy)?,
        ),
        Command::Run {
            mooclet,
            learner,
            context,
        } => {
            let mut pairs = vec![("learner".to_owned(), learner.clone())];
            for c in context {
                let (k, v) = c
                    .split_once('=')
                    .ok_or_else(|| usage(format!("--ctx {c:?} is not VAR=VALUE")))?;
                pairs.push((format!("ctx.{k}"), v.to_owned()));
            }
            ApiRequest::get(format!("/v1/mooclet/{mooclet}/run{}", query_string(&pairs)))
        }
        Command::Reward {
            mooclet,
            version,
            learner,
            outcome,
        } => ApiRequest::post(
            "/v1/reward",
            &json!({"mooclet": mooclet, "version": version, "learner": learner, "outcome": outcome}),
        ),
        Command::Log { mooclet } => ApiRequest::get(format!("/v1/mooclet/{mooclet}/assignments")),
        Command::Stats { mooclet } => ApiRequest::get(format!("/v1/stats/{mooclet}")),
        Command::Value(ValueCmd::Push {
            learner,
            variable,
            value,
            provenance,
        }) => {
            let mut body = json!({"learner": learner, "variable": variable, "value": parse_value(value)});
            if let Some(p) = provenance {
                let parts: Vec<&str> = p.split(',').map(str::trim).collect();
                let [m, v, a] = parts[..] else {
                    return Err(usage("--provenance must be mooclet,version,assignment"));
                };
                body["provenance"] = json!({"mooclet": m, "version": v, "assignment": a});
            }
            ApiRequest::post("/v1/value", &body)
        }
        Command::Vars(VarsCmd::List) => ApiRequest::get("/v1/variables"),
        Command::Vars(VarsCmd::Define {
            name,
            kind,
            value_type,
            description,
            bounds,
        }) => {
            let mut body = json!({
                "name": name, "kind": kind, "value_type": value_type, "description": description,
            });
            if let Some(b) = bounds {
                body["bounds"] = json!({"lo": b[0], "hi": b[1]});
            }
            ApiRequest::post("/v1/variables", &body)
        }
        Command::Query(f) => ApiRequest::post("/v1/query", &filter_body(f)),
        Command::Export { filter, .. } => ApiRequest::post("/v1/export", &filter_body(filter)),
        Command::Import { csv, catalog } => {
            let text = std::fs::read_to_string(csv)?;
            let catalog = match catalog {
                Some(path) => parse_json("catalog", &std::fs::read_to_string(path)?)?,
                None => json!([]),
            };
            ApiRequest::post("/v1/import", &json!({"csv": text, "catalog": catalog}))
        }
        Command::Sim(_) | Command::Serve { .. } => return Ok(None),
    };
    Ok(Some(req))
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Sim(cmd) => return simulate(cli, cmd),
        Command::Serve { listen } => return serve(cli, listen.as_deref()),
        _ => {}
    }
    let Some(mut req) = request_for(&cli.command)? else {
        unreachable!("every remaining command makes a request")
    };
    if req.method != Method::Get || matches!(cli.command, Command::Run { .. }) {
        req.idempotency_key = cli.idempotency_key.clone();
    }
    let resp = match &cli.local {
        Some(dir) => {
            let (service, token) = local_service(cli, dir)?;
            req.token = token;
            service.send(req)
        }
        None => Client::new(&cli.server, cli.token.clone()).send(req),
    };
    if let Some(e) = resp.api_error() {
        return Err(e.into());
    }
    if let Command::Export { out: Some(path), .. } = &cli.command {
        std::fs::write(path, &resp.body)?;
        return Ok(());
    }
    print_response(cli, &resp)
}

fn print_response(cli: &Cli, resp: &ApiResponse) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    if cli.format == Format::Json || resp.content_type == CSV || resp.content_type == NDJSON {
        out.write_all(&resp.body)?;
        if !resp.body.ends_with(b"\n") {
            out.write_all(b"\n")?;
        }
        return Ok(());
    }
    let v: Value = serde_json::from_slice(&resp.body).unwrap_or(Value::Null);
    match &cli.command {
        Command::List => {
            for m in v.as_array().into_iter().flatten() {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{} versions",
                    m["id"].as_str().unwrap_or(""),
                    m["name"].as_str().unwrap_or(""),
                    m["policy"]["kind"].as_str().unwrap_or(""),
                    m["versions"].as_array().map_or(0, Vec::len)
                )?;
            }
        }
        Command::Vars(VarsCmd::List) => {
            for var in v.as_array().into_iter().flatten() {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}",
                    var["name"].as_str().unwrap_or(""),
                    var["kind"].as_str().unwrap_or(""),
                    var["value_type"].as_str().unwrap_or(""),
                    var["description"].as_str().unwrap_or("")
                )?;
            }
        }
        Command::Run { .. } => {
            writeln!(
                out,
                "{} {}{}",
                v["version"]["id"].as_str().unwrap_or(""),
                v["version"]["name"].as_str().unwrap_or(""),
                if v["repeat"].as_bool() == Some(true) { " (repeat)" } else { "" }
            )?;
        }
        _ => writeln!(out, "{}", serde_json::to_string_pretty(&v).unwrap_or_default())?,
    }
    Ok(())
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn simulate(cli: &Cli, cmd: &SimCmd) -> Result<(), CliError> {
    match cmd {
        SimCmd::Run {
            config,
            seed,
            report,
            trace,
        } => {
            let cfg: SimConfig = read_toml(config)?;
            let seed = seed
                .or_else(|| cfg.seeds.first().copied())
                .ok_or_else(|| usage("no --seed given and the config lists no seeds"))?;
            let r = run_simulation(&cfg, seed)?;
            if let Some(path) = report {
                std::fs::write(path, r.to_json())?;
            }
            if let Some(path) = trace {
                std::fs::write(path, r.trace_csv())?;
            }
            if cli.format == Format::Json {
                println!("{}", r.to_json());
            } else {
                println!(
                    "seed {seed}: regret {:.2}, final best-arm share {:.3}, counts {:?}",
                    r.total_regret, r.final_best_share, r.counts
                );
            }
        }
        SimCmd::Compare { config, out } => {
            let file: CompareFile = read_toml(config)?;
            let table = compare_policies(&file.config, &file.compare)?;
            let text = serde_json::to_string(&table).map_err(|e| usage(e.to_string()))?;
            if let Some(path) = out {
                std::fs::write(path, &text)?;
            }
            if cli.format == Format::Json {
                println!("{text}");
            } else {
                println!("policy\tmean regret\tmean final share");
                for row in &table.rows {
                    println!("{}\t{:.2}\t{:.3}", row.label, row.mean_regret, row.mean_final_best_share);
                }
            }
        }
    }
    Ok(())
}

fn serve(cli: &Cli, listen: Option<&str>) -> Result<(), CliError> {
    let mut config = load_config(cli)?;
    if let Some(dir) = &cli.local {
        config.data_dir = Some(dir.clone());
    }
    if config.principals.is_empty() {
        return Err(usage("the service config defines no principals"));
    }
    let listen = listen.map_or_else(|| config.listen.clone(), str::to_owned);
    let service = Arc::new(Service::from_config(&config)?);
    serve_until_ctrl_c(service, &listen, |addr| {
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
    })?;
    Ok(())
}
