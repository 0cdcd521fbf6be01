//! `govloop`: run the governance service, check rule sets, replay the scenario suite and inspect
//! traces and escalations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use chrono::TimeZone;
use clap::{Args, Parser, Subcommand, ValueEnum};
use govloop_core::audit::{verify_lines, TraceFilter};
use govloop_core::harness::{run_scenarios, ScenarioSpec};
use govloop_core::rules::{detect_conflicts, lint_ruleset, validate_ruleset, LintConfig};
use govloop_core::service::ServiceOptions;
use govloop_core::{
    flowr, AuditLog, Clock, ContextState, Durability, FixedClock, GovernanceService, Outcome,
    ReferenceDeliberator, RuleSet, RuleSetDocument, SystemClock,
};
use govloop_server::ServiceConfig;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "govloop", version, about = "Pre-action governance for agent workflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP and JSON-RPC API.
    Serve {
        #[arg(long, default_value = "govloop.toml")]
        config: PathBuf,
    },
    /// Check a rule-set document for structural errors and report conflicts.
    Validate {
        rules: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Report prohibitions without alternatives, missing rationales and over-broad scopes.
    Lint {
        rules: PathBuf,
        /// Phrase lists; built-in lists when omitted.
        #[arg(long)]
        lint_config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// The scenario suite.
    Scenarios {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Inspect a trace log, either a file or a running server.
    Traces {
        #[command(subcommand)]
        command: TraceCommand,
    },
    /// List and resolve escalations on a running server.
    Escalations {
        #[command(subcommand)]
        command: EscalationCommand,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Run every scenario and print accuracy, escalation precision, trace completeness and
    /// latency. Exits non-zero unless every run matches its expectation.
    Run {
        /// Service config naming rules, context and deliberator. Uses the shipped Flowr fixtures
        /// and the reference deliberator when omitted.
        #[arg(long, conflicts_with_all = ["rules", "context"])]
        config: Option<PathBuf>,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        context: Option<PathBuf>,
        /// Scenario files; the shipped S1 to S4 when omitted.
        #[arg(long = "scenario")]
        scenarios: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
        /// Stamp every record with one instant so output is byte-reproducible.
        #[arg(long)]
        fixed_clock: bool,
    },
}

#[derive(Args)]
struct Source {
    /// Trace log file.
    #[arg(long, conflicts_with = "server", required_unless_present = "server")]
    log: Option<PathBuf>,
    #[command(flatten)]
    server: Option<Remote>,
}

#[derive(Args)]
struct Remote {
    /// Base URL of a running server.
    #[arg(long = "server", id = "server", value_name = "URL")]
    url: String,
    /// Variable holding the bearer token.
    #[arg(long, default_value = "GOVLOOP_TOKEN")]
    token_env: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Decision {
    Proceed,
    SelfCorrect,
    Escalate,
}

impl Decision {
    fn outcome(self) -> Outcome {
        match self {
            Decision::Proceed => Outcome::Proceed,
            Decision::SelfCorrect => Outcome::SelfCorrect,
            Decision::Escalate => Outcome::Escalate,
        }
    }
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Print matching records as JSON lines.
    Query {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        agent: Option<String>,
        #[arg(long)]
        workflow: Option<String>,
        #[arg(long, value_enum)]
        decision: Option<Decision>,
        #[arg(long)]
        rule: Option<String>,
        /// Record kind, e.g. `pagrl_round` or `escalation_resolved`.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Recompute the hash chain. Exits non-zero on the first mismatch.
    Verify {
        #[command(flatten)]
        source: Source,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Status {
    Pending,
    Approved,
    Denied,
    Expired,
}

#[derive(Subcommand)]
enum EscalationCommand {
    List {
        #[command(flatten)]
        remote: Remote,
        #[arg(long, value_enum)]
        status: Option<Status>,
    },
    Resolve {
        #[command(flatten)]
        remote: Remote,
        escalation_id: String,
        #[arg(long, conflicts_with = "deny", required_unless_present = "deny")]
        approve: bool,
        #[arg(long)]
        deny: bool,
        #[arg(long, default_value = "")]
        note: String,
    },
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

fn parse_document(path: &Path) -> Result<RuleSetDocument> {
    serde_json::from_slice(&read(path)?)
        .with_context(|| format!("PARSE_ERROR: {} is not a rule-set document", path.display()))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn validate(path: &Path, as_json: bool) -> Result<ExitCode> {
    let doc = parse_document(path)?;
    let violations = validate_ruleset(&doc);
    let conflicts = if violations.is_empty() {
        detect_conflicts(&RuleSet::new(doc.clone())?)
    } else {
        Vec::new()
    };
    if as_json {
        print_json(&json!({"valid": violations.is_empty(), "violations": violations, "conflicts": conflicts}))?;
    } else if violations.is_empty() {
        println!("ok: {} rules", doc.rules.len());
        for c in &conflicts {
            let winner = c.winner.as_deref().unwrap_or("unresolved (same layer)");
            println!("conflict: {} (precedence: {winner})", c.detail);
        }
    } else {
        for v in &violations {
            println!("SCHEMA_ERROR {v}");
        }
    }
    Ok(if violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn lint(path: &Path, config: Option<&Path>, as_json: bool) -> Result<ExitCode> {
    let rules = RuleSet::new(parse_document(path)?)?;
    let config = match config {
        Some(p) => LintConfig::from_json(&read(p)?).with_context(|| format!("lint config {}", p.display()))?,
        None => LintConfig::default(),
    };
    let warnings = lint_ruleset(&rules, &config);
    if as_json {
        print_json(&warnings)?;
    } else {
        for w in &warnings {
            println!("{} {:?}: {}", w.rule_id, w.kind, w.message);
        }
        println!("{} warning(s)", warnings.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn fixed_instant() -> Arc<dyn Clock> {
    Arc::new(FixedClock(chrono::Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap()))
}

fn scenarios_run(
    config: Option<&Path>,
    rules: Option<&Path>,
    context: Option<&Path>,
    files: &[PathBuf],
    as_json: bool,
    fixed_clock: bool,
) -> Result<ExitCode> {
    let specs: Vec<ScenarioSpec> = if files.is_empty() {
        flowr::scenarios()
    } else {
        files
            .iter()
            .map(|f| ScenarioSpec::from_json(&read(f)?).with_context(|| format!("scenario {}", f.display())))
            .collect::<Result<_>>()?
    };
    let clock: Arc<dyn Clock> = if fixed_clock { fixed_instant() } else { Arc::new(SystemClock) };
    let service = match config {
        Some(path) => {
            if fixed_clock {
                bail!("--fixed-clock applies only to the built-in reference setup");
            }
            ServiceConfig::load(path)?.build_service()?
        }
        None => {
            let ruleset = match rules {
                Some(p) => govloop_core::load_ruleset(&read(p)?)?,
                None => flowr::ruleset(),
            };
            let seed = match context {
                Some(p) => ContextState::from_json(&read(p)?).with_context(|| format!("context {}", p.display()))?,
                None => flowr::context_seed(),
            };
            GovernanceService::new(
                ruleset,
                seed,
                Arc::new(ReferenceDeliberator::new()),
                Arc::new(AuditLog::in_memory(clock.clone())),
                clock.clone(),
                ServiceOptions::default(),
            )
        }
    };
    let report = run_scenarios(&specs, &service, &clock)?;
    if as_json {
        println!("{}", report.to_json_pretty());
    } else {
        print!("{}", report.to_table());
    }
    Ok(if report.all_correct() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

struct Client {
    base: String,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

impl Client {
    fn new(remote: &Remote) -> Self {
        Self {
            base: remote.url.trim_end_matches('/').to_string(),
            token: std::env::var(&remote.token_env).ok().filter(|t| !t.is_empty()),
            http: reqwest::blocking::Client::new(),
        }
    }

    fn send(&self, req: reqwest::blocking::RequestBuilder) -> Result<reqwest::blocking::Response> {
        let req = match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        };
        let resp = req.send().context("request failed")?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let body: Value = resp.json().unwrap_or(Value::Null);
        match body["error"].as_object() {
            Some(e) => bail!("{} {}: {}", status, e["code"].as_str().unwrap_or("?"), e["message"].as_str().unwrap_or("")),
            None => bail!("server returned {status}"),
        }
    }

    fn get(&self, path: &str, query: &[(&str, String)]) -> Result<reqwest::blocking::Response> {
        self.send(self.http.get(format!("{}{path}", self.base)).query(query))
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value> {
        Ok(self.send(self.http.post(format!("{}{path}", self.base)).json(body))?.json()?)
    }
}

fn open_log(path: &Path) -> Result<AuditLog> {
    if !path.exists() {
        bail!("no trace log at {}", path.display());
    }
    Ok(AuditLog::open(path, Durability::Flush, Arc::new(SystemClock))?)
}

fn traces_query(source: &Source, filter: TraceFilter) -> Result<ExitCode> {
    let records: Vec<Value> = match (&source.log, &source.server) {
        (Some(path), _) => {
            let page = open_log(path)?.query(&filter);
            page.records.iter().map(serde_json::to_value).collect::<Result<_, _>>()?
        }
        (None, Some(remote)) => {
            let mut query = Vec::new();
            let mut add = |k: &'static str, v: &Option<String>| {
                if let Some(v) = v {
                    query.push((k, v.clone()));
                }
            };
            add("agent_id", &filter.agent_id);
            add("workflow_id", &filter.workflow_id);
            add("rule_id", &filter.rule_id);
            add("kind", &filter.kind);
            add("decision", &filter.decision.map(|d| d.token().to_string()));
            add("limit", &filter.limit.map(|l| l.to_string()));
            let page: Value = Client::new(remote).get("/v1/traces", &query)?.json()?;
            page["records"].as_array().cloned().unwrap_or_default()
        }
        (None, None) => bail!("give --log or --server"),
    };
    for r in records {
        println!("{}", serde_json::to_string(&r)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn traces_verify(source: &Source) -> Result<ExitCode> {
    let report: Value = match (&source.log, &source.server) {
        (Some(path), _) => {
            let text = String::from_utf8(read(path)?).context("trace log is not UTF-8")?;
            let lines: Vec<String> = text.lines().map(str::to_string).collect();
            serde_json::to_value(verify_lines(&lines, None))?
        }
        (None, Some(remote)) => Client::new(remote).get("/v1/traces/verify", &[])?.json()?,
        (None, None) => bail!("give --log or --server"),
    };
    if report["ok"] == json!(true) {
        println!("OK: {} records verified", report["checked"]);
        Ok(ExitCode::SUCCESS)
    } else {
        let m = &report["first_mismatch"];
        println!("MISMATCH at index {}: {}", m["position"], m["reason"].as_str().unwrap_or(""));
        Ok(ExitCode::FAILURE)
    }
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Pending => "PENDING",
        Status::Approved => "APPROVED",
        Status::Denied => "DENIED",
        Status::Expired => "EXPIRED",
    }
}

fn escalations(command: EscalationCommand) -> Result<ExitCode> {
    match command {
        EscalationCommand::List { remote, status } => {
            let query: Vec<(&str, String)> = status.map(|s| ("status", status_name(s).to_string())).into_iter().collect();
            let body: Value = Client::new(&remote).get("/v1/escalations", &query)?.json()?;
            for e in body["escalations"].as_array().into_iter().flatten() {
                println!(
                    "{}  {:<8}  {}  rules {}  {}",
                    e["escalation_id"].as_str().unwrap_or(""),
                    e["status"].as_str().unwrap_or(""),
                    e["intent"]["agent_id"].as_str().unwrap_or(""),
                    e["message"]["triggering_rule_ids"],
                    e["message"]["intent_summary"].as_str().unwrap_or(""),
                );
            }
        }
        EscalationCommand::Resolve { remote, escalation_id, approve, note, .. } => {
            let resolution = if approve { "APPROVED" } else { "DENIED" };
            let body = Client::new(&remote).post(
                &format!("/v1/escalations/{escalation_id}/resolve"),
                &json!({"resolution": resolution, "note": note}),
            )?;
            println!("{escalation_id} {}", body["status"].as_str().unwrap_or(""));
            for t in body["approval_tokens"].as_array().into_iter().flatten() {
                println!("token {} {}", t["rule_id"].as_str().unwrap_or(""), t["token"].as_str().unwrap_or(""));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(config: &Path) -> Result<ExitCode> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let config = ServiceConfig::load(config)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let (listener, state) = govloop_server::bind(&config).await?;
        eprintln!("govloop listening on http://{}", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        govloop_server::serve(listener, state, shutdown).await?;
        Ok(ExitCode::SUCCESS)
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Serve { config } => serve(&config),
        Command::Validate { rules, json } => validate(&rules, json),
        Command::Lint { rules, lint_config, json } => lint(&rules, lint_config.as_deref(), json),
        Command::Scenarios {
            command: ScenarioCommand::Run { config, rules, context, scenarios, json, fixed_clock },
        } => scenarios_run(config.as_deref(), rules.as_deref(), context.as_deref(), &scenarios, json, fixed_clock),
        Command::Traces { command } => match command {
            TraceCommand::Query { source, agent, workflow, decision, rule, kind, limit } => {
                let filter = TraceFilter {
                    agent_id: agent,
                    workflow_id: workflow,
                    decision: decision.map(Decision::outcome),
                    rule_id: rule,
                    kind,
                    limit,
                    ..TraceFilter::default()
                };
                traces_query(&source, filter)
            }
            TraceCommand::Verify { source } => traces_verify(&source),
        },
        Command::Escalations { command } => escalations(command),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
