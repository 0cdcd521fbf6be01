//! Service configuration, read from a TOML file.
//!
//! Relative paths resolve against the directory holding the config file. Secrets never live in
//! the file: operator and agent credentials, like the completion endpoint key, come from
//! environment variables named here.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use govloop_core::audit::Durability;
use govloop_core::deliberator::{CompletionEndpointConfig, LlmDeliberator};
use govloop_core::prompt::PromptTemplates;
use govloop_core::rules::LintConfig;
use govloop_core::service::ServiceOptions;
use govloop_core::{
    load_ruleset, AuditLog, Clock, ContextState, Deliberator, EngineConfig, GovernanceService,
    QueueConfig, ReferenceDeliberator, RuleSetError, SystemClock,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{AuthConfig, Credentials};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Reference,
    Llm,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeliberatorConfig {
    pub backend: Backend,
    /// Required when `backend = "llm"`.
    pub endpoint: Option<CompletionEndpointConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Rule-set document loaded as version 1.
    pub rules: PathBuf,
    /// Context seed (signals and registries).
    pub context: PathBuf,
    /// Trace log file. The log is kept in memory only when absent.
    #[serde(default)]
    pub log: Option<PathBuf>,
    #[serde(default)]
    pub durability: Durability,
    /// Directory holding `enforcement.txt` and `reply_format.txt`; built-in wording when absent.
    #[serde(default)]
    pub prompts: Option<PathBuf>,
    /// Lint phrase lists; built-in lists when absent.
    #[serde(default)]
    pub lint: Option<PathBuf>,
    #[serde(default)]
    pub deliberator: DeliberatorConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub escalation: QueueConfig,
    #[serde(default)]
    pub auth: AuthConfig,
}

fn default_listen() -> String {
    "127.0.0.1:8787".to_string()
}

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("rules file {path}: {source}")]
    Rules { path: PathBuf, source: RuleSetError },
    #[error("context seed {path}: {source}")]
    Context {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("trace log: {0}")]
    Audit(#[from] govloop_core::AuditError),
    #[error("credentials: {0}")]
    Auth(String),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
}

fn read(path: &Path) -> Result<Vec<u8>, StartupError> {
    std::fs::read(path).map_err(|source| StartupError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl ServiceConfig {
    /// A config serving the given rules and context with in-memory storage.
    pub fn new(rules: impl Into<PathBuf>, context: impl Into<PathBuf>) -> Self {
        Self {
            listen: default_listen(),
            rules: rules.into(),
            context: context.into(),
            log: None,
            durability: Durability::default(),
            prompts: None,
            lint: None,
            deliberator: DeliberatorConfig::default(),
            engine: EngineConfig::default(),
            escalation: QueueConfig::default(),
            auth: AuthConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, StartupError> {
        let text = String::from_utf8_lossy(&read(path)?).into_owned();
        let mut config: ServiceConfig = toml::from_str(&text).map_err(|e| StartupError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.check().map_err(|message| StartupError::Config {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.rules);
        fix(&mut self.context);
        for p in [&mut self.log, &mut self.prompts, &mut self.lint].into_iter().flatten() {
            fix(p);
        }
    }

    fn check(&self) -> Result<(), String> {
        match (&self.deliberator.backend, &self.deliberator.endpoint) {
            (Backend::Llm, None) => Err("deliberator.backend = \"llm\" needs [deliberator.endpoint]".into()),
            (Backend::Reference, Some(_)) => {
                Err("[deliberator.endpoint] is only used with backend = \"llm\"".into())
            }
            _ => Ok(()),
        }
    }

    pub fn credentials(&self) -> Result<Credentials, StartupError> {
        Credentials::from_env(&self.auth).map_err(StartupError::Auth)
    }

    /// Loads every input and assembles the service. Probes the completion endpoint when the LLM
    /// backend is selected; an unreachable endpoint only marks the backend degraded.
    pub fn build_service(&self) -> Result<GovernanceService, StartupError> {
        let ruleset = load_ruleset(&read(&self.rules)?).map_err(|source| StartupError::Rules {
            path: self.rules.clone(),
            source,
        })?;
        let seed = ContextState::from_json(&read(&self.context)?).map_err(|source| {
            StartupError::Context {
                path: self.context.clone(),
                source,
            }
        })?;
        let templates = match &self.prompts {
            Some(dir) => PromptTemplates::load(dir).map_err(|source| StartupError::Io {
                path: dir.clone(),
                source,
            })?,
            None => PromptTemplates::default(),
        };
        let lint = match &self.lint {
            Some(path) => serde_json::from_slice::<LintConfig>(&read(path)?).map_err(|e| {
                StartupError::Config {
                    path: path.clone(),
                    message: e.to_string(),
                }
            })?,
            None => LintConfig::default(),
        };
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let audit = Arc::new(match &self.log {
            Some(path) => AuditLog::open(path, self.durability, clock.clone())?,
            None => AuditLog::in_memory(clock.clone()),
        });
        let deliberator: Arc<dyn Deliberator> = match (&self.deliberator.backend, &self.deliberator.endpoint) {
            (Backend::Llm, Some(endpoint)) => {
                let llm = LlmDeliberator::http(endpoint.clone(), templates.clone());
                let health = llm.probe();
                tracing::info!(model = %endpoint.model, base_url = %endpoint.base_url, ?health, "completion endpoint probed");
                Arc::new(llm)
            }
            _ => Arc::new(ReferenceDeliberator::new()),
        };
        let options = ServiceOptions {
            engine: self.engine.clone(),
            queue: self.escalation,
            templates,
            lint,
        };
        Ok(GovernanceService::new(ruleset, seed, deliberator, audit, clock, options))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn minimal_config_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "govloop.toml", "rules = \"r.json\"\ncontext = \"c.json\"\n");
        let c = ServiceConfig::load(&p).unwrap();
        assert_eq!(c.rules, dir.path().join("r.json"));
        assert_eq!(c.listen, "127.0.0.1:8787");
        assert_eq!(c.engine.max_self_correct, 3);
        assert_eq!(c.escalation.token_ttl.as_secs(), 3600);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        let dir = tempfile::tempdir().unwrap();
        for text in [
            "rules = \"r\"\ncontext = \"c\"\nlisten_addr = \"x\"\n",
            "rules = \"r\"\ncontext = \"c\"\n[engine]\nmax_rounds = 2\n",
            "rules = \"r\"\ncontext = \"c\"\n[escalation]\nttl = 5\n",
            "rules = \"r\"\ncontext = \"c\"\n[auth]\ntokens = \"x\"\n",
        ] {
            let p = write(dir.path(), "bad.toml", text);
            assert!(matches!(ServiceConfig::load(&p), Err(StartupError::Config { .. })), "{text}");
        }
    }

    #[test]
    fn llm_backend_needs_an_endpoint() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "llm.toml",
            "rules = \"r\"\ncontext = \"c\"\n[deliberator]\nbackend = \"llm\"\n",
        );
        let err = ServiceConfig::load(&p).unwrap_err().to_string();
        assert!(err.contains("needs [deliberator.endpoint]"), "{err}");
    }

    #[test]
    fn malformed_rules_fail_startup_with_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let rules = write(
            dir.path(),
            "rules.json",
            r#"{"version":1,"rules":[{"id":"S1","layer":"SITUATIONAL","text":"during audits, pause"}]}"#,
        );
        let ctx = write(dir.path(), "ctx.json", "{}");
        let err = ServiceConfig::new(rules, ctx).build_service().unwrap_err().to_string();
        assert!(err.contains("SCHEMA_ERROR"), "{err}");
        assert!(err.contains("S1"), "{err}");
    }

    #[test]
    fn example_config_in_the_repository_loads_and_builds() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../govloop.toml");
        let mut c = ServiceConfig::load(&path).unwrap();
        assert_eq!(c.escalation.pending_ttl.as_secs(), 86400);
        c.log = None;
        let service = c.build_service().unwrap();
        assert_eq!(service.health().ruleset_version, 1);
    }
}
