//! Bearer-token authentication.
//!
//! Each credential is a `name:token` pair taken from an environment variable. The name is what
//! the audit log records as the actor. Operator and agent credentials are disjoint roles: agents
//! may evaluate intents and read, operators may mutate rules, context and escalations and read.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthConfig {
    /// Variable holding comma-separated `name:token` operator credentials.
    pub operator_tokens_env: String,
    /// Variable holding comma-separated `name:token` agent credentials.
    pub agent_tokens_env: String,
}

impl Default for AuthConfig {
    fn default() -> Self {
        Self {
            operator_tokens_env: "GOVLOOP_OPERATOR_TOKENS".into(),
            agent_tokens_env: "GOVLOOP_AGENT_TOKENS".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Agent,
    Operator,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caller {
    pub role: Role,
    pub name: String,
}

#[derive(Debug, Clone, Default)]
pub struct Credentials {
    by_token: HashMap<String, Caller>,
}

fn parse_pairs(spec: &str, role: Role, into: &mut HashMap<String, Caller>) -> Result<(), String> {
    for entry in spec.split(',').map(str::trim).filter(|e| !e.is_empty()) {
        let (name, token) = entry
            .split_once(':')
            .filter(|(n, t)| !n.trim().is_empty() && !t.trim().is_empty())
            .ok_or_else(|| format!("malformed credential entry (expected name:token) in {role:?} list"))?;
        let caller = Caller {
            role,
            name: name.trim().to_string(),
        };
        if into.insert(token.trim().to_string(), caller).is_some() {
            return Err(format!("token for {} is assigned more than once", name.trim()));
        }
    }
    Ok(())
}

impl Credentials {
    /// Builds credentials from `name:token` lists.
    pub fn from_lists(operators: &str, agents: &str) -> Result<Self, String> {
        let mut by_token = HashMap::new();
        parse_pairs(operators, Role::Operator, &mut by_token)?;
        parse_pairs(agents, Role::Agent, &mut by_token)?;
        Ok(Self { by_token })
    }

    pub fn from_env(config: &AuthConfig) -> Result<Self, String> {
        let get = |name: &str| std::env::var(name).unwrap_or_default();
        let operators = get(&config.operator_tokens_env);
        let agents = get(&config.agent_tokens_env);
        if operators.trim().is_empty() && agents.trim().is_empty() {
            return Err(format!(
                "no credentials configured: set {} and/or {}",
                config.operator_tokens_env, config.agent_tokens_env
            ));
        }
        Self::from_lists(&operators, &agents)
    }

    /// Resolves an `Authorization` header value.
    pub fn authenticate(&self, header: Option<&str>) -> Option<Caller> {
        let token = header?.strip_prefix("Bearer ")?.trim();
        self.by_token.get(token).cloned()
    }
}
