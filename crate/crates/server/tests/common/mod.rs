#![allow(dead_code)]

use std::sync::Arc;

use chrono::TimeZone;
use govloop_core::service::ServiceOptions;
use govloop_core::{flowr, AuditLog, Clock, Deliberator, FixedClock, GovernanceService, ReferenceDeliberator};
use govloop_server::{AppState, Credentials};
use reqwest::{Client, Method, StatusCode};
use serde_json::{json, Value};

pub const OPERATOR: &str = "op-secret";
pub const AGENT: &str = "agent-secret";

pub fn fixed_clock() -> Arc<dyn Clock> {
    Arc::new(FixedClock(chrono::Utc.with_ymd_and_hms(2026, 5, 1, 9, 0, 0).unwrap()))
}

pub fn flowr_service_with(d: Arc<dyn Deliberator>, clock: Arc<dyn Clock>) -> GovernanceService {
    GovernanceService::new(
        flowr::ruleset(),
        flowr::context_seed(),
        d,
        Arc::new(AuditLog::in_memory(clock.clone())),
        clock,
        ServiceOptions::default(),
    )
}

pub fn flowr_service() -> GovernanceService {
    flowr_service_with(Arc::new(ReferenceDeliberator::new()), fixed_clock())
}

pub fn credentials() -> Credentials {
    Credentials::from_lists(&format!("alice:{OPERATOR}"), &format!("flowr:{AGENT}")).unwrap()
}

pub struct TestServer {
    pub base: String,
    pub client: Client,
    pub state: AppState,
}

pub async fn spawn(service: GovernanceService) -> TestServer {
    let state = AppState::new(Arc::new(service), credentials());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let serving = state.clone();
    tokio::spawn(async move {
        govloop_server::serve(listener, serving, std::future::pending()).await.unwrap();
    });
    TestServer {
        base,
        client: Client::new(),
        state,
    }
}

impl TestServer {
    pub async fn http(
        &self,
        method: Method,
        path: &str,
        token: Option<&str>,
        body: Option<&Value>,
    ) -> (StatusCode, Value) {
        let mut req = self.client.request(method, format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status();
        let text = resp.text().await.unwrap();
        let value = serde_json::from_str(&text).unwrap_or(Value::String(text));
        (status, value)
    }

    /// Raw JSON-RPC exchange.
    pub async fn rpc_raw(&self, token: Option<&str>, body: &Value) -> Value {
        let mut req = self.client.post(format!("{}/mcp", self.base)).json(body);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        req.send().await.unwrap().json().await.unwrap()
    }

    /// `tools/call`, returning the JSON-RPC `result` or `error` member.
    pub async fn call_tool(&self, token: Option<&str>, tool: &str, args: Value) -> Result<Value, Value> {
        let reply = self
            .rpc_raw(
                token,
                &json!({"jsonrpc": "2.0", "id": 7, "method": "tools/call",
                        "params": {"name": tool, "arguments": args}}),
            )
            .await;
        assert_eq!(reply["id"], 7, "{reply}");
        match reply.get("error") {
            Some(e) => Err(e.clone()),
            None => Ok(reply["result"].clone()),
        }
    }
}
