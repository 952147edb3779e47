//! Blocking client for the management service.

use serde_json::{json, Value};
use thiserror::Error;

use crate::protocol::Response;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach {url}: {message}")]
    Connect { url: String, message: String },
    #[error("{code}: {message}")]
    Server { code: String, message: String },
    #[error("malformed response: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
}

impl Client {
    /// `base` is like `http://127.0.0.1:7070`; a bare `host:port` works too.
    pub fn new(base: &str) -> Self {
        let base = base.trim_end_matches('/');
        let base = if base.contains("://") {
            base.to_string()
        } else {
            format!("http://{base}")
        };
        Client { base }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn transport(&self, e: ureq::Error) -> ClientError {
        match e {
            ureq::Error::StatusCode(code) => ClientError::Protocol(format!("HTTP status {code}")),
            other => ClientError::Connect {
                url: self.base.clone(),
                message: other.to_string(),
            },
        }
    }

    fn read(&self, mut resp: ureq::http::Response<ureq::Body>) -> Result<Value, ClientError> {
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Protocol(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    /// Sends one protocol request and unwraps its result.
    pub fn call(&self, op: &str, params: Value) -> Result<Value, ClientError> {
        let body = json!({ "op": op, "params": params }).to_string();
        let resp = ureq::post(format!("{}/api", self.base))
            .header("content-type", "application/json")
            .send(body.as_str())
            .map_err(|e| self.transport(e))?;
        let raw = self.read(resp)?;
        let r: Response = serde_json::from_value(raw).map_err(|e| ClientError::Protocol(e.to_string()))?;
        match (r.ok, r.result, r.error) {
            (true, Some(v), None) => Ok(v),
            (false, None, Some(e)) => Err(ClientError::Server {
                code: e.code,
                message: e.message,
            }),
            _ => Err(ClientError::Protocol("response must carry exactly one of result/error".into())),
        }
    }

    pub fn get(&self, path: &str) -> Result<Value, ClientError> {
        let resp = ureq::get(format!("{}{path}", self.base))
            .call()
            .map_err(|e| self.transport(e))?;
        self.read(resp)
    }

    pub fn metrics(&self) -> Result<Value, ClientError> {
        self.get("/api/metrics")
    }

    pub fn sites(&self) -> Result<Value, ClientError> {
        self.get("/api/sites")
    }

    pub fn change_call_site_target(&self, method_type: &str, old: &str, new: &str) -> Result<Value, ClientError> {
        self.call(
            "changeCallSiteTarget",
            json!({ "methodType": method_type, "oldTarget": old, "newTarget": new }),
        )
    }

    pub fn apply_before_aspect(&self, key: &str, class: &str, method: &str) -> Result<Value, ClientError> {
        self.call(
            "applyBeforeAspect",
            json!({ "callSitesKey": key, "aspectClass": class, "aspectMethod": method }),
        )
    }

    pub fn apply_after_aspect(&self, key: &str, class: &str, method: &str) -> Result<Value, ClientError> {
        self.call(
            "applyAfterAspect",
            json!({ "callSitesKey": key, "aspectClass": class, "aspectMethod": method }),
        )
    }

    pub fn remove_aspects(&self, key: &str) -> Result<Value, ClientError> {
        self.call("removeAspects", json!({ "callSitesKey": key }))
    }
}
