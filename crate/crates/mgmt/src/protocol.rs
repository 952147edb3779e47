//! Wire protocol: `{"op": ..., "params": {...}}` in,
//! `{"ok": ..., "result": ..., "error": ...}` out.

use fluxvm::patch::{Engine, PatchError, PatchOp};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

/// Exactly one of `result` and `error` is non-null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    pub result: Option<Value>,
    pub error: Option<ErrorBody>,
}

impl Response {
    pub fn success(result: Value) -> Self {
        Response {
            ok: true,
            result: Some(result),
            error: None,
        }
    }

    pub fn failure(code: &str, message: impl Into<String>) -> Self {
        Response {
            ok: false,
            result: None,
            error: Some(ErrorBody {
                code: code.to_string(),
                message: message.into(),
            }),
        }
    }
}

impl From<PatchError> for Response {
    fn from(e: PatchError) -> Self {
        Response::failure(e.code(), e.to_string())
    }
}

/// Parses and dispatches a raw request body.
pub fn handle_request(engine: &Engine, body: &str) -> Response {
    match serde_json::from_str::<Value>(body) {
        Ok(v) => handle_value(engine, &v),
        Err(e) => Response::failure("bad_request", format!("malformed JSON: {e}")),
    }
}

pub fn handle_value(engine: &Engine, request: &Value) -> Response {
    let Some(obj) = request.as_object() else {
        return Response::failure("bad_request", "request must be a JSON object");
    };
    let Some(op) = obj.get("op").and_then(Value::as_str) else {
        return Response::failure("bad_request", "missing string field `op`");
    };
    let empty = Map::new();
    let params = match obj.get("params") {
        None | Some(Value::Null) => &empty,
        Some(Value::Object(p)) => p,
        Some(_) => return Response::failure("bad_request", "`params` must be an object"),
    };
    match dispatch(engine, op, params) {
        Ok(v) => Response::success(v),
        Err(r) => r,
    }
}

fn param(params: &Map<String, Value>, name: &str) -> Result<String, Response> {
    match params.get(name) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(Response::failure("bad_request", format!("parameter `{name}` must be a string"))),
        None => Err(Response::failure("bad_request", format!("missing parameter `{name}`"))),
    }
}

fn advice_op(params: &Map<String, Value>) -> Result<(String, String, String), Response> {
    Ok((
        param(params, "callSitesKey")?,
        param(params, "aspectClass")?,
        param(params, "aspectMethod")?,
    ))
}

fn dispatch(engine: &Engine, op: &str, params: &Map<String, Value>) -> Result<Value, Response> {
    let (op, label) = match op {
        "metrics" => return Ok(json!(engine.metrics())),
        "listCallSites" => return Ok(json!(engine.list_call_sites())),
        "changeCallSiteTarget" => (
            PatchOp::Retarget {
                method_type: param(params, "methodType")?,
                old_target: param(params, "oldTarget")?,
                new_target: param(params, "newTarget")?,
            },
            "retargeted",
        ),
        "applyBeforeAspect" => {
            let (key, class, method) = advice_op(params)?;
            (PatchOp::Before { key, class, method }, "adviced")
        }
        "applyAfterAspect" => {
            let (key, class, method) = advice_op(params)?;
            (PatchOp::After { key, class, method }, "adviced")
        }
        "removeAspects" => (
            PatchOp::Remove {
                key: param(params, "callSitesKey")?,
            },
            "cleared",
        ),
        other => return Err(Response::failure("unknown_op", format!("unknown op `{other}`"))),
    };
    let n = op.apply(engine).map_err(Response::from)?;
    Ok(json!({ label: n }))
}
