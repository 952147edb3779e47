//! Shared pieces of the `fluxvm` and `fluxctl` binaries.

use fluxvm::isa::Value;
use serde_json::Value as Json;

/// Exit status when the guest trapped.
pub const EXIT_TRAP: i32 = 3;
/// Exit status when the management service cannot be reached.
pub const EXIT_UNREACHABLE: i32 = 2;

/// Command-line argument to guest value: integers, `true`/`false`, `null`,
/// anything else is a string.
pub fn parse_arg(text: &str) -> Value {
    if let Ok(i) = text.parse::<i64>() {
        return Value::Int(i);
    }
    match text {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        "null" => Value::Null,
        _ => Value::str(text),
    }
}

/// Parses `Class.method`.
pub fn parse_entry(text: &str) -> Option<(String, String)> {
    let (class, method) = text.rsplit_once('.')?;
    (!class.is_empty() && !method.is_empty()).then(|| (class.to_string(), method.to_string()))
}

/// Renders a `listCallSites` result as an aligned text table.
pub fn sites_table(sites: &Json) -> String {
    let header = ["KIND", "KEY", "SITES", "INVOCATIONS", "BEFORE", "AFTER"];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for s in sites.as_array().into_iter().flatten() {
        let text = |v: &Json| match v {
            Json::String(s) => s.clone(),
            other => other.to_string(),
        };
        rows.push(vec![
            text(&s["kind"]),
            text(&s["key"]),
            text(&s["siteCount"]),
            text(&s["invocationCount"]),
            text(&s["advices"]["before"]),
            text(&s["advices"]["after"]),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
