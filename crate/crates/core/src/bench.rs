//! Fibonacci micro-benchmarks across execution configurations, reported as
//! quartiles of wall-clock time with median overhead against a baseline.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::corpus;
use crate::interp::{run, Program, RuntimeHooks};
use crate::isa::Value;
use crate::patch::Engine;
use crate::transform::transform_module;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Classicfibo,
    Fastfibo,
    Fastestfibo,
    Reflectivefibo,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Classicfibo,
        Variant::Fastfibo,
        Variant::Fastestfibo,
        Variant::Reflectivefibo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Classicfibo => "classicfibo",
            Variant::Fastfibo => "fastfibo",
            Variant::Fastestfibo => "fastestfibo",
            Variant::Reflectivefibo => "reflectivefibo",
        }
    }

    fn class(self) -> &'static str {
        match self {
            Variant::Classicfibo => "ClassicFibo",
            Variant::Fastfibo => "FastFibo",
            Variant::Fastestfibo => "FastestFibo",
            Variant::Reflectivefibo => "ReflectiveFibo",
        }
    }

    /// Call-site key of the variant's `fib` method.
    pub fn fib_key(self) -> String {
        let ty = match self {
            Variant::Classicfibo => "(O)O",
            Variant::Fastfibo => "(I)O",
            Variant::Fastestfibo | Variant::Reflectivefibo => "(I)I",
        };
        format!("{}.fib:{ty}", self.class())
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| BenchError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Config {
    Plain,
    Transformed,
    Before,
    After,
    BeforeAfter,
}

impl Config {
    pub const ALL: [Config; 5] = [
        Config::Plain,
        Config::Transformed,
        Config::Before,
        Config::After,
        Config::BeforeAfter,
    ];

    pub fn transformed(self) -> bool {
        self != Config::Plain
    }

    fn platform(self) -> &'static str {
        match self {
            Config::Plain => "fluxvm",
            _ => "fluxvm + indy",
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            Config::Plain | Config::Transformed => "",
            Config::Before => " + before aspect",
            Config::After => " + after aspect",
            Config::BeforeAfter => " + before aspect & after aspect",
        }
    }
}

impl FromStr for Config {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "plain" => Config::Plain,
            "transformed" => Config::Transformed,
            "before" => Config::Before,
            "after" => Config::After,
            "before-after" | "before+after" => Config::BeforeAfter,
            _ => return Err(BenchError::UnknownConfig(s.to_string())),
        })
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("unknown config `{0}`")]
    UnknownConfig(String),
    #[error("at least 3 runs are required, got {0}")]
    TooFewRuns(usize),
    #[error("no configurations to run")]
    NoConfigs,
    #[error("{config:?}: guest trapped: {message}")]
    Trap { config: Config, message: String },
    #[error("{config:?}: patching failed: {message}")]
    Patch { config: Config, message: String },
    #[error("results differ across configurations: {0}")]
    ResultMismatch(String),
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub variant: Variant,
    pub n: i64,
    pub runs: usize,
    /// The first configuration is the overhead baseline.
    pub configs: Vec<Config>,
}

impl BenchSpec {
    pub fn new(variant: Variant, n: i64) -> Self {
        BenchSpec {
            variant,
            n,
            runs: 10,
            configs: Config::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BenchRow {
    pub exec_platform: String,
    pub implementation: String,
    pub config: Config,
    /// Wall-clock milliseconds per run, in execution order.
    pub samples_ms: Vec<f64>,
    /// Q1-min, Q2-25%, Q3-median, Q4-75%, Q5-max.
    pub quartiles_ms: [f64; 5],
    /// `None` for the baseline row.
    pub overhead_pct: Option<f64>,
    pub result: String,
}

impl BenchRow {
    pub fn median_ms(&self) -> f64 {
        self.quartiles_ms[2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BenchReport {
    pub variant: Variant,
    pub n: i64,
    pub runs: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, config: Config) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.config == config)
    }
}

/// Nearest-rank order statistics: min, then ranks ⌈n/4⌉, ⌈n/2⌉, ⌈3n/4⌉,
/// then max.
pub fn quartiles(samples: &[f64]) -> [f64; 5] {
    assert!(!samples.is_empty(), "quartiles of an empty sample");
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let rank = |num: usize| s[(num * n).div_ceil(4).max(1) - 1];
    [s[0], rank(1), rank(2), rank(3), s[n - 1]]
}

/// Relative cost of `median` over `baseline`, in percent.
pub fn overhead_pct(median: f64, baseline: f64) -> f64 {
    (median / baseline - 1.0) * 100.0
}

/// Calls made by naive recursive Fibonacci, counted by running it.
pub fn count_calls_oracle(n: u64) -> u64 {
    fn fib(n: u64, calls: &mut u64) -> u64 {
        *calls += 1;
        if n < 2 {
            n
        } else {
            fib(n - 1, calls) + fib(n - 2, calls)
        }
    }
    let mut calls = 0;
    fib(n, &mut calls);
    calls
}

struct Prepared {
    program: std::sync::Arc<Program>,
    engine: std::sync::Arc<Engine>,
    entry: crate::interp::MethodId,
}

fn prepare(variant: Variant, config: Config) -> Result<Prepared, BenchError> {
    let module = corpus::module(variant.name());
    let module = if config.transformed() {
        transform_module(module).0
    } else {
        module
    };
    let program = Program::link(module).expect("bench corpus links");
    let engine = Engine::new(program.clone());
    engine.prelink();
    let key = variant.fib_key();
    let patch = |r: Result<usize, crate::patch::PatchError>| {
        r.map(|_| ()).map_err(|e| BenchError::Patch {
            config,
            message: e.to_string(),
        })
    };
    if matches!(config, Config::Before | Config::BeforeAfter) {
        patch(engine.apply_before_aspect(&key, "Noop", "before"))?;
    }
    if matches!(config, Config::After | Config::BeforeAfter) {
        patch(engine.apply_after_aspect(&key, "Noop", "after"))?;
    }
    let entry = program
        .find_static(variant.class(), "main", Some(1))
        .expect("variant entry");
    Ok(Prepared { program, engine, entry })
}

fn time_once(p: &Prepared, config: Config, n: i64) -> Result<(f64, Option<Value>), BenchError> {
    let hooks = RuntimeHooks::with_engine(p.engine.clone());
    let start = Instant::now();
    let r = run(&p.program, p.entry, vec![Value::Int(n)], hooks);
    let ms = start.elapsed().as_secs_f64() * 1000.0;
    let r = r.map_err(|t| BenchError::Trap {
        config,
        message: t.to_string(),
    })?;
    Ok((ms, r.return_value))
}

/// Runs every configuration of `spec` (one discarded warm-up each) and
/// reports quartiles and median overhead against the first configuration.
/// Fails if any two configurations compute different results.
pub fn run_benchmark(spec: &BenchSpec) -> Result<BenchReport, BenchError> {
    if spec.runs < 3 {
        return Err(BenchError::TooFewRuns(spec.runs));
    }
    if spec.configs.is_empty() {
        return Err(BenchError::NoConfigs);
    }
    let mut rows: Vec<BenchRow> = Vec::new();
    let mut expected: Option<Option<Value>> = None;
    for &config in &spec.configs {
        let prepared = prepare(spec.variant, config)?;
        let (_, warm) = time_once(&prepared, config, spec.n)?;
        let mut samples = Vec::with_capacity(spec.runs);
        for _ in 0..spec.runs {
            let (ms, result) = time_once(&prepared, config, spec.n)?;
            if result != warm {
                return Err(BenchError::ResultMismatch(format!("{config:?} is not deterministic")));
            }
            samples.push(ms);
        }
        match &expected {
            None => expected = Some(warm.clone()),
            Some(e) if *e != warm => {
                return Err(BenchError::ResultMismatch(format!(
                    "{config:?} returned {warm:?}, baseline returned {e:?}"
                )))
            }
            Some(_) => {}
        }
        let q = quartiles(&samples);
        let overhead = rows.first().map(|b| overhead_pct(q[2], b.median_ms()));
        rows.push(BenchRow {
            exec_platform: config.platform().to_string(),
            implementation: format!("{}{}", spec.variant, config.suffix()),
            config,
            samples_ms: samples,
            quartiles_ms: q,
            overhead_pct: overhead,
            result: warm.map(|v| v.to_string()).unwrap_or_default(),
        });
    }
    Ok(BenchReport {
        variant: spec.variant,
        n: spec.n,
        runs: spec.runs,
        rows,
    })
}

pub const TABLE_HEADER: [&str; 8] = [
    "Exec. Plat.",
    "Impl.",
    "Q1-min",
    "Q2-25%",
    "Q3-median",
    "Q4-75%",
    "Q5-max",
    "Overhead",
];

/// Formats an overhead like `+12.3%`; the baseline shows `-`.
pub fn format_overhead(pct: Option<f64>) -> String {
    match pct {
        None => "-".to_string(),
        Some(p) => format!("{p:+.1}%"),
    }
}

/// Pipe-separated table, durations in milliseconds with three decimals.
pub fn render_table(report: &BenchReport) -> String {
    let mut cells: Vec<Vec<String>> = vec![TABLE_HEADER.iter().map(|s| s.to_string()).collect()];
    for r in &report.rows {
        let mut line = vec![r.exec_platform.clone(), r.implementation.clone()];
        line.extend(r.quartiles_ms.iter().map(|q| format!("{q:.3}")));
        line.push(format_overhead(r.overhead_pct));
        cells.push(line);
    }
    let widths: Vec<usize> = (0..TABLE_HEADER.len())
        .map(|c| cells.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, line) in cells.iter().enumerate() {
        let padded: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(padded.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("-|-"));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_quartiles() {
        let s: Vec<f64> = (1..=10).rev().map(f64::from).collect();
        assert_eq!(quartiles(&s), [1.0, 3.0, 5.0, 8.0, 10.0]);
        assert_eq!(quartiles(&[4.0]), [4.0; 5]);
    }

    #[test]
    fn oracle_values() {
        assert_eq!(count_calls_oracle(0), 1);
        assert_eq!(count_calls_oracle(1), 1);
        assert_eq!(count_calls_oracle(5), 15);
    }

    #[test]
    fn overhead_formatting() {
        assert_eq!(format_overhead(None), "-");
        assert_eq!(format_overhead(Some(overhead_pct(3.0, 2.0))), "+50.0%");
    }
}
