//! The bundled guest programs and their expected behavior.

use std::sync::mpsc;
use std::sync::Arc;

use serde::Deserialize;

use crate::interp::{run, ExitReport, Program, RuntimeHooks, TrapReport};
use crate::isa::{assemble, Module, Value};
use crate::patch::{Engine, PatchError, PatchOp};
use crate::transform::transform_module;

const MANIFEST: &str = include_str!("../corpus/manifest.toml");

const SOURCES: &[(&str, &str)] = &[
    ("hello.fas", include_str!("../corpus/hello.fas")),
    ("fib.fas", include_str!("../corpus/fib.fas")),
    ("classicfibo.fas", include_str!("../corpus/classicfibo.fas")),
    ("fastfibo.fas", include_str!("../corpus/fastfibo.fas")),
    ("fastestfibo.fas", include_str!("../corpus/fastestfibo.fas")),
    ("reflectivefibo.fas", include_str!("../corpus/reflectivefibo.fas")),
    ("replace_spaces.fas", include_str!("../corpus/replace_spaces.fas")),
    ("dispatch.fas", include_str!("../corpus/dispatch.fas")),
    ("handler.fas", include_str!("../corpus/handler.fas")),
    ("stress.fas", include_str!("../corpus/stress.fas")),
];

#[derive(Deserialize)]
struct Manifest {
    entry: Vec<RawEntry>,
}

#[derive(Deserialize)]
struct RawEntry {
    id: String,
    source: String,
    entry: String,
    cases: Vec<RawCase>,
}

#[derive(Deserialize)]
struct RawCase {
    args: Vec<toml::Value>,
    #[serde(default)]
    output: Vec<String>,
    returns: Option<toml::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub args: Vec<Value>,
    pub output: Vec<String>,
    pub returns: Option<Value>,
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub id: String,
    pub file: String,
    pub source: &'static str,
    pub entry: (String, String),
    pub cases: Vec<Case>,
}

impl CorpusEntry {
    pub fn module(&self) -> Module {
        assemble(self.source).unwrap_or_else(|e| panic!("corpus entry {}: {e}", self.id))
    }
}

/// Converts a TOML scalar to a guest value.
pub fn value_from_toml(v: &toml::Value) -> Option<Value> {
    match v {
        toml::Value::Integer(i) => Some(Value::Int(*i)),
        toml::Value::String(s) => Some(Value::str(s)),
        toml::Value::Boolean(b) => Some(Value::Bool(*b)),
        _ => None,
    }
}

pub fn entries() -> Vec<CorpusEntry> {
    let manifest: Manifest = toml::from_str(MANIFEST).expect("corpus manifest parses");
    manifest
        .entry
        .into_iter()
        .map(|e| {
            let source = SOURCES
                .iter()
                .find(|(f, _)| *f == e.source)
                .unwrap_or_else(|| panic!("missing corpus source {}", e.source))
                .1;
            let (class, method) = e.entry.split_once('.').expect("entry is Class.method");
            let cases = e
                .cases
                .iter()
                .map(|c| Case {
                    args: c.args.iter().map(|a| value_from_toml(a).expect("scalar arg")).collect(),
                    output: c.output.clone(),
                    returns: c.returns.as_ref().map(|r| value_from_toml(r).expect("scalar return")),
                })
                .collect();
            CorpusEntry {
                id: e.id,
                file: e.source,
                source,
                entry: (class.to_string(), method.to_string()),
                cases,
            }
        })
        .collect()
}

pub fn entry(id: &str) -> Option<CorpusEntry> {
    entries().into_iter().find(|e| e.id == id)
}

/// Assembled module of a corpus entry; panics on an unknown id.
pub fn module(id: &str) -> Module {
    entry(id).unwrap_or_else(|| panic!("no corpus entry {id}")).module()
}

/// Links `module` (transformed first when asked) and runs `class.method`
/// on a fresh machine with its own call-site engine.
pub fn execute(module: Module, entry: &(String, String), args: Vec<Value>, transformed: bool) -> Result<ExitReport, TrapReport> {
    let module = if transformed { transform_module(module).0 } else { module };
    let program = Program::link(module).expect("corpus module links");
    let id = program
        .find_static(&entry.0, &entry.1, Some(args.len()))
        .unwrap_or_else(|| panic!("no static {}.{}", entry.0, entry.1));
    let engine = Engine::new(program.clone());
    run(&program, id, args, RuntimeHooks::with_engine(engine))
}

/// A management operation to perform once the guest has finished tick
/// `after_tick`.
#[derive(Debug, Clone)]
pub struct ScriptStep {
    pub after_tick: i64,
    pub op: PatchOp,
}

pub struct DemoReport {
    pub exit: Result<ExitReport, TrapReport>,
    /// Outcome of each script step, in script order.
    pub op_results: Vec<Result<usize, PatchError>>,
    pub engine: Arc<Engine>,
}

/// Runs the handler program for `ticks` presses with management operations
/// issued from a second thread. The guest blocks at each tick until that
/// tick's operations have completed, so every swap lands between two
/// presses.
pub fn handler_demo(module: Module, ticks: i64, script: &[ScriptStep]) -> DemoReport {
    let (module, _) = transform_module(module);
    let program = Program::link(module).expect("handler module links");
    let engine = Engine::new(program.clone());
    let entry = program
        .find_static("Switcher", "main", Some(1))
        .expect("handler entry Switcher.main");

    let (tick_tx, tick_rx) = mpsc::channel::<i64>();
    let (ack_tx, ack_rx) = mpsc::channel::<()>();
    let mut hooks = RuntimeHooks::with_engine(engine.clone());
    hooks.on_tick = Some(Box::new(move |t| {
        if tick_tx.send(t).is_ok() {
            let _ = ack_rx.recv();
        }
    }));

    let mutator_engine = engine.clone();
    let steps = script.to_vec();
    let mutator = std::thread::spawn(move || {
        let mut results: Vec<Option<Result<usize, PatchError>>> = vec![None; steps.len()];
        while let Ok(t) = tick_rx.recv() {
            for (i, s) in steps.iter().enumerate() {
                if s.after_tick == t {
                    results[i] = Some(s.op.apply(&mutator_engine));
                }
            }
            if ack_tx.send(()).is_err() {
                break;
            }
        }
        results
    });

    let exit = run(&program, entry, vec![Value::Int(ticks)], hooks);
    let results = mutator.join().expect("mutator thread");
    let op_results = results
        .into_iter()
        .map(|r| r.unwrap_or_else(|| Err(PatchError::BadRequest("step never reached".into()))))
        .collect();
    DemoReport {
        exit,
        op_results,
        engine,
    }
}
