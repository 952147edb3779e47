//! Whole-corpus jobs. With the `parallel` feature the independent jobs run
//! on the rayon pool; without it they run in order on the calling thread.
//! Results are returned in corpus order either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::corpus::{self, CorpusEntry};
use crate::interp::{ExitReport, TrapReport};
use crate::isa::Value;
use crate::transform::{transform_module, TransformReport};

/// Applies `f` to every item, possibly concurrently, preserving order.
pub fn map_jobs<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_jobs_sequential(items, f)
    }
}

/// In-order fallback used when the `parallel` feature is off.
pub fn map_jobs_sequential<T, R, F: Fn(&T) -> R>(items: &[T], f: F) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Whether jobs run on a thread pool in this build.
pub const PARALLEL: bool = cfg!(feature = "parallel");

#[derive(Debug, Clone)]
pub struct DiffOutcome {
    pub id: String,
    pub args: Vec<Value>,
    pub plain: Result<ExitReport, TrapReport>,
    pub transformed: Result<ExitReport, TrapReport>,
}

impl DiffOutcome {
    /// Same output lines and return value (or both trapped alike).
    pub fn equivalent(&self) -> bool {
        match (&self.plain, &self.transformed) {
            (Ok(a), Ok(b)) => a.output == b.output && a.return_value == b.return_value,
            (Err(a), Err(b)) => a.trap.kind == b.trap.kind && a.partial.output == b.partial.output,
            _ => false,
        }
    }
}

/// Runs every (entry, case) pair with and without transformation.
pub fn diff_entries(entries: &[CorpusEntry]) -> Vec<DiffOutcome> {
    let jobs: Vec<(&CorpusEntry, &[Value])> = entries
        .iter()
        .flat_map(|e| e.cases.iter().map(move |c| (e, c.args.as_slice())))
        .collect();
    map_jobs(&jobs, |(e, args)| DiffOutcome {
        id: e.id.clone(),
        args: args.to_vec(),
        plain: corpus::execute(e.module(), &e.entry, args.to_vec(), false),
        transformed: corpus::execute(e.module(), &e.entry, args.to_vec(), true),
    })
}

pub fn diff_corpus() -> Vec<DiffOutcome> {
    diff_entries(&corpus::entries())
}

/// Transforms every corpus module, returning its report.
pub fn transform_corpus() -> Vec<(String, TransformReport)> {
    let entries = corpus::entries();
    map_jobs(&entries, |e| (e.id.clone(), transform_module(e.module()).1))
}
