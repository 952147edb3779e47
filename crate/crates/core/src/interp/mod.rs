//! Linker and stack interpreter.

mod machine;
mod natives;
mod program;

pub use machine::{
    entry_method, run, run_entry, ExitReport, Machine, RuntimeHooks, Trap, TrapKind, TrapReport,
    DEFAULT_MAX_DEPTH,
};
pub use program::{link_count, ClassId, IndySite, LinkError, MethodId, MethodInfo, Program};
pub(crate) use program::{Body, SelectorId};
