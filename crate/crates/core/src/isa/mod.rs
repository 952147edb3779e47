//! Instruction set, module container, textual assembly and verification.

mod asm;
pub mod builtins;
mod hierarchy;
mod module;
mod types;
mod verify;

pub use asm::{assemble, disassemble, AsmError, AsmErrorKind};
pub use hierarchy::{ClassTable, ResolveError};
pub use module::{ClassDef, Constant, FunctionDef, Instruction, Module};
pub use types::{
    is_descriptor_sequence, InvocationKind, MethodRef, MethodType, ObjRef, RefParseError, TypeParseError, TypeTag,
    UnknownKind, Value,
};
pub use verify::{stack_depths, verify, DiagKind, Diagnostic};
