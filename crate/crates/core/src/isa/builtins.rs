//! Declarations of the runtime library classes every module can reference.
//!
//! Bodies are native and live in the interpreter; here the classes only
//! exist so resolution and verification see them.

use once_cell::sync::Lazy;

use super::module::{ClassDef, FunctionDef};
use super::types::{InvocationKind, MethodType};

pub const STR: &str = "Str";
pub const ARR: &str = "Arr";
pub const SYS: &str = "Sys";
pub const REFLECT: &str = "Reflect";

/// (owner, name, kind, type)
const DECLS: &[(&str, &str, InvocationKind, &str)] = &[
    (STR, "to_string", InvocationKind::Virtual, "(O)S"),
    (STR, "replace_all", InvocationKind::Virtual, "(OSS)S"),
    (STR, "length", InvocationKind::Virtual, "(O)I"),
    (STR, "of", InvocationKind::Static, "(O)S"),
    (ARR, "new", InvocationKind::Static, "(I)A"),
    (ARR, "len", InvocationKind::Static, "(A)I"),
    (ARR, "get", InvocationKind::Static, "(AI)O"),
    (ARR, "set", InvocationKind::Static, "(AIO)A"),
    (ARR, "sum", InvocationKind::Static, "(A)I"),
    (SYS, "tick", InvocationKind::Static, "(I)V"),
    (REFLECT, "invoke", InvocationKind::Static, "(SSSA)O"),
];

static CLASSES: Lazy<Vec<ClassDef>> = Lazy::new(|| {
    let mut classes: Vec<ClassDef> = [STR, ARR, SYS, REFLECT]
        .iter()
        .map(|n| ClassDef::new(*n))
        .collect();
    for (owner, name, kind, ty) in DECLS {
        let class = classes.iter_mut().find(|c| c.name == *owner).unwrap();
        class.methods.push(FunctionDef {
            owner: owner.to_string(),
            name: name.to_string(),
            mtype: MethodType::parse(ty).expect("builtin type"),
            kind: *kind,
            code: Vec::new(),
            locals: 0,
        });
    }
    classes
});

pub fn classes() -> &'static [ClassDef] {
    &CLASSES
}

pub fn is_builtin_class(name: &str) -> bool {
    matches!(name, STR | ARR | SYS | REFLECT)
}
