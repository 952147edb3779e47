//! Structural verification: type-level invariants of declarations, branch
//! targets, symbolic references and per-path stack depth agreement.

use std::collections::HashSet;
use std::fmt;

use super::builtins;
use super::hierarchy::ClassTable;
use super::module::{Constant, FunctionDef, Instruction, Module};
use super::types::{is_descriptor_sequence, InvocationKind, MethodRef, TypeTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagKind {
    ClassHierarchy,
    DuplicateMethod,
    DuplicateField,
    TypeInvariant,
    BranchOutOfRange,
    UnresolvableReference,
    BadLocal,
    StackDepth,
    StackUnderflow,
    FallsOffEnd,
    BadEntry,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagKind,
    pub class: Option<String>,
    pub method: Option<String>,
    pub pc: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.class, &self.method, self.pc) {
            (Some(c), Some(m), Some(pc)) => write!(f, "{c}.{m}@{pc}: ")?,
            (Some(c), Some(m), None) => write!(f, "{c}.{m}: ")?,
            (Some(c), None, _) => write!(f, "{c}: ")?,
            _ => {}
        }
        f.write_str(&self.message)
    }
}

struct Ctx<'a> {
    module: &'a Module,
    table: ClassTable<'a>,
    out: Vec<Diagnostic>,
}

impl<'a> Ctx<'a> {
    fn diag(&mut self, kind: DiagKind, f: Option<&FunctionDef>, class: Option<&str>, pc: Option<usize>, message: String) {
        self.out.push(Diagnostic {
            kind,
            class: f.map(|f| f.owner.clone()).or(class.map(str::to_string)),
            method: f.map(|f| f.name.clone()),
            pc,
            message,
        });
    }
}

/// Returns every violated invariant; empty means the module may be linked.
pub fn verify(module: &Module) -> Vec<Diagnostic> {
    let mut cx = Ctx {
        module,
        table: ClassTable::new(module),
        out: Vec::new(),
    };
    check_classes(&mut cx);
    for class in &module.classes {
        for f in &class.methods {
            check_method(&mut cx, f);
        }
    }
    check_entry(&mut cx);
    cx.out
}

fn check_classes(cx: &mut Ctx<'_>) {
    let mut names = HashSet::new();
    for class in &cx.module.classes {
        let name = class.name.as_str();
        if !names.insert(name) {
            cx.diag(DiagKind::ClassHierarchy, None, Some(name), None, format!("class `{name}` declared twice"));
        }
        if builtins::is_builtin_class(name) {
            cx.diag(DiagKind::ClassHierarchy, None, Some(name), None, format!("`{name}` shadows a runtime library class"));
        }
        if is_descriptor_sequence(name) {
            cx.diag(DiagKind::ClassHierarchy, None, Some(name), None, format!("class name `{name}` reads as a type descriptor"));
        }
        for parent in class.superclass.iter().chain(class.interfaces.iter()) {
            if cx.table.get(parent).is_none() {
                cx.diag(DiagKind::ClassHierarchy, None, Some(name), None, format!("unknown supertype `{parent}`"));
            }
        }
        // Walk the raw superclass links; the table's chain stops on cycles.
        let mut seen = HashSet::from([name]);
        let mut cur = class.superclass.as_deref();
        while let Some(s) = cur {
            if !seen.insert(s) {
                cx.diag(DiagKind::ClassHierarchy, None, Some(name), None, "superclass chain is cyclic".into());
                break;
            }
            cur = cx.table.get(s).and_then(|c| c.superclass.as_deref());
        }
        let mut fields = HashSet::new();
        for (field, ty) in &class.fields {
            if !fields.insert(field.as_str()) {
                cx.diag(DiagKind::DuplicateField, None, Some(name), None, format!("field `{field}` declared twice"));
            }
            if ty.is_void() {
                cx.diag(DiagKind::TypeInvariant, None, Some(name), None, format!("field `{field}` is void"));
            }
        }
        let mut sigs = HashSet::new();
        for f in &class.methods {
            if !sigs.insert((f.name.as_str(), &f.mtype, f.kind)) {
                cx.diag(
                    DiagKind::DuplicateMethod,
                    Some(f),
                    None,
                    None,
                    format!("method {}{} ({}) declared twice", f.name, f.mtype, f.kind),
                );
            }
        }
    }
}

fn check_method(cx: &mut Ctx<'_>, f: &FunctionDef) {
    if f.mtype.params.iter().any(TypeTag::is_void) {
        cx.diag(DiagKind::TypeInvariant, Some(f), None, None, "void parameter".into());
    }
    if f.kind.has_receiver() {
        match f.mtype.params.first() {
            Some(recv) if cx.table.accepts_receiver(recv, &f.owner) => {}
            _ => cx.diag(
                DiagKind::TypeInvariant,
                Some(f),
                None,
                None,
                format!("{} method must take its receiver (L{};) first", f.kind, f.owner),
            ),
        }
    }
    if (f.locals as usize) < f.mtype.arity() {
        cx.diag(
            DiagKind::BadLocal,
            Some(f),
            None,
            None,
            format!("locals={} cannot hold {} parameters", f.locals, f.mtype.arity()),
        );
    }
    if f.code.is_empty() {
        if f.kind != InvocationKind::Interface {
            cx.diag(DiagKind::FallsOffEnd, Some(f), None, None, "empty body".into());
        }
        return;
    }
    let before = cx.out.len();
    for (pc, insn) in f.code.iter().enumerate() {
        check_insn(cx, f, pc, insn);
    }
    if cx.out.len() == before {
        if let Err(d) = stack_depths(cx.module, f) {
            cx.out.extend(d);
        }
    }
}

fn resolve_field(table: &ClassTable<'_>, class: &str, field: &str) -> bool {
    table
        .superchain(class)
        .iter()
        .any(|c| c.field_type(field).is_some())
}

fn check_insn(cx: &mut Ctx<'_>, f: &FunctionDef, pc: usize, insn: &Instruction) {
    let len = f.code.len();
    let here = Some(pc);
    match insn {
        Instruction::PushConst(i) => match cx.module.constants.get(*i as usize) {
            Some(Constant::Int(_) | Constant::Str(_)) => {}
            Some(Constant::Method(_)) => cx.diag(
                DiagKind::UnresolvableReference,
                Some(f),
                None,
                here,
                format!("constant #{i} is not a value"),
            ),
            None => cx.diag(
                DiagKind::UnresolvableReference,
                Some(f),
                None,
                here,
                format!("unresolvable reference: constant #{i} out of range"),
            ),
        },
        Instruction::Load(s) | Instruction::Store(s) if *s >= f.locals => cx.diag(
            DiagKind::BadLocal,
            Some(f),
            None,
            here,
            format!("slot {s} out of range (locals={})", f.locals),
        ),
        Instruction::Jump(t) | Instruction::JumpIfFalse(t) if *t as usize >= len => cx.diag(
            DiagKind::BranchOutOfRange,
            Some(f),
            None,
            here,
            format!("branch target out of range: {t} (code length {len})"),
        ),
        Instruction::New(c) => {
            if cx.table.get(c).is_none() || builtins::is_builtin_class(c) {
                cx.diag(DiagKind::UnresolvableReference, Some(f), None, here, format!("cannot instantiate `{c}`"));
            }
        }
        Instruction::GetField { class, field }
        | Instruction::PutField { class, field }
        | Instruction::GetStatic { class, field }
        | Instruction::PutStatic { class, field } => {
            if !resolve_field(&cx.table, class, field) {
                cx.diag(
                    DiagKind::UnresolvableReference,
                    Some(f),
                    None,
                    here,
                    format!("unresolvable field {class}.{field}"),
                );
            }
        }
        Instruction::Invoke { kind, mref } => match cx.module.method_ref(*mref) {
            None => cx.diag(
                DiagKind::UnresolvableReference,
                Some(f),
                None,
                here,
                format!("unresolvable reference: constant #{mref} is not a method reference"),
            ),
            Some(r) => {
                if let Err(e) = cx.table.resolve(*kind, r) {
                    cx.diag(
                        DiagKind::UnresolvableReference,
                        Some(f),
                        None,
                        here,
                        format!("unresolvable reference: {e}"),
                    );
                }
            }
        },
        Instruction::InvokeDynamic {
            name,
            mtype,
            bootstrap,
        } => match MethodRef::parse(name) {
            Ok(r) if &r.mtype == mtype && (!bootstrap.has_receiver() || mtype.arity() > 0) => {}
            _ => cx.diag(
                DiagKind::TypeInvariant,
                Some(f),
                None,
                here,
                format!("invoke_dynamic name `{name}` does not agree with type {mtype}"),
            ),
        },
        _ => {}
    }
}

fn invoke_effect(module: &Module, insn: &Instruction) -> (usize, usize) {
    let mtype = match insn {
        Instruction::Invoke { mref, .. } => &module.method_ref(*mref).expect("checked").mtype,
        Instruction::InvokeDynamic { mtype, .. } => mtype,
        _ => unreachable!(),
    };
    (mtype.arity(), usize::from(mtype.returns_value()))
}

/// (pops, pushes) for one instruction.
fn effect(module: &Module, insn: &Instruction) -> (usize, usize) {
    use Instruction::*;
    match insn {
        PushConst(_) | Load(_) | New(_) | GetStatic { .. } => (0, 1),
        Store(_) | Pop | Print | JumpIfFalse(_) | PutStatic { .. } => (1, 0),
        Dup => (1, 2),
        Add | Sub | Mul | Lt | Eq => (2, 1),
        GetField { .. } => (1, 1),
        PutField { .. } => (2, 0),
        Jump(_) | Ret => (0, 0),
        Invoke { .. } | InvokeDynamic { .. } => invoke_effect(module, insn),
    }
}

/// Computes the maximum operand-stack depth of a structurally valid body,
/// or the diagnostics explaining why paths disagree.
pub fn stack_depths(module: &Module, f: &FunctionDef) -> Result<usize, Vec<Diagnostic>> {
    let mut depth: Vec<Option<usize>> = vec![None; f.code.len()];
    let mut work = vec![(0usize, 0usize)];
    let mut max = 0;
    let mut diags = Vec::new();
    let d = |kind, pc, message: String| Diagnostic {
        kind,
        class: Some(f.owner.clone()),
        method: Some(f.name.clone()),
        pc: Some(pc),
        message,
    };
    while let Some((pc, h)) = work.pop() {
        if pc >= f.code.len() {
            diags.push(d(DiagKind::FallsOffEnd, pc.saturating_sub(1), "control falls off the end of the body".into()));
            continue;
        }
        match depth[pc] {
            Some(seen) if seen == h => continue,
            Some(seen) => {
                diags.push(d(
                    DiagKind::StackDepth,
                    pc,
                    format!("inconsistent stack depth: {seen} vs {h}"),
                ));
                continue;
            }
            None => depth[pc] = Some(h),
        }
        let insn = &f.code[pc];
        let (pops, pushes) = effect(module, insn);
        let need = if matches!(insn, Instruction::Ret) {
            usize::from(f.mtype.returns_value())
        } else {
            pops
        };
        if h < need {
            diags.push(d(
                DiagKind::StackUnderflow,
                pc,
                format!("stack underflow: `{}` needs {need}, depth is {h}", insn.mnemonic()),
            ));
            continue;
        }
        let next = h - pops + pushes;
        max = max.max(next).max(h);
        match insn {
            Instruction::Ret => {}
            Instruction::Jump(t) => work.push((*t as usize, next)),
            Instruction::JumpIfFalse(t) => {
                work.push((*t as usize, next));
                work.push((pc + 1, next));
            }
            _ => work.push((pc + 1, next)),
        }
    }
    if diags.is_empty() {
        Ok(max)
    } else {
        Err(diags)
    }
}

fn check_entry(cx: &mut Ctx<'_>) {
    let Some((class, method)) = cx.module.entry.clone() else {
        return;
    };
    let ok = cx
        .module
        .class(&class)
        .map(|c| {
            c.methods
                .iter()
                .any(|f| f.name == method && f.kind == InvocationKind::Static)
        })
        .unwrap_or(false);
    if !ok {
        cx.diag(
            DiagKind::BadEntry,
            None,
            Some(&class),
            None,
            format!("entry {class}.{method} is not a static method"),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::assemble;

    const HELLO: &str = r#"
entry Hello.main
class Hello
  method static main ()V locals=0
    push_const "Hello!"
    invoke_virtual Str.to_string:(O)S
    print
    ret
"#;

    #[test]
    fn hello_is_clean() {
        assert_eq!(verify(&assemble(HELLO).unwrap()), vec![]);
    }

    #[test]
    fn jump_out_of_range() {
        let mut m = assemble("class Q\n method static f ()V locals=0\n push_const 1\n pop\n ret\n").unwrap();
        m.classes[0].methods[0].code[1] = Instruction::Jump(999);
        let d = verify(&m);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].kind, DiagKind::BranchOutOfRange);
        assert!(d[0].message.contains("branch target out of range"));
    }

    #[test]
    fn mref_past_pool() {
        let mut m = assemble(HELLO).unwrap();
        let len = m.constants.len() as u32;
        m.classes[0].methods[0].code[1] = Instruction::Invoke {
            kind: InvocationKind::Static,
            mref: len + 5,
        };
        let d = verify(&m);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].kind, DiagKind::UnresolvableReference);
        assert!(d[0].message.contains("unresolvable reference"));
    }

    #[test]
    fn inconsistent_depth_detected() {
        let src = "class Q\n method static f (Z)I locals=1\n load 0\n jump_if_false other\n push_const 1\n push_const 2\n jump join\n other:\n push_const 3\n join:\n ret\n";
        let d = verify(&assemble(src).unwrap());
        assert!(d.iter().any(|d| d.kind == DiagKind::StackDepth), "{d:?}");
    }

    #[test]
    fn underflow_and_fall_off() {
        let d = verify(&assemble("class Q\n method static f ()V locals=0\n add\n ret\n").unwrap());
        assert_eq!(d[0].kind, DiagKind::StackUnderflow);
        let d = verify(&assemble("class Q\n method static f ()V locals=0\n push_const 1\n pop\n").unwrap());
        assert_eq!(d[0].kind, DiagKind::FallsOffEnd);
    }

    #[test]
    fn receiver_typing_enforced() {
        let d = verify(&assemble("class Q\n method virtual f (I)I locals=1\n load 0\n ret\n").unwrap());
        assert_eq!(d[0].kind, DiagKind::TypeInvariant);
        let ok = verify(&assemble("class Q\n method virtual f (LQ;)I locals=1\n push_const 1\n ret\n").unwrap());
        assert!(ok.is_empty(), "{ok:?}");
    }

    #[test]
    fn cyclic_hierarchy() {
        let d = verify(&assemble("class X extends Y\nclass Y extends X\n").unwrap());
        assert!(d.iter().any(|d| d.kind == DiagKind::ClassHierarchy));
    }

    #[test]
    fn ambiguous_class_name() {
        let d = verify(&assemble("class IS\n").unwrap());
        assert!(d.iter().any(|d| d.message.contains("descriptor")));
    }
}
