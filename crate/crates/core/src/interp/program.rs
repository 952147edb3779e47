use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use super::machine::{Machine, Trap};
use super::natives;
use crate::isa::{
    builtins, stack_depths, verify, ClassDef, ClassTable, Constant, Diagnostic, FunctionDef,
    Instruction, InvocationKind, MethodRef, MethodType, Module, TypeTag, Value,
};

static LINKS: AtomicU64 = AtomicU64::new(0);

/// Number of modules linked (and therefore verified) by this process.
pub fn link_count() -> u64 {
    LINKS.load(Ordering::SeqCst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassId(pub(crate) u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MethodId(pub(crate) u32);

/// A virtual selector: method name plus signature without the receiver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub(crate) struct SelectorId(pub(crate) u32);

pub(crate) type NativeFn = fn(&mut Machine, Vec<Value>) -> Result<Value, Trap>;

pub(crate) enum Body {
    Guest(Vec<Op>),
    Native(NativeFn),
    Abstract,
}

/// Linked, resolved form of an instruction.
#[derive(Debug)]
pub(crate) enum Op {
    Const(Value),
    Load(u16),
    Store(u16),
    Add,
    Sub,
    Mul,
    Lt,
    Eq,
    Pop,
    Dup,
    Jump(u32),
    JumpIfFalse(u32),
    New(ClassId),
    GetField { class: ClassId, index: u16 },
    PutField { class: ClassId, index: u16 },
    GetStatic(u32),
    PutStatic(u32),
    Print,
    Ret,
    InvokeExact { callee: MethodId, argc: u16, returns: bool },
    /// `fallback` is the statically resolved declaration, used for receivers
    /// that are not heap objects and for library methods.
    InvokeVirtual {
        selector: SelectorId,
        iface: Option<ClassId>,
        fallback: MethodId,
        argc: u16,
        returns: bool,
    },
    InvokeDynamic { slot: u32, argc: u16, returns: bool },
}

pub struct ClassInfo {
    pub name: String,
    pub(crate) supertypes: HashSet<ClassId>,
    pub(crate) layout: Vec<(String, TypeTag)>,
    pub(crate) vtable: HashMap<SelectorId, MethodId>,
    pub builtin: bool,
}

pub struct MethodInfo {
    pub owner: String,
    pub name: String,
    pub mtype: MethodType,
    pub kind: InvocationKind,
    pub class: ClassId,
    pub(crate) body: Body,
    pub(crate) locals: usize,
    pub(crate) max_stack: usize,
    /// Position of the declaring `FunctionDef` inside the module, for guest
    /// methods.
    pub(crate) def: Option<(usize, usize)>,
}

impl MethodInfo {
    pub fn method_ref(&self) -> MethodRef {
        MethodRef::new(&self.owner, &self.name, self.mtype.clone())
    }
}

/// One `invoke_dynamic` instruction instance.
#[derive(Debug, Clone)]
pub struct IndySite {
    pub kind: InvocationKind,
    pub name: String,
    pub mtype: MethodType,
    pub method: MethodId,
    pub pc: usize,
}

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("module failed verification:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Verify(Vec<Diagnostic>),
}

/// An immutable, verified and linked module ready for execution.
pub struct Program {
    module: Arc<Module>,
    classes: Vec<ClassInfo>,
    class_ids: HashMap<String, ClassId>,
    methods: Vec<MethodInfo>,
    method_ids: HashMap<*const FunctionDef, MethodId>,
    selectors: HashMap<(String, MethodType), SelectorId>,
    indy: Vec<IndySite>,
    statics: Vec<Value>,
}

// The raw pointers are only used as identity keys into `module`, which is
// owned by the program and never mutated.
unsafe impl Send for Program {}
unsafe impl Sync for Program {}

impl Program {
    /// Verifies and links `module`.
    pub fn link(module: Module) -> Result<Arc<Program>, LinkError> {
        let diags = verify(&module);
        if !diags.is_empty() {
            return Err(LinkError::Verify(diags));
        }
        LINKS.fetch_add(1, Ordering::SeqCst);
        Ok(Arc::new(Linker::new(Arc::new(module)).run()))
    }

    pub fn module(&self) -> &Module {
        &self.module
    }

    pub fn module_arc(&self) -> &Arc<Module> {
        &self.module
    }

    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.class_ids.get(name).copied()
    }

    pub fn class(&self, id: ClassId) -> &ClassInfo {
        &self.classes[id.0 as usize]
    }

    pub fn method(&self, id: MethodId) -> &MethodInfo {
        &self.methods[id.0 as usize]
    }

    pub fn methods(&self) -> impl Iterator<Item = (MethodId, &MethodInfo)> {
        self.methods
            .iter()
            .enumerate()
            .map(|(i, m)| (MethodId(i as u32), m))
    }

    /// The module-level definition behind a guest method.
    pub fn function_def(&self, id: MethodId) -> Option<&FunctionDef> {
        let (c, m) = self.method(id).def?;
        Some(&self.module.classes[c].methods[m])
    }

    pub(crate) fn id_of(&self, f: &FunctionDef) -> Option<MethodId> {
        self.method_ids.get(&(f as *const FunctionDef)).copied()
    }

    pub(crate) fn selector(&self, name: &str, tail: &MethodType) -> Option<SelectorId> {
        self.selectors
            .get(&(name.to_string(), tail.clone()))
            .copied()
    }

    pub fn indy_sites(&self) -> &[IndySite] {
        &self.indy
    }

    pub(crate) fn initial_statics(&self) -> Vec<Value> {
        self.statics.clone()
    }

    pub fn is_subclass(&self, sub: ClassId, sup: ClassId) -> bool {
        self.class(sub).supertypes.contains(&sup)
    }

    /// Static binding of a symbolic reference, as done at link time.
    pub fn resolve(&self, kind: InvocationKind, r: &MethodRef) -> Result<MethodId, crate::isa::ResolveError> {
        let table = ClassTable::new(&self.module);
        let f = table.resolve(kind, r)?;
        Ok(self.id_of(f).expect("every resolvable definition is linked"))
    }

    /// Finds a guest or library static entry point by class and method name.
    pub fn find_static(&self, class: &str, name: &str, arity: Option<usize>) -> Option<MethodId> {
        self.methods().find_map(|(id, m)| {
            (m.owner == class
                && m.name == name
                && m.kind == InvocationKind::Static
                && arity.is_none_or(|n| m.mtype.arity() == n))
            .then_some(id)
        })
    }

    /// Addresses of every class and function definition, in declaration
    /// order. Stable for the lifetime of the program.
    pub fn identity_audit(&self) -> Vec<usize> {
        let mut out = vec![Arc::as_ptr(&self.module) as usize];
        for c in &self.module.classes {
            out.push(c as *const ClassDef as usize);
            out.extend(c.methods.iter().map(|f| f as *const FunctionDef as usize));
        }
        out
    }
}

struct Linker {
    module: Arc<Module>,
    classes: Vec<ClassInfo>,
    class_ids: HashMap<String, ClassId>,
    methods: Vec<MethodInfo>,
    method_ids: HashMap<*const FunctionDef, MethodId>,
    selectors: HashMap<(String, MethodType), SelectorId>,
    static_slots: HashMap<(String, String), u32>,
    statics: Vec<Value>,
    indy: Vec<IndySite>,
}

impl Linker {
    fn new(module: Arc<Module>) -> Self {
        Linker {
            module,
            classes: Vec::new(),
            class_ids: HashMap::new(),
            methods: Vec::new(),
            method_ids: HashMap::new(),
            selectors: HashMap::new(),
            static_slots: HashMap::new(),
            statics: Vec::new(),
            indy: Vec::new(),
        }
    }

    fn run(mut self) -> Program {
        let module = self.module.clone();
        let table = ClassTable::new(&module);
        let all: Vec<(Option<usize>, &ClassDef)> = builtins::classes()
            .iter()
            .map(|c| (None, c))
            .chain(module.classes.iter().enumerate().map(|(i, c)| (Some(i), c)))
            .collect();

        for (_, c) in &all {
            let id = ClassId(self.classes.len() as u32);
            self.class_ids.insert(c.name.clone(), id);
            self.classes.push(ClassInfo {
                name: c.name.clone(),
                supertypes: HashSet::new(),
                layout: Vec::new(),
                vtable: HashMap::new(),
                builtin: builtins::is_builtin_class(&c.name),
            });
            for (field, ty) in &c.fields {
                self.static_slots
                    .insert((c.name.clone(), field.clone()), self.statics.len() as u32);
                self.statics.push(Value::default_for(ty));
            }
        }

        for (module_idx, c) in &all {
            let class = self.class_ids[&c.name];
            for (mi, f) in c.methods.iter().enumerate() {
                let id = MethodId(self.methods.len() as u32);
                self.method_ids.insert(f as *const FunctionDef, id);
                let body = match module_idx {
                    None => Body::Native(natives::lookup(&f.owner, &f.name)),
                    Some(_) if f.is_abstract() => Body::Abstract,
                    Some(_) => Body::Guest(Vec::new()),
                };
                self.methods.push(MethodInfo {
                    owner: f.owner.clone(),
                    name: f.name.clone(),
                    mtype: f.mtype.clone(),
                    kind: f.kind,
                    class,
                    body,
                    locals: f.locals as usize,
                    max_stack: 0,
                    def: module_idx.map(|ci| (ci, mi)),
                });
                if matches!(f.kind, InvocationKind::Virtual | InvocationKind::Interface) {
                    let key = (f.name.clone(), f.mtype.drop_receiver());
                    let next = SelectorId(self.selectors.len() as u32);
                    self.selectors.entry(key).or_insert(next);
                }
            }
        }

        for (_, c) in &all {
            let id = self.class_ids[&c.name];
            let supertypes = table
                .supertypes(&c.name)
                .into_iter()
                .filter_map(|n| self.class_ids.get(n).copied())
                .collect();
            let mut layout = Vec::new();
            for ancestor in table.superchain(&c.name).into_iter().rev() {
                layout.extend(ancestor.fields.iter().cloned());
            }
            let mut vtable = HashMap::new();
            for ((name, tail), sel) in &self.selectors {
                if let Some(f) = table.find_override(&c.name, name, tail, false) {
                    vtable.insert(*sel, self.method_ids[&(f as *const FunctionDef)]);
                }
            }
            let info = &mut self.classes[id.0 as usize];
            info.supertypes = supertypes;
            info.layout = layout;
            info.vtable = vtable;
        }

        for (ci, c) in module.classes.iter().enumerate() {
            for (mi, f) in c.methods.iter().enumerate() {
                if f.is_abstract() {
                    continue;
                }
                let id = self.method_ids[&(f as *const FunctionDef)];
                let max_stack = stack_depths(&module, f).expect("verified");
                let ops = f
                    .code
                    .iter()
                    .enumerate()
                    .map(|(pc, insn)| self.lower(&table, id, pc, insn))
                    .collect();
                let info = &mut self.methods[id.0 as usize];
                info.body = Body::Guest(ops);
                info.max_stack = max_stack;
                debug_assert_eq!(info.def, Some((ci, mi)));
            }
        }

        Program {
            module: self.module,
            classes: self.classes,
            class_ids: self.class_ids,
            methods: self.methods,
            method_ids: self.method_ids,
            selectors: self.selectors,
            indy: self.indy,
            statics: self.statics,
        }
    }

    fn field_slot(&self, table: &ClassTable<'_>, class: &str, field: &str) -> (ClassId, u16) {
        let id = self.class_ids[class];
        let index = self.classes[id.0 as usize]
            .layout
            .iter()
            .rposition(|(n, _)| n == field)
            .expect("verified field");
        let _ = table;
        (id, index as u16)
    }

    fn static_slot(&self, table: &ClassTable<'_>, class: &str, field: &str) -> u32 {
        let owner = table
            .superchain(class)
            .into_iter()
            .find(|c| c.field_type(field).is_some())
            .expect("verified static");
        self.static_slots[&(owner.name.clone(), field.to_string())]
    }

    fn lower(&mut self, table: &ClassTable<'_>, method: MethodId, pc: usize, insn: &Instruction) -> Op {
        let module = self.module.clone();
        match insn {
            Instruction::PushConst(i) => match &module.constants[*i as usize] {
                Constant::Int(v) => Op::Const(Value::Int(*v)),
                Constant::Str(s) => Op::Const(Value::str(s)),
                Constant::Method(_) => unreachable!("verified"),
            },
            Instruction::Load(s) => Op::Load(*s),
            Instruction::Store(s) => Op::Store(*s),
            Instruction::Add => Op::Add,
            Instruction::Sub => Op::Sub,
            Instruction::Mul => Op::Mul,
            Instruction::Lt => Op::Lt,
            Instruction::Eq => Op::Eq,
            Instruction::Pop => Op::Pop,
            Instruction::Dup => Op::Dup,
            Instruction::Jump(t) => Op::Jump(*t),
            Instruction::JumpIfFalse(t) => Op::JumpIfFalse(*t),
            Instruction::New(c) => Op::New(self.class_ids[c]),
            Instruction::GetField { class, field } => {
                let (class, index) = self.field_slot(table, class, field);
                Op::GetField { class, index }
            }
            Instruction::PutField { class, field } => {
                let (class, index) = self.field_slot(table, class, field);
                Op::PutField { class, index }
            }
            Instruction::GetStatic { class, field } => Op::GetStatic(self.static_slot(table, class, field)),
            Instruction::PutStatic { class, field } => Op::PutStatic(self.static_slot(table, class, field)),
            Instruction::Print => Op::Print,
            Instruction::Ret => Op::Ret,
            Instruction::Invoke { kind, mref } => {
                let r = module.method_ref(*mref).expect("verified");
                let argc = r.mtype.arity() as u16;
                let returns = r.mtype.returns_value();
                let decl = table.resolve(*kind, r).expect("verified");
                match kind {
                    InvocationKind::Static | InvocationKind::Special => Op::InvokeExact {
                        callee: self.method_ids[&(decl as *const FunctionDef)],
                        argc,
                        returns,
                    },
                    InvocationKind::Virtual | InvocationKind::Interface => Op::InvokeVirtual {
                        selector: self.selectors[&(decl.name.clone(), decl.mtype.drop_receiver())],
                        iface: (*kind == InvocationKind::Interface).then(|| self.class_ids[&r.owner]),
                        fallback: self.method_ids[&(decl as *const FunctionDef)],
                        argc,
                        returns,
                    },
                }
            }
            Instruction::InvokeDynamic {
                name,
                mtype,
                bootstrap,
            } => {
                let slot = self.indy.len() as u32;
                self.indy.push(IndySite {
                    kind: *bootstrap,
                    name: name.clone(),
                    mtype: mtype.clone(),
                    method,
                    pc,
                });
                Op::InvokeDynamic {
                    slot,
                    argc: mtype.arity() as u16,
                    returns: mtype.returns_value(),
                }
            }
        }
    }
}
