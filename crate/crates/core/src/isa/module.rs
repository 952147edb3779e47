use super::types::{InvocationKind, MethodRef, MethodType, TypeTag};

/// A constant-pool entry.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Constant {
    Int(i64),
    Str(String),
    Method(MethodRef),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Instruction {
    PushConst(u32),
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
    New(String),
    GetField { class: String, field: String },
    PutField { class: String, field: String },
    GetStatic { class: String, field: String },
    PutStatic { class: String, field: String },
    Print,
    Ret,
    /// One of the four classic invocations; `mref` indexes the constant pool.
    Invoke { kind: InvocationKind, mref: u32 },
    /// Dynamically bound call site. Carries a symbolic name, never a
    /// constant-pool method reference.
    InvokeDynamic {
        name: String,
        mtype: MethodType,
        bootstrap: InvocationKind,
    },
}

impl Instruction {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            Instruction::PushConst(_) => "push_const",
            Instruction::Load(_) => "load",
            Instruction::Store(_) => "store",
            Instruction::Add => "add",
            Instruction::Sub => "sub",
            Instruction::Mul => "mul",
            Instruction::Lt => "lt",
            Instruction::Eq => "eq",
            Instruction::Pop => "pop",
            Instruction::Dup => "dup",
            Instruction::Jump(_) => "jump",
            Instruction::JumpIfFalse(_) => "jump_if_false",
            Instruction::New(_) => "new",
            Instruction::GetField { .. } => "get_field",
            Instruction::PutField { .. } => "put_field",
            Instruction::GetStatic { .. } => "get_static",
            Instruction::PutStatic { .. } => "put_static",
            Instruction::Print => "print",
            Instruction::Ret => "ret",
            Instruction::Invoke { kind, .. } => kind.mnemonic(),
            Instruction::InvokeDynamic { .. } => "invoke_dynamic",
        }
    }

    pub fn branch_target(&self) -> Option<u32> {
        match self {
            Instruction::Jump(t) | Instruction::JumpIfFalse(t) => Some(*t),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunctionDef {
    pub owner: String,
    pub name: String,
    pub mtype: MethodType,
    pub kind: InvocationKind,
    pub code: Vec<Instruction>,
    pub locals: u16,
}

impl FunctionDef {
    pub fn method_ref(&self) -> MethodRef {
        MethodRef::new(&self.owner, &self.name, self.mtype.clone())
    }

    /// Interface methods without a body act as abstract declarations.
    pub fn is_abstract(&self) -> bool {
        self.code.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassDef {
    pub name: String,
    pub superclass: Option<String>,
    pub interfaces: Vec<String>,
    pub fields: Vec<(String, TypeTag)>,
    pub methods: Vec<FunctionDef>,
}

impl ClassDef {
    pub fn new(name: impl Into<String>) -> Self {
        ClassDef {
            name: name.into(),
            superclass: None,
            interfaces: Vec::new(),
            fields: Vec::new(),
            methods: Vec::new(),
        }
    }

    pub fn method(&self, name: &str, mtype: &MethodType) -> Option<&FunctionDef> {
        self.methods
            .iter()
            .find(|m| m.name == name && &m.mtype == mtype)
    }

    pub fn field_type(&self, name: &str) -> Option<&TypeTag> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// A loadable code unit: classes, a deduplicated constant pool and an
/// optional entry point.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Module {
    pub classes: Vec<ClassDef>,
    pub constants: Vec<Constant>,
    pub entry: Option<(String, String)>,
}

impl Module {
    pub fn class(&self, name: &str) -> Option<&ClassDef> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Returns the index of `c`, appending it if no equal entry exists.
    pub fn intern(&mut self, c: Constant) -> u32 {
        if let Some(i) = self.constants.iter().position(|e| e == &c) {
            return i as u32;
        }
        self.constants.push(c);
        (self.constants.len() - 1) as u32
    }

    pub fn method_ref(&self, idx: u32) -> Option<&MethodRef> {
        match self.constants.get(idx as usize) {
            Some(Constant::Method(r)) => Some(r),
            _ => None,
        }
    }

    pub fn functions(&self) -> impl Iterator<Item = &FunctionDef> {
        self.classes.iter().flat_map(|c| c.methods.iter())
    }

    /// Rebuilds the pool in first-use order (classes, then methods, then
    /// instructions), dropping unreferenced entries.
    ///
    /// Out-of-range indices are left untouched so the verifier can still
    /// report them.
    pub fn canonicalize_pool(&mut self) {
        let old = std::mem::take(&mut self.constants);
        let mut fresh = Module::default();
        for class in &mut self.classes {
            for method in &mut class.methods {
                for insn in &mut method.code {
                    let idx = match insn {
                        Instruction::PushConst(i) => i,
                        Instruction::Invoke { mref, .. } => mref,
                        _ => continue,
                    };
                    if let Some(c) = old.get(*idx as usize) {
                        *idx = fresh.intern(c.clone());
                    }
                }
            }
        }
        self.constants = fresh.constants;
    }

    /// All (kind, reference) pairs of classic invocation instructions, in
    /// program order.
    pub fn invocations(&self) -> Vec<(InvocationKind, MethodRef)> {
        self.functions()
            .flat_map(|f| f.code.iter())
            .filter_map(|insn| match insn {
                Instruction::Invoke { kind, mref } => {
                    self.method_ref(*mref).map(|r| (*kind, r.clone()))
                }
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intern_dedups() {
        let mut m = Module::default();
        let a = m.intern(Constant::Str("x".into()));
        let b = m.intern(Constant::Int(1));
        let c = m.intern(Constant::Str("x".into()));
        assert_eq!(a, c);
        assert_ne!(a, b);
        assert_eq!(m.constants.len(), 2);
    }
}
