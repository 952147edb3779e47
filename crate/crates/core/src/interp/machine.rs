use std::fmt;
use std::sync::Arc;

use super::program::{Body, ClassId, MethodId, Op, Program, SelectorId};
use crate::isa::{InvocationKind, MethodRef, MethodType, ObjRef, TypeTag, Value};
use crate::patch::Engine;

pub const DEFAULT_MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrapKind {
    StackUnderflow,
    BadIndex,
    UnknownMethod,
    DoesNotImplement,
    NullReference,
    Type,
    Structural,
    Cast,
    ArrayLength,
    Bootstrap,
    NoEngine,
    DepthExceeded,
    Abstract,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trap {
    pub kind: TrapKind,
    pub message: String,
    /// Innermost guest frame the trap passed through: (class, method, pc).
    pub at: Option<(String, String, usize)>,
}

impl Trap {
    pub fn new(kind: TrapKind, message: impl Into<String>) -> Self {
        Trap {
            kind,
            message: message.into(),
            at: None,
        }
    }
}

impl fmt::Display for Trap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)?;
        if let Some((c, m, pc)) = &self.at {
            write!(f, " (at {c}.{m}@{pc})")?;
        }
        Ok(())
    }
}

impl std::error::Error for Trap {}

/// Host-side configuration of a machine.
pub struct RuntimeHooks {
    /// Call-site engine servicing `invoke_dynamic`; without one those
    /// instructions trap.
    pub engine: Option<Arc<Engine>>,
    /// Called by `Sys.tick` with its argument.
    pub on_tick: Option<Box<dyn FnMut(i64) + Send>>,
    /// Also write every printed line to stdout.
    pub echo: bool,
    pub max_depth: usize,
}

impl Default for RuntimeHooks {
    fn default() -> Self {
        RuntimeHooks {
            engine: None,
            on_tick: None,
            echo: false,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

impl RuntimeHooks {
    pub fn with_engine(engine: Arc<Engine>) -> Self {
        RuntimeHooks {
            engine: Some(engine),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitReport {
    pub return_value: Option<Value>,
    pub output: Vec<String>,
    pub instructions_executed: u64,
    pub indy_invocations: u64,
}

#[derive(Debug, Clone)]
pub struct TrapReport {
    pub trap: Trap,
    /// What ran before the trap; `return_value` is always `None`.
    pub partial: ExitReport,
}

impl fmt::Display for TrapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.trap.fmt(f)
    }
}

impl std::error::Error for TrapReport {}

struct Object {
    class: ClassId,
    fields: Vec<Value>,
}

pub struct Machine {
    program: Arc<Program>,
    engine: Option<Arc<Engine>>,
    on_tick: Option<Box<dyn FnMut(i64) + Send>>,
    echo: bool,
    max_depth: usize,
    heap: Vec<Object>,
    statics: Vec<Value>,
    output: Vec<String>,
    instructions: u64,
    indy_invocations: u64,
    depth: usize,
}

/// Runs `entry` to completion on a fresh machine.
pub fn run(
    program: &Arc<Program>,
    entry: MethodId,
    args: Vec<Value>,
    hooks: RuntimeHooks,
) -> Result<ExitReport, TrapReport> {
    let mut m = Machine::new(program.clone(), hooks);
    let result = m.call(entry, args);
    let returns = program.method(entry).mtype.returns_value();
    let partial = m.take_report();
    match result {
        Ok(v) => Ok(ExitReport {
            return_value: returns.then_some(v),
            ..partial
        }),
        Err(trap) => Err(TrapReport { trap, partial }),
    }
}

/// Runs the module's declared entry point.
pub fn run_entry(program: &Arc<Program>, args: Vec<Value>, hooks: RuntimeHooks) -> Result<ExitReport, TrapReport> {
    let entry = entry_method(program).ok_or_else(|| TrapReport {
        trap: Trap::new(TrapKind::UnknownMethod, "module declares no entry point"),
        partial: ExitReport {
            return_value: None,
            output: Vec::new(),
            instructions_executed: 0,
            indy_invocations: 0,
        },
    })?;
    run(program, entry, args, hooks)
}

pub fn entry_method(program: &Program) -> Option<MethodId> {
    let (class, name) = program.module().entry.clone()?;
    program.find_static(&class, &name, None)
}

impl Machine {
    pub fn new(program: Arc<Program>, hooks: RuntimeHooks) -> Self {
        let statics = program.initial_statics();
        Machine {
            program,
            engine: hooks.engine,
            on_tick: hooks.on_tick,
            echo: hooks.echo,
            max_depth: hooks.max_depth,
            heap: Vec::new(),
            statics,
            output: Vec::new(),
            instructions: 0,
            indy_invocations: 0,
            depth: 0,
        }
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    pub fn engine(&self) -> Option<&Arc<Engine>> {
        self.engine.as_ref()
    }

    pub fn output(&self) -> &[String] {
        &self.output
    }

    pub fn instructions_executed(&self) -> u64 {
        self.instructions
    }

    /// Drains accumulated output and counters.
    pub fn take_report(&mut self) -> ExitReport {
        ExitReport {
            return_value: None,
            output: std::mem::take(&mut self.output),
            instructions_executed: std::mem::take(&mut self.instructions),
            indy_invocations: std::mem::take(&mut self.indy_invocations),
        }
    }

    /// Allocates an instance of `class` with default field values.
    pub fn allocate(&mut self, class: ClassId) -> Value {
        let fields = self
            .program
            .class(class)
            .layout
            .iter()
            .map(|(_, t)| Value::default_for(t))
            .collect();
        self.heap.push(Object { class, fields });
        Value::Ref(ObjRef((self.heap.len() - 1) as u32))
    }

    pub fn class_of(&self, v: &Value) -> Option<ClassId> {
        match v {
            Value::Ref(r) => self.heap.get(r.0 as usize).map(|o| o.class),
            Value::Str(_) => self.program.class_id(crate::isa::builtins::STR),
            Value::Arr(_) => self.program.class_id(crate::isa::builtins::ARR),
            _ => None,
        }
    }

    /// Full conformance of `v` to `tag`, consulting the heap for classes.
    pub fn conforms(&self, v: &Value, tag: &TypeTag) -> bool {
        match (tag, v) {
            (TypeTag::Class(name), Value::Ref(_)) => {
                match (self.class_of(v), self.program.class_id(name)) {
                    (Some(sub), Some(sup)) => self.program.is_subclass(sub, sup),
                    _ => false,
                }
            }
            _ => v.conforms_loosely(tag),
        }
    }

    pub fn check_args(&self, mtype: &MethodType, args: &[Value], what: &dyn fmt::Display) -> Result<(), Trap> {
        if args.len() != mtype.params.len() {
            return Err(Trap::new(
                TrapKind::Structural,
                format!("{what} expects {} arguments, got {}", mtype.params.len(), args.len()),
            ));
        }
        for (i, (a, t)) in args.iter().zip(&mtype.params).enumerate() {
            if !self.conforms(a, t) {
                return Err(Trap::new(
                    TrapKind::Type,
                    format!("{what}: argument {i} is {} where {t} is required", self.render(a)),
                ));
            }
        }
        Ok(())
    }

    /// Text produced by `print` for `v`.
    pub fn render(&self, v: &Value) -> String {
        match v {
            Value::Ref(r) => match self.heap.get(r.0 as usize) {
                Some(o) => format!("{}@{}", self.program.class(o.class).name, r.0),
                None => v.to_string(),
            },
            Value::Arr(items) => {
                let parts: Vec<String> = items.iter().map(|i| self.render(i)).collect();
                format!("[{}]", parts.join(", "))
            }
            _ => v.to_string(),
        }
    }

    pub fn emit(&mut self, line: String) {
        if self.echo {
            println!("{line}");
        }
        self.output.push(line);
    }

    pub(crate) fn tick(&mut self, n: i64) {
        if let Some(hook) = self.on_tick.as_mut() {
            hook(n);
        }
    }

    /// Calls `method` with already-popped arguments. Returns `Value::Null`
    /// for void methods.
    pub fn call(&mut self, method: MethodId, args: Vec<Value>) -> Result<Value, Trap> {
        let program = self.program.clone();
        let info = program.method(method);
        if args.len() != info.mtype.params.len() {
            return Err(Trap::new(
                TrapKind::Structural,
                format!(
                    "{} expects {} arguments, got {}",
                    info.method_ref(),
                    info.mtype.params.len(),
                    args.len()
                ),
            ));
        }
        if info.kind != InvocationKind::Static && matches!(args.first(), Some(Value::Null)) {
            return Err(Trap::new(
                TrapKind::NullReference,
                format!("null receiver for {}", info.method_ref()),
            ));
        }
        match &info.body {
            Body::Native(f) => f(self, args),
            Body::Abstract => Err(Trap::new(
                TrapKind::Abstract,
                format!("{} has no body", info.method_ref()),
            )),
            Body::Guest(ops) => {
                if self.depth >= self.max_depth {
                    return Err(Trap::new(
                        TrapKind::DepthExceeded,
                        format!("call depth limit {} exceeded", self.max_depth),
                    ));
                }
                self.depth += 1;
                let mut pc = 0usize;
                let result = self.execute(ops, info.locals, info.max_stack, args, &mut pc);
                self.depth -= 1;
                result.map_err(|mut t| {
                    if t.at.is_none() {
                        t.at = Some((info.owner.clone(), info.name.clone(), pc));
                    }
                    t
                })
            }
        }
    }

    /// Late binding for virtual and interface calls.
    pub(crate) fn dispatch(
        &mut self,
        selector: SelectorId,
        iface: Option<ClassId>,
        fallback: MethodId,
        args: Vec<Value>,
    ) -> Result<Value, Trap> {
        let target = self.select(selector, iface, fallback, args.first())?;
        self.call(target, args)
    }

    fn select(
        &self,
        selector: SelectorId,
        iface: Option<ClassId>,
        fallback: MethodId,
        receiver: Option<&Value>,
    ) -> Result<MethodId, Trap> {
        let program = &self.program;
        let decl = program.method(fallback);
        match receiver {
            None => Err(Trap::new(TrapKind::Structural, "virtual call without receiver")),
            Some(Value::Null) => Err(Trap::new(
                TrapKind::NullReference,
                format!("null receiver for {}", decl.method_ref()),
            )),
            Some(Value::Ref(r)) => {
                let class = self
                    .heap
                    .get(r.0 as usize)
                    .map(|o| o.class)
                    .ok_or_else(|| Trap::new(TrapKind::NullReference, "dangling reference"))?;
                if let Some(i) = iface {
                    if !program.is_subclass(class, i) {
                        return Err(Trap::new(
                            TrapKind::DoesNotImplement,
                            format!("{} does not implement {}", program.class(class).name, program.class(i).name),
                        ));
                    }
                }
                if let Some(m) = program.class(class).vtable.get(&selector) {
                    return Ok(*m);
                }
                if matches!(decl_body(program, fallback), Body::Native(_)) {
                    return Ok(fallback);
                }
                Err(Trap::new(
                    TrapKind::UnknownMethod,
                    format!("{} has no implementation of {}", program.class(class).name, decl.name),
                ))
            }
            Some(other) => {
                if matches!(decl_body(program, fallback), Body::Native(_)) {
                    Ok(fallback)
                } else {
                    Err(Trap::new(
                        TrapKind::Cast,
                        format!("{} is not an object receiver for {}", other.type_name(), decl.method_ref()),
                    ))
                }
            }
        }
    }

    /// Performs a classic invocation of `r` exactly as the instruction would.
    pub fn invoke_ref(&mut self, kind: InvocationKind, r: &MethodRef, args: Vec<Value>) -> Result<Value, Trap> {
        let program = self.program.clone();
        let decl = program
            .resolve(kind, r)
            .map_err(|e| Trap::new(TrapKind::UnknownMethod, e.to_string()))?;
        self.invoke_resolved(kind, decl, args)
    }

    pub(crate) fn invoke_resolved(&mut self, kind: InvocationKind, decl: MethodId, args: Vec<Value>) -> Result<Value, Trap> {
        let program = self.program.clone();
        match kind {
            InvocationKind::Static | InvocationKind::Special => self.call(decl, args),
            InvocationKind::Virtual | InvocationKind::Interface => {
                let info = program.method(decl);
                let selector = program
                    .selector(&info.name, &info.mtype.drop_receiver())
                    .ok_or_else(|| Trap::new(TrapKind::UnknownMethod, info.method_ref().to_string()))?;
                let iface = if kind == InvocationKind::Interface {
                    Some(info.class)
                } else {
                    None
                };
                self.dispatch(selector, iface, decl, args)
            }
        }
    }

    /// Reflective call by name: linear scan of every method, full argument
    /// checks, no caching.
    pub fn reflective_invoke(&mut self, owner: &str, name: &str, mtype: &str, args: Vec<Value>) -> Result<Value, Trap> {
        let mtype = MethodType::parse(mtype).map_err(|e| Trap::new(TrapKind::Type, e.to_string()))?;
        let program = self.program.clone();
        let (id, info) = program
            .methods()
            .find(|(_, m)| m.owner == owner && m.name == name && m.mtype == mtype)
            .ok_or_else(|| {
                Trap::new(
                    TrapKind::UnknownMethod,
                    format!("no method {owner}.{name}:{mtype}"),
                )
            })?;
        let r = info.method_ref();
        self.check_args(&info.mtype, &args, &r)?;
        self.invoke_resolved(info.kind, id, args)
    }

    fn execute(
        &mut self,
        ops: &[Op],
        nlocals: usize,
        max_stack: usize,
        args: Vec<Value>,
        pc: &mut usize,
    ) -> Result<Value, Trap> {
        let mut locals = args;
        locals.resize(nlocals.max(locals.len()), Value::Null);
        let mut stack: Vec<Value> = Vec::with_capacity(max_stack);
        macro_rules! pop {
            () => {
                stack
                    .pop()
                    .ok_or_else(|| Trap::new(TrapKind::StackUnderflow, "operand stack underflow"))?
            };
        }
        macro_rules! int {
            ($v:expr, $op:expr) => {
                match $v {
                    Value::Int(i) => i,
                    other => {
                        return Err(Trap::new(
                            TrapKind::Type,
                            format!("{} expects int operands, got {}", $op, other.type_name()),
                        ))
                    }
                }
            };
        }
        loop {
            let op = ops
                .get(*pc)
                .ok_or_else(|| Trap::new(TrapKind::BadIndex, "fell off the end of the method"))?;
            self.instructions += 1;
            *pc += 1;
            match op {
                Op::Const(v) => stack.push(v.clone()),
                Op::Load(s) => stack.push(locals[*s as usize].clone()),
                Op::Store(s) => locals[*s as usize] = pop!(),
                Op::Add => {
                    let b = pop!();
                    let a = pop!();
                    let v = match (&a, &b) {
                        (Value::Int(x), Value::Int(y)) => Value::Int(x.wrapping_add(*y)),
                        (Value::Str(_), _) | (_, Value::Str(_)) => {
                            Value::str(format!("{}{}", self.render(&a), self.render(&b)))
                        }
                        _ => {
                            return Err(Trap::new(
                                TrapKind::Type,
                                format!("add of {} and {}", a.type_name(), b.type_name()),
                            ))
                        }
                    };
                    stack.push(v);
                }
                Op::Sub => {
                    let b = int!(pop!(), "sub");
                    let a = int!(pop!(), "sub");
                    stack.push(Value::Int(a.wrapping_sub(b)));
                }
                Op::Mul => {
                    let b = int!(pop!(), "mul");
                    let a = int!(pop!(), "mul");
                    stack.push(Value::Int(a.wrapping_mul(b)));
                }
                Op::Lt => {
                    let b = int!(pop!(), "lt");
                    let a = int!(pop!(), "lt");
                    stack.push(Value::Bool(a < b));
                }
                Op::Eq => {
                    let b = pop!();
                    let a = pop!();
                    stack.push(Value::Bool(a == b));
                }
                Op::Pop => {
                    pop!();
                }
                Op::Dup => {
                    let v = stack
                        .last()
                        .cloned()
                        .ok_or_else(|| Trap::new(TrapKind::StackUnderflow, "operand stack underflow"))?;
                    stack.push(v);
                }
                Op::Jump(t) => *pc = *t as usize,
                Op::JumpIfFalse(t) => match pop!() {
                    Value::Bool(false) => *pc = *t as usize,
                    Value::Bool(true) => {}
                    other => {
                        return Err(Trap::new(
                            TrapKind::Type,
                            format!("jump_if_false expects bool, got {}", other.type_name()),
                        ))
                    }
                },
                Op::New(c) => {
                    let v = self.allocate(*c);
                    stack.push(v);
                }
                Op::GetField { class, index } => {
                    let obj = pop!();
                    let o = self.object(&obj, *class)?;
                    stack.push(self.heap[o].fields[*index as usize].clone());
                }
                Op::PutField { class, index } => {
                    let v = pop!();
                    let obj = pop!();
                    let o = self.object(&obj, *class)?;
                    self.heap[o].fields[*index as usize] = v;
                }
                Op::GetStatic(slot) => stack.push(self.statics[*slot as usize].clone()),
                Op::PutStatic(slot) => self.statics[*slot as usize] = pop!(),
                Op::Print => {
                    let v = pop!();
                    let line = self.render(&v);
                    self.emit(line);
                }
                Op::Ret => {
                    return Ok(stack.pop().unwrap_or(Value::Null));
                }
                Op::InvokeExact { callee, argc, returns } => {
                    let args = stack.split_off(stack.len() - *argc as usize);
                    let v = self.call(*callee, args)?;
                    if *returns {
                        stack.push(v);
                    }
                }
                Op::InvokeVirtual {
                    selector,
                    iface,
                    fallback,
                    argc,
                    returns,
                } => {
                    let args = stack.split_off(stack.len() - *argc as usize);
                    let v = self.dispatch(*selector, *iface, *fallback, args)?;
                    if *returns {
                        stack.push(v);
                    }
                }
                Op::InvokeDynamic { slot, argc, returns } => {
                    let args = stack.split_off(stack.len() - *argc as usize);
                    let engine = self.engine.clone().ok_or_else(|| {
                        Trap::new(TrapKind::NoEngine, "invoke_dynamic without a call-site engine")
                    })?;
                    self.indy_invocations += 1;
                    let v = engine.invoke_slot(self, *slot, args)?;
                    if *returns {
                        stack.push(v);
                    }
                }
            }
        }
    }

    fn object(&self, v: &Value, class: ClassId) -> Result<usize, Trap> {
        match v {
            Value::Null => Err(Trap::new(TrapKind::NullReference, "field access on null")),
            Value::Ref(r) => {
                let idx = r.0 as usize;
                let o = self
                    .heap
                    .get(idx)
                    .ok_or_else(|| Trap::new(TrapKind::NullReference, "dangling reference"))?;
                if self.program.is_subclass(o.class, class) {
                    Ok(idx)
                } else {
                    Err(Trap::new(
                        TrapKind::Cast,
                        format!(
                            "{} is not a {}",
                            self.program.class(o.class).name,
                            self.program.class(class).name
                        ),
                    ))
                }
            }
            other => Err(Trap::new(
                TrapKind::Cast,
                format!("field access on {}", other.type_name()),
            )),
        }
    }
}

fn decl_body(program: &Program, id: MethodId) -> &Body {
    &program.method(id).body
}
