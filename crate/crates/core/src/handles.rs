//! Typed method handles and the combinators that compose them.
//!
//! Every constructor checks the typing rule of its combinator and fails
//! eagerly, so a handle that exists is structurally well-formed. Invocation
//! then only performs the value checks that cannot be decided statically:
//! narrowing conversions and the length of spread arrays.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::interp::{Body, Machine, MethodId, Program, SelectorId, Trap, TrapKind};
use crate::isa::{InvocationKind, MethodRef, MethodType, TypeTag, Value};

pub type Handle = Arc<MethodHandle>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HandleError {
    #[error("no such method: {0}")]
    NoSuchMethod(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("void return: {0}")]
    VoidReturn(String),
    #[error("bad arity: {0}")]
    Arity(String),
}

pub struct MethodHandle {
    node: Node,
    mtype: MethodType,
}

enum Node {
    Direct {
        method: MethodId,
        label: String,
    },
    Virtual {
        selector: SelectorId,
        iface: Option<crate::interp::ClassId>,
        fallback: MethodId,
        label: String,
    },
    Insert {
        target: Handle,
        pos: usize,
        values: Vec<Value>,
    },
    FilterArgs {
        target: Handle,
        pos: usize,
        filters: Vec<Option<Handle>>,
    },
    FilterReturn {
        target: Handle,
        filter: Handle,
    },
    Spreader {
        target: Handle,
        count: usize,
    },
    Collector {
        target: Handle,
        count: usize,
    },
    AsType {
        target: Handle,
    },
    DropReceiver {
        target: Handle,
    },
}

/// How a value of one type is converted to another by `as_type`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conversion {
    Identity,
    Widen,
    /// Checked at invocation time.
    Narrow,
}

/// Conversion rule from `from` to `to`, or `None` if impossible.
pub fn conversion(from: &TypeTag, to: &TypeTag) -> Option<Conversion> {
    match (from, to) {
        _ if from == to => Some(Conversion::Identity),
        (TypeTag::Void, _) | (_, TypeTag::Void) => None,
        (_, TypeTag::Obj) => Some(Conversion::Widen),
        (TypeTag::Obj, _) => Some(Conversion::Narrow),
        (TypeTag::Class(_), TypeTag::Class(_)) => Some(Conversion::Narrow),
        _ => None,
    }
}

fn mismatch(msg: impl Into<String>) -> HandleError {
    HandleError::TypeMismatch(msg.into())
}

impl MethodHandle {
    pub fn mtype(&self) -> &MethodType {
        &self.mtype
    }

    fn new(node: Node, mtype: MethodType) -> Handle {
        Arc::new(MethodHandle { node, mtype })
    }

    /// Binds `values` to the parameters starting at `pos`.
    pub fn insert_arguments(target: &Handle, pos: usize, values: Vec<Value>) -> Result<Handle, HandleError> {
        let params = &target.mtype.params;
        if pos + values.len() > params.len() {
            return Err(HandleError::Arity(format!(
                "cannot insert {} values at {pos} into {}",
                values.len(),
                target.mtype
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.conforms_loosely(&params[pos + i]) {
                return Err(mismatch(format!(
                    "inserted {} does not fit parameter {} of {}",
                    v.type_name(),
                    pos + i,
                    target.mtype
                )));
            }
        }
        let mut rest = params.clone();
        rest.drain(pos..pos + values.len());
        let mtype = MethodType::new(rest, target.mtype.ret.clone());
        Ok(Self::new(
            Node::Insert {
                target: target.clone(),
                pos,
                values,
            },
            mtype,
        ))
    }

    /// Pre-processes arguments `pos..` with unary `filters`; `None` leaves an
    /// argument untouched.
    pub fn filter_arguments(target: &Handle, pos: usize, filters: Vec<Option<Handle>>) -> Result<Handle, HandleError> {
        let mut params = target.mtype.params.clone();
        if pos + filters.len() > params.len() {
            return Err(HandleError::Arity(format!(
                "{} filters at {pos} exceed {}",
                filters.len(),
                target.mtype
            )));
        }
        for (i, f) in filters.iter().enumerate() {
            let Some(f) = f else { continue };
            if f.mtype.arity() != 1 {
                return Err(HandleError::Arity(format!("filter {} must be unary", f.mtype)));
            }
            if f.mtype.ret != params[pos + i] {
                return Err(mismatch(format!(
                    "filter returns {} but parameter {} of {} is {}",
                    f.mtype.ret,
                    pos + i,
                    target.mtype,
                    params[pos + i]
                )));
            }
            params[pos + i] = f.mtype.params[0].clone();
        }
        let mtype = MethodType::new(params, target.mtype.ret.clone());
        Ok(Self::new(
            Node::FilterArgs {
                target: target.clone(),
                pos,
                filters,
            },
            mtype,
        ))
    }

    /// Post-processes the result with unary `filter`.
    pub fn filter_return_value(target: &Handle, filter: &Handle) -> Result<Handle, HandleError> {
        if target.mtype.ret.is_void() {
            return Err(HandleError::VoidReturn(format!("{} returns nothing to filter", target.mtype)));
        }
        if filter.mtype.arity() != 1 {
            return Err(HandleError::Arity(format!("filter {} must be unary", filter.mtype)));
        }
        if filter.mtype.params[0] != target.mtype.ret {
            return Err(mismatch(format!(
                "filter takes {} but target returns {}",
                filter.mtype.params[0], target.mtype.ret
            )));
        }
        let mtype = MethodType::new(target.mtype.params.clone(), filter.mtype.ret.clone());
        Ok(Self::new(
            Node::FilterReturn {
                target: target.clone(),
                filter: filter.clone(),
            },
            mtype,
        ))
    }

    /// Replaces the trailing `count` parameters with one array parameter
    /// whose elements are spread into them.
    pub fn as_spreader(target: &Handle, count: usize) -> Result<Handle, HandleError> {
        let params = &target.mtype.params;
        if count > params.len() {
            return Err(HandleError::Arity(format!("cannot spread {count} into {}", target.mtype)));
        }
        let mut new = params[..params.len() - count].to_vec();
        new.push(TypeTag::Arr);
        Ok(Self::new(
            Node::Spreader {
                target: target.clone(),
                count,
            },
            MethodType::new(new, target.mtype.ret.clone()),
        ))
    }

    /// Replaces a trailing array parameter with `count` object parameters
    /// that are gathered into it.
    pub fn as_collector(target: &Handle, count: usize) -> Result<Handle, HandleError> {
        let params = &target.mtype.params;
        if params.last() != Some(&TypeTag::Arr) {
            return Err(mismatch(format!("{} has no trailing array parameter", target.mtype)));
        }
        let mut new = params[..params.len() - 1].to_vec();
        new.extend(std::iter::repeat_n(TypeTag::Obj, count));
        Ok(Self::new(
            Node::Collector {
                target: target.clone(),
                count,
            },
            MethodType::new(new, target.mtype.ret.clone()),
        ))
    }

    /// Adapts `target` to `mtype` with per-position conversions.
    pub fn as_type(target: &Handle, mtype: MethodType) -> Result<Handle, HandleError> {
        if mtype == target.mtype {
            return Ok(target.clone());
        }
        if mtype.arity() != target.mtype.arity() {
            return Err(HandleError::Arity(format!("cannot adapt {} to {mtype}", target.mtype)));
        }
        for (from, to) in mtype.params.iter().zip(&target.mtype.params) {
            if conversion(from, to).is_none() {
                return Err(mismatch(format!("cannot convert parameter {from} to {to}")));
            }
        }
        if conversion(&target.mtype.ret, &mtype.ret).is_none() {
            return Err(mismatch(format!(
                "cannot convert return {} to {}",
                target.mtype.ret, mtype.ret
            )));
        }
        Ok(Self::new(Node::AsType { target: target.clone() }, mtype))
    }

    /// Prepends an ignored receiver parameter of type `receiver`.
    pub fn drop_receiver(target: &Handle, receiver: TypeTag) -> Result<Handle, HandleError> {
        if receiver.is_void() {
            return Err(mismatch("receiver cannot be void"));
        }
        let mut params = vec![receiver];
        params.extend(target.mtype.params.iter().cloned());
        Ok(Self::new(
            Node::DropReceiver { target: target.clone() },
            MethodType::new(params, target.mtype.ret.clone()),
        ))
    }

    /// The type implied by this node's structure and its children's types.
    /// Always equal to `mtype()` for handles built by the constructors.
    pub fn derived_type(&self) -> MethodType {
        let t = |h: &Handle| h.derived_type();
        match &self.node {
            Node::Direct { .. } | Node::Virtual { .. } | Node::AsType { .. } => self.mtype.clone(),
            Node::Insert { target, pos, values } => {
                let tt = t(target);
                let mut p = tt.params;
                p.drain(*pos..*pos + values.len());
                MethodType::new(p, tt.ret)
            }
            Node::FilterArgs { target, pos, filters } => {
                let tt = t(target);
                let mut p = tt.params;
                for (i, f) in filters.iter().enumerate() {
                    if let Some(f) = f {
                        p[pos + i] = t(f).params[0].clone();
                    }
                }
                MethodType::new(p, tt.ret)
            }
            Node::FilterReturn { target, filter } => MethodType::new(t(target).params, t(filter).ret),
            Node::Spreader { target, count } => {
                let tt = t(target);
                let mut p = tt.params[..tt.params.len() - count].to_vec();
                p.push(TypeTag::Arr);
                MethodType::new(p, tt.ret)
            }
            Node::Collector { target, count } => {
                let tt = t(target);
                let mut p = tt.params[..tt.params.len() - 1].to_vec();
                p.extend(std::iter::repeat_n(TypeTag::Obj, *count));
                MethodType::new(p, tt.ret)
            }
            Node::DropReceiver { target } => {
                let tt = t(target);
                let mut p = vec![self.mtype.params[0].clone()];
                p.extend(tt.params);
                MethodType::new(p, tt.ret)
            }
        }
    }

    /// Whether every node in the tree satisfies its typing rule.
    pub fn is_coherent(&self) -> bool {
        let children_ok = self.children().iter().all(|c| c.is_coherent());
        children_ok && self.derived_type() == self.mtype
    }

    fn children(&self) -> Vec<&Handle> {
        match &self.node {
            Node::Direct { .. } | Node::Virtual { .. } => Vec::new(),
            Node::Insert { target, .. }
            | Node::Spreader { target, .. }
            | Node::Collector { target, .. }
            | Node::AsType { target }
            | Node::DropReceiver { target } => vec![target],
            Node::FilterArgs { target, filters, .. } => {
                let mut v = vec![target];
                v.extend(filters.iter().flatten());
                v
            }
            Node::FilterReturn { target, filter } => vec![target, filter],
        }
    }

    /// Leaf methods reachable from this handle, target first.
    pub fn leaves(&self) -> Vec<String> {
        match &self.node {
            Node::Direct { label, .. } | Node::Virtual { label, .. } => vec![label.clone()],
            _ => self.children().iter().flat_map(|c| c.leaves()).collect(),
        }
    }

    /// Invokes with full structural and type checks on the arguments.
    pub fn invoke(self: &Handle, m: &mut Machine, args: Vec<Value>) -> Result<Value, Trap> {
        m.check_args(&self.mtype, &args, &self.mtype)?;
        self.invoke_unchecked(m, args)
    }

    /// Invokes assuming `args` already fit `mtype()`; used on the call-site
    /// path where the verifier and the site type guarantee the shape.
    pub fn invoke_unchecked(&self, m: &mut Machine, mut args: Vec<Value>) -> Result<Value, Trap> {
        match &self.node {
            Node::Direct { method, .. } => m.call(*method, args),
            Node::Virtual {
                selector,
                iface,
                fallback,
                ..
            } => m.dispatch(*selector, *iface, *fallback, args),
            Node::Insert { target, pos, values } => {
                let tail = args.split_off(*pos);
                args.extend(values.iter().cloned());
                args.extend(tail);
                target.invoke_unchecked(m, args)
            }
            Node::FilterArgs { target, pos, filters } => {
                for (i, f) in filters.iter().enumerate() {
                    if let Some(f) = f {
                        let slot = &mut args[pos + i];
                        let v = std::mem::replace(slot, Value::Null);
                        args[pos + i] = f.invoke_unchecked(m, vec![v])?;
                    }
                }
                target.invoke_unchecked(m, args)
            }
            Node::FilterReturn { target, filter } => {
                let r = target.invoke_unchecked(m, args)?;
                filter.invoke_unchecked(m, vec![r])
            }
            Node::Spreader { target, count } => {
                let spread = match args.pop() {
                    Some(Value::Arr(a)) => a,
                    Some(Value::Null) if *count == 0 => Arc::from(Vec::new()),
                    Some(other) => {
                        return Err(Trap::new(
                            TrapKind::Cast,
                            format!("spreader expects an array, got {}", other.type_name()),
                        ))
                    }
                    None => return Err(Trap::new(TrapKind::Structural, "spreader without array argument")),
                };
                if spread.len() != *count {
                    return Err(Trap::new(
                        TrapKind::ArrayLength,
                        format!("spreader expects {count} elements, got {}", spread.len()),
                    ));
                }
                let base = args.len();
                args.extend(spread.iter().cloned());
                for (i, v) in args.iter().enumerate().skip(base) {
                    let want = &target.mtype.params[i];
                    if !m.conforms(v, want) {
                        return Err(Trap::new(
                            TrapKind::Cast,
                            format!("spread element {} is {} where {want} is required", i - base, v.type_name()),
                        ));
                    }
                }
                target.invoke_unchecked(m, args)
            }
            Node::Collector { target, count } => {
                let collected = args.split_off(args.len() - count);
                args.push(Value::arr(collected));
                target.invoke_unchecked(m, args)
            }
            Node::AsType { target } => {
                for (i, (from, to)) in self.mtype.params.iter().zip(&target.mtype.params).enumerate() {
                    if conversion(from, to) == Some(Conversion::Narrow) && !m.conforms(&args[i], to) {
                        return Err(Trap::new(
                            TrapKind::Cast,
                            format!("argument {i}: {} is not {to}", m.render(&args[i])),
                        ));
                    }
                }
                let r = target.invoke_unchecked(m, args)?;
                let (from, to) = (&target.mtype.ret, &self.mtype.ret);
                if conversion(from, to) == Some(Conversion::Narrow) && !m.conforms(&r, to) {
                    return Err(Trap::new(
                        TrapKind::Cast,
                        format!("result {} is not {to}", m.render(&r)),
                    ));
                }
                Ok(r)
            }
            Node::DropReceiver { target } => {
                args.remove(0);
                target.invoke_unchecked(m, args)
            }
        }
    }
}

impl fmt::Debug for MethodHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MethodHandle({self}: {})", self.mtype)
    }
}

/// Combinator tree, e.g. `asType(filterReturn(asType(Fib.fib), Dump.out))`.
impl fmt::Display for MethodHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Node::Direct { label, .. } | Node::Virtual { label, .. } => f.write_str(label),
            Node::Insert { target, pos, values } => write!(f, "insert({target}, {pos}, {})", values.len()),
            Node::FilterArgs { target, pos, filters } => {
                write!(f, "filterArgs({target}, {pos}")?;
                for x in filters {
                    match x {
                        Some(h) => write!(f, ", {h}")?,
                        None => f.write_str(", _")?,
                    }
                }
                f.write_str(")")
            }
            Node::FilterReturn { target, filter } => write!(f, "filterReturn({target}, {filter})"),
            Node::Spreader { target, count } => write!(f, "spreader({target}, {count})"),
            Node::Collector { target, count } => write!(f, "collector({target}, {count})"),
            Node::AsType { target } => write!(f, "asType({target})"),
            Node::DropReceiver { target } => write!(f, "dropReceiver({target})"),
        }
    }
}

/// Resolves symbolic references to handles against one linked program.
#[derive(Clone)]
pub struct Lookup {
    program: Arc<Program>,
}

impl Lookup {
    pub fn new(program: Arc<Program>) -> Self {
        Lookup { program }
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    /// A handle behaving like a classic invocation of `r` with `kind`.
    pub fn find(&self, kind: InvocationKind, r: &MethodRef) -> Result<Handle, HandleError> {
        let decl = self
            .program
            .resolve(kind, r)
            .map_err(|e| HandleError::NoSuchMethod(e.to_string()))?;
        let info = self.program.method(decl);
        if matches!(info.body, Body::Abstract) && matches!(kind, InvocationKind::Static | InvocationKind::Special) {
            return Err(HandleError::NoSuchMethod(format!("{r} is abstract")));
        }
        let label = r.key_form();
        let node = match kind {
            InvocationKind::Static | InvocationKind::Special => Node::Direct { method: decl, label },
            InvocationKind::Virtual | InvocationKind::Interface => Node::Virtual {
                selector: self
                    .program
                    .selector(&info.name, &info.mtype.drop_receiver())
                    .ok_or_else(|| HandleError::NoSuchMethod(r.to_string()))?,
                iface: (kind == InvocationKind::Interface).then_some(info.class),
                fallback: decl,
                label,
            },
        };
        Ok(MethodHandle::new(node, r.mtype.clone()))
    }

    pub fn find_static(&self, owner: &str, name: &str, mtype: &MethodType) -> Result<Handle, HandleError> {
        self.find(InvocationKind::Static, &MethodRef::new(owner, name, mtype.clone()))
    }

    /// Finds a static method by owner and name alone, when unambiguous.
    pub fn find_static_by_name(&self, owner: &str, name: &str) -> Result<Handle, HandleError> {
        let mut found = self
            .program
            .methods()
            .filter(|(_, m)| m.owner == owner && m.name == name && m.kind == InvocationKind::Static);
        match (found.next(), found.next()) {
            (Some((_, m)), None) => self.find_static(owner, name, &m.mtype.clone()),
            (None, _) => Err(HandleError::NoSuchMethod(format!("{owner}.{name}"))),
            (Some(_), Some(_)) => Err(HandleError::NoSuchMethod(format!("{owner}.{name} is overloaded"))),
        }
    }
}
