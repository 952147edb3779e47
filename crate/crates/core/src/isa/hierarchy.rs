use std::collections::{HashMap, HashSet, VecDeque};

use thiserror::Error;

use super::builtins;
use super::module::{ClassDef, FunctionDef, Module};
use super::types::{InvocationKind, MethodRef, MethodType, TypeTag};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("`{reference}` does not match declared type {declared}")]
    Mismatch {
        reference: String,
        declared: MethodType,
    },
}

/// Name-indexed view over a module's classes plus the runtime library.
pub struct ClassTable<'a> {
    classes: HashMap<&'a str, &'a ClassDef>,
}

impl<'a> ClassTable<'a> {
    pub fn new(module: &'a Module) -> Self {
        let mut classes = HashMap::new();
        for c in builtins::classes() {
            classes.insert(c.name.as_str(), c);
        }
        for c in &module.classes {
            classes.entry(c.name.as_str()).or_insert(c);
        }
        ClassTable { classes }
    }

    pub fn get(&self, name: &str) -> Option<&'a ClassDef> {
        self.classes.get(name).copied()
    }

    /// `name` followed by its superclasses. Stops early on a cycle or a
    /// missing superclass.
    pub fn superchain(&self, name: &str) -> Vec<&'a ClassDef> {
        let mut out: Vec<&'a ClassDef> = Vec::new();
        let mut cur = self.get(name);
        while let Some(c) = cur {
            if out.iter().any(|seen| seen.name == c.name) {
                break;
            }
            out.push(c);
            cur = c.superclass.as_deref().and_then(|s| self.get(s));
        }
        out
    }

    /// All supertypes of `name` including itself: superclasses and,
    /// transitively, their interfaces.
    pub fn supertypes(&self, name: &str) -> HashSet<&'a str> {
        let mut seen = HashSet::new();
        let mut queue: VecDeque<&'a ClassDef> = self.get(name).into_iter().collect();
        while let Some(c) = queue.pop_front() {
            if !seen.insert(c.name.as_str()) {
                continue;
            }
            let parents = c.superclass.iter().chain(c.interfaces.iter());
            queue.extend(parents.filter_map(|p| self.get(p)));
        }
        seen
    }

    pub fn is_subtype(&self, sub: &str, sup: &str) -> bool {
        sub == sup || self.supertypes(sub).contains(sup)
    }

    /// Whether a parameter of type `tag` can hold a receiver of class `owner`.
    pub fn accepts_receiver(&self, tag: &TypeTag, owner: &str) -> bool {
        match tag {
            TypeTag::Obj => true,
            TypeTag::Str => owner == builtins::STR,
            TypeTag::Arr => owner == builtins::ARR,
            TypeTag::Class(c) => self.is_subtype(owner, c),
            _ => false,
        }
    }

    /// Nearest instance method in `class`'s superclass chain whose name and
    /// non-receiver signature match, falling back to interface bodies.
    /// Abstract declarations are skipped unless `allow_abstract`.
    pub fn find_override(
        &self,
        class: &str,
        name: &str,
        tail: &MethodType,
        allow_abstract: bool,
    ) -> Option<&'a FunctionDef> {
        let matches = |f: &&FunctionDef| {
            f.name == name
                && matches!(f.kind, InvocationKind::Virtual | InvocationKind::Interface)
                && f.mtype.returns_value() == tail.returns_value()
                && f.mtype.ret == tail.ret
                && f.mtype.params.len() == tail.params.len() + 1
                && f.mtype.params[1..] == tail.params[..]
                && (allow_abstract || !f.is_abstract())
        };
        let chain = self.superchain(class);
        if let Some(f) = chain.iter().find_map(|c| c.methods.iter().find(matches)) {
            return Some(f);
        }
        let mut seen = HashSet::new();
        let mut queue: VecDeque<&str> = chain
            .iter()
            .flat_map(|c| c.interfaces.iter().map(String::as_str))
            .collect();
        while let Some(i) = queue.pop_front() {
            if !seen.insert(i) {
                continue;
            }
            let Some(iface) = self.get(i) else { continue };
            if let Some(f) = iface.methods.iter().find(matches) {
                return Some(f);
            }
            queue.extend(iface.interfaces.iter().map(String::as_str));
        }
        None
    }

    /// The static binding step shared by the verifier, handle lookup and
    /// bootstrap: finds the declaration a reference of `kind` names.
    pub fn resolve(&self, kind: InvocationKind, r: &MethodRef) -> Result<&'a FunctionDef, ResolveError> {
        let owner = self
            .get(&r.owner)
            .ok_or_else(|| ResolveError::UnknownClass(r.owner.clone()))?;
        let unknown = || ResolveError::UnknownMethod(r.to_string());
        let mismatch_or_unknown = |candidates: &mut dyn Iterator<Item = &'a FunctionDef>| {
            match candidates.next() {
                Some(f) => ResolveError::Mismatch {
                    reference: r.to_string(),
                    declared: f.mtype.clone(),
                },
                None => unknown(),
            }
        };
        match kind {
            InvocationKind::Static => owner
                .methods
                .iter()
                .find(|f| f.kind == InvocationKind::Static && f.name == r.name && f.mtype == r.mtype)
                .ok_or_else(|| {
                    mismatch_or_unknown(
                        &mut owner.methods.iter().filter(|f| f.name == r.name),
                    )
                }),
            InvocationKind::Special => self
                .superchain(&r.owner)
                .into_iter()
                .find_map(|c| {
                    c.methods.iter().find(|f| {
                        f.kind != InvocationKind::Static && f.name == r.name && f.mtype == r.mtype
                    })
                })
                .ok_or_else(|| {
                    mismatch_or_unknown(
                        &mut owner.methods.iter().filter(|f| f.name == r.name),
                    )
                }),
            InvocationKind::Virtual | InvocationKind::Interface => {
                let Some(receiver) = r.mtype.params.first() else {
                    return Err(unknown());
                };
                let tail = r.mtype.drop_receiver();
                let found = self
                    .find_override(&r.owner, &r.name, &tail, true)
                    .ok_or_else(|| {
                        mismatch_or_unknown(&mut owner.methods.iter().filter(|f| f.name == r.name))
                    })?;
                if !self.accepts_receiver(receiver, &r.owner) {
                    return Err(ResolveError::Mismatch {
                        reference: r.to_string(),
                        declared: found.mtype.clone(),
                    });
                }
                Ok(found)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::assemble;

    const SRC: &str = r#"
class P
  method virtual greet (LP;)S locals=1
    push_const "a"
    ret
class B extends P
  method virtual greet (LB;)S locals=1
    push_const "b"
    ret
class C extends B
"#;

    #[test]
    fn override_search_finds_nearest() {
        let m = assemble(SRC).unwrap();
        let t = ClassTable::new(&m);
        let tail = MethodType::parse("()S").unwrap();
        assert_eq!(t.find_override("C", "greet", &tail, false).unwrap().owner, "B");
        assert_eq!(t.find_override("P", "greet", &tail, false).unwrap().owner, "P");
        assert!(t.is_subtype("C", "P"));
        assert!(!t.is_subtype("P", "C"));
    }

    #[test]
    fn resolves_builtins() {
        let m = Module::default();
        let t = ClassTable::new(&m);
        let r = MethodRef::parse("Str.replace_all:(OSS)S").unwrap();
        assert!(t.resolve(InvocationKind::Virtual, &r).is_ok());
        let bad = MethodRef::parse("Arr.sum:(I)I").unwrap();
        assert!(matches!(
            t.resolve(InvocationKind::Static, &bad),
            Err(ResolveError::Mismatch { .. })
        ));
    }
}
