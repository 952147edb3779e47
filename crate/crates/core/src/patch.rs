//! Call sites, their registry and the runtime patch operations.
//!
//! Every `invoke_dynamic` instruction owns one [`CallSite`], created by its
//! bootstrap on first execution (or by [`Engine::prelink`]). A site's target
//! is an atomically swappable handle; patch operations rebuild the handle
//! under the site's lock and publish it with a single store, so concurrent
//! invocations observe either the old or the new target, never a mix.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use arc_swap::ArcSwap;
use once_cell::sync::OnceCell;
use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use thiserror::Error;

use crate::handles::{Handle, HandleError, Lookup, MethodHandle};
use crate::interp::{Machine, Program, Trap, TrapKind};
use crate::isa::{InvocationKind, MethodRef, MethodType, TypeTag, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatchError {
    #[error("unknown invocation kind `{0}`")]
    UnknownKind(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("no call sites for key `{0}`")]
    UnknownKey(String),
    #[error("unknown target: {0}")]
    UnknownTarget(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("void return: {0}")]
    VoidReturn(String),
}

impl PatchError {
    /// Stable wire code of the error.
    pub fn code(&self) -> &'static str {
        match self {
            PatchError::UnknownKind(_) => "unknown_kind",
            PatchError::BadRequest(_) => "bad_request",
            PatchError::UnknownKey(_) => "unknown_key",
            PatchError::UnknownTarget(_) => "unknown_target",
            PatchError::TypeMismatch(_) => "type_mismatch",
            PatchError::VoidReturn(_) => "void_return",
        }
    }
}

impl From<HandleError> for PatchError {
    fn from(e: HandleError) -> Self {
        match e {
            HandleError::NoSuchMethod(m) => PatchError::UnknownTarget(m),
            HandleError::TypeMismatch(m) | HandleError::Arity(m) => PatchError::TypeMismatch(m),
            HandleError::VoidReturn(m) => PatchError::VoidReturn(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AdviceKind {
    Before,
    After,
}

#[derive(Clone)]
struct Advice {
    kind: AdviceKind,
    handle: Handle,
}

struct SiteState {
    base: Handle,
    advices: Vec<Advice>,
}

pub struct CallSite {
    id: u32,
    kind: InvocationKind,
    key: String,
    site_type: MethodType,
    location: String,
    target: ArcSwap<MethodHandle>,
    state: Mutex<SiteState>,
    invocations: AtomicU64,
}

impl CallSite {
    fn new(id: u32, kind: InvocationKind, key: String, site_type: MethodType, location: String, base: Handle) -> Self {
        CallSite {
            id,
            kind,
            key,
            site_type,
            location,
            target: ArcSwap::new(base.clone()),
            state: Mutex::new(SiteState {
                base,
                advices: Vec::new(),
            }),
            invocations: AtomicU64::new(0),
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn kind(&self) -> InvocationKind {
        self.kind
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn site_type(&self) -> &MethodType {
        &self.site_type
    }

    /// Current target; always of type `site_type()`.
    pub fn target(&self) -> Handle {
        self.target.load_full()
    }

    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::Relaxed)
    }

    pub fn advice_count(&self) -> usize {
        self.state.lock().advices.len()
    }

    pub fn invoke(&self, m: &mut Machine, args: Vec<Value>) -> Result<Value, Trap> {
        self.invocations.fetch_add(1, Ordering::Relaxed);
        let target = self.target.load_full();
        target.invoke_unchecked(m, args)
    }

    /// Rebuilds the target from the base and advice list, in application
    /// order: each new advice wraps everything applied before it. Equal in
    /// structure to `target()`.
    pub fn reconstruct(&self) -> Result<Handle, PatchError> {
        let state = self.state.lock();
        let mut h = state.base.clone();
        for a in &state.advices {
            h = match a.kind {
                AdviceKind::Before => before_adapter(&h, &a.handle)?,
                AdviceKind::After => after_adapter(&h, &a.handle)?,
            };
        }
        debug_assert_eq!(h.mtype(), &self.site_type);
        Ok(h)
    }

    /// Adds an advice on top of the current chain.
    pub fn add_advice(&self, kind: AdviceKind, advice: &Handle) -> Result<(), PatchError> {
        let mut state = self.state.lock();
        let wrapped = match kind {
            AdviceKind::Before => before_adapter(&self.target.load_full(), advice)?,
            AdviceKind::After => after_adapter(&self.target.load_full(), advice)?,
        };
        state.advices.push(Advice {
            kind,
            handle: advice.clone(),
        });
        self.target.store(wrapped);
        Ok(())
    }

    /// Drops all advices, restoring the base target.
    pub fn clear_advices(&self) -> usize {
        let mut state = self.state.lock();
        let n = state.advices.len();
        state.advices.clear();
        self.target.store(state.base.clone());
        n
    }

    /// Installs a new base target; advices are discarded.
    pub fn set_base(&self, base: Handle) -> Result<(), PatchError> {
        if base.mtype() != &self.site_type {
            return Err(PatchError::TypeMismatch(format!(
                "target {} does not fit site {}",
                base.mtype(),
                self.site_type
            )));
        }
        let mut state = self.state.lock();
        state.base = base.clone();
        state.advices.clear();
        self.target.store(base);
        Ok(())
    }

    /// Number of (Before, After) advices on this site.
    pub fn advice_counts(&self) -> (usize, usize) {
        let state = self.state.lock();
        let before = state.advices.iter().filter(|a| a.kind == AdviceKind::Before).count();
        (before, state.advices.len() - before)
    }

    /// Leaf method the un-adviced target calls.
    pub fn base_target(&self) -> String {
        self.state.lock().base.leaves().first().cloned().unwrap_or_default()
    }

    pub fn location(&self) -> &str {
        &self.location
    }
}

/// `spreader -> filterArguments(advice) -> collector -> asType(site)`:
/// the advice sees and may replace all arguments as one array.
pub fn before_adapter(target: &Handle, advice: &Handle) -> Result<Handle, PatchError> {
    let want = MethodType::new(vec![TypeTag::Arr], TypeTag::Arr);
    if advice.mtype() != &want {
        return Err(PatchError::TypeMismatch(format!(
            "before advice must have type {}, has {}",
            want.key_form(),
            advice.mtype().key_form()
        )));
    }
    let n = target.mtype().arity();
    let spread = MethodHandle::as_spreader(target, n)?;
    let filtered = MethodHandle::filter_arguments(&spread, 0, vec![Some(advice.clone())])?;
    let collected = MethodHandle::as_collector(&filtered, n)?;
    Ok(MethodHandle::as_type(&collected, target.mtype().clone())?)
}

/// `asType(ret -> O) -> filterReturnValue(advice) -> asType(site)`.
pub fn after_adapter(target: &Handle, advice: &Handle) -> Result<Handle, PatchError> {
    let site = target.mtype().clone();
    if site.ret.is_void() {
        return Err(PatchError::VoidReturn(format!(
            "call sites of type {} return nothing to advise",
            site.key_form()
        )));
    }
    let want = MethodType::new(vec![TypeTag::Obj], TypeTag::Obj);
    if advice.mtype() != &want {
        return Err(PatchError::TypeMismatch(format!(
            "after advice must have type {}, has {}",
            want.key_form(),
            advice.mtype().key_form()
        )));
    }
    let widened = MethodHandle::as_type(target, MethodType::new(site.params.clone(), TypeTag::Obj))?;
    let filtered = MethodHandle::filter_return_value(&widened, advice)?;
    Ok(MethodHandle::as_type(&filtered, site)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct AdviceSummary {
    pub before: usize,
    pub after: usize,
}

/// One registry entry: every site bootstrapped for a (kind, key) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SiteEntry {
    pub kind: String,
    pub key: String,
    pub site_type: String,
    pub site_count: usize,
    pub invocation_count: u64,
    /// Deepest advice stack among the entry's sites, by position.
    pub advices: AdviceSummary,
    /// Current base target of each site.
    pub targets: Vec<String>,
    pub locations: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Metrics {
    pub call_sites: u64,
    pub bootstraps: u64,
    pub retargets: u64,
    pub advices_applied: u64,
    pub total_invocations: u64,
}

type Registry = BTreeMap<(InvocationKind, String), Vec<Arc<CallSite>>>;

pub struct Engine {
    lookup: Lookup,
    slots: Vec<OnceCell<Arc<CallSite>>>,
    registry: RwLock<Registry>,
    bootstraps: AtomicU64,
    retargets: AtomicU64,
    advices_applied: AtomicU64,
}

impl Engine {
    pub fn new(program: Arc<Program>) -> Arc<Engine> {
        let slots = (0..program.indy_sites().len()).map(|_| OnceCell::new()).collect();
        Arc::new(Engine {
            lookup: Lookup::new(program),
            slots,
            registry: RwLock::new(BTreeMap::new()),
            bootstraps: AtomicU64::new(0),
            retargets: AtomicU64::new(0),
            advices_applied: AtomicU64::new(0),
        })
    }

    pub fn program(&self) -> &Arc<Program> {
        self.lookup.program()
    }

    pub fn lookup(&self) -> &Lookup {
        &self.lookup
    }

    fn bootstrap(&self, slot: u32) -> Result<Arc<CallSite>, Trap> {
        let program = self.program();
        let indy = &program.indy_sites()[slot as usize];
        let r = MethodRef::parse(&indy.name).map_err(|e| Trap::new(TrapKind::Bootstrap, e.to_string()))?;
        let handle = self
            .lookup
            .find(indy.kind, &r)
            .map_err(|e| Trap::new(TrapKind::Bootstrap, format!("{}: {e}", indy.name)))?;
        let owner = program.method(indy.method);
        let location = format!("{}.{}@{}", owner.owner, owner.name, indy.pc);
        let key = r.key_form();
        let site = Arc::new(CallSite::new(slot, indy.kind, key.clone(), indy.mtype.clone(), location, handle));
        self.bootstraps.fetch_add(1, Ordering::Relaxed);
        self.registry
            .write()
            .entry((indy.kind, key))
            .or_default()
            .push(site.clone());
        Ok(site)
    }

    /// The call site of `slot`, bootstrapping it on first use.
    pub fn site(&self, slot: u32) -> Result<Arc<CallSite>, Trap> {
        let cell = self
            .slots
            .get(slot as usize)
            .ok_or_else(|| Trap::new(TrapKind::Bootstrap, format!("no invoke_dynamic slot {slot}")))?;
        cell.get_or_try_init(|| self.bootstrap(slot)).cloned()
    }

    /// Bootstraps every slot up front so patch operations can reach sites
    /// that have not run yet. Returns how many sites are linked.
    pub fn prelink(&self) -> usize {
        (0..self.slots.len() as u32).filter(|s| self.site(*s).is_ok()).count()
    }

    pub fn invoke_slot(&self, m: &mut Machine, slot: u32, args: Vec<Value>) -> Result<Value, Trap> {
        debug_assert!(Arc::ptr_eq(m.program(), self.program()));
        self.site(slot)?.invoke(m, args)
    }

    /// Linked sites registered under `key` for any kind, in slot order.
    pub fn sites_for_key(&self, key: &str) -> Vec<Arc<CallSite>> {
        let mut out: Vec<Arc<CallSite>> = self
            .registry
            .read()
            .iter()
            .filter(|((_, k), _)| k == key)
            .flat_map(|(_, v)| v.iter().cloned())
            .collect();
        out.sort_by_key(|s| s.id);
        out
    }

    pub fn all_sites(&self) -> Vec<Arc<CallSite>> {
        let mut out: Vec<Arc<CallSite>> = self.registry.read().values().flatten().cloned().collect();
        out.sort_by_key(|s| s.id);
        out
    }

    fn canonical(key: &str) -> Result<MethodRef, PatchError> {
        MethodRef::parse(key).map_err(|e| PatchError::BadRequest(format!("bad key `{key}`: {e}")))
    }

    /// Finds a method by exact reference regardless of its kind.
    fn target_handle(&self, r: &MethodRef) -> Result<Handle, PatchError> {
        let program = self.program();
        let (_, info) = program
            .methods()
            .find(|(_, m)| m.owner == r.owner && m.name == r.name && m.mtype == r.mtype)
            .ok_or_else(|| PatchError::UnknownTarget(r.key_form()))?;
        Ok(self.lookup.find(info.kind, r)?)
    }

    /// Points every `kind` site for `old` at `new`. A static target whose
    /// type equals the site type without its receiver is accepted and the
    /// receiver is dropped. Returns the number of sites changed.
    pub fn change_call_site_target(&self, kind: &str, old: &str, new: &str) -> Result<usize, PatchError> {
        let kind: InvocationKind = kind.parse().map_err(|_| PatchError::UnknownKind(kind.to_string()))?;
        let old = Self::canonical(old)?.key_form();
        let new = Self::canonical(new)?;
        let sites = self
            .registry
            .read()
            .get(&(kind, old.clone()))
            .cloned()
            .unwrap_or_default();
        if sites.is_empty() {
            return Err(PatchError::UnknownKey(format!("{} {old}", kind.as_str())));
        }
        let target = self.target_handle(&new)?;
        let site_type = sites[0].site_type.clone();
        let adapted = if target.mtype() == &site_type {
            target
        } else if kind.has_receiver() && site_type.arity() > 0 && target.mtype() == &site_type.drop_receiver() {
            MethodHandle::drop_receiver(&target, site_type.params[0].clone())?
        } else {
            return Err(PatchError::TypeMismatch(format!(
                "target {} has type {}, site needs {}",
                new.key_form(),
                target.mtype().key_form(),
                site_type.key_form()
            )));
        };
        for s in &sites {
            s.set_base(adapted.clone())?;
        }
        self.retargets.fetch_add(sites.len() as u64, Ordering::Relaxed);
        Ok(sites.len())
    }

    fn advise(&self, kind: AdviceKind, key: &str, class: &str, method: &str) -> Result<usize, PatchError> {
        let key = Self::canonical(key)?.key_form();
        let sites = self.sites_for_key(&key);
        if sites.is_empty() {
            return Err(PatchError::UnknownKey(key));
        }
        if kind == AdviceKind::After {
            if let Some(s) = sites.iter().find(|s| s.site_type.ret.is_void()) {
                return Err(PatchError::VoidReturn(format!(
                    "call sites of type {} return nothing to advise",
                    s.site_type.key_form()
                )));
            }
        }
        let advice_type = match kind {
            AdviceKind::Before => MethodType::new(vec![TypeTag::Arr], TypeTag::Arr),
            AdviceKind::After => MethodType::new(vec![TypeTag::Obj], TypeTag::Obj),
        };
        let advice = match self.lookup.find_static(class, method, &advice_type) {
            Ok(h) => h,
            Err(_) => {
                let any = self.lookup.find_static_by_name(class, method);
                return Err(match any {
                    Ok(h) => PatchError::TypeMismatch(format!(
                        "{class}.{method} has type {}, advice needs {}",
                        h.mtype().key_form(),
                        advice_type.key_form()
                    )),
                    Err(_) => PatchError::UnknownTarget(format!("{class}.{method}")),
                });
            }
        };
        // Validate against every site before touching any.
        for s in &sites {
            match kind {
                AdviceKind::Before => before_adapter(&s.target(), &advice)?,
                AdviceKind::After => after_adapter(&s.target(), &advice)?,
            };
        }
        for s in &sites {
            s.add_advice(kind, &advice)?;
        }
        self.advices_applied.fetch_add(sites.len() as u64, Ordering::Relaxed);
        Ok(sites.len())
    }

    pub fn apply_before_aspect(&self, key: &str, class: &str, method: &str) -> Result<usize, PatchError> {
        self.advise(AdviceKind::Before, key, class, method)
    }

    pub fn apply_after_aspect(&self, key: &str, class: &str, method: &str) -> Result<usize, PatchError> {
        self.advise(AdviceKind::After, key, class, method)
    }

    /// Removes every advice from the sites of `key`; returns how many sites
    /// were reset.
    pub fn remove_aspects(&self, key: &str) -> Result<usize, PatchError> {
        let key = Self::canonical(key)?.key_form();
        let sites = self.sites_for_key(&key);
        if sites.is_empty() {
            return Err(PatchError::UnknownKey(key));
        }
        for s in &sites {
            s.clear_advices();
        }
        Ok(sites.len())
    }

    /// Snapshot of the registry, ordered by kind then key.
    pub fn list_call_sites(&self) -> Vec<SiteEntry> {
        let registry = self.registry.read();
        registry
            .iter()
            .map(|((kind, key), sites)| {
                let mut advices = AdviceSummary::default();
                for s in sites {
                    let (b, a) = s.advice_counts();
                    advices.before = advices.before.max(b);
                    advices.after = advices.after.max(a);
                }
                SiteEntry {
                    kind: kind.as_str().to_string(),
                    key: key.clone(),
                    site_type: sites[0].site_type.key_form(),
                    site_count: sites.len(),
                    invocation_count: sites.iter().map(|s| s.invocations()).sum(),
                    advices,
                    targets: sites.iter().map(|s| s.base_target()).collect(),
                    locations: sites.iter().map(|s| s.location.clone()).collect(),
                }
            })
            .collect()
    }

    pub fn metrics(&self) -> Metrics {
        let sites = self.all_sites();
        Metrics {
            call_sites: sites.len() as u64,
            bootstraps: self.bootstraps.load(Ordering::Relaxed),
            retargets: self.retargets.load(Ordering::Relaxed),
            advices_applied: self.advices_applied.load(Ordering::Relaxed),
            total_invocations: sites.iter().map(|s| s.invocations()).sum(),
        }
    }
}

/// A management operation, as issued by a script or the service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatchOp {
    Retarget {
        method_type: String,
        old_target: String,
        new_target: String,
    },
    Before {
        key: String,
        class: String,
        method: String,
    },
    After {
        key: String,
        class: String,
        method: String,
    },
    Remove {
        key: String,
    },
}

impl PatchOp {
    /// Applies the operation; returns the affected site count.
    pub fn apply(&self, engine: &Engine) -> Result<usize, PatchError> {
        match self {
            PatchOp::Retarget {
                method_type,
                old_target,
                new_target,
            } => engine.change_call_site_target(method_type, old_target, new_target),
            PatchOp::Before { key, class, method } => engine.apply_before_aspect(key, class, method),
            PatchOp::After { key, class, method } => engine.apply_after_aspect(key, class, method),
            PatchOp::Remove { key } => engine.remove_aspects(key),
        }
    }
}
