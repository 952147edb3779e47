//! Load-time rewriting of classic invocations into `invoke_dynamic`.
//!
//! Each `invoke_<kind> R` becomes `invoke_dynamic <key(R)> <type(R)> <kind>`
//! in place, so instruction indices and branch targets are unchanged.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::isa::{assemble, AsmError, Instruction, InvocationKind, MethodRef, Module, RefParseError};

/// Renders the call-site key of a reference: `Owner.name:(params)ret`.
pub fn call_site_key(r: &MethodRef) -> String {
    r.key_form()
}

/// Parses a call-site key back into its reference. Also accepts descriptor
/// spellings, which normalize to the same key.
pub fn parse_call_site_key(key: &str) -> Result<MethodRef, RefParseError> {
    MethodRef::parse(key)
}

/// Canonical form of a user-supplied key.
pub fn canonical_key(key: &str) -> Result<String, RefParseError> {
    parse_call_site_key(key).map(|r| r.key_form())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SitesRewritten {
    #[serde(rename = "static")]
    pub static_: usize,
    #[serde(rename = "virtual")]
    pub virtual_: usize,
    pub special: usize,
    pub interface: usize,
}

impl SitesRewritten {
    pub fn total(&self) -> usize {
        self.static_ + self.virtual_ + self.special + self.interface
    }

    fn bump(&mut self, kind: InvocationKind) {
        match kind {
            InvocationKind::Static => self.static_ += 1,
            InvocationKind::Virtual => self.virtual_ += 1,
            InvocationKind::Special => self.special += 1,
            InvocationKind::Interface => self.interface += 1,
        }
    }

    pub fn get(&self, kind: InvocationKind) -> usize {
        match kind {
            InvocationKind::Static => self.static_,
            InvocationKind::Virtual => self.virtual_,
            InvocationKind::Special => self.special,
            InvocationKind::Interface => self.interface,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TransformReport {
    pub classes_transformed: usize,
    pub methods_transformed: usize,
    pub sites_rewritten: SitesRewritten,
    #[serde(rename = "elapsedMs", serialize_with = "as_millis")]
    pub elapsed: Duration,
}

fn as_millis<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1000.0)
}

/// Rewrites every classic invocation in `module`. Running it on an already
/// transformed module changes nothing and reports zero sites.
pub fn transform_module(mut module: Module) -> (Module, TransformReport) {
    let start = Instant::now();
    let mut report = TransformReport::default();
    let constants = module.constants.clone();
    for class in &mut module.classes {
        let mut touched = false;
        for method in &mut class.methods {
            let mut rewritten = 0;
            for insn in &mut method.code {
                let Instruction::Invoke { kind, mref } = insn else { continue };
                let Some(crate::isa::Constant::Method(r)) = constants.get(*mref as usize) else {
                    continue;
                };
                let kind = *kind;
                *insn = Instruction::InvokeDynamic {
                    name: call_site_key(r),
                    mtype: r.mtype.clone(),
                    bootstrap: kind,
                };
                report.sites_rewritten.bump(kind);
                rewritten += 1;
            }
            if rewritten > 0 {
                report.methods_transformed += 1;
                touched = true;
            }
        }
        if touched {
            report.classes_transformed += 1;
        }
    }
    module.canonicalize_pool();
    report.elapsed = start.elapsed();
    (module, report)
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{source}")]
    Asm {
        path: String,
        #[source]
        source: AsmError,
    },
}

/// Reads and assembles a module from disk.
pub fn load(path: &Path) -> Result<Module, LoadError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: display.clone(),
        source,
    })?;
    assemble(&text).map_err(|source| LoadError::Asm { path: display, source })
}

/// Loads a module and transforms it before anything else can see it.
pub fn transform_at_load(path: &Path) -> Result<(Module, TransformReport), LoadError> {
    load(path).map(transform_module)
}
