//! Line-oriented textual assembly (`.fas`) and its inverse.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use super::module::{ClassDef, Constant, FunctionDef, Instruction, Module};
use super::types::{is_identifier, InvocationKind, MethodRef, MethodType, TypeTag};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub col: usize,
    pub kind: AsmErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown opcode `{0}`")]
    UnknownOpcode(String),
    #[error("duplicate method {class}.{name}:{mtype} ({kind})")]
    DuplicateMethod {
        class: String,
        name: String,
        mtype: MethodType,
        kind: InvocationKind,
    },
    #[error("duplicate class `{0}`")]
    DuplicateClass(String),
    #[error("undefined label `{0}`")]
    UnknownLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
}

#[derive(Debug)]
struct Token {
    text: String,
    col: usize,
    quoted: bool,
}

fn tokenize(line: &str, lineno: usize) -> Result<Vec<Token>, AsmError> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = line.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (_, c) = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c == ';' {
            break;
        } else if c == '"' {
            let mut text = String::new();
            i += 1;
            loop {
                let Some(&(_, c)) = chars.get(i) else {
                    return Err(AsmError {
                        line: lineno,
                        col,
                        kind: AsmErrorKind::Syntax("unterminated string literal".into()),
                    });
                };
                i += 1;
                match c {
                    '"' => break,
                    '\\' => {
                        let esc = chars.get(i).map(|&(_, c)| c);
                        i += 1;
                        text.push(match esc {
                            Some('n') => '\n',
                            Some('t') => '\t',
                            Some('"') => '"',
                            Some('\\') => '\\',
                            _ => {
                                return Err(AsmError {
                                    line: lineno,
                                    col: i,
                                    kind: AsmErrorKind::Syntax("bad escape".into()),
                                })
                            }
                        });
                    }
                    c => text.push(c),
                }
            }
            out.push(Token {
                text,
                col,
                quoted: true,
            });
        } else {
            let start = i;
            while i < chars.len() && !chars[i].1.is_whitespace() {
                i += 1;
            }
            let text: String = chars[start..i].iter().map(|&(_, c)| c).collect();
            out.push(Token {
                text,
                col,
                quoted: false,
            });
        }
    }
    Ok(out)
}

struct PendingMethod {
    def: FunctionDef,
    line: usize,
    col: usize,
    labels: HashMap<String, u32>,
    fixups: Vec<(usize, String, usize, usize)>,
}

struct Assembler {
    module: Module,
    method: Option<PendingMethod>,
}

fn err(line: usize, col: usize, kind: AsmErrorKind) -> AsmError {
    AsmError { line, col, kind }
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> AsmError {
    err(line, col, AsmErrorKind::Syntax(msg.into()))
}

impl Assembler {
    fn finish_method(&mut self) -> Result<(), AsmError> {
        let Some(mut pending) = self.method.take() else {
            return Ok(());
        };
        for (pc, label, line, col) in pending.fixups.drain(..) {
            let target = *pending
                .labels
                .get(&label)
                .ok_or_else(|| err(line, col, AsmErrorKind::UnknownLabel(label.clone())))?;
            match &mut pending.def.code[pc] {
                Instruction::Jump(t) | Instruction::JumpIfFalse(t) => *t = target,
                _ => unreachable!("fixup on non-branch"),
            }
        }
        let class = self
            .module
            .classes
            .last_mut()
            .expect("method outside class is rejected at parse time");
        let def = pending.def;
        if class
            .methods
            .iter()
            .any(|m| m.name == def.name && m.mtype == def.mtype && m.kind == def.kind)
        {
            return Err(err(
                pending.line,
                pending.col,
                AsmErrorKind::DuplicateMethod {
                    class: class.name.clone(),
                    name: def.name,
                    mtype: def.mtype,
                    kind: def.kind,
                },
            ));
        }
        class.methods.push(def);
        Ok(())
    }

    fn line(&mut self, lineno: usize, toks: &[Token]) -> Result<(), AsmError> {
        let head = &toks[0];
        let rest = &toks[1..];
        match head.text.as_str() {
            "entry" => {
                self.finish_method()?;
                let [target] = rest else {
                    return Err(syntax(lineno, head.col, "expected `entry Class.method`"));
                };
                let (c, m) = target
                    .text
                    .rsplit_once('.')
                    .filter(|(c, m)| is_identifier(c) && is_identifier(m))
                    .ok_or_else(|| syntax(lineno, target.col, "expected `Class.method`"))?;
                self.module.entry = Some((c.to_string(), m.to_string()));
            }
            "class" => {
                self.finish_method()?;
                self.class_header(lineno, head, rest)?;
            }
            "field" => {
                if self.method.is_some() || self.module.classes.is_empty() {
                    return Err(syntax(lineno, head.col, "field outside class header"));
                }
                let [name, ty] = rest else {
                    return Err(syntax(lineno, head.col, "expected `field <name> <type>`"));
                };
                if !is_identifier(&name.text) {
                    return Err(syntax(lineno, name.col, "bad field name"));
                }
                let tag = parse_type(&ty.text).ok_or_else(|| syntax(lineno, ty.col, "bad type"))?;
                if tag.is_void() {
                    return Err(syntax(lineno, ty.col, "field cannot be void"));
                }
                let class = self.module.classes.last_mut().unwrap();
                class.fields.push((name.text.clone(), tag));
            }
            "method" => {
                self.finish_method()?;
                self.method_header(lineno, head, rest)?;
            }
            label if label.ends_with(':') && rest.is_empty() && !head.quoted => {
                let name = &label[..label.len() - 1];
                let Some(m) = self.method.as_mut() else {
                    return Err(syntax(lineno, head.col, "label outside method"));
                };
                if !is_identifier(name) {
                    return Err(syntax(lineno, head.col, "bad label"));
                }
                let pc = m.def.code.len() as u32;
                if m.labels.insert(name.to_string(), pc).is_some() {
                    return Err(err(lineno, head.col, AsmErrorKind::DuplicateLabel(name.into())));
                }
            }
            _ => self.instruction(lineno, head, rest)?,
        }
        Ok(())
    }

    fn class_header(&mut self, lineno: usize, head: &Token, rest: &[Token]) -> Result<(), AsmError> {
        let mut it = rest.iter();
        let name = it
            .next()
            .filter(|t| is_identifier(&t.text))
            .ok_or_else(|| syntax(lineno, head.col, "expected class name"))?;
        if self.module.classes.iter().any(|c| c.name == name.text) {
            return Err(err(lineno, name.col, AsmErrorKind::DuplicateClass(name.text.clone())));
        }
        let mut class = ClassDef::new(&name.text);
        while let Some(kw) = it.next() {
            let arg = it
                .next()
                .ok_or_else(|| syntax(lineno, kw.col, format!("`{}` needs an argument", kw.text)))?;
            match kw.text.as_str() {
                "extends" if class.superclass.is_none() && is_identifier(&arg.text) => {
                    class.superclass = Some(arg.text.clone());
                }
                "implements" => {
                    for iface in arg.text.split(',').filter(|s| !s.is_empty()) {
                        if !is_identifier(iface) {
                            return Err(syntax(lineno, arg.col, "bad interface name"));
                        }
                        class.interfaces.push(iface.to_string());
                    }
                }
                _ => return Err(syntax(lineno, kw.col, format!("unexpected `{}`", kw.text))),
            }
        }
        self.module.classes.push(class);
        Ok(())
    }

    fn method_header(&mut self, lineno: usize, head: &Token, rest: &[Token]) -> Result<(), AsmError> {
        let Some(class) = self.module.classes.last() else {
            return Err(syntax(lineno, head.col, "method outside class"));
        };
        let [kind, name, ty, locals] = rest else {
            return Err(syntax(
                lineno,
                head.col,
                "expected `method <kind> <name> (<types>)<ret> locals=<n>`",
            ));
        };
        let kind_v: InvocationKind = kind
            .text
            .parse()
            .map_err(|_| syntax(lineno, kind.col, "bad method kind"))?;
        if !is_identifier(&name.text) {
            return Err(syntax(lineno, name.col, "bad method name"));
        }
        let mtype = MethodType::parse(&ty.text).map_err(|e| syntax(lineno, ty.col, e.to_string()))?;
        let n = locals
            .text
            .strip_prefix("locals=")
            .and_then(|n| n.parse::<u16>().ok())
            .ok_or_else(|| syntax(lineno, locals.col, "expected `locals=<n>`"))?;
        self.method = Some(PendingMethod {
            def: FunctionDef {
                owner: class.name.clone(),
                name: name.text.clone(),
                mtype,
                kind: kind_v,
                code: Vec::new(),
                locals: n,
            },
            line: lineno,
            col: head.col,
            labels: HashMap::new(),
            fixups: Vec::new(),
        });
        Ok(())
    }

    fn instruction(&mut self, lineno: usize, head: &Token, rest: &[Token]) -> Result<(), AsmError> {
        if self.method.is_none() {
            if is_mnemonic(&head.text) {
                return Err(syntax(lineno, head.col, "instruction outside method"));
            }
            return Err(err(lineno, head.col, AsmErrorKind::UnknownOpcode(head.text.clone())));
        }
        let arity = |n: usize| -> Result<(), AsmError> {
            if rest.len() == n {
                Ok(())
            } else {
                Err(syntax(
                    lineno,
                    head.col,
                    format!("`{}` takes {n} operand(s), got {}", head.text, rest.len()),
                ))
            }
        };
        let slot = |t: &Token| -> Result<u16, AsmError> {
            t.text
                .parse()
                .map_err(|_| syntax(lineno, t.col, "expected a slot number"))
        };
        let ident = |t: &Token| -> Result<String, AsmError> {
            if is_identifier(&t.text) {
                Ok(t.text.clone())
            } else {
                Err(syntax(lineno, t.col, "expected an identifier"))
            }
        };
        let field_ref = |rest: &[Token]| -> Result<(String, String), AsmError> {
            match rest {
                [c, f] => Ok((ident(c)?, ident(f)?)),
                [cf] => {
                    let (c, f) = cf
                        .text
                        .rsplit_once('.')
                        .ok_or_else(|| syntax(lineno, cf.col, "expected `Class field`"))?;
                    if is_identifier(c) && is_identifier(f) {
                        Ok((c.into(), f.into()))
                    } else {
                        Err(syntax(lineno, cf.col, "expected `Class field`"))
                    }
                }
                _ => Err(syntax(lineno, head.col, "expected `Class field`")),
            }
        };
        let mut branch = None;
        let insn = match head.text.as_str() {
            "push_const" => {
                arity(1)?;
                let t = &rest[0];
                let c = if t.quoted {
                    Constant::Str(t.text.clone())
                } else {
                    Constant::Int(
                        t.text
                            .parse()
                            .map_err(|_| syntax(lineno, t.col, "expected integer or string literal"))?,
                    )
                };
                Instruction::PushConst(self.module.intern(c))
            }
            "load" => {
                arity(1)?;
                Instruction::Load(slot(&rest[0])?)
            }
            "store" => {
                arity(1)?;
                Instruction::Store(slot(&rest[0])?)
            }
            "add" | "sub" | "mul" | "lt" | "eq" | "pop" | "dup" | "print" | "ret" => {
                arity(0)?;
                match head.text.as_str() {
                    "add" => Instruction::Add,
                    "sub" => Instruction::Sub,
                    "mul" => Instruction::Mul,
                    "lt" => Instruction::Lt,
                    "eq" => Instruction::Eq,
                    "pop" => Instruction::Pop,
                    "dup" => Instruction::Dup,
                    "print" => Instruction::Print,
                    _ => Instruction::Ret,
                }
            }
            "jump" | "jump_if_false" => {
                arity(1)?;
                let t = &rest[0];
                let target = match t.text.parse::<u32>() {
                    Ok(n) => n,
                    Err(_) => {
                        if !is_identifier(&t.text) {
                            return Err(syntax(lineno, t.col, "expected label or index"));
                        }
                        branch = Some((t.text.clone(), t.col));
                        0
                    }
                };
                if head.text == "jump" {
                    Instruction::Jump(target)
                } else {
                    Instruction::JumpIfFalse(target)
                }
            }
            "new" => {
                arity(1)?;
                Instruction::New(ident(&rest[0])?)
            }
            "get_field" | "put_field" | "get_static" | "put_static" => {
                let (class, field) = field_ref(rest)?;
                match head.text.as_str() {
                    "get_field" => Instruction::GetField { class, field },
                    "put_field" => Instruction::PutField { class, field },
                    "get_static" => Instruction::GetStatic { class, field },
                    _ => Instruction::PutStatic { class, field },
                }
            }
            "invoke_static" | "invoke_virtual" | "invoke_special" | "invoke_interface" => {
                arity(1)?;
                let kind = InvocationKind::ALL
                    .into_iter()
                    .find(|k| k.mnemonic() == head.text)
                    .unwrap();
                let r = MethodRef::parse(&rest[0].text)
                    .map_err(|e| syntax(lineno, rest[0].col, e.to_string()))?;
                Instruction::Invoke {
                    kind,
                    mref: self.module.intern(Constant::Method(r)),
                }
            }
            "invoke_dynamic" => {
                arity(3)?;
                let mtype = MethodType::parse(&rest[1].text)
                    .map_err(|e| syntax(lineno, rest[1].col, e.to_string()))?;
                let bootstrap = rest[2]
                    .text
                    .parse()
                    .map_err(|_| syntax(lineno, rest[2].col, "bad bootstrap tag"))?;
                Instruction::InvokeDynamic {
                    name: rest[0].text.clone(),
                    mtype,
                    bootstrap,
                }
            }
            other => {
                return Err(err(lineno, head.col, AsmErrorKind::UnknownOpcode(other.to_string())))
            }
        };
        let m = self.method.as_mut().unwrap();
        if let Some((label, col)) = branch {
            m.fixups.push((m.def.code.len(), label, lineno, col));
        }
        m.def.code.push(insn);
        Ok(())
    }
}

fn is_mnemonic(s: &str) -> bool {
    matches!(
        s,
        "push_const"
            | "load"
            | "store"
            | "add"
            | "sub"
            | "mul"
            | "lt"
            | "eq"
            | "pop"
            | "dup"
            | "jump"
            | "jump_if_false"
            | "new"
            | "get_field"
            | "put_field"
            | "get_static"
            | "put_static"
            | "print"
            | "ret"
            | "invoke_static"
            | "invoke_virtual"
            | "invoke_special"
            | "invoke_interface"
            | "invoke_dynamic"
    )
}

fn parse_type(s: &str) -> Option<TypeTag> {
    MethodType::parse(&format!("(){s}")).ok().map(|t| t.ret)
}

/// Assembles `.fas` source into a module with a first-use ordered pool.
pub fn assemble(text: &str) -> Result<Module, AsmError> {
    let mut asm = Assembler {
        module: Module::default(),
        method: None,
    };
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let toks = tokenize(raw, lineno)?;
        if toks.is_empty() {
            continue;
        }
        asm.line(lineno, &toks)?;
    }
    asm.finish_method()?;
    asm.module.canonicalize_pool();
    Ok(asm.module)
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Renders a module back to assembly. Branch targets become `L<pc>` labels.
pub fn disassemble(m: &Module) -> String {
    let mut out = String::new();
    if let Some((c, f)) = &m.entry {
        let _ = writeln!(out, "entry {c}.{f}\n");
    }
    for class in &m.classes {
        let _ = write!(out, "class {}", class.name);
        if let Some(s) = &class.superclass {
            let _ = write!(out, " extends {s}");
        }
        if !class.interfaces.is_empty() {
            let _ = write!(out, " implements {}", class.interfaces.join(","));
        }
        out.push('\n');
        for (name, ty) in &class.fields {
            let _ = writeln!(out, "  field {name} {ty}");
        }
        for f in &class.methods {
            let _ = writeln!(
                out,
                "  method {} {} {} locals={}",
                f.kind, f.name, f.mtype, f.locals
            );
            let targets: BTreeSet<u32> = f.code.iter().filter_map(Instruction::branch_target).collect();
            for (pc, insn) in f.code.iter().enumerate() {
                if targets.contains(&(pc as u32)) {
                    let _ = writeln!(out, "  L{pc}:");
                }
                let _ = writeln!(out, "    {}", render_insn(m, insn));
            }
        }
        out.push('\n');
    }
    out
}

fn render_insn(m: &Module, insn: &Instruction) -> String {
    let op = insn.mnemonic();
    match insn {
        Instruction::PushConst(i) => match m.constants.get(*i as usize) {
            Some(Constant::Int(v)) => format!("{op} {v}"),
            Some(Constant::Str(s)) => format!("{op} {}", quote(s)),
            _ => format!("{op} ?{i}"),
        },
        Instruction::Load(s) | Instruction::Store(s) => format!("{op} {s}"),
        Instruction::Jump(t) | Instruction::JumpIfFalse(t) => format!("{op} L{t}"),
        Instruction::New(c) => format!("{op} {c}"),
        Instruction::GetField { class, field }
        | Instruction::PutField { class, field }
        | Instruction::GetStatic { class, field }
        | Instruction::PutStatic { class, field } => format!("{op} {class} {field}"),
        Instruction::Invoke { mref, .. } => match m.method_ref(*mref) {
            Some(r) => format!("{op} {r}"),
            None => format!("{op} ?{mref}"),
        },
        Instruction::InvokeDynamic {
            name,
            mtype,
            bootstrap,
        } => format!("{op} {name} {mtype} {bootstrap}"),
        _ => op.to_string(),
    }
}
