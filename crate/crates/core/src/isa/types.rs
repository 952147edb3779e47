use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

/// Static type of a parameter, return slot, or field.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TypeTag {
    Int,
    Str,
    Bool,
    /// Top reference type. Every value widens to it.
    Obj,
    Arr,
    Void,
    Class(String),
}

impl TypeTag {
    /// Assembly spelling: `I`, `S`, `Z`, `O`, `A`, `V`, `L<Name>;`.
    pub fn descriptor(&self) -> String {
        match self {
            TypeTag::Int => "I".into(),
            TypeTag::Str => "S".into(),
            TypeTag::Bool => "Z".into(),
            TypeTag::Obj => "O".into(),
            TypeTag::Arr => "A".into(),
            TypeTag::Void => "V".into(),
            TypeTag::Class(name) => format!("L{name};"),
        }
    }

    /// Call-site key spelling: primitive letters, bare class names, `void`.
    pub fn key_form(&self) -> String {
        match self {
            TypeTag::Void => "void".into(),
            TypeTag::Class(name) => name.clone(),
            other => other.descriptor(),
        }
    }

    pub fn is_void(&self) -> bool {
        matches!(self, TypeTag::Void)
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptor())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed type `{text}`: {reason}")]
pub struct TypeParseError {
    pub text: String,
    pub reason: &'static str,
}

fn type_err(text: &str, reason: &'static str) -> TypeParseError {
    TypeParseError {
        text: text.to_string(),
        reason,
    }
}

/// True when `s` reads entirely as a sequence of descriptor letters. Class
/// names of that shape would make call-site keys ambiguous.
pub fn is_descriptor_sequence(s: &str) -> bool {
    parse_descriptor_sequence(s).is_some()
}

fn parse_descriptor_sequence(s: &str) -> Option<Vec<TypeTag>> {
    let mut out = Vec::new();
    let mut rest = s;
    while let Some(c) = rest.chars().next() {
        let tag = match c {
            'I' => TypeTag::Int,
            'S' => TypeTag::Str,
            'Z' => TypeTag::Bool,
            'O' => TypeTag::Obj,
            'A' => TypeTag::Arr,
            'V' => TypeTag::Void,
            'L' => {
                let end = rest.find(';')?;
                let name = &rest[1..end];
                if !is_identifier(name) {
                    return None;
                }
                rest = &rest[end + 1..];
                out.push(TypeTag::Class(name.to_string()));
                continue;
            }
            _ => return None,
        };
        rest = &rest[1..];
        out.push(tag);
    }
    Some(out)
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' || c == '<' || c == '$' => {}
        _ => return false,
    }
    chars.all(|c| c.is_alphanumeric() || matches!(c, '_' | '<' | '>' | '$' | '/'))
}

fn parse_single(tok: &str) -> Result<TypeTag, TypeParseError> {
    let tok = tok.trim();
    Ok(match tok {
        "I" => TypeTag::Int,
        "S" => TypeTag::Str,
        "Z" => TypeTag::Bool,
        "O" => TypeTag::Obj,
        "A" => TypeTag::Arr,
        "V" | "void" => TypeTag::Void,
        _ if tok.starts_with('L') && tok.ends_with(';') && tok.len() > 2 => {
            let name = &tok[1..tok.len() - 1];
            if !is_identifier(name) {
                return Err(type_err(tok, "bad class name"));
            }
            TypeTag::Class(name.to_string())
        }
        _ if is_identifier(tok) => TypeTag::Class(tok.to_string()),
        _ => return Err(type_err(tok, "unknown type")),
    })
}

fn parse_type_list(inner: &str) -> Result<Vec<TypeTag>, TypeParseError> {
    let inner = inner.trim();
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    if inner.contains(',') {
        return inner.split(',').map(parse_single).collect();
    }
    match parse_descriptor_sequence(inner) {
        Some(tags) => Ok(tags),
        None => Ok(vec![parse_single(inner)?]),
    }
}

/// Parameter and return types of an invocation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MethodType {
    pub params: Vec<TypeTag>,
    pub ret: TypeTag,
}

impl MethodType {
    pub fn new(params: Vec<TypeTag>, ret: TypeTag) -> Self {
        MethodType { params, ret }
    }

    /// Accepts descriptor (`(LFoo;I)V`), comma-separated (`(I,I)I`) and key
    /// (`(Foo)void`) spellings.
    pub fn parse(text: &str) -> Result<Self, TypeParseError> {
        let text = text.trim();
        if !text.starts_with('(') {
            return Err(type_err(text, "expected `(`"));
        }
        let close = text.find(')').ok_or_else(|| type_err(text, "missing `)`"))?;
        let params = parse_type_list(&text[1..close])?;
        if params.iter().any(TypeTag::is_void) {
            return Err(type_err(text, "void is only legal as a return type"));
        }
        let ret_text = &text[close + 1..];
        if ret_text.is_empty() {
            return Err(type_err(text, "missing return type"));
        }
        let ret = parse_single(ret_text)?;
        Ok(MethodType { params, ret })
    }

    pub fn descriptor(&self) -> String {
        let params: String = self.params.iter().map(TypeTag::descriptor).collect();
        format!("({params}){}", self.ret.descriptor())
    }

    pub fn key_form(&self) -> String {
        let params: Vec<String> = self.params.iter().map(TypeTag::key_form).collect();
        format!("({}){}", params.join(","), self.ret.key_form())
    }

    /// The same type without its first parameter (the receiver slot).
    pub fn drop_receiver(&self) -> MethodType {
        MethodType {
            params: self.params.iter().skip(1).cloned().collect(),
            ret: self.ret.clone(),
        }
    }

    pub fn arity(&self) -> usize {
        self.params.len()
    }

    pub fn returns_value(&self) -> bool {
        !self.ret.is_void()
    }
}

impl fmt::Display for MethodType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptor())
    }
}

impl FromStr for MethodType {
    type Err = TypeParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodType::parse(s)
    }
}

/// The four classic dispatch modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InvocationKind {
    Static,
    Virtual,
    Special,
    Interface,
}

impl InvocationKind {
    pub const ALL: [InvocationKind; 4] = [
        InvocationKind::Static,
        InvocationKind::Virtual,
        InvocationKind::Special,
        InvocationKind::Interface,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InvocationKind::Static => "static",
            InvocationKind::Virtual => "virtual",
            InvocationKind::Special => "special",
            InvocationKind::Interface => "interface",
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            InvocationKind::Static => "invoke_static",
            InvocationKind::Virtual => "invoke_virtual",
            InvocationKind::Special => "invoke_special",
            InvocationKind::Interface => "invoke_interface",
        }
    }

    pub fn has_receiver(self) -> bool {
        self != InvocationKind::Static
    }
}

impl fmt::Display for InvocationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown invocation kind `{0}`")]
pub struct UnknownKind(pub String);

impl FromStr for InvocationKind {
    type Err = UnknownKind;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "static" => Ok(InvocationKind::Static),
            "virtual" => Ok(InvocationKind::Virtual),
            "special" => Ok(InvocationKind::Special),
            "interface" => Ok(InvocationKind::Interface),
            _ => Err(UnknownKind(s.to_string())),
        }
    }
}

/// Heap object identifier. Only `new` mints these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ObjRef(pub(crate) u32);

impl ObjRef {
    pub fn index(self) -> u32 {
        self.0
    }
}

/// A runtime value on the operand stack, in a local, field, or array.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Str(Arc<str>),
    Bool(bool),
    Null,
    Ref(ObjRef),
    Arr(Arc<[Value]>),
}

impl Value {
    pub fn str(s: impl AsRef<str>) -> Value {
        Value::Str(Arc::from(s.as_ref()))
    }

    pub fn arr(items: impl Into<Vec<Value>>) -> Value {
        Value::Arr(Arc::from(items.into()))
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Str(_) => "str",
            Value::Bool(_) => "bool",
            Value::Null => "null",
            Value::Ref(_) => "ref",
            Value::Arr(_) => "arr",
        }
    }

    /// Conformance that needs no class hierarchy: class-typed slots accept
    /// any reference, null, or (for `Str`) a string.
    pub fn conforms_loosely(&self, tag: &TypeTag) -> bool {
        match (tag, self) {
            (TypeTag::Obj, _) => true,
            (TypeTag::Int, Value::Int(_)) => true,
            (TypeTag::Str, Value::Str(_)) => true,
            (TypeTag::Bool, Value::Bool(_)) => true,
            (TypeTag::Arr, Value::Arr(_)) => true,
            (TypeTag::Class(_), Value::Null | Value::Ref(_)) => true,
            (TypeTag::Class(n), Value::Str(_)) => n == "Str",
            (TypeTag::Class(n), Value::Arr(_)) => n == "Arr",
            _ => false,
        }
    }

    /// Default value of a freshly allocated field of type `tag`.
    pub fn default_for(tag: &TypeTag) -> Value {
        match tag {
            TypeTag::Int => Value::Int(0),
            TypeTag::Bool => Value::Bool(false),
            _ => Value::Null,
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::str(v)
    }
}

/// Heap-free rendering; references print as `#<id>`.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Str(s) => f.write_str(s),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Null => f.write_str("null"),
            Value::Ref(r) => write!(f, "#{}", r.0),
            Value::Arr(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
        }
    }
}

/// Symbolic reference `Owner.name:(params)ret`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MethodRef {
    pub owner: String,
    pub name: String,
    pub mtype: MethodType,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RefParseError {
    #[error("method reference `{0}` lacks `Owner.name:` prefix")]
    Shape(String),
    #[error(transparent)]
    Type(#[from] TypeParseError),
}

impl MethodRef {
    pub fn new(owner: impl Into<String>, name: impl Into<String>, mtype: MethodType) -> Self {
        MethodRef {
            owner: owner.into(),
            name: name.into(),
            mtype,
        }
    }

    /// Parses any of the accepted spellings; see [`MethodType::parse`].
    pub fn parse(text: &str) -> Result<Self, RefParseError> {
        let text = text.trim();
        let shape = || RefParseError::Shape(text.to_string());
        let colon = text.find(":(").ok_or_else(shape)?;
        let head = &text[..colon];
        let dot = head.rfind('.').ok_or_else(shape)?;
        let (owner, name) = (&head[..dot], &head[dot + 1..]);
        if !is_identifier(owner) || !is_identifier(name) {
            return Err(shape());
        }
        let mtype = MethodType::parse(&text[colon + 1..])?;
        Ok(MethodRef::new(owner, name, mtype))
    }

    /// Call-site key spelling of this reference.
    pub fn key_form(&self) -> String {
        format!("{}.{}:{}", self.owner, self.name, self.mtype.key_form())
    }
}

/// Assembly literal spelling.
impl fmt::Display for MethodRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}:{}", self.owner, self.name, self.mtype.descriptor())
    }
}
