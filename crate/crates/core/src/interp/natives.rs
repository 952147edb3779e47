use super::machine::{Machine, Trap, TrapKind};
use super::program::NativeFn;
use crate::isa::Value;

pub(crate) fn lookup(owner: &str, name: &str) -> NativeFn {
    match (owner, name) {
        ("Str", "to_string") | ("Str", "of") => str_of,
        ("Str", "replace_all") => str_replace_all,
        ("Str", "length") => str_length,
        ("Arr", "new") => arr_new,
        ("Arr", "len") => arr_len,
        ("Arr", "get") => arr_get,
        ("Arr", "set") => arr_set,
        ("Arr", "sum") => arr_sum,
        ("Sys", "tick") => sys_tick,
        ("Reflect", "invoke") => reflect_invoke,
        _ => missing,
    }
}

fn type_err(what: &str, v: &Value) -> Trap {
    Trap::new(TrapKind::Type, format!("{what}: unexpected {}", v.type_name()))
}

fn int(v: &Value, what: &str) -> Result<i64, Trap> {
    v.as_int().ok_or_else(|| type_err(what, v))
}

fn text<'a>(v: &'a Value, what: &str) -> Result<&'a str, Trap> {
    v.as_str().ok_or_else(|| type_err(what, v))
}

fn items<'a>(v: &'a Value, what: &str) -> Result<&'a [Value], Trap> {
    match v {
        Value::Arr(a) => Ok(a),
        other => Err(type_err(what, other)),
    }
}

fn index(a: &[Value], i: i64) -> Result<usize, Trap> {
    usize::try_from(i)
        .ok()
        .filter(|i| *i < a.len())
        .ok_or_else(|| Trap::new(TrapKind::BadIndex, format!("index {i} out of bounds for length {}", a.len())))
}

fn missing(_: &mut Machine, _: Vec<Value>) -> Result<Value, Trap> {
    Err(Trap::new(TrapKind::UnknownMethod, "library method has no implementation"))
}

fn str_of(m: &mut Machine, args: Vec<Value>) -> Result<Value, Trap> {
    Ok(match &args[0] {
        s @ Value::Str(_) => s.clone(),
        other => Value::str(m.render(other)),
    })
}

fn str_replace_all(_: &mut Machine, args: Vec<Value>) -> Result<Value, Trap> {
    let s = text(&args[0], "Str.replace_all")?;
    let from = text(&args[1], "Str.replace_all")?;
    let to = text(&args[2], "Str.replace_all")?;
    if from.is_empty() {
        return Ok(args[0].clone());
    }
    Ok(Value::str(s.replace(from, to)))
}

fn str_length(_: &mut Machine, args: Vec<Value>) -> Result<Value, Trap> {
    Ok(Value::Int(text(&args[0], "Str.length")?.chars().count() as i64))
}

fn arr_new(_: &mut Machine, args: Vec<Value>) -> Result<Value, Trap> {
    let n = int(&args[0], "Arr.new")?;
    let n = usize::try_from(n)
        .ok()
        .filter(|n| *n <= 1 << 20)
        .ok_or_else(|| Trap::new(TrapKind::ArrayLength, format!("bad array length {n}")))?;
    Ok(Value::arr(vec![Value::Null; n]))
}

fn arr_len(_: &mut Machine, args: Vec<Value>) -> Result<Value, Trap> {
    Ok(Value::Int(items(&args[0], "Arr.len")?.len() as i64))
}

fn arr_get(_: &mut Machine, args: Vec<Value>) -> Result<Value, Trap> {
    let a = items(&args[0], "Arr.get")?;
    let i = index(a, int(&args[1], "Arr.get")?)?;
    Ok(a[i].clone())
}

fn arr_set(_: &mut Machine, mut args: Vec<Value>) -> Result<Value, Trap> {
    let v = args.pop().unwrap();
    let a = items(&args[0], "Arr.set")?;
    let i = index(a, int(&args[1], "Arr.set")?)?;
    let mut copy = a.to_vec();
    copy[i] = v;
    Ok(Value::arr(copy))
}

fn arr_sum(_: &mut Machine, args: Vec<Value>) -> Result<Value, Trap> {
    items(&args[0], "Arr.sum")?
        .iter()
        .try_fold(0i64, |acc, v| Ok(acc.wrapping_add(int(v, "Arr.sum")?)))
        .map(Value::Int)
}

fn sys_tick(m: &mut Machine, args: Vec<Value>) -> Result<Value, Trap> {
    let n = int(&args[0], "Sys.tick")?;
    m.tick(n);
    Ok(Value::Null)
}

fn reflect_invoke(m: &mut Machine, mut args: Vec<Value>) -> Result<Value, Trap> {
    let call_args = items(&args[3], "Reflect.invoke")?.to_vec();
    args.truncate(3);
    let owner = text(&args[0], "Reflect.invoke")?;
    let name = text(&args[1], "Reflect.invoke")?;
    let mtype = text(&args[2], "Reflect.invoke")?;
    m.reflective_invoke(owner, name, mtype, call_args)
}
