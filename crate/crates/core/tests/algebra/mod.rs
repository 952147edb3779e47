//! Combinator algebra checks shared by the property suite and the
//! acceptance runner.

#![allow(dead_code)]

use std::sync::Arc;

use fluxvm::handles::{Handle, HandleError, Lookup, MethodHandle};
use fluxvm::interp::{Machine, Program, RuntimeHooks, Trap, TrapKind};
use fluxvm::isa::{assemble, MethodType, TypeTag, Value};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

/// Cases per property.
pub const CASES: u32 = 512;

pub fn config() -> ProptestConfig {
    ProptestConfig {
        cases: CASES,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

/// `mixK` computes a position-weighted sum so argument order matters;
/// `tailK` takes K ints and an array.
pub fn handle_source() -> String {
    let mut src = String::from("class M\n");
    for k in 0..=4usize {
        let params = "I".repeat(k);
        src += &format!("  method static mix{k} ({params})I locals={k}\n    push_const 7\n");
        for i in 0..k {
            src += &format!("    push_const {}\n    mul\n    load {i}\n    add\n", 10 + i);
        }
        src += "    ret\n";
        src += &format!(
            "  method static tail{k} ({params}A)I locals={}\n    load {k}\n    invoke_static Arr.sum:(A)I\n",
            k + 1
        );
        for i in 0..k {
            src += &format!("    push_const 3\n    mul\n    load {i}\n    add\n");
        }
        src += "    ret\n";
    }
    src += "  method static id (I)I locals=1\n    load 0\n    ret\n";
    src += "  method static idO (O)O locals=1\n    load 0\n    ret\n";
    src += "  method static inc (I)I locals=1\n    load 0\n    push_const 1\n    add\n    ret\n";
    src += "  method static str (I)S locals=1\n    push_const \"s\"\n    ret\n";
    src
}

pub struct Fx {
    lookup: Lookup,
    machine: Machine,
}

pub fn fx() -> Fx {
    let program: Arc<Program> = Program::link(assemble(&handle_source()).unwrap()).unwrap();
    Fx {
        lookup: Lookup::new(program.clone()),
        machine: Machine::new(program, RuntimeHooks::default()),
    }
}

impl Fx {
    fn mix(&self, k: usize) -> Handle {
        let ty = MethodType::parse(&format!("({})I", "I".repeat(k))).unwrap();
        self.lookup.find_static("M", &format!("mix{k}"), &ty).unwrap()
    }

    fn tail(&self, k: usize) -> Handle {
        let ty = MethodType::parse(&format!("({}A)I", "I".repeat(k))).unwrap();
        self.lookup.find_static("M", &format!("tail{k}"), &ty).unwrap()
    }

    fn unary(&self, name: &str, ty: &str) -> Handle {
        self.lookup.find_static("M", name, &MethodType::parse(ty).unwrap()).unwrap()
    }

    fn call(&mut self, h: &Handle, args: Vec<Value>) -> Result<Value, Trap> {
        h.invoke(&mut self.machine, args)
    }
}

pub fn ints(v: &[i64]) -> Vec<Value> {
    v.iter().map(|i| Value::Int(*i)).collect()
}

pub fn small_ints(max: usize) -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(-1000i64..1000, max)
}

/// Tracks what a well-typed argument looks like for each parameter, so that
/// spread arrays get the right length.
#[derive(Clone, Debug)]
pub enum Shape {
    Int,
    Arr(Vec<Shape>),
}

#[derive(Clone, Debug)]
pub enum Step {
    Insert { pos: usize, n: usize },
    FilterArg { pos: usize, filter: u8 },
    FilterRet { filter: u8 },
    Spread { count: usize },
    Collect { count: usize },
    Widen { mask: u8 },
    Narrow,
}

pub fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        (0usize..5, 0usize..3).prop_map(|(pos, n)| Step::Insert { pos, n }),
        (0usize..5, 0u8..3).prop_map(|(pos, filter)| Step::FilterArg { pos, filter }),
        (0u8..3).prop_map(|filter| Step::FilterRet { filter }),
        (0usize..5).prop_map(|count| Step::Spread { count }),
        (0usize..5).prop_map(|count| Step::Collect { count }),
        any::<u8>().prop_map(|mask| Step::Widen { mask }),
        Just(Step::Narrow),
    ]
}

pub fn build_args(shapes: &[Shape], seed: i64) -> Vec<Value> {
    shapes
        .iter()
        .enumerate()
        .map(|(i, s)| match s {
            Shape::Int => Value::Int(seed + i as i64),
            Shape::Arr(inner) => Value::arr(build_args(inner, seed * 3 + i as i64)),
        })
        .collect()
}

pub fn arbitrary_arg(tag: &TypeTag, seed: i64) -> Value {
    match tag {
        TypeTag::Int => Value::Int(seed),
        TypeTag::Arr => Value::arr(ints(&vec![seed; (seed.unsigned_abs() % 4) as usize])),
        TypeTag::Str => Value::str("s"),
        _ => match seed.rem_euclid(3) {
            0 => Value::Int(seed),
            1 => Value::str("s"),
            _ => Value::Bool(true),
        },
    }
}

/// Applies `steps` to `mix{k}`, skipping steps the typing rules reject, and
/// keeps the shape vector in sync with every accepted step.
pub fn build_chain(fx: &Fx, k: usize, steps: &[Step], rejected: &mut usize) -> (Handle, Vec<Shape>) {
    let mut h = fx.mix(k);
    let mut shapes = vec![Shape::Int; k];
    let filters = [fx.unary("id", "(I)I"), fx.unary("inc", "(I)I"), fx.unary("str", "(I)S")];
    for s in steps {
        let next: Result<Handle, HandleError> = match s {
            Step::Insert { pos, n } => {
                let values = match shapes.get(*pos..*pos + *n) {
                    Some(slots) => build_args(slots, 5),
                    None => ints(&vec![5; *n]),
                };
                MethodHandle::insert_arguments(&h, *pos, values)
            }
            Step::FilterArg { pos, filter } => {
                MethodHandle::filter_arguments(&h, *pos, vec![Some(filters[*filter as usize].clone())])
            }
            Step::FilterRet { filter } => MethodHandle::filter_return_value(&h, &filters[*filter as usize]),
            Step::Spread { count } => MethodHandle::as_spreader(&h, *count),
            Step::Collect { count } => MethodHandle::as_collector(&h, *count),
            Step::Widen { mask } => {
                let ps = h
                    .mtype()
                    .params
                    .iter()
                    .enumerate()
                    .map(|(i, p)| if mask & (1 << (i % 8)) != 0 { TypeTag::Obj } else { p.clone() })
                    .collect();
                MethodHandle::as_type(&h, MethodType::new(ps, h.mtype().ret.clone()))
            }
            Step::Narrow => {
                let ps = h
                    .mtype()
                    .params
                    .iter()
                    .zip(&shapes)
                    .map(|(p, s)| match (p, s) {
                        (TypeTag::Obj, Shape::Int) => TypeTag::Int,
                        (TypeTag::Obj, Shape::Arr(_)) => TypeTag::Arr,
                        _ => p.clone(),
                    })
                    .collect();
                MethodHandle::as_type(&h, MethodType::new(ps, h.mtype().ret.clone()))
            }
        };
        match next {
            Ok(n) => {
                match s {
                    Step::Insert { pos, n: len } => {
                        shapes.drain(*pos..*pos + *len);
                    }
                    Step::Spread { count } => {
                        let cut = shapes.len() - count;
                        let inner = shapes.split_off(cut);
                        shapes.push(Shape::Arr(inner));
                    }
                    Step::Collect { count } => {
                        let last = shapes.pop().unwrap();
                        match last {
                            Shape::Arr(inner) if inner.len() == *count => shapes.extend(inner),
                            _ => shapes.extend(vec![Shape::Int; *count]),
                        }
                    }
                    _ => {}
                }
                h = n;
            }
            Err(_) => *rejected += 1,
        }
    }
    (h, shapes)
}

pub fn inversion_input() -> impl Strategy<Value = (usize, usize, Vec<i64>, Vec<i64>)> {
    (0usize..=4, 0usize..=4, small_ints(4), small_ints(4))
}

pub fn check_inversion((k, n_frac, xs, tail): (usize, usize, Vec<i64>, Vec<i64>)) -> Result<(), TestCaseError> {
    let mut fx = fx();
    let n = n_frac.min(k);
    // Spread then collect over a plain handle.
    let h = fx.mix(k);
    let round = MethodHandle::as_collector(&MethodHandle::as_spreader(&h, n).unwrap(), n).unwrap();
    let args = ints(&xs[..k]);
    prop_assert_eq!(fx.call(&round, args.clone()).unwrap(), fx.call(&h, args).unwrap());
    // Collect then spread over a handle ending in an array.
    let t = fx.tail(k);
    let m = n_frac;
    let back = MethodHandle::as_spreader(&MethodHandle::as_collector(&t, m).unwrap(), m).unwrap();
    prop_assert_eq!(back.mtype(), t.mtype());
    let mut targs = ints(&xs[..k]);
    targs.push(Value::arr(ints(&tail[..m])));
    prop_assert_eq!(fx.call(&back, targs.clone()).unwrap(), fx.call(&t, targs).unwrap());

    Ok(())
}

pub fn as_type_round_trip_input() -> impl Strategy<Value = (usize, u8, Vec<i64>)> {
    (0usize..=4, 0u8..32, small_ints(4))
}

pub fn check_as_type_round_trip((k, mask, xs): (usize, u8, Vec<i64>)) -> Result<(), TestCaseError> {
    let mut fx = fx();
    let h = fx.mix(k);
    let widen = |i: usize| if mask & (1 << i) != 0 { TypeTag::Obj } else { TypeTag::Int };
    let wide_ty = MethodType::new((0..k).map(widen).collect(), widen(4));
    let wide = MethodHandle::as_type(&h, wide_ty).unwrap();
    let back = MethodHandle::as_type(&wide, h.mtype().clone()).unwrap();
    prop_assert_eq!(back.mtype(), h.mtype());
    let args = ints(&xs[..k]);
    let want = fx.call(&h, args.clone()).unwrap();
    prop_assert_eq!(fx.call(&wide, args.clone()).unwrap(), want.clone());
    prop_assert_eq!(fx.call(&back, args).unwrap(), want);
    // A widened slot accepts a string, and only the narrow rejects it.
    if k > 0 && mask & 1 != 0 {
        let mut bad = ints(&xs[..k]);
        bad[0] = Value::str("x");
        prop_assert_eq!(fx.call(&wide, bad).unwrap_err().kind, TrapKind::Cast);
    }

    Ok(())
}

pub fn identity_filters_input() -> impl Strategy<Value = (usize, usize, Vec<i64>)> {
    (1usize..=4, 0usize..4, small_ints(4))
}

pub fn check_identity_filters((k, pos, xs): (usize, usize, Vec<i64>)) -> Result<(), TestCaseError> {
    let mut fx = fx();
    let pos = pos % k;
    let h = fx.mix(k);
    let id = fx.unary("id", "(I)I");
    let args = ints(&xs[..k]);
    let want = fx.call(&h, args.clone()).unwrap();
    let filtered = MethodHandle::filter_arguments(&h, pos, vec![Some(id.clone())]).unwrap();
    prop_assert_eq!(fx.call(&filtered, args.clone()).unwrap(), want.clone());
    let skipped = MethodHandle::filter_arguments(&h, pos, vec![None]).unwrap();
    prop_assert_eq!(fx.call(&skipped, args.clone()).unwrap(), want.clone());
    let ret = MethodHandle::filter_return_value(&h, &id).unwrap();
    prop_assert_eq!(fx.call(&ret, args.clone()).unwrap(), want.clone());
    let wide = MethodHandle::as_type(&h, MethodType::new(h.mtype().params.clone(), TypeTag::Obj)).unwrap();
    let ret_o = MethodHandle::filter_return_value(&wide, &fx.unary("idO", "(O)O")).unwrap();
    prop_assert_eq!(fx.call(&ret_o, args).unwrap(), want);

    Ok(())
}

pub fn creation_time_only_input() -> impl Strategy<Value = (usize, Vec<Step>, i64)> {
    (0usize..=4, prop::collection::vec(step(), 0..8), -50i64..50)
}

pub fn check_creation_time_only((k, steps, seed): (usize, Vec<Step>, i64)) -> Result<(), TestCaseError> {
    let mut fx = fx();
    let mut rejected = 0;
    let (h, shapes) = build_chain(&fx, k, &steps, &mut rejected);
    prop_assert!(h.is_coherent());
    prop_assert_eq!(h.derived_type(), h.mtype().clone());
    // Shaped arguments fit every node: no runtime failure at all unless a
    // narrow meets a non-int value, which shaped arguments never are.
    let args = build_args(&shapes, seed);
    let shaped = fx.call(&h, args);
    if let Err(t) = &shaped {
        prop_assert!(matches!(t.kind, TrapKind::ArrayLength), "shaped call failed: {t}");
    }
    // Arbitrary values of the right tags may fail only with cast or
    // spread-length traps, never structurally.
    let loose: Vec<Value> = h
        .mtype()
        .params
        .iter()
        .enumerate()
        .map(|(i, t)| arbitrary_arg(t, seed + i as i64))
        .collect();
    if let Err(t) = fx.call(&h, loose) {
        prop_assert!(
            matches!(t.kind, TrapKind::Cast | TrapKind::ArrayLength),
            "unexpected runtime failure {:?}: {}", t.kind, t
        );
    }
    // Wrong arity is caught before any guest code runs.
    let before = fx.machine.instructions_executed();
    let mut extra = build_args(&shapes, seed);
    extra.push(Value::Int(0));
    prop_assert_eq!(fx.call(&h, extra).unwrap_err().kind, TrapKind::Structural);
    prop_assert_eq!(fx.machine.instructions_executed(), before);

    Ok(())
}
