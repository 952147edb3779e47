use std::sync::Arc;

use fluxvm::bench::count_calls_oracle;
use fluxvm::corpus::{self, handler_demo, ScriptStep};
use fluxvm::interp::{run, MethodId, Program, RuntimeHooks, TrapKind};
use fluxvm::isa::{assemble, InvocationKind, Value};
use fluxvm::patch::{AdviceKind, Engine, PatchError, PatchOp};
use fluxvm::transform::transform_module;

fn setup(id: &str) -> (Arc<Program>, Arc<Engine>) {
    let (m, _) = transform_module(corpus::module(id));
    let program = Program::link(m).unwrap();
    let engine = Engine::new(program.clone());
    (program, engine)
}

fn entry(p: &Program, class: &str, name: &str) -> MethodId {
    p.find_static(class, name, None).unwrap()
}

fn call(p: &Arc<Program>, e: &Arc<Engine>, m: MethodId, arg: i64) -> fluxvm::interp::ExitReport {
    run(p, m, vec![Value::Int(arg)], RuntimeHooks::with_engine(e.clone())).unwrap()
}

const FIB_KEY: &str = "Fib.fib:(I)I";

#[test]
fn bootstrap_is_memoized_and_registered() {
    let (p, e) = setup("fib");
    assert!(e.list_call_sites().is_empty());
    assert_eq!(e.metrics(), Default::default());
    let fib = entry(&p, "Fib", "fib");
    call(&p, &e, fib, 1);
    assert!(e.list_call_sites().is_empty(), "fib(1) makes no calls");
    call(&p, &e, fib, 2);
    let m = e.metrics();
    assert_eq!(m.bootstraps, 2);
    assert_eq!(m.call_sites, 2);
    call(&p, &e, fib, 10);
    assert_eq!(e.metrics().bootstraps, 2);
    let sites = e.list_call_sites();
    assert_eq!(sites.len(), 1);
    assert_eq!(sites[0].kind, "static");
    assert_eq!(sites[0].key, FIB_KEY);
    assert_eq!(sites[0].site_count, 2);
    // fib(2) made 2 calls, fib(10) made count_calls_oracle(10) - 1.
    let expected = 2 + count_calls_oracle(10) - 1;
    assert_eq!(sites[0].invocation_count, expected);
    assert_eq!(e.metrics().total_invocations, expected);
}

#[test]
fn retarget_takes_effect_without_restart() {
    let (p, e) = setup("fib");
    e.prelink();
    let fib = entry(&p, "Fib", "fib");
    assert_eq!(call(&p, &e, fib, 10).return_value, Some(Value::Int(55)));
    assert_eq!(e.change_call_site_target("static", FIB_KEY, "Fib.seven:(I)I"), Ok(2));
    assert_eq!(call(&p, &e, fib, 10).return_value, Some(Value::Int(14)));
    assert_eq!(e.metrics().retargets, 2);
    assert_eq!(e.change_call_site_target("static", FIB_KEY, FIB_KEY), Ok(2));
    assert_eq!(call(&p, &e, fib, 10).return_value, Some(Value::Int(55)));
}

#[test]
fn retarget_errors_are_distinct() {
    let (_, e) = setup("fib");
    e.prelink();
    let err = |r: Result<usize, PatchError>| r.unwrap_err().code();
    assert_eq!(err(e.change_call_site_target("dynamic", FIB_KEY, FIB_KEY)), "unknown_kind");
    assert_eq!(err(e.change_call_site_target("virtual", FIB_KEY, FIB_KEY)), "unknown_key");
    assert_eq!(err(e.change_call_site_target("static", "Fib.nope:(I)I", FIB_KEY)), "unknown_key");
    assert_eq!(err(e.change_call_site_target("static", FIB_KEY, "Fib.nope:(I)I")), "unknown_target");
    assert_eq!(err(e.change_call_site_target("static", FIB_KEY, "Fib.shout:(S)S")), "type_mismatch");
    assert_eq!(err(e.change_call_site_target("static", "garbage", FIB_KEY)), "bad_request");
    assert_eq!(e.metrics().retargets, 0);
}

#[test]
fn before_advice_emits_one_line_per_call() {
    let (p, e) = setup("fib");
    e.prelink();
    assert_eq!(e.apply_before_aspect(FIB_KEY, "Dumpers", "onCall"), Ok(2));
    let r = call(&p, &e, entry(&p, "Fib", "fib"), 5);
    assert_eq!(r.return_value, Some(Value::Int(5)));
    // The outermost call is a direct entry, not a call site.
    let lines = r.output.iter().filter(|l| l.starts_with(">>> ")).count() as u64;
    assert_eq!(lines, count_calls_oracle(5) - 1);
    assert_eq!(r.output[0], ">>> [4]");
}

const CLAMP: &str = "
class Clamp
  method static toOne (A)A locals=1
    load 0
    push_const 0
    push_const 1
    invoke_static Arr.set:(AIO)A
    ret
";

#[test]
fn clamping_advice_forces_base_case() {
    let src = format!("{}{CLAMP}", corpus::entry("fib").unwrap().source);
    let (m, _) = transform_module(assemble(&src).unwrap());
    let p = Program::link(m).unwrap();
    let e = Engine::new(p.clone());
    e.prelink();
    e.apply_before_aspect(FIB_KEY, "Clamp", "toOne").unwrap();
    let fib = entry(&p, "Fib", "fib");
    // fib(10) = fib(1) + fib(1) once every recursive call is clamped.
    assert_eq!(call(&p, &e, fib, 10).return_value, Some(Value::Int(2)));
    let (p2, e2) = setup("classicfibo");
    e2.prelink();
    e2.apply_before_aspect("ClassicFibo.fib:(O)O", "Noop", "before").unwrap();
    let main = entry(&p2, "ClassicFibo", "main");
    assert_eq!(call(&p2, &e2, main, 10).return_value, Some(Value::Int(55)));
}

#[test]
fn after_advice_on_outer_site_only() {
    let (p, e) = setup("classicfibo");
    e.prelink();
    let sites = e.sites_for_key("ClassicFibo.fib:(O)O");
    assert_eq!(sites.len(), 3);
    let outer = sites
        .iter()
        .find(|s| s.location().starts_with("ClassicFibo.main"))
        .unwrap();
    let doubler = e
        .lookup()
        .find_static("Doubler", "after", &"(O)O".parse().unwrap())
        .unwrap();
    outer.add_advice(AdviceKind::After, &doubler).unwrap();
    let r = call(&p, &e, entry(&p, "ClassicFibo", "main"), 10);
    assert_eq!(r.return_value, Some(Value::Int(110)));
    assert_eq!(outer.advice_count(), 1);
    assert!(sites.iter().filter(|s| s.id() != outer.id()).all(|s| s.advice_count() == 0));
}

#[test]
fn doubling_outer_site() {
    let (p, e) = setup("fib");
    e.prelink();
    e.apply_after_aspect(FIB_KEY, "Doubler", "after").unwrap();
    // fib'(n) = 2 fib'(n-1) + 2 fib'(n-2) for n >= 2, with fib'(0)=0, fib'(1)=1.
    assert_eq!(call(&p, &e, entry(&p, "Fib", "fib"), 2).return_value, Some(Value::Int(2)));
    assert_eq!(call(&p, &e, entry(&p, "Fib", "fib"), 3).return_value, Some(Value::Int(6)));
}

#[test]
fn advice_errors() {
    let (_, e) = setup("handler");
    e.prelink();
    let key = "MyActionListener.counterIncrement:(MyActionListener)void";
    assert_eq!(
        e.apply_after_aspect(key, "MyActionListener", "badHandler").unwrap_err().code(),
        "void_return"
    );
    assert_eq!(
        e.apply_before_aspect(key, "MyActionListener", "badHandler").unwrap_err().code(),
        "type_mismatch"
    );
    assert_eq!(
        e.apply_before_aspect(key, "Nobody", "x").unwrap_err().code(),
        "unknown_target"
    );
    assert_eq!(
        e.apply_before_aspect("Nope.x:(I)I", "Dumpers", "onCall").unwrap_err().code(),
        "unknown_key"
    );
    assert_eq!(e.remove_aspects("Nope.x:(I)I").unwrap_err().code(), "unknown_key");
    assert_eq!(e.metrics().advices_applied, 0);
}

#[test]
fn remove_restores_clean_behavior() {
    let (p, e) = setup("classicfibo");
    e.prelink();
    let main = entry(&p, "ClassicFibo", "main");
    let clean = call(&p, &e, main, 6);
    let key = "ClassicFibo.fib:(O)O";
    e.apply_before_aspect(key, "Dumpers", "onCall").unwrap();
    e.apply_after_aspect(key, "Dumpers", "onReturn").unwrap();
    assert_ne!(call(&p, &e, main, 6).output, clean.output);
    let listed = e.list_call_sites();
    assert_eq!(listed.iter().find(|s| s.key == key).unwrap().advices.before, 1);
    assert_eq!(e.remove_aspects(key), Ok(3));
    let after = call(&p, &e, main, 6);
    assert_eq!(after.output, clean.output);
    assert_eq!(after.return_value, clean.return_value);
    assert_eq!(e.remove_aspects(key), Ok(3));
}

#[test]
fn retarget_clears_advices() {
    let (_, e) = setup("fib");
    e.prelink();
    e.apply_before_aspect(FIB_KEY, "Dumpers", "onCall").unwrap();
    e.change_call_site_target("static", FIB_KEY, "Fib.seven:(I)I").unwrap();
    assert!(e.sites_for_key(FIB_KEY).iter().all(|s| s.advice_count() == 0));
    let entry = e.list_call_sites().into_iter().find(|s| s.key == FIB_KEY).unwrap();
    assert_eq!(entry.targets, ["Fib.seven:(I)I", "Fib.seven:(I)I"]);
}

#[test]
fn bootstrap_failure_traps() {
    let src = "entry T.main\nclass T\n method static main ()I locals=0\n  invoke_dynamic T.gone:()I ()I static\n  ret\n";
    let program = Program::link(fluxvm::isa::assemble(src).unwrap()).unwrap();
    let engine = Engine::new(program.clone());
    let main = program.find_static("T", "main", None).unwrap();
    let err = run(&program, main, vec![], RuntimeHooks::with_engine(engine.clone())).unwrap_err();
    assert_eq!(err.trap.kind, TrapKind::Bootstrap);
    assert!(err.trap.message.contains("T.gone"));
    assert_eq!(engine.prelink(), 0);
    let err = run(&program, main, vec![], RuntimeHooks::default()).unwrap_err();
    assert_eq!(err.trap.kind, TrapKind::NoEngine);
}

#[test]
fn handler_demo_rebinds_between_ticks() {
    let key = "MyActionListener.counterIncrement:(MyActionListener)void";
    let script = [ScriptStep {
        after_tick: 3,
        op: PatchOp::Retarget {
            method_type: "virtual".into(),
            old_target: key.into(),
            new_target: "MyActionListener.pictureSwitch:()V".into(),
        },
    }];
    let demo = handler_demo(corpus::module("handler"), 5, &script);
    assert_eq!(
        demo.exit.unwrap().output,
        ["count=1", "count=2", "count=3", "picture!", "picture!"]
    );
    assert_eq!(demo.op_results, vec![Ok(1)]);
    let sites = demo.engine.list_call_sites();
    let entry = sites.iter().find(|s| s.key == key).unwrap();
    assert_eq!(entry.kind, InvocationKind::Virtual.as_str());
    assert_eq!(entry.invocation_count, 5);
}

#[test]
fn handler_demo_without_script_or_with_bad_swap() {
    let five: Vec<String> = (1..=5).map(|i| format!("count={i}")).collect();
    let demo = handler_demo(corpus::module("handler"), 5, &[]);
    assert_eq!(demo.exit.unwrap().output, five);
    let bad = [ScriptStep {
        after_tick: 3,
        op: PatchOp::Retarget {
            method_type: "virtual".into(),
            old_target: "MyActionListener.counterIncrement:(MyActionListener)void".into(),
            new_target: "MyActionListener.badHandler:(I)I".into(),
        },
    }];
    let demo = handler_demo(corpus::module("handler"), 5, &bad);
    assert_eq!(demo.exit.unwrap().output, five);
    assert_eq!(demo.op_results[0].as_ref().unwrap_err().code(), "type_mismatch");
    let unknown = [ScriptStep {
        after_tick: 1,
        op: PatchOp::Before {
            key: "Nope.x:(I)I".into(),
            class: "Dumpers".into(),
            method: "onCall".into(),
        },
    }];
    let demo = handler_demo(corpus::module("handler"), 5, &unknown);
    assert_eq!(demo.exit.unwrap().output, five);
    assert_eq!(demo.op_results[0].as_ref().unwrap_err().code(), "unknown_key");
}

const SWAP: &str = "
entry P.main
class P
  method virtual who (LP;)S locals=1
    push_const \"P\"
    ret
  method static main ()S locals=0
    new P
    invoke_virtual P.who:(LP;)S
    ret
class Q extends P
  method virtual who (LQ;)S locals=1
    push_const \"Q\"
    ret
class Swap
  method static toQ (A)A locals=1
    load 0
    push_const 0
    new Q
    invoke_static Arr.set:(AIO)A
    ret
  method static toInt (A)A locals=1
    load 0
    push_const 0
    push_const 1
    invoke_static Arr.set:(AIO)A
    ret
";

#[test]
fn replaced_receiver_is_redispatched() {
    let (m, _) = transform_module(assemble(SWAP).unwrap());
    let p = Program::link(m).unwrap();
    let main = entry(&p, "P", "main");
    let go = |e: &Arc<Engine>| run(&p, main, vec![], RuntimeHooks::with_engine(e.clone()));
    let e = Engine::new(p.clone());
    e.prelink();
    assert_eq!(go(&e).unwrap().return_value, Some(Value::str("P")));
    e.apply_before_aspect("P.who:(P)S", "Swap", "toQ").unwrap();
    assert_eq!(go(&e).unwrap().return_value, Some(Value::str("Q")));
    e.remove_aspects("P.who:(P)S").unwrap();
    e.apply_before_aspect("P.who:(P)S", "Swap", "toInt").unwrap();
    assert_eq!(go(&e).unwrap_err().trap.kind, TrapKind::Cast);
}
