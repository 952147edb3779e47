//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use fluxvm::batch;
use fluxvm::bench::{count_calls_oracle, quartiles};
use fluxvm::corpus::{self, handler_demo, ScriptStep};
use fluxvm::handles::{Lookup, MethodHandle};
use fluxvm::interp::{link_count, run, Machine, Program, RuntimeHooks};
use fluxvm::isa::{InvocationKind, MethodRef, Value};
use fluxvm::patch::{Engine, PatchOp};
use fluxvm::transform::transform_module;
use proptest::test_runner::{TestError, TestRunner};
use serde_json::Value as Json;

#[path = "../../core/tests/algebra/mod.rs"]
mod algebra;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Box<dyn FnOnce(&mut Vec<String>) -> Outcome>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn linked(id: &str) -> (Arc<Program>, Arc<Engine>) {
    let (m, _) = transform_module(corpus::module(id));
    let p = Program::link(m).map_err(|e| e.to_string()).unwrap();
    let e = Engine::new(p.clone());
    e.prelink();
    (p, e)
}

fn semantic_preservation() -> Outcome {
    let start = Instant::now();
    let entries = corpus::entries();
    let outcomes = batch::diff_entries(&entries);
    let elapsed = start.elapsed();
    for o in &outcomes {
        ensure(o.equivalent(), || format!("{} {:?}: transformed run differs", o.id, o.args))?;
        let plain = o.plain.as_ref().map_err(|t| format!("{} trapped: {}", o.id, t.trap))?;
        let e = entries.iter().find(|e| e.id == o.id).unwrap();
        let case = e.cases.iter().find(|c| c.args == o.args).unwrap();
        ensure(plain.output == case.output, || format!("{}: output {:?}", o.id, plain.output))?;
        if case.returns.is_some() {
            ensure(plain.return_value == case.returns, || format!("{}: returned {:?}", o.id, plain.return_value))?;
        }
    }
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} entries, {} cases identical in {:.2} s",
        entries.len(),
        outcomes.len(),
        elapsed.as_secs_f64()
    ))
}

fn replace_spaces() -> Outcome {
    let program = Program::link(corpus::module("replace_spaces")).map_err(|e| e.to_string())?;
    let lookup = Lookup::new(program.clone());
    let r = MethodRef::parse("Str.replace_all:(OSS)S").unwrap();
    let target = lookup.find(InvocationKind::Virtual, &r).map_err(|e| e.to_string())?;
    let bound = MethodHandle::insert_arguments(&target, 1, vec![Value::str("%20"), Value::str(" ")])
        .map_err(|e| e.to_string())?;
    let mut m = Machine::new(program, RuntimeHooks::default());
    let got = bound.invoke(&mut m, vec![Value::str("A%20B%20C")]).map_err(|t| t.to_string())?;
    ensure(got == Value::str("A B C"), || format!("got {got:?}"))?;
    Ok(format!("{bound} maps \"A%20B%20C\" to \"{got}\""))
}

fn handler_swap() -> Outcome {
    let key = "MyActionListener.counterIncrement:(MyActionListener)void";
    let swap = |new: &str| {
        vec![ScriptStep {
            after_tick: 3,
            op: PatchOp::Retarget {
                method_type: "virtual".into(),
                old_target: key.into(),
                new_target: new.into(),
            },
        }]
    };
    let ok = handler_demo(corpus::module("handler"), 5, &swap("MyActionListener.pictureSwitch:()V"));
    let out = ok.exit.map_err(|t| t.trap.to_string())?.output;
    ensure(out == ["count=1", "count=2", "count=3", "picture!", "picture!"], || format!("{out:?}"))?;
    ensure(ok.op_results == [Ok(1)], || format!("{:?}", ok.op_results))?;
    let bad = handler_demo(corpus::module("handler"), 5, &swap("MyActionListener.badHandler:(I)I"));
    let code = bad.op_results[0].as_ref().err().map(|e| e.code());
    ensure(code == Some("type_mismatch"), || format!("rejected swap gave {:?}", bad.op_results))?;
    let out = bad.exit.map_err(|t| t.trap.to_string())?.output;
    let want: Vec<String> = (1..=5).map(|i| format!("count={i}")).collect();
    ensure(out == want, || format!("{out:?}"))?;
    Ok("swap after tick 3 prints picture! twice; ill-typed swap rejected, five counts".into())
}

fn advice_count_law() -> Outcome {
    let key = "ClassicFibo.fib:(O)O";
    let mut counts = Vec::new();
    for n in [0u64, 1, 5, 10] {
        let oracle = count_calls_oracle(n);
        for stack_after in [false, true] {
            let (p, e) = linked("classicfibo");
            e.apply_before_aspect(key, "Dumpers", "onCall").map_err(|e| e.to_string())?;
            if stack_after {
                e.apply_after_aspect(key, "Dumpers", "onReturn").map_err(|e| e.to_string())?;
            }
            let main = p.find_static("ClassicFibo", "main", Some(1)).unwrap();
            let r = run(&p, main, vec![Value::Int(n as i64)], RuntimeHooks::with_engine(e))
                .map_err(|t| t.trap.to_string())?;
            let before = r.output.iter().filter(|l| l.starts_with(">>> ")).count() as u64;
            let after = r.output.iter().filter(|l| l.starts_with("<<< ")).count() as u64;
            ensure(before == oracle, || format!("n={n}: {before} before lines, oracle {oracle}"))?;
            ensure(after == if stack_after { oracle } else { 0 }, || format!("n={n}: {after} after lines"))?;
        }
        counts.push(format!("n={n}:{oracle}"));
    }
    Ok(format!("before/after line counts equal the call-count oracle ({})", counts.join(" ")))
}

fn combinator_algebra() -> Outcome {
    fn report<T: std::fmt::Debug>(name: &str, r: Result<(), TestError<T>>) -> Result<(), String> {
        r.map_err(|e| format!("{name}: {e}"))
    }
    let runner = || TestRunner::new(algebra::config());
    report("inversion", runner().run(&algebra::inversion_input(), algebra::check_inversion))?;
    report("asType", runner().run(&algebra::as_type_round_trip_input(), algebra::check_as_type_round_trip))?;
    report("identity", runner().run(&algebra::identity_filters_input(), algebra::check_identity_filters))?;
    report("creation-time", runner().run(&algebra::creation_time_only_input(), algebra::check_creation_time_only))?;
    Ok(format!(
        "{} cases each: spreader/collector inversion, asType round trip, identity filters, creation-time-only errors",
        algebra::CASES
    ))
}

fn atomicity() -> Outcome {
    const N: i64 = 1_000_000;
    const MIN_FLIPS: u64 = 10_000;
    let start = Instant::now();
    let (p, e) = linked("stress");
    let key = "Stress.pick:()I";
    let done = Arc::new(AtomicBool::new(false));
    let mutator = {
        let (e, done) = (e.clone(), done.clone());
        std::thread::spawn(move || {
            let mut flips = 0u64;
            let mut during = 0u64;
            while !done.load(Ordering::Acquire) || flips < MIN_FLIPS {
                let target = if flips.is_multiple_of(2) { "Stress.b:()I" } else { "Stress.a:()I" };
                e.change_call_site_target("static", key, target).expect("retarget");
                flips += 1;
                if !done.load(Ordering::Acquire) {
                    during += 1;
                }
            }
            (flips, during)
        })
    };
    let main = p.find_static("Stress", "main", Some(1)).unwrap();
    let result = run(&p, main, vec![Value::Int(N)], RuntimeHooks::with_engine(e.clone()));
    done.store(true, Ordering::Release);
    let (flips, during) = mutator.join().map_err(|_| "mutator panicked".to_string())?;
    let elapsed = start.elapsed();
    let r = result.map_err(|t| format!("guest trapped: {}", t.trap))?;
    ensure(r.return_value == Some(Value::Int(N)), || format!("ones+twos = {:?}", r.return_value))?;
    ensure(!r.output.iter().any(|l| l == "torn"), || "observed a result from neither target".into())?;
    ensure(during >= MIN_FLIPS, || format!("only {during} retargets overlapped the guest"))?;
    let site = e.sites_for_key(key);
    ensure(site.len() == 1 && site[0].invocations() == N as u64, || "site counter mismatch".into())?;
    let m = e.metrics();
    ensure(m.total_invocations == N as u64, || format!("total invocations {}", m.total_invocations))?;
    ensure(m.retargets == flips, || format!("retargets {} vs {flips} performed", m.retargets))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{N} invocations, {during} concurrent retargets, {} / {}, {:.1} s",
        r.output[0],
        r.output[1],
        elapsed.as_secs_f64()
    ))
}

fn fluxvm_bin(args: &[&str]) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_fluxvm"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || format!("fluxvm {args:?}: {}", String::from_utf8_lossy(&o.stderr)))?;
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

fn median(report: &Json, config: &str) -> Result<f64, String> {
    report["rows"]
        .as_array()
        .and_then(|rows| rows.iter().find(|r| r["config"] == config))
        .and_then(|r| r["quartilesMs"][2].as_f64())
        .ok_or_else(|| format!("no {config} row"))
}

fn benchmark_format(warnings: &mut Vec<String>) -> Outcome {
    let table = fluxvm_bin(&["bench", "--variant", "classicfibo", "--n", "20", "--runs", "10", "--table"])?;
    let lines: Vec<&str> = table.lines().collect();
    let header: Vec<&str> = lines.first().ok_or("empty table")?.split('|').map(str::trim).collect();
    let want = ["Exec. Plat.", "Impl.", "Q1-min", "Q2-25%", "Q3-median", "Q4-75%", "Q5-max", "Overhead"];
    ensure(header == want, || format!("header {header:?}"))?;
    ensure(lines.len() == 7, || format!("{} table lines", lines.len()))?;
    for (i, line) in lines[2..].iter().enumerate() {
        let cells: Vec<&str> = line.split('|').map(str::trim).collect();
        let q: Vec<f64> = cells[2..7].iter().filter_map(|c| c.parse().ok()).collect();
        ensure(q.len() == 5 && q.windows(2).all(|w| w[0] <= w[1]), || format!("row {line}"))?;
        let oh = cells[7];
        let well_formed = if i == 0 {
            oh == "-"
        } else {
            (oh.starts_with('+') || oh.starts_with('-')) && oh.ends_with('%') && oh[1..oh.len() - 1].parse::<f64>().is_ok()
        };
        ensure(well_formed, || format!("overhead cell {oh:?}"))?;
    }

    let json: Json = serde_json::from_str(&fluxvm_bin(&[
        "bench", "--variant", "classicfibo", "--n", "20", "--runs", "10", "--json",
    ])?)
    .map_err(|e| e.to_string())?;
    let rows = json["rows"].as_array().ok_or("no rows")?;
    let base = rows[0]["quartilesMs"][2].as_f64().ok_or("no baseline")?;
    for row in rows {
        let samples: Vec<f64> = row["samplesMs"].as_array().ok_or("no samples")?.iter().filter_map(Json::as_f64).collect();
        ensure(samples.len() == 10, || format!("{} samples", samples.len()))?;
        let q: Vec<f64> = row["quartilesMs"].as_array().unwrap().iter().filter_map(Json::as_f64).collect();
        ensure(q == quartiles(&samples), || format!("quartiles {q:?} do not match samples"))?;
        ensure(row["result"] == "6765", || format!("result {}", row["result"]))?;
        if let Some(oh) = row["overheadPct"].as_f64() {
            let expect = (q[2] / base - 1.0) * 100.0;
            ensure((oh - expect).abs() < 1e-6, || format!("overhead {oh} vs {expect}"))?;
        }
    }

    let reflective: Json = serde_json::from_str(&fluxvm_bin(&[
        "bench", "--variant", "reflectivefibo", "--n", "20", "--runs", "10", "--configs", "plain", "--json",
    ])?)
    .map_err(|e| e.to_string())?;
    let refl = median(&reflective, "plain")?;
    let transformed = median(&json, "transformed")?;
    let plain = median(&json, "plain")?;
    ensure(refl > transformed, || format!("reflective median {refl:.3} ms not above transformed {transformed:.3} ms"))?;
    ensure(reflective["rows"][0]["result"] == "6765", || "reflective result".into())?;
    let ratio = transformed / plain;
    if ratio > 2.0 {
        warnings.push(format!(
            "soft budget exceeded: transformed median is {ratio:.2}x plain (budget 2x)"
        ));
    }
    Ok(format!(
        "layout, quartiles and overheads match; reflective {refl:.3} ms > transformed {transformed:.3} ms; transformed/plain {ratio:.2}x"
    ))
}

fn no_reload() -> Outcome {
    let (p, e) = linked("classicfibo");
    let audit = p.identity_audit();
    let links = link_count();
    let key = "ClassicFibo.fib:(O)O";
    let main = p.find_static("ClassicFibo", "main", Some(1)).unwrap();
    let ops = [
        PatchOp::Before { key: key.into(), class: "Noop".into(), method: "before".into() },
        PatchOp::After { key: key.into(), class: "Doubler".into(), method: "after".into() },
        PatchOp::After { key: key.into(), class: "Noop".into(), method: "after".into() },
        PatchOp::Remove { key: key.into() },
        PatchOp::Retarget {
            method_type: "static".into(),
            old_target: key.into(),
            new_target: "ClassicFibo.fib:(O)O".into(),
        },
    ];
    let mut applied = 0;
    for i in 0..100 {
        ops[i % ops.len()].apply(&e).map_err(|err| format!("op {i}: {err}"))?;
        applied += 1;
        if i % 10 == 9 {
            run(&p, main, vec![Value::Int(6)], RuntimeHooks::with_engine(e.clone())).map_err(|t| t.trap.to_string())?;
        }
    }
    ensure(p.identity_audit() == audit, || "a code unit was re-created".into())?;
    ensure(link_count() == links, || format!("{} re-link(s)", link_count() - links))?;
    let r = run(&p, main, vec![Value::Int(10)], RuntimeHooks::with_engine(e)).map_err(|t| t.trap.to_string())?;
    ensure(r.return_value == Some(Value::Int(55)), || format!("{:?}", r.return_value))?;
    Ok(format!("{applied} ops, {} code-unit identities unchanged, no re-link or re-verify", audit.len()))
}

fn transform_stats() -> Outcome {
    let (_, fib) = transform_module(corpus::module("fib"));
    ensure(
        fib.sites_rewritten.static_ == 2 && fib.sites_rewritten.total() == 2,
        || format!("fib: {:?}", fib.sites_rewritten),
    )?;
    let (_, hello) = transform_module(corpus::module("hello"));
    ensure(hello.sites_rewritten.total() == 1, || format!("hello: {:?}", hello.sites_rewritten))?;
    let entries = corpus::entries();
    for e in &entries {
        let (once, _) = transform_module(e.module());
        let (twice, report) = transform_module(once.clone());
        ensure(once == twice && report.sites_rewritten.total() == 0, || format!("{} not idempotent", e.id))?;
    }
    Ok(format!("fib 2 static, hello 1, idempotent on {} modules", entries.len()))
}

fn main() {
    let mut warnings = Vec::new();
    let criteria: Vec<Criterion> = vec![
        ("semantic preservation", Box::new(|_| semantic_preservation())),
        ("replace-spaces chain", Box::new(|_| replace_spaces())),
        ("live handler swap", Box::new(|_| handler_swap())),
        ("advice-count law", Box::new(|_| advice_count_law())),
        ("combinator algebra", Box::new(|_| combinator_algebra())),
        ("atomicity stress", Box::new(|_| atomicity())),
        ("benchmark format", Box::new(benchmark_format)),
        ("no reload", Box::new(|_| no_reload())),
        ("transform statistics", Box::new(|_| transform_stats())),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| check(&mut warnings))) {
            Ok(Ok(detail)) => println!("PASS {}. {name}: {detail}", i + 1),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {}. {name}: {why}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {}. {name}: panicked", i + 1);
            }
        }
    }
    for w in &warnings {
        println!("WARN {w}");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
