use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use fluxvm::bench::{render_table, run_benchmark, BenchSpec, Config, Variant};
use fluxvm::interp::{run, Program, RuntimeHooks};
use fluxvm::isa::{disassemble, verify, Module};
use fluxvm::patch::Engine;
use fluxvm::transform::{load, transform_module};
use fluxvm_cli::{parse_arg, parse_entry, EXIT_TRAP};
use fluxvm_mgmt::{serve, DEFAULT_BIND};

#[derive(Parser)]
#[command(name = "fluxvm", version, about = "Run, transform and benchmark fluxvm assembly")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a module.
    Run {
        file: PathBuf,
        /// Entry point as `Class.method`; defaults to the module's `entry`.
        #[arg(long)]
        entry: Option<String>,
        /// Guest argument; repeatable.
        #[arg(long = "arg", allow_hyphen_values = true)]
        args: Vec<String>,
        /// Rewrite invocations to invoke_dynamic before running.
        #[arg(long)]
        transform: bool,
        /// Start the management service on this port while the guest runs.
        #[arg(long)]
        serve: Option<u16>,
        /// Address the management service binds to.
        #[arg(long, env = "FLUXVM_BIND", default_value = DEFAULT_BIND)]
        bind: IpAddr,
        /// Pause this long at every `Sys.tick`, leaving time to patch.
        #[arg(long, default_value_t = 0)]
        tick_ms: u64,
    },
    /// Rewrite a module and write the result as assembly.
    Transform {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, value_enum)]
        report: Option<ReportFormat>,
    },
    /// Run the Fibonacci benchmark.
    Bench {
        #[arg(long, default_value = "classicfibo")]
        variant: Variant,
        #[arg(long, default_value_t = 20)]
        n: i64,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Comma-separated configurations; the first is the baseline.
        #[arg(long, value_delimiter = ',')]
        configs: Vec<Config>,
        #[arg(long, conflicts_with = "table")]
        json: bool,
        #[arg(long)]
        table: bool,
    },
    /// Check a module and list its diagnostics.
    Verify { file: PathBuf },
    /// Print a module as canonical assembly.
    Disasm {
        file: PathBuf,
        #[arg(long)]
        transform: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
}

fn load_checked(path: &Path) -> Result<Module, String> {
    let m = load(path).map_err(|e| e.to_string())?;
    let diags = verify(&m);
    if let Some(first) = diags.first() {
        let rest = diags.len() - 1;
        let more = if rest > 0 { format!(" (+{rest} more)") } else { String::new() };
        return Err(format!("{}: {first}{more}", path.display()));
    }
    Ok(m)
}

fn run_cmd(
    file: &Path,
    entry: Option<String>,
    args: &[String],
    transform: bool,
    serve_port: Option<u16>,
    bind: IpAddr,
    tick_ms: u64,
) -> Result<ExitCode, String> {
    let mut module = load_checked(file)?;
    if transform {
        module = transform_module(module).0;
    }
    let program = Program::link(module).map_err(|e| e.to_string())?;
    let args: Vec<_> = args.iter().map(|a| parse_arg(a)).collect();
    let (class, method) = match entry {
        Some(e) => parse_entry(&e).ok_or_else(|| format!("entry must look like Class.method, got `{e}`"))?,
        None => program
            .module()
            .entry
            .clone()
            .ok_or("module declares no entry; pass --entry")?,
    };
    let id = program
        .find_static(&class, &method, Some(args.len()))
        .ok_or_else(|| format!("no static {class}.{method} taking {} argument(s)", args.len()))?;
    let engine = Engine::new(program.clone());
    let server = match serve_port {
        Some(port) => {
            engine.prelink();
            let s = serve(engine.clone(), SocketAddr::new(bind, port)).map_err(|e| format!("cannot bind: {e}"))?;
            eprintln!("management service on {}", s.url());
            Some(s)
        }
        None => None,
    };
    let mut hooks = RuntimeHooks::with_engine(engine);
    hooks.echo = true;
    if tick_ms > 0 {
        hooks.on_tick = Some(Box::new(move |_| std::thread::sleep(Duration::from_millis(tick_ms))));
    }
    let outcome = run(&program, id, args, hooks);
    drop(server);
    match outcome {
        Ok(r) => {
            if let Some(v) = r.return_value {
                eprintln!("=> {v}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(t) => {
            eprintln!("trap: {}", t.trap);
            Ok(ExitCode::from(EXIT_TRAP as u8))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            file,
            entry,
            args,
            transform,
            serve,
            bind,
            tick_ms,
        } => run_cmd(&file, entry, &args, transform, serve, bind, tick_ms),
        Command::Transform { input, output, report } => (|| {
            let m = load_checked(&input)?;
            let (t, r) = transform_module(m);
            std::fs::write(&output, disassemble(&t)).map_err(|e| format!("{}: {e}", output.display()))?;
            match report {
                Some(ReportFormat::Json) => println!("{}", serde_json::to_string_pretty(&r).unwrap()),
                None => eprintln!(
                    "{} site(s) rewritten in {} method(s) of {} class(es)",
                    r.sites_rewritten.total(),
                    r.methods_transformed,
                    r.classes_transformed
                ),
            }
            Ok(ExitCode::SUCCESS)
        })(),
        Command::Bench {
            variant,
            n,
            runs,
            configs,
            json,
            table: _,
        } => (|| {
            let mut spec = BenchSpec::new(variant, n);
            spec.runs = runs;
            if !configs.is_empty() {
                spec.configs = configs;
            }
            let report = run_benchmark(&spec).map_err(|e| e.to_string())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).unwrap());
            } else {
                print!("{}", render_table(&report));
            }
            Ok(ExitCode::SUCCESS)
        })(),
        Command::Verify { file } => (|| {
            let m = load(&file).map_err(|e| e.to_string())?;
            let diags = verify(&m);
            for d in &diags {
                println!("{}: {d}", file.display());
            }
            if diags.is_empty() {
                println!("{}: ok", file.display());
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::FAILURE)
            }
        })(),
        Command::Disasm { file, transform } => (|| {
            let m = load(&file).map_err(|e| e.to_string())?;
            let m = if transform { transform_module(m).0 } else { m };
            print!("{}", disassemble(&m));
            Ok(ExitCode::SUCCESS)
        })(),
    };
    result.unwrap_or_else(|e| {
        eprintln!("fluxvm: {e}");
        ExitCode::FAILURE
    })
}
