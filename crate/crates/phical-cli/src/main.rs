//! phical: command-line front end for the associate / e-product engine.
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 usage or parse error,
//! 3 the computation escaped its truncation window.

mod cache;
mod expr;
mod suites;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use phical::associates::{associate_from_p, inverse_flow_check, verify_associate};
use phical::eops::{default_candidates, find_multiplier, mode, module_field, y_phi_on_state, Phi};
use phical::fockrep::{
    build_module, expansion_coeffs, parse_q_value, Gen, SystemKind, SystemTag, TruncPolicy,
};
use phical::report::CheckReport;
use phical::series::{iota_expand, WindowTable};
use phical::{Error, Result};

const SCHEMA: &str = "phical/1";

#[derive(Parser)]
#[command(name = "phical", version, disable_help_subcommand = true)]
#[command(about = "Exact associate, e-product and beta-gamma module calculator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum SystemArg {
    Trig,
    Rat,
}

impl SystemArg {
    fn tag(self) -> SystemTag {
        match self {
            SystemArg::Trig => SystemTag::Trig,
            SystemArg::Rat => SystemTag::Rat,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GenArg {
    Beta,
    Gamma,
}

impl GenArg {
    fn gen(self) -> Gen {
        match self {
            GenArg::Beta => Gen::Beta,
            GenArg::Gamma => Gen::Gamma,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the associate of a generator p and print its z-rows.
    Associate {
        #[arg(long)]
        p: String,
        #[arg(long, default_value_t = 6)]
        order: i64,
        #[arg(long)]
        json: bool,
    },
    /// Check both associate axioms for the associate of p.
    Verify {
        #[arg(long)]
        p: String,
        #[arg(long, default_value_t = 6)]
        order: i64,
        #[arg(long)]
        json: bool,
    },
    /// Expand a two-variable rational function as an iterated Laurent series.
    Iota {
        #[arg(long)]
        expr: String,
        #[arg(long)]
        outer: String,
        #[arg(long)]
        inner: String,
        #[arg(long, default_value_t = 6)]
        order: i64,
        #[arg(long)]
        json: bool,
    },
    /// Print the exchange expansion coefficients of a system.
    Coeffs {
        #[arg(long, value_enum)]
        system: SystemArg,
        #[arg(long, default_value = "symbolic", allow_hyphen_values = true)]
        q: String,
        #[arg(long, default_value_t = 5)]
        order: i64,
        #[arg(long)]
        json: bool,
    },
    /// Build a beta-gamma module and write its action table to a cache file.
    QbgBuild {
        #[arg(long, value_enum)]
        system: SystemArg,
        #[arg(long, default_value = "symbolic", allow_hyphen_values = true)]
        q: String,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = -4, allow_hyphen_values = true)]
        floor: i64,
        #[arg(long)]
        cache: PathBuf,
    },
    /// Reverify a cached module against a fresh rebuild.
    QbgVerify {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print the header and table sizes of a cache file.
    CacheInfo {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Tabulate Y^e(a, z) b applied to the vacuum on an (x, z) window.
    Yphi {
        #[arg(long, value_enum)]
        system: SystemArg,
        #[arg(long, default_value = "symbolic", allow_hyphen_values = true)]
        q: String,
        #[arg(long, value_enum)]
        a: GenArg,
        #[arg(long, value_enum)]
        b: GenArg,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = -48, allow_hyphen_values = true)]
        floor: i64,
        #[arg(long, default_value_t = -4, allow_hyphen_values = true)]
        xlo: i64,
        #[arg(long, default_value_t = 4, allow_hyphen_values = true)]
        xhi: i64,
        #[arg(long, default_value_t = 4)]
        zorder: i64,
        #[arg(long, default_value_t = 4)]
        d: i64,
        #[arg(long = "k-max", default_value_t = 6)]
        k_max: u32,
        #[arg(long)]
        json: bool,
    },
    /// Apply composite modes (a_n^e b) to the vacuum.
    Modes {
        #[arg(long, value_enum)]
        system: SystemArg,
        #[arg(long, default_value = "symbolic", allow_hyphen_values = true)]
        q: String,
        #[arg(long, value_enum)]
        a: GenArg,
        #[arg(long, value_enum)]
        b: GenArg,
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        nlo: i64,
        #[arg(long, default_value_t = 2, allow_hyphen_values = true)]
        nhi: i64,
        /// Mode slot of the composite field to apply (-1 is the constant slot).
        #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
        m: i64,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = -48, allow_hyphen_values = true)]
        floor: i64,
        #[arg(long, default_value_t = 4)]
        d: i64,
        #[arg(long = "k-max", default_value_t = 6)]
        k_max: u32,
        #[arg(long)]
        json: bool,
    },
    /// Run a named identity suite.
    CheckSuite {
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 8)]
        order: i64,
        #[arg(long, default_value_t = 2)]
        d: i64,
        #[arg(long, value_enum, default_value = "trig")]
        system: SystemArg,
        #[arg(long, default_value = "symbolic", allow_hyphen_values = true)]
        q: String,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::WindowEscape(_) | Error::PrecisionExhausted(_) | Error::NoMultiplierFound => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn parse_err(e: expr::ParseError) -> Error {
    Error::ParseError {
        offset: e.offset,
        message: e.message,
    }
}

fn make_kind(system: SystemArg, q: &str) -> Result<SystemKind> {
    SystemKind::new(system.tag(), parse_q_value(q)?)
}

fn emit(value: Value) {
    println!("{value}");
}

fn report_value(report: &CheckReport) -> Value {
    serde_json::to_value(report).expect("report serializes")
}

fn finish_report(report: CheckReport, json: bool, extra: Value) -> u8 {
    if json {
        let mut v = json!({ "schema": SCHEMA });
        let obj = v.as_object_mut().unwrap();
        if let Value::Object(map) = extra {
            obj.extend(map);
        }
        obj.insert("pass".into(), Value::Bool(report.pass));
        obj.insert(
            "violations".into(),
            report_value(&report)["violations"].clone(),
        );
        emit(v);
    } else {
        if report.pass {
            println!("pass");
        } else {
            println!("FAIL ({} violations)", report.violations.len());
            for v in &report.violations {
                println!("  {} at {:?}: {}", v.context, v.location, v.detail);
            }
        }
    }
    u8::from(!report.pass)
}

fn scalar_table_value(t: &WindowTable) -> Value {
    json!({
        "vars": t.vars(),
        "ranges": t.ranges(),
        "shape": serde_json::to_value(t.shape()).expect("shape serializes"),
        "entries": t
            .entries()
            .filter(|(_, c)| !c.is_zero())
            .map(|(e, c)| json!([e, c.to_string()]))
            .collect::<Vec<_>>(),
    })
}

fn run(cmd: Cmd) -> Result<u8> {
    match cmd {
        Cmd::Associate { p, order, json } => {
            let ast = expr::parse_expr(&p).map_err(parse_err)?;
            let p_series = ast.to_laurent("x").map_err(parse_err)?;
            let assoc = associate_from_p(&p_series, order)?;
            if json {
                emit(json!({
                    "schema": SCHEMA,
                    "command": "associate",
                    "p": ast.to_string(),
                    "order": order,
                    "rows": (0..=order)
                        .map(|n| json!([n, assoc.row(n).to_string()]))
                        .collect::<Vec<_>>(),
                }));
            } else {
                for n in 0..=order {
                    println!("f_{n} = {}", assoc.row(n));
                }
            }
            Ok(0)
        }
        Cmd::Verify { p, order, json } => {
            let ast = expr::parse_expr(&p).map_err(parse_err)?;
            let p_series = ast.to_laurent("x").map_err(parse_err)?;
            let assoc = associate_from_p(&p_series, order)?;
            let mut report = verify_associate(&assoc, order)?;
            report.merge(inverse_flow_check(&assoc, order)?);
            Ok(finish_report(
                report,
                json,
                json!({ "command": "verify", "p": ast.to_string(), "order": order }),
            ))
        }
        Cmd::Iota {
            expr: text,
            outer,
            inner,
            order,
            json,
        } => {
            let ast = expr::parse_expr(&text).map_err(parse_err)?;
            let f = ast.to_rational().map_err(parse_err)?;
            let table = iota_expand(&f, &outer, &inner, order)?;
            if json {
                emit(json!({
                    "schema": SCHEMA,
                    "command": "iota",
                    "expr": ast.to_string(),
                    "outer": outer,
                    "inner": inner,
                    "order": order,
                    "table": scalar_table_value(&table),
                }));
            } else {
                for (e, c) in table.entries().filter(|(_, c)| !c.is_zero()) {
                    println!("{e:?} {c}");
                }
            }
            Ok(0)
        }
        Cmd::Coeffs {
            system,
            q,
            order,
            json,
        } => {
            let kind = make_kind(system, &q)?;
            let c = expansion_coeffs(&kind, order)?;
            if json {
                emit(json!({
                    "schema": SCHEMA,
                    "command": "coeffs",
                    "kind": kind,
                    "coeffs": serde_json::to_value(&c).expect("coeffs serialize"),
                }));
            } else {
                let rows = [
                    ("lambda", &c.lambda),
                    ("lambda'", &c.lambda_prime),
                    ("mu", &c.mu),
                    ("mu'", &c.mu_prime),
                ];
                for (name, seq) in rows {
                    if seq.is_empty() {
                        continue;
                    }
                    let body: Vec<String> = seq.iter().map(|s| s.to_string()).collect();
                    println!("{name}: {}", body.join(", "));
                }
            }
            Ok(0)
        }
        Cmd::QbgBuild {
            system,
            q,
            depth,
            floor,
            cache,
        } => {
            let kind = make_kind(system, &q)?;
            let policy = TruncPolicy::new(depth, floor)?;
            cache::write_cache(&cache, &kind, &policy)?;
            println!("wrote {}", cache::resolve_path(&cache).display());
            Ok(0)
        }
        Cmd::QbgVerify { cache, json } => {
            let file = cache::read_cache(&cache)?;
            let report = cache::verify_cache(&file)?;
            Ok(finish_report(
                report,
                json,
                json!({ "command": "qbg-verify", "kind": file.kind, "policy": file.policy }),
            ))
        }
        Cmd::CacheInfo { cache, json } => {
            let file = cache::read_cache(&cache)?;
            if json {
                emit(json!({
                    "schema": SCHEMA,
                    "command": "cache-info",
                    "kind": file.kind,
                    "policy": file.policy,
                    "weight": file.weight,
                    "window": [file.window.0, file.window.1],
                    "basis_len": file.basis.len(),
                    "actions_len": file.actions.len(),
                }));
            } else {
                println!("kind: {:?} at q = {:?}", file.kind.tag, file.kind.q);
                println!(
                    "policy: depth {} floor {}",
                    file.policy.depth_bound, file.policy.mode_floor
                );
                println!(
                    "basis: {} monomials up to weight {}",
                    file.basis.len(),
                    file.weight
                );
                println!(
                    "actions: {} entries, modes {}..={}",
                    file.actions.len(),
                    file.window.0,
                    file.window.1
                );
            }
            Ok(0)
        }
        Cmd::Yphi {
            system,
            q,
            a,
            b,
            depth,
            floor,
            xlo,
            xhi,
            zorder,
            d,
            k_max,
            json,
        } => {
            let kind = make_kind(system, &q)?;
            let module = Arc::new(build_module(kind, TruncPolicy::new(depth, floor)?)?);
            let af = module_field(&module, a.gen());
            let bf = module_field(&module, b.gen());
            let qs = module.kind().q_scalar();
            let vac = module.vacuum();
            let cands = default_candidates(&qs, k_max);
            let (cert, _) = find_multiplier(&af, &bf, &[vac.clone()], &cands, d)?;
            let table = y_phi_on_state(&af, &bf, &Phi::Xez, &cert, &vac, (xlo, xhi), zorder)?;
            if json {
                emit(json!({
                    "schema": SCHEMA,
                    "command": "yphi",
                    "pair": [a.gen().name(), b.gen().name()],
                    "multiplier": cert.multiplier().describe(),
                    "vars": table.vars(),
                    "ranges": table.ranges(),
                    "entries": table
                        .entries()
                        .filter(|(_, v)| !v.is_zero())
                        .map(|(e, v)| json!([e, cache::state_value(v)]))
                        .collect::<Vec<_>>(),
                }));
            } else {
                println!("multiplier: {}", cert.multiplier().describe());
                for (e, v) in table.entries().filter(|(_, v)| !v.is_zero()) {
                    println!("x^{} z^{}: {v}", e[0], e[1]);
                }
            }
            Ok(0)
        }
        Cmd::Modes {
            system,
            q,
            a,
            b,
            nlo,
            nhi,
            m,
            depth,
            floor,
            d,
            k_max,
            json,
        } => {
            let kind = make_kind(system, &q)?;
            let module = Arc::new(build_module(kind, TruncPolicy::new(depth, floor)?)?);
            let af = module_field(&module, a.gen());
            let bf = module_field(&module, b.gen());
            let qs = module.kind().q_scalar();
            let vac = module.vacuum();
            let cands = default_candidates(&qs, k_max);
            let (cert, _) = find_multiplier(&af, &bf, &[vac.clone()], &cands, d)?;
            let mut rows = Vec::new();
            for n in nlo..=nhi {
                let f = mode(&af, n, &bf, &Phi::Xez, &cert);
                let st = f.apply(m, &vac)?;
                rows.push((n, st));
            }
            if json {
                emit(json!({
                    "schema": SCHEMA,
                    "command": "modes",
                    "pair": [a.gen().name(), b.gen().name()],
                    "slot": m,
                    "states": rows
                        .iter()
                        .map(|(n, st)| json!([n, cache::state_value(st)]))
                        .collect::<Vec<_>>(),
                }));
            } else {
                for (n, st) in &rows {
                    println!("({}_{{{n}}}{}) slot {m}: {st}", a.gen().name(), b.gen().name());
                }
            }
            Ok(0)
        }
        Cmd::CheckSuite {
            name,
            order,
            d,
            system,
            q,
            json,
        } => {
            let kind = make_kind(system, &q)?;
            let report = suites::run_suite(&name, order, d, &kind)?;
            Ok(finish_report(
                report,
                json,
                json!({ "command": "check-suite", "name": name, "order": order, "d": d }),
            ))
        }
    }
}
