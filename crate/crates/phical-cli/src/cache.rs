//! On-disk module cache: magic bytes `PHICAL\0`, a format version byte, then
//! a JSON payload with the system kind, truncation policy, basis enumeration
//! and the memoized action table.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{json, Value};

use phical::fockrep::{
    build_module, BgModule, Gen, Monomial, ModuleState, SystemKind, TruncPolicy,
};
use phical::scalars::Scalar;
use phical::{Error, Result};

pub const MAGIC: &[u8; 7] = b"PHICAL\0";
pub const VERSION: u8 = 1;

/// Relative cache paths resolve against PHICAL_CACHE_DIR when it is set.
pub fn resolve_path(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Some(dir) = std::env::var_os("PHICAL_CACHE_DIR") {
            return PathBuf::from(dir).join(path);
        }
    }
    path.to_path_buf()
}

fn io_err(e: std::io::Error) -> Error {
    Error::ParseError {
        offset: 0,
        message: format!("cache io: {e}"),
    }
}

fn bad(message: impl Into<String>) -> Error {
    Error::ParseError {
        offset: 0,
        message: message.into(),
    }
}

pub fn mono_value(mono: &Monomial) -> Value {
    Value::Array(
        mono.iter()
            .map(|(g, n)| json!([g.name(), n]))
            .collect(),
    )
}

pub fn state_value(state: &ModuleState) -> Value {
    Value::Array(
        state
            .terms()
            .map(|(mono, c)| json!([mono_value(mono), c.to_string()]))
            .collect(),
    )
}

fn gen_from_name(name: &str) -> Result<Gen> {
    match name {
        "beta" => Ok(Gen::Beta),
        "gamma" => Ok(Gen::Gamma),
        other => Err(bad(format!("unknown generator '{other}'"))),
    }
}

pub fn mono_from_value(v: &Value) -> Result<Monomial> {
    let arr = v.as_array().ok_or_else(|| bad("monomial must be an array"))?;
    arr.iter()
        .map(|pair| {
            let p = pair.as_array().filter(|p| p.len() == 2);
            let p = p.ok_or_else(|| bad("monomial entry must be [gen, mode]"))?;
            let g = gen_from_name(p[0].as_str().unwrap_or_default())?;
            let n = p[1].as_i64().ok_or_else(|| bad("mode must be an integer"))?;
            Ok((g, n))
        })
        .collect()
}

pub fn state_from_value(v: &Value) -> Result<ModuleState> {
    let arr = v.as_array().ok_or_else(|| bad("state must be an array"))?;
    let mut out = ModuleState::zero();
    for term in arr {
        let t = term.as_array().filter(|t| t.len() == 2);
        let t = t.ok_or_else(|| bad("state term must be [monomial, coeff]"))?;
        let mono = mono_from_value(&t[0])?;
        let c: Scalar = t[1]
            .as_str()
            .ok_or_else(|| bad("coefficient must be a string"))?
            .parse()?;
        out = out.add(&ModuleState::monomial(mono, c));
    }
    Ok(out)
}

/// The action entries a cache records: every generator mode in the window
/// applied to every basis monomial, skipping entries the truncation policy
/// cannot represent.
fn action_sweep(
    module: &BgModule,
    basis: &[Monomial],
    window: (i64, i64),
) -> Vec<(Gen, i64, Monomial, ModuleState)> {
    let mut out = Vec::new();
    for g in [Gen::Beta, Gen::Gamma] {
        for n in window.0..=window.1 {
            for mono in basis {
                let st = ModuleState::monomial(mono.clone(), Scalar::one());
                if let Ok(res) = module.act(g, n, &st) {
                    out.push((g, n, mono.clone(), res));
                }
            }
        }
    }
    out
}

pub fn write_cache(path: &Path, kind: &SystemKind, policy: &TruncPolicy) -> Result<()> {
    let module = build_module(kind.clone(), policy.clone())?;
    let weight = (-policy.mode_floor).clamp(0, 6);
    let window = (policy.mode_floor.max(-4), (-policy.mode_floor).min(4));
    let basis = module.basis(weight);
    let actions = action_sweep(&module, &basis, window);
    let payload = json!({
        "schema": "phical/1",
        "kind": kind,
        "policy": policy,
        "weight": weight,
        "window": [window.0, window.1],
        "basis": basis.iter().map(mono_value).collect::<Vec<_>>(),
        "actions": actions
            .iter()
            .map(|(g, n, mono, st)| json!([g.name(), n, mono_value(mono), state_value(st)]))
            .collect::<Vec<_>>(),
    });
    let mut bytes = Vec::with_capacity(64);
    bytes.extend_from_slice(MAGIC);
    bytes.push(VERSION);
    bytes.extend_from_slice(payload.to_string().as_bytes());
    std::fs::write(resolve_path(path), bytes).map_err(io_err)
}

pub struct CacheFile {
    pub kind: SystemKind,
    pub policy: TruncPolicy,
    pub weight: i64,
    pub window: (i64, i64),
    pub basis: Vec<Monomial>,
    pub actions: Vec<(Gen, i64, Monomial, ModuleState)>,
}

pub fn read_cache(path: &Path) -> Result<CacheFile> {
    let bytes = std::fs::read(resolve_path(path)).map_err(io_err)?;
    if bytes.len() < MAGIC.len() + 1 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("not a phical cache file (bad magic)"));
    }
    let version = bytes[MAGIC.len()];
    if version != VERSION {
        return Err(bad(format!("unsupported cache version {version}")));
    }
    let payload: Value = serde_json::from_slice(&bytes[MAGIC.len() + 1..])
        .map_err(|e| bad(format!("cache payload: {e}")))?;
    if payload["schema"] != "phical/1" {
        return Err(bad("cache payload schema mismatch"));
    }
    let kind: SystemKind = serde_json::from_value(payload["kind"].clone())
        .map_err(|e| bad(format!("cache kind: {e}")))?;
    let policy: TruncPolicy = serde_json::from_value(payload["policy"].clone())
        .map_err(|e| bad(format!("cache policy: {e}")))?;
    let weight = payload["weight"]
        .as_i64()
        .ok_or_else(|| bad("cache weight missing"))?;
    let window = match payload["window"].as_array().map(|w| w.as_slice()) {
        Some([lo, hi]) => (
            lo.as_i64().ok_or_else(|| bad("bad window"))?,
            hi.as_i64().ok_or_else(|| bad("bad window"))?,
        ),
        _ => return Err(bad("cache window missing")),
    };
    let basis = payload["basis"]
        .as_array()
        .ok_or_else(|| bad("cache basis missing"))?
        .iter()
        .map(mono_from_value)
        .collect::<Result<Vec<_>>>()?;
    let mut actions = Vec::new();
    for entry in payload["actions"]
        .as_array()
        .ok_or_else(|| bad("cache actions missing"))?
    {
        let e = entry.as_array().filter(|e| e.len() == 4);
        let e = e.ok_or_else(|| bad("action entry must be [gen, n, monomial, state]"))?;
        let g = gen_from_name(e[0].as_str().unwrap_or_default())?;
        let n = e[1].as_i64().ok_or_else(|| bad("action mode must be an integer"))?;
        actions.push((g, n, mono_from_value(&e[2])?, state_from_value(&e[3])?));
    }
    Ok(CacheFile {
        kind,
        policy,
        weight,
        window,
        basis,
        actions,
    })
}

/// Rebuild the module from the cached kind and policy, recompute every cached
/// action and compare bit-exactly, then re-run the relation verifier on the
/// vacuum over the cached mode window.
pub fn verify_cache(cache: &CacheFile) -> Result<phical::report::CheckReport> {
    let module = Arc::new(build_module(cache.kind.clone(), cache.policy.clone())?);
    let mut report = phical::report::CheckReport::passing();
    if module.basis(cache.weight) != cache.basis {
        report.push(
            "basis".to_string(),
            vec![cache.weight],
            "cached basis enumeration differs from rebuild".to_string(),
        );
    }
    let recomputed = action_sweep(&module, &cache.basis, cache.window);
    if recomputed.len() != cache.actions.len() {
        report.push(
            "actions".to_string(),
            vec![recomputed.len() as i64, cache.actions.len() as i64],
            "cached action table has a different entry count".to_string(),
        );
    }
    for ((g1, n1, m1, s1), (g2, n2, m2, s2)) in recomputed.iter().zip(cache.actions.iter()) {
        if (g1, n1, m1) != (g2, n2, m2) || s1 != s2 {
            report.push(
                format!("action {}_{}", g2.name(), n2),
                vec![*n2],
                format!("cached {s2}, recomputed {s1}"),
            );
        }
    }
    let window = (cache.window.0.max(-3), cache.window.1.min(3));
    report.merge(module.verify_relations(&[module.vacuum()], window)?);
    Ok(report)
}
