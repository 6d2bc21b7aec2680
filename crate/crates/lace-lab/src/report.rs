//! One-page text summary of a run, built from its manifest and outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Result};
use serde_json::Value;

use crate::output::read_csv;
use crate::run::RunManifest;
use crate::stages::REFERENCE;

/// The report text and whether every listed output was present and intact.
pub struct Report {
    pub text: String,
    pub complete: bool,
}

fn load_json(dir: &Path, name: &str) -> Option<Value> {
    let text = fs::read_to_string(dir.join(name)).ok()?;
    serde_json::from_str(&text).ok()
}

fn f(v: &Value) -> Option<f64> {
    v.as_f64()
}

/// A JSON number in its plain form (`7` rather than `7.0`).
fn plain(v: &Value) -> String {
    v.as_f64().map_or_else(|| v.to_string(), |x| x.to_string())
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.prec$}"),
        _ => "-".into(),
    }
}

/// The hash embedded in an output file, if it has one.
fn embedded_hash(path: &Path) -> Option<String> {
    if path.extension().is_some_and(|e| e == "csv") {
        read_csv(path).ok().map(|c| c.config_hash)
    } else {
        let v: Value = serde_json::from_str(&fs::read_to_string(path).ok()?).ok()?;
        v.get("config_hash")?.as_str().map(str::to_string)
    }
}

pub fn report(manifest_path: &Path) -> Result<Report> {
    let m = RunManifest::load(manifest_path)?;
    if !m.hash_matches() {
        bail!("manifest config hash does not match its embedded config");
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "lace-lab report");
    let _ = writeln!(w, "toolkit  {}", m.toolkit);
    let _ = writeln!(w, "config   {}", m.config_hash);
    let _ = writeln!(w, "seed     {}", m.seed);
    let _ = writeln!(w, "status   {}", m.status.name());
    let _ = writeln!(w);
    let _ = writeln!(w, "Stages");
    if m.stages.is_empty() {
        let _ = writeln!(w, "  none");
    }
    let mut missing = Vec::new();
    let mut mismatched = Vec::new();
    for st in &m.stages {
        let _ = writeln!(w, "  {:<11} {:<6} {}", st.stage, st.status.name(), st.outputs.join(" "));
        if let Some(e) = &st.error {
            let _ = writeln!(w, "    error: {e}");
        }
        for o in &st.outputs {
            let p = dir.join(o);
            if !p.exists() {
                missing.push(o.clone());
            } else if embedded_hash(&p).as_deref() != Some(m.config_hash.as_str()) {
                mismatched.push(o.clone());
            }
        }
    }

    if let Some(o) = load_json(dir, "oracle.json").filter(|_| !missing.contains(&"oracle.json".to_string())) {
        let _ = writeln!(w);
        let _ = writeln!(
            w,
            "Identities (tolerance {:e}, {} grid points)",
            f(&o["tolerance"]).unwrap_or(f64::NAN),
            o["grid_points"]
        );
        let _ = writeln!(w, "  {:<12} {:<18} {:>10}  result", "graph", "identity", "residual");
        for g in o["graphs"].as_array().into_iter().flatten() {
            for r in g["identities"].as_array().into_iter().flatten() {
                let _ = writeln!(
                    w,
                    "  {:<12} {:<18} {:>10.1e}  {}",
                    g["graph"].as_str().unwrap_or("?"),
                    r["identity"].as_str().unwrap_or("?"),
                    f(&r["residual"]).unwrap_or(f64::NAN),
                    if r["pass"].as_bool() == Some(true) { "pass" } else { "FAIL" }
                );
            }
        }
        let ineq = o["inequalities"].as_array().cloned().unwrap_or_default();
        if !ineq.is_empty() {
            let _ = writeln!(w, "Inequalities");
            for r in &ineq {
                let _ = writeln!(
                    w,
                    "  {:<12} {} instances, {} checks, {} violations, min slack {:.1e}  {}",
                    r["inequality"].as_str().unwrap_or("?"),
                    r["instances"],
                    r["checks"],
                    r["violations"],
                    f(&r["min_slack"]).unwrap_or(f64::NAN),
                    if r["pass"].as_bool() == Some(true) { "pass" } else { "FAIL" }
                );
            }
        }
    }

    if let Some(a) = load_json(dir, "analysis.json").filter(|_| !missing.contains(&"analysis.json".to_string())) {
        let _ = writeln!(w);
        let _ = writeln!(w, "Exponents (p = {})", fmt_opt(f(&a["p"]), 6));
        let _ = writeln!(w, "  {:<16} {:>10} {:>10} {:>10}", "quantity", "fitted", "error", "reference");
        let fits = a["fits"].as_array().cloned().unwrap_or_default();
        let lookup = |name: &str| -> (Option<f64>, Option<f64>) {
            for fit in &fits {
                let names = fit["names"].as_array().cloned().unwrap_or_default();
                if let Some(i) = names.iter().position(|n| n == name) {
                    return (f(&fit["parameters"][i]), f(&fit["errors"][i]));
                }
            }
            (None, None)
        };
        for (name, reference) in REFERENCE {
            let (v, e) = lookup(name);
            let label = match name {
                "inverse_delta" => "1/delta",
                "tail_exponent" => "tail exponent",
                other => other,
            };
            let _ = writeln!(w, "  {:<16} {:>10} {:>10} {:>10}", label, fmt_opt(v, 4), fmt_opt(e, 4), reference);
        }
        for (name, label) in [("C", "surface C"), ("D2", "surface D2")] {
            let (v, e) = lookup(name);
            if v.is_some() {
                let _ = writeln!(w, "  {:<16} {:>10} {:>10} {:>10}", label, fmt_opt(v, 4), fmt_opt(e, 4), "-");
            }
        }
        let _ = writeln!(w, "Checks");
        for c in a["checks"].as_array().into_iter().flatten() {
            let _ = writeln!(
                w,
                "  {:<16} {:<5} {}",
                c["name"].as_str().unwrap_or("?"),
                if c["pass"].as_bool() == Some(true) { "pass" } else { "FAIL" },
                c["detail"].as_str().unwrap_or("")
            );
        }
    }

    if let Some(p) = load_json(dir, "powercount.json").filter(|_| !missing.contains(&"powercount.json".to_string())) {
        let _ = writeln!(w);
        let _ = writeln!(w, "Power counting (d = {}, mu = {})", plain(&p["d"]), plain(&p["mu"]));
        let _ = writeln!(w, "  {:<20} {:>2} {:>7} {:>7} {:>5}  verdict", "graph", "L", "deg_0", "deg_mu", "d_c");
        for g in p["graphs"].as_array().into_iter().flatten() {
            let r = &g["report"];
            let deg = |k: &str| fmt_opt(f(&r[k]["value"]), 2);
            let dc = match r["d_c"].as_array() {
                Some(a) if a.len() == 2 && a[1] == 1 => a[0].to_string(),
                Some(a) if a.len() == 2 => format!("{}/{}", a[0], a[1]),
                _ => "none".into(),
            };
            let verdict = match &r["verdict"] {
                Value::String(s) => s.clone(),
                Value::Object(o) => {
                    let (k, v) = o.iter().next().map(|(k, v)| (k.clone(), v.clone())).unwrap_or_default();
                    format!("{k} (rate {}, log power {})", fmt_opt(f(&v["rate_exponent"]), 2), v["log_power"])
                }
                other => other.to_string(),
            };
            let _ = writeln!(
                w,
                "  {:<20} {:>2} {:>7} {:>7} {:>5}  {}",
                g["graph"].as_str().unwrap_or("?"),
                r["loops"],
                deg("deg_0"),
                deg("deg_mu"),
                dc,
                verdict
            );
        }
    }

    if let Some(d) = load_json(dir, "diagrams.json").filter(|_| !missing.contains(&"diagrams.json".to_string())) {
        let ints = d["integrals"].as_array().cloned().unwrap_or_default();
        if !ints.is_empty() {
            let _ = writeln!(w);
            let _ = writeln!(w, "Reference integrals");
            for i in &ints {
                let expected = match &i["expected"] {
                    Value::Object(o) if o.contains_key("Power") => fmt_opt(f(&o["Power"]), 4),
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                let _ = writeln!(
                    w,
                    "  m={} n={} d={}  slope {}  expected {}",
                    plain(&i["m"]),
                    plain(&i["n"]),
                    plain(&i["d"]),
                    fmt_opt(f(&i["slope"]), 4),
                    expected
                );
            }
        }
    }

    let _ = writeln!(w);
    let _ = writeln!(w, "Missing outputs");
    if missing.is_empty() {
        let _ = writeln!(w, "  none");
    }
    for o in &missing {
        let _ = writeln!(w, "  {o}");
    }
    if !mismatched.is_empty() {
        let _ = writeln!(w, "Outputs with a different config hash");
        for o in &mismatched {
            let _ = writeln!(w, "  {o}");
        }
    }
    let complete = missing.is_empty() && mismatched.is_empty();
    Ok(Report { text: s, complete })
}
