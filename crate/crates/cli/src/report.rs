//! Run reports: JSON with sorted keys and a single timestamp field.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde_json::{json, Map, Value};

use crate::config::RunConfig;

/// Field holding the only non-deterministic value of a report.
pub const TIMESTAMP_FIELD: &str = "generated_at_unix";

#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// `value <= threshold` when true, `value >= threshold` otherwise.
    pub at_most: bool,
}

impl Gate {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            at_most: true,
        }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            at_most: false,
        }
    }

    pub fn passed(&self) -> bool {
        if self.at_most {
            self.value <= self.threshold
        } else {
            self.value >= self.threshold
        }
    }

    fn to_json(&self) -> Value {
        json!({
            "name": self.name,
            "value": self.value,
            "threshold": self.threshold,
            "comparison": if self.at_most { "<=" } else { ">=" },
            "passed": self.passed(),
        })
    }
}

pub struct Report {
    pub command: String,
    pub gates: Vec<Gate>,
    pub results: Map<String, Value>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            gates: Vec::new(),
            results: Map::new(),
        }
    }

    pub fn insert(&mut self, key: &str, value: impl serde::Serialize) -> Result<()> {
        self.results.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn passed(&self) -> bool {
        self.gates.iter().all(Gate::passed)
    }

    pub fn to_json(&self, config: &RunConfig) -> Value {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        json!({
            "command": self.command,
            "config": config.values(),
            "gates": self.gates.iter().map(Gate::to_json).collect::<Vec<_>>(),
            "passed": self.passed(),
            "results": self.results,
            TIMESTAMP_FIELD: now,
        })
    }

    pub fn write(&self, config: &RunConfig, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json(config))? + "\n";
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// Human-readable summary of a report file; returns its pass flag.
pub fn summarize(value: &Value) -> (String, bool) {
    let mut out = String::new();
    let command = value["command"].as_str().unwrap_or("?");
    let passed = value["passed"].as_bool().unwrap_or(false);
    out.push_str(&format!("{command}: {}\n", if passed { "PASS" } else { "FAIL" }));
    if let Some(gates) = value["gates"].as_array() {
        for g in gates {
            out.push_str(&format!(
                "  gate {:<28} {:>12.6} {} {:<10} {}\n",
                g["name"].as_str().unwrap_or("?"),
                g["value"].as_f64().unwrap_or(f64::NAN),
                g["comparison"].as_str().unwrap_or("?"),
                g["threshold"].as_f64().unwrap_or(f64::NAN),
                if g["passed"].as_bool().unwrap_or(false) { "ok" } else { "FAILED" },
            ));
        }
    }
    if let Some(results) = value["results"].as_object() {
        for (k, v) in results {
            if let Some(line) = headline(v) {
                out.push_str(&format!("  {k}: {line}\n"));
            }
        }
    }
    (out, passed)
}

/// One-line rendering of scalars and distribution reports; `None` for bulk data.
fn headline(v: &Value) -> Option<String> {
    match v {
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Object(o) if o.contains_key("w1") => {
            let masses: Vec<String> = o["mode_masses"]
                .as_array()
                .map(|a| a.iter().map(|m| format!("{:.3}", m.as_f64().unwrap_or(f64::NAN))).collect())
                .unwrap_or_default();
            Some(format!(
                "w1 {:.4}, masses [{}], unassigned {:.3}",
                o["w1"].as_f64().unwrap_or(f64::NAN),
                masses.join(", "),
                o["unassigned"].as_f64().unwrap_or(f64::NAN)
            ))
        }
        _ => None,
    }
}
