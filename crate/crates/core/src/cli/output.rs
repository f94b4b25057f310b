//! CSV emission: a `#` metadata block followed by one row per measurement.
//!
//! Columns, in order: every scalar leaf of the resolved config as
//! `config.<path>` (arrays of scalars joined with `;`), then `section`,
//! `group`, `protocol`, `m`, `n`, `d`, `b`, `epsilon`, `delta`, `rho`,
//! `metric`, `value`, `mc_stderr`, `flag`, `wall_time`. Empty cells mean
//! "not applicable". Floats use the shortest representation that
//! round-trips, so identical runs give identical bytes.

use std::collections::BTreeMap;

use serde_json::Value;

use super::config::{Resolved, SCHEMA_VERSION};
use crate::error::Result;
use crate::risk_lab::GridPoint;

pub const ROW_COLUMNS: [&str; 15] = [
    "section", "group", "protocol", "m", "n", "d", "b", "epsilon", "delta", "rho", "metric", "value", "mc_stderr", "flag",
    "wall_time",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Row {
    pub section: String,
    pub group: String,
    pub protocol: String,
    pub point: Option<GridPoint>,
    pub rho: Option<f64>,
    pub metric: String,
    pub value: f64,
    pub mc_stderr: Option<f64>,
    pub flag: String,
    pub wall_time: Option<f64>,
}

impl Row {
    pub fn new(section: &str, metric: &str, value: f64) -> Self {
        Row {
            section: section.into(),
            metric: metric.into(),
            value,
            ..Default::default()
        }
    }

    pub fn group(mut self, g: impl Into<String>) -> Self {
        self.group = g.into();
        self
    }

    pub fn protocol(mut self, p: impl Into<String>) -> Self {
        self.protocol = p.into();
        self
    }

    pub fn point(mut self, p: GridPoint) -> Self {
        self.point = Some(p);
        self
    }

    pub fn rho(mut self, r: f64) -> Self {
        self.rho = Some(r);
        self
    }

    pub fn stderr(mut self, se: f64) -> Self {
        self.mc_stderr = Some(se);
        self
    }

    pub fn flag(mut self, f: impl Into<String>) -> Self {
        self.flag = f.into();
        self
    }

    pub fn pass(self, ok: bool) -> Self {
        self.flag(if ok { "pass" } else { "fail" })
    }

    pub fn wall(mut self, t: Option<f64>) -> Self {
        self.wall_time = t;
        self
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some(String::new()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

/// Scalar leaves of a JSON value keyed by dotted path.
pub fn flatten(v: &Value) -> BTreeMap<String, String> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
        let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    walk(&key(k), x, out);
                }
            }
            Value::Array(a) => {
                let cells: Option<Vec<String>> = a.iter().map(scalar).collect();
                match cells {
                    Some(c) => {
                        out.insert(prefix.to_string(), c.join(";"));
                    }
                    None => {
                        for (i, x) in a.iter().enumerate() {
                            walk(&key(&i.to_string()), x, out);
                        }
                    }
                }
            }
            other => {
                out.insert(prefix.to_string(), scalar(other).unwrap_or_default());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", v, &mut out);
    out
}

pub fn metadata(resolved: &Resolved, kind: &str) -> String {
    let mut s = String::new();
    s.push_str(&format!("# schema_version: {SCHEMA_VERSION}\n"));
    s.push_str(&format!("# command: {}\n", resolved.command.name()));
    s.push_str(&format!("# table: {kind}\n"));
    s.push_str(&format!("# config_sha256: {}\n", resolved.hash()));
    s.push_str(&format!("# seed: {}\n", resolved.seed));
    if let Some(p) = &resolved.preset {
        s.push_str(&format!("# preset: {p}\n"));
    }
    s.push_str(&format!("# config: {}\n", resolved.echo));
    s
}

pub fn render(resolved: &Resolved, kind: &str, rows: &[Row]) -> Result<String> {
    let config = flatten(&resolved.echo);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let header: Vec<String> = config
        .keys()
        .map(|k| format!("config.{k}"))
        .chain(ROW_COLUMNS.iter().map(|s| s.to_string()))
        .collect();
    w.write_record(&header)?;
    for r in rows {
        let p = r.point;
        let mut rec: Vec<String> = config.values().cloned().collect();
        rec.extend([
            r.section.clone(),
            r.group.clone(),
            r.protocol.clone(),
            opt(p.map(|p| p.m)),
            opt(p.map(|p| p.n)),
            opt(p.map(|p| p.d)),
            opt(p.and_then(|p| p.b)),
            opt(p.and_then(|p| p.epsilon)),
            opt(p.and_then(|p| p.delta)),
            opt(r.rho),
            r.metric.clone(),
            r.value.to_string(),
            opt(r.mc_stderr),
            r.flag.clone(),
            opt(r.wall_time),
        ]);
        w.write_record(&rec)?;
    }
    let body = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
    let mut out = metadata(resolved, kind);
    out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
    Ok(out)
}
