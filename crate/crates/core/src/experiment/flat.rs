//! JSON value <-> two-column CSV of leaf paths.
//!
//! Paths use `.key` for object members and `[i]` for array elements, e.g.
//! `auroc_table.per_post[0][1][2]`. Values are JSON scalars; empty
//! containers are written as `[]` or `{}`.

use serde_json::{Map, Value};

fn flatten(path: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, child) in m {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                flatten(&p, child, out);
            }
        }
        Value::Array(a) if !a.is_empty() => {
            for (i, child) in a.iter().enumerate() {
                flatten(&format!("{path}[{i}]"), child, out);
            }
        }
        leaf => out.push((path.to_string(), leaf.to_string())),
    }
}

pub fn to_flat_csv(v: &Value) -> String {
    let mut rows = Vec::new();
    flatten("", v, &mut rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["path", "value"]).expect("in-memory write");
    for (p, val) in rows {
        w.write_record([p, val]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV of UTF-8 fields")
}

enum Step {
    Key(String),
    Index(usize),
}

fn parse_path(path: &str) -> Result<Vec<Step>, String> {
    let mut steps = Vec::new();
    let mut rest = path;
    while !rest.is_empty() {
        if let Some(r) = rest.strip_prefix('[') {
            let end = r.find(']').ok_or_else(|| format!("unclosed index in {path:?}"))?;
            steps.push(Step::Index(r[..end].parse().map_err(|_| format!("bad index in {path:?}"))?));
            rest = &r[end + 1..];
        } else {
            let r = rest.strip_prefix('.').unwrap_or(rest);
            let end = r.find(['.', '[']).unwrap_or(r.len());
            steps.push(Step::Key(r[..end].to_string()));
            rest = &r[end..];
        }
    }
    Ok(steps)
}

fn insert(slot: &mut Value, steps: &[Step], leaf: Value) -> Result<(), String> {
    let Some((first, rest)) = steps.split_first() else {
        *slot = leaf;
        return Ok(());
    };
    match first {
        Step::Key(k) => {
            if slot.is_null() {
                *slot = Value::Object(Map::new());
            }
            let m = slot.as_object_mut().ok_or("path mixes object and array")?;
            insert(m.entry(k.clone()).or_insert(Value::Null), rest, leaf)
        }
        Step::Index(i) => {
            if slot.is_null() {
                *slot = Value::Array(Vec::new());
            }
            let a = slot.as_array_mut().ok_or("path mixes object and array")?;
            if *i > a.len() {
                return Err("array indices out of order".into());
            }
            if *i == a.len() {
                a.push(Value::Null);
            }
            insert(&mut a[*i], rest, leaf)
        }
    }
}

pub fn from_flat_csv(text: &str) -> Result<Value, String> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut root = Value::Null;
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let (path, raw) = (rec.get(0).unwrap_or(""), rec.get(1).ok_or("row without a value")?);
        let leaf: Value = serde_json::from_str(raw).map_err(|e| format!("{path}: {e}"))?;
        insert(&mut root, &parse_path(path)?, leaf)?;
    }
    Ok(root)
}
