use std::collections::BTreeMap;

use super::predicate::resolve_dotted;
use super::StoreError;
use crate::model::{Map, Record, Value};

/// Count, mean and sample standard deviation (n-1 divisor; 0.0 for n=1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl GroupStats {
    pub fn from_values(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { count: n, mean, std }
    }

    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("count".into(), Value::Integer(self.count as i64));
        m.insert("mean".into(), Value::Float(self.mean));
        m.insert("std".into(), Value::Float(self.std));
        Value::Map(m)
    }
}

/// Text key for a group value. Numerically equal Integer and Float values
/// share a key.
pub fn group_key(v: &Value) -> String {
    match v {
        Value::Text(s) => s.clone(),
        Value::Float(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => format!("{}", *f as i64),
        other => other.to_string(),
    }
}

/// Groups `records` by the value at `group_by` and summarizes `target`.
/// Records lacking the group path are left out; a matched record whose
/// target is missing or non-numeric is an error.
pub fn aggregate_records(
    records: &[Record],
    group_by: &str,
    target: &str,
) -> Result<BTreeMap<String, GroupStats>, StoreError> {
    let group_path: Vec<&str> = group_by.split('.').collect();
    let target_path: Vec<&str> = target.split('.').collect();
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        let Some(key) = resolve_dotted(&r.metadata.body, &group_path) else {
            continue;
        };
        let value = resolve_dotted(&r.metadata.body, &target_path);
        let x = value.and_then(Value::as_f64).ok_or_else(|| StoreError::AggregationType {
            uid: r.uid.clone(),
            path: target.to_string(),
            found: value.map_or("missing", Value::kind_name).to_string(),
        })?;
        groups.entry(group_key(key)).or_default().push(x);
    }
    Ok(groups
        .into_iter()
        .map(|(k, xs)| (k, GroupStats::from_values(&xs)))
        .collect())
}
