//! Evaluation reports: a CSV per metric and a JSON summary.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: serde_json::Value,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    /// Per-class values keyed by class id; classes without a value are omitted.
    pub per_class: BTreeMap<u32, f64>,
}

impl EvalReport {
    pub fn new(metric: impl Into<String>, value: f64, config: serde_json::Value, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Input(format!("metric value {value} outside [0, 1]")));
        }
        Ok(Self {
            config,
            seed,
            metric: metric.into(),
            value,
            per_class: BTreeMap::new(),
        })
    }

    pub fn with_per_class(mut self, per_class: impl IntoIterator<Item = (u32, f64)>) -> Self {
        self.per_class = per_class.into_iter().collect();
        self
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Input(format!("cannot serialize report: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("report json", e.to_string()))
    }
}

/// `metric,seed,class,value` with `class = all` for the aggregate row.
pub fn write_csv(mut w: impl Write, reports: &[EvalReport]) -> Result<()> {
    writeln!(w, "metric,seed,class,value")?;
    for r in reports {
        writeln!(w, "{},{},all,{}", r.metric, r.seed, r.value)?;
        for (c, v) in &r.per_class {
            writeln!(w, "{},{},{c},{v}", r.metric, r.seed)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean over replicate seeds, keeping every per-seed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicates {
    pub metric: String,
    pub mean: f64,
    pub per_seed: Vec<(u64, f64)>,
}

impl Replicates {
    pub fn from_reports(reports: &[EvalReport]) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Input("no replicate reports to average".into()))?;
        if let Some(other) = reports.iter().find(|r| r.metric != first.metric) {
            return Err(Error::Input(format!(
                "cannot average {} with {}",
                first.metric, other.metric
            )));
        }
        let per_seed: Vec<(u64, f64)> = reports.iter().map(|r| (r.seed, r.value)).collect();
        let mean = per_seed.iter().map(|p| p.1).sum::<f64>() / per_seed.len() as f64;
        Ok(Self {
            metric: first.metric.clone(),
            mean,
            per_seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_has_expected_keys() {
        let r = EvalReport::new("miou", 0.25, serde_json::json!({"mode": "la-points", "budget": 20}), 3)
            .unwrap()
            .with_per_class([(0, 0.5), (1, 0.0)]);
        let text = r.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["config", "seed", "metric", "value", "per_class"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(EvalReport::from_json(&text).unwrap(), r);
    }

    #[test]
    fn csv_rows() {
        let r = EvalReport::new("map50", 1.0, serde_json::Value::Null, 0)
            .unwrap()
            .with_per_class([(4, 1.0)]);
        let mut out = Vec::new();
        write_csv(&mut out, &[r]).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "metric,seed,class,value\nmap50,0,all,1\nmap50,0,4,1\n"
        );
    }

    #[test]
    fn replicate_mean() {
        let mk = |seed, v| EvalReport::new("miou", v, serde_json::Value::Null, seed).unwrap();
        let r = Replicates::from_reports(&[mk(0, 0.2), mk(1, 0.4), mk(2, 0.6)]).unwrap();
        assert!((r.mean - 0.4).abs() < 1e-15);
        assert_eq!(r.per_seed.len(), 3);
        assert!(EvalReport::new("miou", 1.5, serde_json::Value::Null, 0).is_err());
        let other = EvalReport::new("map50", 0.1, serde_json::Value::Null, 0).unwrap();
        assert!(Replicates::from_reports(&[mk(0, 0.2), other]).is_err());
    }
}
