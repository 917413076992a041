//! Machine-readable experiment output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub value: f64,
}

/// A small table with named columns; cells are JSON scalars.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Shape {
                op: "table row",
                left: (1, row.len()),
                right: (1, self.columns.len()),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(cell_text))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn cell_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// Everything one run produces except wall-clock time, which is kept out of
/// the serialized form so reruns are byte-identical.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub config: Value,
    pub metrics: BTreeMap<String, f64>,
    /// Named pass/fail outcomes of theory assertions.
    pub checks: BTreeMap<String, bool>,
    pub arrays: BTreeMap<String, Vec<f64>>,
    pub matrices: BTreeMap<String, Matrix>,
    pub curves: BTreeMap<String, Vec<CurvePoint>>,
    pub tables: BTreeMap<String, Table>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    pub fn new<C: Serialize>(experiment: &str, seed: u64, config: &C) -> Result<Self> {
        Ok(ExperimentReport {
            experiment: experiment.to_string(),
            seed,
            config: serde_json::to_value(config)?,
            ..Default::default()
        })
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn check(&mut self, name: impl Into<String>, ok: bool) {
        self.checks.insert(name.into(), ok);
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        self.metrics
            .get(name)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("report has no metric `{name}`")))
    }

    pub fn failed_checks(&self) -> Vec<&str> {
        self.checks.iter().filter(|(_, ok)| !**ok).map(|(k, _)| k.as_str()).collect()
    }

    /// Fails on the first NaN or infinity anywhere in the numeric payload.
    pub fn ensure_finite(&self) -> Result<()> {
        let bad = |what: &str, name: &str| Err(Error::Numeric(format!("{what} `{name}` is not finite")));
        for (k, v) in &self.metrics {
            if !v.is_finite() {
                return bad("metric", k);
            }
        }
        for (k, v) in &self.arrays {
            if v.iter().any(|x| !x.is_finite()) {
                return bad("array", k);
            }
        }
        for (k, m) in &self.matrices {
            if !m.is_finite() {
                return bad("matrix", k);
            }
        }
        for (k, c) in &self.curves {
            if c.iter().any(|p| !p.value.is_finite()) {
                return bad("curve", k);
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// `{"wall_clock_secs": …}`.
    pub fn write_timing(&self, path: &Path) -> Result<()> {
        let v = serde_json::json!({ "wall_clock_secs": self.wall_clock_secs });
        std::fs::write(path, serde_json::to_string_pretty(&v)? + "\n")?;
        Ok(())
    }

    /// Long format `step,metric,value`: curve points carry their step,
    /// scalar metrics and array entries leave it empty.
    pub fn write_metrics_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "metric", "value"])?;
        for (name, curve) in &self.curves {
            for p in curve {
                w.write_record([p.step.to_string(), name.clone(), p.value.to_string()])?;
            }
        }
        for (name, v) in &self.metrics {
            w.write_record([String::new(), name.clone(), v.to_string()])?;
        }
        for (name, arr) in &self.arrays {
            for (i, v) in arr.iter().enumerate() {
                w.write_record([String::new(), format!("{name}[{i}]"), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// A matrix as CSV: header `0,1,…`, then one line per row.
pub fn write_matrix_csv<W: Write>(m: &Matrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..m.cols()).map(|c| c.to_string()))?;
    for r in 0..m.rows() {
        w.write_record(m.row(r).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentReport {
        let mut r = ExperimentReport::new("demo", 7, &serde_json::json!({"steps": 2})).unwrap();
        r.metric("loss", 0.5);
        r.curves.insert(
            "loss".into(),
            vec![CurvePoint { step: 0, value: 1.0 }, CurvePoint { step: 1, value: 0.5 }],
        );
        r.arrays.insert("tau".into(), vec![1.0, 2.0]);
        r.wall_clock_secs = 3.0;
        r
    }

    #[test]
    fn json_round_trip_drops_wall_clock() {
        let r = sample();
        let back: ExperimentReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back.metrics, r.metrics);
        assert_eq!(back.curves, r.curves);
        assert_eq!(back.wall_clock_secs, 0.0);
        assert!(!r.to_json().unwrap().contains("wall_clock"));
    }

    #[test]
    fn metrics_csv_is_long_format() {
        let mut buf = Vec::new();
        sample().write_metrics_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,metric,value");
        assert_eq!(lines[1], "0,loss,1");
        assert!(lines.contains(&",loss,0.5"));
        assert!(lines.contains(&",tau[1],2"));
    }

    #[test]
    fn non_finite_metrics_are_caught() {
        let mut r = sample();
        assert!(r.ensure_finite().is_ok());
        r.metric("bad", f64::NAN);
        assert!(r.ensure_finite().is_err());
    }

    #[test]
    fn table_quotes_commas() {
        let mut t = Table::new(["name", "value"]);
        t.push(vec![Value::from("a,b"), Value::from(1.5)]).unwrap();
        assert!(t.push(vec![Value::from(1)]).is_err());
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "name,value\n\"a,b\",1.5\n");
    }
}
