//! Wide result tables: one row per metric, one column per swept value.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    /// Name of the swept setting, e.g. `beta`.
    pub sweep: String,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
    /// Settings held fixed while the sweep ran.
    pub settings: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub metric: String,
    pub values: Vec<f64>,
}

impl Table {
    pub fn new(name: &str, sweep: &str, columns: Vec<String>) -> Self {
        Self {
            name: name.to_string(),
            sweep: sweep.to_string(),
            columns,
            rows: Vec::new(),
            settings: BTreeMap::new(),
        }
    }

    pub fn setting(mut self, key: &str, value: impl ToString) -> Self {
        self.settings.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push(&mut self, metric: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::DimensionMismatch {
                context: "table row",
                expected: self.columns.len(),
                actual: values.len(),
            });
        }
        self.rows.push(TableRow {
            metric: metric.to_string(),
            values,
        });
        Ok(())
    }

    pub fn row(&self, metric: &str) -> Option<&[f64]> {
        self.rows
            .iter()
            .find(|r| r.metric == metric)
            .map(|r| r.values.as_slice())
    }

    /// Header `metric,<sweep>=<value>,...`; values in `{:e}` so reruns are
    /// byte-identical.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric");
        for c in &self.columns {
            let _ = write!(s, ",{}={c}", self.sweep);
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.metric);
            for v in &r.values {
                let _ = write!(s, ",{v:e}");
            }
            s.push('\n');
        }
        s
    }
}
