//! Per-cycle records, CSV output and the post-burn-in summary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::HarnessError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Analysis,
    Forecast,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Analysis => "analysis",
            Phase::Forecast => "forecast",
        }
    }
}

/// Scores of one method at one cycle and lead.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle: usize,
    pub phase: Phase,
    pub method: String,
    pub lead: f64,
    pub rmse: f64,
    pub crps: f64,
    pub lambda: Option<f64>,
    pub q_traces: Vec<f64>,
    pub rmse_x: Option<f64>,
    pub rmse_y: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9e}")).unwrap_or_default()
}

/// Writes `records` as CSV with a fixed header; `qtrace_k` columns cover the
/// largest model count present.
pub fn write_csv(records: &[CycleRecord], path: &Path) -> Result<(), HarnessError> {
    let models = records.iter().map(|r| r.q_traces.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Io(e.to_string()))?;
    let mut header: Vec<String> = ["schema_version", "cycle", "phase", "method", "lead", "rmse", "crps", "lambda"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=models).map(|k| format!("qtrace_{k}")));
    header.push("rmse_x".into());
    header.push("rmse_y".into());
    w.write_record(&header).map_err(|e| HarnessError::Io(e.to_string()))?;
    for r in records {
        let mut row = vec![
            SCHEMA_VERSION.to_string(),
            r.cycle.to_string(),
            r.phase.as_str().to_string(),
            r.method.clone(),
            format!("{}", r.lead),
            format!("{:.9e}", r.rmse),
            format!("{:.9e}", r.crps),
            opt(r.lambda),
        ];
        row.extend((0..models).map(|k| opt(r.q_traces.get(k).copied())));
        row.push(opt(r.rmse_x));
        row.push(opt(r.rmse_y));
        w.write_record(&row).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))
}

/// Mean and standard error of the time mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, stderr, count: n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub method: String,
    pub phase: Phase,
    pub lead: f64,
    pub metrics: BTreeMap<String, Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub cycles: usize,
    pub burn_in: usize,
    pub entries: Vec<SummaryEntry>,
}

impl Summary {
    /// Statistics over cycles `> burn_in`, grouped by (method, phase, lead)
    /// in first-appearance order.
    pub fn from_records(name: &str, seed: u64, cycles: usize, burn_in: usize, records: &[CycleRecord]) -> Summary {
        let mut keys: Vec<(String, Phase, u64)> = Vec::new();
        let mut groups: BTreeMap<(String, Phase, u64), Vec<&CycleRecord>> = BTreeMap::new();
        for r in records.iter().filter(|r| r.cycle > burn_in) {
            let key = (r.method.clone(), r.phase, r.lead.to_bits());
            let entry = groups.entry(key.clone()).or_default();
            if entry.is_empty() {
                keys.push(key);
            }
            entry.push(r);
        }
        let entries = keys
            .into_iter()
            .map(|key| {
                let rs = &groups[&key];
                let mut metrics = BTreeMap::new();
                let mut put = |name: &str, values: Vec<f64>| {
                    if let Some(s) = Stat::of(&values) {
                        metrics.insert(name.to_string(), s);
                    }
                };
                put("rmse", rs.iter().map(|r| r.rmse).collect());
                put("crps", rs.iter().map(|r| r.crps).collect());
                put("rmse_x", rs.iter().filter_map(|r| r.rmse_x).collect());
                put("rmse_y", rs.iter().filter_map(|r| r.rmse_y).collect());
                put("lambda", rs.iter().filter_map(|r| r.lambda).collect());
                SummaryEntry {
                    method: key.0,
                    phase: key.1,
                    lead: f64::from_bits(key.2),
                    metrics,
                }
            })
            .collect();
        Summary {
            schema_version: SCHEMA_VERSION,
            name: name.to_string(),
            seed,
            cycles,
            burn_in,
            entries,
        }
    }

    pub fn get(&self, method: &str, phase: Phase, lead: f64) -> Option<&SummaryEntry> {
        self.entries
            .iter()
            .find(|e| e.method == method && e.phase == phase && (e.lead - lead).abs() < 1e-9)
    }

    /// Mean of `metric` for one (method, phase, lead).
    pub fn mean(&self, method: &str, phase: Phase, lead: f64, metric: &str) -> Option<f64> {
        self.get(method, phase, lead)?.metrics.get(metric).map(|s| s.mean)
    }

    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.method) {
                out.push(e.method.clone());
            }
        }
        out
    }
}

/// Writes `records.csv` and `summary.json` into `dir`.
pub fn write_records(records: &[CycleRecord], summary: &Summary, dir: &Path) -> Result<(PathBuf, PathBuf), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    let csv_path = dir.join("records.csv");
    let json_path = dir.join("summary.json");
    write_csv(records, &csv_path)?;
    let json = serde_json::to_string_pretty(summary).map_err(|e| HarnessError::Io(e.to_string()))?;
    std::fs::write(&json_path, json + "\n").map_err(|e| HarnessError::Io(format!("{}: {e}", json_path.display())))?;
    Ok((csv_path, json_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(cycle: usize, method: &str, crps: f64) -> CycleRecord {
        CycleRecord {
            cycle,
            phase: Phase::Analysis,
            method: method.into(),
            lead: 0.0,
            rmse: 2.0 * crps,
            crps,
            lambda: Some(1.0),
            q_traces: vec![0.5],
            rmse_x: None,
            rmse_y: None,
        }
    }

    #[test]
    fn summary_skips_burn_in_and_matches_columns() {
        let rs: Vec<CycleRecord> = (1..=6).map(|c| record(c, "a", c as f64)).collect();
        let s = Summary::from_records("t", 1, 6, 3, &rs);
        let e = s.get("a", Phase::Analysis, 0.0).unwrap();
        let crps = e.metrics["crps"];
        assert_eq!(crps.count, 3);
        assert!((crps.mean - 5.0).abs() < 1e-12);
        assert!((crps.stderr - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((e.metrics["rmse"].mean - 10.0).abs() < 1e-12);
        assert!(!e.metrics.contains_key("rmse_x"));
    }

    #[test]
    fn csv_has_fixed_header() {
        let dir = std::env::temp_dir().join(format!("mmkf-out-{}", std::process::id()));
        let rs = vec![record(1, "a", 0.5)];
        let s = Summary::from_records("t", 1, 1, 0, &rs);
        let (csv_path, json_path) = write_records(&rs, &s, &dir).unwrap();
        let text = std::fs::read_to_string(csv_path).unwrap();
        assert!(text.starts_with("schema_version,cycle,phase,method,lead,rmse,crps,lambda,qtrace_1,rmse_x,rmse_y\n"));
        let back: Summary = serde_json::from_str(&std::fs::read_to_string(json_path).unwrap()).unwrap();
        assert_eq!(back, s);
        std::fs::remove_dir_all(dir).ok();
    }
}
