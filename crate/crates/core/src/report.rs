//! Metric report: per-variable, per-lead table of verification scores,
//! serializable as CSV (one row per variable×lead×metric) and nested JSON.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{normalized_diff, DiffKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub variable: String,
    pub lead_hours: u32,
    pub rmse: Option<f64>,
    pub acc: Option<f64>,
    pub crps: Option<f64>,
    pub spread: Option<f64>,
    pub ssr: Option<f64>,
    /// Keyed by threshold label, e.g. "p90_above".
    #[serde(default)]
    pub brier: BTreeMap<String, f64>,
    /// Normalized differences vs the report's baseline, keyed by metric.
    #[serde(default)]
    pub normalized: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub config_hash: String,
    pub seed: u64,
    /// Name of the baseline forecast set when normalized columns are present.
    pub baseline: Option<String>,
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn new(config_hash: &str, seed: u64, rows: Vec<MetricRow>) -> Self {
        MetricReport {
            config_hash: config_hash.to_string(),
            seed,
            baseline: None,
            rows,
        }
    }

    /// SSR must equal spread / rmse wherever all three are present.
    pub fn validate(&self) -> Result<()> {
        for row in &self.rows {
            if let (Some(ssr), Some(spread), Some(rmse)) = (row.ssr, row.spread, row.rmse) {
                if rmse > 0.0 && (ssr - spread / rmse).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "{} +{}h: ssr {} != spread/rmse {}",
                        row.variable,
                        row.lead_hours,
                        ssr,
                        spread / rmse
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# config_hash={} seed={}{}",
            self.config_hash,
            self.seed,
            match &self.baseline {
                Some(b) => format!(" baseline={b}"),
                None => String::new(),
            }
        )?;
        writeln!(w, "variable,lead_hours,metric,value")?;
        for row in &self.rows {
            let mut emit = |metric: &str, value: f64| -> std::io::Result<()> {
                writeln!(w, "{},{},{},{}", row.variable, row.lead_hours, metric, value)
            };
            for (name, v) in [
                ("rmse", row.rmse),
                ("acc", row.acc),
                ("crps", row.crps),
                ("spread", row.spread),
                ("ssr", row.ssr),
            ] {
                if let Some(v) = v {
                    emit(name, v)?;
                }
            }
            for (label, v) in &row.brier {
                emit(&format!("brier_{label}"), *v)?;
            }
            for (label, v) in &row.normalized {
                emit(&format!("norm_{label}"), *v)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        let f = std::fs::File::create(csv_path)?;
        self.write_csv(std::io::BufWriter::new(f))?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("report serialization: {e}")))?;
        std::fs::write(json_path, json)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<MetricReport> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    fn row(&self, variable: &str, lead_hours: u32) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.variable == variable && r.lead_hours == lead_hours)
    }
}

/// Normalized differences of report `a` against baseline `b`, matched on
/// (variable, lead). ACC uses the (a−b)/(1−b) form; everything else the
/// (a−b)/b form. Cells where the difference is undefined (zero or unit
/// baseline) are skipped.
pub fn normalized_report(
    a: &MetricReport,
    b: &MetricReport,
    baseline_name: &str,
) -> MetricReport {
    let mut rows = Vec::new();
    for ra in &a.rows {
        let Some(rb) = b.row(&ra.variable, ra.lead_hours) else {
            continue;
        };
        let mut normalized = BTreeMap::new();
        let mut put = |name: &str, va: Option<f64>, vb: Option<f64>, kind: DiffKind| {
            if let (Some(va), Some(vb)) = (va, vb) {
                if let Ok(d) = normalized_diff(va, vb, kind) {
                    normalized.insert(name.to_string(), d);
                }
            }
        };
        put("rmse", ra.rmse, rb.rmse, DiffKind::RmseLike);
        put("acc", ra.acc, rb.acc, DiffKind::AccLike);
        put("crps", ra.crps, rb.crps, DiffKind::CrpsLike);
        put("spread", ra.spread, rb.spread, DiffKind::RmseLike);
        put("ssr", ra.ssr, rb.ssr, DiffKind::RmseLike);
        for (label, va) in &ra.brier {
            if let Some(vb) = rb.brier.get(label) {
                if let Ok(d) = normalized_diff(*va, *vb, DiffKind::RmseLike) {
                    normalized.insert(format!("brier_{label}"), d);
                }
            }
        }
        rows.push(MetricRow {
            variable: ra.variable.clone(),
            lead_hours: ra.lead_hours,
            rmse: ra.rmse,
            acc: ra.acc,
            crps: ra.crps,
            spread: ra.spread,
            ssr: ra.ssr,
            brier: ra.brier.clone(),
            normalized,
        });
    }
    MetricReport {
        config_hash: a.config_hash.clone(),
        seed: a.seed,
        baseline: Some(baseline_name.to_string()),
        rows,
    }
}
