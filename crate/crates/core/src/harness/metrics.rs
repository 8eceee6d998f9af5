//! Metrics rows and the fixed-format CSV / JSONL emitters.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Exact sweep/eval CSV header; every writer and reader pins it.
pub const SWEEP_CSV_HEADER: &str = "config_hash,objective,attention_mode,chunk_k,execute_m,decode_steps,seed,episodes,success_rate,mean_fwd_passes,wall_ms_per_chunk";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub config_hash: String,
    pub objective: String,
    pub attention_mode: String,
    pub chunk_k: usize,
    pub execute_m: usize,
    pub decode_steps: usize,
    pub seed: u64,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_fwd_passes: f64,
    pub wall_ms_per_chunk: f64,
    /// Set on failed settings; metric columns are left empty.
    pub failed: bool,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        if self.failed {
            format!(
                "{},{},{},{},{},{},{},{},,,",
                self.config_hash,
                self.objective,
                self.attention_mode,
                self.chunk_k,
                self.execute_m,
                self.decode_steps,
                self.seed,
                self.episodes
            )
        } else {
            format!(
                "{},{},{},{},{},{},{},{},{:.4},{:.4},{:.3}",
                self.config_hash,
                self.objective,
                self.attention_mode,
                self.chunk_k,
                self.execute_m,
                self.decode_steps,
                self.seed,
                self.episodes,
                self.success_rate,
                self.mean_fwd_passes,
                self.wall_ms_per_chunk
            )
        }
    }

    pub fn parse_csv_line(line: &str) -> Option<MetricsRow> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return None;
        }
        let failed = f[8].is_empty();
        Some(MetricsRow {
            config_hash: f[0].to_string(),
            objective: f[1].to_string(),
            attention_mode: f[2].to_string(),
            chunk_k: f[3].parse().ok()?,
            execute_m: f[4].parse().ok()?,
            decode_steps: f[5].parse().ok()?,
            seed: f[6].parse().ok()?,
            episodes: f[7].parse().ok()?,
            success_rate: if failed { f64::NAN } else { f[8].parse().ok()? },
            mean_fwd_passes: if failed { f64::NAN } else { f[9].parse().ok()? },
            wall_ms_per_chunk: if failed { f64::NAN } else { f[10].parse().ok()? },
            failed,
        })
    }
}

pub fn write_csv(path: &Path, rows: &[MetricsRow]) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    std::fs::write(path, out)
}

pub fn read_csv(path: &Path) -> std::io::Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != SWEEP_CSV_HEADER {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unexpected CSV header: {header}"),
        ));
    }
    Ok(lines.filter_map(MetricsRow::parse_csv_line).collect())
}

/// One loss-curve record, appended every 50 steps.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub config_hash: String,
    pub init: String,
}

pub struct JsonlWriter {
    file: std::fs::File,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> std::io::Result<JsonlWriter> {
        Ok(JsonlWriter { file: std::fs::File::create(path)? })
    }

    pub fn append(&mut self, record: &LossRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(record)?;
        writeln!(self.file, "{line}")
    }
}

pub fn read_loss_curve(path: &Path) -> std::io::Result<Vec<LossRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
        .collect()
}

/// Median helper used by the reporting layer: mean of the middle pair
/// for even counts.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let row = MetricsRow {
            config_hash: "abc123".into(),
            objective: "discrete_diffusion".into(),
            attention_mode: "bidirectional".into(),
            chunk_k: 12,
            execute_m: 12,
            decode_steps: 1,
            seed: 7,
            episodes: 100,
            success_rate: 0.85,
            mean_fwd_passes: 1.0,
            wall_ms_per_chunk: 3.25,
            failed: false,
        };
        let dir = std::env::temp_dir().join("chunklab-metrics-test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("rows.csv");
        write_csv(&p, &[row.clone()]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(SWEEP_CSV_HEADER));
        let rows = read_csv(&p).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].config_hash, row.config_hash);
        assert!((rows[0].success_rate - 0.85).abs() < 1e-9);
    }

    #[test]
    fn failed_rows_have_empty_metric_fields() {
        let row = MetricsRow {
            config_hash: "h".into(),
            objective: "l1".into(),
            attention_mode: "bidirectional".into(),
            chunk_k: 2,
            execute_m: 2,
            decode_steps: 9,
            seed: 0,
            episodes: 10,
            success_rate: f64::NAN,
            mean_fwd_passes: f64::NAN,
            wall_ms_per_chunk: f64::NAN,
            failed: true,
        };
        let line = row.to_csv_line();
        assert!(line.ends_with(",,,"));
        let parsed = MetricsRow::parse_csv_line(&line).unwrap();
        assert!(parsed.failed);
    }

    #[test]
    fn median_behaviour() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
