//! Plot-ready aggregation of sweep rows: medians over seeds plus the
//! best-chunk extraction.

use std::collections::BTreeMap;
use std::path::Path;

use crate::harness::metrics::{median, read_csv, MetricsRow};

pub const REPORT_CSV_HEADER: &str =
    "objective,attention_mode,chunk_k,decode_steps,median_success_rate,median_mean_fwd_passes,median_wall_ms_per_chunk";

pub const BEST_K_CSV_HEADER: &str =
    "objective,attention_mode,decode_steps,best_k,median_success_rate";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub objective: String,
    pub attention_mode: String,
    pub chunk_k: usize,
    pub decode_steps: usize,
    pub median_success_rate: f64,
    pub median_mean_fwd_passes: f64,
    pub median_wall_ms_per_chunk: f64,
}

/// Median over seeds for every (objective, mode, chunk, steps) group.
/// Failed rows are dropped before aggregation.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(String, String, usize, usize), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.failed) {
        groups
            .entry((r.objective.clone(), r.attention_mode.clone(), r.chunk_k, r.decode_steps))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((objective, attention_mode, chunk_k, decode_steps), rs)| {
            let mut succ: Vec<f64> = rs.iter().map(|r| r.success_rate).collect();
            let mut fwd: Vec<f64> = rs.iter().map(|r| r.mean_fwd_passes).collect();
            let mut wall: Vec<f64> = rs.iter().map(|r| r.wall_ms_per_chunk).collect();
            ReportRow {
                objective,
                attention_mode,
                chunk_k,
                decode_steps,
                median_success_rate: median(&mut succ),
                median_mean_fwd_passes: median(&mut fwd),
                median_wall_ms_per_chunk: median(&mut wall),
            }
        })
        .collect()
}

/// Best chunk size per (objective, mode, decode_steps): argmax of median
/// success; ties break toward the smaller chunk.
pub fn best_k(report: &[ReportRow]) -> Vec<(String, String, usize, usize, f64)> {
    let mut groups: BTreeMap<(String, String, usize), Vec<&ReportRow>> = BTreeMap::new();
    for r in report {
        groups
            .entry((r.objective.clone(), r.attention_mode.clone(), r.decode_steps))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((objective, mode, steps), mut rs)| {
            rs.sort_by_key(|r| r.chunk_k);
            let mut best = rs[0];
            for r in &rs[1..] {
                if r.median_success_rate > best.median_success_rate {
                    best = r;
                }
            }
            (objective, mode, steps, best.chunk_k, best.median_success_rate)
        })
        .collect()
}

/// Read a sweep CSV and emit report.csv plus best_k.csv beside it.
pub fn write_report(sweep_csv: &Path, out_dir: &Path) -> std::io::Result<()> {
    let rows = read_csv(sweep_csv)?;
    let report = aggregate(&rows);
    std::fs::create_dir_all(out_dir)?;
    let mut text = String::from(REPORT_CSV_HEADER);
    text.push('\n');
    for r in &report {
        text.push_str(&format!(
            "{},{},{},{},{:.4},{:.4},{:.3}\n",
            r.objective,
            r.attention_mode,
            r.chunk_k,
            r.decode_steps,
            r.median_success_rate,
            r.median_mean_fwd_passes,
            r.median_wall_ms_per_chunk
        ));
    }
    std::fs::write(out_dir.join("report.csv"), text)?;

    let mut text = String::from(BEST_K_CSV_HEADER);
    text.push('\n');
    for (objective, mode, steps, k, succ) in best_k(&report) {
        text.push_str(&format!("{objective},{mode},{steps},{k},{succ:.4}\n"));
    }
    std::fs::write(out_dir.join("best_k.csv"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(obj: &str, k: usize, seed: u64, succ: f64) -> MetricsRow {
        MetricsRow {
            config_hash: "h".into(),
            objective: obj.into(),
            attention_mode: "bidirectional".into(),
            chunk_k: k,
            execute_m: k,
            decode_steps: 1,
            seed,
            episodes: 10,
            success_rate: succ,
            mean_fwd_passes: 1.0,
            wall_ms_per_chunk: 1.0,
            failed: false,
        }
    }

    #[test]
    fn aggregate_takes_median_over_seeds() {
        let rows = vec![
            row("discrete_diffusion", 4, 0, 0.5),
            row("discrete_diffusion", 4, 1, 0.9),
            row("discrete_diffusion", 4, 2, 0.7),
        ];
        let rep = aggregate(&rows);
        assert_eq!(rep.len(), 1);
        assert!((rep[0].median_success_rate - 0.7).abs() < 1e-9);
    }

    #[test]
    fn best_k_ties_break_to_smaller_chunk() {
        let rows = vec![
            row("l1", 2, 0, 0.8),
            row("l1", 4, 0, 0.8),
            row("l1", 8, 0, 0.6),
        ];
        let rep = aggregate(&rows);
        let best = best_k(&rep);
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].3, 2);
    }
}
