//! Cross-product sweep over chunk sizes, decode steps, and objectives.

use std::collections::BTreeMap;

use crate::codec::{BinCodec, Standardizer, ACTION_DIMS};
use crate::env::manip::TaskKind;
use crate::harness::eval::{build_policy, evaluate_policy, natural_decode_steps, time_chunk_decodes};
use crate::harness::metrics::MetricsRow;
use crate::harness::runconfig::{RunConfig, TaskFamily};
use crate::heads::ObjectiveKind;
use crate::model::Model;

#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub chunks: Vec<usize>,
    pub decode_steps: Vec<usize>,
    pub objectives: Vec<ObjectiveKind>,
}

pub struct SweepArtifacts {
    pub model: Model,
    pub codec: BinCodec,
    pub standardizer: Standardizer,
}

/// One CSV row per (objective, chunk, decode-steps, seed). Settings that
/// fail (for example more refinement steps than answer slots) become
/// failure rows and the sweep continues.
pub fn run_sweep(
    cfg: &RunConfig,
    grid: &SweepGrid,
    artifacts: &BTreeMap<&'static str, SweepArtifacts>,
    master_seed: u64,
) -> Vec<MetricsRow> {
    let family = match cfg.task {
        TaskFamily::GoalMini => TaskKind::GoalMini,
        TaskFamily::LongMini => TaskKind::LongMini,
        TaskFamily::Mixed => TaskKind::GoalMini,
    };
    let horizon = if cfg.horizon > 0 { Some(cfg.horizon) } else { None };
    let mut rows = Vec::new();
    for &objective in &grid.objectives {
        let key = objective.as_str();
        let Some(art) = artifacts.get(key) else {
            continue;
        };
        let steps_list: Vec<usize> = match objective {
            ObjectiveKind::DiscreteDiffusion => grid.decode_steps.clone(),
            other => vec![natural_decode_steps(other, cfg)],
        };
        for &k in &grid.chunks {
            for &s in &steps_list {
                let mut setting = cfg.clone();
                setting.objective = objective;
                setting.model.attention_mode = art.model.config.attention_mode;
                setting.chunk_k = k;
                // execute the full swept chunk unless the base config
                // pins a smaller replan stride
                setting.execute_m =
                    if cfg.execute_m >= cfg.chunk_k { k } else { cfg.execute_m.min(k) };
                setting.decode_steps = s.max(1);
                let hash = setting.hash();
                let answer_len = k * ACTION_DIMS;
                let schedule_invalid =
                    objective == ObjectiveKind::DiscreteDiffusion && s > answer_len;
                for seed_idx in 0..cfg.eval_seeds {
                    let seed = master_seed + seed_idx as u64;
                    let mut row = MetricsRow {
                        config_hash: hash.clone(),
                        objective: objective.as_str().into(),
                        attention_mode: art.model.config.attention_mode.as_str().into(),
                        chunk_k: k,
                        execute_m: setting.execute_m,
                        decode_steps: s,
                        seed,
                        episodes: cfg.episodes,
                        success_rate: f64::NAN,
                        mean_fwd_passes: f64::NAN,
                        wall_ms_per_chunk: f64::NAN,
                        failed: true,
                    };
                    if !schedule_invalid {
                        let mut policy = build_policy(
                            objective,
                            &art.model,
                            &art.codec,
                            &art.standardizer,
                            &setting,
                        );
                        match evaluate_policy(
                            policy.as_mut(),
                            family,
                            k,
                            setting.execute_m,
                            cfg.episodes,
                            seed,
                            horizon,
                        ) {
                            Ok(outcome) => {
                                let wall = if cfg.timing_decodes > 0 && seed_idx == 0 {
                                    time_chunk_decodes(
                                        policy.as_mut(),
                                        family,
                                        k,
                                        seed,
                                        cfg.timing_decodes,
                                        cfg.timing_warmup,
                                    )
                                    .unwrap_or(outcome.mean_wall_ms)
                                } else {
                                    outcome.mean_wall_ms
                                };
                                row.success_rate = outcome.success_rate;
                                row.mean_fwd_passes = outcome.mean_fwd_passes;
                                row.wall_ms_per_chunk = wall;
                                row.failed = false;
                            }
                            Err(_) => {}
                        }
                    }
                    rows.push(row);
                }
            }
        }
    }
    rows
}
