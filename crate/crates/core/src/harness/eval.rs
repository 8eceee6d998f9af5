//! Closed-loop evaluation across seeds and the single-threaded timing
//! harness for chunk decodes.

use chunklab_tensor::rng::{derive_seed, seeded_rng};

use crate::codec::{BinCodec, Standardizer};
use crate::env::manip::{
    render_obs, reset, rollout_policy, sample_task, ChunkPolicy, EnvError, RolloutCtx, TaskKind,
};
use crate::harness::metrics::median;
use crate::harness::policies::{ArPolicy, DdpmPolicy, DiffusionPolicy, FlowPolicy, RegressionPolicy};
use crate::harness::runconfig::RunConfig;
use crate::heads::{DiffusionConfig, FlowConfig, ObjectiveKind};
use crate::model::Model;

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_fwd_passes: f64,
    pub mean_wall_ms: f64,
    pub mean_steps: f64,
}

/// Run `episodes` rollouts for one task family. Episode i derives its
/// task, reset, and decode streams from (seed, i), so results do not
/// depend on scheduling.
pub fn evaluate_policy(
    policy: &mut dyn ChunkPolicy,
    family: TaskKind,
    chunk_k: usize,
    execute_m: usize,
    episodes: usize,
    seed: u64,
    horizon: Option<u32>,
) -> Result<EvalOutcome, EnvError> {
    let mut successes = 0usize;
    let mut fwd_sum = 0.0f64;
    let mut chunk_count = 0usize;
    let mut wall_sum = 0.0f64;
    let mut steps_sum = 0.0f64;
    for ep in 0..episodes {
        let mut task_rng = seeded_rng(seed, "eval-task", ep as u64);
        let mut task = sample_task(family, &mut task_rng);
        if let Some(h) = horizon {
            task.horizon = h;
        }
        let reset_seed = derive_seed(seed, "eval-reset", ep as u64);
        let mut decode_rng = seeded_rng(seed, "eval-decode", ep as u64);
        let rec = rollout_policy(policy, &task, chunk_k, execute_m, reset_seed, &mut decode_rng)?;
        if rec.success {
            successes += 1;
        }
        steps_sum += rec.steps as f64;
        chunk_count += rec.chunks as usize;
        fwd_sum += rec.chunk_fwd_passes.iter().sum::<u64>() as f64;
        wall_sum += rec.chunk_wall_ms.iter().sum::<f64>();
    }
    Ok(EvalOutcome {
        episodes,
        success_rate: successes as f64 / episodes.max(1) as f64,
        mean_fwd_passes: fwd_sum / chunk_count.max(1) as f64,
        mean_wall_ms: wall_sum / chunk_count.max(1) as f64,
        mean_steps: steps_sum / episodes.max(1) as f64,
    })
}

/// Median wall-clock milliseconds per chunk decode over `decodes`
/// measured calls after `warmup` unmeasured ones, single-threaded.
/// Contexts cycle over a small set of freshly reset scenes.
pub fn time_chunk_decodes(
    policy: &mut dyn ChunkPolicy,
    family: TaskKind,
    chunk_k: usize,
    seed: u64,
    decodes: usize,
    warmup: usize,
) -> Result<f64, EnvError> {
    let n_ctx = 16usize;
    let mut contexts = Vec::with_capacity(n_ctx);
    for i in 0..n_ctx {
        let mut task_rng = seeded_rng(seed, "timing-task", i as u64);
        let task = sample_task(family, &mut task_rng);
        let state = reset(&task, derive_seed(seed, "timing-reset", i as u64))?;
        let obs = render_obs(&state);
        contexts.push((task, state, obs));
    }
    let mut rng = seeded_rng(seed, "timing-decode", 0);
    let mut samples = Vec::with_capacity(decodes);
    for i in 0..warmup + decodes {
        let (task, state, obs) = &contexts[i % n_ctx];
        let ctx = RolloutCtx {
            obs,
            proprio: crate::env::manip::proprio(state),
            instruction: &task.instruction,
            chunk_len: chunk_k,
            state,
            task,
        };
        let t0 = std::time::Instant::now();
        let _ = policy.decode_chunk(&ctx, &mut rng)?;
        let ms = t0.elapsed().as_secs_f64() * 1000.0;
        if i >= warmup {
            samples.push(ms);
        }
    }
    Ok(median(&mut samples))
}

/// Construct the evaluation policy for an objective over trained
/// artifacts.
pub fn build_policy<'a>(
    objective: ObjectiveKind,
    model: &'a Model,
    codec: &'a BinCodec,
    standardizer: &'a Standardizer,
    cfg: &RunConfig,
) -> Box<dyn ChunkPolicy + 'a> {
    match objective {
        ObjectiveKind::Discrete => Box::new(ArPolicy { model, codec, temperature: cfg.temperature }),
        ObjectiveKind::DiscreteDiffusion => Box::new(DiffusionPolicy {
            model,
            codec,
            decode_steps: cfg.decode_steps,
            selection: cfg.decode_selection,
            temperature: cfg.temperature,
        }),
        ObjectiveKind::L1 => Box::new(RegressionPolicy { model, standardizer }),
        ObjectiveKind::FlowMatching => Box::new(FlowPolicy {
            model,
            standardizer,
            config: FlowConfig::default(),
        }),
        ObjectiveKind::ContinuousDiffusion => Box::new(DdpmPolicy {
            model,
            standardizer,
            config: DiffusionConfig::default(),
        }),
    }
}

/// Natural decode-step count per objective for reporting.
pub fn natural_decode_steps(objective: ObjectiveKind, cfg: &RunConfig) -> usize {
    match objective {
        ObjectiveKind::Discrete => 0,
        ObjectiveKind::DiscreteDiffusion => cfg.decode_steps,
        ObjectiveKind::L1 => 1,
        ObjectiveKind::FlowMatching => FlowConfig::default().inference_steps,
        ObjectiveKind::ContinuousDiffusion => DiffusionConfig::default().timesteps,
    }
}
