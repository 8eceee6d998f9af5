//! Chunk policies: every objective's decoder behind one interface, plus
//! the expert and random baselines.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ar::{ar_decode, ARDecodeConfig, ModelNextTokenCtx};
use crate::codec::{Action, BinCodec, Standardizer, ACTION_DIMS};
use crate::diffusion::{decode, linear_schedule, ModelAnswerCtx, Selection};
use crate::env::manip::{expert_policy, step, ChunkPolicy, EnvError, RolloutCtx};
use crate::heads::{ddpm_sample, flow_sample, DiffusionConfig, FlowConfig, ModelNoise, ModelVelocity};
use crate::layout::{AnswerKind, SequenceLayout};
use crate::model::{AnswerInput, Model};
use crate::sampling::TokenFilter;
use crate::vocab::{ACTION_BINS, ACTION_BIN_BASE};

fn bins_filter() -> TokenFilter {
    TokenFilter::Range { start: ACTION_BIN_BASE, len: ACTION_BINS }
}

fn layout_for(
    model: &Model,
    ctx: &RolloutCtx<'_>,
    answer_len: usize,
    kind: AnswerKind,
) -> Result<SequenceLayout, EnvError> {
    SequenceLayout::new(&model.config, ctx.instruction.to_vec(), answer_len, kind)
        .map_err(|e| EnvError::Policy(e.to_string()))
}

fn proprio_arg(model: &Model, ctx: &RolloutCtx<'_>) -> Option<[f32; ACTION_DIMS]> {
    if model.config.use_proprio {
        Some(ctx.proprio)
    } else {
        None
    }
}

/// Masked-diffusion decoding over action-bin tokens with a fixed number
/// of refinement steps.
pub struct DiffusionPolicy<'a> {
    pub model: &'a Model,
    pub codec: &'a BinCodec,
    pub decode_steps: usize,
    pub selection: Selection,
    pub temperature: f32,
}

impl ChunkPolicy for DiffusionPolicy<'_> {
    fn decode_chunk(
        &mut self,
        ctx: &RolloutCtx<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<Action>, u64), EnvError> {
        let answer_len = ctx.chunk_len * ACTION_DIMS;
        let layout = layout_for(self.model, ctx, answer_len, AnswerKind::ActionTokens)?;
        let mut schedule = linear_schedule(self.decode_steps.min(answer_len), answer_len)
            .map_err(|e| EnvError::Policy(e.to_string()))?;
        schedule.selection = self.selection;
        schedule.temperature = self.temperature;
        let before = self.model.forward_count();
        let mut bound = ModelAnswerCtx {
            model: self.model,
            layout: &layout,
            obs: Some(ctx.obs),
            proprio: proprio_arg(self.model, ctx),
        };
        let tokens = decode(&mut bound, answer_len, &schedule, &bins_filter(), rng)
            .map_err(|e| EnvError::Policy(e.to_string()))?;
        let chunk = self
            .codec
            .decode_chunk(&tokens)
            .map_err(|e| EnvError::Policy(e.to_string()))?;
        Ok((chunk, self.model.forward_count() - before))
    }
}

/// Token-by-token autoregressive decoding; one forward pass per token.
pub struct ArPolicy<'a> {
    pub model: &'a Model,
    pub codec: &'a BinCodec,
    pub temperature: f32,
}

impl ChunkPolicy for ArPolicy<'_> {
    fn decode_chunk(
        &mut self,
        ctx: &RolloutCtx<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<Action>, u64), EnvError> {
        let answer_len = ctx.chunk_len * ACTION_DIMS;
        let layout = layout_for(self.model, ctx, answer_len, AnswerKind::ActionTokens)?;
        let before = self.model.forward_count();
        let mut bound = ModelNextTokenCtx {
            model: self.model,
            layout: &layout,
            obs: Some(ctx.obs),
            proprio: proprio_arg(self.model, ctx),
        };
        let cfg = ARDecodeConfig {
            max_new_tokens: answer_len,
            temperature: self.temperature,
            stop_token: None,
        };
        let tokens = ar_decode(&mut bound, &cfg, &bins_filter(), rng)
            .map_err(|e| EnvError::Policy(e.to_string()))?;
        let chunk = self
            .codec
            .decode_chunk(&tokens)
            .map_err(|e| EnvError::Policy(e.to_string()))?;
        Ok((chunk, self.model.forward_count() - before))
    }
}

/// Single-pass chunk regression (the L1 objective's decoder).
pub struct RegressionPolicy<'a> {
    pub model: &'a Model,
    pub standardizer: &'a Standardizer,
}

impl ChunkPolicy for RegressionPolicy<'_> {
    fn decode_chunk(
        &mut self,
        ctx: &RolloutCtx<'_>,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<Action>, u64), EnvError> {
        let layout = layout_for(self.model, ctx, ctx.chunk_len, AnswerKind::ActionQueries)?;
        let before = self.model.forward_count();
        let mut fp = self
            .model
            .forward(
                &layout,
                Some(ctx.obs),
                proprio_arg(self.model, ctx),
                AnswerInput::Queries { values: None, time: 0.0 },
            )
            .map_err(|e| EnvError::Policy(e.to_string()))?;
        let pred = self
            .model
            .regression(&mut fp)
            .map_err(|e| EnvError::Policy(e.to_string()))?;
        let values = fp.tape.data(pred).to_vec();
        Ok((self.standardizer.invert_chunk(&values), self.model.forward_count() - before))
    }
}

/// Euler-sampled flow-matching decoder.
pub struct FlowPolicy<'a> {
    pub model: &'a Model,
    pub standardizer: &'a Standardizer,
    pub config: FlowConfig,
}

impl ChunkPolicy for FlowPolicy<'_> {
    fn decode_chunk(
        &mut self,
        ctx: &RolloutCtx<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<Action>, u64), EnvError> {
        let layout = layout_for(self.model, ctx, ctx.chunk_len, AnswerKind::ActionQueries)?;
        let before = self.model.forward_count();
        let mut field = ModelVelocity {
            model: self.model,
            layout: &layout,
            obs: Some(ctx.obs),
            proprio: proprio_arg(self.model, ctx),
        };
        let values = flow_sample(&mut field, ctx.chunk_len, &self.config, rng)
            .map_err(|e| EnvError::Policy(e.to_string()))?;
        Ok((self.standardizer.invert_chunk(&values), self.model.forward_count() - before))
    }
}

/// Ancestral continuous-diffusion decoder.
pub struct DdpmPolicy<'a> {
    pub model: &'a Model,
    pub standardizer: &'a Standardizer,
    pub config: DiffusionConfig,
}

impl ChunkPolicy for DdpmPolicy<'_> {
    fn decode_chunk(
        &mut self,
        ctx: &RolloutCtx<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<Action>, u64), EnvError> {
        let layout = layout_for(self.model, ctx, ctx.chunk_len, AnswerKind::ActionQueries)?;
        let before = self.model.forward_count();
        let mut predictor = ModelNoise {
            model: self.model,
            layout: &layout,
            obs: Some(ctx.obs),
            proprio: proprio_arg(self.model, ctx),
        };
        let values = ddpm_sample(&mut predictor, ctx.chunk_len, &self.config, rng)
            .map_err(|e| EnvError::Policy(e.to_string()))?;
        Ok((self.standardizer.invert_chunk(&values), self.model.forward_count() - before))
    }
}

/// Oracle: simulates the expert forward from the true state.
pub struct ExpertOraclePolicy {
    pub noise: f32,
}

impl ChunkPolicy for ExpertOraclePolicy {
    fn decode_chunk(
        &mut self,
        ctx: &RolloutCtx<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<Action>, u64), EnvError> {
        let mut sim = ctx.state.clone();
        let mut out = Vec::with_capacity(ctx.chunk_len);
        for _ in 0..ctx.chunk_len {
            let a = expert_policy(&sim, ctx.task, self.noise, rng);
            step(&mut sim, ctx.task, &a);
            out.push(a);
        }
        Ok((out, 0))
    }
}

/// Uniform-random action baseline.
pub struct RandomPolicy;

impl ChunkPolicy for RandomPolicy {
    fn decode_chunk(
        &mut self,
        ctx: &RolloutCtx<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<Action>, u64), EnvError> {
        let out = (0..ctx.chunk_len)
            .map(|_| Action {
                dx: rng.gen_range(-0.05..0.05),
                dy: rng.gen_range(-0.05..0.05),
                dz: rng.gen_range(-0.05..0.05),
                droll: rng.gen_range(-0.05..0.05),
                dpitch: rng.gen_range(-0.05..0.05),
                dyaw: rng.gen_range(-0.2..0.2),
                grip: rng.gen_range(0.0..1.0),
            })
            .collect();
        Ok((out, 0))
    }
}
