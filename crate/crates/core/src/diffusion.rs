//! Masked-diffusion training objective and iterative parallel decoding.
//!
//! Forward process: each answer token is independently replaced by MASK
//! with probability t. The loss reconstructs masked tokens and weights
//! them by 1/(t*L). Decoding starts fully masked and commits the most
//! confident positions per step; committed tokens never change.

use chunklab_tensor::graph::NodeId;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::layout::SequenceLayout;
use crate::model::{AnswerInput, ForwardPass, Model, ModelError};
use crate::sampling::{argmax_prob, filtered_probs, sample_token, TokenFilter};
use crate::vocab::MASK;

#[derive(Debug)]
pub enum DiffusionError {
    Parameter(String),
    Schedule(String),
    Model(ModelError),
    Internal(String),
}

impl std::fmt::Display for DiffusionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DiffusionError::Parameter(m) => write!(f, "parameter error: {m}"),
            DiffusionError::Schedule(m) => write!(f, "schedule error: {m}"),
            DiffusionError::Model(e) => write!(f, "{e}"),
            DiffusionError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for DiffusionError {}

impl From<ModelError> for DiffusionError {
    fn from(e: ModelError) -> Self {
        DiffusionError::Model(e)
    }
}

pub type Result<T> = std::result::Result<T, DiffusionError>;

/// One corrupted training example over the answer region only; prompt
/// segments are untouched by construction.
#[derive(Debug, Clone)]
pub struct MaskedBatch {
    pub corrupted: Vec<u32>,
    pub mask: Vec<bool>,
    pub t: f32,
    pub targets: Vec<u32>,
}

impl MaskedBatch {
    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Independently mask each answer token with probability t. A draw that
/// masks nothing forces one uniformly chosen position so every example
/// carries gradient.
pub fn apply_forward_masking(targets: &[u32], t: f32, rng: &mut ChaCha8Rng) -> Result<MaskedBatch> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(DiffusionError::Parameter(format!("mask ratio t={t} outside (0,1]")));
    }
    if targets.is_empty() {
        return Err(DiffusionError::Parameter("empty target region".into()));
    }
    if targets.contains(&MASK) {
        return Err(DiffusionError::Parameter("targets must not contain MASK".into()));
    }
    let mut corrupted = targets.to_vec();
    let mut mask = vec![false; targets.len()];
    for i in 0..targets.len() {
        if rng.gen::<f32>() < t {
            mask[i] = true;
            corrupted[i] = MASK;
        }
    }
    if !mask.iter().any(|&m| m) {
        let forced = rng.gen_range(0..targets.len());
        mask[forced] = true;
        corrupted[forced] = MASK;
    }
    Ok(MaskedBatch { corrupted, mask, t, targets: targets.to_vec() })
}

/// Loss node for one example: (1/(t*L)) * sum over masked positions of
/// cross entropy. `logits` holds one row per masked position.
pub fn masked_diffusion_loss(
    fp: &mut ForwardPass,
    logits: NodeId,
    batch: &MaskedBatch,
) -> Result<NodeId> {
    let masked_targets: Vec<usize> = batch
        .mask
        .iter()
        .zip(&batch.targets)
        .filter(|(m, _)| **m)
        .map(|(_, &t)| t as usize)
        .collect();
    if masked_targets.is_empty() {
        return Err(DiffusionError::Internal("empty mask set in loss".into()));
    }
    let rows = fp.tape.shape(logits)[0];
    if rows != masked_targets.len() {
        return Err(DiffusionError::Internal(format!(
            "{rows} logit rows vs {} masked targets",
            masked_targets.len()
        )));
    }
    let ce = fp
        .tape
        .ce_rows(logits, &masked_targets)
        .map_err(|e| DiffusionError::Model(ModelError::Tensor(e)))?;
    let l = batch.targets.len() as f32;
    let w = vec![1.0 / (batch.t * l); masked_targets.len()];
    fp.tape
        .weighted_sum(ce, &w)
        .map_err(|e| DiffusionError::Model(ModelError::Tensor(e)))
}

/// Full per-example training graph: sample t, corrupt, forward, loss.
///
/// t is uniform on [1/L, 1]: flooring at one expected masked token keeps
/// the 1/(t*L) importance weight bounded by 1. Unfloored draws give the
/// estimator unbounded variance, which destabilizes small-batch training.
pub fn diffusion_example_loss(
    model: &Model,
    layout: &SequenceLayout,
    obs: Option<&[f32]>,
    proprio: Option<[f32; 7]>,
    targets: &[u32],
    rng: &mut ChaCha8Rng,
) -> Result<(ForwardPass, NodeId)> {
    if targets.len() != layout.answer_len {
        return Err(DiffusionError::Parameter(format!(
            "target length {} != answer capacity {}",
            targets.len(),
            layout.answer_len
        )));
    }
    let t_min = (1.0 / targets.len() as f32).min(1.0);
    let t = rng.gen_range(t_min..=1.0);
    let batch = apply_forward_masking(targets, t, rng)?;
    let mut fp = model.forward(layout, obs, proprio, AnswerInput::Tokens(&batch.corrupted))?;
    let masked_rows: Vec<usize> = batch
        .mask
        .iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(i, _)| fp.ans_start + i)
        .collect();
    let logits = model.token_logits(&mut fp, &masked_rows)?;
    let loss = masked_diffusion_loss(&mut fp, logits, &batch)?;
    Ok((fp, loss))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    Confidence,
    Random,
}

impl Selection {
    pub fn as_str(&self) -> &'static str {
        match self {
            Selection::Confidence => "confidence",
            Selection::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "confidence" => Some(Selection::Confidence),
            "random" => Some(Selection::Random),
            _ => None,
        }
    }
}

/// Refinement schedule: S steps with per-step unmask counts summing to
/// the answer length.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeSchedule {
    pub unmask_counts: Vec<usize>,
    pub selection: Selection,
    pub temperature: f32,
}

impl DecodeSchedule {
    pub fn steps(&self) -> usize {
        self.unmask_counts.len()
    }

    pub fn validate(&self, answer_len: usize) -> Result<()> {
        if self.unmask_counts.is_empty() {
            return Err(DiffusionError::Schedule("schedule needs at least one step".into()));
        }
        if self.unmask_counts.iter().any(|&c| c == 0) {
            return Err(DiffusionError::Schedule("all unmask counts must be positive".into()));
        }
        let total: usize = self.unmask_counts.iter().sum();
        if total != answer_len {
            return Err(DiffusionError::Schedule(format!(
                "unmask counts sum to {total}, answer length is {answer_len}"
            )));
        }
        if self.temperature < 0.0 {
            return Err(DiffusionError::Schedule("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// Balanced schedule: counts differ by at most one and sum to L.
pub fn linear_schedule(steps: usize, answer_len: usize) -> Result<DecodeSchedule> {
    if steps == 0 || steps > answer_len {
        return Err(DiffusionError::Parameter(format!(
            "steps {steps} outside 1..={answer_len}"
        )));
    }
    let base = answer_len / steps;
    let rem = answer_len % steps;
    let unmask_counts = (0..steps).map(|i| base + usize::from(i < rem)).collect();
    Ok(DecodeSchedule { unmask_counts, selection: Selection::Confidence, temperature: 0.0 })
}

/// Source of per-slot logits given the current partially masked answer.
/// Implemented by the backbone-bound context below and by test oracles.
pub trait AnswerLogitsModel {
    fn vocab_size(&self) -> usize;
    /// Row-major [answer_len, vocab] logits.
    fn answer_logits(&mut self, answer_tokens: &[u32]) -> Result<Vec<f32>>;
}

/// Binds a model to a fixed prompt for decoding.
pub struct ModelAnswerCtx<'a> {
    pub model: &'a Model,
    pub layout: &'a SequenceLayout,
    pub obs: Option<&'a [f32]>,
    pub proprio: Option<[f32; 7]>,
}

impl AnswerLogitsModel for ModelAnswerCtx<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn answer_logits(&mut self, answer_tokens: &[u32]) -> Result<Vec<f32>> {
        let mut fp =
            self.model
                .forward(self.layout, self.obs, self.proprio, AnswerInput::Tokens(answer_tokens))?;
        let rows: Vec<usize> = (fp.ans_start..fp.ans_start + answer_tokens.len()).collect();
        let logits = self.model.token_logits(&mut fp, &rows)?;
        Ok(fp.tape.data(logits).to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct StepTrace {
    /// (position, token, confidence) committed this step.
    pub committed: Vec<(usize, u32, f32)>,
    /// (position, confidence) of positions left masked after this step.
    pub still_masked: Vec<(usize, f32)>,
}

/// Iterative unmasking. Exactly `schedule.steps()` calls to the model.
pub fn decode(
    model: &mut dyn AnswerLogitsModel,
    answer_len: usize,
    schedule: &DecodeSchedule,
    filter: &TokenFilter,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u32>> {
    decode_traced(model, answer_len, schedule, filter, rng).map(|(tokens, _)| tokens)
}

pub fn decode_traced(
    model: &mut dyn AnswerLogitsModel,
    answer_len: usize,
    schedule: &DecodeSchedule,
    filter: &TokenFilter,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<u32>, Vec<StepTrace>)> {
    schedule.validate(answer_len)?;
    let vocab = model.vocab_size();
    let mut tokens = vec![MASK; answer_len];
    let mut committed = vec![false; answer_len];
    let mut traces = Vec::with_capacity(schedule.steps());

    for &count in &schedule.unmask_counts {
        let logits = model.answer_logits(&tokens)?;
        if logits.len() != answer_len * vocab {
            return Err(DiffusionError::Internal(format!(
                "expected {answer_len}x{vocab} logits, got {}",
                logits.len()
            )));
        }
        // Candidate (position, token, confidence) for still-masked slots,
        // in ascending position order so RNG consumption is fixed.
        let mut candidates: Vec<(usize, u32, f32)> = Vec::new();
        for pos in 0..answer_len {
            if committed[pos] {
                continue;
            }
            let row = &logits[pos * vocab..(pos + 1) * vocab];
            let (token, conf) = if schedule.temperature > 0.0 {
                sample_token(row, filter, schedule.temperature, rng)
            } else {
                argmax_prob(&filtered_probs(row, filter))
            };
            candidates.push((pos, token, conf));
        }
        let take = count.min(candidates.len());
        match schedule.selection {
            Selection::Confidence => {
                // highest confidence first; ties break to the lower index
                candidates.sort_by(|a, b| {
                    b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
                });
            }
            Selection::Random => {
                candidates.shuffle(rng);
            }
        }
        let (chosen, rest) = candidates.split_at(take);
        for &(pos, token, _) in chosen {
            tokens[pos] = token;
            committed[pos] = true;
        }
        traces.push(StepTrace {
            committed: chosen.to_vec(),
            still_masked: rest.iter().map(|&(p, _, c)| (p, c)).collect(),
        });
    }

    if committed.iter().any(|&c| !c) {
        return Err(DiffusionError::Internal("schedule left positions masked".into()));
    }
    Ok((tokens, traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn t_one_masks_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let targets = vec![10u32; 30];
        let b = apply_forward_masking(&targets, 1.0, &mut rng).unwrap();
        assert_eq!(b.masked_count(), 30);
        assert!(b.corrupted.iter().all(|&t| t == MASK));
    }

    #[test]
    fn out_of_range_t_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(apply_forward_masking(&[5], 0.0, &mut rng).is_err());
        assert!(apply_forward_masking(&[5], 1.5, &mut rng).is_err());
    }

    #[test]
    fn at_least_one_position_always_masked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let b = apply_forward_masking(&[7, 8, 9], 0.01, &mut rng).unwrap();
            assert!(b.masked_count() >= 1);
        }
    }

    #[test]
    fn linear_schedule_balanced() {
        assert_eq!(linear_schedule(1, 84).unwrap().unmask_counts, vec![84]);
        assert_eq!(linear_schedule(4, 10).unwrap().unmask_counts, vec![3, 3, 2, 2]);
        assert_eq!(linear_schedule(10, 10).unwrap().unmask_counts, vec![1; 10]);
        assert!(linear_schedule(11, 10).is_err());
        assert!(linear_schedule(0, 10).is_err());
    }

    #[test]
    fn schedule_validation() {
        let mut s = linear_schedule(4, 10).unwrap();
        assert!(s.validate(10).is_ok());
        assert!(s.validate(11).is_err());
        s.unmask_counts[0] = 0;
        assert!(s.validate(7).is_err());
    }
}
