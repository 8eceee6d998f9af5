//! Token sequence layout: observation prefix, instruction, answer region.

use crate::config::{ConfigError, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerKind {
    /// Discrete text tokens (yes/no, symbolic plans).
    TextAnswer,
    /// Discrete action-bin tokens, 7 per action.
    ActionTokens,
    /// Continuous-head query slots, one per action.
    ActionQueries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Observation,
    Proprio,
    Instruction,
    Answer,
}

/// A sequence partitioned into contiguous, non-overlapping segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLayout {
    pub obs_slots: usize,
    pub proprio_slots: usize,
    pub instruction: Vec<u32>,
    pub answer_len: usize,
    pub answer_kind: AnswerKind,
}

impl SequenceLayout {
    pub fn new(
        config: &ModelConfig,
        instruction: Vec<u32>,
        answer_len: usize,
        answer_kind: AnswerKind,
    ) -> Result<Self, ConfigError> {
        let layout = SequenceLayout {
            obs_slots: config.obs_slots(),
            proprio_slots: if config.use_proprio { 1 } else { 0 },
            instruction,
            answer_len,
            answer_kind,
        };
        layout.validate(config)?;
        Ok(layout)
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<(), ConfigError> {
        if self.answer_len == 0 {
            return Err(ConfigError("answer region must be non-empty".into()));
        }
        if self.total_len() > config.max_seq_len {
            return Err(ConfigError(format!(
                "sequence length {} exceeds max_seq_len {}",
                self.total_len(),
                config.max_seq_len
            )));
        }
        for &t in &self.instruction {
            if t as usize >= config.vocab_size {
                return Err(ConfigError(format!("instruction token {t} out of vocab")));
            }
        }
        Ok(())
    }

    pub fn prompt_len(&self) -> usize {
        self.obs_slots + self.proprio_slots + self.instruction.len()
    }

    pub fn answer_start(&self) -> usize {
        self.prompt_len()
    }

    pub fn total_len(&self) -> usize {
        self.prompt_len() + self.answer_len
    }

    /// Position ids are simply 0..total_len.
    pub fn positions(&self) -> Vec<usize> {
        (0..self.total_len()).collect()
    }

    /// Per-position segment markers, contiguous by construction.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(self.total_len());
        out.extend(std::iter::repeat(Segment::Observation).take(self.obs_slots));
        out.extend(std::iter::repeat(Segment::Proprio).take(self.proprio_slots));
        out.extend(std::iter::repeat(Segment::Instruction).take(self.instruction.len()));
        out.extend(std::iter::repeat(Segment::Answer).take(self.answer_len));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_are_contiguous_and_cover_sequence() {
        let cfg = ModelConfig { obs_grid: 2, obs_channels: 3, ..Default::default() };
        let layout = SequenceLayout::new(&cfg, vec![7, 8], 5, AnswerKind::ActionTokens).unwrap();
        let segs = layout.segments();
        assert_eq!(segs.len(), layout.total_len());
        assert_eq!(layout.total_len(), 4 + 2 + 5);
        assert_eq!(segs[0], Segment::Observation);
        assert_eq!(segs[4], Segment::Instruction);
        assert_eq!(segs[6], Segment::Answer);
        // contiguity: no segment reappears after a different one
        let mut seen = Vec::new();
        for s in segs {
            if seen.last() != Some(&s) {
                assert!(!seen.contains(&s));
                seen.push(s);
            }
        }
    }

    #[test]
    fn empty_answer_rejected() {
        let cfg = ModelConfig::default();
        assert!(SequenceLayout::new(&cfg, vec![], 0, AnswerKind::TextAnswer).is_err());
    }

    #[test]
    fn over_long_sequence_rejected() {
        let cfg = ModelConfig { max_seq_len: 70, ..Default::default() };
        assert!(SequenceLayout::new(&cfg, vec![], 10, AnswerKind::TextAnswer).is_err());
    }
}
