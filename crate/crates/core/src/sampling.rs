//! Shared token-sampling helpers for the decoders.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Restricts which vocabulary entries a decoder may emit. Action decoding
/// constrains to the bin range; binary grounding constrains to yes/no;
/// free text uses the whole vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenFilter {
    All,
    Range { start: u32, len: u32 },
    Set(Vec<u32>),
}

impl TokenFilter {
    pub fn allows(&self, token: u32) -> bool {
        match self {
            TokenFilter::All => true,
            TokenFilter::Range { start, len } => token >= *start && token < start + len,
            TokenFilter::Set(s) => s.contains(&token),
        }
    }

    fn candidates(&self, vocab: usize) -> Vec<u32> {
        match self {
            TokenFilter::All => (0..vocab as u32).collect(),
            TokenFilter::Range { start, len } => (*start..start + len).collect(),
            TokenFilter::Set(s) => s.clone(),
        }
    }
}

/// Softmax probabilities over the filtered candidates of one logit row.
/// Returns (token, probability) pairs in candidate order.
pub fn filtered_probs(logits: &[f32], filter: &TokenFilter) -> Vec<(u32, f32)> {
    let cands = filter.candidates(logits.len());
    let mut mx = f32::NEG_INFINITY;
    for &t in &cands {
        let v = logits[t as usize];
        if v > mx {
            mx = v;
        }
    }
    let mut out: Vec<(u32, f32)> = cands
        .iter()
        .map(|&t| (t, (logits[t as usize] - mx).exp()))
        .collect();
    let sum: f32 = out.iter().map(|(_, p)| p).sum();
    for (_, p) in out.iter_mut() {
        *p /= sum;
    }
    out
}

/// Highest-probability token and its probability; ties break toward the
/// lower token id.
pub fn argmax_prob(probs: &[(u32, f32)]) -> (u32, f32) {
    let mut best = probs[0];
    for &(t, p) in &probs[1..] {
        if p > best.1 {
            best = (t, p);
        }
    }
    best
}

/// Temperature-scaled sample over the filtered candidates. Temperature 0
/// degenerates to the argmax.
pub fn sample_token(
    logits: &[f32],
    filter: &TokenFilter,
    temperature: f32,
    rng: &mut ChaCha8Rng,
) -> (u32, f32) {
    let probs = filtered_probs(logits, filter);
    if temperature <= 0.0 {
        return argmax_prob(&probs);
    }
    let scaled: Vec<f32> = logits.iter().map(|&l| l / temperature).collect();
    let tempered = filtered_probs(&scaled, filter);
    let confidence = argmax_prob(&probs).1;
    let draw: f32 = rng.gen();
    let mut acc = 0.0;
    for &(t, p) in &tempered {
        acc += p;
        if draw <= acc {
            return (t, confidence);
        }
    }
    (tempered.last().unwrap().0, confidence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn filter_restricts_support() {
        let logits = vec![5.0, 1.0, 0.0, -2.0];
        let probs = filtered_probs(&logits, &TokenFilter::Range { start: 1, len: 2 });
        assert_eq!(probs.len(), 2);
        let sum: f32 = probs.iter().map(|(_, p)| p).sum();
        assert!((sum - 1.0).abs() < 1e-6);
        let (t, _) = argmax_prob(&probs);
        assert_eq!(t, 1);
    }

    #[test]
    fn zero_temperature_is_argmax() {
        let logits = vec![0.1, 3.0, 0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (t, p) = sample_token(&logits, &TokenFilter::All, 0.0, &mut rng);
        assert_eq!(t, 1);
        assert!(p > 0.8);
    }

    #[test]
    fn argmax_ties_prefer_lower_id() {
        let probs = vec![(3u32, 0.4f32), (5, 0.4), (7, 0.2)];
        assert_eq!(argmax_prob(&probs).0, 3);
    }
}
