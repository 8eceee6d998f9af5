//! Continuous 7-DoF delta actions and their 256-bin token codec.

use crate::vocab::{ACTION_BINS, ACTION_BIN_BASE};

pub const ACTION_DIMS: usize = 7;

/// One delta end-effector command: position deltas, rotation deltas, and a
/// gripper command in [0,1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub dx: f32,
    pub dy: f32,
    pub dz: f32,
    pub droll: f32,
    pub dpitch: f32,
    pub dyaw: f32,
    pub grip: f32,
}

impl Action {
    pub const ZERO_OPEN: Action =
        Action { dx: 0.0, dy: 0.0, dz: 0.0, droll: 0.0, dpitch: 0.0, dyaw: 0.0, grip: 1.0 };

    pub fn to_array(&self) -> [f32; ACTION_DIMS] {
        [self.dx, self.dy, self.dz, self.droll, self.dpitch, self.dyaw, self.grip]
    }

    pub fn from_array(a: [f32; ACTION_DIMS]) -> Action {
        Action { dx: a[0], dy: a[1], dz: a[2], droll: a[3], dpitch: a[4], dyaw: a[5], grip: a[6] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// k consecutive actions predicted per model query.
pub type ActionChunk = Vec<Action>;

#[derive(Debug, Clone, PartialEq)]
pub enum CodecError {
    Data(String),
    ForeignToken(u32),
}

impl std::fmt::Display for CodecError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CodecError::Data(m) => write!(f, "codec data error: {m}"),
            CodecError::ForeignToken(t) => write!(f, "codec error: token {t} outside bin range"),
        }
    }
}

impl std::error::Error for CodecError {}

/// Per-dimension uniform quantizer over clipped bounds. Bounds come from
/// the 1st/99th percentiles of the training actions; a dimension with no
/// spread collapses to the symmetric degenerate interval.
#[derive(Debug, Clone, PartialEq)]
pub struct BinCodec {
    pub lo: [f32; ACTION_DIMS],
    pub hi: [f32; ACTION_DIMS],
    pub token_base: u32,
}

fn percentile(sorted: &[f32], q: f64) -> f32 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = (pos - lo as f64) as f32;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl BinCodec {
    pub fn fit(actions: &[[f32; ACTION_DIMS]]) -> Result<BinCodec, CodecError> {
        if actions.is_empty() {
            return Err(CodecError::Data("empty action dataset".into()));
        }
        if actions.len() < 100 {
            return Err(CodecError::Data(format!(
                "need at least 100 actions per dimension, got {}",
                actions.len()
            )));
        }
        let mut lo = [0.0f32; ACTION_DIMS];
        let mut hi = [0.0f32; ACTION_DIMS];
        for d in 0..ACTION_DIMS {
            let mut vals: Vec<f32> = actions.iter().map(|a| a[d]).collect();
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(CodecError::Data(format!("non-finite value in dimension {d}")));
            }
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let p1 = percentile(&vals, 0.01);
            let p99 = percentile(&vals, 0.99);
            if p99 - p1 < 1e-9 {
                lo[d] = -1e-6;
                hi[d] = 1e-6;
            } else {
                lo[d] = p1;
                hi[d] = p99;
            }
        }
        Ok(BinCodec { lo, hi, token_base: ACTION_BIN_BASE })
    }

    pub fn width(&self, dim: usize) -> f32 {
        (self.hi[dim] - self.lo[dim]) / ACTION_BINS as f32
    }

    /// Bin index in 0..=255 for a value in dimension `dim`.
    pub fn bin_of(&self, dim: usize, v: f32) -> u32 {
        let v = v.clamp(self.lo[dim], self.hi[dim]);
        let idx = ((v - self.lo[dim]) / self.width(dim)).floor() as i64;
        idx.clamp(0, ACTION_BINS as i64 - 1) as u32
    }

    /// Center of bin `idx` in dimension `dim`.
    pub fn center_of(&self, dim: usize, idx: u32) -> f32 {
        self.lo[dim] + (idx as f32 + 0.5) * self.width(dim)
    }

    pub fn encode(&self, a: &Action) -> [u32; ACTION_DIMS] {
        let arr = a.to_array();
        let mut out = [0u32; ACTION_DIMS];
        for d in 0..ACTION_DIMS {
            out[d] = self.token_base + self.bin_of(d, arr[d]);
        }
        out
    }

    pub fn decode(&self, tokens: &[u32; ACTION_DIMS]) -> Result<Action, CodecError> {
        let mut arr = [0.0f32; ACTION_DIMS];
        for d in 0..ACTION_DIMS {
            let t = tokens[d];
            if t < self.token_base || t >= self.token_base + ACTION_BINS {
                return Err(CodecError::ForeignToken(t));
            }
            arr[d] = self.center_of(d, t - self.token_base);
        }
        Ok(Action::from_array(arr))
    }

    /// Row-major chunk encoding: k*7 tokens.
    pub fn encode_chunk(&self, chunk: &[Action]) -> Vec<u32> {
        let mut out = Vec::with_capacity(chunk.len() * ACTION_DIMS);
        for a in chunk {
            out.extend_from_slice(&self.encode(a));
        }
        out
    }

    pub fn decode_chunk(&self, tokens: &[u32]) -> Result<ActionChunk, CodecError> {
        if tokens.len() % ACTION_DIMS != 0 {
            return Err(CodecError::Data(format!(
                "chunk token count {} not a multiple of {ACTION_DIMS}",
                tokens.len()
            )));
        }
        tokens
            .chunks_exact(ACTION_DIMS)
            .map(|c| {
                let arr: [u32; ACTION_DIMS] = c.try_into().unwrap();
                self.decode(&arr)
            })
            .collect()
    }
}

/// Per-dimension z-score statistics for continuous heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: [f32; ACTION_DIMS],
    pub std: [f32; ACTION_DIMS],
}

impl Standardizer {
    pub fn identity() -> Standardizer {
        Standardizer { mean: [0.0; ACTION_DIMS], std: [1.0; ACTION_DIMS] }
    }

    pub fn fit(actions: &[[f32; ACTION_DIMS]]) -> Result<Standardizer, CodecError> {
        if actions.is_empty() {
            return Err(CodecError::Data("empty action dataset".into()));
        }
        let n = actions.len() as f64;
        let mut mean = [0.0f32; ACTION_DIMS];
        let mut std = [0.0f32; ACTION_DIMS];
        for d in 0..ACTION_DIMS {
            let m: f64 = actions.iter().map(|a| a[d] as f64).sum::<f64>() / n;
            let var: f64 = actions.iter().map(|a| (a[d] as f64 - m).powi(2)).sum::<f64>() / n;
            mean[d] = m as f32;
            std[d] = (var.sqrt() as f32).max(1e-6);
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, a: &[f32; ACTION_DIMS]) -> [f32; ACTION_DIMS] {
        let mut out = [0.0f32; ACTION_DIMS];
        for d in 0..ACTION_DIMS {
            out[d] = (a[d] - self.mean[d]) / self.std[d];
        }
        out
    }

    pub fn invert(&self, z: &[f32; ACTION_DIMS]) -> [f32; ACTION_DIMS] {
        let mut out = [0.0f32; ACTION_DIMS];
        for d in 0..ACTION_DIMS {
            out[d] = z[d] * self.std[d] + self.mean[d];
        }
        out
    }

    pub fn apply_chunk(&self, chunk: &[Action]) -> Vec<f32> {
        let mut out = Vec::with_capacity(chunk.len() * ACTION_DIMS);
        for a in chunk {
            out.extend_from_slice(&self.apply(&a.to_array()));
        }
        out
    }

    pub fn invert_chunk(&self, values: &[f32]) -> ActionChunk {
        values
            .chunks_exact(ACTION_DIMS)
            .map(|z| {
                let arr: [f32; ACTION_DIMS] = z.try_into().unwrap();
                Action::from_array(self.invert(&arr))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_codec() -> BinCodec {
        BinCodec { lo: [-1.0; ACTION_DIMS], hi: [1.0; ACTION_DIMS], token_base: ACTION_BIN_BASE }
    }

    #[test]
    fn closed_form_bin_arithmetic() {
        let c = unit_codec();
        assert_eq!(c.bin_of(0, 0.0), 128);
        assert!((c.center_of(0, 128) - 0.00390625).abs() < 1e-9);
    }

    #[test]
    fn clipping_to_extreme_bins() {
        let c = unit_codec();
        assert_eq!(c.bin_of(0, 5.0), 255);
        assert_eq!(c.bin_of(0, -5.0), 0);
        assert_eq!(c.bin_of(0, 1.0), 255); // exact upper bound clamps down
    }

    #[test]
    fn round_trip_error_within_half_width_scan() {
        let c = unit_codec();
        let half = c.width(0) / 2.0;
        for i in 0..=10_000 {
            let v = -1.0 + 2.0 * i as f32 / 10_000.0;
            let bin = c.bin_of(0, v);
            let back = c.center_of(0, bin);
            assert!((back - v).abs() <= half + 1e-6, "v={v} back={back}");
        }
    }

    #[test]
    fn bin_index_round_trip_exact() {
        let c = unit_codec();
        for d in 0..ACTION_DIMS {
            for idx in 0..ACTION_BINS {
                assert_eq!(c.bin_of(d, c.center_of(d, idx)), idx);
            }
        }
    }

    #[test]
    fn fit_percentiles_on_uniform_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let actions: Vec<[f32; ACTION_DIMS]> = (0..10_000)
            .map(|_| {
                let mut a = [0.0f32; ACTION_DIMS];
                for v in a.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                a
            })
            .collect();
        let c = BinCodec::fit(&actions).unwrap();
        for d in 0..ACTION_DIMS {
            assert!((c.lo[d] + 0.98).abs() < 0.05, "lo[{d}]={}", c.lo[d]);
            assert!((c.hi[d] - 0.98).abs() < 0.05, "hi[{d}]={}", c.hi[d]);
        }
    }

    #[test]
    fn fit_is_shuffle_invariant_and_handles_degenerate_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut actions: Vec<[f32; ACTION_DIMS]> = (0..500)
            .map(|i| {
                let mut a = [0.0f32; ACTION_DIMS];
                a[0] = (i as f32 / 500.0) - 0.5;
                a[1] = 0.125; // constant dimension
                for v in a.iter_mut().skip(2) {
                    *v = rng.gen_range(-0.2..0.2);
                }
                a
            })
            .collect();
        let fit1 = BinCodec::fit(&actions).unwrap();
        use rand::seq::SliceRandom;
        actions.shuffle(&mut rng);
        let fit2 = BinCodec::fit(&actions).unwrap();
        assert_eq!(fit1, fit2);
        assert_eq!(fit1.lo[1], -1e-6);
        assert_eq!(fit1.hi[1], 1e-6);
    }

    #[test]
    fn fit_rejects_empty_and_tiny_datasets() {
        assert!(BinCodec::fit(&[]).is_err());
        assert!(BinCodec::fit(&[[0.0; ACTION_DIMS]; 10]).is_err());
    }

    #[test]
    fn foreign_token_rejected() {
        let c = unit_codec();
        let mut toks = c.encode(&Action::ZERO_OPEN);
        toks[3] = 2;
        assert!(matches!(c.decode(&toks), Err(CodecError::ForeignToken(2))));
    }

    #[test]
    fn chunk_layout_is_row_major_and_lossless_at_index_level() {
        let c = unit_codec();
        let chunk = vec![
            Action { dx: 0.1, dy: -0.2, dz: 0.3, droll: 0.0, dpitch: 0.0, dyaw: -0.4, grip: 1.0 },
            Action { dx: -0.5, dy: 0.6, dz: -0.7, droll: 0.0, dpitch: 0.0, dyaw: 0.8, grip: 0.0 },
        ];
        let toks = c.encode_chunk(&chunk);
        assert_eq!(toks.len(), 2 * ACTION_DIMS);
        let decoded = c.decode_chunk(&toks).unwrap();
        let re = c.encode_chunk(&decoded);
        assert_eq!(toks, re);
    }

    #[test]
    fn standardize_round_trip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let actions: Vec<[f32; ACTION_DIMS]> = (0..300)
            .map(|_| {
                let mut a = [0.0f32; ACTION_DIMS];
                for v in a.iter_mut() {
                    *v = rng.gen_range(-0.05..0.05);
                }
                a
            })
            .collect();
        let s = Standardizer::fit(&actions).unwrap();
        for a in actions.iter().take(50) {
            let back = s.invert(&s.apply(a));
            for d in 0..ACTION_DIMS {
                assert!((back[d] - a[d]).abs() < 1e-6);
            }
        }
    }
}
