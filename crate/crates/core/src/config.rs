//! Backbone architecture configuration and its canonical serialization.

use sha2::{Digest, Sha256};

use crate::vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    Causal,
    Bidirectional,
}

impl AttentionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttentionMode::Causal => "causal",
            AttentionMode::Bidirectional => "bidirectional",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "causal" => Some(AttentionMode::Causal),
            "bidirectional" => Some(AttentionMode::Bidirectional),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub attention_mode: AttentionMode,
    pub obs_channels: usize,
    /// Grid side length; 0 disables the observation prefix entirely
    /// (symbolic-only sequences).
    pub obs_grid: usize,
    pub use_proprio: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            vocab_size: vocab::VOCAB_SIZE,
            max_seq_len: 256,
            attention_mode: AttentionMode::Bidirectional,
            obs_channels: 5,
            obs_grid: 8,
            use_proprio: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(ConfigError(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < vocab::ACTION_BINS as usize + vocab::SPECIAL_COUNT {
            return Err(ConfigError(format!(
                "vocab_size {} too small for 256 action bins plus specials",
                self.vocab_size
            )));
        }
        if self.n_layers == 0 || self.max_seq_len == 0 {
            return Err(ConfigError("n_layers and max_seq_len must be positive".into()));
        }
        if self.obs_grid > 0 && self.obs_channels == 0 {
            return Err(ConfigError("obs_channels must be positive when obs_grid > 0".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn obs_slots(&self) -> usize {
        self.obs_grid * self.obs_grid
    }

    /// Canonical key=value text with sorted keys; its hash identifies the
    /// architecture and is embedded in checkpoints.
    pub fn canonical_text(&self) -> String {
        let mut lines = vec![
            format!("attention_mode={}", self.attention_mode.as_str()),
            format!("d_model={}", self.d_model),
            format!("max_seq_len={}", self.max_seq_len),
            format!("n_heads={}", self.n_heads),
            format!("n_layers={}", self.n_layers),
            format!("obs_channels={}", self.obs_channels),
            format!("obs_grid={}", self.obs_grid),
            format!("use_proprio={}", self.use_proprio),
            format!("vocab_size={}", self.vocab_size),
        ];
        lines.sort();
        lines.join("\n")
    }

    pub fn arch_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_text().as_bytes());
        let digest = hasher.finalize();
        hex_prefix(&digest, 16)
    }

    pub fn from_canonical_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ModelConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("malformed config line: {line}")))?;
            let bad = |k: &str| ConfigError(format!("bad value for {k}: {value}"));
            match key {
                "attention_mode" => {
                    cfg.attention_mode =
                        AttentionMode::parse(value).ok_or_else(|| bad("attention_mode"))?
                }
                "d_model" => cfg.d_model = value.parse().map_err(|_| bad("d_model"))?,
                "max_seq_len" => cfg.max_seq_len = value.parse().map_err(|_| bad("max_seq_len"))?,
                "n_heads" => cfg.n_heads = value.parse().map_err(|_| bad("n_heads"))?,
                "n_layers" => cfg.n_layers = value.parse().map_err(|_| bad("n_layers"))?,
                "obs_channels" => cfg.obs_channels = value.parse().map_err(|_| bad("obs_channels"))?,
                "obs_grid" => cfg.obs_grid = value.parse().map_err(|_| bad("obs_grid"))?,
                "use_proprio" => cfg.use_proprio = value.parse().map_err(|_| bad("use_proprio"))?,
                "vocab_size" => cfg.vocab_size = value.parse().map_err(|_| bad("vocab_size"))?,
                other => return Err(ConfigError(format!("unknown config key: {other}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Architectural equality: every field except the attention mode,
    /// which swaps freely over one set of weights.
    pub fn structural_eq(&self, other: &ModelConfig) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.attention_mode = AttentionMode::Bidirectional;
        b.attention_mode = AttentionMode::Bidirectional;
        a == b
    }
}

pub fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s = String::with_capacity(chars);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
        if s.len() >= chars {
            break;
        }
    }
    s.truncate(chars);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_round_trip() {
        let cfg = ModelConfig { d_model: 48, n_layers: 2, ..Default::default() };
        let text = cfg.canonical_text();
        let parsed = ModelConfig::from_canonical_text(&text).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn hash_changes_with_fields() {
        let a = ModelConfig::default();
        let mut b = a.clone();
        b.d_model = 64;
        assert_ne!(a.arch_hash(), b.arch_hash());
        let mut c = a.clone();
        c.attention_mode = AttentionMode::Causal;
        assert_ne!(a.arch_hash(), c.arch_hash());
        assert!(a.structural_eq(&c));
        assert!(!a.structural_eq(&b));
    }

    #[test]
    fn invalid_heads_rejected() {
        let cfg = ModelConfig { d_model: 50, n_heads: 4, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
