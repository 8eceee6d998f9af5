//! Flat key=value run configuration with a canonical hash.

use sha2::{Digest, Sha256};

use crate::config::{hex_prefix, AttentionMode, ConfigError, ModelConfig};
use crate::diffusion::Selection;
use crate::env::manip::TaskKind;
use crate::heads::ObjectiveKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
    Eval,
    Sweep,
    DemoGen,
    Blockworld,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::Eval => "eval",
            Stage::Sweep => "sweep",
            Stage::DemoGen => "demo_gen",
            Stage::Blockworld => "blockworld",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pretrain" => Some(Stage::Pretrain),
            "finetune" => Some(Stage::Finetune),
            "eval" => Some(Stage::Eval),
            "sweep" => Some(Stage::Sweep),
            "demo_gen" => Some(Stage::DemoGen),
            "blockworld" => Some(Stage::Blockworld),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskFamily {
    GoalMini,
    LongMini,
    Mixed,
}

impl TaskFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskFamily::GoalMini => "goalmini",
            TaskFamily::LongMini => "longmini",
            TaskFamily::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "goalmini" => Some(TaskFamily::GoalMini),
            "longmini" => Some(TaskFamily::LongMini),
            "mixed" => Some(TaskFamily::Mixed),
            _ => None,
        }
    }

    pub fn kind_for_episode(&self, episode: usize) -> TaskKind {
        match self {
            TaskFamily::GoalMini => TaskKind::GoalMini,
            TaskFamily::LongMini => TaskKind::LongMini,
            TaskFamily::Mixed => {
                if episode % 2 == 0 {
                    TaskKind::GoalMini
                } else {
                    TaskKind::LongMini
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Random,
    Pretrained,
}

impl Init {
    pub fn as_str(&self) -> &'static str {
        match self {
            Init::Random => "random",
            Init::Pretrained => "pretrained",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(Init::Random),
            "pretrained" => Some(Init::Pretrained),
            _ => None,
        }
    }
}

/// One experiment's full configuration. Serialized canonically so equal
/// configs hash identically; every metrics row embeds the hash.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub stage: Stage,
    pub objective: ObjectiveKind,
    pub model: ModelConfig,
    pub chunk_k: usize,
    pub execute_m: usize,
    pub decode_steps: usize,
    pub decode_selection: Selection,
    pub temperature: f32,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub steps: usize,
    pub checkpoint_interval: usize,
    pub task: TaskFamily,
    pub episodes: usize,
    pub eval_seeds: usize,
    /// 0 keeps each task's own horizon.
    pub horizon: u32,
    pub dataset: String,
    pub init: Init,
    pub init_checkpoint: String,
    pub out: String,
    pub demo_episodes: usize,
    pub demo_noise: f32,
    pub bw_blocks: usize,
    pub bw_grounding_examples: usize,
    pub bw_planning_examples: usize,
    pub bw_plan_slots: usize,
    pub bw_eval_queries: usize,
    pub bw_eval_instances: usize,
    pub timing_decodes: usize,
    pub timing_warmup: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stage: Stage::Finetune,
            objective: ObjectiveKind::DiscreteDiffusion,
            model: ModelConfig::default(),
            chunk_k: 8,
            execute_m: 8,
            decode_steps: 1,
            decode_selection: Selection::Confidence,
            temperature: 0.0,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.95,
            epsilon: 1e-8,
            weight_decay: 0.0,
            batch_size: 64,
            steps: 5000,
            checkpoint_interval: 1000,
            task: TaskFamily::GoalMini,
            episodes: 100,
            eval_seeds: 3,
            horizon: 0,
            dataset: String::new(),
            init: Init::Random,
            init_checkpoint: String::new(),
            out: "out".into(),
            demo_episodes: 200,
            demo_noise: 0.005,
            bw_blocks: 4,
            bw_grounding_examples: 4000,
            bw_planning_examples: 4000,
            bw_plan_slots: 36,
            bw_eval_queries: 2000,
            bw_eval_instances: 300,
            timing_decodes: 220,
            timing_warmup: 20,
        }
    }
}

/// The attention mode each training objective requires: next-token
/// prediction is causal, everything else bidirectional.
pub fn required_mode(objective: ObjectiveKind) -> AttentionMode {
    match objective {
        ObjectiveKind::Discrete => AttentionMode::Causal,
        _ => AttentionMode::Bidirectional,
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        if self.chunk_k == 0 || self.execute_m == 0 || self.execute_m > self.chunk_k {
            return Err(ConfigError(format!(
                "execute_m {} must be in 1..=chunk_k {}",
                self.execute_m, self.chunk_k
            )));
        }
        if self.model.attention_mode != required_mode(self.objective) {
            return Err(ConfigError(format!(
                "objective {} requires {} attention",
                self.objective.as_str(),
                required_mode(self.objective).as_str()
            )));
        }
        if self.decode_steps == 0 {
            return Err(ConfigError("decode_steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError("batch_size must be >= 1".into()));
        }
        if self.bw_blocks < 2 || self.bw_blocks > 8 {
            return Err(ConfigError("bw_blocks must be in 2..=8".into()));
        }
        Ok(())
    }

    /// Sorted key=value lines covering every field.
    pub fn canonical_text(&self) -> String {
        let mut lines = vec![
            format!("attention_mode={}", self.model.attention_mode.as_str()),
            format!("batch_size={}", self.batch_size),
            format!("beta1={}", self.beta1),
            format!("beta2={}", self.beta2),
            format!("bw_blocks={}", self.bw_blocks),
            format!("bw_eval_instances={}", self.bw_eval_instances),
            format!("bw_eval_queries={}", self.bw_eval_queries),
            format!("bw_grounding_examples={}", self.bw_grounding_examples),
            format!("bw_plan_slots={}", self.bw_plan_slots),
            format!("bw_planning_examples={}", self.bw_planning_examples),
            format!("checkpoint_interval={}", self.checkpoint_interval),
            format!("chunk_k={}", self.chunk_k),
            format!("d_model={}", self.model.d_model),
            format!("dataset={}", self.dataset),
            format!("decode_selection={}", self.decode_selection.as_str()),
            format!("decode_steps={}", self.decode_steps),
            format!("demo_episodes={}", self.demo_episodes),
            format!("demo_noise={}", self.demo_noise),
            format!("episodes={}", self.episodes),
            format!("epsilon={}", self.epsilon),
            format!("eval_seeds={}", self.eval_seeds),
            format!("execute_m={}", self.execute_m),
            format!("horizon={}", self.horizon),
            format!("init={}", self.init.as_str()),
            format!("init_checkpoint={}", self.init_checkpoint),
            format!("lr={}", self.lr),
            format!("max_seq_len={}", self.model.max_seq_len),
            format!("n_heads={}", self.model.n_heads),
            format!("n_layers={}", self.model.n_layers),
            format!("objective={}", self.objective.as_str()),
            format!("obs_channels={}", self.model.obs_channels),
            format!("obs_grid={}", self.model.obs_grid),
            format!("out={}", self.out),
            format!("stage={}", self.stage.as_str()),
            format!("steps={}", self.steps),
            format!("task={}", self.task.as_str()),
            format!("temperature={}", self.temperature),
            format!("timing_decodes={}", self.timing_decodes),
            format!("timing_warmup={}", self.timing_warmup),
            format!("use_proprio={}", self.model.use_proprio),
            format!("vocab_size={}", self.model.vocab_size),
            format!("weight_decay={}", self.weight_decay),
        ];
        lines.sort();
        lines.join("\n")
    }

    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_text().as_bytes());
        hex_prefix(&hasher.finalize(), 16)
    }

    /// Parse a config file body: key=value lines, `#` comments, unknown
    /// keys are errors. `steps` defaults by stage (pretrain 20000,
    /// otherwise 5000); the attention mode and execute_m default from
    /// the objective and chunk size.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut saw_steps = false;
        let mut saw_mode = false;
        let mut saw_m = false;
        for raw in text.lines() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("malformed line: {raw}")))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |k: &str| ConfigError(format!("bad value for {k}: {value}"));
            match key {
                "stage" => cfg.stage = Stage::parse(value).ok_or_else(|| bad(key))?,
                "objective" => cfg.objective = ObjectiveKind::parse(value).ok_or_else(|| bad(key))?,
                "attention_mode" => {
                    cfg.model.attention_mode = AttentionMode::parse(value).ok_or_else(|| bad(key))?;
                    saw_mode = true;
                }
                "d_model" => cfg.model.d_model = value.parse().map_err(|_| bad(key))?,
                "n_layers" => cfg.model.n_layers = value.parse().map_err(|_| bad(key))?,
                "n_heads" => cfg.model.n_heads = value.parse().map_err(|_| bad(key))?,
                "vocab_size" => cfg.model.vocab_size = value.parse().map_err(|_| bad(key))?,
                "max_seq_len" => cfg.model.max_seq_len = value.parse().map_err(|_| bad(key))?,
                "obs_grid" => cfg.model.obs_grid = value.parse().map_err(|_| bad(key))?,
                "obs_channels" => cfg.model.obs_channels = value.parse().map_err(|_| bad(key))?,
                "use_proprio" => cfg.model.use_proprio = value.parse().map_err(|_| bad(key))?,
                "chunk_k" => cfg.chunk_k = value.parse().map_err(|_| bad(key))?,
                "execute_m" => {
                    cfg.execute_m = value.parse().map_err(|_| bad(key))?;
                    saw_m = true;
                }
                "decode_steps" => cfg.decode_steps = value.parse().map_err(|_| bad(key))?,
                "decode_selection" => {
                    cfg.decode_selection = Selection::parse(value).ok_or_else(|| bad(key))?
                }
                "temperature" => cfg.temperature = value.parse().map_err(|_| bad(key))?,
                "lr" => cfg.lr = value.parse().map_err(|_| bad(key))?,
                "beta1" => cfg.beta1 = value.parse().map_err(|_| bad(key))?,
                "beta2" => cfg.beta2 = value.parse().map_err(|_| bad(key))?,
                "epsilon" => cfg.epsilon = value.parse().map_err(|_| bad(key))?,
                "weight_decay" => cfg.weight_decay = value.parse().map_err(|_| bad(key))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad(key))?,
                "steps" => {
                    cfg.steps = value.parse().map_err(|_| bad(key))?;
                    saw_steps = true;
                }
                "checkpoint_interval" => {
                    cfg.checkpoint_interval = value.parse().map_err(|_| bad(key))?
                }
                "task" => cfg.task = TaskFamily::parse(value).ok_or_else(|| bad(key))?,
                "episodes" => cfg.episodes = value.parse().map_err(|_| bad(key))?,
                "eval_seeds" => cfg.eval_seeds = value.parse().map_err(|_| bad(key))?,
                "horizon" => cfg.horizon = value.parse().map_err(|_| bad(key))?,
                "dataset" => cfg.dataset = value.to_string(),
                "init" => cfg.init = Init::parse(value).ok_or_else(|| bad(key))?,
                "init_checkpoint" => cfg.init_checkpoint = value.to_string(),
                "out" => cfg.out = value.to_string(),
                "demo_episodes" => cfg.demo_episodes = value.parse().map_err(|_| bad(key))?,
                "demo_noise" => cfg.demo_noise = value.parse().map_err(|_| bad(key))?,
                "bw_blocks" => cfg.bw_blocks = value.parse().map_err(|_| bad(key))?,
                "bw_grounding_examples" => {
                    cfg.bw_grounding_examples = value.parse().map_err(|_| bad(key))?
                }
                "bw_planning_examples" => {
                    cfg.bw_planning_examples = value.parse().map_err(|_| bad(key))?
                }
                "bw_plan_slots" => cfg.bw_plan_slots = value.parse().map_err(|_| bad(key))?,
                "bw_eval_queries" => cfg.bw_eval_queries = value.parse().map_err(|_| bad(key))?,
                "bw_eval_instances" => {
                    cfg.bw_eval_instances = value.parse().map_err(|_| bad(key))?
                }
                "timing_decodes" => cfg.timing_decodes = value.parse().map_err(|_| bad(key))?,
                "timing_warmup" => cfg.timing_warmup = value.parse().map_err(|_| bad(key))?,
                other => return Err(ConfigError(format!("unknown key: {other}"))),
            }
        }
        if !saw_steps && cfg.stage == Stage::Pretrain {
            cfg.steps = 20000;
        }
        if !saw_mode {
            cfg.model.attention_mode = required_mode(cfg.objective);
        }
        if !saw_m {
            cfg.execute_m = cfg.chunk_k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_defaults_and_overrides() {
        let cfg = RunConfig::parse("stage=pretrain\ntask=mixed\n# comment\nd_model=48\n").unwrap();
        assert_eq!(cfg.steps, 20000);
        assert_eq!(cfg.model.d_model, 48);
        assert_eq!(cfg.task, TaskFamily::Mixed);
        assert_eq!(cfg.execute_m, cfg.chunk_k);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(RunConfig::parse("frobnicate=1\n").is_err());
    }

    #[test]
    fn objective_fixes_attention_mode() {
        let cfg = RunConfig::parse("objective=discrete\n").unwrap();
        assert_eq!(cfg.model.attention_mode, AttentionMode::Causal);
        assert!(RunConfig::parse("objective=discrete\nattention_mode=bidirectional\n").is_err());
    }

    #[test]
    fn every_field_changes_the_hash() {
        let base = RunConfig::parse("").unwrap();
        let overrides = [
            "stage=pretrain",
            "objective=l1",
            "d_model=64",
            "n_layers=3",
            "n_heads=2",
            "max_seq_len=128",
            "obs_grid=4",
            "obs_channels=3",
            "use_proprio=true",
            "chunk_k=12",
            "execute_m=4",
            "decode_steps=4",
            "decode_selection=random",
            "temperature=0.5",
            "lr=0.001",
            "beta1=0.8",
            "beta2=0.9",
            "epsilon=0.000001",
            "weight_decay=0.01",
            "batch_size=16",
            "steps=123",
            "checkpoint_interval=10",
            "task=longmini",
            "episodes=7",
            "eval_seeds=5",
            "horizon=60",
            "dataset=foo.cdem",
            "init=pretrained",
            "init_checkpoint=bar.cdlb",
            "out=elsewhere",
            "demo_episodes=9",
            "demo_noise=0.01",
            "bw_blocks=6",
            "bw_grounding_examples=10",
            "bw_planning_examples=11",
            "bw_plan_slots=40",
            "bw_eval_queries=12",
            "bw_eval_instances=13",
            "timing_decodes=250",
            "timing_warmup=5",
        ];
        for ov in overrides {
            let cfg = RunConfig::parse(&format!("{ov}\n")).unwrap();
            assert_ne!(base.hash(), cfg.hash(), "field override {ov} left hash unchanged");
        }
    }

    #[test]
    fn hash_is_stable_for_equal_configs() {
        let a = RunConfig::parse("d_model=48\nsteps=100\n").unwrap();
        let b = RunConfig::parse("steps=100\nd_model=48\n").unwrap();
        assert_eq!(a.hash(), b.hash());
    }
}
