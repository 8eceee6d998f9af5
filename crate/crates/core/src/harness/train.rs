//! Demonstration generation and the training loop for every objective.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use chunklab_tensor::optim::{AdamW, AdamWConfig};
use chunklab_tensor::rng::{derive_seed, seeded_rng};

use crate::ar::ar_example_loss;
use crate::checkpoint;
use crate::codec::{Action, BinCodec, Standardizer, ACTION_DIMS};
use crate::diffusion::diffusion_example_loss;
use crate::env::dataset::{DemoEpisode, DemoSet, DemoStep};
use crate::env::manip::{expert_policy, render_obs, reset, step, proprio};
use crate::harness::metrics::LossRecord;
use crate::harness::runconfig::{Init, RunConfig, TaskFamily};
use crate::heads::{
    ddpm_example_loss, flow_example_loss, l1_example_loss, DiffusionConfig, ObjectiveKind,
};
use crate::layout::{AnswerKind, SequenceLayout};
use crate::model::{Head, Model};

#[derive(Debug)]
pub enum HarnessError {
    Config(String),
    Data(String),
    Train(String),
    Io(std::io::Error),
}

impl std::fmt::Display for HarnessError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HarnessError::Config(m) => write!(f, "configuration error: {m}"),
            HarnessError::Data(m) => write!(f, "data error: {m}"),
            HarnessError::Train(m) => write!(f, "training error: {m}"),
            HarnessError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Expert demonstrations for a task family. Failed expert episodes are
/// resampled so every stored demonstration succeeds.
pub fn generate_demos(
    family: TaskFamily,
    episodes: usize,
    noise: f32,
    seed: u64,
) -> Result<DemoSet> {
    let mut set = DemoSet::default();
    for i in 0..episodes {
        let kind = family.kind_for_episode(i);
        let mut episode = None;
        for attempt in 0..20u64 {
            let idx = i as u64 * 32 + attempt;
            let mut task_rng = seeded_rng(seed, "demo-task", idx);
            let task = crate::env::manip::sample_task(kind, &mut task_rng);
            let reset_seed = derive_seed(seed, "demo-reset", idx);
            let mut state = match reset(&task, reset_seed) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let mut noise_rng = seeded_rng(seed, "demo-noise", idx);
            let mut steps = Vec::new();
            let mut success = false;
            for _ in 0..task.horizon {
                let obs = render_obs(&state);
                let pro = proprio(&state);
                let a = expert_policy(&state, &task, noise, &mut noise_rng);
                let r = step(&mut state, &task, &a);
                steps.push(DemoStep { obs, proprio: pro, action: a });
                if r.done {
                    success = r.success;
                    break;
                }
            }
            if success {
                episode = Some(DemoEpisode { task, reset_seed, steps });
                break;
            }
        }
        match episode {
            Some(ep) => set.episodes.push(ep),
            None => {
                return Err(HarnessError::Data(format!(
                    "could not generate a successful demonstration for episode {i}"
                )))
            }
        }
    }
    Ok(set)
}

/// Replay a stored demonstration open-loop from its recorded reset seed;
/// returns whether it reproduces success.
pub fn replay_demo(ep: &DemoEpisode) -> bool {
    let mut state = match reset(&ep.task, ep.reset_seed) {
        Ok(s) => s,
        Err(_) => return false,
    };
    let mut success = false;
    for s in &ep.steps {
        let r = step(&mut state, &ep.task, &s.action);
        success = r.success;
        if r.done {
            break;
        }
    }
    success
}

pub fn head_for(objective: ObjectiveKind) -> Head {
    match objective {
        ObjectiveKind::Discrete | ObjectiveKind::DiscreteDiffusion => Head::TokenLogits,
        ObjectiveKind::L1 => Head::Regression { input_proj: false },
        ObjectiveKind::FlowMatching | ObjectiveKind::ContinuousDiffusion => {
            Head::Regression { input_proj: true }
        }
    }
}

/// One training window: observation at t, instruction, and the next k
/// actions (stay-padded past the episode end).
struct Window<'a> {
    step: &'a DemoStep,
    instruction: &'a [u32],
    actions: Vec<Action>,
}

fn sample_window<'a>(demos: &'a DemoSet, k: usize, rng: &mut ChaCha8Rng) -> Window<'a> {
    let ep = &demos.episodes[rng.gen_range(0..demos.episodes.len())];
    let t = rng.gen_range(0..ep.steps.len());
    let mut actions = Vec::with_capacity(k);
    for j in 0..k {
        let a = ep.steps.get(t + j).map(|s| s.action).unwrap_or(Action::ZERO_OPEN);
        actions.push(a);
    }
    Window { step: &ep.steps[t], instruction: &ep.task.instruction, actions }
}

/// Incremental trainer driving one objective over a demo corpus.
pub struct Trainer {
    pub cfg: RunConfig,
    pub model: Model,
    pub codec: BinCodec,
    pub standardizer: Standardizer,
    pub opt: AdamW,
    pub seed: u64,
    pub ddpm: DiffusionConfig,
    demos: DemoSet,
}

impl Trainer {
    pub fn new(cfg: &RunConfig, seed: u64, demos: DemoSet) -> Result<Trainer> {
        cfg.validate().map_err(|e| HarnessError::Config(e.0))?;
        if demos.episodes.is_empty() {
            return Err(HarnessError::Data("empty demonstration set".into()));
        }
        let head = head_for(cfg.objective);
        let (model, codec, standardizer) = match cfg.init {
            Init::Pretrained => {
                if cfg.init_checkpoint.is_empty() {
                    return Err(HarnessError::Config(
                        "init=pretrained requires init_checkpoint".into(),
                    ));
                }
                checkpoint::load_into_model(Path::new(&cfg.init_checkpoint), &cfg.model, head, seed)
                    .map_err(|e| HarnessError::Config(e.to_string()))?
            }
            Init::Random => {
                let model = Model::new(cfg.model.clone(), head, seed)
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                let actions = demos.all_actions();
                let codec =
                    BinCodec::fit(&actions).map_err(|e| HarnessError::Data(e.to_string()))?;
                let standardizer =
                    Standardizer::fit(&actions).map_err(|e| HarnessError::Data(e.to_string()))?;
                (model, codec, standardizer)
            }
        };
        let opt = AdamW::new(
            AdamWConfig {
                lr: cfg.lr,
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                eps: cfg.epsilon,
                weight_decay: cfg.weight_decay,
            },
            &model.store,
        );
        Ok(Trainer {
            cfg: cfg.clone(),
            model,
            codec,
            standardizer,
            opt,
            seed,
            ddpm: DiffusionConfig::default(),
            demos,
        })
    }

    pub fn step_index(&self) -> usize {
        self.opt.step_count as usize
    }

    /// One optimizer step over a freshly sampled batch. The per-step RNG
    /// is derived from (seed, step), so a resumed run replays the exact
    /// remaining stream.
    pub fn step_once(&mut self) -> Result<f64> {
        let step = self.opt.step_count + 1;
        let mut rng = seeded_rng(self.seed, "train-step", step);
        let cfg = &self.cfg;
        let k = cfg.chunk_k;
        self.model.store.zero_grad();
        let mut loss_sum = 0.0f64;
        for _ in 0..cfg.batch_size {
            let w = sample_window(&self.demos, k, &mut rng);
            let (mut fp, loss) = match cfg.objective {
                ObjectiveKind::Discrete => {
                    let layout = SequenceLayout::new(
                        &cfg.model,
                        w.instruction.to_vec(),
                        k * ACTION_DIMS,
                        AnswerKind::ActionTokens,
                    )
                    .map_err(|e| HarnessError::Config(e.0))?;
                    let targets = self.codec.encode_chunk(&w.actions);
                    ar_example_loss(
                        &self.model,
                        &layout,
                        Some(&w.step.obs),
                        self.proprio_arg(w.step),
                        &targets,
                    )
                    .map_err(|e| HarnessError::Train(e.to_string()))?
                }
                ObjectiveKind::DiscreteDiffusion => {
                    let layout = SequenceLayout::new(
                        &cfg.model,
                        w.instruction.to_vec(),
                        k * ACTION_DIMS,
                        AnswerKind::ActionTokens,
                    )
                    .map_err(|e| HarnessError::Config(e.0))?;
                    let targets = self.codec.encode_chunk(&w.actions);
                    diffusion_example_loss(
                        &self.model,
                        &layout,
                        Some(&w.step.obs),
                        self.proprio_arg(w.step),
                        &targets,
                        &mut rng,
                    )
                    .map_err(|e| HarnessError::Train(e.to_string()))?
                }
                ObjectiveKind::L1 | ObjectiveKind::FlowMatching | ObjectiveKind::ContinuousDiffusion => {
                    let layout = SequenceLayout::new(
                        &cfg.model,
                        w.instruction.to_vec(),
                        k,
                        AnswerKind::ActionQueries,
                    )
                    .map_err(|e| HarnessError::Config(e.0))?;
                    let target = self.standardizer.apply_chunk(&w.actions);
                    match cfg.objective {
                        ObjectiveKind::L1 => l1_example_loss(
                            &self.model,
                            &layout,
                            Some(&w.step.obs),
                            self.proprio_arg(w.step),
                            &target,
                        ),
                        ObjectiveKind::FlowMatching => flow_example_loss(
                            &self.model,
                            &layout,
                            Some(&w.step.obs),
                            self.proprio_arg(w.step),
                            &target,
                            &mut rng,
                        ),
                        _ => ddpm_example_loss(
                            &self.model,
                            &layout,
                            Some(&w.step.obs),
                            self.proprio_arg(w.step),
                            &target,
                            &self.ddpm,
                            &mut rng,
                        ),
                    }
                    .map_err(|e| HarnessError::Train(e.to_string()))?
                }
            };
            let loss_value = fp.tape.scalar(loss) as f64;
            if !loss_value.is_finite() {
                return Err(HarnessError::Train(format!(
                    "non-finite loss at step {step}, aborting"
                )));
            }
            loss_sum += loss_value;
            fp.tape.backward(loss);
            self.model.accumulate_grads(&fp);
        }
        let inv_b = 1.0 / cfg.batch_size as f32;
        for p in self.model.store.iter_mut() {
            for g in p.grad.iter_mut() {
                *g *= inv_b;
            }
        }
        self.opt
            .step(&mut self.model.store)
            .map_err(|e| HarnessError::Train(e.to_string()))?;
        Ok(loss_sum / cfg.batch_size as f64)
    }

    fn proprio_arg(&self, step: &DemoStep) -> Option<[f32; ACTION_DIMS]> {
        if self.cfg.model.use_proprio {
            Some(step.proprio)
        } else {
            None
        }
    }

    /// Train to `cfg.steps`, recording the loss every 50 steps.
    pub fn run(&mut self, mut on_log: impl FnMut(&LossRecord)) -> Result<Vec<LossRecord>> {
        let hash = self.cfg.hash();
        let init = self.cfg.init.as_str().to_string();
        let mut curve = Vec::new();
        while self.step_index() < self.cfg.steps {
            let loss = self.step_once()?;
            let step = self.step_index();
            if step % 50 == 0 {
                let rec = LossRecord { step, loss, config_hash: hash.clone(), init: init.clone() };
                on_log(&rec);
                curve.push(rec);
            }
        }
        Ok(curve)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.model, &self.codec, &self.standardizer)
            .map_err(|e| HarnessError::Train(e.to_string()))?;
        Ok(())
    }

    /// Persist model plus optimizer state for bitwise resume.
    pub fn save_state(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.save_checkpoint(&dir.join("checkpoint_latest.cdlb"))?;
        std::fs::write(dir.join("optimizer_latest.opt"), self.opt.save_state())?;
        Ok(())
    }

    /// Resume from `save_state` output if present. Returns true when a
    /// state was loaded.
    pub fn try_resume(&mut self, dir: &Path) -> Result<bool> {
        let ckpt = dir.join("checkpoint_latest.cdlb");
        let opt = dir.join("optimizer_latest.opt");
        if !ckpt.exists() || !opt.exists() {
            return Ok(false);
        }
        let loaded = checkpoint::read(&ckpt).map_err(|e| HarnessError::Train(e.to_string()))?;
        if !loaded.config.structural_eq(&self.cfg.model) {
            return Err(HarnessError::Config("resume checkpoint architecture differs".into()));
        }
        for (name, shape, data) in &loaded.params {
            match self.model.store.by_name_mut(name) {
                Some(p) if &p.shape == shape => p.data.copy_from_slice(data),
                _ => {
                    return Err(HarnessError::Config(format!(
                        "resume checkpoint parameter {name} does not match"
                    )))
                }
            }
        }
        self.codec = loaded.codec;
        self.standardizer = loaded.standardizer;
        let bytes = std::fs::read(&opt)?;
        self.opt
            .load_state(&bytes)
            .map_err(|e| HarnessError::Train(e.to_string()))?;
        Ok(true)
    }
}

/// File-level training entry point shared by the pretrain and finetune
/// commands: loads demos, resumes when possible, writes the checkpoint,
/// optimizer state, and loss curve under `cfg.out`.
pub fn train_command(cfg: &RunConfig, seed: u64) -> Result<(Vec<LossRecord>, std::path::PathBuf)> {
    if cfg.dataset.is_empty() {
        return Err(HarnessError::Config("dataset path required".into()));
    }
    let demos = crate::env::dataset::read_demos(Path::new(&cfg.dataset))
        .map_err(|e| HarnessError::Data(e.to_string()))?;
    let out = Path::new(&cfg.out).to_path_buf();
    std::fs::create_dir_all(&out)?;
    let mut trainer = Trainer::new(cfg, seed, demos)?;
    let resumed = trainer.try_resume(&out)?;
    let mut jsonl = crate::harness::metrics::JsonlWriter::create(&out.join(if resumed {
        "loss_resumed.jsonl"
    } else {
        "loss.jsonl"
    }))?;
    let interval = cfg.checkpoint_interval.max(1);
    let hash = cfg.hash();
    let init = cfg.init.as_str().to_string();
    let mut curve = Vec::new();
    while trainer.step_index() < cfg.steps {
        let loss = trainer.step_once()?;
        let step = trainer.step_index();
        if step % 50 == 0 {
            let rec = LossRecord { step, loss, config_hash: hash.clone(), init: init.clone() };
            jsonl.append(&rec)?;
            curve.push(rec);
        }
        if step % interval == 0 {
            trainer.save_state(&out)?;
            trainer.save_checkpoint(&out.join(format!("checkpoint_{step}.cdlb")))?;
        }
    }
    trainer.save_state(&out)?;
    Ok((curve, out.join("checkpoint_latest.cdlb")))
}
