//! Blockworld training and evaluation: grounding accuracy plus the
//! iterative first-action planning protocol.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use chunklab_tensor::optim::{AdamW, AdamWConfig};
use chunklab_tensor::rng::seeded_rng;

use crate::diffusion::{decode, diffusion_example_loss, linear_schedule, ModelAnswerCtx};
use crate::env::blockworld::{
    apply_action, goal_satisfied, iterative_replay, make_grounding_examples,
    make_planning_examples, parse_plan, planning_prompt, sample_planning_instance, solve,
    PlanState,
};
use crate::env::dataset::TokenExample;
use crate::harness::metrics::LossRecord;
use crate::harness::runconfig::RunConfig;
use crate::harness::train::{HarnessError, Result};
use crate::layout::{AnswerKind, SequenceLayout};
use crate::model::{Head, Model};
use crate::sampling::TokenFilter;
use crate::vocab::{NO, YES};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BwOutcome {
    pub config_hash: String,
    pub seed: u64,
    pub grounding_accuracy: f64,
    pub task_success: f64,
    pub action_validity: f64,
    pub grammar_validity: f64,
}

pub struct BwTrainer {
    pub cfg: RunConfig,
    pub model: Model,
    pub opt: AdamW,
    pub seed: u64,
    grounding: Vec<TokenExample>,
    planning: Vec<TokenExample>,
}

impl BwTrainer {
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<BwTrainer> {
        if cfg.model.obs_grid != 0 {
            return Err(HarnessError::Config(
                "blockworld sequences are symbolic; set obs_grid=0".into(),
            ));
        }
        cfg.validate().map_err(|e| HarnessError::Config(e.0))?;
        let mut data_rng = seeded_rng(seed, "bw-data", 0);
        let grounding: Vec<TokenExample> =
            make_grounding_examples(cfg.bw_grounding_examples, cfg.bw_blocks, &mut data_rng)
                .into_iter()
                .map(|(prompt, answer, _)| TokenExample { prompt, answer })
                .collect();
        let planning: Vec<TokenExample> =
            make_planning_examples(cfg.bw_planning_examples, cfg.bw_blocks, cfg.bw_plan_slots, &mut data_rng)
                .into_iter()
                .map(|(prompt, answer)| TokenExample { prompt, answer })
                .collect();
        let model = Model::new(cfg.model.clone(), Head::TokenLogits, seed)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
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
        Ok(BwTrainer { cfg: cfg.clone(), model, opt, seed, grounding, planning })
    }

    /// One optimizer step over a half-grounding, half-planning batch.
    pub fn step_once(&mut self) -> Result<f64> {
        let step = self.opt.step_count + 1;
        let mut rng = seeded_rng(self.seed, "bw-step", step);
        self.model.store.zero_grad();
        let b = self.cfg.batch_size;
        let mut loss_sum = 0.0f64;
        for i in 0..b {
            let ex = if i % 2 == 0 {
                &self.grounding[rng.gen_range(0..self.grounding.len())]
            } else {
                &self.planning[rng.gen_range(0..self.planning.len())]
            };
            let layout = SequenceLayout::new(
                &self.cfg.model,
                ex.prompt.clone(),
                ex.answer.len(),
                AnswerKind::TextAnswer,
            )
            .map_err(|e| HarnessError::Config(e.0))?;
            let (mut fp, loss) =
                diffusion_example_loss(&self.model, &layout, None, None, &ex.answer, &mut rng)
                    .map_err(|e| HarnessError::Train(e.to_string()))?;
            let v = fp.tape.scalar(loss) as f64;
            if !v.is_finite() {
                return Err(HarnessError::Train(format!("non-finite loss at step {step}")));
            }
            loss_sum += v;
            fp.tape.backward(loss);
            self.model.accumulate_grads(&fp);
        }
        let inv = 1.0 / b as f32;
        for p in self.model.store.iter_mut() {
            for g in p.grad.iter_mut() {
                *g *= inv;
            }
        }
        self.opt
            .step(&mut self.model.store)
            .map_err(|e| HarnessError::Train(e.to_string()))?;
        Ok(loss_sum / b as f64)
    }

    pub fn run(&mut self, mut on_log: impl FnMut(&LossRecord)) -> Result<()> {
        let hash = self.cfg.hash();
        while (self.opt.step_count as usize) < self.cfg.steps {
            let loss = self.step_once()?;
            let step = self.opt.step_count as usize;
            if step % 50 == 0 {
                on_log(&LossRecord {
                    step,
                    loss,
                    config_hash: hash.clone(),
                    init: self.cfg.init.as_str().into(),
                });
            }
        }
        Ok(())
    }
}

/// Accuracy of yes/no grounding over fresh balanced queries; the decode
/// is a forced binary choice.
pub fn grounding_accuracy(model: &Model, cfg: &RunConfig, seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed, "bw-eval-ground", 0);
    let examples = make_grounding_examples(cfg.bw_eval_queries, cfg.bw_blocks, &mut rng);
    let schedule = linear_schedule(1, 1).map_err(|e| HarnessError::Train(e.to_string()))?;
    let filter = TokenFilter::Set(vec![YES, NO]);
    let mut correct = 0usize;
    for (prompt, answer, _) in &examples {
        let layout =
            SequenceLayout::new(&model.config, prompt.clone(), 1, AnswerKind::TextAnswer)
                .map_err(|e| HarnessError::Config(e.0))?;
        let mut bound = ModelAnswerCtx { model, layout: &layout, obs: None, proprio: None };
        let mut decode_rng = seeded_rng(seed, "bw-eval-ground-decode", 0);
        let tokens = decode(&mut bound, 1, &schedule, &filter, &mut decode_rng)
            .map_err(|e| HarnessError::Train(e.to_string()))?;
        if tokens[0] == answer[0] {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len().max(1) as f64)
}

#[derive(Debug, Clone, Default)]
pub struct PlanningEval {
    pub task_success: f64,
    pub action_validity: f64,
    pub grammar_validity: f64,
}

/// Iterative planning protocol with the model in the loop: decode a plan
/// for the current scene, execute only the first action, re-observe.
pub fn planning_eval(model: &Model, cfg: &RunConfig, seed: u64) -> Result<PlanningEval> {
    let slots = cfg.bw_plan_slots;
    let steps = cfg.decode_steps.min(slots).max(1);
    let schedule = linear_schedule(steps, slots).map_err(|e| HarnessError::Train(e.to_string()))?;
    let mut successes = 0usize;
    let mut attempted_actions = 0u64;
    let mut valid_actions = 0u64;
    let mut decodes = 0u64;
    let mut grammar_ok = 0u64;
    for i in 0..cfg.bw_eval_instances {
        let mut inst_rng = seeded_rng(seed, "bw-eval-plan", i as u64);
        let (scene, goals) = sample_planning_instance(cfg.bw_blocks, &mut inst_rng);
        let mut state = PlanState::new(scene);
        let mut decode_rng = seeded_rng(seed, "bw-eval-plan-decode", i as u64);
        let max_iters = 4 * cfg.bw_blocks;
        let mut success = goal_satisfied(&state.scene, &goals);
        for _ in 0..max_iters {
            if success {
                break;
            }
            let prompt = planning_prompt(&state.scene, &goals);
            let layout =
                SequenceLayout::new(&model.config, prompt, slots, AnswerKind::TextAnswer)
                    .map_err(|e| HarnessError::Config(e.0))?;
            let mut bound = ModelAnswerCtx { model, layout: &layout, obs: None, proprio: None };
            let tokens = decode(&mut bound, slots, &schedule, &TokenFilter::All, &mut decode_rng)
                .map_err(|e| HarnessError::Train(e.to_string()))?;
            decodes += 1;
            let (actions, ok) = parse_plan(&tokens);
            if ok {
                grammar_ok += 1;
            }
            let Some(first) = actions.first() else { break };
            let (next, valid) = apply_action(&state, first);
            attempted_actions += 1;
            if valid {
                valid_actions += 1;
            }
            state = next;
            success = goal_satisfied(&state.scene, &goals);
        }
        if success {
            successes += 1;
        }
    }
    Ok(PlanningEval {
        task_success: successes as f64 / cfg.bw_eval_instances.max(1) as f64,
        action_validity: valid_actions as f64 / attempted_actions.max(1) as f64,
        grammar_validity: grammar_ok as f64 / decodes.max(1) as f64,
    })
}

/// Harness sanity bound: the symbolic solver run through the identical
/// iterative protocol must succeed on every instance.
pub fn solver_protocol_success(cfg: &RunConfig, seed: u64) -> f64 {
    let mut successes = 0usize;
    for i in 0..cfg.bw_eval_instances {
        let mut inst_rng = seeded_rng(seed, "bw-eval-plan", i as u64);
        let (scene, goals) = sample_planning_instance(cfg.bw_blocks, &mut inst_rng);
        let result = iterative_replay(
            &scene,
            &goals,
            |state| solve(&state.scene, &goals).unwrap_or_default(),
            4 * cfg.bw_blocks,
        );
        if result.task_success {
            successes += 1;
        }
    }
    successes as f64 / cfg.bw_eval_instances.max(1) as f64
}

/// Full blockworld stage: train the masked-diffusion model on grounding
/// plus planning, then report all four metrics.
pub fn blockworld_command(cfg: &RunConfig, seed: u64) -> Result<BwOutcome> {
    let out = Path::new(&cfg.out);
    std::fs::create_dir_all(out)?;
    let mut jsonl = crate::harness::metrics::JsonlWriter::create(&out.join("loss.jsonl"))?;
    let mut trainer = BwTrainer::new(cfg, seed)?;
    trainer.run(|rec| {
        let _ = jsonl.append(rec);
    })?;
    let outcome = blockworld_eval(&trainer.model, cfg, seed)?;
    std::fs::write(
        out.join("blockworld_metrics.json"),
        serde_json::to_string_pretty(&outcome)
            .map_err(|e| HarnessError::Train(e.to_string()))?,
    )?;
    Ok(outcome)
}

pub fn blockworld_eval(model: &Model, cfg: &RunConfig, seed: u64) -> Result<BwOutcome> {
    let grounding = grounding_accuracy(model, cfg, seed)?;
    let planning = planning_eval(model, cfg, seed)?;
    Ok(BwOutcome {
        config_hash: cfg.hash(),
        seed,
        grounding_accuracy: grounding,
        task_success: planning.task_success,
        action_validity: planning.action_validity,
        grammar_validity: planning.grammar_validity,
    })
}
