use std::time::Instant;

use chunklab_core::env::manip::TaskKind;
use chunklab_core::harness::eval::{build_policy, evaluate_policy};
use chunklab_core::harness::runconfig::{RunConfig, Stage, TaskFamily};
use chunklab_core::harness::train::{generate_demos, Trainer};
use chunklab_core::heads::ObjectiveKind;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let objective = args.get(1).map(|s| s.as_str()).unwrap_or("discrete_diffusion");
    let d_model: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(48);
    let steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let batch: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(8);
    let episodes: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(50);
    let n_layers: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(2);
    let demo_count: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(200);
    let lr: f32 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(3e-4);

    let t0 = Instant::now();
    let demos = generate_demos(TaskFamily::GoalMini, demo_count, 0.005, 99).unwrap();
    println!(
        "demos: {} episodes, {} steps, {:.1}s",
        demos.episodes.len(),
        demos.total_steps(),
        t0.elapsed().as_secs_f64()
    );

    let cfg = RunConfig::parse(&format!(
        "stage=finetune\nobjective={objective}\nd_model={d_model}\nn_layers={n_layers}\nn_heads=4\nchunk_k=8\nbatch_size={batch}\nsteps={steps}\nlr={lr}\ntask=goalmini\n"
    ))
    .unwrap();
    assert_eq!(cfg.stage, Stage::Finetune);
    let mut trainer = Trainer::new(&cfg, 7, demos).unwrap();
    let t1 = Instant::now();
    let mut last = f64::NAN;
    let curve = trainer
        .run(|rec| {
            if rec.step % 250 == 0 {
                println!("step {:5}  loss {:.4}  ({:.1}s)", rec.step, rec.loss, t1.elapsed().as_secs_f64());
            }
            last = rec.loss;
        })
        .unwrap();
    println!(
        "train done: {} steps in {:.1}s ({:.1} ms/step), final loss {:.4}",
        cfg.steps,
        t1.elapsed().as_secs_f64(),
        t1.elapsed().as_secs_f64() * 1000.0 / cfg.steps as f64,
        curve.last().map(|r| r.loss).unwrap_or(last)
    );

    let obj = ObjectiveKind::parse(objective).unwrap();
    let mut policy = build_policy(obj, &trainer.model, &trainer.codec, &trainer.standardizer, &cfg);
    let t2 = Instant::now();
    let outcome = evaluate_policy(policy.as_mut(), TaskKind::GoalMini, 8, 8, episodes, 1234, None).unwrap();
    println!(
        "eval: success {:.1}%  mean_fwd/chunk {:.2}  mean_steps {:.1}  wall {:.2} ms/chunk  ({:.1}s)",
        outcome.success_rate * 100.0,
        outcome.mean_fwd_passes,
        outcome.mean_steps,
        outcome.mean_wall_ms,
        t2.elapsed().as_secs_f64()
    );
}
