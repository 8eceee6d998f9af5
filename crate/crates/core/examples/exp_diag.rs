use std::time::Instant;

use chunklab_core::codec::Action;
use chunklab_core::env::manip::{expert_policy, render_obs, reset, sample_task, step, RolloutCtx, TaskKind, ChunkPolicy};
use chunklab_core::harness::eval::{build_policy, evaluate_policy};
use chunklab_core::harness::runconfig::RunConfig;
use chunklab_core::harness::train::{generate_demos, Trainer};
use chunklab_core::harness::runconfig::TaskFamily;
use chunklab_core::heads::ObjectiveKind;
use chunklab_tensor::rng::seeded_rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let objective = args.get(1).map(|s| s.as_str()).unwrap_or("discrete_diffusion");
    let d_model: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(64);
    let steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(4000);
    let batch: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(16);
    let lr: f32 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let demos = generate_demos(TaskFamily::GoalMini, 500, 0.005, 99).unwrap();
    let cfg = RunConfig::parse(&format!(
        "stage=finetune\nobjective={objective}\nd_model={d_model}\nn_layers=2\nn_heads=4\nchunk_k=8\nbatch_size={batch}\nsteps={steps}\nlr={lr}\ntask=goalmini\n"
    ))
    .unwrap();
    let mut trainer = Trainer::new(&cfg, 7, demos).unwrap();
    let t1 = Instant::now();
    trainer
        .run(|rec| {
            if rec.step % 500 == 0 {
                println!("step {:5}  loss {:.4}  ({:.0}s)", rec.step, rec.loss, t1.elapsed().as_secs_f64());
            }
        })
        .unwrap();

    let obj = ObjectiveKind::parse(objective).unwrap();
    // behavioral probe: fresh episodes, compare decoded first-action to expert
    let mut policy = build_policy(obj, &trainer.model, &trainer.codec, &trainer.standardizer, &cfg);
    let mut agree_dir = [0usize; 3];
    let mut total = 0usize;
    let mut mae = [0.0f32; 7];
    for i in 0..40u64 {
        let mut rng = seeded_rng(1000, "diag-task", i);
        let task = sample_task(TaskKind::GoalMini, &mut rng);
        let mut state = reset(&task, 3000 + i).unwrap();
        // advance a random number of expert steps to probe varied phases
        let mut nrng = seeded_rng(2000, "diag-noise", i);
        let advance = (i % 5) * 7;
        for _ in 0..advance {
            let a = expert_policy(&state, &task, 0.005, &mut nrng);
            let r = step(&mut state, &task, &a);
            if r.done {
                break;
            }
        }
        let obs = render_obs(&state);
        let ctx = RolloutCtx {
            obs: &obs,
            proprio: chunklab_core::env::manip::proprio(&state),
            instruction: &task.instruction,
            chunk_len: 8,
            state: &state,
            task: &task,
        };
        let mut drng = seeded_rng(1, "diag-decode", i);
        let (chunk, _) = policy.decode_chunk(&ctx, &mut drng).unwrap();
        let mut erng = seeded_rng(2, "diag-none", i);
        let expert: Action = expert_policy(&state, &task, 0.0, &mut erng);
        let e = expert.to_array();
        let p = chunk[0].to_array();
        for d in 0..7 {
            mae[d] += (p[d] - e[d]).abs() / 40.0;
        }
        for d in 0..2 {
            if e[d].abs() > 0.01 {
                if (p[d] > 0.0) == (e[d] > 0.0) && p[d].abs() > 0.005 {
                    agree_dir[d] += 1;
                }
            } else {
                agree_dir[d] += usize::from(p[d].abs() <= 0.01);
            }
        }
        agree_dir[2] += usize::from((p[6] > 0.5) == (e[6] > 0.5));
        total += 1;
        if i < 6 {
            println!(
                "probe {i}: expert dx {:+.3} dy {:+.3} grip {:.2} | decoded dx {:+.3} dy {:+.3} grip {:.2}",
                e[0], e[1], e[6], p[0], p[1], p[6]
            );
        }
    }
    println!(
        "first-action agreement over {total}: dx {}  dy {}  grip {}",
        agree_dir[0], agree_dir[1], agree_dir[2]
    );
    println!(
        "per-dim MAE: {:?}",
        mae.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
    );
    // controlled left/right probe: identical scene except the target
    // object's side; a conditioning model must flip the dx sign
    let mut rng = seeded_rng(1000, "diag-task", 0);
    let task = sample_task(TaskKind::GoalMini, &mut rng);
    let mut flips = 0;
    for (i, target_x) in [(0u64, 0.2f32), (1, 0.8)] {
        let mut state = reset(&task, 555).unwrap();
        let target_id = task.goals[0].object_id;
        for o in state.objects.iter_mut() {
            if o.id == target_id {
                o.pos = [target_x, 0.5];
            } else {
                o.pos = [0.5 - 0.2 * (o.id as f32), 0.85];
            }
        }
        state.gripper = [0.5, 0.5];
        state.z = 0.15;
        let obs = render_obs(&state);
        let ctx = RolloutCtx {
            obs: &obs,
            proprio: chunklab_core::env::manip::proprio(&state),
            instruction: &task.instruction,
            chunk_len: 8,
            state: &state,
            task: &task,
        };
        let mut drng = seeded_rng(3, "diag-lr", i);
        let (chunk, _) = policy.decode_chunk(&ctx, &mut drng).unwrap();
        println!("target at x={target_x}: decoded dx {:+.3}", chunk[0].dx);
        if (target_x < 0.5) == (chunk[0].dx < -0.005) && chunk[0].dx.abs() > 0.005 {
            flips += 1;
        }
    }
    println!("left/right discrimination: {flips}/2");

    let outcome = evaluate_policy(policy.as_mut(), TaskKind::GoalMini, 8, 8, 50, 1234, None).unwrap();
    println!("eval: success {:.1}%  mean_steps {:.1}", outcome.success_rate * 100.0, outcome.mean_steps);
}
