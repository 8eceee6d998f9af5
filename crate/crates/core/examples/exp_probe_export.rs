use std::io::Write;

use chunklab_core::env::manip::{expert_policy, render_obs, reset, sample_task, step, TaskKind};
use chunklab_tensor::rng::seeded_rng;

fn main() {
    // Export (obs, color, zone, expert action dims) rows for offline probing.
    let mut f = std::fs::File::create("/tmp/probe.csv").unwrap();
    let mut count = 0;
    'outer: for i in 0..2000u64 {
        let mut rng = seeded_rng(42, "probe-task", i);
        let task = sample_task(TaskKind::GoalMini, &mut rng);
        let mut state = reset(&task, 9000 + i).unwrap();
        let mut nrng = seeded_rng(43, "probe-noise", i);
        for _ in 0..task.horizon {
            let obs = render_obs(&state);
            let a = expert_policy(&state, &task, 0.0, &mut nrng);
            let color = task.instruction[1] - 10;
            let zone = task.instruction[3] - 13;
            let mut row: Vec<String> = obs.iter().map(|v| format!("{v:.4}")).collect();
            row.push(color.to_string());
            row.push(zone.to_string());
            row.push(format!("{:.4}", a.dx));
            row.push(format!("{:.4}", a.dy));
            row.push(format!("{:.4}", a.dz));
            row.push(format!("{:.2}", a.grip));
            writeln!(f, "{}", row.join(",")).unwrap();
            count += 1;
            if count >= 6000 {
                break 'outer;
            }
            let r = step(&mut state, &task, &a);
            if r.done {
                break;
            }
        }
    }
    println!("wrote {count} rows");
}
