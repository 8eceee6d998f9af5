use chunklab_tensor::optim::{AdamW, AdamWConfig};
use chunklab_tensor::params::ParamStore;

fn store_with(w: Vec<f32>) -> ParamStore {
    let mut s = ParamStore::new();
    let n = w.len();
    s.add("w", vec![1, n], w).unwrap();
    s
}

#[test]
fn zero_gradient_zero_decay_leaves_params_unchanged() {
    let mut store = store_with(vec![0.3, -0.7, 1.2]);
    let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &store);
    let before = store.by_name("w").unwrap().data.clone();
    opt.step(&mut store).unwrap();
    assert_eq!(store.by_name("w").unwrap().data, before);
    assert_eq!(opt.step_count, 1);
}

#[test]
fn one_step_on_quadratic_decreases_magnitude() {
    // f(w) = w^2, grad = 2w at w = 1
    let mut store = store_with(vec![1.0]);
    let mut opt = AdamW::new(AdamWConfig { lr: 0.1, ..Default::default() }, &store);
    store.by_name_mut("w").unwrap().grad[0] = 2.0;
    opt.step(&mut store).unwrap();
    let w = store.by_name("w").unwrap().data[0];
    assert!(w.abs() < 1.0, "|w| should shrink, got {w}");
}

#[test]
fn non_finite_gradient_aborts() {
    let mut store = store_with(vec![1.0]);
    let mut opt = AdamW::new(AdamWConfig::default(), &store);
    store.by_name_mut("w").unwrap().grad[0] = f32::NAN;
    assert!(opt.step(&mut store).is_err());
    assert_eq!(opt.step_count, 0);
}

#[test]
fn same_seed_runs_are_bitwise_identical() {
    // Two full runs over a toy quadratic with identical inputs must agree
    // bit for bit, including after a save/load of optimizer state.
    let run = |steps_before_save: usize| -> Vec<f32> {
        let mut store = store_with(vec![0.9, -0.4]);
        let mut opt = AdamW::new(AdamWConfig { lr: 0.05, ..Default::default() }, &store);
        let mut saved: Option<(Vec<u8>, Vec<f32>)> = None;
        for step in 0..40 {
            if step == steps_before_save {
                saved = Some((opt.save_state(), store.by_name("w").unwrap().data.clone()));
            }
            let g: Vec<f32> = store.by_name("w").unwrap().data.iter().map(|w| 2.0 * w).collect();
            store.by_name_mut("w").unwrap().grad.copy_from_slice(&g);
            opt.step(&mut store).unwrap();
            store.zero_grad();
        }
        if let Some((state, weights)) = saved {
            // Resume from the snapshot and replay the remaining steps.
            let mut store2 = store_with(weights);
            let mut opt2 = AdamW::new(AdamWConfig { lr: 0.05, ..Default::default() }, &store2);
            opt2.load_state(&state).unwrap();
            for _ in steps_before_save..40 {
                let g: Vec<f32> = store2.by_name("w").unwrap().data.iter().map(|w| 2.0 * w).collect();
                store2.by_name_mut("w").unwrap().grad.copy_from_slice(&g);
                opt2.step(&mut store2).unwrap();
                store2.zero_grad();
            }
            let direct = store.by_name("w").unwrap().data.clone();
            let resumed = store2.by_name("w").unwrap().data.clone();
            assert_eq!(
                direct.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                resumed.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
        store.by_name("w").unwrap().data.clone()
    };
    let a = run(20);
    let b = run(20);
    assert_eq!(
        a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn duplicate_parameter_names_rejected() {
    let mut s = ParamStore::new();
    s.add("w", vec![1, 1], vec![0.0]).unwrap();
    assert!(s.add("w", vec![1, 1], vec![0.0]).is_err());
}
