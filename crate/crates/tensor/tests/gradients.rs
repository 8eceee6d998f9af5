//! Finite-difference verification of every differentiable op, plus the
//! hand-arithmetic and identity oracles for the forward values.

use chunklab_tensor::gradcheck::{finite_diff_grad, max_rel_error};
use chunklab_tensor::graph::{NodeId, Tape};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

/// Builds a scalar-valued graph from a flat input vector and returns the
/// loss node plus the leaf to differentiate.
type Builder = dyn Fn(&mut Tape<f64>, &[f64]) -> (NodeId, NodeId);

fn check_grad(build: &Builder, x: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let (loss, leaf) = build(&mut tape, x);
    tape.backward(loss);
    let analytic = tape.grad(leaf).to_vec();
    let f = |v: &[f64]| {
        let mut t = Tape::new();
        let (l, _) = build(&mut t, v);
        t.scalar(l)
    };
    let numeric = finite_diff_grad(&f, x, H);
    max_rel_error(&analytic, &numeric, 1e-4)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
}

#[test]
fn matmul_forward_hand_arithmetic() {
    // [[1,2],[3,4]] * [[1],[1]] = [[3],[7]]
    let mut tape: Tape<f64> = Tape::new();
    let a = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2], false).unwrap();
    let b = tape.leaf(vec![1.0, 1.0], vec![2, 1], false).unwrap();
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.data(c), &[3.0, 7.0]);
}

#[test]
fn matmul_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = rand_vec(&mut rng, 9);
    let mut tape: Tape<f64> = Tape::new();
    let eye = tape
        .leaf(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![3, 3], false)
        .unwrap();
    let mm = tape.leaf(m.clone(), vec![3, 3], false).unwrap();
    let c = tape.matmul(eye, mm).unwrap();
    assert_eq!(tape.data(c), &m[..]);
}

#[test]
fn matmul_shape_mismatch_is_dimension_error() {
    let mut tape: Tape<f64> = Tape::new();
    let a = tape.leaf(vec![0.0; 6], vec![2, 3], false).unwrap();
    let b = tape.leaf(vec![0.0; 8], vec![2, 4], false).unwrap();
    assert!(tape.matmul(a, b).is_err());
}

#[test]
fn matmul_grad_of_sum_is_column_sums() {
    // d sum(A*B) / dA[i,k] = sum_j B[k,j]: every row of dA equals the
    // column sums of B.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a_data = rand_vec(&mut rng, 6);
    let b_data = rand_vec(&mut rng, 12);
    let b_copy = b_data.clone();
    let build = move |tape: &mut Tape<f64>, x: &[f64]| {
        let a = tape.leaf(x.to_vec(), vec![2, 3], true).unwrap();
        let b = tape.leaf(b_copy.clone(), vec![3, 4], false).unwrap();
        let c = tape.matmul(a, b).unwrap();
        let loss = tape.scaled_sum(c, 1.0);
        (loss, a)
    };
    assert!(check_grad(&build, &a_data) < TOL);

    let mut tape = Tape::new();
    let (loss, leaf) = build(&mut tape, &a_data);
    tape.backward(loss);
    let grad = tape.grad(leaf);
    for i in 0..2 {
        for k in 0..3 {
            let col_sum: f64 = (0..4).map(|j| b_data[k * 4 + j]).sum();
            assert!((grad[i * 3 + k] - col_sum).abs() < 1e-9);
        }
    }
}

#[test]
fn softmax_uniform_and_shift_invariance() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.leaf(vec![0.0, 0.0], vec![1, 2], false).unwrap();
    let s = tape.softmax(x).unwrap();
    assert_eq!(tape.data(s), &[0.5, 0.5]);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v = rand_vec(&mut rng, 8);
    let shifted: Vec<f64> = v.iter().map(|x| x + 3.25).collect();
    let mut t2: Tape<f64> = Tape::new();
    let a = t2.leaf(v, vec![2, 4], false).unwrap();
    let b = t2.leaf(shifted, vec![2, 4], false).unwrap();
    let sa = t2.softmax(a).unwrap();
    let sb = t2.softmax(b).unwrap();
    for (x, y) in t2.data(sa).iter().zip(t2.data(sb)) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn softmax_rows_sum_to_one_and_nan_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let v = rand_vec(&mut rng, 20);
    let mut tape: Tape<f64> = Tape::new();
    let a = tape.leaf(v, vec![4, 5], false).unwrap();
    let s = tape.softmax(a).unwrap();
    for r in 0..4 {
        let sum: f64 = tape.data(s)[r * 5..(r + 1) * 5].iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    let mut t2: Tape<f64> = Tape::new();
    let bad = t2.leaf(vec![0.0, f64::NAN], vec![1, 2], false).unwrap();
    assert!(t2.softmax(bad).is_err());
}

#[test]
fn layer_norm_constant_row_is_zero_pre_affine() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.leaf(vec![2.5; 6], vec![1, 6], false).unwrap();
    let g = tape.leaf(vec![1.0; 6], vec![1, 6], false).unwrap();
    let b = tape.leaf(vec![0.0; 6], vec![1, 6], false).unwrap();
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    for &v in tape.data(y) {
        assert!(v.abs() < 1e-9);
    }
}

#[test]
fn cross_entropy_uniform_logits_is_log_vocab() {
    let mut tape: Tape<f64> = Tape::new();
    let logits = tape.leaf(vec![0.7; 4], vec![1, 4], false).unwrap();
    let ce = tape.ce_rows(logits, &[2]).unwrap();
    assert!((tape.scalar(ce) - (4.0f64).ln()).abs() < 1e-12);
}

#[test]
fn cross_entropy_out_of_range_target_is_index_error() {
    let mut tape: Tape<f64> = Tape::new();
    let logits = tape.leaf(vec![0.0; 4], vec![1, 4], false).unwrap();
    assert!(tape.ce_rows(logits, &[4]).is_err());
}

#[test]
fn cross_entropy_non_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let v = rand_vec(&mut rng, 12);
        let mut tape: Tape<f64> = Tape::new();
        let logits = tape.leaf(v, vec![3, 4], false).unwrap();
        let ce = tape.ce_rows(logits, &[0, 1, 3]).unwrap();
        for &l in tape.data(ce) {
            assert!(l >= 0.0);
        }
    }
}

/// The randomized-shape sweep over every differentiable op. The
/// acceptance suite re-runs this at its full shape count.
pub fn gradient_sweep(shapes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..shapes {
        let m = rng.gen_range(1..5usize);
        let k = rng.gen_range(1..5usize);
        let n = rng.gen_range(2..6usize);
        let op = case % 13;
        let build: Box<Builder> = match op {
            0 => {
                let b_data = rand_vec(&mut rng, k * n);
                Box::new(move |t, x| {
                    let a = t.leaf(x.to_vec(), vec![m, k], true).unwrap();
                    let b = t.leaf(b_data.clone(), vec![k, n], false).unwrap();
                    let c = t.matmul(a, b).unwrap();
                    let sq = t.mul(c, c).unwrap();
                    (t.mean_all(sq), a)
                })
            }
            1 => {
                let b_data = rand_vec(&mut rng, n * k);
                Box::new(move |t, x| {
                    let a = t.leaf(x.to_vec(), vec![m, k], true).unwrap();
                    let b = t.leaf(b_data.clone(), vec![n, k], false).unwrap();
                    let c = t.matmul_nt(a, b).unwrap();
                    let sq = t.mul(c, c).unwrap();
                    (t.mean_all(sq), a)
                })
            }
            2 => Box::new(move |t, x| {
                let a = t.leaf(x.to_vec(), vec![m, n], true).unwrap();
                let s = t.softmax(a).unwrap();
                let sq = t.mul(s, s).unwrap();
                (t.mean_all(sq), a)
            }),
            3 => {
                let g_data = rand_vec(&mut rng, n);
                let b_data = rand_vec(&mut rng, n);
                Box::new(move |t, x| {
                    let a = t.leaf(x.to_vec(), vec![m, n], true).unwrap();
                    let g = t.leaf(g_data.clone(), vec![1, n], false).unwrap();
                    let b = t.leaf(b_data.clone(), vec![1, n], false).unwrap();
                    let y = t.layer_norm(a, g, b, 1e-5).unwrap();
                    let sq = t.mul(y, y).unwrap();
                    (t.mean_all(sq), a)
                })
            }
            4 => Box::new(move |t, x| {
                let a = t.leaf(x.to_vec(), vec![m, n], true).unwrap();
                let y = t.gelu(a);
                (t.mean_all(y), a)
            }),
            5 => {
                let targets: Vec<usize> = (0..m).map(|i| i % n).collect();
                Box::new(move |t, x| {
                    let a = t.leaf(x.to_vec(), vec![m, n], true).unwrap();
                    let ce = t.ce_rows(a, &targets).unwrap();
                    (t.mean_all(ce), a)
                })
            }
            6 => {
                // gather_rows as embedding lookup: loss reads repeated rows
                let idx: Vec<usize> = (0..2 * m).map(|i| i % m).collect();
                Box::new(move |t, x| {
                    let a = t.leaf(x.to_vec(), vec![m, n], true).unwrap();
                    let g = t.gather_rows(a, &idx).unwrap();
                    let sq = t.mul(g, g).unwrap();
                    (t.mean_all(sq), a)
                })
            }
            7 => {
                let bias = rand_vec(&mut rng, n);
                Box::new(move |t, x| {
                    let a = t.leaf(x.to_vec(), vec![m, n], true).unwrap();
                    let b = t.leaf(bias.clone(), vec![1, n], false).unwrap();
                    let y = t.add_bias(a, b).unwrap();
                    let s = t.softmax(y).unwrap();
                    let sq = t.mul(s, s).unwrap();
                    (t.mean_all(sq), a)
                })
            }
            8 => {
                let target = rand_vec(&mut rng, m * n);
                Box::new(move |t, x| {
                    let a = t.leaf(x.to_vec(), vec![m, n], true).unwrap();
                    (t.mse_loss(a, &target).unwrap(), a)
                })
            }
            9 => {
                // L1 away from kinks: shift targets so |x - t| > 0.1
                let target: Vec<f64> = rand_vec(&mut rng, m * n).iter().map(|v| v + 4.0).collect();
                Box::new(move |t, x| {
                    let a = t.leaf(x.to_vec(), vec![m, n], true).unwrap();
                    (t.l1_loss(a, &target).unwrap(), a)
                })
            }
            10 => {
                // slices + concat round trip
                Box::new(move |t, x| {
                    let a = t.leaf(x.to_vec(), vec![m, 2 * n], true).unwrap();
                    let left = t.slice_cols(a, 0, n).unwrap();
                    let right = t.slice_cols(a, n, n).unwrap();
                    let prod = t.mul(left, right).unwrap();
                    let top = t.slice_rows(prod, 0, m).unwrap();
                    let cat = t.concat_rows(&[top, prod]).unwrap();
                    let sq = t.mul(cat, cat).unwrap();
                    (t.mean_all(sq), a)
                })
            }
            _ => {
                // fused attention: x packs q|k|v rows; heads 1 or 2
                let t_len = m + 1;
                let width = 2 * k.max(1);
                let heads = if case % 2 == 0 { 1 } else { 2 };
                let causal = case % 4 < 2;
                Box::new(move |t, x| {
                    let a = t.leaf(x.to_vec(), vec![3 * t_len, width], true).unwrap();
                    let q = t.slice_rows(a, 0, t_len).unwrap();
                    let kk = t.slice_rows(a, t_len, t_len).unwrap();
                    let v = t.slice_rows(a, 2 * t_len, t_len).unwrap();
                    let o = t.mha(q, kk, v, heads, causal).unwrap();
                    let sq = t.mul(o, o).unwrap();
                    (t.mean_all(sq), a)
                })
            }
        };
        let len = match op {
            0 | 1 => m * k,
            10 => m * 2 * n,
            11 | 12 => 3 * (m + 1) * 2 * k.max(1),
            _ => m * n,
        };
        let x = rand_vec(&mut rng, len);
        let err = check_grad(&build, &x);
        if err > worst {
            worst = err;
        }
    }
    worst
}

#[test]
fn randomized_gradient_sweep_small() {
    let worst = gradient_sweep(22, 42);
    assert!(worst < TOL, "worst relative gradient error {worst}");
}
