use std::time::Instant;
use chunklab_tensor::graph::Tape;

fn bench<F: FnMut()>(name: &str, mut f: F) {
    let n = 200;
    let t0 = Instant::now();
    for _ in 0..n { f(); }
    println!("{name}: {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);
}

fn main() { main2();
    let t_len = 157usize; let d = 48usize; let dh = 12usize;
    let q: Vec<f32> = (0..t_len*d).map(|i| (i as f32 * 0.001).sin()).collect();
    let w: Vec<f32> = (0..d*d).map(|i| (i as f32 * 0.002).cos() * 0.1).collect();
    let w4: Vec<f32> = (0..d*4*d).map(|i| (i as f32 * 0.002).cos() * 0.1).collect();
    let emb: Vec<f32> = (0..320*d).map(|i| (i as f32 * 0.003).sin() * 0.1).collect();

    bench("matmul [157,48]x[48,48]", || {
        let mut t: Tape<f32> = Tape::new();
        let a = t.leaf(q.clone(), vec![t_len, d], false).unwrap();
        let b = t.leaf(w.clone(), vec![d, d], false).unwrap();
        std::hint::black_box(t.matmul(a, b).unwrap());
    });
    bench("matmul [157,48]x[48,192]", || {
        let mut t: Tape<f32> = Tape::new();
        let a = t.leaf(q.clone(), vec![t_len, d], false).unwrap();
        let b = t.leaf(w4.clone(), vec![d, 4*d], false).unwrap();
        std::hint::black_box(t.matmul(a, b).unwrap());
    });
    bench("matmul_nt qh[157,12]x kh[157,12]", || {
        let mut t: Tape<f32> = Tape::new();
        let a = t.leaf(q[..t_len*dh].to_vec(), vec![t_len, dh], false).unwrap();
        let b = t.leaf(q[..t_len*dh].to_vec(), vec![t_len, dh], false).unwrap();
        std::hint::black_box(t.matmul_nt(a, b).unwrap());
    });
    bench("matmul attn[157,157]x vh[157,12]", || {
        let mut t: Tape<f32> = Tape::new();
        let a = t.leaf(vec![0.01; t_len*t_len], vec![t_len, t_len], false).unwrap();
        let b = t.leaf(q[..t_len*dh].to_vec(), vec![t_len, dh], false).unwrap();
        std::hint::black_box(t.matmul(a, b).unwrap());
    });
    bench("softmax [157,157]", || {
        let mut t: Tape<f32> = Tape::new();
        let a = t.leaf(vec![0.3; t_len*t_len], vec![t_len, t_len], false).unwrap();
        std::hint::black_box(t.softmax(a).unwrap());
    });
    bench("gelu [157,192]", || {
        let mut t: Tape<f32> = Tape::new();
        let a = t.leaf(q[..t_len].repeat(192), vec![t_len, 192], false).unwrap();
        std::hint::black_box(t.gelu(a));
    });
    bench("layer_norm [157,48]", || {
        let mut t: Tape<f32> = Tape::new();
        let a = t.leaf(q.clone(), vec![t_len, d], false).unwrap();
        let g = t.leaf(vec![1.0; d], vec![1, d], false).unwrap();
        let b = t.leaf(vec![0.0; d], vec![1, d], false).unwrap();
        std::hint::black_box(t.layer_norm(a, g, b, 1e-5).unwrap());
    });
    bench("logits nt [84,48]x[320,48]", || {
        let mut t: Tape<f32> = Tape::new();
        let a = t.leaf(q[..84*d].to_vec(), vec![84, d], false).unwrap();
        let b = t.leaf(emb.clone(), vec![320, d], false).unwrap();
        std::hint::black_box(t.matmul_nt(a, b).unwrap());
    });
    bench("leaf copies of all params (~306KB)", || {
        let mut t: Tape<f32> = Tape::new();
        for _ in 0..30 {
            std::hint::black_box(t.leaf(w.clone(), vec![d, d], false).unwrap());
        }
    });
    bench("slice_cols x12 [157,48]->[157,12]", || {
        let mut t: Tape<f32> = Tape::new();
        let a = t.leaf(q.clone(), vec![t_len, d], false).unwrap();
        for h in 0..12 {
            std::hint::black_box(t.slice_cols(a, (h % 4) * dh, dh).unwrap());
        }
    });
}

fn main2() {
    let t_len = 157usize; let d = 64usize;
    let q: Vec<f32> = (0..t_len*d).map(|i| (i as f32 * 0.001).sin()).collect();
    bench("mha 4 heads d=64 bidi", || {
        let mut t: Tape<f32> = Tape::new();
        let a = t.leaf(q.clone(), vec![t_len, d], false).unwrap();
        let b = t.leaf(q.clone(), vec![t_len, d], false).unwrap();
        let c = t.leaf(q.clone(), vec![t_len, d], false).unwrap();
        std::hint::black_box(t.mha(a, b, c, 4, false).unwrap());
    });
    bench("mha 4 heads d=64 causal", || {
        let mut t: Tape<f32> = Tape::new();
        let a = t.leaf(q.clone(), vec![t_len, d], false).unwrap();
        let b = t.leaf(q.clone(), vec![t_len, d], false).unwrap();
        let c = t.leaf(q.clone(), vec![t_len, d], false).unwrap();
        std::hint::black_box(t.mha(a, b, c, 4, true).unwrap());
    });
    let w4: Vec<f32> = (0..d*4*d).map(|i| (i as f32 * 0.002).cos() * 0.1).collect();
    bench("matmul [157,64]x[64,256] unrolled", || {
        let mut t: Tape<f32> = Tape::new();
        let a = t.leaf(q.clone(), vec![t_len, d], false).unwrap();
        let b = t.leaf(w4.clone(), vec![d, 4*d], false).unwrap();
        std::hint::black_box(t.matmul(a, b).unwrap());
    });
    bench("gelu fast [157,256]", || {
        let mut t: Tape<f32> = Tape::new();
        let a = t.leaf(q[..157].repeat(256), vec![t_len, 256], false).unwrap();
        std::hint::black_box(t.gelu(a));
    });
    let w: Vec<f32> = (0..d*d).map(|i| (i as f32*0.002).cos()*0.1).collect();
    bench("matmul [157,64]x[64,64] unrolled", || {
        let mut t: Tape<f32> = Tape::new();
        let a = t.leaf(q.clone(), vec![t_len, d], false).unwrap();
        let b = t.leaf(w.clone(), vec![d, d], false).unwrap();
        std::hint::black_box(t.matmul(a, b).unwrap());
    });
    let emb: Vec<f32> = (0..320*d).map(|i| (i as f32 * 0.003).sin() * 0.1).collect();
    bench("logits nt [84,64]x[320,64] unrolled", || {
        let mut t: Tape<f32> = Tape::new();
        let a = t.leaf(q[..84*d].to_vec(), vec![84, d], false).unwrap();
        let b = t.leaf(emb.clone(), vec![320, d], false).unwrap();
        std::hint::black_box(t.matmul_nt(a, b).unwrap());
    });
}

