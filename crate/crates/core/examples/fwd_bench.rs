use std::time::Instant;

use chunklab_core::config::{AttentionMode, ModelConfig};
use chunklab_core::diffusion::diffusion_example_loss;
use chunklab_core::layout::{AnswerKind, SequenceLayout};
use chunklab_core::model::{AnswerInput, Head, Model};
use chunklab_tensor::rng::seeded_rng;

fn main() {
    for (d, layers) in [(48usize, 2usize), (64, 2), (64, 3), (128, 4)] {
        let cfg = ModelConfig {
            d_model: d,
            n_layers: layers,
            n_heads: 4,
            attention_mode: AttentionMode::Bidirectional,
            ..Default::default()
        };
        let model = Model::new(cfg.clone(), Head::TokenLogits, 0).unwrap();
        let instr = vec![7u32, 10, 8, 13, 9, 7, 11, 8, 14];
        let layout = SequenceLayout::new(&cfg, instr, 84, AnswerKind::ActionTokens).unwrap();
        let obs: Vec<f32> = (0..cfg.obs_slots() * cfg.obs_channels)
            .map(|i| ((i * 37) % 100) as f32 / 100.0)
            .collect();
        let tokens: Vec<u32> = (0..84).map(|i| 64 + (i % 256) as u32).collect();

        // inference fwd
        let n = 30;
        let t0 = Instant::now();
        for _ in 0..n {
            let mut fp = model
                .forward(&layout, Some(&obs), None, AnswerInput::Tokens(&tokens))
                .unwrap();
            let rows: Vec<usize> = (fp.ans_start..fp.ans_start + 84).collect();
            let l = model.token_logits(&mut fp, &rows).unwrap();
            std::hint::black_box(fp.tape.data(l));
        }
        let fwd_ms = t0.elapsed().as_secs_f64() * 1000.0 / n as f64;

        // train fwd+bwd
        let mut model2 = Model::new(cfg.clone(), Head::TokenLogits, 0).unwrap();
        let mut rng = seeded_rng(0, "bench", 0);
        let t1 = Instant::now();
        for _ in 0..n {
            let (mut fp, loss) =
                diffusion_example_loss(&model2, &layout, Some(&obs), None, &tokens, &mut rng).unwrap();
            fp.tape.backward(loss);
            model2.accumulate_grads(&fp);
        }
        let bwd_ms = t1.elapsed().as_secs_f64() * 1000.0 / n as f64;
        println!("d={d} L={layers} T=157: fwd {fwd_ms:.2} ms, fwd+bwd {bwd_ms:.2} ms");
    }
}
