use chunklab_core::config::ModelConfig;
use chunklab_core::diffusion::{apply_forward_masking, masked_diffusion_loss};
use chunklab_core::layout::{AnswerKind, SequenceLayout};
use chunklab_core::model::{AnswerInput, Head, Model};
use chunklab_tensor::optim::{AdamW, AdamWConfig};
use chunklab_tensor::rng::seeded_rng;

fn main() {
    // one fixed prompt + target; can the model drive the loss to ~0?
    let cfg = ModelConfig {
        d_model: 48,
        n_layers: 2,
        n_heads: 4,
        max_seq_len: 256,
        ..Default::default()
    };
    let mut model = Model::new(cfg.clone(), Head::TokenLogits, 0).unwrap();
    let layout = SequenceLayout::new(&cfg, vec![7, 10, 8, 13], 56, AnswerKind::ActionTokens).unwrap();
    let obs: Vec<f32> = (0..cfg.obs_slots() * cfg.obs_channels)
        .map(|i| ((i * 13) % 7) as f32 / 7.0)
        .collect();
    let targets: Vec<u32> = (0..56).map(|i| 64 + ((i * 5) % 256) as u32).collect();
    let mut opt = AdamW::new(AdamWConfig { lr: 1e-3, ..Default::default() }, &model.store);
    let mut rng = seeded_rng(5, "overfit", 0);

    for step in 1..=400 {
        model.store.zero_grad();
        // full masking (t=1): every position predicted from the prompt alone
        let batch = apply_forward_masking(&targets, 1.0, &mut rng).unwrap();
        let mut fp = model
            .forward(&layout, Some(&obs), None, AnswerInput::Tokens(&batch.corrupted))
            .unwrap();
        let rows: Vec<usize> = (0..56).map(|i| fp.ans_start + i).collect();
        let logits = model.token_logits(&mut fp, &rows).unwrap();
        let loss = masked_diffusion_loss(&mut fp, logits, &batch).unwrap();
        let v = fp.tape.scalar(loss);
        fp.tape.backward(loss);
        model.accumulate_grads(&fp);
        if step % 40 == 0 || step == 1 {
            // gradient magnitude summary per parameter family
            let mut summaries = Vec::new();
            for name in ["embed.token", "obs.proj.w", "layer0.attn.wq", "layer1.mlp.w1", "ln_f.g"] {
                let p = model.store.by_name(name).unwrap();
                let g2: f32 = p.grad.iter().map(|g| g * g).sum::<f32>() / p.grad.len() as f32;
                summaries.push(format!("{name}:{:.2e}", g2.sqrt()));
            }
            println!("step {step:3} loss {v:.4}  rms_grad {}", summaries.join(" "));
        }
        opt.step(&mut model.store).unwrap();
    }
}
