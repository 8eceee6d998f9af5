//! Adaptive-moment optimizer with decoupled weight decay.

use crate::graph::{Result, TensorError};
use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 3e-4, beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Optimizer state: first/second moment buffers per parameter plus the
/// step counter. The counter increases by exactly 1 per `step` call.
#[derive(Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step_count: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let m = store.iter().map(|p| vec![0.0; p.data.len()]).collect();
        let v = store.iter().map(|p| vec![0.0; p.data.len()]).collect();
        AdamW { config, step_count: 0, m, v }
    }

    /// One update over all parameters. Aborts on non-finite gradients.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for p in store.iter() {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(TensorError::NonFinite(format!(
                    "non-finite gradient in parameter {}, aborting training",
                    p.name
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (idx, p) in store.iter_mut().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..p.data.len() {
                let g = p.grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data[i] -= c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * p.data[i]);
            }
        }
        Ok(())
    }

    /// Serialize moment buffers and step counter (little-endian) so a
    /// resumed run continues bitwise-identically.
    pub fn save_state(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"CDOP");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&self.step_count.to_le_bytes());
        out.extend_from_slice(&(self.m.len() as u32).to_le_bytes());
        for buf in self.m.iter().chain(self.v.iter()) {
            out.extend_from_slice(&(buf.len() as u32).to_le_bytes());
            for &x in buf {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn load_state(&mut self, bytes: &[u8]) -> Result<()> {
        let err = |m: &str| TensorError::Parameter(format!("optimizer state: {m}"));
        if bytes.len() < 20 || &bytes[0..4] != b"CDOP" {
            return Err(err("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != 1 {
            return Err(err("unsupported version"));
        }
        self.step_count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let count = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        if count != self.m.len() {
            return Err(err("parameter count mismatch"));
        }
        let mut pos = 20;
        for buf in self.m.iter_mut().chain(self.v.iter_mut()) {
            if pos + 4 > bytes.len() {
                return Err(err("truncated"));
            }
            let n = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
            pos += 4;
            if n != buf.len() || pos + 4 * n > bytes.len() {
                return Err(err("buffer size mismatch"));
            }
            for x in buf.iter_mut() {
                *x = f32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
                pos += 4;
            }
        }
        Ok(())
    }
}
