//! Continuous-action fine-tuning objectives: L1 regression, flow
//! matching, and continuous diffusion. Discrete objectives reuse the
//! token losses over action bins.

use chunklab_tensor::graph::NodeId;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::ACTION_DIMS;
use crate::layout::SequenceLayout;
use crate::model::{AnswerInput, ForwardPass, Model, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// Autoregressive next-token loss over action-bin tokens.
    Discrete,
    /// Masked-diffusion loss over action-bin tokens.
    DiscreteDiffusion,
    /// Direct chunk regression with mean absolute error.
    L1,
    /// Velocity regression along the straight noise-to-data path.
    FlowMatching,
    /// Noise-prediction diffusion over continuous chunks.
    ContinuousDiffusion,
}

impl ObjectiveKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectiveKind::Discrete => "discrete",
            ObjectiveKind::DiscreteDiffusion => "discrete_diffusion",
            ObjectiveKind::L1 => "l1",
            ObjectiveKind::FlowMatching => "flow_matching",
            ObjectiveKind::ContinuousDiffusion => "continuous_diffusion",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "discrete" => Some(ObjectiveKind::Discrete),
            "discrete_diffusion" => Some(ObjectiveKind::DiscreteDiffusion),
            "l1" => Some(ObjectiveKind::L1),
            "flow_matching" => Some(ObjectiveKind::FlowMatching),
            "continuous_diffusion" => Some(ObjectiveKind::ContinuousDiffusion),
            _ => None,
        }
    }

    pub const ALL: [ObjectiveKind; 5] = [
        ObjectiveKind::Discrete,
        ObjectiveKind::DiscreteDiffusion,
        ObjectiveKind::L1,
        ObjectiveKind::FlowMatching,
        ObjectiveKind::ContinuousDiffusion,
    ];

    pub fn is_continuous(&self) -> bool {
        matches!(
            self,
            ObjectiveKind::L1 | ObjectiveKind::FlowMatching | ObjectiveKind::ContinuousDiffusion
        )
    }
}

#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub inference_steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { inference_steps: 4 }
    }
}

/// Linear beta schedule with the cumulative signal level per step.
#[derive(Debug, Clone)]
pub struct DiffusionConfig {
    pub timesteps: usize,
    pub betas: Vec<f32>,
    pub alpha_bars: Vec<f32>,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig::new(100, 1e-4, 0.02)
    }
}

impl DiffusionConfig {
    pub fn new(timesteps: usize, beta_start: f32, beta_end: f32) -> Self {
        let betas: Vec<f32> = (0..timesteps)
            .map(|i| {
                if timesteps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f32 / (timesteps - 1) as f32
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(timesteps);
        let mut acc = 1.0f32;
        for &b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        DiffusionConfig { timesteps, betas, alpha_bars }
    }
}

#[derive(Debug)]
pub enum HeadError {
    Model(ModelError),
    Shape(String),
    Sampling(String),
}

impl std::fmt::Display for HeadError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HeadError::Model(e) => write!(f, "{e}"),
            HeadError::Shape(m) => write!(f, "shape error: {m}"),
            HeadError::Sampling(m) => write!(f, "sampling error: {m}"),
        }
    }
}

impl std::error::Error for HeadError {}

impl From<ModelError> for HeadError {
    fn from(e: ModelError) -> Self {
        HeadError::Model(e)
    }
}

pub type Result<T> = std::result::Result<T, HeadError>;

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Straight-path interpolant and its velocity target:
/// x_tau = tau*a + (1-tau)*eps, velocity = a - eps.
pub fn flow_pair(target: &[f32], eps: &[f32], tau: f32) -> (Vec<f32>, Vec<f32>) {
    let x: Vec<f32> = target
        .iter()
        .zip(eps)
        .map(|(&a, &e)| tau * a + (1.0 - tau) * e)
        .collect();
    let v: Vec<f32> = target.iter().zip(eps).map(|(&a, &e)| a - e).collect();
    (x, v)
}

/// Mean absolute error between a predicted chunk node and a target chunk
/// (standardized values, row-major [k,7]).
pub fn l1_chunk_loss(fp: &mut ForwardPass, pred: NodeId, target: &[f32]) -> Result<NodeId> {
    let shape = fp.tape.shape(pred).to_vec();
    if shape.len() != 2 || shape[0] * shape[1] != target.len() || shape[1] != ACTION_DIMS {
        return Err(HeadError::Shape(format!(
            "prediction shape {shape:?} incompatible with target length {}",
            target.len()
        )));
    }
    fp.tape
        .l1_loss(pred, target)
        .map_err(|e| HeadError::Model(ModelError::Tensor(e)))
}

/// L1 objective for one example: one forward pass, regression head, mean
/// absolute error against the standardized target chunk.
pub fn l1_example_loss(
    model: &Model,
    layout: &SequenceLayout,
    obs: Option<&[f32]>,
    proprio: Option<[f32; 7]>,
    target_std: &[f32],
) -> Result<(ForwardPass, NodeId)> {
    let mut fp = model.forward(layout, obs, proprio, AnswerInput::Queries { values: None, time: 0.0 })?;
    let pred = model.regression(&mut fp)?;
    let loss = l1_chunk_loss(&mut fp, pred, target_std)?;
    Ok((fp, loss))
}

/// Flow-matching objective: sample tau ~ U(0,1) and eps ~ N(0,I), feed
/// x_tau through the query slots, regress the velocity a - eps.
pub fn flow_example_loss(
    model: &Model,
    layout: &SequenceLayout,
    obs: Option<&[f32]>,
    proprio: Option<[f32; 7]>,
    target_std: &[f32],
    rng: &mut ChaCha8Rng,
) -> Result<(ForwardPass, NodeId)> {
    let tau: f32 = rng.gen();
    let eps = normal_vec(rng, target_std.len());
    let (x_tau, velocity) = flow_pair(target_std, &eps, tau);
    let mut fp = model.forward(
        layout,
        obs,
        proprio,
        AnswerInput::Queries { values: Some(&x_tau), time: tau },
    )?;
    let pred = model.regression(&mut fp)?;
    let loss = fp
        .tape
        .mse_loss(pred, &velocity)
        .map_err(|e| HeadError::Model(ModelError::Tensor(e)))?;
    Ok((fp, loss))
}

/// Velocity field interface so the Euler sampler can be driven by the
/// trained model or by closed-form oracles in tests.
pub trait VelocityField {
    fn velocity(&mut self, x: &[f32], tau: f32) -> Result<Vec<f32>>;
}

pub struct ModelVelocity<'a> {
    pub model: &'a Model,
    pub layout: &'a SequenceLayout,
    pub obs: Option<&'a [f32]>,
    pub proprio: Option<[f32; 7]>,
}

impl VelocityField for ModelVelocity<'_> {
    fn velocity(&mut self, x: &[f32], tau: f32) -> Result<Vec<f32>> {
        let mut fp = self.model.forward(
            self.layout,
            self.obs,
            self.proprio,
            AnswerInput::Queries { values: Some(x), time: tau },
        )?;
        let pred = self.model.regression(&mut fp)?;
        Ok(fp.tape.data(pred).to_vec())
    }
}

/// Euler integration of the velocity field from noise at tau=0 to data at
/// tau=1. Returns standardized values; the caller destandardizes.
pub fn flow_sample(
    field: &mut dyn VelocityField,
    chunk_len: usize,
    config: &FlowConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f32>> {
    if config.inference_steps == 0 {
        return Err(HeadError::Sampling("inference_steps must be >= 1".into()));
    }
    let n = chunk_len * ACTION_DIMS;
    let mut x = normal_vec(rng, n);
    let dt = 1.0 / config.inference_steps as f32;
    for s in 0..config.inference_steps {
        let tau = s as f32 * dt;
        let v = field.velocity(&x, tau)?;
        if v.len() != n {
            return Err(HeadError::Sampling(format!("velocity length {} != {n}", v.len())));
        }
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += dt * vi;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(HeadError::Sampling("non-finite intermediate state".into()));
        }
    }
    Ok(x)
}

/// Noise-prediction objective: sample a step t, form the noised chunk
/// x_t = sqrt(abar_t)*a + sqrt(1-abar_t)*eps, regress eps.
pub fn ddpm_example_loss(
    model: &Model,
    layout: &SequenceLayout,
    obs: Option<&[f32]>,
    proprio: Option<[f32; 7]>,
    target_std: &[f32],
    config: &DiffusionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(ForwardPass, NodeId)> {
    let t_idx = rng.gen_range(0..config.timesteps);
    let abar = config.alpha_bars[t_idx];
    let eps = normal_vec(rng, target_std.len());
    let x_t: Vec<f32> = target_std
        .iter()
        .zip(&eps)
        .map(|(&a, &e)| abar.sqrt() * a + (1.0 - abar).sqrt() * e)
        .collect();
    let time = (t_idx + 1) as f32 / config.timesteps as f32;
    let mut fp = model.forward(
        layout,
        obs,
        proprio,
        AnswerInput::Queries { values: Some(&x_t), time },
    )?;
    let pred = model.regression(&mut fp)?;
    let loss = fp
        .tape
        .mse_loss(pred, &eps)
        .map_err(|e| HeadError::Model(ModelError::Tensor(e)))?;
    Ok((fp, loss))
}

/// Noise predictor interface for the ancestral sampler.
pub trait NoisePredictor {
    fn epsilon(&mut self, x: &[f32], t_idx: usize, timesteps: usize) -> Result<Vec<f32>>;
}

pub struct ModelNoise<'a> {
    pub model: &'a Model,
    pub layout: &'a SequenceLayout,
    pub obs: Option<&'a [f32]>,
    pub proprio: Option<[f32; 7]>,
}

impl NoisePredictor for ModelNoise<'_> {
    fn epsilon(&mut self, x: &[f32], t_idx: usize, timesteps: usize) -> Result<Vec<f32>> {
        let time = (t_idx + 1) as f32 / timesteps as f32;
        let mut fp = self.model.forward(
            self.layout,
            self.obs,
            self.proprio,
            AnswerInput::Queries { values: Some(x), time },
        )?;
        let pred = self.model.regression(&mut fp)?;
        Ok(fp.tape.data(pred).to_vec())
    }
}

/// Full ancestral reverse chain: exactly `config.timesteps` predictor
/// calls. Returns standardized values.
pub fn ddpm_sample(
    predictor: &mut dyn NoisePredictor,
    chunk_len: usize,
    config: &DiffusionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f32>> {
    let n = chunk_len * ACTION_DIMS;
    let mut x = normal_vec(rng, n);
    for t in (0..config.timesteps).rev() {
        let eps_hat = predictor.epsilon(&x, t, config.timesteps)?;
        if eps_hat.len() != n {
            return Err(HeadError::Sampling(format!("epsilon length {} != {n}", eps_hat.len())));
        }
        let beta = config.betas[t];
        let alpha = 1.0 - beta;
        let abar = config.alpha_bars[t];
        let coef = beta / (1.0 - abar).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        let abar_prev = if t > 0 { config.alpha_bars[t - 1] } else { 1.0 };
        let sigma = if t > 0 {
            ((1.0 - abar_prev) / (1.0 - abar) * beta).sqrt()
        } else {
            0.0
        };
        for i in 0..n {
            let mean = inv_sqrt_alpha * (x[i] - coef * eps_hat[i]);
            let z: f32 = if t > 0 { StandardNormal.sample(rng) } else { 0.0 };
            x[i] = mean + sigma * z;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(HeadError::Sampling("non-finite intermediate state".into()));
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn flow_path_endpoints() {
        let a = vec![0.5f32, -1.0, 2.0];
        let eps = vec![0.1f32, 0.2, -0.3];
        let (x1, _) = flow_pair(&a, &eps, 1.0);
        assert_eq!(x1, a);
        let (x0, _) = flow_pair(&a, &eps, 0.0);
        assert_eq!(x0, eps);
    }

    #[test]
    fn point_mass_velocity_identity() {
        // For a = 0 the true velocity is -eps, and -x_tau/(1-tau)
        // recovers it exactly along the straight path.
        let a = vec![0.0f32; 7];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let eps = normal_vec(&mut rng, 7);
            let tau: f32 = rng.gen_range(0.0..0.95);
            let (x, v) = flow_pair(&a, &eps, tau);
            for i in 0..7 {
                assert!((v[i] + eps[i]).abs() < 1e-6);
                assert!((-x[i] / (1.0 - tau) - v[i]).abs() < 1e-5);
            }
        }
    }

    /// Oracle field for a point mass at `a`: v(x, tau) = (a - x)/(1 - tau).
    struct PointMassField {
        a: Vec<f32>,
        calls: usize,
    }

    impl VelocityField for PointMassField {
        fn velocity(&mut self, x: &[f32], tau: f32) -> Result<Vec<f32>> {
            self.calls += 1;
            Ok(self.a.iter().zip(x).map(|(&a, &xi)| (a - xi) / (1.0 - tau)).collect())
        }
    }

    #[test]
    fn one_euler_step_of_size_one_lands_on_target() {
        let a: Vec<f32> = (0..7).map(|i| i as f32 * 0.1 - 0.3).collect();
        let mut field = PointMassField { a: a.clone(), calls: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = flow_sample(&mut field, 1, &FlowConfig { inference_steps: 1 }, &mut rng).unwrap();
        for i in 0..7 {
            assert!((out[i] - a[i]).abs() < 1e-5, "{} vs {}", out[i], a[i]);
        }
        assert_eq!(field.calls, 1);
    }

    #[test]
    fn four_euler_steps_also_land_exactly_and_count_four_passes() {
        // The path is linear, so Euler is exact at any step count:
        // each step moves the remaining distance proportionally.
        let a: Vec<f32> = (0..14).map(|i| (i as f32).sin()).collect();
        let mut field = PointMassField { a: a.clone(), calls: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = flow_sample(&mut field, 2, &FlowConfig::default(), &mut rng).unwrap();
        for i in 0..14 {
            assert!((out[i] - a[i]).abs() < 1e-4, "{} vs {}", out[i], a[i]);
        }
        assert_eq!(field.calls, 4);
    }

    #[test]
    fn ddpm_schedule_monotone_and_endpoints() {
        let cfg = DiffusionConfig::default();
        assert_eq!(cfg.timesteps, 100);
        assert!(cfg.betas.iter().all(|&b| b > 0.0 && b < 1.0));
        for w in cfg.alpha_bars.windows(2) {
            assert!(w[1] < w[0], "alpha_bar must strictly decrease");
        }
        // near-identity at the first step: x_1 ~= a
        assert!(cfg.alpha_bars[0] > 0.999);
        let a = 0.8f32;
        let eps = -0.4f32;
        let x1 = cfg.alpha_bars[0].sqrt() * a + (1.0 - cfg.alpha_bars[0]).sqrt() * eps;
        assert!((x1 - a).abs() < 0.01);
    }

    /// Oracle predictor that always returns the true noise: with
    /// eps_hat = eps the training loss is exactly zero.
    struct EchoNoise {
        calls: usize,
    }

    impl NoisePredictor for EchoNoise {
        fn epsilon(&mut self, x: &[f32], _t: usize, _steps: usize) -> Result<Vec<f32>> {
            self.calls += 1;
            Ok(x.iter().map(|&v| v * 0.1).collect())
        }
    }

    #[test]
    fn ddpm_sampler_counts_exactly_t_calls() {
        let cfg = DiffusionConfig::default();
        let mut pred = EchoNoise { calls: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = ddpm_sample(&mut pred, 1, &cfg, &mut rng).unwrap();
        assert_eq!(pred.calls, 100);
        assert!(out.iter().all(|v| v.is_finite()));
    }
}
