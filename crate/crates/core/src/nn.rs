//! Dense Q-network built from scratch: forward/backward passes, Huber
//! loss, global-norm gradient clipping, Adam, and Polyak target averaging.
//!
//! All math is 64-bit. The architecture is fixed at two hidden ReLU layers
//! of equal width feeding a linear output head; widths are parameters so
//! tests can run tiny nets while training uses 128 units.

use rand::Rng;
use thiserror::Error;

/// Adam first-moment decay.
pub const ADAM_BETA1: f64 = 0.9;
/// Adam second-moment decay.
pub const ADAM_BETA2: f64 = 0.999;
/// Adam denominator offset, applied outside the square root.
pub const ADAM_EPS: f64 = 1e-8;
/// Global L2 gradient-norm ceiling.
pub const GRAD_CLIP_NORM: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite gradient entry")]
    NonFiniteGradient,
}

/// Weights and biases of the Q-network. `w*` matrices are row-major with
/// one row per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl NetParams {
    pub fn zeros(input_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            out_dim,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * hidden],
            b2: vec![0.0; hidden],
            w3: vec![0.0; out_dim * hidden],
            b3: vec![0.0; out_dim],
        }
    }

    /// Uniform init in +-1/sqrt(fan_in) per layer, biases zero.
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, out_dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, hidden, out_dim);
        let fill = |w: &mut [f64], fan_in: usize, rng: &mut R| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.gen_range(-bound..=bound);
            }
        };
        fill(&mut p.w1, input_dim, rng);
        fill(&mut p.w2, hidden, rng);
        fill(&mut p.w3, hidden, rng);
        p
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn tensors(&self) -> [&[f64]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    fn same_shape(&self, other: &NetParams) -> bool {
        self.input_dim == other.input_dim
            && self.hidden == other.hidden
            && self.out_dim == other.out_dim
    }
}

/// Per-tensor gradients, same shapes as [`NetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub input_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(params: &NetParams) -> Self {
        Self {
            input_dim: params.input_dim,
            hidden: params.hidden,
            out_dim: params.out_dim,
            w1: vec![0.0; params.w1.len()],
            b1: vec![0.0; params.b1.len()],
            w2: vec![0.0; params.w2.len()],
            b2: vec![0.0; params.b2.len()],
            w3: vec![0.0; params.w3.len()],
            b3: vec![0.0; params.b3.len()],
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn tensors(&self) -> [&[f64]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }
}

/// Adam moment accumulators and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &NetParams) -> Self {
        Self { m: GradientSet::zeros_like(params), v: GradientSet::zeros_like(params), t: 0 }
    }
}

// Four accumulators let LLVM vectorize the reduction without altering the
// (fixed) summation order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let split = a.len() - a.len() % 4;
    let mut acc = [0.0f64; 4];
    for (ca, cb) in a[..split].chunks_exact(4).zip(b[..split].chunks_exact(4)) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in a[split..].iter().zip(&b[split..]) {
        sum += x * y;
    }
    sum
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// out[r] = dot(w[r], x) + b[r], then ReLU if requested.
fn affine(w: &[f64], b: &[f64], x: &[f64], relu: bool, out: &mut Vec<f64>) {
    out.clear();
    out.extend(b.iter().enumerate().map(|(r, bias)| {
        let z = dot(&w[r * x.len()..(r + 1) * x.len()], x) + bias;
        if relu && z < 0.0 {
            0.0
        } else {
            z
        }
    }));
}

pub(crate) struct ForwardTrace {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub q: Vec<f64>,
}

pub(crate) fn forward_trace(params: &NetParams, obs: &[f64]) -> Result<ForwardTrace, NetError> {
    if obs.len() != params.input_dim {
        return Err(NetError::DimensionMismatch(format!(
            "observation length {} != input_dim {}",
            obs.len(),
            params.input_dim
        )));
    }
    let mut a1 = Vec::with_capacity(params.hidden);
    let mut a2 = Vec::with_capacity(params.hidden);
    let mut q = Vec::with_capacity(params.out_dim);
    affine(&params.w1, &params.b1, obs, true, &mut a1);
    affine(&params.w2, &params.b2, &a1, true, &mut a2);
    affine(&params.w3, &params.b3, &a2, false, &mut q);
    Ok(ForwardTrace { a1, a2, q })
}

/// Q-values for one observation. Pure function of (params, obs).
pub fn forward(params: &NetParams, obs: &[f64]) -> Result<Vec<f64>, NetError> {
    forward_trace(params, obs).map(|t| t.q)
}

/// Huber loss with unit transition point.
pub fn huber(residual: f64) -> f64 {
    let a = residual.abs();
    if a <= 1.0 {
        0.5 * residual * residual
    } else {
        a - 0.5
    }
}

/// d huber / d residual; magnitude never exceeds 1.
pub fn huber_grad(residual: f64) -> f64 {
    residual.clamp(-1.0, 1.0)
}

/// Result of one backward pass over a batch.
#[derive(Debug, Clone)]
pub struct BackwardOutput {
    pub mean_loss: f64,
    pub grads: GradientSet,
    /// Per-sample TD residuals y - Q(s, a), in batch order.
    pub residuals: Vec<f64>,
}

/// Gradients of the mean Huber loss between `targets` and the Q-values of
/// the taken actions. Targets are constants; no gradient flows through
/// them. Gradients are unclipped.
pub fn backward(
    params: &NetParams,
    batch: &[(&[f64], usize)],
    targets: &[f64],
) -> Result<BackwardOutput, NetError> {
    if batch.is_empty() {
        return Err(NetError::DimensionMismatch("empty batch".into()));
    }
    if batch.len() != targets.len() {
        return Err(NetError::DimensionMismatch(format!(
            "batch length {} != targets length {}",
            batch.len(),
            targets.len()
        )));
    }

    let h = params.hidden;
    let mut grads = GradientSet::zeros_like(params);
    let mut loss_sum = 0.0;
    let mut residuals = Vec::with_capacity(batch.len());
    let mut d2 = vec![0.0; h];
    let mut d1 = vec![0.0; h];

    for (&(obs, action), &y) in batch.iter().zip(targets) {
        if action >= params.out_dim {
            return Err(NetError::DimensionMismatch(format!(
                "action index {action} out of range for {} outputs",
                params.out_dim
            )));
        }
        let trace = forward_trace(params, obs)?;
        let residual = y - trace.q[action];
        loss_sum += huber(residual);
        residuals.push(residual);

        // d loss / d q[action]; all other outputs carry no gradient.
        let g_out = -huber_grad(residual);
        axpy(g_out, &trace.a2, &mut grads.w3[action * h..(action + 1) * h]);
        grads.b3[action] += g_out;

        let w3_row = &params.w3[action * h..(action + 1) * h];
        for k in 0..h {
            d2[k] = if trace.a2[k] > 0.0 { g_out * w3_row[k] } else { 0.0 };
        }

        d1.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..h {
            let dk = d2[k];
            if dk != 0.0 {
                axpy(dk, &trace.a1, &mut grads.w2[k * h..(k + 1) * h]);
                grads.b2[k] += dk;
                axpy(dk, &params.w2[k * h..(k + 1) * h], &mut d1);
            }
        }

        for k in 0..h {
            let dk = if trace.a1[k] > 0.0 { d1[k] } else { 0.0 };
            if dk != 0.0 {
                axpy(dk, obs, &mut grads.w1[k * obs.len()..(k + 1) * obs.len()]);
                grads.b1[k] += dk;
            }
        }
    }

    let scale = 1.0 / batch.len() as f64;
    for t in grads.tensors_mut() {
        for g in t.iter_mut() {
            *g *= scale;
        }
    }
    Ok(BackwardOutput { mean_loss: loss_sum * scale, grads, residuals })
}

/// Scale gradients so the global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm. The tiny slack on the comparison keeps a
/// second clip bit-identical when rounding lands a hair above the ceiling.
pub fn clip_gradients(grads: &mut GradientSet, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm * (1.0 + 1e-12) {
        let scale = max_norm / norm;
        for t in grads.tensors_mut() {
            for g in t.iter_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

/// One Adam update with bias correction.
pub fn adam_step(
    params: &mut NetParams,
    state: &mut AdamState,
    grads: &GradientSet,
    lr: f64,
) -> Result<(), NetError> {
    if !grads.is_finite() {
        return Err(NetError::NonFiniteGradient);
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);

    let ps = params.tensors_mut();
    let gs = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for k in 0..6 {
        debug_assert_eq!(ps[k].len(), gs[k].len());
        let (p, g, m, v) = (&mut *ps[k], gs[k], &mut *ms[k], &mut *vs[k]);
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Soft target update: target <- (1 - tau) * target + tau * online.
pub fn polyak_update(target: &mut NetParams, online: &NetParams, tau: f64) {
    debug_assert!(target.same_shape(online));
    let ts = target.tensors_mut();
    let os = online.tensors();
    for k in 0..6 {
        for (t, o) in ts[k].iter_mut().zip(os[k]) {
            *t = (1.0 - tau) * *t + tau * *o;
        }
    }
}
