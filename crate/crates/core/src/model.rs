//! Small MLP velocity network trained by flow matching.
//!
//! ```text
//! x   = [z, fourier(t), z_T]
//! a1  = W1 x + b1 + c * W_cond (w * cond)
//! h1  = silu(a1)
//! h2  = silu(W2 h1 + b2)
//! out = W3 h2 + b3
//! ```
//!
//! `out` is the velocity or, with [`Parameterization::PosteriorMean`], the
//! estimate of `z_0` from which the velocity is rebuilt through the schedule.
//! The conditioning scale `c` starts at zero, so an untrained network ignores
//! the condition exactly.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::bridge;
use crate::error::{check_dim, invalid, Error, Result};
use crate::field::{FieldOutput, VelocityField};
use crate::math;
use crate::rng::{self, BridgeRng};
use crate::sampler;
use crate::schedule::Schedule;

/// Number of Fourier time features.
pub const TIME_FEATURES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Parameterization {
    #[default]
    Velocity,
    PosteriorMean,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct NetConfig {
    pub dim: usize,
    pub cond_dim: usize,
    pub hidden: usize,
    pub parameterization: Parameterization,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            cond_dim: 0,
            hidden: 128,
            parameterization: Parameterization::Velocity,
            seed: 0,
        }
    }
}

/// Name and `[rows, cols]` shape of each parameter tensor, in storage order.
pub fn tensor_layout(dim: usize, cond_dim: usize, hidden: usize) -> Vec<(&'static str, [usize; 2])> {
    let input = 2 * dim + TIME_FEATURES;
    vec![
        ("w1", [hidden, input]),
        ("b1", [hidden, 1]),
        ("w_cond", [hidden, cond_dim]),
        ("cond_scale", [1, 1]),
        ("w2", [hidden, hidden]),
        ("b2", [hidden, 1]),
        ("w3", [dim, hidden]),
        ("b3", [dim, 1]),
    ]
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    w1: usize,
    b1: usize,
    wc: usize,
    cs: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    total: usize,
}

impl Offsets {
    fn new(dim: usize, cond_dim: usize, hidden: usize) -> Self {
        let mut at = 0;
        let mut next = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let input = 2 * dim + TIME_FEATURES;
        let w1 = next(hidden * input);
        let b1 = next(hidden);
        let wc = next(hidden * cond_dim);
        let cs = next(1);
        let w2 = next(hidden * hidden);
        let b2 = next(hidden);
        let w3 = next(dim * hidden);
        let b3 = next(dim);
        Self {
            w1,
            b1,
            wc,
            cs,
            w2,
            b2,
            w3,
            b3,
            total: at,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityNet {
    dim: usize,
    cond_dim: usize,
    hidden: usize,
    parameterization: Parameterization,
    schedule: Schedule,
    params: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + math::exp(-x))
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `sin(pi 2^k t), cos(pi 2^k t)` for `k = 0..4`.
pub fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    let mut out = [0.0; TIME_FEATURES];
    for k in 0..TIME_FEATURES / 2 {
        let w = core::f64::consts::PI * (1u32 << k) as f64 * t;
        out[2 * k] = math::sin(w);
        out[2 * k + 1] = math::cos(w);
    }
    out
}

/// Dot product with four independent accumulators.
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += M x` for row-major `M` of shape `[y.len(), x.len()]`.
fn gemv_acc(m: &[f64], x: &[f64], y: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    for (yi, row) in y.iter_mut().zip(m.chunks_exact(x.len())) {
        *yi += dot4(row, x);
    }
}

/// `y += M^T x`.
fn gemv_t_acc(m: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = y.len();
    if cols == 0 {
        return;
    }
    for (xi, row) in x.iter().zip(m.chunks_exact(cols)) {
        for (yj, a) in y.iter_mut().zip(row) {
            *yj += xi * a;
        }
    }
}

/// `G += a b^T`.
fn outer_acc(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    if cols == 0 {
        return;
    }
    for (ai, row) in a.iter().zip(g.chunks_exact_mut(cols)) {
        for (gij, bj) in row.iter_mut().zip(b) {
            *gij += ai * bj;
        }
    }
}

struct Activations {
    x: Vec<f64>,
    cond_in: Vec<f64>,
    cond_embed: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
}

impl VelocityNet {
    pub fn new(cfg: &NetConfig, schedule: Schedule) -> Result<Self> {
        if cfg.dim == 0 || cfg.hidden == 0 {
            return Err(invalid("dim", "latent and hidden widths must be positive"));
        }
        if cfg.parameterization == Parameterization::PosteriorMean && schedule.is_deterministic() {
            return Err(Error::Unsupported(
                "posterior-mean parameterization needs gamma > 0".to_string(),
            ));
        }
        let off = Offsets::new(cfg.dim, cfg.cond_dim, cfg.hidden);
        let mut params = vec![0.0; off.total];
        let mut rng = rng::stream(cfg.seed, 0);
        let input = 2 * cfg.dim + TIME_FEATURES;
        let mut fill = |range: core::ops::Range<usize>, fan_in: usize, rng: &mut BridgeRng| {
            let scale = math::sqrt(1.0 / fan_in.max(1) as f64);
            for p in &mut params[range] {
                *p = scale * rng::standard_normal(rng);
            }
        };
        fill(off.w1..off.b1, input, &mut rng);
        fill(off.wc..off.cs, cfg.cond_dim, &mut rng);
        fill(off.w2..off.b2, cfg.hidden, &mut rng);
        fill(off.w3..off.b3, cfg.hidden, &mut rng);
        Ok(Self {
            dim: cfg.dim,
            cond_dim: cfg.cond_dim,
            hidden: cfg.hidden,
            parameterization: cfg.parameterization,
            schedule,
            params,
        })
    }

    /// Rebuilds a network from tensors listed in [`tensor_layout`] order.
    pub fn from_tensors(cfg: &NetConfig, schedule: Schedule, tensors: &[(&str, Vec<f64>)]) -> Result<Self> {
        let mut net = Self::new(cfg, schedule)?;
        let layout = tensor_layout(cfg.dim, cfg.cond_dim, cfg.hidden);
        if tensors.len() != layout.len() {
            return Err(invalid("tensors", "tensor count does not match the architecture"));
        }
        let mut params = Vec::with_capacity(net.params.len());
        for ((name, shape), (got_name, data)) in layout.iter().zip(tensors) {
            if name != got_name {
                return Err(invalid("tensors", "unexpected tensor name or order"));
            }
            check_dim(shape[0] * shape[1], data.len())?;
            params.extend_from_slice(data);
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> NetConfig {
        NetConfig {
            dim: self.dim,
            cond_dim: self.cond_dim,
            hidden: self.hidden,
            parameterization: self.parameterization,
            seed: 0,
        }
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn parameterization(&self) -> Parameterization {
        self.parameterization
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn cond_scale(&self) -> f64 {
        self.params[self.offsets().cs]
    }

    pub fn set_cond_scale(&mut self, c: f64) {
        let at = self.offsets().cs;
        self.params[at] = c;
    }

    /// Named tensors with shapes, in storage order.
    pub fn tensors(&self) -> Vec<(&'static str, [usize; 2], &[f64])> {
        let mut at = 0;
        tensor_layout(self.dim, self.cond_dim, self.hidden)
            .into_iter()
            .map(|(name, shape)| {
                let n = shape[0] * shape[1];
                let slice = &self.params[at..at + n];
                at += n;
                (name, shape, slice)
            })
            .collect()
    }

    fn offsets(&self) -> Offsets {
        Offsets::new(self.dim, self.cond_dim, self.hidden)
    }

    fn forward(&self, t: f64, z: &[f64], endpoint: &[f64], cond: Option<&[f64]>, train: bool) -> Activations {
        let o = self.offsets();
        let p = &self.params;
        let (d, h) = (self.dim, self.hidden);
        let mut x = Vec::with_capacity(2 * d + TIME_FEATURES);
        x.extend_from_slice(z);
        x.extend_from_slice(&time_features(t));
        x.extend_from_slice(endpoint);

        let mut a1 = p[o.b1..o.b1 + h].to_vec();
        gemv_acc(&p[o.w1..o.b1], &x, &mut a1);
        let cs = p[o.cs];
        let cond_in = match cond {
            Some(c) if self.cond_dim > 0 => c.to_vec(),
            _ => Vec::new(),
        };
        let mut cond_embed = Vec::new();
        if !cond_in.is_empty() && (train || cs != 0.0) {
            cond_embed = vec![0.0; h];
            gemv_acc(&p[o.wc..o.cs], &cond_in, &mut cond_embed);
            if cs != 0.0 {
                for (a, e) in a1.iter_mut().zip(&cond_embed) {
                    *a += cs * e;
                }
            }
        }
        let h1: Vec<f64> = a1.iter().map(|&a| silu(a)).collect();
        let mut a2 = p[o.b2..o.b2 + h].to_vec();
        gemv_acc(&p[o.w2..o.b2], &h1, &mut a2);
        let h2: Vec<f64> = a2.iter().map(|&a| silu(a)).collect();
        let mut out = p[o.b3..o.b3 + d].to_vec();
        gemv_acc(&p[o.w3..o.b3], &h2, &mut out);
        Activations {
            x,
            cond_in,
            cond_embed,
            a1,
            h1,
            a2,
            h2,
            out,
        }
    }

    /// Raw network output (velocity or `z_0` estimate, per the parameterization).
    pub fn raw_output(&self, t: f64, z: &[f64], endpoint: &[f64], cond: Option<&[f64]>) -> Result<Vec<f64>> {
        check_dim(self.dim, z.len())?;
        check_dim(self.dim, endpoint.len())?;
        if let Some(c) = cond {
            check_dim(self.cond_dim, c.len())?;
        }
        Ok(self.forward(t, z, endpoint, cond, false).out)
    }

    /// Accumulates `dL/dparams` for one sample given `dL/dout`.
    fn backward(&self, act: &Activations, dout: &[f64], grad: &mut [f64]) {
        let o = self.offsets();
        let p = &self.params;
        let h = self.hidden;
        outer_acc(&mut grad[o.w3..o.b3], dout, &act.h2);
        for (g, d) in grad[o.b3..o.total].iter_mut().zip(dout) {
            *g += d;
        }
        let mut dh2 = vec![0.0; h];
        gemv_t_acc(&p[o.w3..o.b3], dout, &mut dh2);
        let da2: Vec<f64> = dh2.iter().zip(&act.a2).map(|(g, &a)| g * silu_grad(a)).collect();
        outer_acc(&mut grad[o.w2..o.b2], &da2, &act.h1);
        for (g, d) in grad[o.b2..o.w3].iter_mut().zip(&da2) {
            *g += d;
        }
        let mut dh1 = vec![0.0; h];
        gemv_t_acc(&p[o.w2..o.b2], &da2, &mut dh1);
        let da1: Vec<f64> = dh1.iter().zip(&act.a1).map(|(g, &a)| g * silu_grad(a)).collect();
        outer_acc(&mut grad[o.w1..o.b1], &da1, &act.x);
        for (g, d) in grad[o.b1..o.wc].iter_mut().zip(&da1) {
            *g += d;
        }
        if !act.cond_embed.is_empty() {
            let cs = p[o.cs];
            grad[o.cs] += da1.iter().zip(&act.cond_embed).map(|(a, b)| a * b).sum::<f64>();
            let scaled: Vec<f64> = da1.iter().map(|g| cs * g).collect();
            outer_acc(&mut grad[o.wc..o.cs], &scaled, &act.cond_in);
        }
    }

    /// Mean squared regression loss `mean_i |out_i - target_i|^2` over the batch.
    pub fn loss(&self, batch: &Batch) -> f64 {
        let n = batch.len();
        (0..n)
            .map(|i| {
                let act = self.forward(batch.t[i], batch.z(i), batch.endpoint(i), batch.cond(i), true);
                act.out
                    .iter()
                    .zip(batch.target(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n as f64
    }

    /// Loss and its gradient with respect to the flat parameter vector.
    pub fn loss_and_grad(&self, batch: &Batch) -> (f64, Vec<f64>) {
        let n = batch.len();
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let mut dout = vec![0.0; self.dim];
        for i in 0..n {
            let act = self.forward(batch.t[i], batch.z(i), batch.endpoint(i), batch.cond(i), true);
            for ((g, a), b) in dout.iter_mut().zip(&act.out).zip(batch.target(i)) {
                let r = a - b;
                loss += r * r;
                *g = 2.0 * r / n as f64;
            }
            self.backward(&act, &dout, &mut grad);
        }
        (loss / n as f64, grad)
    }
}

impl VelocityField for VelocityNet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn condition_dim(&self) -> usize {
        self.cond_dim
    }

    fn evaluate(&self, t: f64, z: &[f64], endpoint: &[f64], condition: Option<&[f64]>) -> Result<FieldOutput> {
        let t = self.schedule.clamp_time(t);
        let out = self.raw_output(t, z, endpoint, condition)?;
        let gamma = self.schedule.eval(t)?.gamma;
        match self.parameterization {
            Parameterization::Velocity => {
                if gamma == 0.0 {
                    return Ok(FieldOutput::velocity_only(out));
                }
                match bridge::means_from_velocity(&out, z, endpoint, t, &self.schedule) {
                    Ok((m, u)) => Ok(FieldOutput::from_means(out, m, u, gamma)),
                    Err(_) => Ok(FieldOutput::velocity_only(out)),
                }
            }
            Parameterization::PosteriorMean => {
                let u = bridge::noise_mean_from_posterior(z, &out, endpoint, t, &self.schedule)?;
                let v = bridge::score_to_velocity(&out, &u, endpoint, t, &self.schedule)?;
                Ok(FieldOutput::from_means(v, out, u, gamma))
            }
        }
    }
}

/// Guided velocity: `v_u + s (v_c - v_u)` inside the window when `s > 1`, the
/// conditional velocity otherwise.
pub fn eval_cfg<F: VelocityField + ?Sized>(
    field: &F,
    t: f64,
    z: &[f64],
    endpoint: &[f64],
    condition: Option<&[f64]>,
    scale: f64,
    window: [f64; 2],
) -> Result<Vec<f64>> {
    if !(scale >= 0.0) {
        return Err(invalid("guidance", "must be nonnegative"));
    }
    Ok(sampler::eval_guided(field, t, z, endpoint, condition, scale, window)?.velocity)
}

/// One training triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub z0: Vec<f64>,
    pub endpoint: Vec<f64>,
    pub condition: Option<Vec<f64>>,
}

/// Source of training triples.
pub trait TrainingData {
    fn draw(&self, rng: &mut BridgeRng) -> Example;
}

impl<F: Fn(&mut BridgeRng) -> Example> TrainingData for F {
    fn draw(&self, rng: &mut BridgeRng) -> Example {
        self(rng)
    }
}

/// Row-major batch of regression samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub dim: usize,
    pub cond_dim: usize,
    pub t: Vec<f64>,
    pub zt: Vec<f64>,
    pub endpoints: Vec<f64>,
    pub conditions: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn z(&self, i: usize) -> &[f64] {
        &self.zt[i * self.dim..(i + 1) * self.dim]
    }

    fn endpoint(&self, i: usize) -> &[f64] {
        &self.endpoints[i * self.dim..(i + 1) * self.dim]
    }

    fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.dim..(i + 1) * self.dim]
    }

    fn cond(&self, i: usize) -> Option<&[f64]> {
        (self.cond_dim > 0).then(|| &self.conditions[i * self.cond_dim..(i + 1) * self.cond_dim])
    }

    /// Draws `n` samples with `t ~ U[clip, 1 - clip]` and conditions zeroed with
    /// probability `p_drop`.
    pub fn draw<D: TrainingData + ?Sized>(
        data: &D,
        net: &VelocityNet,
        n: usize,
        p_drop: f64,
        rng: &mut BridgeRng,
    ) -> Result<Self> {
        let schedule = net.schedule;
        let (d, c) = (net.dim, net.cond_dim);
        let clip = schedule.clip();
        let mut b = Batch {
            dim: d,
            cond_dim: c,
            t: Vec::with_capacity(n),
            zt: Vec::with_capacity(n * d),
            endpoints: Vec::with_capacity(n * d),
            conditions: Vec::with_capacity(n * c),
            targets: Vec::with_capacity(n * d),
        };
        for _ in 0..n {
            let ex = data.draw(rng);
            check_dim(d, ex.z0.len())?;
            check_dim(d, ex.endpoint.len())?;
            let t = clip + (1.0 - 2.0 * clip) * rng::uniform(rng);
            let eps = rng::normal_vec(rng, d);
            let (zt, _) = bridge::sample_zt(&ex.z0, &ex.endpoint, t, &schedule, &eps)?;
            let target = match net.parameterization {
                Parameterization::Velocity => bridge::velocity_target(&ex.z0, &ex.endpoint, t, &schedule, &eps)?,
                Parameterization::PosteriorMean => ex.z0.clone(),
            };
            let keep = rng::uniform(rng) >= p_drop;
            match (&ex.condition, c) {
                (_, 0) => {}
                (Some(cond), _) => {
                    check_dim(c, cond.len())?;
                    b.conditions.extend(cond.iter().map(|v| if keep { *v } else { 0.0 }));
                }
                (None, _) => b.conditions.extend(core::iter::repeat(0.0).take(c)),
            }
            b.t.push(t);
            b.zt.extend_from_slice(&zt);
            b.endpoints.extend_from_slice(&ex.endpoint);
            b.targets.extend_from_slice(&target);
        }
        Ok(b)
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learn_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n: usize, learn_rate: f64) -> Self {
        Self {
            learn_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - math::powi(self.beta1, self.step);
        let c2 = 1.0 - math::powi(self.beta2, self.step);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= self.learn_rate * mh / (math::sqrt(vh) + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LrDecay {
    Constant,
    /// Half-cosine from `learn_rate` down to zero over the run.
    #[default]
    Cosine,
}

impl LrDecay {
    pub fn rate(&self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrDecay::Constant => base,
            LrDecay::Cosine => {
                let frac = (step.saturating_sub(1)) as f64 / total.max(1) as f64;
                0.5 * base * (1.0 + math::cos(core::f64::consts::PI * frac))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: usize,
    pub learn_rate: f64,
    pub lr_decay: LrDecay,
    /// Probability of zeroing a sample's condition.
    pub cond_dropout: f64,
    pub seed: u64,
    /// Validation loss is recorded every `eval_every` steps.
    pub eval_every: usize,
    pub validation_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 128,
            steps: 2000,
            learn_rate: 1e-3,
            lr_decay: LrDecay::Cosine,
            cond_dropout: 0.2,
            seed: 0,
            eval_every: 10,
            validation_size: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return Err(invalid("cond_dropout", "must lie in [0, 1]"));
        }
        if self.batch == 0 || self.eval_every == 0 || self.validation_size == 0 {
            return Err(invalid(
                "batch",
                "batch, eval_every and validation_size must be positive",
            ));
        }
        if !(self.learn_rate > 0.0 && self.learn_rate.is_finite()) {
            return Err(invalid("learn_rate", "must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossPoint {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Trailing moving average of the validation losses with the given window.
pub fn moving_average(trace: &[LossPoint], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(trace.len());
    let mut sum = 0.0;
    for (i, p) in trace.iter().enumerate() {
        sum += p.val_loss;
        if i >= window {
            sum -= trace[i - window].val_loss;
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Flow-matching training with Adam. The validation batch is drawn once from
/// stream `(seed, 1)`; training batches come from stream `(seed, 2)`.
/// `on_eval` runs at every validation point and may inspect the current network.
pub fn train_with<D: TrainingData + ?Sized>(
    net: &mut VelocityNet,
    data: &D,
    cfg: &TrainConfig,
    mut on_eval: impl FnMut(&VelocityNet, &LossPoint) -> Result<()>,
) -> Result<Vec<LossPoint>> {
    cfg.validate()?;
    let mut val_rng = rng::stream(cfg.seed, 1);
    let validation = Batch::draw(data, net, cfg.validation_size, 0.0, &mut val_rng)?;
    let mut rng = rng::stream(cfg.seed, 2);
    let mut adam = Adam::new(net.params.len(), cfg.learn_rate);
    let mut trace = Vec::new();
    for step in 1..=cfg.steps {
        let batch = Batch::draw(data, net, cfg.batch, cfg.cond_dropout, &mut rng)?;
        let (loss, grad) = net.loss_and_grad(&batch);
        if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::NanLoss {
                step,
                learn_rate: cfg.learn_rate,
            });
        }
        adam.learn_rate = cfg.lr_decay.rate(cfg.learn_rate, step, cfg.steps);
        adam.update(&mut net.params, &grad);
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let point = LossPoint {
                step,
                train_loss: loss,
                val_loss: net.loss(&validation),
            };
            log::debug!("step {step}: train {loss:.6}, validation {:.6}", point.val_loss);
            on_eval(net, &point)?;
            trace.push(point);
        }
    }
    Ok(trace)
}

pub fn train<D: TrainingData + ?Sized>(net: &mut VelocityNet, data: &D, cfg: &TrainConfig) -> Result<Vec<LossPoint>> {
    train_with(net, data, cfg, |_, _| Ok(()))
}

/// Per-tensor relative error between the analytic gradient and central
/// differences with step `h`.
#[allow(clippy::needless_range_loop)]
pub fn gradient_check(net: &VelocityNet, batch: &Batch, h: f64) -> Vec<(&'static str, f64)> {
    let (_, grad) = net.loss_and_grad(batch);
    let mut probe = net.clone();
    let mut at = 0;
    let mut out = Vec::new();
    for (name, shape) in tensor_layout(net.dim, net.cond_dim, net.hidden) {
        let n = shape[0] * shape[1];
        let mut diff = 0.0;
        let mut scale = 0.0;
        for k in at..at + n {
            let orig = probe.params[k];
            probe.params[k] = orig + h;
            let up = probe.loss(batch);
            probe.params[k] = orig - h;
            let down = probe.loss(batch);
            probe.params[k] = orig;
            let fd = (up - down) / (2.0 * h);
            diff += (fd - grad[k]) * (fd - grad[k]);
            scale += fd * fd + grad[k] * grad[k];
        }
        let rel = if scale > 0.0 {
            math::sqrt(diff) / math::sqrt(0.5 * scale)
        } else {
            0.0
        };
        out.push((name, rel));
        at += n;
    }
    out
}
