//! One physics-informed model: an angle network, an optional inertia
//! network, the swing-equation residual that ties them to the system, the
//! two-term loss, and the Adam trainer.
//!
//! Residual per generator i at a domain point (t, P):
//!
//! ```text
//! f_i = m̂_i · d²δ̂_i/dt² + d_i · dδ̂_i/dt + P_e,i(δ̂) − P_m,i
//! ```
//!
//! with m̂_i the inertia-network output where the inertia is unknown and the
//! fixed system value otherwise. Derivatives are the forward-propagated
//! channels of the angle network in raw (un-normalized) time units.

use crate::autodiff::{DiffValue, NodeId, Tape, TapeBuffer};
use crate::dataset::{CollocationPoint, LabeledSample, Partition, Trajectory};
use crate::dynamics::{BusSystem, DynamicsError, InputKind};
use crate::net::{MlpParams, NetError, OutputHead};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Default hidden widths of the angle predictor.
pub const ANGLE_HIDDEN: [usize; 2] = [32, 32];
/// Default hidden widths of the inertia predictor.
pub const INERTIA_HIDDEN: [usize; 2] = [16, 16];

/// Batch slice processed per parallel task; fixed so results do not depend
/// on the number of worker threads.
const CHUNK: usize = 128;

/// Training aborts when the total loss exceeds this multiple of its
/// initial value.
const DIVERGENCE_FACTOR: f64 = 1e6;

/// Relative-error floor: samples with |exact| below this contribute no
/// relative-error term (the ratio is meaningless near zero crossings).
const MARE_FLOOR: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum PinnError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("model has no inertia network (all inertias known)")]
    MissingInertiaNet,
    #[error("evaluation grid is empty")]
    EmptyGrid,
    #[error("both labeled and collocation sets are empty")]
    EmptySets,
    #[error("labeled sample has {got} labels, system has {expected} generators")]
    LabelWidth { expected: usize, got: usize },
    #[error("non-finite residual at (t = {t}, P = {p})")]
    NonFiniteResidual { t: f64, p: f64 },
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error(
        "training diverged at iteration {iteration}: loss {loss:.3e} vs initial {initial:.3e}"
    )]
    Diverged {
        iteration: usize,
        loss: f64,
        initial: f64,
    },
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Input normalization constants: both coordinates are mapped to [−1, 1]
/// before entering the networks. The time chain-rule factor 2/T is carried
/// by the derivative channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub t_hi: f64,
    pub p_lo: f64,
    pub p_hi: f64,
}

impl Normalization {
    pub fn from_system(system: &BusSystem) -> Self {
        Normalization {
            t_hi: system.t_span.1,
            p_lo: system.p_range.0,
            p_hi: system.p_range.1,
        }
    }

    fn t_scale(&self) -> f64 {
        2.0 / self.t_hi
    }

    fn p_scale(&self) -> f64 {
        2.0 / (self.p_hi - self.p_lo)
    }

    fn p_offset(&self) -> f64 {
        -(self.p_scale() * self.p_lo + 1.0)
    }

    /// Lift raw (t, P) to normalized network inputs. Arithmetic matches the
    /// recorded tape ops exactly.
    pub fn lift(&self, t: f64, p: f64) -> [DiffValue; 2] {
        let t_hat = DiffValue::input(t)
            .scale(self.t_scale())
            .add(DiffValue::constant(-1.0));
        let p_hat = DiffValue::constant(p)
            .scale(self.p_scale())
            .add(DiffValue::constant(self.p_offset()));
        [t_hat, p_hat]
    }

    /// Record the normalization from raw input slots 0 (time) and 1 (power).
    fn record(&self, tape: &mut Tape) -> [NodeId; 2] {
        let t = tape.input_time(0);
        let p = tape.input_value(1);
        let ts = tape.scale(t, self.t_scale());
        let t_hat = tape.add_const(ts, -1.0);
        let ps = tape.scale(p, self.p_scale());
        let p_hat = tape.add_const(ps, self.p_offset());
        [t_hat, p_hat]
    }
}

/// Angle prediction with a soft out-of-domain flag.
#[derive(Debug, Clone, PartialEq)]
pub struct AnglePrediction {
    pub angles: Vec<f64>,
    /// True when (t, P) lies outside the training domain Ω.
    pub extrapolated: bool,
}

/// A pair of networks bound to a system: the angle predictor and, when some
/// inertia is unknown, the inertia predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct PinnModel {
    pub angle_net: MlpParams,
    pub inertia_net: Option<MlpParams>,
    pub system: BusSystem,
    pub normalization: Normalization,
}

/// Recorded loss programs for one model structure. Input slot layout:
/// physics tape `[t, P]`; data tape `[t, P, label_1, ..., label_g]`.
pub struct PinnPrograms {
    pub physics: Tape,
    /// Per-sample physics loss: Σ_i f_i².
    pub physics_loss: NodeId,
    /// Residual nodes f_i per generator.
    pub residuals: Vec<NodeId>,
    /// Angle-network outputs δ̂_i (physics tape).
    pub angle_nodes: Vec<NodeId>,
    /// Inertia predictions per unknown inertia (physics tape).
    pub mhat: Vec<NodeId>,
    pub data: Tape,
    /// Per-sample data loss: Σ_g (δ̂_g − label_g)².
    pub data_loss: NodeId,
    pub n_params: usize,
    pub n_angle_params: usize,
}

impl PinnModel {
    /// Default architecture: angle net `[2, 32, 32, n_gen]`, inertia net
    /// `[2, 16, 16, n_unknown]` with a softplus head (present only when some
    /// inertia is unknown). Initialization is Xavier-uniform from `seed`.
    pub fn new(system: BusSystem, seed: u64) -> Result<Self, PinnError> {
        Self::with_hidden(system, &ANGLE_HIDDEN, &INERTIA_HIDDEN, seed)
    }

    pub fn with_hidden(
        system: BusSystem,
        angle_hidden: &[usize],
        inertia_hidden: &[usize],
        seed: u64,
    ) -> Result<Self, PinnError> {
        system.validate()?;
        let mut angle_sizes = vec![2usize];
        angle_sizes.extend_from_slice(angle_hidden);
        angle_sizes.push(system.n_gen);
        let angle_net = MlpParams::init(&angle_sizes, OutputHead::Linear, seed)?;

        let n_unknown = system.n_unknown_inertia();
        let inertia_net = if n_unknown > 0 {
            let mut sizes = vec![2usize];
            sizes.extend_from_slice(inertia_hidden);
            sizes.push(n_unknown);
            Some(MlpParams::init(
                &sizes,
                OutputHead::Softplus,
                seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
            )?)
        } else {
            None
        };

        let normalization = Normalization::from_system(&system);
        Ok(PinnModel {
            angle_net,
            inertia_net,
            system,
            normalization,
        })
    }

    pub fn n_params(&self) -> usize {
        self.angle_net.n_params() + self.inertia_net.as_ref().map_or(0, |n| n.n_params())
    }

    /// Canonical flat parameter vector: angle net, then inertia net.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.n_params());
        self.angle_net.flatten_into(&mut flat);
        if let Some(inn) = &self.inertia_net {
            inn.flatten_into(&mut flat);
        }
        flat
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let na = self.angle_net.n_params();
        self.angle_net.unflatten_from(&flat[..na]);
        if let Some(inn) = &mut self.inertia_net {
            inn.unflatten_from(&flat[na..]);
        }
    }

    /// Record the physics and data loss programs for this model structure.
    pub fn programs(&self) -> PinnPrograms {
        let n_angle_params = self.angle_net.n_params();

        // Physics tape: residual per generator, then Σ f².
        let mut phys = Tape::new();
        let inputs = self.normalization.record(&mut phys);
        let angles = self.angle_net.record(&mut phys, 0, &inputs);
        let mhat = match &self.inertia_net {
            Some(inn) => inn.record(&mut phys, n_angle_params, &inputs),
            None => Vec::new(),
        };
        let residuals = record_residual(&mut phys, &self.system, &angles, &mhat);
        let mut phys_loss = None;
        for &f in &residuals {
            let sq = phys.square(f);
            phys_loss = Some(match phys_loss {
                None => sq,
                Some(acc) => phys.add(acc, sq),
            });
        }
        let physics_loss = phys_loss.expect("at least one generator");

        // Data tape: Σ_g (δ̂_g − label_g)².
        let mut data = Tape::new();
        let inputs = self.normalization.record(&mut data);
        let data_angles = self.angle_net.record(&mut data, 0, &inputs);
        let mut data_loss = None;
        for (g, &a) in data_angles.iter().enumerate() {
            let label = data.input_value(2 + g);
            let diff = data.sub(a, label);
            let sq = data.square(diff);
            data_loss = Some(match data_loss {
                None => sq,
                Some(acc) => data.add(acc, sq),
            });
        }
        let data_loss = data_loss.expect("at least one generator");

        PinnPrograms {
            physics: phys,
            physics_loss,
            residuals,
            angle_nodes: angles,
            mhat,
            data,
            data_loss,
            n_params: self.n_params(),
            n_angle_params,
        }
    }

    /// Rotor-angle prediction δ̂(t, P). Extrapolation outside Ω is allowed
    /// and flagged.
    pub fn predict_rotor_angle(&self, t: f64, p: f64) -> Result<AnglePrediction, PinnError> {
        let jets = self.predict_angle_jets(t, p)?;
        let extrapolated = !(0.0..=self.normalization.t_hi).contains(&t)
            || !(self.normalization.p_lo..=self.normalization.p_hi).contains(&p);
        Ok(AnglePrediction {
            angles: jets.iter().map(|j| j.value).collect(),
            extrapolated,
        })
    }

    /// Rotor angles with first and second time derivatives.
    pub fn predict_angle_jets(&self, t: f64, p: f64) -> Result<Vec<DiffValue>, PinnError> {
        Ok(self.angle_net.forward(&self.normalization.lift(t, p))?)
    }

    /// Swing-equation residual f_i(t, P) per generator at the current
    /// parameters.
    pub fn physics_residual(&self, t: f64, p: f64) -> Result<Vec<f64>, PinnError> {
        let programs = self.programs();
        let params = self.flat_params();
        let mut buf = TapeBuffer::default();
        programs.physics.forward(&params, &[t, p], &mut buf);
        let out: Vec<f64> = programs
            .residuals
            .iter()
            .map(|&r| programs.physics.value(&buf, r).value)
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(PinnError::NonFiniteResidual { t, p });
        }
        Ok(out)
    }

    /// Scalar inertia estimate per unknown inertia: the mean of the inertia
    /// network's outputs over the evaluation grid.
    pub fn inertia_estimate(&self, grid: &[(f64, f64)]) -> Result<Vec<f64>, PinnError> {
        let inn = self
            .inertia_net
            .as_ref()
            .ok_or(PinnError::MissingInertiaNet)?;
        if grid.is_empty() {
            return Err(PinnError::EmptyGrid);
        }
        let mut acc = vec![0.0; inn.output_dim()];
        for &(t, p) in grid {
            let out = inn.forward(&self.normalization.lift(t, p))?;
            for (a, o) in acc.iter_mut().zip(out.iter()) {
                *a += o.value;
            }
        }
        for a in &mut acc {
            *a /= grid.len() as f64;
        }
        Ok(acc)
    }

    /// Full-set loss at the current parameters.
    pub fn total_loss(
        &self,
        labeled: &[LabeledSample],
        collocation: &[CollocationPoint],
        lambda_u: f64,
        lambda_f: f64,
    ) -> Result<LossBreakdown, PinnError> {
        if labeled.is_empty() && collocation.is_empty() {
            return Err(PinnError::EmptySets);
        }
        let programs = self.programs();
        let params = self.flat_params();
        let mut buf = TapeBuffer::default();

        let mut data_term = 0.0;
        for s in labeled {
            if s.labels.len() != self.system.n_gen {
                return Err(PinnError::LabelWidth {
                    expected: self.system.n_gen,
                    got: s.labels.len(),
                });
            }
            let mut inputs = vec![s.t, s.p];
            inputs.extend_from_slice(&s.labels);
            programs.data.forward(&params, &inputs, &mut buf);
            data_term += programs.data.value(&buf, programs.data_loss).value;
        }
        if !labeled.is_empty() {
            data_term /= labeled.len() as f64;
        }

        let mut physics_term = 0.0;
        for c in collocation {
            programs.physics.forward(&params, &[c.t, c.p], &mut buf);
            physics_term += programs.physics.value(&buf, programs.physics_loss).value;
        }
        if !collocation.is_empty() {
            physics_term /= collocation.len() as f64;
        }

        let breakdown = LossBreakdown::new(data_term, physics_term, lambda_u, lambda_f);
        if !breakdown.total.is_finite() {
            return Err(PinnError::NonFiniteLoss { iteration: 0 });
        }
        Ok(breakdown)
    }
}

/// Record the per-generator swing residuals given recorded angle and
/// inertia-prediction nodes. Input slot 1 is the raw power coordinate.
fn record_residual(
    tape: &mut Tape,
    system: &BusSystem,
    angles: &[NodeId],
    mhat: &[NodeId],
) -> Vec<NodeId> {
    let n_gen = system.n_gen;
    let n_bus = system.n_bus();
    let p_node = tape.input_value(1);

    // Mechanical power nodes per input kind.
    let p_mech: Vec<NodeId> = match system.input_kind {
        InputKind::MechanicalPower { gen } => (0..n_gen)
            .map(|i| if i == gen { p_node } else { tape.constant(0.0) })
            .collect(),
        InputKind::LoadBalanced { bus } => {
            let other: f64 = system
                .load
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != bus)
                .map(|(_, l)| l)
                .sum();
            let total = tape.add_const(p_node, other);
            let share = tape.scale(total, 1.0 / n_gen as f64);
            vec![share; n_gen]
        }
    };

    let unknown = system.unknown_inertia_indices();
    let mut residuals = Vec::with_capacity(n_gen);
    for i in 0..n_gen {
        let d2 = tape.d2_dt2(angles[i]);
        let d1 = tape.d_dt(angles[i]);
        let m_term = match unknown.iter().position(|&u| u == i) {
            Some(pos) => tape.mul(mhat[pos], d2),
            None => tape.scale(d2, system.inertia[i]),
        };
        let damp = tape.scale(d1, system.damping[i]);

        // P_e,i = V_i Σ_k b_ik V_k cos(δ_i − δ_k − θ_ik) + load_i
        let mut pe: Option<NodeId> = None;
        for k in 0..n_bus {
            let b = system.susceptance[i][k];
            if b == 0.0 {
                continue;
            }
            let diff = if k < n_gen {
                if k == i {
                    // δ_i − δ_i = 0; the cosine term is constant.
                    tape.constant(0.0)
                } else {
                    tape.sub(angles[i], angles[k])
                }
            } else {
                angles[i] // fixed-angle bus: δ_k = 0
            };
            let shifted = tape.add_const(diff, -system.line_angle[i][k]);
            let cosn = tape.cos(shifted);
            let term = tape.scale(cosn, system.voltage[i] * b * system.voltage[k]);
            pe = Some(match pe {
                None => term,
                Some(acc) => tape.add(acc, term),
            });
        }
        let load = match system.input_kind {
            InputKind::LoadBalanced { bus } if bus == i => p_node,
            _ => tape.constant(system.load[i]),
        };
        let pe = match pe {
            None => load,
            Some(acc) => tape.add(acc, load),
        };

        let md = tape.add(m_term, damp);
        let mdpe = tape.add(md, pe);
        residuals.push(tape.sub(mdpe, p_mech[i]));
    }
    residuals
}

/// Uniform evaluation grid over Ω = [0, T] × [P_lo, P_hi], endpoints
/// included.
pub fn eval_grid(system: &BusSystem, n_t: usize, n_p: usize) -> Vec<(f64, f64)> {
    let (t0, t1) = system.t_span;
    let (p0, p1) = system.p_range;
    let mut grid = Vec::with_capacity(n_t * n_p);
    for i in 0..n_t {
        let t = t0 + (t1 - t0) * i as f64 / (n_t - 1).max(1) as f64;
        for j in 0..n_p {
            let p = p0 + (p1 - p0) * j as f64 / (n_p - 1).max(1) as f64;
            grid.push((t, p));
        }
    }
    grid
}

/// Two-term loss at one point of training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Mean squared label misfit L_u.
    pub data_term: f64,
    /// Mean squared residual norm L_f.
    pub physics_term: f64,
    /// λ_u·L_u + λ_f·L_f.
    pub total: f64,
}

impl LossBreakdown {
    fn new(data_term: f64, physics_term: f64, lambda_u: f64, lambda_f: f64) -> Self {
        LossBreakdown {
            data_term,
            physics_term,
            total: lambda_u * data_term + lambda_f * physics_term,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub physics_batch: usize,
    pub data_batch: usize,
    pub seed: u64,
    pub lambda_u: f64,
    pub lambda_f: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            iterations: 20_000,
            physics_batch: 512,
            data_batch: 256,
            seed: 0,
            lambda_u: 1.0,
            lambda_f: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PinnError> {
        if !(self.learning_rate > 0.0) {
            return Err(PinnError::BadConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(PinnError::BadConfig("iterations must be positive".into()));
        }
        if !(self.lambda_u >= 0.0 && self.lambda_f >= 0.0) {
            return Err(PinnError::BadConfig(
                "loss weights must be nonnegative".into(),
            ));
        }
        if self.lambda_u == 0.0 && self.lambda_f == 0.0 {
            return Err(PinnError::BadConfig(
                "at least one loss weight must be positive".into(),
            ));
        }
        if !(self.beta1 >= 0.0 && self.beta1 < 1.0 && self.beta2 >= 0.0 && self.beta2 < 1.0) {
            return Err(PinnError::BadConfig("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Step-decayed learning rate: ×0.5 at 50% and at 75% of the schedule.
    fn lr_at(&self, iteration: usize) -> f64 {
        let mut lr = self.learning_rate;
        if iteration >= self.iterations / 2 {
            lr *= 0.5;
        }
        if iteration >= 3 * self.iterations / 4 {
            lr *= 0.5;
        }
        lr
    }
}

/// Minibatch index stream: shuffled epochs, drawn without replacement.
struct BatchSampler {
    order: Vec<u32>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(len: usize, seed: u64) -> Self {
        let mut s = BatchSampler {
            order: (0..len as u32).collect(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next(&mut self, k: usize) -> &[u32] {
        let k = k.min(self.order.len());
        if self.pos + k > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = &self.order[self.pos..self.pos + k];
        self.pos += k;
        out
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let b1c = 1.0 - self.beta1.powi(self.step as i32);
        let b2c = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1c;
            let vh = self.v[i] / b2c;
            params[i] -= lr * mh / (vh.sqrt() + self.epsilon);
        }
    }
}

/// Sum of per-sample losses and gradients over a batch, evaluated in fixed
/// chunks so the floating-point reduction order is independent of thread
/// scheduling.
fn batch_gradient<Fill>(
    tape: &Tape,
    loss_node: NodeId,
    params: &[f64],
    batch: &[u32],
    n_inputs: usize,
    n_params: usize,
    fill: Fill,
) -> Result<(f64, Vec<f64>), PinnError>
where
    Fill: Fn(u32, &mut [f64]) + Sync,
{
    let chunks: Vec<Result<(f64, Vec<f64>), PinnError>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut buf = TapeBuffer::default();
            let mut grad = vec![0.0; n_params];
            let mut inputs = vec![0.0; n_inputs];
            let mut loss_sum = 0.0;
            for &idx in chunk {
                fill(idx, &mut inputs);
                tape.forward(params, &inputs, &mut buf);
                let loss = tape.value(&buf, loss_node).value;
                if !loss.is_finite() {
                    return Err(PinnError::NonFiniteResidual {
                        t: inputs[0],
                        p: inputs[1],
                    });
                }
                loss_sum += loss;
                tape.backward_seeded(
                    &mut buf,
                    params,
                    loss_node,
                    DiffValue {
                        value: 1.0,
                        d_dt: 0.0,
                        d2_dt2: 0.0,
                    },
                    &mut grad,
                );
            }
            Ok((loss_sum, grad))
        })
        .collect();

    let mut total = 0.0;
    let mut grad = vec![0.0; n_params];
    for c in chunks {
        let (l, g) = c?;
        total += l;
        for (a, b) in grad.iter_mut().zip(g.iter()) {
            *a += b;
        }
    }
    Ok((total, grad))
}

/// Full-set loss and its gradient with respect to every parameter (angle
/// network first, then inertia network, in canonical flat order).
pub fn loss_gradient(
    model: &PinnModel,
    labeled: &[LabeledSample],
    collocation: &[CollocationPoint],
    lambda_u: f64,
    lambda_f: f64,
) -> Result<(LossBreakdown, Vec<f64>), PinnError> {
    if labeled.is_empty() && collocation.is_empty() {
        return Err(PinnError::EmptySets);
    }
    let n_gen = model.system.n_gen;
    let programs = model.programs();
    let params = model.flat_params();
    let mut grad = vec![0.0; programs.n_params];

    let mut data_term = 0.0;
    if !labeled.is_empty() {
        let batch: Vec<u32> = (0..labeled.len() as u32).collect();
        let (sum, g) = batch_gradient(
            &programs.data,
            programs.data_loss,
            &params,
            &batch,
            2 + n_gen,
            programs.n_params,
            |idx, inputs| {
                let s = &labeled[idx as usize];
                inputs[0] = s.t;
                inputs[1] = s.p;
                inputs[2..2 + n_gen].copy_from_slice(&s.labels);
            },
        )?;
        data_term = sum / labeled.len() as f64;
        let scale = lambda_u / labeled.len() as f64;
        for (a, b) in grad.iter_mut().zip(g.iter()) {
            *a += scale * b;
        }
    }

    let mut physics_term = 0.0;
    if !collocation.is_empty() {
        let batch: Vec<u32> = (0..collocation.len() as u32).collect();
        let (sum, g) = batch_gradient(
            &programs.physics,
            programs.physics_loss,
            &params,
            &batch,
            2,
            programs.n_params,
            |idx, inputs| {
                let c = &collocation[idx as usize];
                inputs[0] = c.t;
                inputs[1] = c.p;
            },
        )?;
        physics_term = sum / collocation.len() as f64;
        let scale = lambda_f / collocation.len() as f64;
        for (a, b) in grad.iter_mut().zip(g.iter()) {
            *a += scale * b;
        }
    }

    Ok((
        LossBreakdown::new(data_term, physics_term, lambda_u, lambda_f),
        grad,
    ))
}

/// Train a copy of `model` on the partition with Adam. Returns the trained
/// model and the per-iteration minibatch loss history. Fully determined by
/// `cfg.seed` for a fixed model and partition, regardless of thread count.
pub fn train(
    model: &PinnModel,
    partition: &Partition,
    cfg: &TrainConfig,
) -> Result<(PinnModel, Vec<LossBreakdown>), PinnError> {
    cfg.validate()?;
    let n_gen = model.system.n_gen;
    if partition.labeled.is_empty() && partition.collocation.is_empty() {
        return Err(PinnError::EmptySets);
    }
    for s in &partition.labeled {
        if s.labels.len() != n_gen {
            return Err(PinnError::LabelWidth {
                expected: n_gen,
                got: s.labels.len(),
            });
        }
    }

    let programs = model.programs();
    let mut params = model.flat_params();
    let n_params = programs.n_params;
    let mut adam = Adam::new(n_params, cfg);

    let mut seeder = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data_sampler = BatchSampler::new(partition.labeled.len(), seeder.random());
    let mut phys_sampler = BatchSampler::new(partition.collocation.len(), seeder.random());

    let use_data = !partition.labeled.is_empty() && cfg.data_batch > 0;
    let use_phys = !partition.collocation.is_empty() && cfg.physics_batch > 0;

    let labeled = &partition.labeled;
    let collocation = &partition.collocation;
    let data_inputs = 2 + n_gen;

    let mut history = Vec::with_capacity(cfg.iterations);
    let mut grad = vec![0.0; n_params];
    let mut initial_total: Option<f64> = None;

    for iteration in 0..cfg.iterations {
        grad.fill(0.0);
        let mut data_term = 0.0;
        if use_data {
            let batch = data_sampler.next(cfg.data_batch).to_vec();
            let (sum, g) = batch_gradient(
                &programs.data,
                programs.data_loss,
                &params,
                &batch,
                data_inputs,
                n_params,
                |idx, inputs| {
                    let s = &labeled[idx as usize];
                    inputs[0] = s.t;
                    inputs[1] = s.p;
                    inputs[2..2 + n_gen].copy_from_slice(&s.labels);
                },
            )?;
            let scale = cfg.lambda_u / batch.len() as f64;
            data_term = sum / batch.len() as f64;
            for (a, b) in grad.iter_mut().zip(g.iter()) {
                *a += scale * b;
            }
        }

        let mut physics_term = 0.0;
        if use_phys {
            let batch = phys_sampler.next(cfg.physics_batch).to_vec();
            let (sum, g) = batch_gradient(
                &programs.physics,
                programs.physics_loss,
                &params,
                &batch,
                2,
                n_params,
                |idx, inputs| {
                    let c = &collocation[idx as usize];
                    inputs[0] = c.t;
                    inputs[1] = c.p;
                },
            )?;
            let scale = cfg.lambda_f / batch.len() as f64;
            physics_term = sum / batch.len() as f64;
            for (a, b) in grad.iter_mut().zip(g.iter()) {
                *a += scale * b;
            }
        }

        let breakdown = LossBreakdown::new(data_term, physics_term, cfg.lambda_u, cfg.lambda_f);
        if !breakdown.total.is_finite() {
            return Err(PinnError::NonFiniteLoss { iteration });
        }
        let initial = *initial_total.get_or_insert(breakdown.total);
        if breakdown.total > DIVERGENCE_FACTOR * initial.max(f64::MIN_POSITIVE) {
            return Err(PinnError::Diverged {
                iteration,
                loss: breakdown.total,
                initial,
            });
        }

        adam.update(&mut params, &grad, cfg.lr_at(iteration));
        history.push(breakdown);

        if iteration % 2000 == 0 {
            log::debug!(
                "iter {iteration}: L_u={:.3e} L_f={:.3e}",
                breakdown.data_term,
                breakdown.physics_term
            );
        }
    }

    let mut trained = model.clone();
    trained.set_flat_params(&params);
    Ok((trained, history))
}

/// Mean absolute relative angle error against ground-truth trajectories.
/// Samples with |exact| < 1e-2 rad are excluded (relative error is
/// meaningless near zero crossings).
pub fn angle_mare(model: &PinnModel, trajectories: &[Trajectory]) -> Result<f64, PinnError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for traj in trajectories {
        for (ti, &t) in traj.times.iter().enumerate() {
            let pred = model.predict_rotor_angle(t, traj.p_input)?;
            for (g, &exact) in traj.angles[ti].iter().enumerate() {
                if exact.abs() >= MARE_FLOOR {
                    sum += (pred.angles[g] - exact).abs() / exact.abs();
                    count += 1;
                }
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// On-disk form of a trained model: both networks, the system, the
/// normalization constants, and the training configuration used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub system: BusSystem,
    pub normalization: Normalization,
    pub angle_net: MlpParams,
    pub inertia_net: Option<MlpParams>,
    pub train_config: Option<TrainConfig>,
}

impl ModelDocument {
    pub fn from_model(model: &PinnModel, train_config: Option<TrainConfig>) -> Self {
        ModelDocument {
            system: model.system.clone(),
            normalization: model.normalization,
            angle_net: model.angle_net.clone(),
            inertia_net: model.inertia_net.clone(),
            train_config,
        }
    }

    pub fn into_model(self) -> Result<PinnModel, PinnError> {
        self.angle_net.check_shapes()?;
        if let Some(inn) = &self.inertia_net {
            inn.check_shapes()?;
        }
        self.system.validate()?;
        Ok(PinnModel {
            angle_net: self.angle_net,
            inertia_net: self.inertia_net,
            system: self.system,
            normalization: self.normalization,
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<(), PinnError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, PinnError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
