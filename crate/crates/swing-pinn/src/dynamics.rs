//! Swing-equation dynamics: electrical power coupling, the generator ODE
//! right-hand side, equilibria, and the built-in presets.
//!
//! The model is the classical machine reduction: each generator is a bus with
//! internal voltage behind its transient reactance, and the bus angle is
//! identified with the rotor angle. Buses beyond `n_gen` (the 1-bus preset's
//! infinite bus) hold a fixed angle of zero.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("angle vector has length {got}, system has {expected} generators")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("state contains a non-finite component")]
    NonFiniteState,
    #[error("no equilibrium: input power {p_input} exceeds the transfer limit")]
    NoEquilibrium { p_input: f64 },
    #[error("equilibrium iteration did not converge after {iterations} steps (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("unknown preset '{0}' (expected 1bus or 2bus)")]
    UnknownPreset(String),
    #[error("invalid system: {0}")]
    InvalidSystem(String),
}

/// Which scalar the domain coordinate P controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InputKind {
    /// P is the mechanical power of the given generator; other generators
    /// keep zero mechanical input.
    MechanicalPower { gen: usize },
    /// P is the load at the given bus; mechanical powers are redispatched
    /// uniformly so that generation matches the total load.
    LoadBalanced { bus: usize },
}

/// Physical description of the network.
///
/// The first `n_gen` buses carry generators; any further buses are
/// fixed-angle (infinite) buses. All quantities are per unit except angles
/// (radians) and times (seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusSystem {
    pub n_gen: usize,
    /// Per-generator inertia coefficient m_i.
    pub inertia: Vec<f64>,
    /// False marks an inertia to be estimated rather than trusted.
    pub inertia_known: Vec<bool>,
    /// Per-generator damping coefficient d_i.
    pub damping: Vec<f64>,
    /// Symmetric bus susceptance matrix, row-major n_bus × n_bus.
    pub susceptance: Vec<Vec<f64>>,
    /// Line impedance angles, same shape as `susceptance`.
    pub line_angle: Vec<Vec<f64>>,
    /// Per-bus voltage magnitude.
    pub voltage: Vec<f64>,
    /// Per-bus constant load.
    pub load: Vec<f64>,
    pub input_kind: InputKind,
    /// Simulation interval [0, T] in seconds.
    pub t_span: (f64, f64),
    /// Input interval [P_lo, P_hi].
    pub p_range: (f64, f64),
}

/// Rotor angles and angular velocities of all generators.
#[derive(Debug, Clone, PartialEq)]
pub struct GenState {
    pub delta: Vec<f64>,
    pub omega: Vec<f64>,
}

impl GenState {
    pub fn flat_start(n_gen: usize) -> Self {
        GenState {
            delta: vec![0.0; n_gen],
            omega: vec![0.0; n_gen],
        }
    }

    pub fn from_flat(y: &[f64]) -> Self {
        let n = y.len() / 2;
        GenState {
            delta: y[..n].to_vec(),
            omega: y[n..].to_vec(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut y = self.delta.clone();
        y.extend_from_slice(&self.omega);
        y
    }

    pub fn is_finite(&self) -> bool {
        self.delta.iter().chain(self.omega.iter()).all(|x| x.is_finite())
    }
}

impl BusSystem {
    /// Total bus count (generators plus fixed-angle buses).
    pub fn n_bus(&self) -> usize {
        self.voltage.len()
    }

    /// Check the structural invariants. Presets always pass; hand-built
    /// systems should be run through this once.
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let n = self.n_bus();
        let err = |m: &str| Err(DynamicsError::InvalidSystem(m.to_string()));
        if self.n_gen == 0 || self.n_gen > n {
            return err("n_gen must be in 1..=n_bus");
        }
        if self.inertia.len() != self.n_gen
            || self.inertia_known.len() != self.n_gen
            || self.damping.len() != self.n_gen
        {
            return err("per-generator vectors must have length n_gen");
        }
        if self.inertia.iter().any(|&m| !(m > 0.0)) {
            return err("inertia coefficients must be positive");
        }
        if self.damping.iter().any(|&d| !(d >= 0.0)) {
            return err("damping coefficients must be nonnegative");
        }
        if self.susceptance.len() != n
            || self.line_angle.len() != n
            || self.susceptance.iter().any(|r| r.len() != n)
            || self.line_angle.iter().any(|r| r.len() != n)
        {
            return err("susceptance and line_angle must be n_bus × n_bus");
        }
        for i in 0..n {
            for j in 0..n {
                if (self.susceptance[i][j] - self.susceptance[j][i]).abs() > 1e-14 {
                    return err("susceptance matrix must be symmetric");
                }
            }
        }
        if self.load.len() != n {
            return err("load must have length n_bus");
        }
        if !(self.p_range.0 < self.p_range.1) {
            return err("p_range must satisfy lo < hi");
        }
        if !(self.t_span.0 == 0.0 && self.t_span.1 > 0.0) {
            return err("t_span must be [0, T] with T > 0");
        }
        Ok(())
    }

    /// Number of generators whose inertia is to be estimated.
    pub fn n_unknown_inertia(&self) -> usize {
        self.inertia_known.iter().filter(|&&k| !k).count()
    }

    /// Indices of generators with unknown inertia.
    pub fn unknown_inertia_indices(&self) -> Vec<usize> {
        (0..self.n_gen).filter(|&i| !self.inertia_known[i]).collect()
    }

    /// Mechanical powers and effective per-bus loads for input value
    /// `p_input`, per `input_kind`.
    pub fn injections(&self, p_input: f64) -> (Vec<f64>, Vec<f64>) {
        let mut p_mech = vec![0.0; self.n_gen];
        let mut loads = self.load.clone();
        match self.input_kind {
            InputKind::MechanicalPower { gen } => p_mech[gen] = p_input,
            InputKind::LoadBalanced { bus } => {
                loads[bus] = p_input;
                let total: f64 = loads.iter().sum();
                for p in &mut p_mech {
                    *p = total / self.n_gen as f64;
                }
            }
        }
        (p_mech, loads)
    }

    /// Electrical power P_e at each generator bus for generator angles
    /// `delta`, using the stored constant loads. Fixed-angle buses enter the
    /// sum with angle zero.
    pub fn electrical_power(&self, delta: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        self.electrical_power_with_loads(delta, &self.load)
    }

    /// Electrical power with explicit per-bus loads (input-kind overrides).
    pub fn electrical_power_with_loads(
        &self,
        delta: &[f64],
        loads: &[f64],
    ) -> Result<Vec<f64>, DynamicsError> {
        if delta.len() != self.n_gen {
            return Err(DynamicsError::DimensionMismatch {
                expected: self.n_gen,
                got: delta.len(),
            });
        }
        let n = self.n_bus();
        let theta = |k: usize| if k < self.n_gen { delta[k] } else { 0.0 };
        let mut p = vec![0.0; self.n_gen];
        for (i, pi) in p.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..n {
                let b = self.susceptance[i][k];
                if b != 0.0 {
                    acc += b * self.voltage[k] * (theta(i) - theta(k) - self.line_angle[i][k]).cos();
                }
            }
            *pi = self.voltage[i] * acc + loads[i];
        }
        Ok(p)
    }

    /// Swing-equation right-hand side:
    /// dδ/dt = ω, dω/dt = (P_m − P_e(δ) − d·ω)/m.
    pub fn swing_rhs(&self, state: &GenState, p_input: f64) -> Result<GenState, DynamicsError> {
        if state.delta.len() != self.n_gen || state.omega.len() != self.n_gen {
            return Err(DynamicsError::DimensionMismatch {
                expected: self.n_gen,
                got: state.delta.len(),
            });
        }
        if !state.is_finite() {
            return Err(DynamicsError::NonFiniteState);
        }
        let (p_mech, loads) = self.injections(p_input);
        let p_elec = self.electrical_power_with_loads(&state.delta, &loads)?;
        let mut domega = vec![0.0; self.n_gen];
        for i in 0..self.n_gen {
            domega[i] = (p_mech[i] - p_elec[i] - self.damping[i] * state.omega[i]) / self.inertia[i];
        }
        Ok(GenState {
            delta: state.omega.clone(),
            omega: domega,
        })
    }

    /// Steady-state generator angles with P_e(δ*) = P_m componentwise,
    /// found by damped Newton iteration from the flat start.
    ///
    /// All-generator systems (no fixed-angle bus) have a rotational gauge
    /// freedom; there the first angle is pinned to zero and the remaining
    /// equations are solved, with the full residual checked afterwards.
    pub fn equilibrium(&self, p_input: f64) -> Result<Vec<f64>, DynamicsError> {
        const TOL: f64 = 1e-12;
        const MAX_ITER: usize = 200;
        let (p_mech, loads) = self.injections(p_input);

        // Analytic transfer-limit check for the single-machine case.
        if self.n_gen == 1 && self.n_bus() == 2 {
            let amplitude = (self.voltage[0] * self.susceptance[0][1] * self.voltage[1]).abs();
            let b_self = self.susceptance[0][0];
            let offset =
                self.voltage[0] * b_self * self.voltage[0] * (-self.line_angle[0][0]).cos();
            let target = p_mech[0] - loads[0] - offset;
            if target.abs() > amplitude {
                return Err(DynamicsError::NoEquilibrium { p_input });
            }
        }

        let anchored = self.n_bus() > self.n_gen;
        let free: Vec<usize> = if anchored {
            (0..self.n_gen).collect()
        } else {
            (1..self.n_gen).collect()
        };
        if free.is_empty() {
            // Single generator, no anchor: balance requires P_m = P_e(any δ).
            let delta = vec![0.0];
            let pe = self.electrical_power_with_loads(&delta, &loads)?;
            return if (pe[0] - p_mech[0]).abs() <= 1e-10 {
                Ok(delta)
            } else {
                Err(DynamicsError::NoEquilibrium { p_input })
            };
        }

        let mut delta = vec![0.0; self.n_gen];
        let residual = |d: &[f64]| -> Result<Vec<f64>, DynamicsError> {
            let pe = self.electrical_power_with_loads(d, &loads)?;
            Ok(free.iter().map(|&i| pe[i] - p_mech[i]).collect())
        };
        let norm = |g: &[f64]| g.iter().fold(0.0f64, |m, x| m.max(x.abs()));

        let mut g = residual(&delta)?;
        for iter in 0..MAX_ITER {
            if norm(&g) <= TOL {
                break;
            }
            // Jacobian of the reduced system: ∂P_e,i/∂δ_j.
            let m = free.len();
            let mut jac = vec![vec![0.0; m]; m];
            let theta = |k: usize| if k < self.n_gen { delta[k] } else { 0.0 };
            for (r, &i) in free.iter().enumerate() {
                for (c, &j) in free.iter().enumerate() {
                    if i == j {
                        let mut acc = 0.0;
                        for k in 0..self.n_bus() {
                            if k != i {
                                let b = self.susceptance[i][k];
                                if b != 0.0 {
                                    acc -= b
                                        * self.voltage[k]
                                        * (theta(i) - theta(k) - self.line_angle[i][k]).sin();
                                }
                            }
                        }
                        jac[r][c] = self.voltage[i] * acc;
                    } else {
                        jac[r][c] = self.voltage[i]
                            * self.susceptance[i][j]
                            * self.voltage[j]
                            * (theta(i) - theta(j) - self.line_angle[i][j]).sin();
                    }
                }
            }
            let step = solve_dense(&mut jac, &g).ok_or(DynamicsError::NoEquilibrium { p_input })?;

            // Damped update: halve until the residual norm decreases.
            let g0 = norm(&g);
            let mut alpha = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let mut trial = delta.clone();
                for (k, &i) in free.iter().enumerate() {
                    trial[i] -= alpha * step[k];
                }
                let gt = residual(&trial)?;
                if norm(&gt) < g0 {
                    delta = trial;
                    g = gt;
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !improved {
                // Stuck at a non-root stationary point: the power demand is
                // beyond what the network can transfer.
                return Err(DynamicsError::NoEquilibrium { p_input });
            }
            if iter + 1 == MAX_ITER && norm(&g) > TOL {
                return Err(DynamicsError::NoConvergence {
                    iterations: MAX_ITER,
                    residual: norm(&g),
                });
            }
        }

        // Full-system power balance (catches imbalance hidden by gauge fixing).
        let pe = self.electrical_power_with_loads(&delta, &loads)?;
        let full: f64 = (0..self.n_gen)
            .map(|i| (pe[i] - p_mech[i]).abs())
            .fold(0.0, f64::max);
        if full > 1e-10 {
            return Err(DynamicsError::NoEquilibrium { p_input });
        }
        Ok(delta)
    }
}

/// Gaussian elimination with partial pivoting; None on singular systems.
fn solve_dense(a: &mut [Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()
        })?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        x.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (head, tail) = a.split_at_mut(row);
            let pivot_row = &head[col];
            for (t, p) in tail[0][col..].iter_mut().zip(pivot_row[col..].iter()) {
                *t -= f * p;
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        for k in col + 1..n {
            x[col] -= a[col][k] * x[k];
        }
        x[col] /= a[col][col];
    }
    Some(x)
}

/// Built-in system matching the study's 1-bus setup: a single machine
/// against an infinite bus, coupled by a lossless line.
pub fn preset_1bus() -> BusSystem {
    let b = 0.2;
    BusSystem {
        n_gen: 1,
        inertia: vec![0.4],
        inertia_known: vec![false],
        damping: vec![0.25],
        susceptance: vec![vec![0.0, b], vec![b, 0.0]],
        line_angle: vec![vec![FRAC_PI_2; 2]; 2],
        voltage: vec![1.0, 1.0],
        load: vec![0.0, 0.0],
        input_kind: InputKind::MechanicalPower { gen: 0 },
        t_span: (0.0, 20.0),
        p_range: (0.08, 0.18),
    }
}

/// Built-in system matching the study's 2-bus setup: two machines, a
/// lossless tie line, and a varying load at bus 2 served half-and-half.
pub fn preset_2bus() -> BusSystem {
    let b = 0.2;
    BusSystem {
        n_gen: 2,
        inertia: vec![0.4, 0.132629],
        inertia_known: vec![true, false],
        damping: vec![0.05, 0.05],
        susceptance: vec![vec![0.0, b], vec![b, 0.0]],
        line_angle: vec![vec![FRAC_PI_2; 2]; 2],
        voltage: vec![1.0, 1.0],
        load: vec![0.0, 0.0],
        input_kind: InputKind::LoadBalanced { bus: 1 },
        t_span: (0.0, 1.0),
        p_range: (0.51, 1.51),
    }
}

/// Look up a preset by name: `1bus` or `2bus`.
pub fn preset_system(name: &str) -> Result<BusSystem, DynamicsError> {
    match name {
        "1bus" => Ok(preset_1bus()),
        "2bus" => Ok(preset_2bus()),
        other => Err(DynamicsError::UnknownPreset(other.to_string())),
    }
}
