//! Adaptive Dormand–Prince 5(4) integration with dense output.
//!
//! The embedded pair uses the standard published tableau (FSAL, 7 stages,
//! 6 evaluations per step), a PI step controller, and the classical
//! 4th-order continuous extension for sampling between accepted steps.

use thiserror::Error;

/// Nodes c of the tableau.
pub const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

/// Stage coefficient matrix a (strictly lower triangular part).
pub const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

/// 5th-order weights b (equal to the last row of a: FSAL).
pub const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];

/// Error weights b − b̂ (5th minus embedded 4th order).
pub const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Dense-output weights for the quartic term of the interpolant.
pub const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

const SAFETY: f64 = 0.9;
/// Step-size change clamp per accepted/rejected step.
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
/// PI stabilization exponent (Hairer's beta).
const BETA: f64 = 0.04;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("step size underflow at t = {t:.6e} (h = {h:.3e} < h_min)")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step count exceeded {max_steps} before reaching t_end")]
    MaxStepsExceeded { max_steps: usize },
    #[error("non-finite derivative at t = {t:.6e}")]
    NonFiniteDerivative { t: f64 },
    #[error("sample time {t:.6e} outside integrated span [{lo:.6e}, {hi:.6e}]")]
    OutOfSpan { t: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Relative tolerance.
    pub rtol: f64,
    /// Absolute tolerance.
    pub atol: f64,
    /// Initial step size (seconds).
    pub h_init: f64,
    /// Smallest admissible step.
    pub h_min: f64,
    /// Largest admissible step.
    pub h_max: f64,
    /// Accepted + rejected step cap.
    pub max_steps: usize,
}

impl Default for SolverConfig {
    /// Ground-truth generation tolerances: tight enough that dataset error
    /// is negligible against model error.
    fn default() -> Self {
        SolverConfig {
            rtol: 1e-8,
            atol: 1e-10,
            h_init: 1e-3,
            h_min: 1e-13,
            h_max: f64::INFINITY,
            max_steps: 1_000_000,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), SolverError> {
        let err = |m: &str| Err(SolverError::InvalidConfig(m.to_string()));
        if !(self.rtol > 0.0) {
            return err("rtol must be positive");
        }
        if !(self.atol > 0.0) {
            return err("atol must be positive");
        }
        if !(self.h_min > 0.0 && self.h_min <= self.h_max) {
            return err("need 0 < h_min <= h_max");
        }
        if self.max_steps == 0 {
            return err("max_steps must be positive");
        }
        if !(self.h_init > 0.0) {
            return err("h_init must be positive");
        }
        Ok(())
    }
}

/// One accepted step's dense-output data: quartic interpolant coefficients
/// per state component.
#[derive(Debug, Clone)]
struct DenseStep {
    t: f64,
    h: f64,
    cont: [Vec<f64>; 5],
}

impl DenseStep {
    /// Evaluate the interpolant at fraction theta in [0, 1] of the step.
    fn eval(&self, theta: f64, out: &mut [f64]) {
        let th1 = 1.0 - theta;
        for (i, y) in out.iter_mut().enumerate() {
            *y = self.cont[0][i]
                + theta
                    * (self.cont[1][i]
                        + th1 * (self.cont[2][i] + theta * (self.cont[3][i] + th1 * self.cont[4][i])));
        }
    }
}

/// Result of an adaptive integration: accepted-step mesh, states, and the
/// per-step interpolants.
#[derive(Debug, Clone)]
pub struct Solution {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    steps: Vec<DenseStep>,
    /// Right-hand-side evaluation count.
    pub n_evals: usize,
    /// Rejected (error-test failed) step count.
    pub n_rejected: usize,
}

impl Solution {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("solution has at least one state")
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    /// Dense-output sampling on a nondecreasing grid. Exact (stored values)
    /// at accepted step times.
    pub fn sample_at(&self, t_grid: &[f64]) -> Result<Vec<Vec<f64>>, SolverError> {
        let (lo, hi) = self.span();
        let dim = self.states[0].len();
        let mut out = Vec::with_capacity(t_grid.len());
        for &t in t_grid {
            if t < lo || t > hi {
                return Err(SolverError::OutOfSpan { t, lo, hi });
            }
            // Exact at mesh points.
            match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
                Ok(i) => out.push(self.states[i].clone()),
                Err(i) => {
                    let step = &self.steps[i - 1];
                    let theta = (t - step.t) / step.h;
                    let mut y = vec![0.0; dim];
                    step.eval(theta, &mut y);
                    out.push(y);
                }
            }
        }
        Ok(out)
    }
}

/// Integrate y' = rhs(t, y) over `t_span` with embedded 5(4) error control.
pub fn integrate_adaptive<F>(
    mut rhs: F,
    y0: &[f64],
    t_span: (f64, f64),
    cfg: &SolverConfig,
) -> Result<Solution, SolverError>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    cfg.validate()?;
    let (t0, t_end) = t_span;
    if !(t_end > t0) {
        return Err(SolverError::InvalidConfig(
            "t_span must be increasing".to_string(),
        ));
    }
    let dim = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut h = cfg.h_init.min(cfg.h_max).min(t_end - t0);

    let mut sol = Solution {
        times: vec![t0],
        states: vec![y.clone()],
        steps: Vec::new(),
        n_evals: 0,
        n_rejected: 0,
    };

    let eval = |rhs: &mut F, t: f64, y: &[f64], n: &mut usize| -> Result<Vec<f64>, SolverError> {
        *n += 1;
        let dy = rhs(t, y);
        debug_assert_eq!(dy.len(), y.len());
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFiniteDerivative { t });
        }
        Ok(dy)
    };

    // FSAL: k1 of the next step is k7 of the accepted one.
    let mut k1 = eval(&mut rhs, t, &y, &mut sol.n_evals)?;
    let mut fac_old: f64 = 1e-4;
    let expo = 0.2 - BETA * 0.75;

    let mut n_steps = 0usize;
    while t < t_end {
        if n_steps >= cfg.max_steps {
            return Err(SolverError::MaxStepsExceeded {
                max_steps: cfg.max_steps,
            });
        }
        n_steps += 1;

        // Land exactly on t_end.
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        if h < cfg.h_min {
            return Err(SolverError::StepUnderflow { t, h });
        }

        let mut k = vec![vec![0.0; dim]; 7];
        k[0] = k1.clone();
        for s in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    for i in 0..dim {
                        ys[i] += h * a * kj[i];
                    }
                }
            }
            k[s] = eval(&mut rhs, t + C[s] * h, &ys, &mut sol.n_evals)?;
        }

        // 5th-order solution (b row equals a[6], so stage 7's argument is y_new).
        let mut y_new = y.clone();
        for (j, kj) in k.iter().enumerate() {
            if B[j] != 0.0 {
                for i in 0..dim {
                    y_new[i] += h * B[j] * kj[i];
                }
            }
        }

        // Scaled error norm.
        let mut err_sq = 0.0;
        for i in 0..dim {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                if E[j] != 0.0 {
                    e += E[j] * kj[i];
                }
            }
            e *= h;
            let sc = cfg.atol + cfg.rtol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / sc) * (e / sc);
        }
        let err = (err_sq / dim as f64).sqrt();

        if err <= 1.0 {
            // Accept: store dense output for [t, t+h].
            let mut cont = [
                vec![0.0; dim],
                vec![0.0; dim],
                vec![0.0; dim],
                vec![0.0; dim],
                vec![0.0; dim],
            ];
            for i in 0..dim {
                let ydiff = y_new[i] - y[i];
                let bspl = h * k[0][i] - ydiff;
                cont[0][i] = y[i];
                cont[1][i] = ydiff;
                cont[2][i] = bspl;
                cont[3][i] = ydiff - h * k[6][i] - bspl;
                let mut q = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    if D[j] != 0.0 {
                        q += D[j] * kj[i];
                    }
                }
                cont[4][i] = h * q;
            }
            sol.steps.push(DenseStep { t, h, cont });

            t = if last { t_end } else { t + h };
            y = y_new;
            k1 = k[6].clone();
            sol.times.push(t);
            sol.states.push(y.clone());

            // PI controller (limited growth, stabilized by the last error).
            let err_clamped = err.max(1e-10);
            let fac = (err_clamped.powf(expo) / fac_old.powf(BETA) / SAFETY)
                .clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            h = (h / fac).min(cfg.h_max);
            fac_old = err_clamped;
        } else {
            // Reject: shrink and retry from the same point.
            sol.n_rejected += 1;
            let fac = (err.powf(expo) / SAFETY).min(1.0 / FAC_MIN);
            h /= fac;
        }
    }

    Ok(sol)
}

/// Fixed-step integration with the same 5th-order stages (no error control).
/// Used for convergence-order studies.
pub fn integrate_fixed<F>(
    mut rhs: F,
    y0: &[f64],
    t_span: (f64, f64),
    h: f64,
) -> Result<Vec<f64>, SolverError>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    if !(h > 0.0) {
        return Err(SolverError::InvalidConfig("h must be positive".to_string()));
    }
    let (t0, t_end) = t_span;
    let dim = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let n_steps = ((t_end - t0) / h).ceil() as usize;
    for step in 0..n_steps {
        let hs = if step + 1 == n_steps { t_end - t } else { h };
        let mut k = vec![vec![0.0; dim]; 7];
        k[0] = rhs(t, &y);
        for s in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    for i in 0..dim {
                        ys[i] += hs * a * kj[i];
                    }
                }
            }
            k[s] = rhs(t + C[s] * hs, &ys);
        }
        for (j, kj) in k.iter().enumerate() {
            if B[j] != 0.0 {
                for i in 0..dim {
                    y[i] += hs * B[j] * kj[i];
                }
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFiniteDerivative { t });
        }
        t += hs;
    }
    Ok(y)
}
