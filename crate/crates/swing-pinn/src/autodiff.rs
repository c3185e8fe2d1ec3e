//! Differentiation engine for physics-informed training.
//!
//! Two mechanisms are combined. A [`DiffValue`] carries a value together with
//! its first and second derivatives with respect to one designated scalar
//! input (time), propagated forward through every operation by exact chain and
//! product rules. A [`Tape`] records the operation sequence so that the same
//! evaluation can be swept backward, accumulating adjoints of all three
//! channels and yielding gradients of any scalar loss with respect to every
//! trainable parameter — including losses that read the derivative channels,
//! as the physics residual does.
//!
//! The primitive set is closed: add, mul, scale, neg, tanh, sin, cos,
//! softplus, square, mean. Anything else must be composed from these.
//! `affine` is a fused composition of mul/add kept for throughput; it is
//! bit-identical to the composed form.

use thiserror::Error;

/// A scalar together with its first and second derivatives with respect to
/// the designated input coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffValue {
    pub value: f64,
    pub d_dt: f64,
    pub d2_dt2: f64,
}

// The inherent names mirror the engine's primitive set; the std operator
// traits delegate to them below.
#[allow(clippy::should_implement_trait)]
impl DiffValue {
    pub const ZERO: DiffValue = DiffValue {
        value: 0.0,
        d_dt: 0.0,
        d2_dt2: 0.0,
    };

    /// Lift the designated input coordinate: the identity function of t.
    pub fn input(t: f64) -> Self {
        DiffValue {
            value: t,
            d_dt: 1.0,
            d2_dt2: 0.0,
        }
    }

    /// Lift a constant (zero derivatives).
    pub fn constant(c: f64) -> Self {
        DiffValue {
            value: c,
            d_dt: 0.0,
            d2_dt2: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.d_dt.is_finite() && self.d2_dt2.is_finite()
    }

    pub fn add(self, rhs: Self) -> Self {
        DiffValue {
            value: self.value + rhs.value,
            d_dt: self.d_dt + rhs.d_dt,
            d2_dt2: self.d2_dt2 + rhs.d2_dt2,
        }
    }

    /// Product rule: (uv)'' = u''v + 2u'v' + uv''.
    pub fn mul(self, rhs: Self) -> Self {
        DiffValue {
            value: self.value * rhs.value,
            d_dt: self.d_dt * rhs.value + self.value * rhs.d_dt,
            d2_dt2: self.d2_dt2 * rhs.value
                + 2.0 * self.d_dt * rhs.d_dt
                + self.value * rhs.d2_dt2,
        }
    }

    pub fn scale(self, c: f64) -> Self {
        DiffValue {
            value: c * self.value,
            d_dt: c * self.d_dt,
            d2_dt2: c * self.d2_dt2,
        }
    }

    pub fn neg(self) -> Self {
        self.scale(-1.0)
    }

    /// Chain rule for a smooth unary f: (f∘u)'' = f''(u)·u'² + f'(u)·u''.
    fn unary(self, f: f64, f1: f64, f2: f64) -> Self {
        DiffValue {
            value: f,
            d_dt: f1 * self.d_dt,
            d2_dt2: f2 * self.d_dt * self.d_dt + f1 * self.d2_dt2,
        }
    }

    pub fn tanh(self) -> Self {
        let f = self.value.tanh();
        let f1 = 1.0 - f * f;
        self.unary(f, f1, -2.0 * f * f1)
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.unary(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.unary(c, -s, -c)
    }

    pub fn softplus(self) -> Self {
        let f = softplus(self.value);
        let s = sigmoid(self.value);
        self.unary(f, s, s * (1.0 - s))
    }

    pub fn square(self) -> Self {
        DiffValue {
            value: self.value * self.value,
            d_dt: 2.0 * self.value * self.d_dt,
            d2_dt2: 2.0 * self.d_dt * self.d_dt + 2.0 * self.value * self.d2_dt2,
        }
    }
}

impl std::ops::Add for DiffValue {
    type Output = DiffValue;
    fn add(self, rhs: Self) -> Self {
        DiffValue::add(self, rhs)
    }
}

impl std::ops::Mul for DiffValue {
    type Output = DiffValue;
    fn mul(self, rhs: Self) -> Self {
        DiffValue::mul(self, rhs)
    }
}

impl std::ops::Neg for DiffValue {
    type Output = DiffValue;
    fn neg(self) -> Self {
        DiffValue::neg(self)
    }
}

impl std::ops::Sub for DiffValue {
    type Output = DiffValue;
    fn sub(self, rhs: Self) -> Self {
        self.add(rhs.neg())
    }
}

/// Overflow-safe ln(1 + e^x).
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("non-finite value produced by node {node}")]
    NonFiniteValue { node: usize },
    #[error("non-finite gradient component for parameter {param}")]
    NonFiniteGradient { param: usize },
}

/// Index of a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    /// Trainable parameter, read from the parameter slice; constant in t.
    Param { idx: u32 },
    /// Per-evaluation input lifted as the designated coordinate: (x, 1, 0).
    InputTime { idx: u32 },
    /// Per-evaluation input lifted as a constant: (x, 0, 0).
    InputValue { idx: u32 },
    Const { c: f64 },
    Add(u32, u32),
    Mul(u32, u32),
    Scale { x: u32, c: f64 },
    Neg(u32),
    Tanh(u32),
    Sin(u32),
    Cos(u32),
    Softplus(u32),
    Square(u32),
    /// Mean of the nodes listed in aux[start..start+n].
    Mean { start: u32, n: u32 },
    /// Fused Σ params[w0+i]·node[aux[x0+i]] + params[bias] over i < n.
    /// Identical, term for term, to the composed mul/add chain.
    Affine { w0: u32, bias: u32, x0: u32, n: u32 },
    /// Channel extraction: value = input's d/dt channel.
    FirstDeriv(u32),
    /// Channel extraction: value = input's d²/dt² channel.
    SecondDeriv(u32),
}

/// Recorded operation sequence over parameters and per-evaluation inputs.
///
/// Recording is done once; the tape is then evaluated any number of times
/// with different parameter and input values via an external [`TapeBuffer`].
/// Replaying the same tape on the same values reproduces the forward result
/// exactly.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    ops: Vec<Op>,
    aux: Vec<u32>,
    n_params: usize,
    n_inputs: usize,
}

/// Per-evaluation storage: forward values and adjoint accumulators, one
/// triple per node. Reusable across evaluations of the same tape.
#[derive(Debug, Clone, Default)]
pub struct TapeBuffer {
    values: Vec<DiffValue>,
    adjoints: Vec<DiffValue>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Number of parameter slots referenced so far.
    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Number of per-evaluation input slots referenced so far.
    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    fn push(&mut self, op: Op) -> NodeId {
        let id = NodeId(self.ops.len() as u32);
        self.ops.push(op);
        id
    }

    /// Reference trainable parameter `idx`.
    pub fn param(&mut self, idx: usize) -> NodeId {
        self.n_params = self.n_params.max(idx + 1);
        self.push(Op::Param { idx: idx as u32 })
    }

    /// Lift input slot `idx` as the designated (time) coordinate: (x, 1, 0).
    pub fn input_time(&mut self, idx: usize) -> NodeId {
        self.n_inputs = self.n_inputs.max(idx + 1);
        self.push(Op::InputTime { idx: idx as u32 })
    }

    /// Lift input slot `idx` as a zero-derivative coordinate: (x, 0, 0).
    pub fn input_value(&mut self, idx: usize) -> NodeId {
        self.n_inputs = self.n_inputs.max(idx + 1);
        self.push(Op::InputValue { idx: idx as u32 })
    }

    pub fn constant(&mut self, c: f64) -> NodeId {
        self.push(Op::Const { c })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let k = self.constant(c);
        self.add(a, k)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale { x: x.0, c })
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Neg(x.0))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Tanh(x.0))
    }

    pub fn sin(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sin(x.0))
    }

    pub fn cos(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Cos(x.0))
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Softplus(x.0))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Square(x.0))
    }

    /// Extract the first time-derivative channel of `x` as a value.
    ///
    /// Tracked channels above the extraction shift down: the result's d/dt
    /// channel holds x'', and its own second-derivative channel (x''', not
    /// tracked) is truncated to zero. Gradients through the extraction are
    /// exact as long as the truncated channel never reaches the value being
    /// differentiated — losses built by squaring/summing extractions satisfy
    /// this, and the backward sweep checks it in debug builds.
    pub fn d_dt(&mut self, x: NodeId) -> NodeId {
        self.push(Op::FirstDeriv(x.0))
    }

    /// Extract the second time-derivative channel of `x` as a value.
    /// See [`Tape::d_dt`] for the truncation contract.
    pub fn d2_dt2(&mut self, x: NodeId) -> NodeId {
        self.push(Op::SecondDeriv(x.0))
    }

    pub fn mean(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "mean of no nodes");
        let start = self.aux.len() as u32;
        self.aux.extend(xs.iter().map(|id| id.0));
        self.push(Op::Mean {
            start,
            n: xs.len() as u32,
        })
    }

    /// Σ params[weight_base + i] · inputs[i] + params[bias].
    ///
    /// Accumulation order matches the left-to-right composed mul/add form,
    /// bias added last.
    pub fn affine(&mut self, weight_base: usize, bias: usize, inputs: &[NodeId]) -> NodeId {
        assert!(!inputs.is_empty(), "affine with no inputs");
        let start = self.aux.len() as u32;
        self.aux.extend(inputs.iter().map(|id| id.0));
        self.n_params = self.n_params.max(weight_base + inputs.len());
        self.n_params = self.n_params.max(bias + 1);
        self.push(Op::Affine {
            w0: weight_base as u32,
            bias: bias as u32,
            x0: start,
            n: inputs.len() as u32,
        })
    }

    /// Forward sweep. `params` and `inputs` must cover every referenced slot.
    pub fn forward(&self, params: &[f64], inputs: &[f64], buf: &mut TapeBuffer) {
        assert!(params.len() >= self.n_params, "parameter slice too short");
        assert!(inputs.len() >= self.n_inputs, "input slice too short");
        buf.values.resize(self.ops.len(), DiffValue::ZERO);
        let v = &mut buf.values;
        for (i, op) in self.ops.iter().enumerate() {
            v[i] = match *op {
                Op::Param { idx } => DiffValue::constant(params[idx as usize]),
                Op::InputTime { idx } => DiffValue::input(inputs[idx as usize]),
                Op::InputValue { idx } => DiffValue::constant(inputs[idx as usize]),
                Op::Const { c } => DiffValue::constant(c),
                Op::Add(a, b) => v[a as usize].add(v[b as usize]),
                Op::Mul(a, b) => v[a as usize].mul(v[b as usize]),
                Op::Scale { x, c } => v[x as usize].scale(c),
                Op::Neg(x) => v[x as usize].neg(),
                Op::Tanh(x) => v[x as usize].tanh(),
                Op::Sin(x) => v[x as usize].sin(),
                Op::Cos(x) => v[x as usize].cos(),
                Op::Softplus(x) => v[x as usize].softplus(),
                Op::Square(x) => v[x as usize].square(),
                Op::Mean { start, n } => {
                    let ids = &self.aux[start as usize..(start + n) as usize];
                    let mut acc = DiffValue::ZERO;
                    for &id in ids {
                        acc = acc.add(v[id as usize]);
                    }
                    acc.scale(1.0 / n as f64)
                }
                Op::Affine { w0, bias, x0, n } => {
                    let w = &params[w0 as usize..(w0 + n) as usize];
                    let ids = &self.aux[x0 as usize..(x0 + n) as usize];
                    let mut acc = DiffValue::ZERO;
                    for (&wk, &id) in w.iter().zip(ids.iter()) {
                        let x = v[id as usize];
                        acc.value += wk * x.value;
                        acc.d_dt += wk * x.d_dt;
                        acc.d2_dt2 += wk * x.d2_dt2;
                    }
                    acc.value += params[bias as usize];
                    acc
                }
                Op::FirstDeriv(x) => DiffValue {
                    value: v[x as usize].d_dt,
                    d_dt: v[x as usize].d2_dt2,
                    d2_dt2: 0.0,
                },
                Op::SecondDeriv(x) => DiffValue {
                    value: v[x as usize].d2_dt2,
                    d_dt: 0.0,
                    d2_dt2: 0.0,
                },
            };
        }
    }

    /// Value of a node after [`Tape::forward`].
    pub fn value(&self, buf: &TapeBuffer, node: NodeId) -> DiffValue {
        buf.values[node.index()]
    }

    /// Backward sweep from `output` with adjoint seed `seed`, accumulating
    /// parameter gradients into `grad` (which must hold `n_params` slots).
    ///
    /// `params` must be the slice the forward sweep ran with. Every node's
    /// adjoint starts at zero; seeding `(1, 0, 0)` yields gradients of the
    /// output's value channel, `(0, 0, 1)` of its second-derivative channel.
    pub fn backward_seeded(
        &self,
        buf: &mut TapeBuffer,
        params: &[f64],
        output: NodeId,
        seed: DiffValue,
        grad: &mut [f64],
    ) {
        assert!(grad.len() >= self.n_params, "gradient slice too short");
        assert!(params.len() >= self.n_params, "parameter slice too short");
        buf.adjoints.clear();
        buf.adjoints.resize(self.ops.len(), DiffValue::ZERO);
        let v = &buf.values;
        let a = &mut buf.adjoints;
        a[output.index()] = seed;
        for i in (0..self.ops.len()).rev() {
            let acc = a[i];
            if acc == DiffValue::ZERO {
                continue;
            }
            match self.ops[i] {
                Op::Param { idx } => grad[idx as usize] += acc.value,
                Op::InputTime { .. } | Op::InputValue { .. } | Op::Const { .. } => {}
                Op::Add(x, y) => {
                    a[x as usize] = a[x as usize].add(acc);
                    a[y as usize] = a[y as usize].add(acc);
                }
                Op::Mul(x, y) => {
                    let (u, w) = (v[x as usize], v[y as usize]);
                    a[x as usize] = a[x as usize].add(mul_adjoint(acc, w));
                    a[y as usize] = a[y as usize].add(mul_adjoint(acc, u));
                }
                Op::Scale { x, c } => a[x as usize] = a[x as usize].add(acc.scale(c)),
                Op::Neg(x) => a[x as usize] = a[x as usize].add(acc.neg()),
                Op::Tanh(x) => {
                    let u = v[x as usize];
                    let f = u.value.tanh();
                    let f1 = 1.0 - f * f;
                    let f2 = -2.0 * f * f1;
                    let f3 = -2.0 * f1 * (1.0 - 3.0 * f * f);
                    a[x as usize] = a[x as usize].add(unary_adjoint(acc, u, f1, f2, f3));
                }
                Op::Sin(x) => {
                    let u = v[x as usize];
                    let (s, c) = u.value.sin_cos();
                    a[x as usize] = a[x as usize].add(unary_adjoint(acc, u, c, -s, -c));
                }
                Op::Cos(x) => {
                    let u = v[x as usize];
                    let (s, c) = u.value.sin_cos();
                    a[x as usize] = a[x as usize].add(unary_adjoint(acc, u, -s, -c, s));
                }
                Op::Softplus(x) => {
                    let u = v[x as usize];
                    let s = sigmoid(u.value);
                    let f2 = s * (1.0 - s);
                    let f3 = f2 * (1.0 - 2.0 * s);
                    a[x as usize] = a[x as usize].add(unary_adjoint(acc, u, s, f2, f3));
                }
                Op::Square(x) => {
                    let u = v[x as usize];
                    a[x as usize] =
                        a[x as usize].add(unary_adjoint(acc, u, 2.0 * u.value, 2.0, 0.0));
                }
                Op::Mean { start, n } => {
                    let share = acc.scale(1.0 / n as f64);
                    for &id in &self.aux[start as usize..(start + n) as usize] {
                        a[id as usize] = a[id as usize].add(share);
                    }
                }
                Op::Affine { w0, bias, x0, n } => {
                    // Weights enter through the value channel only; each
                    // input sees its weight applied to all three channels.
                    for k in 0..n as usize {
                        let j = self.aux[x0 as usize + k] as usize;
                        let x = v[j];
                        grad[w0 as usize + k] +=
                            acc.value * x.value + acc.d_dt * x.d_dt + acc.d2_dt2 * x.d2_dt2;
                        let wk = params[w0 as usize + k];
                        a[j] = a[j].add(acc.scale(wk));
                    }
                    grad[bias as usize] += acc.value;
                }
                Op::FirstDeriv(x) => {
                    debug_assert_eq!(
                        acc.d2_dt2, 0.0,
                        "adjoint reached a truncated channel of d_dt"
                    );
                    let j = x as usize;
                    a[j].d_dt += acc.value;
                    a[j].d2_dt2 += acc.d_dt;
                }
                Op::SecondDeriv(x) => {
                    debug_assert!(
                        acc.d_dt == 0.0 && acc.d2_dt2 == 0.0,
                        "adjoint reached a truncated channel of d2_dt2"
                    );
                    a[x as usize].d2_dt2 += acc.value;
                }
            }
        }
    }
}

/// Adjoint contribution to u from w̄ of w = u·v, given v's forward triple.
fn mul_adjoint(acc: DiffValue, other: DiffValue) -> DiffValue {
    DiffValue {
        value: acc.value * other.value + acc.d_dt * other.d_dt + acc.d2_dt2 * other.d2_dt2,
        d_dt: acc.d_dt * other.value + 2.0 * acc.d2_dt2 * other.d_dt,
        d2_dt2: acc.d2_dt2 * other.value,
    }
}

/// Adjoint contribution to u from w̄ of w = f(u), given f', f'', f''' at u.
fn unary_adjoint(acc: DiffValue, u: DiffValue, f1: f64, f2: f64, f3: f64) -> DiffValue {
    DiffValue {
        value: acc.value * f1
            + acc.d_dt * f2 * u.d_dt
            + acc.d2_dt2 * (f3 * u.d_dt * u.d_dt + f2 * u.d2_dt2),
        d_dt: acc.d_dt * f1 + 2.0 * acc.d2_dt2 * f2 * u.d_dt,
        d2_dt2: acc.d2_dt2 * f1,
    }
}

impl Tape {
    /// Evaluate the scalar at `output` and its gradient with respect to all
    /// parameters. Gradient slots not reached by the loss stay zero.
    pub fn gradient(
        &self,
        params: &[f64],
        inputs: &[f64],
        output: NodeId,
        grad: &mut [f64],
    ) -> Result<f64, AutodiffError> {
        let mut buf = TapeBuffer::default();
        self.gradient_in(params, inputs, output, grad, &mut buf)
    }

    /// [`Tape::gradient`] with caller-owned scratch storage.
    pub fn gradient_in(
        &self,
        params: &[f64],
        inputs: &[f64],
        output: NodeId,
        grad: &mut [f64],
        buf: &mut TapeBuffer,
    ) -> Result<f64, AutodiffError> {
        self.forward(params, inputs, buf);
        let out = self.value(buf, output);
        if !out.is_finite() {
            return Err(AutodiffError::NonFiniteValue {
                node: output.index(),
            });
        }
        grad[..self.n_params].fill(0.0);
        self.backward_seeded(
            buf,
            params,
            output,
            DiffValue {
                value: 1.0,
                d_dt: 0.0,
                d2_dt2: 0.0,
            },
            grad,
        );
        if let Some(p) = grad[..self.n_params].iter().position(|g| !g.is_finite()) {
            return Err(AutodiffError::NonFiniteGradient { param: p });
        }
        Ok(out.value)
    }
}
