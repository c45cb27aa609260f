use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{GradError, Scalar};

/// Node index used for constants, which never occupy a tape slot.
const CONST: u32 = u32::MAX;

/// Vector-Jacobian product of a recorded custom operation.
///
/// `out_adj` holds the adjoints of the outputs; the implementation adds the
/// input adjoints into `in_adj` and parameter adjoints into `param_grads`.
/// `values` are the parameter values the forward pass was evaluated at.
pub trait Vjp {
    fn backward(&self, values: &[f64], out_adj: &[f64], in_adj: &mut [f64], param_grads: &mut [f64]);
}

#[derive(Clone, Copy)]
enum Op {
    Leaf,
    Param(u32),
    External(u32),
    Unary { a: u32, da: f64 },
    Binary { a: u32, b: u32, da: f64, db: f64 },
    CustomOut { cid: u32, k: u32 },
}

struct CustomRec {
    inputs: Vec<u32>,
    first_out: u32,
    n_out: u32,
    vjp: Box<dyn Vjp>,
}

#[derive(Default)]
pub(crate) struct TapeData {
    ops: Vec<Op>,
    customs: Vec<CustomRec>,
}

impl TapeData {
    fn push(&mut self, op: Op) -> u32 {
        let i = self.ops.len();
        assert!(i < CONST as usize, "tape overflow");
        self.ops.push(op);
        i as u32
    }
}

/// A scalar recorded on a tape. Constants carry no node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t RefCell<TapeData>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.idx == CONST {
            write!(f, "Var(const {})", self.val)
        } else {
            write!(f, "Var(#{} = {})", self.idx, self.val)
        }
    }
}

impl<'t> Var<'t> {
    pub fn is_constant(&self) -> bool {
        self.idx == CONST
    }

    /// Tape slot of this variable, `None` for constants.
    pub fn node(&self) -> Option<u32> {
        (self.idx != CONST).then_some(self.idx)
    }

    fn with(self, val: f64, idx: u32) -> Var<'t> {
        Var { tape: self.tape, idx, val }
    }

    fn unary(self, val: f64, da: f64) -> Var<'t> {
        if self.idx == CONST {
            return self.with(val, CONST);
        }
        let idx = self.tape.borrow_mut().push(Op::Unary { a: self.idx, da });
        self.with(val, idx)
    }

    fn binary(self, o: Var<'t>, val: f64, da: f64, db: f64) -> Var<'t> {
        let op = match (self.idx == CONST, o.idx == CONST) {
            (true, true) => return self.with(val, CONST),
            (false, true) => Op::Unary { a: self.idx, da },
            (true, false) => Op::Unary { a: o.idx, da: db },
            (false, false) => Op::Binary { a: self.idx, b: o.idx, da, db },
        };
        let idx = self.tape.borrow_mut().push(op);
        self.with(val, idx)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, self.val + o.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, self.val - o.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, self.val * o.val, o.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Var<'t>) -> Var<'t> {
        let inv = 1.0 / o.val;
        self.binary(o, self.val / o.val, inv, -self.val * inv * inv)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.unary(self.val + c, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.unary(self.val - c, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.unary(self.val * c, c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        self.unary(self.val / c, 1.0 / c)
    }
}

impl<'t> Scalar for Var<'t> {
    #[inline]
    fn value(self) -> f64 {
        self.val
    }

    #[inline]
    fn lift(self, v: f64) -> Self {
        self.with(v, CONST)
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }

    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }

    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        let d = if s > 0.0 { 0.5 / s } else { 0.0 };
        self.unary(s, d)
    }

    fn sin(self) -> Self {
        self.unary(self.val.sin(), self.val.cos())
    }

    fn cos(self) -> Self {
        self.unary(self.val.cos(), -self.val.sin())
    }

    fn acos(self) -> Self {
        let q = 1.0 - self.val * self.val;
        let d = if q > 0.0 { -1.0 / q.sqrt() } else { 0.0 };
        self.unary(self.val.acos(), d)
    }

    fn abs(self) -> Self {
        let d = if self.val > 0.0 {
            1.0
        } else if self.val < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(self.val.abs(), d)
    }

    fn powf(self, p: f64) -> Self {
        let v = self.val.powf(p);
        let d = if self.val != 0.0 { p * self.val.powf(p - 1.0) } else if p == 1.0 { 1.0 } else { 0.0 };
        self.unary(v, if d.is_finite() { d } else { 0.0 })
    }

    fn sigmoid(self) -> Self {
        let s = super::scalar::sigmoid(self.val);
        self.unary(s, s * (1.0 - s))
    }

    fn relu(self) -> Self {
        if self.val > 0.0 {
            self.unary(self.val, 1.0)
        } else {
            self.unary(0.0, 0.0)
        }
    }

    fn clamp(self, lo: f64, hi: f64) -> Self {
        if self.val > lo && self.val < hi {
            self.unary(self.val, 1.0)
        } else {
            self.unary(self.val.clamp(lo, hi), 0.0)
        }
    }

    fn recip(self) -> Self {
        let inv = 1.0 / self.val;
        self.unary(inv, -inv * inv)
    }
}

/// Destination buffers for a backward pass.
pub struct GradSink<'a> {
    /// Parameter values (read by custom operations).
    pub values: &'a [f64],
    /// Parameter gradient accumulator (same indexing as the parameter store).
    pub params: &'a mut [f64],
    /// Accumulator for external inputs, indexed by external slot.
    pub external: &'a mut [f64],
}

/// Recording surface. Create variables through it, then [`finish_at`](Self::finish_at)
/// into a [`Tape`].
#[derive(Default)]
pub struct Recorder {
    data: RefCell<TapeData>,
}

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(&self, v: f64) -> Var<'_> {
        Var { tape: &self.data, idx: CONST, val: v }
    }

    /// Independent input; its adjoint is reported by [`Tape::backward_adjoints`].
    pub fn input(&self, v: f64) -> Var<'_> {
        let idx = self.data.borrow_mut().push(Op::Leaf);
        Var { tape: &self.data, idx, val: v }
    }

    pub(crate) fn param_leaf(&self, pid: usize, v: f64) -> Var<'_> {
        let idx = self.data.borrow_mut().push(Op::Param(pid as u32));
        Var { tape: &self.data, idx, val: v }
    }

    pub fn external(&self, slot: usize, v: f64) -> Var<'_> {
        let idx = self.data.borrow_mut().push(Op::External(slot as u32));
        Var { tape: &self.data, idx, val: v }
    }

    /// Record a custom operation whose outputs have already been computed.
    pub fn custom<'t>(&'t self, inputs: &[Var<'t>], outputs: &[f64], vjp: Box<dyn Vjp>, out: &mut Vec<Var<'t>>) {
        let mut d = self.data.borrow_mut();
        let cid = d.customs.len() as u32;
        let first_out = d.ops.len() as u32;
        for k in 0..outputs.len() {
            d.push(Op::CustomOut { cid, k: k as u32 });
        }
        d.customs.push(CustomRec {
            inputs: inputs.iter().map(|v| v.idx).collect(),
            first_out,
            n_out: outputs.len() as u32,
            vjp,
        });
        out.extend(outputs.iter().enumerate().map(|(k, &val)| Var {
            tape: &self.data,
            idx: first_out + k as u32,
            val,
        }));
    }

    pub fn len(&self) -> usize {
        self.data.borrow().ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Freeze the recording; `root` is the node of the differentiated output
    /// (from [`Var::node`], `None` for a constant) and `value` its value.
    pub fn finish_at(self, root: Option<u32>, value: f64) -> Tape {
        Tape { data: self.data.into_inner(), root, value, consumed: false, retain: false }
    }
}

/// A finished recording of one scalar computation.
pub struct Tape {
    data: TapeData,
    root: Option<u32>,
    value: f64,
    consumed: bool,
    retain: bool,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).field("value", &self.value).finish()
    }
}

impl Tape {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn len(&self) -> usize {
        self.data.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ops.is_empty()
    }

    /// Keep the tape replayable after `backward`.
    pub fn retain(mut self) -> Self {
        self.retain = true;
        self
    }

    /// Accumulate `seed * d value / d theta` into `sink`.
    pub fn backward(&mut self, seed: f64, sink: &mut GradSink<'_>) -> Result<(), GradError> {
        self.backward_adjoints(seed, sink).map(|_| ())
    }

    /// Like [`backward`](Self::backward) but also returns the adjoint of every
    /// tape slot (useful for reading the adjoints of [`Recorder::input`] leaves).
    pub fn backward_adjoints(&mut self, seed: f64, sink: &mut GradSink<'_>) -> Result<Vec<f64>, GradError> {
        if self.consumed {
            return Err(GradError::TapeConsumed);
        }
        if !self.retain {
            self.consumed = true;
        }
        let mut adj = vec![0.0; self.data.ops.len()];
        if let Some(r) = self.root {
            adj[r as usize] = seed;
        }
        self.propagate(&mut adj, sink);
        Ok(adj)
    }

    /// Backward pass from an arbitrary initial adjoint vector (one entry per slot).
    pub fn backward_from(&mut self, mut adj: Vec<f64>, sink: &mut GradSink<'_>) -> Result<Vec<f64>, GradError> {
        if self.consumed {
            return Err(GradError::TapeConsumed);
        }
        if !self.retain {
            self.consumed = true;
        }
        adj.resize(self.data.ops.len(), 0.0);
        self.propagate(&mut adj, sink);
        Ok(adj)
    }

    fn propagate(&self, adj: &mut [f64], sink: &mut GradSink<'_>) {
        let mut out_adj = Vec::new();
        let mut in_adj = Vec::new();
        for i in (0..self.data.ops.len()).rev() {
            let g = adj[i];
            match self.data.ops[i] {
                Op::Leaf => {}
                Op::Param(p) => {
                    if g != 0.0 {
                        sink.params[p as usize] += g;
                    }
                }
                Op::External(s) => {
                    if g != 0.0 {
                        sink.external[s as usize] += g;
                    }
                }
                Op::Unary { a, da } => {
                    if g != 0.0 {
                        adj[a as usize] += g * da;
                    }
                }
                Op::Binary { a, b, da, db } => {
                    if g != 0.0 {
                        adj[a as usize] += g * da;
                        adj[b as usize] += g * db;
                    }
                }
                Op::CustomOut { cid, k } => {
                    if k != 0 {
                        continue;
                    }
                    let rec = &self.data.customs[cid as usize];
                    let lo = rec.first_out as usize;
                    let hi = lo + rec.n_out as usize;
                    if adj[lo..hi].iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    out_adj.clear();
                    out_adj.extend_from_slice(&adj[lo..hi]);
                    in_adj.clear();
                    in_adj.resize(rec.inputs.len(), 0.0);
                    rec.vjp.backward(sink.values, &out_adj, &mut in_adj, sink.params);
                    for (&inp, &ga) in rec.inputs.iter().zip(&in_adj) {
                        if inp != CONST {
                            adj[inp as usize] += ga;
                        }
                    }
                }
            }
        }
    }
}
