use super::{ParameterStore, Recorder, Scalar, Tape, Var, Vjp};

/// A differentiable function of parameters and constant inputs with a
/// hand-written adjoint (used for the network evaluations).
pub trait DiffFn {
    fn n_outputs(&self) -> usize;
    fn eval(&self, params: &[f64], x: &[f64], out: &mut [f64]);
    /// Evaluate and keep whatever the adjoint needs.
    fn eval_record(&self, params: &[f64], x: &[f64], out: &mut [f64]) -> Box<dyn Vjp>;
}

/// Evaluation context: either plain `f64` or recording onto a tape.
///
/// Model code is written once against this trait.
pub trait Ctx {
    type S: Scalar;
    fn store(&self) -> &ParameterStore;
    fn constant(&self, v: f64) -> Self::S;
    /// Parameter read. Panics on an index outside the store.
    fn param(&self, id: usize) -> Self::S;
    /// An input owned by an enclosing computation, differentiated through
    /// the `external` accumulator of the backward pass.
    fn external(&self, slot: usize, v: f64) -> Self::S;
    /// Apply a custom operation to constant inputs.
    fn apply(&self, f: &dyn DiffFn, x: &[f64], out: &mut Vec<Self::S>);
    /// Splice in a locally linearized function of `inputs`: its `outputs`
    /// and the row-major Jacobian (outputs x inputs). Plain contexts ignore
    /// `jac`, so callers may pass an empty one when not recording.
    fn linearized(&self, inputs: &[Self::S], outputs: &[f64], jac: Vec<f64>, out: &mut Vec<Self::S>);
    fn recording(&self) -> bool;
}

/// Vjp of a linearized operation.
struct DenseJacobian {
    n_in: usize,
    jac: Vec<f64>,
}

impl Vjp for DenseJacobian {
    fn backward(&self, _values: &[f64], out_adj: &[f64], in_adj: &mut [f64], _param_grads: &mut [f64]) {
        for (row, &a) in self.jac.chunks_exact(self.n_in).zip(out_adj) {
            if a != 0.0 {
                for (g, &j) in in_adj.iter_mut().zip(row) {
                    *g += a * j;
                }
            }
        }
    }
}

pub struct PlainCtx<'a> {
    store: &'a ParameterStore,
}

impl<'a> PlainCtx<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        PlainCtx { store }
    }
}

impl Ctx for PlainCtx<'_> {
    type S = f64;

    fn store(&self) -> &ParameterStore {
        self.store
    }

    fn constant(&self, v: f64) -> f64 {
        v
    }

    fn param(&self, id: usize) -> f64 {
        match self.store.get(id) {
            Ok(v) => v,
            Err(e) => panic!("{e}"),
        }
    }

    fn external(&self, _slot: usize, v: f64) -> f64 {
        v
    }

    fn apply(&self, f: &dyn DiffFn, x: &[f64], out: &mut Vec<f64>) {
        let n = out.len();
        out.resize(n + f.n_outputs(), 0.0);
        f.eval(self.store.values(), x, &mut out[n..]);
    }

    fn linearized(&self, _inputs: &[f64], outputs: &[f64], _jac: Vec<f64>, out: &mut Vec<f64>) {
        out.extend_from_slice(outputs);
    }

    fn recording(&self) -> bool {
        false
    }
}

pub struct TapeCtx<'t> {
    rec: &'t Recorder,
    store: &'t ParameterStore,
}

impl<'t> TapeCtx<'t> {
    pub fn new(rec: &'t Recorder, store: &'t ParameterStore) -> Self {
        TapeCtx { rec, store }
    }

    pub fn recorder(&self) -> &'t Recorder {
        self.rec
    }
}

impl<'t> Ctx for TapeCtx<'t> {
    type S = Var<'t>;

    fn store(&self) -> &ParameterStore {
        self.store
    }

    fn constant(&self, v: f64) -> Var<'t> {
        self.rec.constant(v)
    }

    fn param(&self, id: usize) -> Var<'t> {
        match self.store.get(id) {
            Ok(v) => self.rec.param_leaf(id, v),
            Err(e) => panic!("{e}"),
        }
    }

    fn external(&self, slot: usize, v: f64) -> Var<'t> {
        self.rec.external(slot, v)
    }

    fn apply(&self, f: &dyn DiffFn, x: &[f64], out: &mut Vec<Var<'t>>) {
        let mut vals = vec![0.0; f.n_outputs()];
        let vjp = f.eval_record(self.store.values(), x, &mut vals);
        self.rec.custom(&[], &vals, vjp, out);
    }

    fn linearized(&self, inputs: &[Var<'t>], outputs: &[f64], jac: Vec<f64>, out: &mut Vec<Var<'t>>) {
        assert_eq!(jac.len(), inputs.len() * outputs.len(), "Jacobian shape");
        self.rec.custom(inputs, outputs, Box::new(DenseJacobian { n_in: inputs.len(), jac }), out);
    }

    fn recording(&self) -> bool {
        true
    }
}

/// Evaluate `expr` without recording.
pub fn evaluate<F>(store: &ParameterStore, expr: F) -> f64
where
    F: FnOnce(&PlainCtx<'_>) -> f64,
{
    expr(&PlainCtx::new(store))
}

/// Evaluate `expr` while recording; returns the value and the finished tape.
pub fn forward_record<F>(store: &ParameterStore, expr: F) -> (f64, Tape)
where
    F: for<'t> FnOnce(&TapeCtx<'t>) -> Var<'t>,
{
    let rec = Recorder::new();
    let root = {
        let ctx = TapeCtx::new(&rec, store);
        let v = expr(&ctx);
        (v.value(), v.node())
    };
    let tape = rec.finish_at(root.1, root.0);
    (root.0, tape)
}
