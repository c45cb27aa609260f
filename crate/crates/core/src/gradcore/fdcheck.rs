use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{forward_record, Ctx, GradSink, ParameterStore, PlainCtx, TapeCtx, Var};

/// A scalar function of the parameter store with an analytic gradient.
pub trait Objective {
    fn value(&self, store: &ParameterStore) -> f64;
    /// Add the gradient into `grads` and return the value.
    fn gradient(&self, store: &ParameterStore, grads: &mut [f64]) -> f64;
}

/// An expression written once against [`Ctx`].
pub trait Expr {
    fn eval<C: Ctx>(&self, c: &C) -> C::S;
}

/// Adapter turning an [`Expr`] into an [`Objective`] with a single tape.
pub struct ExprObjective<E>(pub E);

impl<E: Expr> Objective for ExprObjective<E> {
    fn value(&self, store: &ParameterStore) -> f64 {
        self.0.eval(&PlainCtx::new(store))
    }

    fn gradient(&self, store: &ParameterStore, grads: &mut [f64]) -> f64 {
        let (v, mut tape) = forward_record(store, |c: &TapeCtx<'_>| -> Var<'_> { self.0.eval(c) });
        let mut sink = GradSink { values: store.values(), params: grads, external: &mut [] };
        tape.backward(1.0, &mut sink).expect("fresh tape");
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdEntry {
    pub param: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    /// One-sided differences disagree: a kink lies within the stencil.
    pub nondifferentiable: bool,
    /// `rel_err > tol` on a differentiable sample.
    pub exceeds: bool,
}

#[derive(Debug, Clone, Default)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
}

impl FdReport {
    pub fn valid(&self) -> impl Iterator<Item = &FdEntry> {
        self.entries.iter().filter(|e| !e.nondifferentiable)
    }

    pub fn n_valid(&self) -> usize {
        self.valid().count()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.valid().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&FdEntry> {
        self.entries.iter().filter(|e| e.exceeds).collect()
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| !e.exceeds)
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    let d = a.abs().max(b.abs()).max(1e-12);
    (a - b).abs() / d
}

fn probe<O: Objective + ?Sized>(obj: &O, store: &mut ParameterStore, id: usize, h: f64) -> (f64, bool) {
    let x0 = store.values()[id];
    let at = |dx: f64, s: &mut ParameterStore| {
        s.values_mut()[id] = x0 + dx;
        obj.value(s)
    };
    let f0 = at(0.0, store);
    let fp = at(h, store);
    let fm = at(-h, store);
    let fp2 = at(2.0 * h, store);
    let fm2 = at(-2.0 * h, store);
    store.values_mut()[id] = x0;

    let central = (fp - fm) / (2.0 * h);
    let fwd = (fp - f0) / h;
    let bwd = (f0 - fm) / h;
    let fwd2 = (fp2 - f0) / (2.0 * h);
    let bwd2 = (f0 - fm2) / (2.0 * h);
    // A smooth function has matching curvature estimates at scales h and 2h;
    // a kink inside the stencil does not.
    let jump = (fwd - bwd).abs();
    let c1 = (fwd - bwd) / h;
    let c2 = (fwd2 - bwd2) / (2.0 * h);
    let slope = fwd.abs().max(bwd.abs());
    let kink = jump > (0.05 * slope).max(1e-7) && (c1 - c2).abs() > 0.25 * c1.abs().max(c2.abs());
    (central, kink)
}

/// Compare analytic gradients against central differences for the given parameters.
pub fn check_gradients_fd<O: Objective + ?Sized>(obj: &O, store: &mut ParameterStore, ids: &[usize], h: f64, tol: f64) -> FdReport {
    let mut grads = vec![0.0; store.len()];
    obj.gradient(store, &mut grads);
    let mut report = FdReport::default();
    for &id in ids {
        let (numeric, kink) = probe(obj, store, id, h);
        let analytic = grads[id];
        let rel_err = rel_error(analytic, numeric);
        report.entries.push(FdEntry {
            param: id,
            analytic,
            numeric,
            rel_err,
            nondifferentiable: kink,
            exceeds: !kink && rel_err > tol,
        });
    }
    report
}

/// Check `n` randomly chosen parameters whose analytic gradient magnitude is
/// at least `min_grad`, skipping (and replacing) kinked samples.
pub fn check_sampled<O: Objective + ?Sized>(
    obj: &O,
    store: &mut ParameterStore,
    candidates: &[usize],
    n: usize,
    seed: u64,
    h: f64,
    tol: f64,
    min_grad: f64,
) -> FdReport {
    let mut grads = vec![0.0; store.len()];
    obj.gradient(store, &mut grads);
    let mut pool: Vec<usize> = candidates.iter().copied().filter(|&i| grads[i].abs() >= min_grad).collect();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut report = FdReport::default();
    for id in pool {
        if report.n_valid() >= n {
            break;
        }
        let (numeric, kink) = probe(obj, store, id, h);
        let analytic = grads[id];
        let rel_err = rel_error(analytic, numeric);
        report.entries.push(FdEntry {
            param: id,
            analytic,
            numeric,
            rel_err,
            nondifferentiable: kink,
            exceeds: !kink && rel_err > tol,
        });
    }
    report
}
