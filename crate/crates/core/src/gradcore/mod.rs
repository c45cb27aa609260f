//! Reverse-mode scalar differentiation.
//!
//! Model code is generic over [`Ctx`]; a [`PlainCtx`] evaluates in `f64`,
//! a [`TapeCtx`] records onto a [`Recorder`] whose [`Tape`] is replayed
//! backwards into a [`ParameterStore`]'s gradient buffer.

mod context;
mod dual;
mod fdcheck;
mod scalar;
mod store;
mod tape;

pub use context::{evaluate, forward_record, Ctx, DiffFn, PlainCtx, TapeCtx};
pub use dual::Dual;
pub use fdcheck::{check_gradients_fd, check_sampled, rel_error, Expr, ExprObjective, FdEntry, FdReport, Objective};
pub use scalar::{sigmoid, Scalar};
pub use store::{ParameterStore, Segment};
pub use tape::{GradSink, Recorder, Tape, Var, Vjp};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GradError {
    #[error("backward called on a consumed tape")]
    TapeConsumed,
    #[error("parameter {0} is not registered in the store")]
    UnregisteredParameter(usize),
    #[error("unknown parameter segment `{0}`")]
    UnknownSegment(String),
    #[error("segment `{name}` has shape {expected:?}, got {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
}

/// Run backward on a tape into a store's gradients.
pub fn backward(tape: &mut Tape, seed: f64, store: &mut ParameterStore) -> Result<(), GradError> {
    let (values, grads) = store.split_mut();
    let mut sink = GradSink { values, params: grads, external: &mut [] };
    tape.backward(seed, &mut sink)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.add_segment("theta", &[1], |_| v);
        s
    }

    #[test]
    fn square_value_and_grad() {
        let mut s = one(3.0);
        let (v, mut t) = forward_record(&s, |c| c.param(0) * c.param(0));
        assert_eq!(v, 9.0);
        backward(&mut t, 1.0, &mut s).unwrap();
        assert_eq!(s.grads()[0], 6.0);
    }

    #[test]
    fn constant_has_empty_tape() {
        let s = one(3.0);
        let (v, t) = forward_record(&s, |c| c.constant(5.0));
        assert_eq!(v, 5.0);
        assert!(t.is_empty());
    }

    #[test]
    fn sigmoid_at_zero() {
        let s = one(0.0);
        let (v, _) = forward_record(&s, |c| c.param(0).sigmoid());
        assert_eq!(v, 0.5);
    }

    #[test]
    fn sin_grad_at_zero() {
        let mut s = one(0.0);
        let (_, mut t) = forward_record(&s, |c| c.param(0).sin());
        backward(&mut t, 1.0, &mut s).unwrap();
        assert_eq!(s.grads()[0], 1.0);
    }

    #[test]
    fn zero_seed_leaves_grads() {
        let mut s = one(3.0);
        s.grads_mut()[0] = 0.25;
        let (_, mut t) = forward_record(&s, |c| c.param(0).square());
        backward(&mut t, 0.0, &mut s).unwrap();
        assert_eq!(s.grads()[0], 0.25);
    }

    #[test]
    fn double_backward_errors() {
        let mut s = one(3.0);
        let (_, mut t) = forward_record(&s, |c| c.param(0).square());
        backward(&mut t, 1.0, &mut s).unwrap();
        assert_eq!(backward(&mut t, 1.0, &mut s), Err(GradError::TapeConsumed));
    }

    #[test]
    fn retained_tape_is_linear() {
        let mut s1 = one(1.7);
        let mut s2 = one(1.7);
        fn f<'t>(c: &TapeCtx<'t>) -> Var<'t> {
            let p = c.param(0);
            (p * p).exp() / (p + 2.0)
        }
        let (_, t1) = forward_record(&s1, f);
        let (_, t2) = forward_record(&s2, f);
        let (a, b) = (0.375, 1.25);
        let mut t1 = t1.retain();
        backward(&mut t1, a, &mut s1).unwrap();
        backward(&mut t1, b, &mut s1).unwrap();
        let mut t2 = t2;
        backward(&mut t2, a + b, &mut s2).unwrap();
        assert_eq!(s1.grads()[0], s2.grads()[0]);
    }

    #[test]
    fn plain_matches_recorded_bitwise() {
        struct E;
        impl Expr for E {
            fn eval<C: Ctx>(&self, c: &C) -> C::S {
                let p = c.param(0);
                (p.sigmoid() * p.sin() + p.square().sqrt()).powf(1.3) / (p.cos() + 2.0)
            }
        }
        let s = one(0.83);
        let plain = evaluate(&s, |c| E.eval(c));
        let (rec, _) = forward_record(&s, |c| E.eval(c));
        assert_eq!(plain.to_bits(), rec.to_bits());
    }

    #[test]
    #[should_panic(expected = "not registered")]
    fn unregistered_param_panics() {
        let s = one(1.0);
        let _ = forward_record(&s, |c| c.param(7));
    }
}
