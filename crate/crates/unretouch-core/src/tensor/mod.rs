//! Minimal reverse-mode automatic differentiation over `ndarray`.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! replays it in reverse and accumulates gradients. Values are dynamic-rank
//! `f64` arrays. The engine is deliberately small: only the operations the
//! two networks need exist, each with a hand-written adjoint, and every op
//! is exercised against central finite differences in the test suite.
//!
//! Tapes are cheap to create and are meant to live for a single forward
//! (plus optional backward) pass. Nothing here is `Sync`; concurrent
//! inference uses one tape per thread over shared immutable parameters.

mod conv;
mod linalg;
mod norm;
mod shape_ops;
mod window;

pub mod check;

use ndarray::{ArrayD, IxDyn};
use std::cell::RefCell;

/// Dynamic-rank array of `f64`, the engine's only value type.
pub type Arr = ArrayD<f64>;

pub(crate) struct BackCtx<'a> {
    pub parents: Vec<&'a Arr>,
    pub value: &'a Arr,
    pub grad: &'a Arr,
}

type BackFn = Box<dyn Fn(BackCtx<'_>) -> Vec<Arr>>;

struct OpRecord {
    parents: Vec<usize>,
    back: BackFn,
}

struct TapeInner {
    values: Vec<Arr>,
    records: Vec<Option<OpRecord>>,
}

/// Records a computation graph for one forward pass.
pub struct Tape {
    inner: RefCell<TapeInner>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Arr>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `v`, if any path
    /// reached it.
    pub fn get(&self, v: Var<'_>) -> Option<&Arr> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(TapeInner {
                values: Vec::new(),
                records: Vec::new(),
            }),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Insert an input node (parameter, data, or constant).
    pub fn leaf(&self, value: Arr) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.values.push(value);
        inner.records.push(None);
        Var {
            tape: self,
            id: inner.values.len() - 1,
        }
    }

    pub(crate) fn push(&self, value: Arr, parents: Vec<usize>, back: BackFn) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.values.push(value);
        inner.records.push(Some(OpRecord { parents, back }));
        Var {
            tape: self,
            id: inner.values.len() - 1,
        }
    }

    /// Clone the value held at `v`.
    pub fn value(&self, v: Var<'_>) -> Arr {
        self.inner.borrow().values[v.id].clone()
    }

    /// Extract a scalar value; panics if `v` is not 0-d or length 1.
    pub fn scalar(&self, v: Var<'_>) -> f64 {
        let inner = self.inner.borrow();
        let val = &inner.values[v.id];
        assert_eq!(val.len(), 1, "scalar() on non-scalar node");
        *val.iter().next().unwrap()
    }

    pub fn shape(&self, v: Var<'_>) -> Vec<usize> {
        self.inner.borrow().values[v.id].shape().to_vec()
    }

    /// Reverse pass from a scalar root. Gradients of interior nodes are
    /// dropped as soon as their consumers are processed; leaf gradients
    /// are kept for the caller.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let inner = self.inner.borrow();
        assert_eq!(
            inner.values[root.id].len(),
            1,
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Arr>> = (0..inner.values.len()).map(|_| None).collect();
        grads[root.id] = Some(ArrayD::ones(inner.values[root.id].raw_dim()));
        for id in (0..=root.id).rev() {
            let Some(rec) = inner.records[id].as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let parents: Vec<&Arr> = rec.parents.iter().map(|&p| &inner.values[p]).collect();
            let ctx = BackCtx {
                parents,
                value: &inner.values[id],
                grad: &grad,
            };
            let parent_grads = (rec.back)(ctx);
            debug_assert_eq!(parent_grads.len(), rec.parents.len());
            for (&pid, pg) in rec.parents.iter().zip(parent_grads) {
                debug_assert_eq!(
                    pg.shape(),
                    inner.values[pid].shape(),
                    "adjoint shape mismatch on node {pid}"
                );
                match grads[pid].as_mut() {
                    Some(acc) => *acc += &pg,
                    None => grads[pid] = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> Arr {
        self.tape.value(self)
    }

    pub fn scalar(self) -> f64 {
        self.tape.scalar(self)
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.shape(self)
    }

    fn same_tape(self, other: Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "add: shape mismatch");
        let out = &a + &b;
        self.tape.push(
            out,
            vec![self.id, other.id],
            Box::new(|ctx| vec![ctx.grad.clone(), ctx.grad.clone()]),
        )
    }

    /// Elementwise difference; shapes must match exactly.
    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "sub: shape mismatch");
        let out = &a - &b;
        self.tape.push(
            out,
            vec![self.id, other.id],
            Box::new(|ctx| vec![ctx.grad.clone(), ctx.grad.mapv(|g| -g)]),
        )
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "mul: shape mismatch");
        let out = &a * &b;
        self.tape.push(
            out,
            vec![self.id, other.id],
            Box::new(|ctx| {
                vec![ctx.grad * ctx.parents[1], ctx.grad * ctx.parents[0]]
            }),
        )
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// Multiply by a compile-time constant.
    pub fn scale(self, c: f64) -> Var<'t> {
        let out = self.value().mapv(|v| v * c);
        self.tape.push(
            out,
            vec![self.id],
            Box::new(move |ctx| vec![ctx.grad.mapv(|g| g * c)]),
        )
    }

    /// Add a constant to every element.
    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let out = self.value().mapv(|v| v + c);
        self.tape
            .push(out, vec![self.id], Box::new(|ctx| vec![ctx.grad.clone()]))
    }

    pub fn sqr(self) -> Var<'t> {
        let out = self.value().mapv(|v| v * v);
        self.tape.push(
            out,
            vec![self.id],
            Box::new(|ctx| {
                let mut g = ctx.parents[0].clone();
                g.zip_mut_with(ctx.grad, |x, &gr| *x = 2.0 * *x * gr);
                vec![g]
            }),
        )
    }

    pub fn abs(self) -> Var<'t> {
        let out = self.value().mapv(f64::abs);
        self.tape.push(
            out,
            vec![self.id],
            Box::new(|ctx| {
                let mut g = ctx.parents[0].clone();
                g.zip_mut_with(ctx.grad, |x, &gr| *x = x.signum() * gr * if *x == 0.0 { 0.0 } else { 1.0 });
                vec![g]
            }),
        )
    }

    pub fn sigmoid(self) -> Var<'t> {
        let out = self.value().mapv(sigmoid);
        self.tape.push(
            out,
            vec![self.id],
            Box::new(|ctx| {
                let mut g = ctx.value.clone();
                g.zip_mut_with(ctx.grad, |y, &gr| *y = *y * (1.0 - *y) * gr);
                vec![g]
            }),
        )
    }

    /// `x * sigmoid(x)`.
    pub fn silu(self) -> Var<'t> {
        let out = self.value().mapv(|v| v * sigmoid(v));
        self.tape.push(
            out,
            vec![self.id],
            Box::new(|ctx| {
                let mut g = ctx.parents[0].clone();
                g.zip_mut_with(ctx.grad, |x, &gr| {
                    let s = sigmoid(*x);
                    *x = (s + *x * s * (1.0 - s)) * gr;
                });
                vec![g]
            }),
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Var<'t> {
        let out = self.value().mapv(gelu);
        self.tape.push(
            out,
            vec![self.id],
            Box::new(|ctx| {
                let mut g = ctx.parents[0].clone();
                g.zip_mut_with(ctx.grad, |x, &gr| *x = gelu_grad(*x) * gr);
                vec![g]
            }),
        )
    }

    pub fn relu(self) -> Var<'t> {
        let out = self.value().mapv(|v| v.max(0.0));
        self.tape.push(
            out,
            vec![self.id],
            Box::new(|ctx| {
                let mut g = ctx.parents[0].clone();
                g.zip_mut_with(ctx.grad, |x, &gr| *x = if *x > 0.0 { gr } else { 0.0 });
                vec![g]
            }),
        )
    }

    /// Clamp to `[lo, hi]`; the gradient passes through inside the range
    /// (inclusive) and is zero outside.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let out = self.value().mapv(|v| v.clamp(lo, hi));
        self.tape.push(
            out,
            vec![self.id],
            Box::new(move |ctx| {
                let mut g = ctx.parents[0].clone();
                g.zip_mut_with(ctx.grad, |x, &gr| {
                    *x = if *x >= lo && *x <= hi { gr } else { 0.0 }
                });
                vec![g]
            }),
        )
    }

    /// Mean over all elements, yielding a 0-d scalar node.
    pub fn mean_all(self) -> Var<'t> {
        let v = self.value();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let out = ArrayD::from_elem(IxDyn(&[]), m);
        self.tape.push(
            out,
            vec![self.id],
            Box::new(move |ctx| {
                let g = *ctx.grad.iter().next().unwrap() / n;
                vec![ArrayD::from_elem(ctx.parents[0].raw_dim(), g)]
            }),
        )
    }

    /// Sum over all elements, yielding a 0-d scalar node.
    pub fn sum_all(self) -> Var<'t> {
        let v = self.value();
        let s = v.iter().sum::<f64>();
        let out = ArrayD::from_elem(IxDyn(&[]), s);
        self.tape.push(
            out,
            vec![self.id],
            Box::new(|ctx| {
                let g = *ctx.grad.iter().next().unwrap();
                vec![ArrayD::from_elem(ctx.parents[0].raw_dim(), g)]
            }),
        )
    }
}

/// Mean squared difference as a scalar node.
pub fn mse<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    a.sub(b).sqr().mean_all()
}

/// Mean absolute difference as a scalar node.
pub fn l1<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    a.sub(b).abs().mean_all()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[cfg(test)]
pub(crate) mod fd {
    //! Finite-difference harness shared by the op tests.

    use super::*;

    /// Check d(scalar out)/d(inputs) of `build` against central differences.
    /// `build` receives leaf vars made from `inputs` and must return a
    /// scalar node.
    pub fn check_grads(
        inputs: &[Arr],
        build: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t> + Copy,
        tol: f64,
    ) {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
        let root = build(&tape, &vars);
        let grads = tape.backward(root);

        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads
                .get(vars[k])
                .map(|g| g.as_standard_layout().to_owned())
                .unwrap_or_else(|| ArrayD::zeros(input.raw_dim()));
            let mut perturbed = inputs.to_vec();
            for lin in 0..input.len() {
                let orig = perturbed[k].as_slice().unwrap()[lin];
                let h = 1e-5 * (1.0 + orig.abs());
                perturbed[k].as_slice_mut().unwrap()[lin] = orig + h;
                let fp = eval(&perturbed, build);
                perturbed[k].as_slice_mut().unwrap()[lin] = orig - h;
                let fm = eval(&perturbed, build);
                perturbed[k].as_slice_mut().unwrap()[lin] = orig;
                let num = (fp - fm) / (2.0 * h);
                let ana = analytic.as_slice().unwrap()[lin];
                let denom = num.abs().max(ana.abs()).max(1e-6);
                assert!(
                    (num - ana).abs() / denom < tol,
                    "input {k} element {lin}: numeric {num} vs analytic {ana}"
                );
            }
        }
    }

    fn eval(inputs: &[Arr], build: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>) -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
        build(&tape, &vars).scalar()
    }

    pub fn rand_arr(shape: &[usize], seed: u64) -> Arr {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::fd::{check_grads, rand_arr};
    use super::*;

    #[test]
    fn add_mul_grads() {
        let a = rand_arr(&[3, 4], 1);
        let b = rand_arr(&[3, 4], 2);
        check_grads(&[a, b], |_t, v| v[0].add(v[1]).mul(v[0]).mean_all(), 1e-6);
    }

    #[test]
    fn activation_grads() {
        let a = rand_arr(&[2, 5], 3);
        check_grads(&[a.clone()], |_t, v| v[0].silu().sum_all(), 1e-6);
        check_grads(&[a.clone()], |_t, v| v[0].gelu().sum_all(), 1e-6);
        check_grads(&[a.clone()], |_t, v| v[0].sigmoid().sqr().mean_all(), 1e-6);
        check_grads(&[a], |_t, v| v[0].sub(v[0].sqr()).abs().mean_all(), 1e-5);
    }

    #[test]
    fn mse_matches_manual_loop() {
        let a = rand_arr(&[4, 4], 10);
        let b = rand_arr(&[4, 4], 11);
        let tape = Tape::new();
        let va = tape.leaf(a.clone());
        let vb = tape.leaf(b.clone());
        let loss = mse(va, vb).scalar();
        let mut manual = 0.0;
        for (x, y) in a.iter().zip(b.iter()) {
            manual += (x - y) * (x - y);
        }
        manual /= a.len() as f64;
        assert!((loss - manual).abs() < 1e-12);
    }

    #[test]
    fn backward_accumulates_shared_parents() {
        // f = mean(x*x + x) touches x twice via separate ops.
        let a = rand_arr(&[6], 7);
        check_grads(&[a], |_t, v| v[0].mul(v[0]).add(v[0]).mean_all(), 1e-6);
    }

    #[test]
    fn clamp_grad_masks_outside() {
        let a = ndarray::arr1(&[-2.0, -0.5, 0.5, 2.0]).into_dyn();
        let tape = Tape::new();
        let v = tape.leaf(a);
        let out = v.clamp(-1.0, 1.0).sum_all();
        let grads = tape.backward(out);
        let g = grads.get(v).unwrap();
        assert_eq!(g.as_slice().unwrap(), &[0.0, 1.0, 1.0, 0.0]);
    }
}
