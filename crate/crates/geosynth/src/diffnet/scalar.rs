//! Scalar reverse-mode tape. The spline transforms are written generically
//! over [`Real`], so the same code evaluates on plain `f64` (sampling,
//! likelihood) and on tape variables (training gradients).

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy)]
struct Node {
    parents: [usize; 2],
    weights: [f64; 2],
}

/// Wengert list with local partials recorded at forward time.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, parents: [usize; 2], weights: [f64; 2]) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        nodes.push(Node { parents, weights });
        idx
    }

    pub fn var(&self, val: f64) -> Var<'_> {
        let idx = self.push([0, 0], [0.0, 0.0]);
        Var {
            tape: self,
            idx,
            val,
        }
    }

    /// Adjoints of every node with respect to `output`.
    pub fn gradients(&self, output: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        adjoint[output.idx] = 1.0;
        for i in (0..nodes.len()).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            adjoint[node.parents[0]] += node.weights[0] * a;
            adjoint[node.parents[1]] += node.weights[1] * a;
        }
        adjoint
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    pub idx: usize,
    pub val: f64,
}

impl<'t> Var<'t> {
    fn unary(self, val: f64, dval: f64) -> Var<'t> {
        let idx = self.tape.push([self.idx, self.idx], [dval, 0.0]);
        Var {
            tape: self.tape,
            idx,
            val,
        }
    }

    fn binary(self, other: Var<'t>, val: f64, da: f64, db: f64) -> Var<'t> {
        let idx = self.tape.push([self.idx, other.idx], [da, db]);
        Var {
            tape: self.tape,
            idx,
            val,
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(
            rhs,
            self.val / rhs.val,
            1.0 / rhs.val,
            -self.val / (rhs.val * rhs.val),
        )
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(-self.val, -1.0)
    }
}

/// Arithmetic shared by `f64` and tape variables.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn value(self) -> f64;
    /// Lift a constant into the same context (same tape for `Var`).
    fn lift(self, c: f64) -> Self;
    fn ln(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> f64 {
        c
    }
    fn ln(self) -> f64 {
        f64::ln(self)
    }
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    fn sqrt(self) -> f64 {
        f64::sqrt(self)
    }
    fn abs(self) -> f64 {
        f64::abs(self)
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.val
    }
    fn lift(self, c: f64) -> Var<'t> {
        self.tape.var(c)
    }
    fn ln(self) -> Var<'t> {
        self.unary(self.val.ln(), 1.0 / self.val)
    }
    fn exp(self) -> Var<'t> {
        let e = self.val.exp();
        self.unary(e, e)
    }
    fn sqrt(self) -> Var<'t> {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }
    fn abs(self) -> Var<'t> {
        if self.val >= 0.0 {
            self.unary(self.val, 1.0)
        } else {
            self.unary(-self.val, -1.0)
        }
    }
}

/// Numerically stable softplus on any `Real`.
pub fn softplus<R: Real>(x: R) -> R {
    // log(1 + e^x) = max(x, 0) + log(1 + e^{-|x|})
    let zero = x.lift(0.0);
    let one = x.lift(1.0);
    let pos = if x.value() > 0.0 { x } else { zero };
    pos + (one + (-x.abs()).exp()).ln()
}
