//! Minimal reverse-mode automatic differentiation on a flat tape.
//!
//! Forward computations are written once, generically over [`Real`], and run
//! either on plain `f64` (no recording, full speed) or on tape variables
//! ([`Var`]) that record local partial derivatives as they go. A single
//! reverse sweep then yields the gradient of any recorded scalar with respect
//! to every leaf variable.
//!
//! Local partials are linearized at forward time, so a node never needs to
//! re-inspect its inputs during the backward pass. Nodes carry up to three
//! parents; the third slot exists for the fused multiply-add that dominates
//! dense-layer inner loops.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parent: [u32; 3],
    partial: [f64; 3],
}

impl Node {
    fn leaf() -> Self {
        Node {
            parent: [NO_PARENT; 3],
            partial: [0.0; 3],
        }
    }
}

/// Recording tape. One tape per differentiated computation; reuse via
/// [`Tape::clear`] to keep the allocation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all nodes but keep the allocation. Any outstanding [`Var`]
    /// from before the clear must not be used afterwards.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
    }

    /// Register a new leaf (independent) variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let index = self.push(Node::leaf());
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// Register a batch of leaves, e.g. a parameter vector.
    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        assert!(index < NO_PARENT as usize, "tape overflow");
        nodes.push(node);
        index as u32
    }

    fn unary(&self, p: u32, d: f64, value: f64) -> Var<'_> {
        let index = self.push(Node {
            parent: [p, NO_PARENT, NO_PARENT],
            partial: [d, 0.0, 0.0],
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    fn binary(&self, p0: u32, d0: f64, p1: u32, d1: f64, value: f64) -> Var<'_> {
        let index = self.push(Node {
            parent: [p0, p1, NO_PARENT],
            partial: [d0, d1, 0.0],
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    fn ternary(&self, p: [u32; 3], d: [f64; 3], value: f64) -> Var<'_> {
        let index = self.push(Node {
            parent: p,
            partial: d,
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// Reverse sweep from `seed`. Returns one adjoint per tape node;
    /// index with [`Var::index`] of the leaves of interest.
    pub fn backward(&self, seed: Var<'_>) -> Adjoints {
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0f64; nodes.len()];
        adjoint[seed.index as usize] = 1.0;
        for i in (0..nodes.len()).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for k in 0..3 {
                let p = node.parent[k];
                if p != NO_PARENT {
                    adjoint[p as usize] += node.partial[k] * a;
                }
            }
        }
        Adjoints { adjoint }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of a reverse sweep.
pub struct Adjoints {
    adjoint: Vec<f64>,
}

impl Adjoints {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adjoint[v.index as usize]
    }
}

/// A scalar recorded on a [`Tape`]. Copyable; 16 bytes plus the tape pointer.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl<'t> Var<'t> {
    pub fn index(self) -> u32 {
        self.index
    }
}

/// The scalar abstraction shared by the plain `f64` path and the recorded
/// [`Var`] path. `lit` creates a constant in the same differentiation
/// context as `self` (constants never receive adjoints).
pub trait Real:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn value(self) -> f64;
    fn lit(self, c: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn atan2(self, x: Self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;
    /// `self * b + c`, recorded as a single node.
    fn mul_add(self, b: Self, c: Self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
    /// Max against a constant; the gradient is zero on the constant branch.
    fn max_c(self, c: f64) -> Self;
    fn clamp_c(self, lo: f64, hi: f64) -> Self;

    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt()
    }
}

impl Real for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn lit(self, c: f64) -> Self {
        c
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn tan(self) -> Self {
        f64::tan(self)
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn mul_add(self, b: Self, c: Self) -> Self {
        // Two roundings, matching the tape path exactly (not hardware FMA).
        self * b + c
    }
    #[inline]
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
    #[inline]
    fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }
    #[inline]
    fn max_c(self, c: f64) -> Self {
        Real::max(self, c)
    }
    #[inline]
    fn clamp_c(self, lo: f64, hi: f64) -> Self {
        if self < lo {
            lo
        } else if self > hi {
            hi
        } else {
            self
        }
    }
}

impl<'t> PartialEq for Var<'t> {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value
    }
}

impl<'t> PartialOrd for Var<'t> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.value.partial_cmp(&other.value)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self::Output {
        self.tape
            .binary(self.index, 1.0, rhs.index, 1.0, self.value + rhs.value)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self::Output {
        self.tape
            .binary(self.index, 1.0, rhs.index, -1.0, self.value - rhs.value)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self::Output {
        self.tape.binary(
            self.index,
            rhs.value,
            rhs.index,
            self.value,
            self.value * rhs.value,
        )
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self::Output {
        let inv = 1.0 / rhs.value;
        self.tape.binary(
            self.index,
            inv,
            rhs.index,
            -self.value * inv * inv,
            self.value * inv,
        )
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self::Output {
        self.tape.unary(self.index, -1.0, -self.value)
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.value
    }

    fn lit(self, c: f64) -> Self {
        // Constants are plain nodes with no parents; they soak up adjoints
        // without propagating them anywhere.
        self.tape.var(c)
    }

    fn sin(self) -> Self {
        self.tape
            .unary(self.index, self.value.cos(), self.value.sin())
    }

    fn cos(self) -> Self {
        self.tape
            .unary(self.index, -self.value.sin(), self.value.cos())
    }

    fn tan(self) -> Self {
        let c = self.value.cos();
        self.tape.unary(self.index, 1.0 / (c * c), self.value.tan())
    }

    fn atan2(self, x: Self) -> Self {
        let (y, xv) = (self.value, x.value);
        let denom = y * y + xv * xv;
        self.tape.binary(
            self.index,
            xv / denom,
            x.index,
            -y / denom,
            y.atan2(xv),
        )
    }

    fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        self.tape.unary(self.index, 0.5 / r, r)
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.tape.unary(self.index, e, e)
    }

    fn ln(self) -> Self {
        self.tape.unary(self.index, 1.0 / self.value, self.value.ln())
    }

    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.tape.unary(self.index, 1.0 - t * t, t)
    }

    fn abs(self) -> Self {
        let d = if self.value >= 0.0 { 1.0 } else { -1.0 };
        self.tape.unary(self.index, d, self.value.abs())
    }

    fn powi(self, n: i32) -> Self {
        let d = n as f64 * self.value.powi(n - 1);
        self.tape.unary(self.index, d, self.value.powi(n))
    }

    fn mul_add(self, b: Self, c: Self) -> Self {
        self.tape.ternary(
            [self.index, b.index, c.index],
            [b.value, self.value, 1.0],
            self.value * b.value + c.value,
        )
    }

    fn max(self, other: Self) -> Self {
        if self.value >= other.value {
            self.tape
                .binary(self.index, 1.0, other.index, 0.0, self.value)
        } else {
            self.tape
                .binary(self.index, 0.0, other.index, 1.0, other.value)
        }
    }

    fn min(self, other: Self) -> Self {
        if self.value <= other.value {
            self.tape
                .binary(self.index, 1.0, other.index, 0.0, self.value)
        } else {
            self.tape
                .binary(self.index, 0.0, other.index, 1.0, other.value)
        }
    }

    fn max_c(self, c: f64) -> Self {
        if self.value >= c {
            self.tape.unary(self.index, 1.0, self.value)
        } else {
            self.tape.unary(self.index, 0.0, c)
        }
    }

    fn clamp_c(self, lo: f64, hi: f64) -> Self {
        if self.value < lo {
            self.tape.unary(self.index, 0.0, lo)
        } else if self.value > hi {
            self.tape.unary(self.index, 0.0, hi)
        } else {
            self.tape.unary(self.index, 1.0, self.value)
        }
    }
}

/// Numerically stable softplus, `ln(1 + e^x)`.
pub fn softplus<R: Real>(x: R) -> R {
    x.max_c(0.0) + ((-x.abs()).exp() + x.lit(1.0)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of<F>(f: F, at: &[f64]) -> (f64, Vec<f64>)
    where
        F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
    {
        let tape = Tape::new();
        let xs = tape.vars(at);
        let y = f(&xs);
        let adj = tape.backward(y);
        (y.value(), xs.iter().map(|&x| adj.wrt(x)).collect())
    }

    fn fd_grad<F>(f: F, at: &[f64], h: f64) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut g = Vec::with_capacity(at.len());
        let mut p = at.to_vec();
        for i in 0..at.len() {
            let orig = p[i];
            p[i] = orig + h;
            let hi = f(&p);
            p[i] = orig - h;
            let lo = f(&p);
            p[i] = orig;
            g.push((hi - lo) / (2.0 * h));
        }
        g
    }

    // A lumpy composite touching most ops.
    fn composite<R: Real>(x: &[R]) -> R {
        let a = x[0].sin() * x[1] + x[2].tanh();
        let b = (x[0] * x[0] + x[1].lit(0.3)).sqrt();
        let c = x[1].atan2(x[2]) + softplus(x[0] - x[2]);
        let d = x[2].mul_add(a, b / (x[1].abs() + x[1].lit(1.0)));
        let e = Real::max(a, c) + Real::min(b, d) + x[0].powi(3);
        e.exp().ln() + d.tan()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let points = [
            vec![0.3, -0.7, 1.1],
            vec![1.4, 0.2, -0.5],
            vec![-0.9, 1.8, 0.4],
        ];
        for at in &points {
            let (_, g) = grad_of(|x| composite(x), at);
            let fd = fd_grad(|x| composite(x), at, 1e-6);
            for (a, b) in g.iter().zip(fd.iter()) {
                let rel = (a - b).abs() / b.abs().max(1.0);
                assert!(rel < 1e-7, "ad {a} vs fd {b}");
            }
        }
    }

    #[test]
    fn f64_path_equals_tape_values() {
        let at = [0.37, -1.2, 2.4];
        let plain = composite(&at);
        let (taped, _) = grad_of(|x| composite(x), &at);
        assert_eq!(plain, taped);
    }

    #[test]
    fn clamp_zeroes_gradient_outside_range() {
        let (v, g) = grad_of(|x| x[0].clamp_c(-1.0, 1.0) * x[0].lit(3.0), &[2.0]);
        assert_eq!(v, 3.0);
        assert_eq!(g[0], 0.0);
        let (v, g) = grad_of(|x| x[0].clamp_c(-1.0, 1.0) * x[0].lit(3.0), &[0.5]);
        assert_eq!(v, 1.5);
        assert_eq!(g[0], 3.0);
    }

    #[test]
    fn max_c_ties_take_the_variable_branch() {
        let (_, g) = grad_of(|x| x[0].max_c(0.0), &[0.0]);
        assert_eq!(g[0], 1.0);
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x*x + x  => dy/dx = 2x + 1
        let (_, g) = grad_of(|x| x[0] * x[0] + x[0], &[3.0]);
        assert_eq!(g[0], 7.0);
    }

    #[test]
    fn tape_reuse_after_clear() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let y = x * x;
        assert_eq!(tape.backward(y).wrt(x), 4.0);
        tape.clear();
        assert!(tape.is_empty());
        let x = tape.var(5.0);
        let y = x * x * x;
        assert_eq!(tape.backward(y).wrt(x), 75.0);
    }
}
