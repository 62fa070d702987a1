//! Tape-based reverse-mode automatic differentiation.
//!
//! Every node holds a dense vector (scalars are length one). Operations are
//! recorded on a [`Tape`] in evaluation order, so the node sequence is already
//! topologically sorted and [`Tape::backward`] only needs a single reverse
//! sweep. A tape is meant to live for one forward/backward pass and then be
//! dropped.
//!
//! ```
//! use hdae::diffgraph::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(vec![3.0, 4.0]);
//! let n = tape.sq_norm(x).unwrap();
//! let grads = tape.backward(n).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[6.0, 8.0]);
//! ```

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MulScalar(Var, Var),
    DivScalar(Var, Var),
    Dot(Var, Var),
    MatVec { m: Var, v: Var, rows: usize, cols: usize },
    Sum(Var),
    SqNorm(Var),
    Norm(Var),
    Tanh(Var),
    Atanh(Var),
    Acosh(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    TanhRatio(Var),
    AtanhRatio(Var),
    Softmax(Var),
    Relu(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Min(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    LinComb { weights: Var, items: Vec<Var> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// A recorded computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Gradients of a scalar root with respect to every node that required one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<Var>,
}

impl Gradients {
    /// `None` when no path connects `v` to the root.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }

    /// Registered parameters in registration order.
    pub fn params(&self) -> &[Var] {
        &self.params
    }
}

fn check_len(op: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape { op, expected, got });
    }
    Ok(())
}

fn tanh_ratio(n: f64) -> (f64, f64) {
    if n.abs() < 1e-4 {
        let n2 = n * n;
        (1.0 - n2 / 3.0 + 2.0 * n2 * n2 / 15.0, -2.0 * n / 3.0 + 8.0 * n2 * n / 15.0)
    } else {
        let t = n.tanh();
        let sech2 = 1.0 - t * t;
        (t / n, (n * sech2 - t) / (n * n))
    }
}

fn atanh_ratio(r: f64) -> (f64, f64) {
    if r.abs() < 1e-4 {
        let r2 = r * r;
        (1.0 + r2 / 3.0 + r2 * r2 / 5.0, 2.0 * r / 3.0 + 4.0 * r2 * r / 5.0)
    } else {
        let a = r.atanh();
        (a / r, (r / (1.0 - r * r) - a) / (r * r))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// First element of a node's value.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    /// Trainable leaf; registered in the parameter registry.
    pub fn param(&mut self, value: Vec<f64>) -> Var {
        let v = self.raw_push(value, Op::Leaf, true);
        self.params.push(v);
        v
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.raw_push(value, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(vec![value])
    }

    fn raw_push(&mut self, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_flag(&self, parents: &[Var]) -> bool {
        parents.iter().any(|p| self.nodes[p.0].requires_grad)
    }

    fn push(&mut self, op_name: &'static str, value: Vec<f64>, op: Op, parents: &[Var]) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(op_name));
        }
        let rg = self.grad_flag(parents);
        Ok(self.raw_push(value, op, rg))
    }

    fn unary(
        &mut self,
        name: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let value = self.nodes[x.0].value.iter().map(|&a| f(a)).collect();
        self.push(name, value, op, &[x])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        check_len(name, va.len(), vb.len())?;
        let value = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
        self.push(name, value, op, &[a, b])
    }

    fn expect_scalar(&self, op: &'static str, s: Var) -> Result<f64> {
        let v = &self.nodes[s.0].value;
        check_len(op, 1, v.len())?;
        Ok(v[0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * k, Op::Scale(a, k))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, k: f64) -> Result<Var> {
        self.unary("offset", a, |x| x + k, Op::Offset(a))
    }

    /// Vector times a scalar node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.expect_scalar("mul_scalar", s)?;
        let value = self.nodes[a.0].value.iter().map(|x| x * k).collect();
        self.push("mul_scalar", value, Op::MulScalar(a, s), &[a, s])
    }

    /// Vector divided by a scalar node.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.expect_scalar("div_scalar", s)?;
        let value = self.nodes[a.0].value.iter().map(|x| x / k).collect();
        self.push("div_scalar", value, Op::DivScalar(a, s), &[a, s])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        check_len("dot", va.len(), vb.len())?;
        let d = va.iter().zip(vb).map(|(x, y)| x * y).sum();
        self.push("dot", vec![d], Op::Dot(a, b), &[a, b])
    }

    /// `m` is a row-major `rows × cols` matrix.
    pub fn matvec(&mut self, m: Var, v: Var, rows: usize, cols: usize) -> Result<Var> {
        let (vm, vv) = (&self.nodes[m.0].value, &self.nodes[v.0].value);
        check_len("matvec", rows * cols, vm.len())?;
        check_len("matvec", cols, vv.len())?;
        let value = vm
            .chunks_exact(cols)
            .map(|row| row.iter().zip(vv).map(|(a, b)| a * b).sum())
            .collect();
        self.push("matvec", value, Op::MatVec { m, v, rows, cols }, &[m, v])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.iter().sum();
        self.push("sum", vec![s], Op::Sum(a), &[a])
    }

    pub fn sq_norm(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.iter().map(|x| x * x).sum();
        self.push("sq_norm", vec![s], Op::SqNorm(a), &[a])
    }

    /// Euclidean norm; the subgradient at the origin is zero.
    pub fn norm(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.nodes[a.0].value.iter().map(|x| x * x).sum();
        self.push("norm", vec![s.sqrt()], Op::Norm(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn atanh(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.nodes[a.0].value.iter().find(|x| x.abs() >= 1.0) {
            return Err(Error::Domain { op: "atanh", value: bad });
        }
        self.unary("atanh", a, f64::atanh, Op::Atanh(a))
    }

    /// Requires every element ≥ 1; clamp first when rounding may dip below.
    pub fn acosh(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.nodes[a.0].value.iter().find(|x| **x < 1.0) {
            return Err(Error::Domain { op: "acosh", value: bad });
        }
        self.unary("acosh", a, f64::acosh, Op::Acosh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.nodes[a.0].value.iter().find(|x| **x <= 0.0) {
            return Err(Error::Domain { op: "ln", value: bad });
        }
        self.unary("ln", a, f64::ln, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.nodes[a.0].value.iter().find(|x| **x <= 0.0) {
            return Err(Error::Domain { op: "sqrt", value: bad });
        }
        self.unary("sqrt", a, f64::sqrt, Op::Sqrt(a))
    }

    /// `tanh(x)/x`, continuous through zero.
    pub fn tanh_ratio(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh_ratio", a, |x| tanh_ratio(x).0, Op::TanhRatio(a))
    }

    /// `atanh(x)/x`, continuous through zero.
    pub fn atanh_ratio(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.nodes[a.0].value.iter().find(|x| x.abs() >= 1.0) {
            return Err(Error::Domain {
                op: "atanh_ratio",
                value: bad,
            });
        }
        self.unary("atanh_ratio", a, |x| atanh_ratio(x).0, Op::AtanhRatio(a))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        if v.is_empty() {
            return Err(Error::Shape {
                op: "softmax",
                expected: 1,
                got: 0,
            });
        }
        let value = softmax(v);
        self.push("softmax", value, Op::Softmax(a), &[a])
    }

    /// `max(0, x)`; the subgradient at zero is zero.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary("clamp", a, |x| x.clamp(lo, hi), Op::Clamp { x: a, lo, hi })
    }

    /// Minimum element; ties route the gradient to the first minimiser.
    pub fn min(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let (_, m) = argmin(v).ok_or(Error::Shape {
            op: "min",
            expected: 1,
            got: 0,
        })?;
        self.push("min", vec![m], Op::Min(a), &[a])
    }

    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        self.slice(a, i, 1)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        if start + len > v.len() {
            return Err(Error::Shape {
                op: "slice",
                expected: start + len,
                got: v.len(),
            });
        }
        let value = v[start..start + len].to_vec();
        self.push("slice", value, Op::Slice { x: a, start }, &[a])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let value: Vec<f64> = parts
            .iter()
            .flat_map(|p| self.nodes[p.0].value.iter().copied())
            .collect();
        self.push("concat", value, Op::Concat(parts.to_vec()), parts)
    }

    /// `Σ_i weights[i] · items[i]`.
    pub fn lincomb(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let w = &self.nodes[weights.0].value;
        check_len("lincomb", items.len(), w.len())?;
        let dim = items.first().map_or(0, |x| self.nodes[x.0].value.len());
        let mut value = vec![0.0; dim];
        for (wi, it) in w.iter().zip(items) {
            let iv = &self.nodes[it.0].value;
            check_len("lincomb", dim, iv.len())?;
            for (o, x) in value.iter_mut().zip(iv) {
                *o += wi * x;
            }
        }
        let mut parents = items.to_vec();
        parents.push(weights);
        self.push(
            "lincomb",
            value,
            Op::LinComb {
                weights,
                items: items.to_vec(),
            },
            &parents,
        )
    }

    /// Smallest distance from any recorded hinge, clamp bound, or min-tie to
    /// its kink. Gradient checks should avoid points where this is tiny.
    pub fn nearest_kink(&self) -> f64 {
        let mut best = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for &a in &self.nodes[x.0].value {
                        best = best.min(a.abs());
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    for &a in &self.nodes[x.0].value {
                        best = best.min((a - lo).abs()).min((a - hi).abs());
                    }
                }
                Op::Min(x) => {
                    let v = &self.nodes[x.0].value;
                    let m = node.value[0];
                    let gap = v
                        .iter()
                        .filter(|&&a| a != m)
                        .map(|a| a - m)
                        .fold(f64::INFINITY, f64::min);
                    let ties = v.iter().filter(|&&a| a == m).count();
                    best = best.min(if ties > 1 { 0.0 } else { gap });
                }
                _ => {}
            }
        }
        best
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.len()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| -> &[f64] { &self.nodes[v.0].value };
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(o, gi)| *o -= gi));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| zip3(s, g, vb, |gi, y| gi * y));
                acc(*b, &mut |s| zip3(s, g, va, |gi, x| gi * x));
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| zip3(s, g, vb, |gi, y| gi / y));
                acc(*b, &mut |s| {
                    for ((o, gi), (x, y)) in s.iter_mut().zip(g).zip(va.iter().zip(vb)) {
                        *o -= gi * x / (y * y);
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(o, gi)| *o += gi * k)),
            Op::Offset(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::MulScalar(a, sc) => {
                let (va, k) = (val(*a), val(*sc)[0]);
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(o, gi)| *o += gi * k));
                let d: f64 = g.iter().zip(va).map(|(gi, x)| gi * x).sum();
                acc(*sc, &mut |s| s[0] += d);
            }
            Op::DivScalar(a, sc) => {
                let (va, k) = (val(*a), val(*sc)[0]);
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(o, gi)| *o += gi / k));
                let d: f64 = g.iter().zip(va).map(|(gi, x)| gi * x).sum();
                acc(*sc, &mut |s| s[0] -= d / (k * k));
            }
            Op::Dot(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let g0 = g[0];
                acc(*a, &mut |s| s.iter_mut().zip(vb).for_each(|(o, y)| *o += g0 * y));
                acc(*b, &mut |s| s.iter_mut().zip(va).for_each(|(o, x)| *o += g0 * x));
            }
            Op::MatVec { m, v, rows, cols } => {
                let (vm, vv) = (val(*m), val(*v));
                acc(*m, &mut |s| {
                    for r in 0..*rows {
                        for c in 0..*cols {
                            s[r * cols + c] += g[r] * vv[c];
                        }
                    }
                });
                acc(*v, &mut |s| {
                    for r in 0..*rows {
                        for c in 0..*cols {
                            s[c] += g[r] * vm[r * cols + c];
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|o| *o += g[0])),
            Op::SqNorm(a) => {
                let va = val(*a);
                acc(*a, &mut |s| s.iter_mut().zip(va).for_each(|(o, x)| *o += 2.0 * g[0] * x));
            }
            Op::Norm(a) => {
                let va = val(*a);
                let n = node.value[0];
                if n > 0.0 {
                    acc(*a, &mut |s| s.iter_mut().zip(va).for_each(|(o, x)| *o += g[0] * x / n));
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc(*a, &mut |s| zip3(s, g, y, |gi, t| gi * (1.0 - t * t)));
            }
            Op::Atanh(a) => {
                let va = val(*a);
                acc(*a, &mut |s| zip3(s, g, va, |gi, x| gi / (1.0 - x * x)));
            }
            Op::Acosh(a) => {
                let va = val(*a);
                acc(*a, &mut |s| {
                    zip3(s, g, va, |gi, x| {
                        let d = (x * x - 1.0).sqrt();
                        if d > 0.0 {
                            gi / d
                        } else {
                            0.0
                        }
                    })
                });
            }
            Op::Exp(a) => {
                let y = &node.value;
                acc(*a, &mut |s| zip3(s, g, y, |gi, e| gi * e));
            }
            Op::Ln(a) => {
                let va = val(*a);
                acc(*a, &mut |s| zip3(s, g, va, |gi, x| gi / x));
            }
            Op::Sqrt(a) => {
                let y = &node.value;
                acc(*a, &mut |s| zip3(s, g, y, |gi, r| gi * 0.5 / r));
            }
            Op::TanhRatio(a) => {
                let va = val(*a);
                acc(*a, &mut |s| zip3(s, g, va, |gi, x| gi * tanh_ratio(x).1));
            }
            Op::AtanhRatio(a) => {
                let va = val(*a);
                acc(*a, &mut |s| zip3(s, g, va, |gi, x| gi * atanh_ratio(x).1));
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let inner: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                acc(*a, &mut |s| zip3(s, g, y, |gi, yi| yi * (gi - inner)));
            }
            Op::Relu(a) => {
                let va = val(*a);
                acc(*a, &mut |s| zip3(s, g, va, |gi, x| if x > 0.0 { gi } else { 0.0 }));
            }
            Op::Clamp { x, lo, hi } => {
                let va = val(*x);
                acc(*x, &mut |s| {
                    zip3(s, g, va, |gi, a| if a > *lo && a < *hi { gi } else { 0.0 })
                });
            }
            Op::Min(a) => {
                if let Some((i, _)) = argmin(val(*a)) {
                    acc(*a, &mut |s| s[i] += g[0]);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = val(*p).len();
                    acc(*p, &mut |s| add_into(s, &g[off..off + len]));
                    off += len;
                }
            }
            Op::Slice { x, start } => {
                let start = *start;
                acc(*x, &mut |s| add_into(&mut s[start..start + g.len()], g));
            }
            Op::LinComb { weights, items } => {
                let w = val(*weights);
                for (wi, it) in w.iter().zip(items) {
                    acc(*it, &mut |s| s.iter_mut().zip(g).for_each(|(o, gi)| *o += wi * gi));
                }
                acc(*weights, &mut |s| {
                    for (o, it) in s.iter_mut().zip(items) {
                        *o += g.iter().zip(val(*it)).map(|(gi, x)| gi * x).sum::<f64>();
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(o, x)| *o += x);
}

fn zip3(dst: &mut [f64], g: &[f64], v: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((o, &gi), &x) in dst.iter_mut().zip(g).zip(v) {
        *o += f(gi, x);
    }
}

fn argmin(v: &[f64]) -> Option<(usize, f64)> {
    v.iter()
        .copied()
        .enumerate()
        .fold(None, |best, (i, x)| match best {
            Some((_, m)) if m <= x => best,
            _ => Some((i, x)),
        })
}

/// Numerically stable softmax of a slice.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Compares reverse-mode gradients of `f` at `x` against central differences
/// with step `h`. Returns the largest per-coordinate relative error
/// `|analytic - numeric| / max(1e-8, |numeric|)`.
pub fn gradient_check<F>(f: F, x: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {h}")));
    }
    let mut tape = Tape::new();
    let p = tape.param(x.to_vec());
    let root = f(&mut tape, p)?;
    let analytic = tape.backward(root)?.get_or_zeros(p, x.len());

    let eval = |point: Vec<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let p = t.param(point);
        let r = f(&mut t, p)?;
        let v = t.scalar(r);
        if !v.is_finite() {
            return Err(Error::NonFinite("gradient_check"));
        }
        Ok(v)
    };

    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        let mut minus = x.to_vec();
        plus[i] += h;
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
