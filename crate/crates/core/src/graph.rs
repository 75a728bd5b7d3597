//! Define-by-run expression graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` is a single reverse sweep.

use std::ops::Index;
use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Real, Tensor};

/// Default floor for probabilities fed to a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

static FLOOR_WARNED: AtomicBool = AtomicBool::new(false);

fn warn_floor_once(p: f64) {
    if !FLOOR_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("probability {p:e} clamped to the log floor; further clamps are silent");
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Primitive operations understood by [`Graph::apply`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// `[W: r×c, x: c] -> W x`
    MatVec,
    /// `[W: r×c, x: r] -> Wᵀ x`
    MatTVec,
    /// Concatenation of one or more vectors.
    Concat,
    /// `n` vectors of length `d` stacked into an `n×d` matrix.
    Stack,
    Add,
    Sub,
    Mul,
    /// `|a - b|` elementwise.
    AbsDiff,
    /// `[x, s: scalar] -> s·x`
    ScaleBy,
    /// `scale·x + shift` with constant coefficients.
    Affine { scale: f64, shift: f64 },
    Sigmoid,
    Tanh,
    Softmax,
    /// `[a: n, b: n] -> a·b`
    Dot,
    /// Sum of equally shaped tensors.
    Sum,
    /// `[p: K] -> -ln max(p[index], floor)`
    NegLogAt { index: usize, floor: f64 },
    /// `[p: scalar] -> -(y ln p + (1-y) ln(1-p))`, `p` clamped to `[floor, 1-floor]`.
    Bce { target: f64, floor: f64 },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatVec => "matvec",
            Primitive::MatTVec => "matvec_t",
            Primitive::Concat => "concat",
            Primitive::Stack => "stack",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::AbsDiff => "abs_diff",
            Primitive::ScaleBy => "scale_by",
            Primitive::Affine { .. } => "affine",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Softmax => "softmax",
            Primitive::Dot => "dot",
            Primitive::Sum => "sum",
            Primitive::NegLogAt { .. } => "neg_log_at",
            Primitive::Bce { .. } => "bce",
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    prim: Option<Primitive>,
    parents: Vec<Var>,
    requires_grad: bool,
}

/// Expression graph over element type `T`.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

/// Graph leaves bound to every tensor of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.index()]
    }
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in store order, converted to 64-bit; zeros where no gradient flowed.
    pub fn grads<T: Real>(&self, g: &Graph<T>) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .map(|&v| match g.grad(v) {
                Some(gr) => gr.iter().map(|x| x.to_f64_lossy()).collect(),
                None => vec![0.0; g.value(v).len()],
            })
            .collect()
    }

    /// Stores gradients on the tensors of `store`.
    pub fn write_grads<T: Real>(&self, g: &Graph<T>, store: &mut ParamStore) -> Result<()> {
        for (id, grad) in store.ids().collect::<Vec<_>>().into_iter().zip(self.grads(g)) {
            store.get_mut(id).set_grad(grad)?;
        }
        Ok(())
    }
}

fn shape_str(shapes: &[&[usize]]) -> String {
    shapes
        .iter()
        .map(|s| format!("{s:?}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, shape: Vec<usize>, data: &[f64], requires_grad: bool) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != data.len() || n == 0 {
            return Err(Error::shape(
                "leaf",
                format!("shape {shape:?} with {} values", data.len()),
            ));
        }
        Ok(self.push(Node {
            value: data.iter().map(|&x| T::from_f64_lossy(x)).collect(),
            shape,
            prim: None,
            parents: Vec::new(),
            requires_grad,
        }))
    }

    pub fn tensor(&mut self, t: &Tensor) -> Var {
        self.leaf(t.shape().to_vec(), t.data(), t.requires_grad)
            .expect("Tensor shapes are validated on construction")
    }

    /// Constant vector leaf.
    pub fn constant(&mut self, data: &[f64]) -> Result<Var> {
        self.leaf(vec![data.len()], data, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(vec![1], &[v], false).expect("scalar leaf")
    }

    /// Leaf holding a copy of `v`'s value; gradient does not flow back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let node = &self.nodes[v.0];
        let (value, shape) = (node.value.clone(), node.shape.clone());
        self.push(Node {
            value,
            shape,
            prim: None,
            parents: Vec::new(),
            requires_grad: false,
        })
    }

    /// Binds every tensor of `store` as a leaf.
    pub fn bind(&mut self, store: &ParamStore, trainable: bool) -> Bound {
        let vars = store
            .iter()
            .map(|(_, t)| {
                self.leaf(t.shape().to_vec(), t.data(), trainable)
                    .expect("stored tensors are valid")
            })
            .collect();
        Bound { vars }
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn value_f64(&self, v: Var) -> Vec<f64> {
        self.value(v).iter().map(|x| x.to_f64_lossy()).collect()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v)[0].to_f64_lossy()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn check_vector(&self, op: &'static str, v: Var) -> Result<usize> {
        match self.shape(v) {
            [n] => Ok(*n),
            s => Err(Error::shape(op, format!("expected a vector, got {s:?}"))),
        }
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                shape_str(&[self.shape(a), self.shape(b)]),
            ));
        }
        Ok(())
    }

    fn arity(op: Primitive, inputs: &[Var], n: usize) -> Result<()> {
        if inputs.len() != n {
            return Err(Error::shape(
                op.name(),
                format!("expected {n} inputs, got {}", inputs.len()),
            ));
        }
        Ok(())
    }

    /// Applies a primitive, recording it in the graph.
    pub fn apply(&mut self, op: Primitive, inputs: &[Var]) -> Result<Var> {
        let name = op.name();
        let (value, shape): (Vec<T>, Vec<usize>) = match op {
            Primitive::MatVec | Primitive::MatTVec => {
                Self::arity(op, inputs, 2)?;
                let (w, x) = (inputs[0], inputs[1]);
                let (r, c) = match self.shape(w) {
                    [r, c] => (*r, *c),
                    _ => {
                        return Err(Error::shape(
                            name,
                            format!("matrix operand has shape {:?}", self.shape(w)),
                        ))
                    }
                };
                let xn = self.check_vector(name, x)?;
                let wv = self.value(w);
                let xv = self.value(x);
                if op == Primitive::MatVec {
                    if xn != c {
                        return Err(Error::shape(name, shape_str(&[&[r, c], &[xn]])));
                    }
                    let out = (0..r)
                        .map(|i| {
                            let row = &wv[i * c..(i + 1) * c];
                            row.iter().zip(xv).map(|(&a, &b)| a * b).sum()
                        })
                        .collect();
                    (out, vec![r])
                } else {
                    if xn != r {
                        return Err(Error::shape(name, shape_str(&[&[r, c], &[xn]])));
                    }
                    let mut out = vec![T::zero(); c];
                    for i in 0..r {
                        let xi = xv[i];
                        for (o, &wij) in out.iter_mut().zip(&wv[i * c..(i + 1) * c]) {
                            *o += wij * xi;
                        }
                    }
                    (out, vec![c])
                }
            }
            Primitive::Concat => {
                if inputs.is_empty() {
                    return Err(Error::shape(name, "no inputs"));
                }
                let mut out = Vec::new();
                for &v in inputs {
                    self.check_vector(name, v)?;
                    out.extend_from_slice(self.value(v));
                }
                let n = out.len();
                (out, vec![n])
            }
            Primitive::Stack => {
                if inputs.is_empty() {
                    return Err(Error::shape(name, "no inputs"));
                }
                let d = self.check_vector(name, inputs[0])?;
                let mut out = Vec::with_capacity(d * inputs.len());
                for &v in inputs {
                    let n = self.check_vector(name, v)?;
                    if n != d {
                        return Err(Error::shape(name, format!("row lengths {d} and {n}")));
                    }
                    out.extend_from_slice(self.value(v));
                }
                (out, vec![inputs.len(), d])
            }
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::AbsDiff => {
                Self::arity(op, inputs, 2)?;
                let (a, b) = (inputs[0], inputs[1]);
                self.check_same(name, a, b)?;
                let (av, bv) = (self.value(a), self.value(b));
                let out = av
                    .iter()
                    .zip(bv)
                    .map(|(&x, &y)| match op {
                        Primitive::Add => x + y,
                        Primitive::Sub => x - y,
                        Primitive::Mul => x * y,
                        _ => (x - y).abs(),
                    })
                    .collect();
                (out, self.shape(a).to_vec())
            }
            Primitive::ScaleBy => {
                Self::arity(op, inputs, 2)?;
                let (x, s) = (inputs[0], inputs[1]);
                if self.shape(s) != [1] {
                    return Err(Error::shape(
                        name,
                        format!("scale must be a scalar, got {:?}", self.shape(s)),
                    ));
                }
                let sv = self.value(s)[0];
                let out = self.value(x).iter().map(|&v| v * sv).collect();
                (out, self.shape(x).to_vec())
            }
            Primitive::Affine { scale, shift } => {
                Self::arity(op, inputs, 1)?;
                let (a, b) = (T::from_f64_lossy(scale), T::from_f64_lossy(shift));
                let out = self.value(inputs[0]).iter().map(|&v| a * v + b).collect();
                (out, self.shape(inputs[0]).to_vec())
            }
            Primitive::Sigmoid | Primitive::Tanh => {
                Self::arity(op, inputs, 1)?;
                let f = if op == Primitive::Sigmoid {
                    sigmoid::<T>
                } else {
                    T::tanh
                };
                let out = self.value(inputs[0]).iter().map(|&v| f(v)).collect();
                (out, self.shape(inputs[0]).to_vec())
            }
            Primitive::Softmax => {
                Self::arity(op, inputs, 1)?;
                let n = self.check_vector(name, inputs[0])?;
                let xv = self.value(inputs[0]);
                let max = xv.iter().copied().fold(T::neg_infinity(), T::max);
                let exps: Vec<T> = xv.iter().map(|&v| (v - max).exp()).collect();
                let total: T = exps.iter().copied().sum();
                (exps.into_iter().map(|e| e / total).collect(), vec![n])
            }
            Primitive::Dot => {
                Self::arity(op, inputs, 2)?;
                self.check_vector(name, inputs[0])?;
                self.check_same(name, inputs[0], inputs[1])?;
                let out = self
                    .value(inputs[0])
                    .iter()
                    .zip(self.value(inputs[1]))
                    .map(|(&a, &b)| a * b)
                    .sum();
                (vec![out], vec![1])
            }
            Primitive::Sum => {
                if inputs.is_empty() {
                    return Err(Error::shape(name, "no inputs"));
                }
                let mut out = self.value(inputs[0]).to_vec();
                for &v in &inputs[1..] {
                    self.check_same(name, inputs[0], v)?;
                    for (o, &x) in out.iter_mut().zip(self.value(v)) {
                        *o += x;
                    }
                }
                (out, self.shape(inputs[0]).to_vec())
            }
            Primitive::NegLogAt { index, floor } => {
                Self::arity(op, inputs, 1)?;
                let n = self.check_vector(name, inputs[0])?;
                if index >= n {
                    return Err(Error::shape(name, format!("index {index} out of {n} classes")));
                }
                let p = self.value(inputs[0])[index];
                let fl = T::from_f64_lossy(floor);
                if p < fl {
                    warn_floor_once(p.to_f64_lossy());
                }
                (vec![-(p.max(fl)).ln()], vec![1])
            }
            Primitive::Bce { target, floor } => {
                Self::arity(op, inputs, 1)?;
                if self.shape(inputs[0]) != [1] {
                    return Err(Error::shape(
                        name,
                        format!("expected a scalar, got {:?}", self.shape(inputs[0])),
                    ));
                }
                let p = self.value(inputs[0])[0];
                let (lo, hi) = (T::from_f64_lossy(floor), T::from_f64_lossy(1.0 - floor));
                if p < lo || p > hi {
                    warn_floor_once(p.to_f64_lossy());
                }
                let pc = p.max(lo).min(hi);
                let y = T::from_f64_lossy(target);
                (vec![-(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln())], vec![1])
            }
        };
        let requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        Ok(self.push(Node {
            value,
            shape,
            prim: Some(op),
            parents: inputs.to_vec(),
            requires_grad,
        }))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        self.apply(Primitive::MatVec, &[w, x])
    }

    pub fn matvec_t(&mut self, w: Var, x: Var) -> Result<Var> {
        self.apply(Primitive::MatTVec, &[w, x])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::Concat, parts)
    }

    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        self.apply(Primitive::Stack, rows)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::AbsDiff, &[a, b])
    }

    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        self.apply(Primitive::ScaleBy, &[x, s])
    }

    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.apply(Primitive::Affine { scale, shift }, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.affine(x, c, 0.0)
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -1.0, 1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Softmax, &[x])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Dot, &[a, b])
    }

    pub fn sum(&mut self, xs: &[Var]) -> Result<Var> {
        self.apply(Primitive::Sum, xs)
    }

    /// Cross-entropy of a probability vector against a class index.
    pub fn cross_entropy(&mut self, probs: Var, target: usize) -> Result<Var> {
        self.apply(
            Primitive::NegLogAt {
                index: target,
                floor: PROB_FLOOR,
            },
            &[probs],
        )
    }

    /// Binary cross-entropy of a scalar probability against a 0/1 target.
    pub fn bce(&mut self, p: Var, target: bool) -> Result<Var> {
        self.apply(
            Primitive::Bce {
                target: if target { 1.0 } else { 0.0 },
                floor: PROB_FLOOR,
            },
            &[p],
        )
    }

    /// Reverse sweep from a scalar root. Previous gradients are discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.shape(root) != [1] {
            return Err(Error::NonScalarRoot(self.shape(root).to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[root.0] = Some(vec![T::one()]);
        for idx in (0..=root.0).rev() {
            let Some(gy) = self.grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Some(op) = node.prim {
                if node.requires_grad {
                    let contributions = self.local_grads(op, idx, &gy);
                    for (parent, g) in contributions {
                        if !self.nodes[parent.0].requires_grad {
                            continue;
                        }
                        match &mut self.grads[parent.0] {
                            Some(acc) => {
                                for (a, x) in acc.iter_mut().zip(g) {
                                    *a += x;
                                }
                            }
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
            }
            self.grads[idx] = Some(gy);
        }
        for (node, g) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(())
    }

    fn local_grads(&self, op: Primitive, idx: usize, gy: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[idx];
        let ps = &node.parents;
        let val = |v: Var| self.value(v);
        match op {
            Primitive::MatVec => {
                let (w, x) = (ps[0], ps[1]);
                let (r, c) = (self.shape(w)[0], self.shape(w)[1]);
                let (wv, xv) = (val(w), val(x));
                let mut gw = vec![T::zero(); r * c];
                let mut gx = vec![T::zero(); c];
                for i in 0..r {
                    let gi = gy[i];
                    let row = &wv[i * c..(i + 1) * c];
                    let grow = &mut gw[i * c..(i + 1) * c];
                    for j in 0..c {
                        grow[j] = gi * xv[j];
                        gx[j] += row[j] * gi;
                    }
                }
                vec![(w, gw), (x, gx)]
            }
            Primitive::MatTVec => {
                let (w, x) = (ps[0], ps[1]);
                let (r, c) = (self.shape(w)[0], self.shape(w)[1]);
                let (wv, xv) = (val(w), val(x));
                let mut gw = vec![T::zero(); r * c];
                let mut gx = vec![T::zero(); r];
                for i in 0..r {
                    let row = &wv[i * c..(i + 1) * c];
                    let grow = &mut gw[i * c..(i + 1) * c];
                    let mut acc = T::zero();
                    for j in 0..c {
                        grow[j] = xv[i] * gy[j];
                        acc += row[j] * gy[j];
                    }
                    gx[i] = acc;
                }
                vec![(w, gw), (x, gx)]
            }
            Primitive::Concat | Primitive::Stack => {
                let mut offset = 0;
                ps.iter()
                    .map(|&p| {
                        let n = val(p).len();
                        let g = gy[offset..offset + n].to_vec();
                        offset += n;
                        (p, g)
                    })
                    .collect()
            }
            Primitive::Add => vec![(ps[0], gy.to_vec()), (ps[1], gy.to_vec())],
            Primitive::Sub => vec![
                (ps[0], gy.to_vec()),
                (ps[1], gy.iter().map(|&g| -g).collect()),
            ],
            Primitive::Mul => {
                let (a, b) = (val(ps[0]), val(ps[1]));
                vec![
                    (ps[0], gy.iter().zip(b).map(|(&g, &y)| g * y).collect()),
                    (ps[1], gy.iter().zip(a).map(|(&g, &x)| g * x).collect()),
                ]
            }
            Primitive::AbsDiff => {
                let (a, b) = (val(ps[0]), val(ps[1]));
                let ga: Vec<T> = gy
                    .iter()
                    .zip(a.iter().zip(b))
                    .map(|(&g, (&x, &y))| {
                        let d = x - y;
                        if d > T::zero() {
                            g
                        } else if d < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let gb = ga.iter().map(|&g| -g).collect();
                vec![(ps[0], ga), (ps[1], gb)]
            }
            Primitive::ScaleBy => {
                let (x, s) = (ps[0], ps[1]);
                let sv = val(s)[0];
                let gx = gy.iter().map(|&g| g * sv).collect();
                let gs = gy.iter().zip(val(x)).map(|(&g, &v)| g * v).sum();
                vec![(x, gx), (s, vec![gs])]
            }
            Primitive::Affine { scale, .. } => {
                let a = T::from_f64_lossy(scale);
                vec![(ps[0], gy.iter().map(|&g| g * a).collect())]
            }
            Primitive::Sigmoid => {
                let g = gy
                    .iter()
                    .zip(&node.value)
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect();
                vec![(ps[0], g)]
            }
            Primitive::Tanh => {
                let g = gy
                    .iter()
                    .zip(&node.value)
                    .map(|(&g, &y)| g * (T::one() - y * y))
                    .collect();
                vec![(ps[0], g)]
            }
            Primitive::Softmax => {
                let y = &node.value;
                let inner: T = gy.iter().zip(y).map(|(&g, &p)| g * p).sum();
                let g = gy.iter().zip(y).map(|(&g, &p)| p * (g - inner)).collect();
                vec![(ps[0], g)]
            }
            Primitive::Dot => {
                let (a, b) = (val(ps[0]), val(ps[1]));
                let g0 = gy[0];
                vec![
                    (ps[0], b.iter().map(|&y| g0 * y).collect()),
                    (ps[1], a.iter().map(|&x| g0 * x).collect()),
                ]
            }
            Primitive::Sum => ps.iter().map(|&p| (p, gy.to_vec())).collect(),
            Primitive::NegLogAt { index, floor } => {
                let pv = val(ps[0]);
                let mut g = vec![T::zero(); pv.len()];
                let p = pv[index];
                if p >= T::from_f64_lossy(floor) {
                    g[index] = -gy[0] / p;
                }
                vec![(ps[0], g)]
            }
            Primitive::Bce { target, floor } => {
                let p = val(ps[0])[0];
                let (lo, hi) = (T::from_f64_lossy(floor), T::from_f64_lossy(1.0 - floor));
                let g = if p < lo || p > hi {
                    T::zero()
                } else {
                    let y = T::from_f64_lossy(target);
                    -(y / p - (T::one() - y) / (T::one() - p)) * gy[0]
                };
                vec![(ps[0], vec![g])]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn forward_examples() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(&[0.0]).unwrap();
        let s = g.sigmoid(z).unwrap();
        assert_eq!(g.value(s), &[0.5]);
        let zz = g.constant(&[0.0, 0.0]).unwrap();
        let sm = g.softmax(zz).unwrap();
        assert_eq!(g.value(sm), &[0.5, 0.5]);
        let a = g.constant(&[1.0, 2.0]).unwrap();
        let b = g.constant(&[3.0]).unwrap();
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.value(c), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut g = Graph::<f64>::new();
        let w = g.leaf(vec![2, 3], &[0.0; 6], false).unwrap();
        let x = g.constant(&[1.0, 2.0]).unwrap();
        let err = g.matvec(w, x).unwrap_err().to_string();
        assert!(err.contains("matvec") && err.contains("[2, 3]") && err.contains("[2]"), "{err}");
        let y = g.constant(&[1.0]).unwrap();
        assert!(g.add(x, y).unwrap_err().to_string().contains("add"));
        assert!(g.scale_by(x, x).is_err());
    }

    #[test]
    fn losses() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(&[1.0, 0.0]).unwrap();
        let l = g.cross_entropy(p, 0).unwrap();
        assert_eq!(g.scalar_value(l), 0.0);
        let p = g.constant(&[0.5, 0.5]).unwrap();
        let l = g.cross_entropy(p, 1).unwrap();
        assert_abs_diff_eq!(g.scalar_value(l), std::f64::consts::LN_2, epsilon = 1e-15);
        // -ln 0.75 from the scalar definition
        let oracle = -(0.75f64).ln();
        let p = g.constant(&[0.25, 0.75]).unwrap();
        let l = g.cross_entropy(p, 1).unwrap();
        assert_abs_diff_eq!(g.scalar_value(l), oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(g.scalar_value(l), 0.287682, epsilon = 1e-6);

        let half = g.scalar(0.5);
        let l1 = g.bce(half, true).unwrap();
        let l0 = g.bce(half, false).unwrap();
        assert_abs_diff_eq!(g.scalar_value(l1), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(g.scalar_value(l0), std::f64::consts::LN_2, epsilon = 1e-15);
        let p9 = g.scalar(0.9);
        let l = g.bce(p9, true).unwrap();
        assert_abs_diff_eq!(g.scalar_value(l), -(0.9f64).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(g.scalar_value(l), 0.105360, epsilon = 1e-6);
    }

    #[test]
    fn zero_probability_is_floored() {
        let mut g = Graph::<f64>::new();
        let p = g.leaf(vec![2], &[1.0, 0.0], true).unwrap();
        let l = g.cross_entropy(p, 1).unwrap();
        assert_abs_diff_eq!(g.scalar_value(l), -(PROB_FLOOR.ln()), epsilon = 1e-9);
        g.backward(l).unwrap();
        assert!(g.grad(p).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn activation_derivatives_at_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![1], &[0.0], true).unwrap();
        let s = g.sigmoid(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25]);
        let t = g.tanh(x).unwrap();
        g.backward(t).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![2], &[0.0, 1.0], true).unwrap();
        let y = g.tanh(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![1], &[0.3], true).unwrap();
        let d = g.detach(x);
        let y = g.mul(x, d).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.3]);
        assert!(g.grad(d).is_none());
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // y = sum(x ⊙ x) => dy/dx = 2x
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![3], &[1.0, -2.0, 0.5], true).unwrap();
        let y = g.dot(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 1.0]);
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(xs in prop::collection::vec(-500.0f64..500.0, 1..32)) {
            let mut g = Graph::<f64>::new();
            let x = g.constant(&xs).unwrap();
            let s = g.softmax(x).unwrap();
            let total: f64 = g.value(s).iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            prop_assert!(g.value(s).iter().all(|&p| p >= 0.0 && p.is_finite()));
        }

        #[test]
        fn backward_is_bitwise_repeatable(xs in prop::collection::vec(-3.0f64..3.0, 2..16)) {
            let mut g = Graph::<f64>::new();
            let x = g.leaf(vec![xs.len()], &xs, true).unwrap();
            let t = g.tanh(x).unwrap();
            let s = g.softmax(t).unwrap();
            let l = g.cross_entropy(s, 0).unwrap();
            g.backward(l).unwrap();
            let first = g.grad(x).unwrap().to_vec();
            g.backward(l).unwrap();
            prop_assert_eq!(first, g.grad(x).unwrap().to_vec());
        }
    }
}
