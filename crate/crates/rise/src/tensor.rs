//! Dense f64 arrays with a define-by-run reverse-mode differentiation tape.
//!
//! The tape is rebuilt for every forward pass, which keeps recurrences of
//! varying length simple: a node's inputs always precede it, so one reverse
//! sweep visits each node exactly once.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RiseError};

/// Plain dense array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(RiseError::Contract(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], values: vec![v] }
    }

    /// Column vector of shape [n, 1].
    pub fn column(values: Vec<f64>) -> Self {
        let n = values.len();
        Tensor { shape: vec![n, 1], values }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, values: vec![0.0; numel] }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<String> },
    Matmul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Max0(TensorId),
    Exp(TensorId),
    Sigmoid(TensorId),
    Tanh(TensorId),
    Sin(TensorId),
    Cos(TensorId),
    Concat(Vec<TensorId>, usize),
    SoftmaxCrossEntropy { logits: TensorId, target: usize },
    Sum(TensorId),
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Vec<f64>,
    needs_grad: bool,
    /// Saved intermediates for the backward pass (softmax probabilities).
    aux: Vec<f64>,
}

/// Named trainable array with a gradient slot of identical shape.
#[derive(Debug, Clone)]
pub struct Param {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

/// How a parameter is filled at registration time.
#[derive(Debug, Clone)]
pub enum Init {
    Zeros,
    /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
    Values(Vec<f64>),
}

/// Flat named collection of trainable arrays.
///
/// Each parameter is initialized from an RNG seeded by (run seed, name), so
/// two models that share a parameter name get bit-identical initial values
/// regardless of what else they register.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: IndexMap<String, Param>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn name_seed(seed: u64, name: &str) -> u64 {
    seed.wrapping_mul(0x9e3779b97f4a7c15) ^ fnv1a(name.as_bytes())
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, shape: Vec<usize>, init: Init, seed: u64) {
        let numel: usize = shape.iter().product();
        let values = match init {
            Init::Zeros => vec![0.0; numel],
            Init::Xavier { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
                (0..numel).map(|_| rng.gen_range(-a..a)).collect()
            }
            Init::Values(v) => {
                assert_eq!(v.len(), numel, "init values for {name} disagree with shape");
                v
            }
        };
        self.params.insert(
            name.to_string(),
            Param { shape, values, grad: vec![0.0; numel] },
        );
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| RiseError::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| RiseError::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// Ordered record of forward operations; replayed in reverse for gradients.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn elementwise_shapes<'a>(
    op: &'static str,
    a: &'a [usize],
    b: &'a [usize],
    a_len: usize,
    b_len: usize,
) -> Result<&'a [usize]> {
    if a == b {
        Ok(a)
    } else if b_len == 1 {
        Ok(a)
    } else if a_len == 1 {
        Ok(b)
    } else {
        Err(RiseError::Dim { op, lhs: a.to_vec(), rhs: b.to_vec() })
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(256) }
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool, aux: Vec<f64>) -> TensorId {
        // nodes outside the differentiated subgraph never receive a gradient
        let grad = if needs_grad { vec![0.0; value.numel()] } else { Vec::new() };
        self.nodes.push(Node { op, value, grad, needs_grad, aux });
        TensorId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        self.nodes[id.0].value.values[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Untracked input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> TensorId {
        self.push(Op::Leaf { param: None }, t, false, Vec::new())
    }

    pub fn constant_scalar(&mut self, v: f64) -> TensorId {
        self.constant(Tensor::scalar(v))
    }

    /// Copies a named parameter onto the tape as a tracked leaf.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<TensorId> {
        let p = store.get(name)?;
        let t = Tensor { shape: p.shape.clone(), values: p.values.clone() };
        Ok(self.push(Op::Leaf { param: Some(name.to_string()) }, t, true, Vec::new()))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (&self.nodes[a.0].value.shape, &self.nodes[b.0].value.shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(RiseError::Dim { op: "matmul", lhs: sa.clone(), rhs: sb.clone() });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = &self.nodes[a.0].value.values;
        let bv = &self.nodes[b.0].value.values;
        let mut out = vec![0.0; m * n];
        if n == 1 {
            // matrix-vector product: the overwhelmingly common case here
            for i in 0..m {
                out[i] = dot(&av[i * k..(i + 1) * k], bv);
            }
        } else {
            for i in 0..m {
                let arow = &av[i * k..(i + 1) * k];
                let orow = &mut out[i * n..(i + 1) * n];
                for (p, &aik) in arow.iter().enumerate() {
                    let brow = &bv[p * n..(p + 1) * n];
                    for (o, &bpj) in orow.iter_mut().zip(brow) {
                        *o += aik * bpj;
                    }
                }
            }
        }
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        Ok(self.push(Op::Matmul(a, b), Tensor { shape: vec![m, n], values: out }, needs, Vec::new()))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool)> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape =
            elementwise_shapes(op, &ta.shape, &tb.shape, ta.numel(), tb.numel())?.to_vec();
        let numel: usize = shape.iter().product();
        let mut out = Vec::with_capacity(numel);
        if ta.numel() == tb.numel() {
            out.extend(ta.values.iter().zip(&tb.values).map(|(&x, &y)| f(x, y)));
        } else if tb.numel() == 1 {
            let y = tb.values[0];
            out.extend(ta.values.iter().map(|&x| f(x, y)));
        } else {
            let x = ta.values[0];
            out.extend(tb.values.iter().map(|&y| f(x, y)));
        }
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        Ok((Tensor { shape, values: out }, needs))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (t, needs) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), t, needs, Vec::new()))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (t, needs) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), t, needs, Vec::new()))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (t, needs) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), t, needs, Vec::new()))
    }

    fn unary(&mut self, a: TensorId, f: impl Fn(f64) -> f64) -> (Tensor, bool) {
        let ta = &self.nodes[a.0].value;
        let out = Tensor {
            shape: ta.shape.clone(),
            values: ta.values.iter().map(|&x| f(x)).collect(),
        };
        (out, self.nodes[a.0].needs_grad)
    }

    pub fn max0(&mut self, a: TensorId) -> TensorId {
        let (t, needs) = self.unary(a, |x| x.max(0.0));
        self.push(Op::Max0(a), t, needs, Vec::new())
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let (t, needs) = self.unary(a, f64::exp);
        self.push(Op::Exp(a), t, needs, Vec::new())
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let (t, needs) = self.unary(a, stable_sigmoid);
        self.push(Op::Sigmoid(a), t, needs, Vec::new())
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let (t, needs) = self.unary(a, f64::tanh);
        self.push(Op::Tanh(a), t, needs, Vec::new())
    }

    pub fn sin(&mut self, a: TensorId) -> TensorId {
        let (t, needs) = self.unary(a, f64::sin);
        self.push(Op::Sin(a), t, needs, Vec::new())
    }

    pub fn cos(&mut self, a: TensorId) -> TensorId {
        let (t, needs) = self.unary(a, f64::cos);
        self.push(Op::Cos(a), t, needs, Vec::new())
    }

    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(RiseError::Contract("concat of zero parts".into()));
        }
        let first = self.nodes[parts[0].0].value.shape.clone();
        if axis >= first.len() {
            return Err(RiseError::Index { op: "concat", index: axis, size: first.len() });
        }
        let mut axis_total = 0usize;
        for &p in parts {
            let s = &self.nodes[p.0].value.shape;
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(RiseError::Dim { op: "concat", lhs: first.clone(), rhs: s.clone() });
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * axis_total * inner];
        let mut offset = 0usize;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            let len_axis = t.shape[axis];
            for o in 0..outer {
                let src = &t.values[o * len_axis * inner..(o + 1) * len_axis * inner];
                let dst_start = (o * axis_total + offset) * inner;
                out[dst_start..dst_start + len_axis * inner].copy_from_slice(src);
            }
            offset += len_axis;
        }
        let needs = parts.iter().any(|&p| self.nodes[p.0].needs_grad);
        Ok(self.push(Op::Concat(parts.to_vec(), axis), Tensor { shape, values: out }, needs, Vec::new()))
    }

    /// -log softmax(logits)[target], computed with max-shift.
    pub fn softmax_cross_entropy(&mut self, logits: TensorId, target: usize) -> Result<TensorId> {
        let t = &self.nodes[logits.0].value;
        let n = t.numel();
        if n < 2 {
            return Err(RiseError::Contract(format!(
                "softmax_cross_entropy needs at least 2 classes, got {n}"
            )));
        }
        if target >= n {
            return Err(RiseError::Index { op: "softmax_cross_entropy", index: target, size: n });
        }
        let max = t.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = t.values.iter().map(|&v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let loss = z.ln() - (t.values[target] - max);
        let probs: Vec<f64> = exps.iter().map(|&e| e / z).collect();
        let needs = self.nodes[logits.0].needs_grad;
        Ok(self.push(
            Op::SoftmaxCrossEntropy { logits, target },
            Tensor::scalar(loss),
            needs,
            probs,
        ))
    }

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.nodes[a.0].value.values.iter().sum();
        let needs = self.nodes[a.0].needs_grad;
        self.push(Op::Sum(a), Tensor::scalar(s), needs, Vec::new())
    }

    /// Reverse sweep from a scalar loss; fills the grad slot of every
    /// reachable node, accumulating additively across fan-out.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(RiseError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape
            )));
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(()); // no parameter reaches the loss; nothing to do
        }
        for n in &mut self.nodes {
            n.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[loss.0].grad[0] = 1.0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            // every operand has a smaller index, so split to borrow node i
            // immutably while its operands stay mutable
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &tail[0];
            let g = node.grad.as_slice();
            match &node.op {
                Op::Leaf { .. } => {}
                Op::Matmul(a, b) => {
                    let (a, b) = (a.0, b.0);
                    let (m, k) = (head[a].value.shape[0], head[a].value.shape[1]);
                    let n = head[b].value.shape[1];
                    if a == b {
                        // degenerate square self-product; correctness only
                        for r in 0..m {
                            for c in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[r * n + j] * head[b].value.values[c * n + j];
                                }
                                head[a].grad[r * k + c] += acc;
                            }
                        }
                        for r in 0..k {
                            for j in 0..n {
                                let mut acc = 0.0;
                                for p in 0..m {
                                    acc += head[a].value.values[p * k + r] * g[p * n + j];
                                }
                                head[b].grad[r * n + j] += acc;
                            }
                        }
                        continue;
                    }
                    let (na, nb) = disjoint_pair(head, a, b);
                    if na.needs_grad {
                        // dA = dC . B^T
                        let bv = &nb.value.values;
                        if n == 1 {
                            for r in 0..m {
                                let gr = g[r];
                                let dst = &mut na.grad[r * k..(r + 1) * k];
                                for (d, &bc) in dst.iter_mut().zip(bv) {
                                    *d += gr * bc;
                                }
                            }
                        } else {
                            for r in 0..m {
                                let gr = &g[r * n..(r + 1) * n];
                                let dst = &mut na.grad[r * k..(r + 1) * k];
                                for (c, d) in dst.iter_mut().enumerate() {
                                    let bc = &bv[c * n..(c + 1) * n];
                                    *d += gr.iter().zip(bc).map(|(&x, &y)| x * y).sum::<f64>();
                                }
                            }
                        }
                    }
                    if nb.needs_grad {
                        // dB = A^T . dC
                        let av = &na.value.values;
                        if n == 1 {
                            for r in 0..m {
                                let gr = g[r];
                                let arow = &av[r * k..(r + 1) * k];
                                for (d, &ac) in nb.grad.iter_mut().zip(arow) {
                                    *d += ac * gr;
                                }
                            }
                        } else {
                            for p in 0..m {
                                let arow = &av[p * k..(p + 1) * k];
                                let gr = &g[p * n..(p + 1) * n];
                                for (r, &apr) in arow.iter().enumerate() {
                                    let dst = &mut nb.grad[r * n..(r + 1) * n];
                                    for (d, &gj) in dst.iter_mut().zip(gr) {
                                        *d += apr * gj;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate_binary(head, *a, *b, g, |_, _, g| (g, g));
                }
                Op::Sub(a, b) => {
                    accumulate_binary(head, *a, *b, g, |_, _, g| (g, -g));
                }
                Op::Mul(a, b) => {
                    accumulate_binary(head, *a, *b, g, |x, y, g| (g * y, g * x));
                }
                Op::Max0(a) => {
                    accumulate_unary(head, *a, g, node, |x, _, g| if x > 0.0 { g } else { 0.0 });
                }
                Op::Exp(a) => {
                    accumulate_unary(head, *a, g, node, |_, y, g| g * y);
                }
                Op::Sigmoid(a) => {
                    accumulate_unary(head, *a, g, node, |_, y, g| g * y * (1.0 - y));
                }
                Op::Tanh(a) => {
                    accumulate_unary(head, *a, g, node, |_, y, g| g * (1.0 - y * y));
                }
                Op::Sin(a) => {
                    accumulate_unary(head, *a, g, node, |x, _, g| g * x.cos());
                }
                Op::Cos(a) => {
                    accumulate_unary(head, *a, g, node, |x, _, g| -g * x.sin());
                }
                Op::Concat(parts, axis) => {
                    let shape = &node.value.shape;
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let axis_total = shape[*axis];
                    let mut offset = 0usize;
                    for p in parts {
                        let len_axis = head[p.0].value.shape[*axis];
                        if head[p.0].needs_grad {
                            for o in 0..outer {
                                let src_start = (o * axis_total + offset) * inner;
                                let dst = &mut head[p.0].grad
                                    [o * len_axis * inner..(o + 1) * len_axis * inner];
                                for (d, &s) in
                                    dst.iter_mut().zip(&g[src_start..src_start + len_axis * inner])
                                {
                                    *d += s;
                                }
                            }
                        }
                        offset += len_axis;
                    }
                }
                Op::SoftmaxCrossEntropy { logits, target } => {
                    if head[logits.0].needs_grad {
                        let g = g[0];
                        let target = *target;
                        let gl = &mut head[logits.0].grad;
                        for (j, (d, &p)) in gl.iter_mut().zip(&node.aux).enumerate() {
                            let one_hot = if j == target { 1.0 } else { 0.0 };
                            *d += g * (p - one_hot);
                        }
                    }
                }
                Op::Sum(a) => {
                    if head[a.0].needs_grad {
                        let g = g[0];
                        head[a.0].grad.iter_mut().for_each(|d| *d += g);
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulates every parameter leaf's gradient into the store by name.
    pub fn grads_into(&self, store: &mut ParameterStore) -> Result<()> {
        for node in &self.nodes {
            if let Op::Leaf { param: Some(name) } = &node.op {
                let p = store.get_mut(name)?;
                for (d, &s) in p.grad.iter_mut().zip(&node.grad) {
                    *d += s;
                }
            }
        }
        Ok(())
    }
}

/// Dot product with four independent accumulators so the multiply-adds
/// pipeline instead of forming one serial dependency chain.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn disjoint_pair(nodes: &mut [Node], a: usize, b: usize) -> (&mut Node, &mut Node) {
    debug_assert_ne!(a, b);
    if a < b {
        let (l, r) = nodes.split_at_mut(b);
        (&mut l[a], &mut r[0])
    } else {
        let (l, r) = nodes.split_at_mut(a);
        (&mut r[0], &mut l[b])
    }
}

fn accumulate_unary(
    head: &mut [Node],
    a: TensorId,
    g: &[f64],
    node: &Node,
    df: impl Fn(f64, f64, f64) -> f64,
) {
    if !head[a.0].needs_grad {
        return;
    }
    let na = &mut head[a.0];
    for j in 0..g.len() {
        na.grad[j] += df(na.value.values[j], node.value.values[j], g[j]);
    }
}

fn accumulate_binary(
    head: &mut [Node],
    a: TensorId,
    b: TensorId,
    g: &[f64],
    df: impl Fn(f64, f64, f64) -> (f64, f64),
) {
    let (na, nb) = (head[a.0].value.numel(), head[b.0].value.numel());
    let an = head[a.0].needs_grad;
    let bn = head[b.0].needs_grad;
    if !an && !bn {
        return;
    }
    for j in 0..g.len() {
        let x = head[a.0].value.values[if na == 1 { 0 } else { j }];
        let y = head[b.0].value.values[if nb == 1 { 0 } else { j }];
        let (da, db) = df(x, y, g[j]);
        if an {
            head[a.0].grad[if na == 1 { 0 } else { j }] += da;
        }
        if bn {
            head[b.0].grad[if nb == 1 { 0 } else { j }] += db;
        }
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max over all parameter components of
/// |analytic - central difference| / max(1, |analytic|).
pub fn grad_check<F>(f: F, store: &mut ParameterStore, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<TensorId>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss)?;
    tape.grads_into(store)?;
    let analytic: Vec<(String, Vec<f64>)> = store
        .iter()
        .map(|(n, p)| (n.clone(), p.grad.clone()))
        .collect();

    let eval = |store: &ParameterStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        Ok(tape.scalar_value(loss))
    };

    let mut max_err = 0.0f64;
    for (name, grads) in &analytic {
        for idx in 0..grads.len() {
            let orig = store.get(name)?.values[idx];
            store.get_mut(name)?.values[idx] = orig + h;
            let up = eval(store)?;
            store.get_mut(name)?.values[idx] = orig - h;
            let down = eval(store)?;
            store.get_mut(name)?.values[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grads[idx];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}
