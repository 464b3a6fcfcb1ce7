//! Reverse-mode differentiation over the kernel vocabulary.
//!
//! A [`Tape`] records primal tensors by value in topological order; a single
//! [`Tape::backward`] sweep from a scalar root accumulates adjoints into
//! per-node buffers and returns the adjoint of every leaf.

use std::collections::{BTreeMap, HashMap};

use crate::error::{usage_err, Result};
use crate::tensor::kernels::{
    self, gemm, is_row_broadcast, merge_backward, sum_to_row, tanh_deriv, transpose_raw,
};
use crate::tensor::{EwOp, ReduceOp, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The fixed op vocabulary. Every variant has a hand-written adjoint rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    /// Differentiable input (a parameter).
    Leaf,
    /// Data that never receives an adjoint.
    Constant,
    MatMul,
    Add,
    Sub,
    Mul,
    /// `tanh_k` for k ∈ {0, 1, 2}.
    Tanh(u8),
    Square,
    Scale(f64),
    Sum,
    Mean,
    Merge,
}

impl OpKind {
    fn arity(self) -> Option<usize> {
        match self {
            OpKind::Leaf | OpKind::Constant => Some(0),
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul => Some(2),
            OpKind::Tanh(_) | OpKind::Square | OpKind::Scale(_) | OpKind::Sum | OpKind::Mean => {
                Some(1)
            }
            OpKind::Merge => None,
        }
    }
}

#[derive(Debug)]
struct Node {
    op: OpKind,
    inputs: Vec<NodeId>,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaves: Vec<NodeId>,
    ones: HashMap<Vec<usize>, NodeId>,
    backward_done: bool,
    peak_adjoint_bytes: usize,
}

/// Leaf adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: BTreeMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: NodeId) -> Option<&Tensor> {
        self.grads.get(&leaf)
    }

    pub fn take(&mut self, leaf: NodeId) -> Option<Tensor> {
        self.grads.remove(&leaf)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
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

    /// Number of recorded operations, excluding leaves and constants.
    pub fn op_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, OpKind::Leaf | OpKind::Constant))
            .count()
    }

    pub fn op(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    /// Bytes held by recorded primals.
    pub fn primal_bytes(&self) -> usize {
        self.nodes.iter().map(|n| n.value.nbytes()).sum()
    }

    /// Primal store plus the largest adjoint working set seen in `backward`.
    pub fn peak_bytes(&self) -> usize {
        self.primal_bytes() + self.peak_adjoint_bytes
    }

    /// Appends a node after validating its inputs. The primal is taken as
    /// given; the typed builders below compute it from the kernels.
    pub fn record(&mut self, op: OpKind, inputs: &[NodeId], primal: Tensor) -> Result<NodeId> {
        if let Some(&bad) = inputs.iter().find(|id| id.0 >= self.nodes.len()) {
            return Err(usage_err!("input node {} is not on the tape", bad.0));
        }
        match op.arity() {
            Some(k) if k != inputs.len() => {
                return Err(usage_err!("{op:?} takes {k} inputs, got {}", inputs.len()))
            }
            None if inputs.len() < 2 => {
                return Err(usage_err!("merge takes at least two inputs"))
            }
            _ => {}
        }
        if let OpKind::Tanh(k) = op {
            if k > 2 {
                return Err(usage_err!("tanh_{k} is not differentiable on the tape"));
            }
        }
        Ok(self.push(op, inputs.to_vec(), primal))
    }

    fn push(&mut self, op: OpKind, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let needs_grad = match op {
            OpKind::Leaf => true,
            OpKind::Constant => false,
            _ => inputs.iter().any(|i| self.nodes[i.0].needs_grad),
        };
        let id = NodeId(self.nodes.len());
        if op == OpKind::Leaf {
            self.leaves.push(id);
        }
        self.nodes.push(Node { op, inputs, value, needs_grad });
        id
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(OpKind::Leaf, Vec::new(), value)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(OpKind::Constant, Vec::new(), value)
    }

    /// A shared all-ones constant of the given shape.
    pub fn ones(&mut self, shape: &[usize]) -> NodeId {
        if let Some(&id) = self.ones.get(shape) {
            return id;
        }
        let id = self.constant(Tensor::ones(shape));
        self.ones.insert(shape.to_vec(), id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(OpKind::MatMul, vec![a, b], v))
    }

    fn ew(&mut self, op: EwOp, kind: OpKind, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::ew(op, self.value(a), self.value(b))?;
        Ok(self.push(kind, vec![a, b], v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.ew(EwOp::Add, OpKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.ew(EwOp::Sub, OpKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.ew(EwOp::Mul, OpKind::Mul, a, b)
    }

    pub fn tanh_k(&mut self, k: u8, a: NodeId) -> Result<NodeId> {
        if k > 2 {
            return Err(usage_err!("tanh_{k} is not differentiable on the tape"));
        }
        let v = kernels::tanh_k(k, self.value(a))?;
        Ok(self.push(OpKind::Tanh(k), vec![a], v))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.tanh_k(0, a)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = kernels::square(self.value(a));
        self.push(OpKind::Square, vec![a], v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = kernels::scale(self.value(a), c);
        self.push(OpKind::Scale(c), vec![a], v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = kernels::reduce(ReduceOp::Sum, self.value(a)).expect("sum is total");
        self.push(OpKind::Sum, vec![a], Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let s = kernels::reduce(ReduceOp::Mean, self.value(a))?;
        Ok(self.push(OpKind::Mean, vec![a], Tensor::scalar(s)))
    }

    pub fn merge(&mut self, features: &[NodeId]) -> Result<NodeId> {
        let fs: Vec<&Tensor> = features.iter().map(|&f| self.value(f)).collect();
        let v = kernels::merge(&fs)?;
        Ok(self.push(OpKind::Merge, features.to_vec(), v))
    }

    /// Allows another `backward` over the same recording.
    pub fn reset(&mut self) {
        self.backward_done = false;
        self.peak_adjoint_bytes = 0;
    }

    /// Adjoints of the scalar `root` w.r.t. every leaf. Leaves that do not
    /// reach the root get a zero adjoint of their own shape.
    pub fn backward(&mut self, root: NodeId) -> Result<Gradients> {
        self.backward_seeded(root, 1.0)
    }

    /// `backward` with the root adjoint set to `seed` instead of 1.
    pub fn backward_seeded(&mut self, root: NodeId, seed: f64) -> Result<Gradients> {
        if self.backward_done {
            return Err(usage_err!("backward already ran on this tape; call reset() first"));
        }
        let Some(root_node) = self.nodes.get(root.0) else {
            return Err(usage_err!("root node {} is not on the tape", root.0));
        };
        if !root_node.value.is_scalar() {
            return Err(usage_err!(
                "backward root must be scalar, got shape {:?}",
                root_node.value.shape()
            ));
        }
        self.backward_done = true;

        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::full(root_node.value.shape(), seed));
        let mut live = 8usize;
        let mut peak = live;
        let mut grads = BTreeMap::new();

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            live -= g.nbytes();
            if node.op == OpKind::Leaf {
                grads.insert(NodeId(i), g);
                continue;
            }
            for (slot, contrib) in self.input_adjoints(node, &g)? {
                let input = node.inputs[slot];
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut adj[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a += c;
                        }
                    }
                    empty @ None => {
                        live += contrib.nbytes();
                        *empty = Some(contrib);
                    }
                }
            }
            peak = peak.max(live);
        }
        self.peak_adjoint_bytes = peak;

        for &leaf in &self.leaves {
            grads
                .entry(leaf)
                .or_insert_with(|| Tensor::zeros(self.nodes[leaf.0].value.shape()));
        }
        Ok(Gradients { grads })
    }

    /// Adjoint contributions `(input slot, tensor)` of one node.
    fn input_adjoints(&self, node: &Node, g: &Tensor) -> Result<Vec<(usize, Tensor)>> {
        let val = |slot: usize| &self.nodes[node.inputs[slot].0].value;
        let wants = |slot: usize| self.nodes[node.inputs[slot].0].needs_grad;
        let mut out = Vec::with_capacity(node.inputs.len());
        match node.op {
            OpKind::Leaf | OpKind::Constant => {}
            OpKind::MatMul => {
                let (a, b) = (val(0), val(1));
                let (m, k) = a.dims2()?;
                let p = b.dims2()?.1;
                if wants(0) {
                    let bt = transpose_raw(b.data(), k, p);
                    out.push((0, Tensor::from_parts(vec![m, k], gemm(g.data(), &bt, m, p, k))));
                }
                if wants(1) {
                    let at = transpose_raw(a.data(), m, k);
                    out.push((1, Tensor::from_parts(vec![k, p], gemm(&at, g.data(), k, m, p))));
                }
            }
            OpKind::Add | OpKind::Sub => {
                if wants(0) {
                    out.push((0, g.clone()));
                }
                if wants(1) {
                    let gb = if node.op == OpKind::Sub { g.map(|v| -v) } else { g.clone() };
                    out.push((1, reduce_broadcast(gb, val(0), val(1))));
                }
            }
            OpKind::Mul => {
                let (a, b) = (val(0), val(1));
                if wants(0) {
                    out.push((0, raw_ew(EwOp::Mul, g, b)?));
                }
                if wants(1) {
                    out.push((1, reduce_broadcast(raw_ew(EwOp::Mul, g, a)?, a, b)));
                }
            }
            OpKind::Tanh(0) => {
                let data = g.data().iter().zip(node.value.data()).map(|(&gy, &t)| gy * (1.0 - t * t)).collect();
                out.push((0, Tensor::from_parts(node.value.shape().to_vec(), data)));
            }
            OpKind::Tanh(k) => {
                let x = val(0);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gy, &xv)| gy * tanh_deriv(k + 1, xv))
                    .collect();
                out.push((0, Tensor::from_parts(x.shape().to_vec(), data)));
            }
            OpKind::Square => {
                let x = val(0);
                let data = g.data().iter().zip(x.data()).map(|(&gy, &xv)| 2.0 * gy * xv).collect();
                out.push((0, Tensor::from_parts(x.shape().to_vec(), data)));
            }
            OpKind::Scale(c) => out.push((0, g.map(|v| v * c))),
            OpKind::Sum => out.push((0, Tensor::full(val(0).shape(), g.item()?))),
            OpKind::Mean => {
                let x = val(0);
                out.push((0, Tensor::full(x.shape(), g.item()? / x.len() as f64)));
            }
            OpKind::Merge => {
                let fs: Vec<&Tensor> = (0..node.inputs.len()).map(val).collect();
                let needs: Vec<bool> = (0..node.inputs.len()).map(wants).collect();
                for (slot, gi) in merge_backward(&fs, g, &needs)?.into_iter().enumerate() {
                    if let Some(gi) = gi {
                        out.push((slot, gi));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Elementwise kernel that does not touch the op counter.
fn raw_ew(op: EwOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    crate::counter::uncounted(|| kernels::ew(op, a, b))
}

/// Sums an adjoint down to the bias-row shape when `b` was broadcast.
fn reduce_broadcast(g: Tensor, a: &Tensor, b: &Tensor) -> Tensor {
    if is_row_broadcast(a.shape(), b.shape()) {
        sum_to_row(&g, b.shape())
    } else {
        g
    }
}

impl From<NodeId> for usize {
    fn from(id: NodeId) -> usize {
        id.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    type Build = dyn Fn(&mut Tape, &[NodeId]) -> NodeId;

    fn loss_at(inputs: &[Tensor], build: &Build) -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = build(&mut tape, &ids);
        tape.value(root).item().unwrap()
    }

    /// Compares tape adjoints with central differences of the recorded loss.
    fn grad_check(inputs: &[Tensor], build: &Build, rel: f64) {
        let mut tape = Tape::new();
        let ids: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = build(&mut tape, &ids);
        let grads = tape.backward(root).unwrap();
        let h = 1e-6;
        for (k, t) in inputs.iter().enumerate() {
            let g = grads.get(ids[k]).unwrap();
            assert_eq!(g.shape(), t.shape());
            for e in 0..t.len() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[e] += h;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[e] -= h;
                let fd = (loss_at(&plus, build) - loss_at(&minus, build)) / (2.0 * h);
                let an = g.data()[e];
                let err = (fd - an).abs();
                assert!(
                    err <= rel * an.abs().max(fd.abs()) || err < 1e-8,
                    "input {k} elem {e}: tape {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn every_op_passes_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);
        let c = rand_tensor(&mut rng, &[3, 4]);
        let row = rand_tensor(&mut rng, &[4]);
        let cases: Vec<(Vec<Tensor>, Box<Build>)> = vec![
            (vec![a.clone(), b.clone()], Box::new(|t, x| {
                let m = t.matmul(x[0], x[1]).unwrap();
                let s = t.square(m);
                t.sum(s)
            })),
            (vec![a.clone(), c.clone()], Box::new(|t, x| {
                let m = t.add(x[0], x[1]).unwrap();
                let s = t.square(m);
                t.mean(s).unwrap()
            })),
            (vec![a.clone(), c.clone()], Box::new(|t, x| {
                let m = t.sub(x[0], x[1]).unwrap();
                let s = t.tanh(m).unwrap();
                t.sum(s)
            })),
            (vec![a.clone(), c.clone()], Box::new(|t, x| {
                let m = t.mul(x[0], x[1]).unwrap();
                let s = t.square(m);
                t.sum(s)
            })),
            (vec![a.clone(), row.clone()], Box::new(|t, x| {
                let m = t.add(x[0], x[1]).unwrap();
                let s = t.square(m);
                t.sum(s)
            })),
            (vec![a.clone(), row.clone()], Box::new(|t, x| {
                let m = t.sub(x[0], x[1]).unwrap();
                let q = t.mul(m, x[1]).unwrap();
                let s = t.square(q);
                t.sum(s)
            })),
            (vec![a.clone()], Box::new(|t, x| {
                let y = t.tanh_k(1, x[0]).unwrap();
                let z = t.tanh_k(2, y).unwrap();
                let w = t.scale(z, -1.5);
                t.sum(w)
            })),
        ];
        for (inputs, build) in &cases {
            grad_check(inputs, build.as_ref(), 1e-5);
        }
    }

    #[test]
    fn merge_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for ns in [vec![3, 2], vec![3, 3, 3], vec![2, 3, 2, 2]] {
            let fs: Vec<Tensor> = ns.iter().map(|&n| rand_tensor(&mut rng, &[n, 2])).collect();
            let w = rand_tensor(&mut rng, &ns);
            grad_check(
                &fs,
                &move |t, x| {
                    let m = t.merge(x).unwrap();
                    let wc = t.constant(w.clone());
                    let p = t.mul(m, wc).unwrap();
                    let s = t.square(p);
                    t.sum(s)
                },
                1e-5,
            );
        }
    }

    #[test]
    fn random_scalar_graph_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let params: Vec<Tensor> = (0..5).map(|_| Tensor::scalar(rng.gen_range(-1.0..1.0))).collect();
        grad_check(
            &params,
            &|t, x| {
                let a = t.mul(x[0], x[1]).unwrap();
                let b = t.tanh(a).unwrap();
                let c = t.add(b, x[2]).unwrap();
                let d = t.square(c);
                let e = t.sub(d, x[3]).unwrap();
                let f = t.mul(e, x[4]).unwrap();
                let g = t.tanh(f).unwrap();
                t.scale(g, 3.0)
            },
            1e-5,
        );
    }

    #[test]
    fn linear_map_adjoint() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap());
        let w = tape.leaf(Tensor::new(vec![3, 2], vec![0.5; 6]).unwrap());
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
    }

    /// Two-layer tanh net `y = W2·tanh(W1·x)` traced by hand on a 2×2 case.
    #[test]
    fn two_layer_tanh_trace() {
        let w1 = Tensor::from_rows(&[&[0.3, -0.2], &[0.5, 0.1]]).unwrap();
        let w2 = Tensor::from_rows(&[&[0.7, -0.4]]).unwrap();
        let x = Tensor::new(vec![2, 1], vec![1.0, -1.0]).unwrap();

        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        let w1i = tape.leaf(w1.clone());
        let w2i = tape.leaf(w2.clone());
        let v1 = tape.matmul(w1i, xi).unwrap();
        let v2 = tape.tanh(v1).unwrap();
        let v3 = tape.matmul(w2i, v2).unwrap();
        let y = tape.sum(v3);
        assert_eq!(tape.op_count(), 4);
        let g = tape.backward(y).unwrap();

        // v1 = W1 x; v̄3 = 1; v̄2 = W2ᵀ; v̄1 = v̄2 ∘ tanh'(v1); W̄1 = v̄1 xᵀ
        let v1h: [f64; 2] = [0.3 + 0.2, 0.5 - 0.1];
        let v1bar = [0.7 * (1.0 - v1h[0].tanh().powi(2)), -0.4 * (1.0 - v1h[1].tanh().powi(2))];
        let want = [v1bar[0], -v1bar[0], v1bar[1], -v1bar[1]];
        for (a, b) in g.get(w1i).unwrap().data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let w2bar = [v1h[0].tanh(), v1h[1].tanh()];
        for (a, b) in g.get(w2i).unwrap().data().iter().zip(w2bar) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn record_ids_are_sequential() {
        let mut tape = Tape::new();
        assert_eq!(tape.record(OpKind::Leaf, &[], Tensor::scalar(1.0)).unwrap().index(), 0);
        let mut prev = NodeId(0);
        for i in 1..10 {
            let v = tape.value(prev).map(|x| 2.0 * x);
            prev = tape.record(OpKind::Scale(2.0), &[prev], v).unwrap();
            assert_eq!(prev.index(), i);
        }
        assert!(matches!(
            tape.record(OpKind::Square, &[NodeId(42)], Tensor::scalar(0.0)),
            Err(crate::Error::Usage(_))
        ));
        assert!(tape.record(OpKind::Add, &[prev], Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn backward_usage_errors() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::ones(&[2]));
        let s = tape.square(a);
        assert!(matches!(tape.backward(s), Err(crate::Error::Usage(_))));
        let r = tape.sum(s);
        tape.backward(r).unwrap();
        assert!(matches!(tape.backward(r), Err(crate::Error::Usage(_))));
        tape.reset();
        assert!(tape.backward(r).is_ok());
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::ones(&[2]));
        let b = tape.leaf(Tensor::ones(&[3, 1]));
        let r = tape.sum(a);
        let g = tape.backward(r).unwrap();
        assert_eq!(g.get(b).unwrap(), &Tensor::zeros(&[3, 1]));
    }

    #[test]
    fn zero_seed_gives_exact_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tape = Tape::new();
        let a = tape.leaf(rand_tensor(&mut rng, &[3, 3]));
        let t = tape.tanh(a).unwrap();
        let m = tape.matmul(t, a).unwrap();
        let r = tape.sum(m);
        let g = tape.backward_seeded(r, 0.0).unwrap();
        assert!(g.get(a).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, &[4, 3]);
        let (ca, cb) = (0.75, -2.5);
        let run = |which: u8| {
            let mut tape = Tape::new();
            let p = tape.leaf(x.clone());
            let t = tape.tanh(p).unwrap();
            let l1 = tape.sum(t);
            let sq = tape.square(p);
            let l2 = tape.mean(sq).unwrap();
            let root = match which {
                0 => l1,
                1 => l2,
                _ => {
                    let a = tape.scale(l1, ca);
                    let b = tape.scale(l2, cb);
                    tape.add(a, b).unwrap()
                }
            };
            tape.backward(root).unwrap().take(p).unwrap()
        };
        let (g1, g2, g) = (run(0), run(1), run(2));
        for i in 0..g.len() {
            let want = ca * g1.data()[i] + cb * g2.data()[i];
            assert!((g.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn memory_accounting() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::ones(&[10, 10]));
        let s = tape.square(a);
        let r = tape.sum(s);
        assert_eq!(tape.primal_bytes(), 8 * (100 + 100 + 1));
        tape.backward(r).unwrap();
        assert!(tape.peak_bytes() >= tape.primal_bytes() + 800);
    }
}
