use super::{SubstrateError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

/// Position marker used to roll the tape back to an earlier length.
#[derive(Debug, Clone, Copy)]
pub struct TapeMark(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    MatMul(ValueId, ValueId),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Neg(ValueId),
    Scale(ValueId, f64),
    Offset(ValueId),
    Tanh(ValueId),
    Sigmoid(ValueId),
    Swish(ValueId),
    Exp(ValueId),
    Ln(ValueId),
    Sqrt(ValueId),
    Abs(ValueId),
    Clamp(ValueId, f64, f64),
    Concat(Vec<ValueId>),
    Slice { src: ValueId, start: usize, len: usize },
    Sum(ValueId),
    Mean(ValueId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Reverse-mode tape: an append-only record of primitive operations in
/// topological order. Forward values are computed eagerly; [`Tape::backward`]
/// replays the record in reverse to accumulate adjoints.
///
/// Every operation checks its output for NaN/infinity and fails with
/// [`SubstrateError::NumericFault`] so faults surface where they occur.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Marks the current tape length so later nodes can be discarded.
    pub fn mark(&self) -> TapeMark {
        TapeMark(self.nodes.len())
    }

    /// Drops every node recorded after `mark`. Handles created since the mark
    /// become invalid; keeping the prefix (typically bound parameters) avoids
    /// re-copying them on repeated no-grad evaluations.
    pub fn rollback(&mut self, mark: TapeMark) {
        self.nodes.truncate(mark.0);
    }

    /// Records a constant input (no gradient is tracked through it).
    pub fn input(&mut self, value: Tensor) -> ValueId {
        self.push_leaf(value, false)
    }

    /// Records a trainable parameter leaf.
    pub fn param(&mut self, value: Tensor) -> ValueId {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor, trainable: bool) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf { trainable },
            value,
            needs_grad: trainable,
        });
        id
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: &'static str, node_op: Op, value: Tensor, needs: bool) -> Result<ValueId, SubstrateError> {
        if !value.all_finite() {
            return Err(SubstrateError::NumericFault { op });
        }
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node {
            op: node_op,
            value,
            needs_grad: needs,
        });
        Ok(id)
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn check_same_shape(&self, op: &'static str, a: ValueId, b: ValueId) -> Result<(), SubstrateError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(SubstrateError::shape(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    /// Matrix product. The left operand must be rank 2; the right operand may
    /// be a vector (`[k]`) or a matrix (`[k, n]`).
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, SubstrateError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 {
            return Err(SubstrateError::shape("matmul", format!("left operand rank {} != 2", va.rank())));
        }
        let (m, k) = (va.shape()[0], va.shape()[1]);
        let out = match vb.rank() {
            1 => {
                if vb.shape()[0] != k {
                    return Err(SubstrateError::shape(
                        "matmul",
                        format!("[{m}x{k}] . [{}]", vb.shape()[0]),
                    ));
                }
                let ad = va.data();
                let bd = vb.data();
                let mut out = vec![0.0; m];
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &ad[i * k..(i + 1) * k];
                    *o = row.iter().zip(bd).map(|(x, y)| x * y).sum();
                }
                Tensor::from_raw(vec![m], out)
            }
            2 => {
                if vb.shape()[0] != k {
                    return Err(SubstrateError::shape(
                        "matmul",
                        format!("[{m}x{k}] . [{}x{}]", vb.shape()[0], vb.shape()[1]),
                    ));
                }
                let n = vb.shape()[1];
                let ad = va.data();
                let bd = vb.data();
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for kk in 0..k {
                        let aik = ad[i * k + kk];
                        let brow = &bd[kk * n..(kk + 1) * n];
                        let orow = &mut out[i * n..(i + 1) * n];
                        for (o, bv) in orow.iter_mut().zip(brow) {
                            *o += aik * bv;
                        }
                    }
                }
                Tensor::from_raw(vec![m, n], out)
            }
            r => {
                return Err(SubstrateError::shape("matmul", format!("right operand rank {r}")));
            }
        };
        let needs = self.needs(a) || self.needs(b);
        self.push("matmul", Op::MatMul(a, b), out, needs)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, SubstrateError> {
        self.check_same_shape("add", a, b)?;
        let shape = self.value(a).shape().to_vec();
        let mut out = Tensor::zeros(&shape);
        for ((o, x), y) in out
            .data_mut()
            .iter_mut()
            .zip(self.nodes[a.0].value.data())
            .zip(self.nodes[b.0].value.data())
        {
            *o = x + y;
        }
        let needs = self.needs(a) || self.needs(b);
        self.push("add", Op::Add(a, b), out, needs)
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, SubstrateError> {
        self.check_same_shape("sub", a, b)?;
        let shape = self.value(a).shape().to_vec();
        let mut out = Tensor::zeros(&shape);
        for ((o, x), y) in out
            .data_mut()
            .iter_mut()
            .zip(self.nodes[a.0].value.data())
            .zip(self.nodes[b.0].value.data())
        {
            *o = x - y;
        }
        let needs = self.needs(a) || self.needs(b);
        self.push("sub", Op::Sub(a, b), out, needs)
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, SubstrateError> {
        self.check_same_shape("mul", a, b)?;
        let shape = self.value(a).shape().to_vec();
        let mut out = Tensor::zeros(&shape);
        for ((o, x), y) in out
            .data_mut()
            .iter_mut()
            .zip(self.nodes[a.0].value.data())
            .zip(self.nodes[b.0].value.data())
        {
            *o = x * y;
        }
        let needs = self.needs(a) || self.needs(b);
        self.push("mul", Op::Mul(a, b), out, needs)
    }

    pub fn neg(&mut self, a: ValueId) -> Result<ValueId, SubstrateError> {
        self.unary("neg", a, |x| -x, Op::Neg(a))
    }

    /// Multiplies by a compile-time constant.
    pub fn scale(&mut self, a: ValueId, c: f64) -> Result<ValueId, SubstrateError> {
        self.unary("scale", a, |x| c * x, Op::Scale(a, c))
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: ValueId, c: f64) -> Result<ValueId, SubstrateError> {
        self.unary("offset", a, |x| x + c, Op::Offset(a))
    }

    pub fn tanh(&mut self, a: ValueId) -> Result<ValueId, SubstrateError> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: ValueId) -> Result<ValueId, SubstrateError> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    /// Swish activation `x * sigmoid(x)`.
    pub fn swish(&mut self, a: ValueId) -> Result<ValueId, SubstrateError> {
        self.unary("swish", a, |x| x * sigmoid(x), Op::Swish(a))
    }

    pub fn exp(&mut self, a: ValueId) -> Result<ValueId, SubstrateError> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: ValueId) -> Result<ValueId, SubstrateError> {
        self.unary("ln", a, f64::ln, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: ValueId) -> Result<ValueId, SubstrateError> {
        self.unary("sqrt", a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn abs(&mut self, a: ValueId) -> Result<ValueId, SubstrateError> {
        self.unary("abs", a, f64::abs, Op::Abs(a))
    }

    /// Clamps every element to `[lo, hi]`; the gradient passes through only
    /// strictly inside the interval.
    pub fn clamp(&mut self, a: ValueId, lo: f64, hi: f64) -> Result<ValueId, SubstrateError> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(SubstrateError::invalid("clamp", format!("bad interval [{lo}, {hi}]")));
        }
        self.unary("clamp", a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: ValueId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<ValueId, SubstrateError> {
        let shape = self.value(a).shape().to_vec();
        let mut out = Tensor::zeros(&shape);
        for (o, x) in out.data_mut().iter_mut().zip(self.nodes[a.0].value.data()) {
            *o = f(*x);
        }
        let needs = self.needs(a);
        self.push(name, op, out, needs)
    }

    /// Concatenates rank-1 values in order.
    pub fn concat(&mut self, parts: &[ValueId]) -> Result<ValueId, SubstrateError> {
        if parts.is_empty() {
            return Err(SubstrateError::invalid("concat", "no operands"));
        }
        let mut data = Vec::new();
        let mut needs = false;
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 1 {
                return Err(SubstrateError::shape("concat", format!("rank {} operand", v.rank())));
            }
            data.extend_from_slice(v.data());
            needs |= self.needs(p);
        }
        let n = data.len();
        let mut out = Tensor::zeros(&[n]);
        out.data_mut().copy_from_slice(&data);
        self.push("concat", Op::Concat(parts.to_vec()), out, needs)
    }

    /// Contiguous sub-range of a rank-1 value.
    pub fn slice(&mut self, src: ValueId, start: usize, len: usize) -> Result<ValueId, SubstrateError> {
        let v = self.value(src);
        if v.rank() != 1 {
            return Err(SubstrateError::shape("slice", format!("rank {} operand", v.rank())));
        }
        if start + len > v.len() || len == 0 {
            return Err(SubstrateError::invalid(
                "slice",
                format!("range {start}..{} of length {}", start + len, v.len()),
            ));
        }
        let mut out = Tensor::zeros(&[len]);
        out.data_mut().copy_from_slice(&v.data()[start..start + len]);
        let needs = self.needs(src);
        self.push("slice", Op::Slice { src, start, len }, out, needs)
    }

    /// Sum of all elements, as a shape-`[1]` scalar.
    pub fn sum(&mut self, a: ValueId) -> Result<ValueId, SubstrateError> {
        let total: f64 = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push("sum", Op::Sum(a), Tensor::from_raw(vec![1], vec![total]), needs)
    }

    /// Mean of all elements, as a shape-`[1]` scalar.
    pub fn mean(&mut self, a: ValueId) -> Result<ValueId, SubstrateError> {
        let v = self.value(a);
        let mean = v.data().iter().sum::<f64>() / v.len() as f64;
        let needs = self.needs(a);
        self.push("mean", Op::Mean(a), Tensor::from_raw(vec![1], vec![mean]), needs)
    }

    /// Reverse pass from a scalar loss. Returns the gradient of the loss with
    /// respect to every trainable leaf; leaves the loss does not depend on get
    /// a zero gradient of matching shape.
    #[allow(clippy::needless_range_loop)] // 2-D strided indexing reads better bare
    pub fn backward(&self, loss: ValueId) -> Result<Gradients, SubstrateError> {
        if self.value(loss).len() != 1 {
            return Err(SubstrateError::shape(
                "backward",
                format!("loss has shape {:?}, expected a scalar", self.value(loss).shape()),
            ));
        }
        let n = self.nodes.len();
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; n];
        adjoints[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(adj) = adjoints[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad && !matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            match &node.op {
                Op::Leaf { trainable } => {
                    if *trainable {
                        adjoints[idx] = Some(adj); // keep for collection below
                    }
                }
                Op::MatMul(a, b) => {
                    let va = self.value(*a);
                    let vb = self.value(*b);
                    let (m, k) = (va.shape()[0], va.shape()[1]);
                    if vb.rank() == 1 {
                        if self.needs(*a) {
                            let ga = adjoints[a.0].get_or_insert_with(|| vec![0.0; va.len()]);
                            for i in 0..m {
                                let gi = adj[i];
                                let row = &mut ga[i * k..(i + 1) * k];
                                for (g, bv) in row.iter_mut().zip(vb.data()) {
                                    *g += gi * bv;
                                }
                            }
                        }
                        if self.needs(*b) {
                            let gb = adjoints[b.0].get_or_insert_with(|| vec![0.0; vb.len()]);
                            for i in 0..m {
                                let gi = adj[i];
                                let row = &va.data()[i * k..(i + 1) * k];
                                for (g, av) in gb.iter_mut().zip(row) {
                                    *g += gi * av;
                                }
                            }
                        }
                    } else {
                        let nn = vb.shape()[1];
                        if self.needs(*a) {
                            let ga = adjoints[a.0].get_or_insert_with(|| vec![0.0; va.len()]);
                            for i in 0..m {
                                for kk in 0..k {
                                    let mut s = 0.0;
                                    for j in 0..nn {
                                        s += adj[i * nn + j] * vb.data()[kk * nn + j];
                                    }
                                    ga[i * k + kk] += s;
                                }
                            }
                        }
                        if self.needs(*b) {
                            let gb = adjoints[b.0].get_or_insert_with(|| vec![0.0; vb.len()]);
                            for kk in 0..k {
                                for j in 0..nn {
                                    let mut s = 0.0;
                                    for i in 0..m {
                                        s += va.data()[i * k + kk] * adj[i * nn + j];
                                    }
                                    gb[kk * nn + j] += s;
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut adjoints, *a, &adj, |g, d| *g += d);
                    self.accumulate(&mut adjoints, *b, &adj, |g, d| *g += d);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut adjoints, *a, &adj, |g, d| *g += d);
                    self.accumulate(&mut adjoints, *b, &adj, |g, d| *g -= d);
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let vb: Vec<f64> = self.value(*b).data().to_vec();
                        let ga = adjoints[a.0].get_or_insert_with(|| vec![0.0; vb.len()]);
                        for ((g, d), y) in ga.iter_mut().zip(&adj).zip(&vb) {
                            *g += d * y;
                        }
                    }
                    if self.needs(*b) {
                        let va: Vec<f64> = self.value(*a).data().to_vec();
                        let gb = adjoints[b.0].get_or_insert_with(|| vec![0.0; va.len()]);
                        for ((g, d), x) in gb.iter_mut().zip(&adj).zip(&va) {
                            *g += d * x;
                        }
                    }
                }
                Op::Neg(a) => self.accumulate(&mut adjoints, *a, &adj, |g, d| *g -= d),
                Op::Scale(a, c) => {
                    let c = *c;
                    self.accumulate(&mut adjoints, *a, &adj, move |g, d| *g += c * d);
                }
                Op::Offset(a) => self.accumulate(&mut adjoints, *a, &adj, |g, d| *g += d),
                Op::Tanh(a) => {
                    let y: Vec<f64> = node.value.data().to_vec();
                    self.accumulate_with(&mut adjoints, *a, &adj, &y, |d, y| d * (1.0 - y * y));
                }
                Op::Sigmoid(a) => {
                    let y: Vec<f64> = node.value.data().to_vec();
                    self.accumulate_with(&mut adjoints, *a, &adj, &y, |d, y| d * y * (1.0 - y));
                }
                Op::Swish(a) => {
                    let x: Vec<f64> = self.value(*a).data().to_vec();
                    self.accumulate_with(&mut adjoints, *a, &adj, &x, |d, x| {
                        let s = sigmoid(x);
                        d * (s + x * s * (1.0 - s))
                    });
                }
                Op::Exp(a) => {
                    let y: Vec<f64> = node.value.data().to_vec();
                    self.accumulate_with(&mut adjoints, *a, &adj, &y, |d, y| d * y);
                }
                Op::Ln(a) => {
                    let x: Vec<f64> = self.value(*a).data().to_vec();
                    self.accumulate_with(&mut adjoints, *a, &adj, &x, |d, x| d / x);
                }
                Op::Sqrt(a) => {
                    let y: Vec<f64> = node.value.data().to_vec();
                    self.accumulate_with(&mut adjoints, *a, &adj, &y, |d, y| d / (2.0 * y));
                }
                Op::Abs(a) => {
                    let x: Vec<f64> = self.value(*a).data().to_vec();
                    self.accumulate_with(&mut adjoints, *a, &adj, &x, |d, x| {
                        if x > 0.0 {
                            d
                        } else if x < 0.0 {
                            -d
                        } else {
                            0.0
                        }
                    });
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let x: Vec<f64> = self.value(*a).data().to_vec();
                    self.accumulate_with(&mut adjoints, *a, &adj, &x, |d, x| {
                        if x > lo && x < hi {
                            d
                        } else {
                            0.0
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        if self.needs(p) {
                            let gp = adjoints[p.0].get_or_insert_with(|| vec![0.0; len]);
                            for (g, d) in gp.iter_mut().zip(&adj[offset..offset + len]) {
                                *g += d;
                            }
                        }
                        offset += len;
                    }
                }
                Op::Slice { src, start, len } => {
                    if self.needs(*src) {
                        let n = self.value(*src).len();
                        let gs = adjoints[src.0].get_or_insert_with(|| vec![0.0; n]);
                        for (g, d) in gs[*start..*start + *len].iter_mut().zip(&adj) {
                            *g += d;
                        }
                    }
                }
                Op::Sum(a) => {
                    let d = adj[0];
                    self.accumulate(&mut adjoints, *a, &[], move |g, _| *g += d);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len() as f64;
                    let d = adj[0] / n;
                    self.accumulate(&mut adjoints, *a, &[], move |g, _| *g += d);
                }
            }
        }

        // Collect gradients for every trainable leaf on the tape.
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { trainable: true } = node.op {
                let shape = node.value.shape().to_vec();
                let g = match adjoints[idx].take() {
                    Some(data) => {
                        if !data.iter().all(|v| v.is_finite()) {
                            return Err(SubstrateError::NumericFault { op: "backward" });
                        }
                        let mut t = Tensor::zeros(&shape);
                        t.data_mut().copy_from_slice(&data);
                        t
                    }
                    None => Tensor::zeros(&shape),
                };
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    /// Broadcast-free accumulation: applies `f(slot, upstream)` elementwise.
    /// When `adj` is empty the closure is expected to ignore its second
    /// argument (scalar broadcast from reductions).
    fn accumulate(
        &self,
        adjoints: &mut [Option<Vec<f64>>],
        target: ValueId,
        adj: &[f64],
        mut f: impl FnMut(&mut f64, f64),
    ) {
        if !self.needs(target) {
            return;
        }
        let len = self.value(target).len();
        let slot = adjoints[target.0].get_or_insert_with(|| vec![0.0; len]);
        if adj.is_empty() {
            for g in slot.iter_mut() {
                f(g, 0.0);
            }
        } else {
            for (g, d) in slot.iter_mut().zip(adj) {
                f(g, *d);
            }
        }
    }

    /// Accumulation with a per-element auxiliary value (input or output of the
    /// forward op): adds `f(upstream, aux)` into the target's adjoint.
    fn accumulate_with(
        &self,
        adjoints: &mut [Option<Vec<f64>>],
        target: ValueId,
        adj: &[f64],
        aux: &[f64],
        f: impl Fn(f64, f64) -> f64,
    ) {
        if !self.needs(target) {
            return;
        }
        let len = self.value(target).len();
        let slot = adjoints[target.0].get_or_insert_with(|| vec![0.0; len]);
        for ((g, d), &a) in slot.iter_mut().zip(adj).zip(aux) {
            *g += f(*d, a);
        }
    }
}

/// Result of a reverse pass: gradients indexed by tape handle.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to a trainable leaf.
    ///
    /// Panics if `id` is not a trainable leaf of the tape the gradients came
    /// from; non-participating leaves return zeros.
    pub fn wrt(&self, id: ValueId) -> &Tensor {
        self.grads[id.0]
            .as_ref()
            .expect("gradient requested for a non-parameter value")
    }

    pub fn take(&mut self, id: ValueId) -> Tensor {
        self.grads[id.0]
            .take()
            .expect("gradient requested for a non-parameter value")
    }
}
