use super::tensor::Param;

/// Handle to a node in a [`Tape`] graph. Valid until the next `clear`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    /// Constant input; no gradient flows into it.
    Leaf,
    /// Tracked leaf bound to an external parameter cell. Backward accumulates
    /// into the cell's grad buffer.
    Param(Param),
    MatMul(usize, usize),
    /// Row-broadcast bias add: (m x n) + (n).
    AddRow(usize, usize),
    Relu(usize),
    Tanh(usize),
    Scale(usize, f64),
    Add(usize, usize),
    ConcatCols(usize, usize),
    /// Per-row L1-mean normalization; `div` holds each row's divisor max(g, 1).
    NormRows { x: usize, div: Vec<f64> },
    Mse { pred: usize, resid: Vec<f64>, weight: Option<Vec<f64>> },
    Huber { pred: usize, resid: Vec<f64>, delta: f64, weight: Option<Vec<f64>> },
    NegMean { x: usize, weight: Option<Vec<f64>> },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Vec<f64>, // empty when needs_grad is false
    needs_grad: bool,
    op: Op,
}

impl Node {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

/// Wengert-list reverse-mode autodiff over row-major f64 buffers.
///
/// One tape is built per forward pass; `backward` runs once over it in
/// reverse; `clear` recycles every buffer into an internal pool so steady-state
/// training performs no heap traffic.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    pool: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn alloc(&mut self, n: usize) -> Vec<f64> {
        if let Some(pos) = self.pool.iter().rposition(|v| v.capacity() >= n) {
            let mut v = self.pool.swap_remove(pos);
            v.clear();
            v.resize(n, 0.0);
            return v;
        }
        vec![0.0; n]
    }

    fn copy_in(&mut self, src: &[f64]) -> Vec<f64> {
        let mut v = self.alloc(src.len());
        v.copy_from_slice(src);
        v
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, needs_grad: bool, op: Op) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        let grad = if needs_grad { self.alloc(rows * cols) } else { Vec::new() };
        self.nodes.push(Node { rows, cols, value, grad, needs_grad, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Recycles all node buffers; previously returned NodeIds become invalid.
    pub fn clear(&mut self) {
        let nodes = std::mem::take(&mut self.nodes);
        for node in nodes {
            self.pool.push(node.value);
            if node.grad.capacity() > 0 {
                self.pool.push(node.grad);
            }
            match node.op {
                Op::NormRows { div, .. } => self.pool.push(div),
                Op::Mse { resid, weight, .. } | Op::Huber { resid, weight, .. } => {
                    self.pool.push(resid);
                    if let Some(w) = weight {
                        self.pool.push(w);
                    }
                }
                Op::NegMean { weight: Some(w), .. } => self.pool.push(w),
                _ => {}
            }
        }
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn dims(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    /// Constant input node.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: &[f64]) -> NodeId {
        assert_eq!(data.len(), rows * cols, "leaf data length mismatch");
        let v = self.copy_in(data);
        self.push(rows, cols, v, false, Op::Leaf)
    }

    /// Parameter input. `tracked` decides whether backward reaches the cell;
    /// untracked parameters enter as constants (used when differentiating a
    /// composite only with respect to its inputs).
    pub fn param(&mut self, p: &Param, tracked: bool) -> NodeId {
        let (rows, cols, v) = {
            let t = p.borrow();
            (t.rows(), t.cols(), self.copy_in(&t.data))
        };
        if tracked {
            self.push(rows, cols, v, true, Op::Param(p.clone()))
        } else {
            self.push(rows, cols, v, false, Op::Leaf)
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_ne!(a, b, "matmul operands must be distinct nodes");
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dims {} vs {}", k, k2);
        let mut out = self.alloc(m * n);
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0,
                self.nodes[a.0].value.as_ptr(), k as isize, 1,
                self.nodes[b.0].value.as_ptr(), n as isize, 1,
                0.0,
                out.as_mut_ptr(), n as isize, 1,
            );
        }
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(m, n, out, ng, Op::MatMul(a.0, b.0))
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let (m, n) = self.dims(x);
        let (br, bn) = self.dims(bias);
        assert!(br == 1 && bn == n, "bias shape ({br},{bn}) does not broadcast over ({m},{n})");
        let mut out = self.alloc(m * n);
        {
            let xv = &self.nodes[x.0].value;
            let bv = &self.nodes[bias.0].value;
            for (orow, xrow) in out.chunks_exact_mut(n).zip(xv.chunks_exact(n)) {
                for ((o, &xi), &bi) in orow.iter_mut().zip(xrow).zip(bv.iter()) {
                    *o = xi + bi;
                }
            }
        }
        let ng = self.nodes[x.0].needs_grad || self.nodes[bias.0].needs_grad;
        self.push(m, n, out, ng, Op::AddRow(x.0, bias.0))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let (m, n) = self.dims(x);
        let mut out = self.alloc(m * n);
        for (o, &v) in out.iter_mut().zip(self.nodes[x.0].value.iter()) {
            *o = if v > 0.0 { v } else { 0.0 };
        }
        let ng = self.nodes[x.0].needs_grad;
        self.push(m, n, out, ng, Op::Relu(x.0))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let (m, n) = self.dims(x);
        let mut out = self.alloc(m * n);
        for (o, &v) in out.iter_mut().zip(self.nodes[x.0].value.iter()) {
            *o = v.tanh();
        }
        let ng = self.nodes[x.0].needs_grad;
        self.push(m, n, out, ng, Op::Tanh(x.0))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let (m, n) = self.dims(x);
        let mut out = self.alloc(m * n);
        for (o, &v) in out.iter_mut().zip(self.nodes[x.0].value.iter()) {
            *o = c * v;
        }
        let ng = self.nodes[x.0].needs_grad;
        self.push(m, n, out, ng, Op::Scale(x.0, c))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_ne!(a, b, "add operands must be distinct nodes");
        let (m, n) = self.dims(a);
        assert_eq!((m, n), self.dims(b), "add shape mismatch");
        let mut out = self.alloc(m * n);
        for ((o, &x), &y) in out
            .iter_mut()
            .zip(self.nodes[a.0].value.iter())
            .zip(self.nodes[b.0].value.iter())
        {
            *o = x + y;
        }
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(m, n, out, ng, Op::Add(a.0, b.0))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_ne!(a, b, "concat operands must be distinct nodes");
        let (m, na) = self.dims(a);
        let (mb, nb) = self.dims(b);
        assert_eq!(m, mb, "concat row mismatch");
        let n = na + nb;
        let mut out = self.alloc(m * n);
        {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            for r in 0..m {
                out[r * n..r * n + na].copy_from_slice(&av[r * na..(r + 1) * na]);
                out[r * n + na..(r + 1) * n].copy_from_slice(&bv[r * nb..(r + 1) * nb]);
            }
        }
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(m, n, out, ng, Op::ConcatCols(a.0, b.0))
    }

    /// Row-wise action normalization: with g = mean(|x_j|) over the row, rows
    /// with g > 1 are divided by g, others pass through.
    pub fn normalize_rows(&mut self, x: NodeId) -> NodeId {
        let (m, n) = self.dims(x);
        let mut out = self.copy_in_node(x);
        let mut div = self.alloc(m);
        for r in 0..m {
            let row = &mut out[r * n..(r + 1) * n];
            let g = row.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
            let d = if g > 1.0 { g } else { 1.0 };
            if d != 1.0 {
                row.iter_mut().for_each(|v| *v /= d);
            }
            div[r] = d;
        }
        let ng = self.nodes[x.0].needs_grad;
        self.push(m, n, out, ng, Op::NormRows { x: x.0, div })
    }

    fn copy_in_node(&mut self, x: NodeId) -> Vec<f64> {
        let mut v = self.alloc(self.nodes[x.0].len());
        v.copy_from_slice(&self.nodes[x.0].value);
        v
    }

    fn stash_weight(&mut self, weight: Option<&[f64]>, n: usize) -> Option<Vec<f64>> {
        weight.map(|w| {
            assert_eq!(w.len(), n, "weight length mismatch");
            self.copy_in(w)
        })
    }

    /// Scalar (optionally per-element weighted) mean squared error:
    /// (1/n) sum w_i (pred_i - target_i)^2.
    pub fn mse_loss(&mut self, pred: NodeId, target: &[f64], weight: Option<&[f64]>) -> NodeId {
        let n = self.nodes[pred.0].len();
        assert_eq!(target.len(), n, "target length mismatch");
        let w = self.stash_weight(weight, n);
        let mut resid = self.alloc(n);
        for ((r, &p), &t) in resid.iter_mut().zip(self.nodes[pred.0].value.iter()).zip(target) {
            *r = p - t;
        }
        let mut acc = 0.0;
        for (i, &r) in resid.iter().enumerate() {
            let wi = w.as_ref().map_or(1.0, |w| w[i]);
            acc += wi * r * r;
        }
        let mut value = self.alloc(1);
        value[0] = acc / n as f64;
        let ng = self.nodes[pred.0].needs_grad;
        self.push(1, 1, value, ng, Op::Mse { pred: pred.0, resid, weight: w })
    }

    /// Scalar (optionally weighted) Huber loss with threshold `delta`:
    /// quadratic inside |e| <= delta, linear outside.
    pub fn huber_loss(&mut self, pred: NodeId, target: &[f64], delta: f64, weight: Option<&[f64]>) -> NodeId {
        assert!(delta > 0.0, "huber delta must be positive");
        let n = self.nodes[pred.0].len();
        assert_eq!(target.len(), n, "target length mismatch");
        let w = self.stash_weight(weight, n);
        let mut resid = self.alloc(n);
        for ((r, &p), &t) in resid.iter_mut().zip(self.nodes[pred.0].value.iter()).zip(target) {
            *r = p - t;
        }
        let mut acc = 0.0;
        for (i, &r) in resid.iter().enumerate() {
            let wi = w.as_ref().map_or(1.0, |w| w[i]);
            let a = r.abs();
            acc += wi * if a <= delta { 0.5 * r * r } else { delta * (a - 0.5 * delta) };
        }
        let mut value = self.alloc(1);
        value[0] = acc / n as f64;
        let ng = self.nodes[pred.0].needs_grad;
        self.push(1, 1, value, ng, Op::Huber { pred: pred.0, resid, delta, weight: w })
    }

    /// Scalar -(1/n) sum w_i x_i; ascent objectives enter optimizers as descent
    /// on this.
    pub fn neg_mean(&mut self, x: NodeId, weight: Option<&[f64]>) -> NodeId {
        let n = self.nodes[x.0].len();
        let w = self.stash_weight(weight, n);
        let mut acc = 0.0;
        for (i, &v) in self.nodes[x.0].value.iter().enumerate() {
            let wi = w.as_ref().map_or(1.0, |w| w[i]);
            acc += wi * v;
        }
        let mut value = self.alloc(1);
        value[0] = -acc / n as f64;
        let ng = self.nodes[x.0].needs_grad;
        self.push(1, 1, value, ng, Op::NegMean { x: x.0, weight: w })
    }

    /// Reverse pass from a scalar root. Parameter gradients accumulate into
    /// their cells; call once per built graph.
    pub fn backward(&mut self, loss: NodeId) {
        let li = loss.0;
        assert_eq!(self.nodes[li].len(), 1, "backward root must be scalar");
        assert!(self.nodes[li].needs_grad, "backward root does not depend on tracked parameters");
        self.nodes[li].grad[0] = 1.0;
        for i in (0..=li).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let (parents, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => {
                    let mut t = p.borrow_mut();
                    let g = t.grad.as_mut().expect("parameter cell lacks grad buffer");
                    for (gi, &ni) in g.iter_mut().zip(node.grad.iter()) {
                        *gi += ni;
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, n) = (node.rows, node.cols);
                    let k = parents[*a].cols;
                    if parents[*a].needs_grad {
                        // dA += dC * B^T
                        unsafe {
                            matrixmultiply::dgemm(
                                m, n, k, 1.0,
                                node.grad.as_ptr(), n as isize, 1,
                                parents[*b].value.as_ptr(), 1, n as isize,
                                1.0,
                                parents[*a].grad.as_mut_ptr(), k as isize, 1,
                            );
                        }
                    }
                    if parents[*b].needs_grad {
                        // dB += A^T * dC
                        unsafe {
                            matrixmultiply::dgemm(
                                k, m, n, 1.0,
                                parents[*a].value.as_ptr(), 1, k as isize,
                                node.grad.as_ptr(), n as isize, 1,
                                1.0,
                                parents[*b].grad.as_mut_ptr(), n as isize, 1,
                            );
                        }
                    }
                }
                Op::AddRow(x, b) => {
                    let n = node.cols;
                    if parents[*x].needs_grad {
                        for (g, &d) in parents[*x].grad.iter_mut().zip(node.grad.iter()) {
                            *g += d;
                        }
                    }
                    if parents[*b].needs_grad {
                        let bg = &mut parents[*b].grad;
                        for drow in node.grad.chunks_exact(n) {
                            for (g, &d) in bg.iter_mut().zip(drow) {
                                *g += d;
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    if parents[*x].needs_grad {
                        for ((g, &d), &y) in parents[*x]
                            .grad
                            .iter_mut()
                            .zip(node.grad.iter())
                            .zip(node.value.iter())
                        {
                            if y > 0.0 {
                                *g += d;
                            }
                        }
                    }
                }
                Op::Tanh(x) => {
                    if parents[*x].needs_grad {
                        for ((g, &d), &y) in parents[*x]
                            .grad
                            .iter_mut()
                            .zip(node.grad.iter())
                            .zip(node.value.iter())
                        {
                            *g += d * (1.0 - y * y);
                        }
                    }
                }
                Op::Scale(x, c) => {
                    if parents[*x].needs_grad {
                        for (g, &d) in parents[*x].grad.iter_mut().zip(node.grad.iter()) {
                            *g += c * d;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for idx in [*a, *b] {
                        if parents[idx].needs_grad {
                            for (g, &d) in parents[idx].grad.iter_mut().zip(node.grad.iter()) {
                                *g += d;
                            }
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let na = parents[*a].cols;
                    let nb = parents[*b].cols;
                    let n = node.cols;
                    if parents[*a].needs_grad {
                        for (r, drow) in node.grad.chunks_exact(n).enumerate() {
                            for (g, &d) in parents[*a].grad[r * na..(r + 1) * na].iter_mut().zip(&drow[..na]) {
                                *g += d;
                            }
                        }
                    }
                    if parents[*b].needs_grad {
                        for (r, drow) in node.grad.chunks_exact(n).enumerate() {
                            for (g, &d) in parents[*b].grad[r * nb..(r + 1) * nb].iter_mut().zip(&drow[na..]) {
                                *g += d;
                            }
                        }
                    }
                }
                Op::NormRows { x, div } => {
                    if parents[*x].needs_grad {
                        let n = node.cols;
                        for r in 0..node.rows {
                            let d = div[r];
                            let dy = &node.grad[r * n..(r + 1) * n];
                            let y = &node.value[r * n..(r + 1) * n];
                            let gx = &mut parents[*x].grad[r * n..(r + 1) * n];
                            if d == 1.0 {
                                for (g, &dyi) in gx.iter_mut().zip(dy) {
                                    *g += dyi;
                                }
                            } else {
                                let dot: f64 = dy.iter().zip(y).map(|(&a, &b)| a * b).sum();
                                let c = dot / (n as f64 * d);
                                for ((g, &dyi), &yi) in gx.iter_mut().zip(dy).zip(y) {
                                    *g += dyi / d - c * sign(yi);
                                }
                            }
                        }
                    }
                }
                Op::Mse { pred, resid, weight } => {
                    if parents[*pred].needs_grad {
                        let n = resid.len() as f64;
                        let g0 = node.grad[0];
                        for (i, (g, &r)) in parents[*pred].grad.iter_mut().zip(resid.iter()).enumerate() {
                            let wi = weight.as_ref().map_or(1.0, |w| w[i]);
                            *g += g0 * 2.0 * wi * r / n;
                        }
                    }
                }
                Op::Huber { pred, resid, delta, weight } => {
                    if parents[*pred].needs_grad {
                        let n = resid.len() as f64;
                        let g0 = node.grad[0];
                        for (i, (g, &r)) in parents[*pred].grad.iter_mut().zip(resid.iter()).enumerate() {
                            let wi = weight.as_ref().map_or(1.0, |w| w[i]);
                            *g += g0 * wi * r.clamp(-*delta, *delta) / n;
                        }
                    }
                }
                Op::NegMean { x, weight } => {
                    if parents[*x].needs_grad {
                        let len = parents[*x].len() as f64;
                        let g0 = node.grad[0];
                        for (i, g) in parents[*x].grad.iter_mut().enumerate() {
                            let wi = weight.as_ref().map_or(1.0, |w| w[i]);
                            *g += -g0 * wi / len;
                        }
                    }
                }
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
