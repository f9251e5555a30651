use super::{ParamVector, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that
/// produced it, and only until that graph's next [`Graph::backward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddBias(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Minimum(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    Clamp(usize, f64, f64),
    ConcatCols(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run reverse-mode tape.
///
/// Nodes are appended in evaluation order, so parents always precede their
/// children and the backward sweep is a single reverse pass over the tape.
/// Trainable leaves are registered with [`Graph::param`]; `backward` returns
/// their gradients packed in registration order and then clears the tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(usize, String)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.params.clear();
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; its gradient is part of the `backward` result.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push((v.0, name.into()));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes.get(v.0).ok_or(Error::InvalidArgument(
            "variable does not belong to this graph".into(),
        ))
    }

    fn record(&mut self, op_name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(value, op, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn unary(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let x = &self.node(a)?.value;
        let data = x.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        self.record(name, t, op, &[a])
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        self.record(name, t, op, &[a, b])
    }

    /// `(n, k) x (k, m) -> (n, m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        if x.shape().len() > 2 || y.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let (n, k) = x.dims2();
        let (k2, m) = y.dims2();
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, x.data(), false, y.data(), false, &mut out, 0.0);
        let t = Tensor::new(vec![n, m], out)?;
        self.record("matmul", t, Op::MatMul(a.0, b.0), &[a, b])
    }

    /// Elementwise sum. A 1-D or `(1, m)` right operand is broadcast over the
    /// rows of an `(n, m)` left operand; no other broadcasting is supported.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        if x.shape() == y.shape() {
            return self.binary("add", a, b, Op::Add(a.0, b.0), |p, q| p + q);
        }
        let (n, m) = x.dims2();
        let bias_like = x.shape().len() == 2 && y.len() == m && (y.shape() == [m] || y.shape() == [1, m]);
        if !bias_like {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let mut out = x.data().to_vec();
        for r in 0..n {
            for (o, &bv) in out[r * m..(r + 1) * m].iter_mut().zip(y.data()) {
                *o += bv;
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        self.record("add", t, Op::AddBias(a.0, b.0), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a.0, b.0), |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a.0, b.0), |p, q| p * q)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("minimum", a, b, Op::Minimum(a.0, b.0), f64::min)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, Op::Scale(a.0, c), |v| v * c)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", a, Op::AddScalar(a.0), |v| v + c)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, Op::Tanh(a.0), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, Op::Relu(a.0), |v| v.max(0.0))
    }

    /// `ln(1 + e^x)`, evaluated stably for large |x|.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary("softplus", a, Op::Softplus(a.0), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, Op::Exp(a.0), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.node(a)?.value.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain { op: "log" });
        }
        self.unary("log", a, Op::Log(a.0), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, Op::Square(a.0), |v| v * v)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo <= hi) {
            return Err(Error::InvalidArgument(format!("clamp bounds [{lo}, {hi}]")));
        }
        self.unary("clamp", a, Op::Clamp(a.0, lo, hi), |v| v.clamp(lo, hi))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.node(a)?.value.data().iter().sum();
        self.record("sum", Tensor::scalar(s), Op::Sum(a.0), &[a])
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = &self.node(a)?.value;
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        self.record("mean", Tensor::scalar(s), Op::Mean(a.0), &[a])
    }

    /// Row sums: `(n, m) -> (n, 1)`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let x = &self.node(a)?.value;
        let (n, m) = x.dims2();
        let out = x.data().chunks(m).map(|r| r.iter().sum()).collect();
        let t = Tensor::new(vec![n, 1], out)?;
        self.record("sum_cols", t, Op::SumCols(a.0), &[a])
    }

    /// `(n, p) ++ (n, q) -> (n, p + q)`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        let ((n, p), (n2, q)) = (x.dims2(), y.dims2());
        if n != n2 || x.shape().len() != 2 || y.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(n * (p + q));
        for r in 0..n {
            out.extend_from_slice(x.row(r));
            out.extend_from_slice(y.row(r));
        }
        let t = Tensor::new(vec![n, p + q], out)?;
        self.record("concat_cols", t, Op::ConcatCols(a.0, b.0), &[a, b])
    }

    /// Reverse sweep from a scalar `loss`. Returns the gradient of every
    /// registered parameter, packed in registration order, and resets the
    /// graph.
    pub fn backward(&mut self, loss: Var) -> Result<ParamVector> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let shape = self.node(loss)?.value.shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss { shape });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        // A module bound twice in one graph registers its leaves twice under
        // the same names; those are one parameter, so their gradients add.
        let mut merged: Vec<(&str, Vec<usize>, Vec<f64>)> = Vec::new();
        for (idx, name) in &self.params {
            let shape = self.nodes[*idx].value.shape();
            let g = grads
                .get_mut(*idx)
                .and_then(Option::take)
                .unwrap_or_else(|| vec![0.0; shape.iter().product()]);
            match merged.iter_mut().find(|(n, _, _)| *n == name.as_str()) {
                Some((_, s, acc)) if s.as_slice() == shape => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                Some((_, s, _)) => {
                    return Err(Error::ShapeMismatch { op: "param", lhs: s.clone(), rhs: shape.to_vec() });
                }
                None => merged.push((name.as_str(), shape.to_vec(), g)),
            }
        }
        let mut out = ParamVector::empty();
        for (name, shape, g) in merged {
            out.push(name.to_string(), Tensor::new(shape, g)?);
        }
        self.clear();
        Ok(out)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let needs = |p: usize| nodes[p].requires_grad;
        let val = |p: usize| nodes[p].value.data();
        // accumulates into parent p, allocating its buffer on first use
        fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], p: usize) -> &'a mut Vec<f64> {
            grads[p].get_or_insert_with(|| vec![0.0; nodes[p].value.len()])
        }

        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = nodes[a].value.dims2();
                let m = nodes[b].value.dims2().1;
                if needs(a) {
                    let ga = acc(grads, nodes, a);
                    gemm(n, m, k, g, false, val(b), true, ga, 1.0);
                }
                if needs(b) {
                    let gb = acc(grads, nodes, b);
                    gemm(k, n, m, val(a), true, g, false, gb, 1.0);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if needs(a) {
                    for (x, &d) in acc(grads, nodes, a).iter_mut().zip(g) {
                        *x += d;
                    }
                }
                if needs(b) {
                    for (x, &d) in acc(grads, nodes, b).iter_mut().zip(g) {
                        *x += sign * d;
                    }
                }
            }
            Op::AddBias(a, b) => {
                if needs(a) {
                    for (x, &d) in acc(grads, nodes, a).iter_mut().zip(g) {
                        *x += d;
                    }
                }
                if needs(b) {
                    let m = nodes[b].value.len();
                    let gb = acc(grads, nodes, b);
                    for row in g.chunks(m) {
                        for (x, &d) in gb.iter_mut().zip(row) {
                            *x += d;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    let y = val(b);
                    for ((x, &d), &yv) in acc(grads, nodes, a).iter_mut().zip(g).zip(y) {
                        *x += d * yv;
                    }
                }
                if needs(b) {
                    let y = val(a);
                    for ((x, &d), &yv) in acc(grads, nodes, b).iter_mut().zip(g).zip(y) {
                        *x += d * yv;
                    }
                }
            }
            Op::Minimum(a, b) => {
                let (xa, xb) = (val(a), val(b));
                if needs(a) {
                    let ga = acc(grads, nodes, a);
                    for j in 0..g.len() {
                        if xa[j] <= xb[j] {
                            ga[j] += g[j];
                        }
                    }
                }
                if needs(b) {
                    let gb = acc(grads, nodes, b);
                    for j in 0..g.len() {
                        if xa[j] > xb[j] {
                            gb[j] += g[j];
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                for (x, &d) in acc(grads, nodes, a).iter_mut().zip(g) {
                    *x += c * d;
                }
            }
            Op::AddScalar(a) => {
                for (x, &d) in acc(grads, nodes, a).iter_mut().zip(g) {
                    *x += d;
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                for ((x, &d), &yv) in acc(grads, nodes, a).iter_mut().zip(g).zip(y) {
                    *x += d * (1.0 - yv * yv);
                }
            }
            Op::Relu(a) => {
                let xin = val(a);
                for ((x, &d), &v) in acc(grads, nodes, a).iter_mut().zip(g).zip(xin) {
                    if v > 0.0 {
                        *x += d;
                    }
                }
            }
            Op::Softplus(a) => {
                let xin = val(a);
                for ((x, &d), &v) in acc(grads, nodes, a).iter_mut().zip(g).zip(xin) {
                    *x += d * sigmoid(v);
                }
            }
            Op::Exp(a) => {
                let y = node.value.data();
                for ((x, &d), &yv) in acc(grads, nodes, a).iter_mut().zip(g).zip(y) {
                    *x += d * yv;
                }
            }
            Op::Log(a) => {
                let xin = val(a);
                for ((x, &d), &v) in acc(grads, nodes, a).iter_mut().zip(g).zip(xin) {
                    *x += d / v;
                }
            }
            Op::Square(a) => {
                let xin = val(a);
                for ((x, &d), &v) in acc(grads, nodes, a).iter_mut().zip(g).zip(xin) {
                    *x += 2.0 * v * d;
                }
            }
            Op::Sum(a) => {
                for x in acc(grads, nodes, a).iter_mut() {
                    *x += g[0];
                }
            }
            Op::Mean(a) => {
                let n = nodes[a].value.len() as f64;
                for x in acc(grads, nodes, a).iter_mut() {
                    *x += g[0] / n;
                }
            }
            Op::SumCols(a) => {
                let m = nodes[a].value.dims2().1;
                for (row, &d) in acc(grads, nodes, a).chunks_mut(m).zip(g) {
                    for x in row {
                        *x += d;
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let xin = val(a);
                for ((x, &d), &v) in acc(grads, nodes, a).iter_mut().zip(g).zip(xin) {
                    if v >= lo && v <= hi {
                        *x += d;
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let p = nodes[a].value.dims2().1;
                let q = nodes[b].value.dims2().1;
                if needs(a) {
                    let ga = acc(grads, nodes, a);
                    for (dst, src) in ga.chunks_mut(p).zip(g.chunks(p + q)) {
                        for (x, &d) in dst.iter_mut().zip(&src[..p]) {
                            *x += d;
                        }
                    }
                }
                if needs(b) {
                    let gb = acc(grads, nodes, b);
                    for (dst, src) in gb.chunks_mut(q).zip(g.chunks(p + q)) {
                        for (x, &d) in dst.iter_mut().zip(&src[p..]) {
                            *x += d;
                        }
                    }
                }
            }
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c = op(a) * op(b) + beta * c` with `op(a)` of shape `(m, k)` and `op(b)`
/// of shape `(k, n)`; `*_t` selects the transpose of the stored matrix.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the assertion above bounds every index dgemm can touch given
    // these dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
