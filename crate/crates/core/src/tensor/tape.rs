use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var, f64),
    LogSoftmax(Var, f64),
    Sum(Var),
    SumRows(Var),
    SelectRow(Var, usize),
    SelectCols(Var, Vec<usize>),
    StackCols(Vec<Var>),
    LogSumExpRows(Var),
    Bce(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Probabilities are clamped into `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-12;

/// Define-by-run computation record.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep. Leaf gradients
/// accumulate across repeated `backward` calls until [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

fn is_scalar(shape: &[usize]) -> bool {
    shape.iter().product::<usize>() == 1
}

fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

/// `c = a·b + beta·c` for strided row/column views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller passes slices whose extents cover the strided views;
    // all callers below derive strides from the validated shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn broadcast_binary(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.len() == b.len() {
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    } else if b.len() == 1 {
        a.iter().map(|&x| f(x, b[0])).collect()
    } else {
        b.iter().map(|&y| f(a[0], y)).collect()
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    dst.get_or_insert_with(|| vec![0.0; len])
}

/// Accumulates a gradient contribution that may need reducing onto a scalar.
fn reduce_into(dst: &mut Option<Vec<f64>>, target_len: usize, g: impl Iterator<Item = f64>) {
    let buf = add_into(dst, target_len);
    if target_len == 1 {
        buf[0] += g.sum::<f64>();
    } else {
        buf.iter_mut().zip(g).for_each(|(d, v)| *d += v);
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        needs_grad: bool,
    ) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        Ok(self.push(shape, value, op, needs_grad))
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a tensor as a leaf; it receives gradients iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    /// Records a value that never receives gradients.
    pub fn constant(&mut self, tensor: &Tensor) -> Var {
        self.push(tensor.shape().to_vec(), tensor.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.constant(&t))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let n = self.node(v);
        if n.value.len() != 1 {
            return Err(Error::contract(format!(
                "expected scalar, got shape {:?}",
                n.shape
            )));
        }
        Ok(n.value[0])
    }

    /// Copies a node's value out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape nodes hold valid shapes")
    }

    /// Gradient accumulated for a leaf by previous `backward` calls.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    // ---- forward ops -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = as_matrix(self.shape(a))
            .ok_or_else(|| Error::dim(format!("matmul lhs shape {:?}", self.shape(a))))?;
        let (k2, n) = as_matrix(self.shape(b))
            .ok_or_else(|| Error::dim(format!("matmul rhs shape {:?}", self.shape(b))))?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions {m}x{k} · {k2}x{n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            k,
            1,
            self.value(b),
            n,
            1,
            0.0,
            &mut out,
        );
        let ng = self.ng(a) || self.ng(b);
        self.push_checked("matmul", vec![m, n], out, Op::MatMul(a, b), ng)
    }

    fn binary_shape(&self, a: Var, b: Var, name: &str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb || is_scalar(sb) {
            Ok(sa.to_vec())
        } else if is_scalar(sa) {
            Ok(sb.to_vec())
        } else {
            Err(Error::dim(format!("{name}: shapes {sa:?} and {sb:?}")))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape(a, b, "add")?;
        let v = broadcast_binary(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push_checked("add", shape, v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape(a, b, "sub")?;
        let v = broadcast_binary(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push_checked("sub", shape, v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape(a, b, "mul")?;
        let v = broadcast_binary(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push_checked("mul", shape, v, Op::Mul(a, b), ng)
    }

    fn row_shape(&self, a: Var, b: Var, name: &str) -> Result<(usize, usize)> {
        let (m, n) = as_matrix(self.shape(a))
            .ok_or_else(|| Error::dim(format!("{name}: lhs shape {:?}", self.shape(a))))?;
        if self.value(b).len() != n {
            return Err(Error::dim(format!(
                "{name}: row of length {} against {m}x{n}",
                self.value(b).len()
            )));
        }
        Ok((m, n))
    }

    /// `a[i, j] + b[j]`: adds a row vector to every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.row_shape(a, b, "add_row")?;
        let (va, vb) = (self.value(a), self.value(b));
        let v = (0..m * n).map(|i| va[i] + vb[i % n]).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push_checked("add_row", vec![m, n], v, Op::AddRow(a, b), ng)
    }

    /// `a[i, j] * b[j]`: scales every row by a row vector.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.row_shape(a, b, "mul_row")?;
        let (va, vb) = (self.value(a), self.value(b));
        let v = (0..m * n).map(|i| va[i] * vb[i % n]).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push_checked("mul_row", vec![m, n], v, Op::MulRow(a, b), ng)
    }

    /// `scale * a + shift` with constant `scale` and `shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let v = self.value(a).iter().map(|x| scale * x + shift).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        self.push_checked("affine", shape, v, Op::Affine(a, scale), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.affine(a, s, 0.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.affine(a, 1.0, s)
    }

    fn unary(
        &mut self,
        a: Var,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let v = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        self.push_checked(name, shape, v, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "relu", |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sigmoid", sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        self.unary(a, "log", f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    fn rowwise(
        &mut self,
        a: Var,
        temperature: f64,
        name: &'static str,
        log: bool,
    ) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::contract(format!(
                "{name}: temperature must be positive, got {temperature}"
            )));
        }
        let (m, n) = as_matrix(self.shape(a))
            .ok_or_else(|| Error::dim(format!("{name}: shape {:?}", self.shape(a))))?;
        let x = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let o = &mut out[i * n..(i + 1) * n];
            if log {
                log_softmax_row(row, temperature, o);
            } else {
                softmax_row(row, temperature, o);
            }
        }
        let ng = self.ng(a);
        let op = if log {
            Op::LogSoftmax(a, temperature)
        } else {
            Op::Softmax(a, temperature)
        };
        self.push_checked(name, vec![m, n], out, op, ng)
    }

    /// Row softmax of `logits / temperature`.
    pub fn softmax(&mut self, a: Var, temperature: f64) -> Result<Var> {
        self.rowwise(a, temperature, "softmax", false)
    }

    /// Row log-softmax of `logits / temperature`.
    pub fn log_softmax(&mut self, a: Var, temperature: f64) -> Result<Var> {
        self.rowwise(a, temperature, "log_softmax", true)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        let ng = self.ng(a);
        self.push_checked("sum", vec![1], vec![s], Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Per-row sums of a matrix: `[m, n] -> [m]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = as_matrix(self.shape(a))
            .ok_or_else(|| Error::dim(format!("sum_rows: shape {:?}", self.shape(a))))?;
        let x = self.value(a);
        let v = (0..m).map(|i| x[i * n..(i + 1) * n].iter().sum()).collect();
        let ng = self.ng(a);
        self.push_checked("sum_rows", vec![m], v, Op::SumRows(a), ng)
    }

    pub fn select_row(&mut self, a: Var, row: usize) -> Result<Var> {
        let (m, n) = as_matrix(self.shape(a))
            .ok_or_else(|| Error::dim(format!("select_row: shape {:?}", self.shape(a))))?;
        if row >= m {
            return Err(Error::dim(format!("select_row: row {row} of {m}")));
        }
        let v = self.value(a)[row * n..(row + 1) * n].to_vec();
        let ng = self.ng(a);
        self.push_checked("select_row", vec![n], v, Op::SelectRow(a, row), ng)
    }

    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let (m, n) = as_matrix(self.shape(a))
            .ok_or_else(|| Error::dim(format!("select_cols: shape {:?}", self.shape(a))))?;
        if cols.is_empty() {
            return Err(Error::dim("select_cols: empty column set"));
        }
        if let Some(&c) = cols.iter().find(|&&c| c >= n) {
            return Err(Error::dim(format!("select_cols: column {c} of {n}")));
        }
        let x = self.value(a);
        let k = cols.len();
        let mut v = Vec::with_capacity(m * k);
        for i in 0..m {
            v.extend(cols.iter().map(|&c| x[i * n + c]));
        }
        let ng = self.ng(a);
        self.push_checked(
            "select_cols",
            vec![m, k],
            v,
            Op::SelectCols(a, cols.to_vec()),
            ng,
        )
    }

    /// Stacks `k` vectors of length `m` as the columns of an `[m, k]` matrix.
    pub fn stack_cols(&mut self, cols: &[Var]) -> Result<Var> {
        let first = *cols
            .first()
            .ok_or_else(|| Error::dim("stack_cols: no columns"))?;
        let m = self.value(first).len();
        if cols.iter().any(|&c| self.shape(c) != [m]) {
            return Err(Error::dim("stack_cols: columns must be vectors of equal length"));
        }
        let k = cols.len();
        let mut v = vec![0.0; m * k];
        for (j, &c) in cols.iter().enumerate() {
            for (i, x) in self.value(c).iter().enumerate() {
                v[i * k + j] = *x;
            }
        }
        let ng = cols.iter().any(|&c| self.ng(c));
        self.push_checked("stack_cols", vec![m, k], v, Op::StackCols(cols.to_vec()), ng)
    }

    /// Per-row log-sum-exp: `[m, n] -> [m]`, max-shifted.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = as_matrix(self.shape(a))
            .ok_or_else(|| Error::dim(format!("logsumexp_rows: shape {:?}", self.shape(a))))?;
        let x = self.value(a);
        let v = (0..m).map(|i| logsumexp(&x[i * n..(i + 1) * n])).collect();
        let ng = self.ng(a);
        self.push_checked("logsumexp_rows", vec![m], v, Op::LogSumExpRows(a), ng)
    }

    /// Elementwise Bernoulli negative log-likelihood of `targets` under probabilities `p`.
    pub fn bce(&mut self, p: Var, targets: &[f64]) -> Result<Var> {
        if targets.len() != self.value(p).len() {
            return Err(Error::dim(format!(
                "bce: {} targets for {} predictions",
                targets.len(),
                self.value(p).len()
            )));
        }
        if let Some(t) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Domain(format!("bernoulli target {t} outside [0, 1]")));
        }
        let v = self
            .value(p)
            .iter()
            .zip(targets)
            .map(|(&p, &t)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .collect();
        let shape = self.shape(p).to_vec();
        let ng = self.ng(p);
        self.push_checked("bce", shape, v, Op::Bce(p, targets.to_vec()), ng)
    }

    // ---- backward ----------------------------------------------------

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradient slots.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let slot = add_into(&mut self.leaf_grads[id], g.len());
                slot.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = as_matrix(self.shape(*a)).unwrap();
                let n = self.shape(*b)[1];
                if self.ng(*a) {
                    let da = add_into(&mut grads[a.0], m * k);
                    // dA = G · Bᵀ
                    gemm(m, n, k, g, n, 1, self.value(*b), 1, n, 1.0, da);
                }
                if self.ng(*b) {
                    let db = add_into(&mut grads[b.0], k * n);
                    // dB = Aᵀ · G
                    gemm(k, m, n, self.value(*a), 1, k, g, n, 1, 1.0, db);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.ng(*a) {
                    let la = self.value(*a).len();
                    reduce_into(&mut grads[a.0], la, g.iter().copied());
                }
                if self.ng(*b) {
                    let lb = self.value(*b).len();
                    reduce_into(&mut grads[b.0], lb, g.iter().map(|v| sign * v));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let other = |i: usize, v: &[f64]| if v.len() == 1 { v[0] } else { v[i] };
                if self.ng(*a) {
                    reduce_into(
                        &mut grads[a.0],
                        va.len(),
                        g.iter().enumerate().map(|(i, gi)| gi * other(i, vb)),
                    );
                }
                if self.ng(*b) {
                    reduce_into(
                        &mut grads[b.0],
                        vb.len(),
                        g.iter().enumerate().map(|(i, gi)| gi * other(i, va)),
                    );
                }
            }
            Op::AddRow(a, b) => {
                let n = self.value(*b).len();
                if self.ng(*a) {
                    let da = add_into(&mut grads[a.0], g.len());
                    da.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if self.ng(*b) {
                    let db = add_into(&mut grads[b.0], n);
                    for (i, v) in g.iter().enumerate() {
                        db[i % n] += v;
                    }
                }
            }
            Op::MulRow(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let n = vb.len();
                if self.ng(*a) {
                    let da = add_into(&mut grads[a.0], g.len());
                    for (i, v) in g.iter().enumerate() {
                        da[i] += v * vb[i % n];
                    }
                }
                if self.ng(*b) {
                    let db = add_into(&mut grads[b.0], n);
                    for (i, v) in g.iter().enumerate() {
                        db[i % n] += v * va[i];
                    }
                }
            }
            Op::Affine(a, scale) => {
                let da = add_into(&mut grads[a.0], g.len());
                da.iter_mut().zip(g).for_each(|(d, v)| *d += scale * v);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let da = add_into(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    if x[i] > 0.0 {
                        da[i] += g[i];
                    }
                }
            }
            Op::Sigmoid(a) => {
                let da = add_into(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    da[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
            Op::Exp(a) => {
                let da = add_into(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    da[i] += g[i] * y[i];
                }
            }
            Op::Log(a) => {
                let x = self.value(*a);
                let da = add_into(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    da[i] += g[i] / x[i];
                }
            }
            Op::Softmax(a, t) => {
                let n = node.shape[1];
                let da = add_into(&mut grads[a.0], g.len());
                for (gr, (yr, dr)) in g
                    .chunks(n)
                    .zip(y.chunks(n).zip(da.chunks_mut(n)))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dr[j] += yr[j] * (gr[j] - dot) / t;
                    }
                }
            }
            Op::LogSoftmax(a, t) => {
                let n = node.shape[1];
                let da = add_into(&mut grads[a.0], g.len());
                for (gr, (yr, dr)) in g
                    .chunks(n)
                    .zip(y.chunks(n).zip(da.chunks_mut(n)))
                {
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..n {
                        dr[j] += (gr[j] - yr[j].exp() * gsum) / t;
                    }
                }
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                let da = add_into(&mut grads[a.0], len);
                da.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::SumRows(a) => {
                let n = self.shape(*a)[1];
                let len = self.value(*a).len();
                let da = add_into(&mut grads[a.0], len);
                for (i, d) in da.iter_mut().enumerate() {
                    *d += g[i / n];
                }
            }
            Op::SelectRow(a, row) => {
                let n = g.len();
                let len = self.value(*a).len();
                let da = add_into(&mut grads[a.0], len);
                for j in 0..n {
                    da[row * n + j] += g[j];
                }
            }
            Op::SelectCols(a, cols) => {
                let n = self.shape(*a)[1];
                let k = cols.len();
                let len = self.value(*a).len();
                let da = add_into(&mut grads[a.0], len);
                for (idx, v) in g.iter().enumerate() {
                    let (i, j) = (idx / k, idx % k);
                    da[i * n + cols[j]] += v;
                }
            }
            Op::StackCols(cols) => {
                let k = cols.len();
                for (j, c) in cols.iter().enumerate() {
                    if !self.ng(*c) {
                        continue;
                    }
                    let m = self.value(*c).len();
                    let dc = add_into(&mut grads[c.0], m);
                    for i in 0..m {
                        dc[i] += g[i * k + j];
                    }
                }
            }
            Op::LogSumExpRows(a) => {
                let x = self.value(*a);
                let n = self.shape(*a)[1];
                let len = x.len();
                let da = add_into(&mut grads[a.0], len);
                for (i, (gi, lse)) in g.iter().zip(y).enumerate() {
                    for j in 0..n {
                        da[i * n + j] += gi * (x[i * n + j] - lse).exp();
                    }
                }
            }
            Op::Bce(p, targets) => {
                let pv = self.value(*p);
                let dp = add_into(&mut grads[p.0], g.len());
                for i in 0..g.len() {
                    let pi = pv[i];
                    if pi > BCE_EPS && pi < 1.0 - BCE_EPS {
                        dp[i] += g[i] * (pi - targets[i]) / (pi * (1.0 - pi));
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted log-sum-exp of a slice.
pub fn logsumexp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_row(row: &[f64], temperature: f64, out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = ((x - max) / temperature).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

pub(crate) fn log_softmax_row(row: &[f64], temperature: f64, out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row
        .iter()
        .map(|&x| ((x - max) / temperature).exp())
        .sum::<f64>()
        .ln();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max) / temperature - lse;
    }
}
