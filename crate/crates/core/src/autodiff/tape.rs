use alloc::format;
use alloc::vec;
use alloc::vec::Vec;


use super::kernels::{self, log_sum_exp, matmul_acc, matmul_at_acc, matmul_bt_acc, sigmoid, softmax_into};
use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_id_for_tests(id: usize) -> Self {
        Var(id)
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
    Scale(Var, f64),
    AddScalar(Var, f64),
    MulScalar(Var, Var),
    Exp(Var),
    Ln(Var),
    Sigmoid(Var),
    Silu(Var),
    Clamp(Var, f64, f64),
    Transpose(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    CausalMask(Var),
    SliceRows { x: Var, start: usize, len: usize },
    SliceCols { x: Var, start: usize, len: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    NormalizeRows(Var),
    Sum(Var),
    Pick(Var, Vec<(usize, usize)>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => Vec::new(),
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | MulScalar(a, b) => {
                vec![*a, *b]
            }
            Scale(x, _) | AddScalar(x, _) | Exp(x) | Ln(x) | Sigmoid(x) | Silu(x)
            | Clamp(x, _, _) | Transpose(x) | Softmax(x) | LogSoftmax(x) | CausalMask(x)
            | MeanRows(x) | NormalizeRows(x) | Sum(x) | GatherRows(x, _) | Pick(x, _) => vec![*x],
            SliceRows { x, .. } | SliceCols { x, .. } => vec![*x],
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            ConcatRows(parts) | ConcatCols(parts) => parts.clone(),
        }
    }
}

/// Ordered record of primitive applications.
///
/// Values are immutable once recorded. A tape is single-threaded; finished
/// tapes may be shared read-only.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    tracks: Vec<bool>,
}

/// Gradients of one scalar root with respect to every node on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `var` does not influence the root or does not track gradients.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, zero-filled with the shape of `like` when absent.
    pub fn or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn zip(a: &Tensor, b: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.dims2()? != b.dims2()? {
        return Err(shape_err(op, a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

fn check_finite(op: &'static str, x: &Tensor) -> Result<()> {
    if let Some(i) = x.data().iter().position(|v| v.is_nan()) {
        return Err(Error::Numeric(format!("{op}: NaN input at flat index {i}")));
    }
    Ok(())
}

fn eval(op: &Op, values: &[Tensor]) -> Result<Tensor> {
    let v = |var: &Var| &values[var.0];
    Ok(match op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        Op::MatMul(a, b) => {
            let (a, b) = (v(a), v(b));
            let (m, k) = a.dims2()?;
            let (k2, n) = b.dims2()?;
            if k != k2 {
                return Err(shape_err("matmul", a, b));
            }
            let mut out = vec![0.0; m * n];
            matmul_acc(a.data(), b.data(), &mut out, m, k, n);
            Tensor::matrix(m, n, out)?
        }
        Op::Add(a, b) => zip(v(a), v(b), "add", |x, y| x + y)?,
        Op::Sub(a, b) => zip(v(a), v(b), "sub", |x, y| x - y)?,
        Op::Mul(a, b) => zip(v(a), v(b), "mul", |x, y| x * y)?,
        Op::AddRow(x, row) => {
            let (x, row) = (v(x), v(row));
            let (r, c) = x.dims2()?;
            if row.numel() != c {
                return Err(shape_err("add_row", x, row));
            }
            let mut out = x.data().to_vec();
            for i in 0..r {
                for (o, b) in out[i * c..(i + 1) * c].iter_mut().zip(row.data()) {
                    *o += b;
                }
            }
            Tensor::new(x.shape().to_vec(), out)?
        }
        Op::Scale(x, c) => map(v(x), |a| a * c),
        Op::AddScalar(x, c) => map(v(x), |a| a + c),
        Op::MulScalar(x, s) => {
            let (x, s) = (v(x), v(s));
            if s.numel() != 1 {
                return Err(shape_err("mul_scalar", x, s));
            }
            let s = s.item();
            map(x, |a| a * s)
        }
        Op::Exp(x) => map(v(x), libm::exp),
        Op::Ln(x) => map(v(x), libm::log),
        Op::Sigmoid(x) => map(v(x), sigmoid),
        Op::Silu(x) => map(v(x), |a| a * sigmoid(a)),
        Op::Clamp(x, lo, hi) => map(v(x), |a| a.max(*lo).min(*hi)),
        Op::Transpose(x) => {
            let x = v(x);
            let (r, c) = x.dims2()?;
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = x.data()[i * c + j];
                }
            }
            Tensor::matrix(c, r, out)?
        }
        Op::Softmax(x) => {
            let x = v(x);
            check_finite("softmax_row", x)?;
            let (r, c) = x.dims2()?;
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                softmax_into(&x.data()[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
            }
            Tensor::new(x.shape().to_vec(), out)?
        }
        Op::LogSoftmax(x) => {
            let x = v(x);
            check_finite("log_softmax_row", x)?;
            let (r, c) = x.dims2()?;
            let mut out = x.data().to_vec();
            for i in 0..r {
                let row = &mut out[i * c..(i + 1) * c];
                let lse = log_sum_exp(row);
                row.iter_mut().for_each(|a| *a -= lse);
            }
            Tensor::new(x.shape().to_vec(), out)?
        }
        Op::LayerNorm { x, gamma, beta, eps } => {
            let (x, g, b) = (v(x), v(gamma), v(beta));
            let (r, c) = x.dims2()?;
            if g.numel() != c || b.numel() != c {
                return Err(shape_err("layer_norm", x, g));
            }
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                let row = &x.data()[i * c..(i + 1) * c];
                let (mean, inv) = norm_stats(row, *eps);
                for j in 0..c {
                    out[i * c + j] = (row[j] - mean) * inv * g.data()[j] + b.data()[j];
                }
            }
            Tensor::new(x.shape().to_vec(), out)?
        }
        Op::CausalMask(x) => {
            let x = v(x);
            let (r, c) = x.dims2()?;
            let mut out = x.data().to_vec();
            for i in 0..r {
                for j in (i + 1)..c {
                    out[i * c + j] = f64::NEG_INFINITY;
                }
            }
            Tensor::new(x.shape().to_vec(), out)?
        }
        Op::SliceRows { x, start, len } => {
            let x = v(x);
            let (_, c) = x.dims2()?;
            Tensor::matrix(*len, c, x.data()[start * c..(start + len) * c].to_vec())?
        }
        Op::SliceCols { x, start, len } => {
            let x = v(x);
            let (r, c) = x.dims2()?;
            let mut out = Vec::with_capacity(r * len);
            for i in 0..r {
                out.extend_from_slice(&x.data()[i * c + start..i * c + start + len]);
            }
            Tensor::matrix(r, *len, out)?
        }
        Op::ConcatRows(parts) => {
            let c = v(&parts[0]).dims2()?.1;
            let mut out = Vec::new();
            let mut rows = 0;
            for p in parts {
                let t = v(p);
                let (r, pc) = t.dims2()?;
                if pc != c {
                    return Err(shape_err("concat_rows", v(&parts[0]), t));
                }
                rows += r;
                out.extend_from_slice(t.data());
            }
            Tensor::matrix(rows, c, out)?
        }
        Op::ConcatCols(parts) => {
            let r = v(&parts[0]).dims2()?.0;
            let mut total = 0;
            for p in parts {
                let t = v(p);
                let (pr, pc) = t.dims2()?;
                if pr != r {
                    return Err(shape_err("concat_cols", v(&parts[0]), t));
                }
                total += pc;
            }
            let mut out = Vec::with_capacity(r * total);
            for i in 0..r {
                for p in parts {
                    out.extend_from_slice(v(p).row(i));
                }
            }
            Tensor::matrix(r, total, out)?
        }
        Op::GatherRows(table, idx) => {
            let t = v(table);
            let (r, c) = t.dims2()?;
            let mut out = Vec::with_capacity(idx.len() * c);
            for &i in idx {
                if i >= r {
                    return Err(contract(format!("gather_rows: index {i} out of {r} rows")));
                }
                out.extend_from_slice(t.row(i));
            }
            Tensor::matrix(idx.len(), c, out)?
        }
        Op::MeanRows(x) => {
            let x = v(x);
            let (r, c) = x.dims2()?;
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (o, a) in out.iter_mut().zip(x.row(i)) {
                    *o += a;
                }
            }
            out.iter_mut().for_each(|o| *o /= r as f64);
            Tensor::matrix(1, c, out)?
        }
        Op::NormalizeRows(x) => {
            let x = v(x);
            let (r, c) = x.dims2()?;
            let mut out = x.data().to_vec();
            for i in 0..r {
                let row = &mut out[i * c..(i + 1) * c];
                let norm = libm::sqrt(kernels::dot(row, row));
                if norm == 0.0 {
                    return Err(Error::Numeric(format!("normalize_rows: zero-norm row {i}")));
                }
                row.iter_mut().for_each(|a| *a /= norm);
            }
            Tensor::new(x.shape().to_vec(), out)?
        }
        Op::Sum(x) => Tensor::scalar(v(x).data().iter().sum()),
        Op::Pick(x, idx) => {
            let x = v(x);
            let (r, c) = x.dims2()?;
            let mut out = Vec::with_capacity(idx.len());
            for &(i, j) in idx {
                if i >= r || j >= c {
                    return Err(contract(format!("pick: ({i}, {j}) outside {r}x{c}")));
                }
                out.push(x.data()[i * c + j]);
            }
            Tensor::new(vec![idx.len()], out)?
        }
    })
}

fn norm_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    (mean, 1.0 / libm::sqrt(var + eps))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Leaf whose gradient is tracked.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf treated as a constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, tracks: bool) -> Var {
        self.ops.push(Op::Leaf);
        self.values.push(value);
        self.tracks.push(tracks);
        Var(self.ops.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.values[var.0]
    }

    pub fn tracks(&self, var: Var) -> bool {
        self.tracks[var.0]
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = eval(&op, &self.values)?;
        let tracks = op.inputs().iter().any(|i| self.tracks[i.0]);
        self.ops.push(op);
        self.values.push(value);
        self.tracks.push(tracks);
        Ok(Var(self.ops.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    /// Adds a length-`d` row to every row of an `n × d` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.push(Op::AddRow(x, row))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.push(Op::AddScalar(x, c))
    }

    /// Multiplies every entry by a one-element tensor on the tape.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        self.push(Op::MulScalar(x, s))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Ln(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sigmoid(x))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Silu(x))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.push(Op::Clamp(x, lo, hi))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Transpose(x))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_row(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Softmax(x))
    }

    pub fn log_softmax_row(&mut self, x: Var) -> Result<Var> {
        self.push(Op::LogSoftmax(x))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if !(eps >= 0.0) {
            return Err(contract("layer_norm: eps must be non-negative"));
        }
        self.push(Op::LayerNorm { x, gamma, beta, eps })
    }

    /// Sets strictly-upper entries to `-inf`.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        self.push(Op::CausalMask(x))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.values[x.0].dims2()?;
        if len == 0 || start + len > r {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: vec![r, c],
                rhs: vec![start, len],
            });
        }
        self.push(Op::SliceRows { x, start, len })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.values[x.0].dims2()?;
        if len == 0 || start + len > c {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: vec![r, c],
                rhs: vec![start, len],
            });
        }
        self.push(Op::SliceCols { x, start, len })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(contract("concat_rows: no parts"));
        }
        self.push(Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(contract("concat_cols: no parts"));
        }
        self.push(Op::ConcatCols(parts.to_vec()))
    }

    /// Embedding lookup: row `idx[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        if idx.is_empty() {
            return Err(contract("gather_rows: no indices"));
        }
        self.push(Op::GatherRows(table, idx.to_vec()))
    }

    /// `n × d` → `1 × d` column means.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        self.push(Op::MeanRows(x))
    }

    /// Scales each row to unit L2 norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        self.push(Op::NormalizeRows(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sum(x))
    }

    /// Gathers individual `(row, col)` entries into a vector.
    pub fn pick(&mut self, x: Var, idx: &[(usize, usize)]) -> Result<Var> {
        if idx.is_empty() {
            return Err(contract("pick: no indices"));
        }
        self.push(Op::Pick(x, idx.to_vec()))
    }

    /// Re-evaluates every node from the recorded leaves and reports whether
    /// all values match the recorded ones bit for bit.
    pub fn replay(&self) -> Result<bool> {
        let mut fresh: Vec<Tensor> = Vec::with_capacity(self.values.len());
        for (i, op) in self.ops.iter().enumerate() {
            let value = match op {
                Op::Leaf => self.values[i].clone(),
                _ => eval(op, &fresh)?,
            };
            fresh.push(value);
        }
        Ok(fresh
            .iter()
            .zip(&self.values)
            .all(|(a, b)| a.shape() == b.shape() && bits_equal(a.data(), b.data())))
    }

    /// Reverse sweep from a one-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let numel = self.values[root.0].numel();
        if numel != 1 {
            return Err(contract(format!("backward: root has {numel} elements, expected a scalar")));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            if !self.tracks[id] {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::new(self.values[i].shape().to_vec(), g).expect("grad shape")))
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: &Var| &self.values[v.0];
        let out = &self.values[id];
        let mut acc = |v: &Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.tracks[v.0] {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.values[v.0].numel()]);
            f(slot);
        };
        match &self.ops[id] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(a).dims2().expect("2d");
                let n = val(b).cols();
                let (ad, bd) = (val(a).data(), val(b).data());
                acc(a, &mut |da| matmul_bt_acc(g, bd, da, m, n, k));
                acc(b, &mut |db| matmul_at_acc(ad, g, db, m, k, n));
            }
            Op::Add(a, b) => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(a).data(), val(b).data());
                acc(a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bd[i];
                    }
                });
                acc(b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * ad[i];
                    }
                });
            }
            Op::AddRow(x, row) => {
                let c = val(row).numel();
                acc(x, &mut |d| add_into(d, g));
                acc(row, &mut |d| {
                    for chunk in g.chunks(c) {
                        add_into(d, chunk);
                    }
                });
            }
            Op::Scale(x, c) => acc(x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g)),
            Op::AddScalar(x, _) => acc(x, &mut |d| add_into(d, g)),
            Op::MulScalar(x, s) => {
                let sv = val(s).item();
                let xd = val(x).data();
                acc(x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += sv * g));
                acc(s, &mut |d| d[0] += kernels::dot(g, xd));
            }
            Op::Exp(x) => acc(x, &mut |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * out.data()[i];
                }
            }),
            Op::Ln(x) => {
                let xd = val(x).data();
                acc(x, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] / xd[i];
                    }
                })
            }
            Op::Sigmoid(x) => acc(x, &mut |d| {
                for i in 0..d.len() {
                    let y = out.data()[i];
                    d[i] += g[i] * y * (1.0 - y);
                }
            }),
            Op::Silu(x) => {
                let xd = val(x).data();
                acc(x, &mut |d| {
                    for i in 0..d.len() {
                        let s = sigmoid(xd[i]);
                        d[i] += g[i] * s * (1.0 + xd[i] * (1.0 - s));
                    }
                })
            }
            Op::Clamp(x, lo, hi) => {
                let xd = val(x).data();
                acc(x, &mut |d| {
                    for i in 0..d.len() {
                        if xd[i] >= *lo && xd[i] <= *hi {
                            d[i] += g[i];
                        }
                    }
                })
            }
            Op::Transpose(x) => {
                let (r, c) = val(x).dims2().expect("2d");
                acc(x, &mut |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                })
            }
            Op::Softmax(x) => {
                let c = out.cols();
                acc(x, &mut |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(out.data().chunks(c)) {
                        let s = kernels::dot(grow, yrow);
                        for j in 0..c {
                            drow[j] += yrow[j] * (grow[j] - s);
                        }
                    }
                })
            }
            Op::LogSoftmax(x) => {
                let c = out.cols();
                acc(x, &mut |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(out.data().chunks(c)) {
                        let s: f64 = grow.iter().sum();
                        for j in 0..c {
                            drow[j] += grow[j] - libm::exp(yrow[j]) * s;
                        }
                    }
                })
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (r, c) = val(x).dims2().expect("2d");
                let xd = val(x).data();
                let gd = val(gamma).data();
                let mut dx = vec![0.0; r * c];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut xhat = vec![0.0; c];
                let mut dxhat = vec![0.0; c];
                for i in 0..r {
                    let row = &xd[i * c..(i + 1) * c];
                    let grow = &g[i * c..(i + 1) * c];
                    let (mean, inv) = norm_stats(row, *eps);
                    for j in 0..c {
                        xhat[j] = (row[j] - mean) * inv;
                        dxhat[j] = grow[j] * gd[j];
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                    }
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dx: f64 = kernels::dot(&dxhat, &xhat);
                    let n = c as f64;
                    for j in 0..c {
                        dx[i * c + j] = inv / n * (n * dxhat[j] - sum_d - xhat[j] * sum_dx);
                    }
                }
                acc(x, &mut |d| add_into(d, &dx));
                acc(gamma, &mut |d| add_into(d, &dgamma));
                acc(beta, &mut |d| add_into(d, &dbeta));
            }
            Op::CausalMask(x) => {
                let (r, c) = out.dims2().expect("2d");
                acc(x, &mut |d| {
                    for i in 0..r {
                        for j in 0..=i.min(c - 1) {
                            d[i * c + j] += g[i * c + j];
                        }
                    }
                })
            }
            Op::SliceRows { x, start, .. } => {
                let c = out.cols();
                acc(x, &mut |d| add_into(&mut d[start * c..start * c + g.len()], g))
            }
            Op::SliceCols { x, start, len } => {
                let c = val(x).cols();
                acc(x, &mut |d| {
                    for (i, grow) in g.chunks(*len).enumerate() {
                        add_into(&mut d[i * c + start..i * c + start + len], grow);
                    }
                })
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(p).numel();
                    acc(p, &mut |d| add_into(d, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let pc = val(p).cols();
                    acc(p, &mut |d| {
                        for (i, drow) in d.chunks_mut(pc).enumerate() {
                            add_into(drow, &g[i * total + offset..i * total + offset + pc]);
                        }
                    });
                    offset += pc;
                }
            }
            Op::GatherRows(table, idx) => {
                let c = out.cols();
                acc(table, &mut |d| {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut d[i * c..(i + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                })
            }
            Op::MeanRows(x) => {
                let r = val(x).rows() as f64;
                acc(x, &mut |d| {
                    for drow in d.chunks_mut(g.len()) {
                        drow.iter_mut().zip(g).for_each(|(d, g)| *d += g / r);
                    }
                })
            }
            Op::NormalizeRows(x) => {
                let c = out.cols();
                let xd = val(x).data();
                acc(x, &mut |d| {
                    for i in 0..d.len() / c {
                        let xrow = &xd[i * c..(i + 1) * c];
                        let yrow = &out.data()[i * c..(i + 1) * c];
                        let grow = &g[i * c..(i + 1) * c];
                        let norm = libm::sqrt(kernels::dot(xrow, xrow));
                        let yg = kernels::dot(yrow, grow);
                        for j in 0..c {
                            d[i * c + j] += (grow[j] - yrow[j] * yg) / norm;
                        }
                    }
                })
            }
            Op::Sum(x) => acc(x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Pick(x, idx) => {
                let c = val(x).cols();
                acc(x, &mut |d| {
                    for (k, &(i, j)) in idx.iter().enumerate() {
                        d[i * c + j] += g[k];
                    }
                })
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn bits_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}
