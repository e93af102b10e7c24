//! Reverse-mode differentiation over matrix-valued operations.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s together with
//! the state needed for the backward pass. Leaves are either parameters
//! (gradients wanted) or constants (never differentiated). Calling
//! [`Tape::backward`] on a 1×1 output walks the record in reverse and
//! accumulates a gradient for every node that depends on a parameter.
//!
//! Subgraphs built only from constants are skipped during the backward pass,
//! which is also how gradient flow is cut: a value wrapped as a constant (or
//! consumed by an op that treats an input as fixed, like the teacher side of
//! [`Tape::kl_distillation`]) receives nothing.

use super::matrix::{log_softmax_row, softmax_into};
use super::{Matrix, NumericsError, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    Relu(Var),
    Softmax { x: Var, root_scale: T },
    Concat(Var, Var),
    SliceCols { x: Var, start: usize },
    VStack(Vec<Var>),
    GatherRows { x: Var, indices: Vec<usize> },
    LayerNorm { x: Var, inv_std: Vec<T> },
    MeanRows(Var),
    Sum(Var),
    WeightedSum { x: Var, weights: Matrix<T> },
    CrossEntropy { logits: Var, probs: Matrix<T>, targets: Vec<usize>, valid: Vec<bool>, count: usize },
    KlDistill { student: Var, teacher_probs: Matrix<T>, student_probs: Matrix<T>, valid: Vec<bool>, count: usize, temperature: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `var`, or `None` if the loss does
    /// not depend on it through any differentiable path.
    pub fn get(&self, var: Var) -> Option<&Matrix<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Like [`get`](Self::get) but yields explicit zeros of the given shape.
    pub fn get_or_zeros(&self, var: Var, shape: (usize, usize)) -> Matrix<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable leaf.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.get(0, 0)
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_transposed(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).matmul_transposed(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMulT(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).sub(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).hadamard(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Hadamard(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).scale(factor);
        let ng = self.needs(&[a]);
        self.push(value, Op::Scale(a, factor), ng)
    }

    /// Adds a 1×n row to every row of an m×n matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(NumericsError::DimensionMismatch {
                op: "add_row",
                left: x.shape(),
                right: b.shape(),
            });
        }
        let mut value = x.clone();
        for r in 0..value.rows() {
            for (v, &bv) in value.row_mut(r).iter_mut().zip(b.row(0)) {
                *v = *v + bv;
            }
        }
        let ng = self.needs(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(T::zero()));
        let ng = self.needs(&[a]);
        self.push(value, Op::Relu(a), ng)
    }

    /// Row-wise `softmax(x / √scale)`. With a mask (row-major, `true` =
    /// attend), disallowed entries come out as exactly zero.
    pub fn softmax_rows(
        &mut self,
        x: Var,
        scale: T,
        mask: Option<&[bool]>,
    ) -> Result<Var, NumericsError> {
        if !(scale > T::zero()) {
            return Err(NumericsError::NonPositiveScale(
                scale.to_f64().unwrap_or(f64::NAN),
            ));
        }
        let input = self.value(x);
        let (rows, cols) = input.shape();
        if cols == 0 {
            return Err(NumericsError::EmptyInput("softmax_rows"));
        }
        if let Some(m) = mask {
            if m.len() != rows * cols {
                return Err(NumericsError::DimensionMismatch {
                    op: "softmax_rows mask",
                    left: (rows, cols),
                    right: (m.len(), 1),
                });
            }
        }
        let root_scale = scale.sqrt();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let allowed = mask.map(|m| &m[r * cols..(r + 1) * cols]);
            let src = input.row(r).to_vec();
            let finite = match allowed {
                Some(a) => src.iter().zip(a).all(|(v, &ok)| !ok || v.is_finite()),
                None => src.iter().all(|v| v.is_finite()),
            };
            if !finite {
                return Err(NumericsError::NonFinite("softmax_rows"));
            }
            if !softmax_into(&src, allowed, root_scale, value.row_mut(r)) {
                return Err(NumericsError::EmptyInput("softmax_rows: fully masked row"));
            }
        }
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::Softmax { x, root_scale }, ng))
    }

    /// Row-wise concatenation: row t of the result is row t of `a` followed by
    /// row t of `b`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).concat_rows(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Concat(a, b), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let value = self.value(x).slice_cols(start, len)?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::SliceCols { x, start }, ng))
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::vstack(&mats)?;
        let ng = self.needs(parts);
        Ok(self.push(value, Op::VStack(parts.to_vec()), ng))
    }

    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let value = self.value(x).gather_rows(indices)?;
        let ng = self.needs(&[x]);
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    /// Per-row `(x − mean) / sqrt(var + eps)`, no affine terms. A constant row
    /// (in particular the zero vector) maps to zeros.
    pub fn layer_norm(&mut self, x: Var, eps: T) -> Var {
        let input = self.value(x);
        let (rows, cols) = input.shape();
        let n = T::from_usize(cols.max(1)).unwrap();
        let mut value = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = input.row(r);
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
            let var = row
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                / n;
            let s = T::one() / (var + eps).sqrt();
            for (o, &v) in value.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
            inv_std.push(s);
        }
        let ng = self.needs(&[x]);
        self.push(value, Op::LayerNorm { x, inv_std }, ng)
    }

    /// Column means as a 1×cols row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let value = self.value(x).mean_rows();
        let ng = self.needs(&[x]);
        self.push(value, Op::MeanRows(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(x).sum());
        let ng = self.needs(&[x]);
        self.push(value, Op::Sum(x), ng)
    }

    /// `Σ weights ⊙ x` as a 1×1 node.
    pub fn weighted_sum(&mut self, x: Var, weights: &Matrix<T>) -> Result<Var, NumericsError> {
        let total = self.value(x).hadamard(weights)?.sum();
        let ng = self.needs(&[x]);
        Ok(self.push(
            Matrix::filled(1, 1, total),
            Op::WeightedSum {
                x,
                weights: weights.clone(),
            },
            ng,
        ))
    }

    /// Mean over positions whose target differs from `pad` of
    /// `−log softmax(logits[l])[targets[l]]`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        pad: usize,
    ) -> Result<Var, NumericsError> {
        let z = self.value(logits);
        let (rows, cols) = z.shape();
        if targets.len() != rows {
            return Err(NumericsError::LengthMismatch {
                expected: rows,
                actual: targets.len(),
            });
        }
        let valid: Vec<bool> = targets.iter().map(|&t| t != pad).collect();
        let count = valid.iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(NumericsError::AllPadded);
        }
        let mut probs = Matrix::zeros(rows, cols);
        let mut loss = T::zero();
        for r in 0..rows {
            let t = targets[r];
            if t >= cols {
                return Err(NumericsError::IndexOutOfRange { index: t, len: cols });
            }
            let logp = log_softmax_row(z.row(r), T::one());
            for (p, &lp) in probs.row_mut(r).iter_mut().zip(&logp) {
                *p = lp.exp();
            }
            if valid[r] {
                loss = loss - logp[t];
            }
        }
        loss = loss / T::from_usize(count).unwrap();
        let ng = self.needs(&[logits]);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                valid,
                count,
            },
            ng,
        ))
    }

    /// `τ² · mean_l KL(softmax(teacher_l/τ) ‖ softmax(student_l/τ))` over rows
    /// where `valid[l]` holds. The teacher side is read as a fixed target: no
    /// gradient reaches `teacher`.
    pub fn kl_distillation(
        &mut self,
        student: Var,
        teacher: Var,
        temperature: T,
        valid: &[bool],
    ) -> Result<Var, NumericsError> {
        let (s, t) = (self.value(student), self.value(teacher));
        if s.shape() != t.shape() {
            return Err(NumericsError::DimensionMismatch {
                op: "kl_distillation",
                left: s.shape(),
                right: t.shape(),
            });
        }
        if !(temperature > T::zero()) {
            return Err(NumericsError::NonPositiveScale(
                temperature.to_f64().unwrap_or(f64::NAN),
            ));
        }
        let (rows, cols) = s.shape();
        if valid.len() != rows {
            return Err(NumericsError::LengthMismatch {
                expected: rows,
                actual: valid.len(),
            });
        }
        let count = valid.iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(NumericsError::AllPadded);
        }
        let mut teacher_probs = Matrix::zeros(rows, cols);
        let mut student_probs = Matrix::zeros(rows, cols);
        let mut total = T::zero();
        for r in 0..rows {
            let lp = log_softmax_row(t.row(r), temperature);
            let lq = log_softmax_row(s.row(r), temperature);
            let mut kl = T::zero();
            for j in 0..cols {
                let p = lp[j].exp();
                teacher_probs.set(r, j, p);
                student_probs.set(r, j, lq[j].exp());
                if p > T::zero() {
                    kl = kl + p * (lp[j] - lq[j]);
                }
            }
            if valid[r] {
                total = total + kl;
            }
        }
        let loss = temperature * temperature * total / T::from_usize(count).unwrap();
        let ng = self.needs(&[student]);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::KlDistill {
                student,
                teacher_probs,
                student_probs,
                valid: valid.to_vec(),
                count,
                temperature,
            },
            ng,
        ))
    }

    /// Reverse pass from a 1×1 node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericsError> {
        if self.shape(loss) != (1, 1) {
            return Err(NumericsError::DimensionMismatch {
                op: "backward",
                left: self.shape(loss),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        node: &Node<T>,
        g: &Matrix<T>,
        grads: &mut [Option<Matrix<T>>],
    ) -> Result<(), NumericsError> {
        let mut acc = |v: Var, delta: Matrix<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let wants = |v: Var| self.nodes[v.0].needs_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    acc(*a, g.matmul_transposed(self.value(*b))?);
                }
                if wants(*b) {
                    acc(*b, self.value(*a).transposed_matmul(g)?);
                }
            }
            Op::MatMulT(a, b) => {
                if wants(*a) {
                    acc(*a, g.matmul(self.value(*b))?);
                }
                if wants(*b) {
                    acc(*b, g.transposed_matmul(self.value(*a))?);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-T::one()));
            }
            Op::Hadamard(a, b) => {
                if wants(*a) {
                    acc(*a, g.hadamard(self.value(*b))?);
                }
                if wants(*b) {
                    acc(*b, g.hadamard(self.value(*a))?);
                }
            }
            Op::Scale(a, f) => acc(*a, g.scale(*f)),
            Op::AddRow(a, bias) => {
                acc(*a, g.clone());
                if wants(*bias) {
                    acc(*bias, g.mean_rows().scale(T::from_usize(g.rows()).unwrap()));
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let mut d = g.clone();
                for (dv, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                    if xv <= T::zero() {
                        *dv = T::zero();
                    }
                }
                acc(*a, d);
            }
            Op::Softmax { x, root_scale } => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot = yr.iter().zip(gr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                    for (o, (&yv, &gv)) in d.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yv * (gv - dot) / *root_scale;
                    }
                }
                acc(*x, d);
            }
            Op::Concat(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                acc(*a, g.slice_cols(0, ca)?);
                acc(*b, g.slice_cols(ca, cb)?);
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.shape(*x);
                let mut d = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*x, d);
            }
            Op::VStack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    let d = Matrix::new(
                        rows,
                        cols,
                        g.data()[offset * cols..(offset + rows) * cols].to_vec(),
                    )?;
                    offset += rows;
                    acc(p, d);
                }
            }
            Op::GatherRows { x, indices } => {
                let (rows, cols) = self.shape(*x);
                let mut d = Matrix::zeros(rows, cols);
                for (k, &i) in indices.iter().enumerate() {
                    for (o, &v) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o = *o + v;
                    }
                }
                acc(*x, d);
            }
            Op::LayerNorm { x, inv_std } => {
                let y = &node.value;
                let n = T::from_usize(y.cols().max(1)).unwrap();
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let mean_g = gr.iter().fold(T::zero(), |s, &v| s + v) / n;
                    let mean_gy = yr.iter().zip(gr).fold(T::zero(), |s, (&a, &b)| s + a * b) / n;
                    for (o, (&yv, &gv)) in d.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = inv_std[r] * (gv - mean_g - yv * mean_gy);
                    }
                }
                acc(*x, d);
            }
            Op::MeanRows(x) => {
                let (rows, cols) = self.shape(*x);
                let n = T::from_usize(rows.max(1)).unwrap();
                acc(*x, Matrix::from_fn(rows, cols, |_, c| g.get(0, c) / n));
            }
            Op::Sum(x) => {
                let (rows, cols) = self.shape(*x);
                acc(*x, Matrix::filled(rows, cols, g.get(0, 0)));
            }
            Op::WeightedSum { x, weights } => acc(*x, weights.scale(g.get(0, 0))),
            Op::CrossEntropy { logits, probs, targets, valid, count } => {
                let factor = g.get(0, 0) / T::from_usize(*count).unwrap();
                let mut d = Matrix::zeros(probs.rows(), probs.cols());
                for r in 0..probs.rows() {
                    if !valid[r] {
                        continue;
                    }
                    for (o, &p) in d.row_mut(r).iter_mut().zip(probs.row(r)) {
                        *o = p * factor;
                    }
                    let t = targets[r];
                    d.set(r, t, d.get(r, t) - factor);
                }
                acc(*logits, d);
            }
            Op::KlDistill { student, teacher_probs, student_probs, valid, count, temperature } => {
                let factor = g.get(0, 0) * *temperature / T::from_usize(*count).unwrap();
                let mut d = Matrix::zeros(student_probs.rows(), student_probs.cols());
                for r in 0..d.rows() {
                    if !valid[r] {
                        continue;
                    }
                    for j in 0..d.cols() {
                        d.set(r, j, factor * (student_probs.get(r, j) - teacher_probs.get(r, j)));
                    }
                }
                acc(*student, d);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, seeded_init, InitScheme};

    type M = Matrix<f64>;

    fn rand_m(r: usize, c: usize, seed: u64) -> M {
        seeded_init(r, c, seed, InitScheme::Uniform(1.0))
    }

    /// Compares tape gradients of `build` w.r.t. each input against central
    /// differences.
    fn check(inputs: &[M], build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
        let out = build(&mut tape, &vars);
        let grads = tape.backward(out).unwrap();
        let mut worst: f64 = 0.0;
        for (k, m) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[k], m.shape());
            let numeric = finite_diff_grad(
                |x: &[f64]| {
                    let mut t = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, orig)| {
                            if j == k {
                                t.param(M::new(orig.rows(), orig.cols(), x.to_vec()).unwrap())
                            } else {
                                t.param(orig.clone())
                            }
                        })
                        .collect();
                    let o = build(&mut t, &vs);
                    t.scalar(o)
                },
                m.data(),
                1e-5,
            )
            .unwrap();
            worst = worst.max(crate::numerics::max_relative_error(analytic.data(), &numeric));
        }
        worst
    }

    #[test]
    fn every_op_matches_finite_differences() {
        for seed in 0..20u64 {
            let a = rand_m(3, 4, seed);
            let b = rand_m(4, 2, seed + 100);
            let c = rand_m(3, 4, seed + 200);
            let bias = rand_m(1, 4, seed + 300);
            let w = rand_m(3, 2, seed + 400);
            let w34 = rand_m(3, 4, seed + 500);
            let w38 = rand_m(3, 8, seed + 600);
            let tol = 1e-4;

            let e = check(&[a.clone(), b.clone()], |t, v| {
                let y = t.matmul(v[0], v[1]).unwrap();
                t.weighted_sum(y, &w).unwrap()
            });
            assert!(e < tol, "matmul {e}");

            let e = check(&[a.clone(), c.clone()], |t, v| {
                let y = t.matmul_transposed(v[0], v[1]).unwrap();
                let y = t.softmax_rows(y, 2.0, None).unwrap();
                t.weighted_sum(y, &rand_m(3, 3, seed + 7)).unwrap()
            });
            assert!(e < tol, "matmul_t+softmax {e}");

            let mask: Vec<bool> = (0..12).map(|i| i % 4 != 3).collect();
            let e = check(&[a.clone()], |t, v| {
                let y = t.softmax_rows(v[0], 1.0, Some(&mask)).unwrap();
                t.weighted_sum(y, &w34).unwrap()
            });
            assert!(e < tol, "masked softmax {e}");

            let e = check(&[a.clone(), c.clone(), bias.clone()], |t, v| {
                let s = t.sub(v[0], v[1]).unwrap();
                let h = t.hadamard(s, v[0]).unwrap();
                let r = t.add_row(h, v[2]).unwrap();
                let r = t.relu(r);
                let r = t.scale(r, 0.7);
                let r = t.add(r, v[1]).unwrap();
                t.weighted_sum(r, &w34).unwrap()
            });
            assert!(e < tol, "elementwise {e}");

            let e = check(&[a.clone(), c.clone()], |t, v| {
                let j = t.concat_rows(v[0], v[1]).unwrap();
                let n = t.layer_norm(j, 1e-8);
                t.weighted_sum(n, &w38).unwrap()
            });
            assert!(e < tol, "concat+layernorm {e}");

            let e = check(&[a.clone(), c.clone()], |t, v| {
                let s = t.vstack(&[v[0], v[1]]).unwrap();
                let g = t.gather_rows(s, &[5, 0, 0, 2]).unwrap();
                let sl = t.slice_cols(g, 1, 2).unwrap();
                let m = t.mean_rows(sl);
                let m = t.hadamard(m, m).unwrap();
                t.sum(m)
            });
            assert!(e < tol, "stack/gather/slice/mean {e}");

            let targets = [1usize, 0, 3];
            let e = check(&[a.clone()], |t, v| t.cross_entropy(v[0], &targets, 3).unwrap());
            assert!(e < tol, "cross entropy {e}");

            let e = check(&[a.clone()], |t, v| {
                let teacher = t.constant(c.clone());
                t.kl_distillation(v[0], teacher, 1.7, &[true, false, true]).unwrap()
            });
            assert!(e < tol, "kl {e}");
        }
    }

    #[test]
    fn kl_leaves_teacher_without_gradient() {
        let mut tape = Tape::new();
        let s = tape.param(rand_m(2, 5, 1));
        let t = tape.param(rand_m(2, 5, 2));
        let kl = tape.kl_distillation(s, t, 1.0, &[true, true]).unwrap();
        let grads = tape.backward(kl).unwrap();
        assert!(grads.get(t).is_none());
        assert!(grads.get(s).unwrap().max_abs() > 0.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(rand_m(2, 2, 3));
        let b = tape.param(rand_m(2, 2, 4));
        let y = tape.matmul(a, b).unwrap();
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(a).is_none());
        assert!(grads.get(b).is_some());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let a = tape.param(M::zeros(2, 2));
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn fully_masked_row_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.param(M::zeros(2, 2));
        let mask = [true, true, false, false];
        assert!(matches!(
            tape.softmax_rows(a, 1.0, Some(&mask)),
            Err(NumericsError::EmptyInput(_))
        ));
    }

    #[test]
    fn cross_entropy_all_pad() {
        let mut tape = Tape::new();
        let a = tape.param(M::zeros(2, 4));
        assert!(matches!(
            tape.cross_entropy(a, &[0, 0], 0),
            Err(NumericsError::AllPadded)
        ));
    }
}
