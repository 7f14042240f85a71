use std::sync::Arc;

use super::{numel, BackwardFn, Scalar, Tensor};
use crate::error::{Error, Result};

/// Single-input elementwise primitives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Neg,
    Square,
    /// `sqrt'(0)` is taken as 0.
    Sqrt,
    Exp,
    /// `relu'(0)` is taken as 0.
    Relu,
    Scale(f64),
    Offset(f64),
    /// `min(x, c)`; gradient 1 strictly below `c`, 0 at or above it.
    ClampMax(f64),
}

/// Two-input elementwise primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    /// `atan2(a, b)` with `a` the ordinate; gradient 0 at the origin.
    Atan2,
    /// Elementwise maximum; ties route the gradient to the first operand.
    Maximum,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Square => "square",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Exp => "exp",
            UnaryOp::Relu => "relu",
            UnaryOp::Scale(_) => "scale",
            UnaryOp::Offset(_) => "offset",
            UnaryOp::ClampMax(_) => "clamp_max",
        }
    }

    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            UnaryOp::Neg => -x,
            UnaryOp::Square => x * x,
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            UnaryOp::Scale(s) => x * T::from_f64_lossy(s),
            UnaryOp::Offset(s) => x + T::from_f64_lossy(s),
            UnaryOp::ClampMax(c) => x.min(T::from_f64_lossy(c)),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        let zero = T::zero();
        let one = T::one();
        match self {
            UnaryOp::Neg => -one,
            UnaryOp::Square => x + x,
            UnaryOp::Sqrt => {
                if y > zero {
                    T::from_f64_lossy(0.5) / y
                } else {
                    zero
                }
            }
            UnaryOp::Exp => y,
            UnaryOp::Relu => {
                if x > zero {
                    one
                } else {
                    zero
                }
            }
            UnaryOp::Scale(s) => T::from_f64_lossy(s),
            UnaryOp::Offset(_) => one,
            UnaryOp::ClampMax(c) => {
                if x < T::from_f64_lossy(c) {
                    one
                } else {
                    zero
                }
            }
        }
    }
}

impl BinaryOp {
    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Atan2 => "atan2",
            BinaryOp::Maximum => "maximum",
        }
    }

    fn apply<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            BinaryOp::Atan2 => a.atan2(b),
            BinaryOp::Maximum => {
                if a >= b {
                    a
                } else {
                    b
                }
            }
        }
    }

    /// Partial derivatives `(∂/∂a, ∂/∂b)`.
    fn partials<T: Scalar>(self, a: T, b: T) -> (T, T) {
        let zero = T::zero();
        let one = T::one();
        match self {
            BinaryOp::Add => (one, one),
            BinaryOp::Sub => (one, -one),
            BinaryOp::Mul => (b, a),
            BinaryOp::Div => (one / b, -a / (b * b)),
            BinaryOp::Atan2 => {
                let r2 = a * a + b * b;
                if r2 > zero {
                    (b / r2, -a / r2)
                } else {
                    (zero, zero)
                }
            }
            BinaryOp::Maximum => {
                if a >= b {
                    (one, zero)
                } else {
                    (zero, one)
                }
            }
        }
    }
}

/// Applies a unary primitive.
pub fn unary<T: Scalar>(op: UnaryOp, a: &Tensor<T>) -> Tensor<T> {
    let data: Vec<T> = a.data().iter().map(|&x| op.apply(x)).collect();
    let input = a.clone();
    let backward: BackwardFn<T> = Box::new(move |g, out| {
        let gi = input
            .data()
            .iter()
            .zip(out)
            .zip(g)
            .map(|((&x, &y), &g)| g * op.derivative(x, y))
            .collect();
        vec![Some(gi)]
    });
    Tensor::from_op(op.name(), data, a.shape(), vec![a.clone()], backward)
        .expect("unary op preserves shape")
}

/// Applies a binary primitive. Shapes must match, or one side must hold a
/// single element (scalar broadcast).
pub fn binary<T: Scalar>(op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (na, nb) = (a.numel(), b.numel());
    let shape = if a.shape() == b.shape() {
        a.shape().to_vec()
    } else if nb == 1 {
        a.shape().to_vec()
    } else if na == 1 {
        b.shape().to_vec()
    } else {
        return Err(Error::shape(format!(
            "{}: incompatible shapes {:?} and {:?}",
            op.name(),
            a.shape(),
            b.shape()
        )));
    };
    let n = numel(&shape);
    let at = |i: usize, t: &Tensor<T>| if t.numel() == 1 { t.data()[0] } else { t.data()[i] };
    let data: Vec<T> = (0..n).map(|i| op.apply(at(i, a), at(i, b))).collect();

    let (ia, ib) = (a.clone(), b.clone());
    let backward: BackwardFn<T> = Box::new(move |g, _| {
        let at = |i: usize, t: &Tensor<T>| if t.numel() == 1 { t.data()[0] } else { t.data()[i] };
        let mut ga = vec![T::zero(); ia.numel()];
        let mut gb = vec![T::zero(); ib.numel()];
        let (sa, sb) = (ia.numel() == 1, ib.numel() == 1);
        for (i, &gi) in g.iter().enumerate() {
            let (da, db) = op.partials(at(i, &ia), at(i, &ib));
            let ja = if sa { 0 } else { i };
            let jb = if sb { 0 } else { i };
            ga[ja] = ga[ja] + gi * da;
            gb[jb] = gb[jb] + gi * db;
        }
        vec![
            ia.requires_grad().then_some(ga),
            ib.requires_grad().then_some(gb),
        ]
    });
    Tensor::from_op(op.name(), data, &shape, vec![a.clone(), b.clone()], backward)
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(BinaryOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(BinaryOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(BinaryOp::Mul, self, other)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(BinaryOp::Div, self, other)
    }

    /// `atan2(self, other)`, `self` being the ordinate.
    pub fn atan2(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(BinaryOp::Atan2, self, other)
    }

    pub fn maximum(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(BinaryOp::Maximum, self, other)
    }

    pub fn neg(&self) -> Tensor<T> {
        unary(UnaryOp::Neg, self)
    }

    pub fn square(&self) -> Tensor<T> {
        unary(UnaryOp::Square, self)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        unary(UnaryOp::Sqrt, self)
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(UnaryOp::Exp, self)
    }

    pub fn relu(&self) -> Tensor<T> {
        unary(UnaryOp::Relu, self)
    }

    pub fn scale(&self, s: f64) -> Tensor<T> {
        unary(UnaryOp::Scale(s), self)
    }

    pub fn offset(&self, s: f64) -> Tensor<T> {
        unary(UnaryOp::Offset(s), self)
    }

    pub fn clamp_max(&self, c: f64) -> Tensor<T> {
        unary(UnaryOp::ClampMax(c), self)
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum();
        let n = self.numel();
        let backward: BackwardFn<T> = Box::new(move |g, _| vec![Some(vec![g[0]; n])]);
        Tensor::from_op("sum", vec![total], &[], vec![self.clone()], backward)
            .expect("scalar output")
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        let backward: BackwardFn<T> = Box::new(|g, _| vec![Some(g.to_vec())]);
        Tensor::from_op("reshape", self.to_vec(), shape, vec![self.clone()], backward)
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(Error::shape(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        };
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {:?} · {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(), false, other.data(), false, &mut out, false);
        let (a, b) = (self.clone(), other.clone());
        let backward: BackwardFn<T> = Box::new(move |g, _| {
            let ga = a.requires_grad().then(|| {
                let mut ga = vec![T::zero(); m * k];
                T::gemm(m, n, k, g, false, b.data(), true, &mut ga, false);
                ga
            });
            let gb = b.requires_grad().then(|| {
                let mut gb = vec![T::zero(); k * n];
                T::gemm(k, m, n, a.data(), true, g, false, &mut gb, false);
                gb
            });
            vec![ga, gb]
        });
        Tensor::from_op("matmul", out, &[m, n], vec![self.clone(), other.clone()], backward)
    }

    /// `out[i] = self[index[i]]`. The gradient scatters back, summing repeats.
    pub fn gather(&self, index: Arc<[usize]>, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != index.len() {
            return Err(Error::shape(format!(
                "gather: {} indices for output shape {shape:?}",
                index.len()
            )));
        }
        let n = self.numel();
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::shape(format!("gather index {bad} out of range {n}")));
        }
        let src = self.data();
        let data = index.iter().map(|&i| src[i]).collect();
        let backward: BackwardFn<T> = Box::new(move |g, _| {
            let mut gi = vec![T::zero(); n];
            for (&i, &gv) in index.iter().zip(g) {
                gi[i] = gi[i] + gv;
            }
            vec![Some(gi)]
        });
        Tensor::from_op("gather", data, shape, vec![self.clone()], backward)
    }

    /// `out[index[i]] += self[i]` into a zero tensor of `shape`.
    pub fn scatter_add(&self, index: Arc<[usize]>, shape: &[usize]) -> Result<Tensor<T>> {
        if index.len() != self.numel() {
            return Err(Error::shape(format!(
                "scatter_add: {} indices for {} values",
                index.len(),
                self.numel()
            )));
        }
        let n = numel(shape);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::shape(format!("scatter index {bad} out of range {n}")));
        }
        let mut out = vec![T::zero(); n];
        for (&i, &v) in index.iter().zip(self.data()) {
            out[i] = out[i] + v;
        }
        let backward: BackwardFn<T> = Box::new(move |g, _| {
            vec![Some(index.iter().map(|&i| g[i]).collect())]
        });
        Tensor::from_op("scatter_add", out, shape, vec![self.clone()], backward)
    }

    /// Adds a length-`n` vector to every row of an `[m×n]` matrix.
    pub fn add_row_vector(&self, row: &Tensor<T>) -> Result<Tensor<T>> {
        let &[m, n] = self.shape() else {
            return Err(Error::shape(format!(
                "add_row_vector needs a matrix, got {:?}",
                self.shape()
            )));
        };
        if row.numel() != n {
            return Err(Error::shape(format!(
                "row vector of {} elements for {m}×{n} matrix",
                row.numel()
            )));
        }
        let r = row.data();
        let data = self
            .data()
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&a, &b)| a + b))
            .collect();
        let backward: BackwardFn<T> = Box::new(move |g, _| {
            let mut gr = vec![T::zero(); n];
            for chunk in g.chunks(n) {
                gr.iter_mut().zip(chunk).for_each(|(a, &b)| *a = *a + b);
            }
            vec![Some(g.to_vec()), Some(gr)]
        });
        Tensor::from_op("add_row_vector", data, &[m, n], vec![self.clone(), row.clone()], backward)
    }

    /// Concatenates `[m×a]` and `[m×b]` matrices along columns.
    pub fn concat_cols(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let Some(first) = parts.first() else {
            return Err(Error::contract("concat_cols of zero tensors"));
        };
        let m = first.shape().first().copied().unwrap_or(0);
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            match p.shape() {
                &[rows, w] if rows == m => widths.push(w),
                s => {
                    return Err(Error::shape(format!(
                        "concat_cols: expected {m}×_ matrix, got {s:?}"
                    )))
                }
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let ws = widths.clone();
        let backward: BackwardFn<T> = Box::new(move |g, _| {
            let mut out: Vec<Vec<T>> = ws.iter().map(|&w| Vec::with_capacity(m * w)).collect();
            for row in g.chunks(total) {
                let mut off = 0;
                for (o, &w) in out.iter_mut().zip(&ws) {
                    o.extend_from_slice(&row[off..off + w]);
                    off += w;
                }
            }
            out.into_iter().map(Some).collect()
        });
        Tensor::from_op("concat_cols", data, &[m, total], parts.to_vec(), backward)
    }
}
