//! Reverse-mode differentiation over dense 2-D matrices.
//!
//! A [`Graph`] is built eagerly: every operation computes its value when it
//! is recorded. [`Graph::backward`] then walks the record in reverse and
//! returns the gradient of a scalar node with respect to every trainable
//! parameter that was read during the forward pass. Vectors are `1 × n` rows.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::error::{NumericError, Result};
use super::params::{Gradients, ParamId, ParamStore};
use crate::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<T> {
    Owned(Array2<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(ParamId, Vec<Option<usize>>),
    CrossEntropy(Var, Array2<T>),
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

fn shape_of<T>(a: &ArrayView2<T>) -> Vec<usize> {
    a.shape().to_vec()
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, T> {
        match &self.nodes[v.0].value {
            Value::Owned(a) => a.view(),
            Value::Param(id) => self.params.value(*id).view(),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> Result<T> {
        let val = self.value(v);
        if val.dim() != (1, 1) {
            return Err(NumericError::NotScalar {
                shape: shape_of(&val),
            });
        }
        Ok(val[[0, 0]])
    }

    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Constant `1 × n` row.
    pub fn row(&mut self, values: &[T]) -> Var {
        let a = Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape");
        self.constant(a)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let trainable = self.params.is_trainable(id);
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            requires_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.nrows() {
            return Err(NumericError::Shape {
                op: "matmul",
                left: shape_of(&av),
                right: shape_of(&bv),
            });
        }
        let out = av.dot(&bv);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    /// Element-wise sum. `b` may also be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = if av.dim() == bv.dim() {
            &av + &bv
        } else if bv.nrows() == 1 && bv.ncols() == av.ncols() {
            &av + &bv.row(0)
        } else {
            return Err(NumericError::Shape {
                op: "add",
                left: shape_of(&av),
                right: shape_of(&bv),
            });
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Element-wise (Hadamard) product of equally shaped operands.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(NumericError::Shape {
                op: "mul",
                left: shape_of(&av),
                right: shape_of(&bv),
            });
        }
        let out = &av * &bv;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a).mapv(|x| x * k);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(T::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// Natural logarithm; every input entry must be positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(T::ln);
        if out.iter().any(|x| !x.is_finite()) {
            return Err(NumericError::NonFinite { op: "log" });
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::Log(a), rg))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).to_owned();
        for mut row in out.rows_mut() {
            let sm = softmax(&row.to_vec());
            row.assign(&ndarray::ArrayView1::from(&sm));
        }
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).to_owned();
        for mut row in out.rows_mut() {
            let lse = log_sum_exp(row.iter().copied());
            row.mapv_inplace(|x| x - lse);
        }
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmaxRows(a), rg)
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Array2::from_elem((1, 1), total), Op::Sum(a), rg)
    }

    /// Column means: `r × c` to `1 × c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.nrows() == 0 {
            return Err(NumericError::Empty { op: "mean_rows" });
        }
        let out = av.mean_axis(Axis(0)).expect("nonempty").insert_axis(Axis(0));
        let rg = self.rg(a);
        Ok(self.push(out, Op::MeanRows(a), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(NumericError::Empty { op: "concat_cols" })?;
        let rows = self.shape(*first).0;
        for p in parts {
            if self.shape(*p).0 != rows {
                return Err(NumericError::Shape {
                    op: "concat_cols",
                    left: shape_of(&self.value(*first)),
                    right: shape_of(&self.value(*p)),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p)).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("checked shapes");
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(NumericError::Empty { op: "concat_rows" })?;
        let cols = self.shape(*first).1;
        for p in parts {
            if self.shape(*p).1 != cols {
                return Err(NumericError::Shape {
                    op: "concat_rows",
                    left: shape_of(&self.value(*first)),
                    right: shape_of(&self.value(*p)),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p)).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("checked shapes");
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.nrows() {
            return Err(NumericError::Range {
                op: "slice_rows",
                start,
                end,
                extent: av.nrows(),
            });
        }
        let out = av.slice(s![start..end, ..]).to_owned();
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.ncols() {
            return Err(NumericError::Range {
                op: "slice_cols",
                start,
                end,
                extent: av.ncols(),
            });
        }
        let out = av.slice(s![.., start..end]).to_owned();
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    /// Lookup of parameter rows; `None` yields a zero row. Gradients are
    /// scattered back into the table only when it is trainable.
    pub fn gather_rows(&mut self, table: ParamId, rows: &[Option<usize>]) -> Result<Var> {
        let tv = self.params.value(table);
        let mut out = Array2::zeros((rows.len(), tv.ncols()));
        for (i, r) in rows.iter().enumerate() {
            if let Some(r) = *r {
                if r >= tv.nrows() {
                    return Err(NumericError::Range {
                        op: "gather_rows",
                        start: r,
                        end: r + 1,
                        extent: tv.nrows(),
                    });
                }
                out.row_mut(i).assign(&tv.row(r));
            }
        }
        let rg = self.params.is_trainable(table);
        Ok(self.push(out, Op::Gather(table, rows.to_vec()), rg))
    }

    /// Cross-entropy `-Σ target_i · log softmax(logits)_i` of a `1 × n` logit
    /// row, fused so that peaked logits cannot overflow.
    pub fn cross_entropy(&mut self, logits: Var, target: &[T]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.nrows() != 1 || lv.ncols() != target.len() {
            return Err(NumericError::Shape {
                op: "cross_entropy",
                left: shape_of(&lv),
                right: vec![1, target.len()],
            });
        }
        let lse = log_sum_exp(lv.iter().copied());
        let loss = lv
            .iter()
            .zip(target)
            .fold(T::zero(), |acc, (&z, &t)| acc - t * (z - lse));
        let tgt = Array2::from_shape_vec((1, target.len()), target.to_vec()).expect("row");
        let rg = self.rg(logits);
        Ok(self.push(Array2::from_elem((1, 1), loss), Op::CrossEntropy(logits, tgt), rg))
    }

    /// Gradient of the scalar `loss` with respect to every trainable
    /// parameter read while building the graph.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.dim() != (1, 1) {
            return Err(NumericError::NotScalar {
                shape: shape_of(&lv),
            });
        }
        let mut out = Gradients::new(self.params.len());
        let mut grads: Vec<Option<Array2<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => add_param_grad(&mut out, self.params, *id, g),
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::Transpose(a) => self.acc(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        let gb = if self.shape(*b) == g.dim() {
                            g.clone()
                        } else {
                            g.sum_axis(Axis(0)).insert_axis(Axis(0))
                        };
                        self.acc(&mut grads, *b, gb);
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let ga = &g * &self.value(*b);
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = &g * &self.value(*a);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    self.acc(&mut grads, *a, g.mapv(|x| x * k));
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&self.value(Var(idx)))
                        .for_each(|g, &y| *g = *g * (T::one() - y * y));
                    self.acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&self.value(Var(idx)))
                        .for_each(|g, &y| *g = *g * y * (T::one() - y));
                    self.acc(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let ga = &g / &self.value(*a);
                    self.acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = self.value(Var(idx));
                    let mut ga = g;
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot: T = grow.iter().zip(yrow.iter()).map(|(&g, &y)| g * y).sum();
                        Zip::from(&mut grow).and(&yrow).for_each(|g, &y| *g = y * (*g - dot));
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = self.value(Var(idx));
                    let mut ga = g;
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let total: T = grow.iter().copied().sum();
                        Zip::from(&mut grow)
                            .and(&yrow)
                            .for_each(|g, &y| *g = *g - y.exp() * total);
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    self.acc(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.shape(*a);
                    let inv = T::one() / T::of(r as f64);
                    let row = g.row(0).mapv(|x| x * inv);
                    let ga = row.broadcast((r, c)).expect("broadcast").to_owned();
                    self.acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        if self.rg(*p) {
                            let gp = g.slice(s![.., offset..offset + w]).to_owned();
                            self.acc(&mut grads, *p, gp);
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let h = self.shape(*p).0;
                        if self.rg(*p) {
                            let gp = g.slice(s![offset..offset + h, ..]).to_owned();
                            self.acc(&mut grads, *p, gp);
                        }
                        offset += h;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    self.acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    self.acc(&mut grads, *a, ga);
                }
                Op::Gather(table, rows) => {
                    let slot = out.per_param[table.0]
                        .get_or_insert_with(|| Array2::zeros(self.params.value(*table).raw_dim()));
                    for (i, r) in rows.iter().enumerate() {
                        if let Some(r) = *r {
                            let mut dst = slot.row_mut(r);
                            dst += &g.row(i);
                        }
                    }
                }
                Op::CrossEntropy(z, target) => {
                    let gz0 = g[[0, 0]];
                    let probs = softmax(&self.value(*z).row(0).to_vec());
                    let mass: T = target.iter().copied().sum();
                    let mut gz = Array2::zeros((1, probs.len()));
                    for (i, p) in probs.iter().enumerate() {
                        gz[[0, i]] = gz0 * (*p * mass - target[[0, i]]);
                    }
                    self.acc(&mut grads, *z, gz);
                }
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }
}

fn add_param_grad<T: Scalar>(out: &mut Gradients<T>, params: &ParamStore<T>, id: ParamId, g: Array2<T>) {
    if !params.is_trainable(id) {
        return;
    }
    match &mut out.per_param[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn log_sum_exp<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> T {
    let max = xs.clone().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let total: T = xs.map(|x| (x - max).exp()).sum();
    max + total.ln()
}

/// Max-shifted softmax of a slice.
pub fn softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = xs.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.row(&[0.0, 0.0, 0.0]);
        let y = g.softmax_rows(x);
        for v in g.value(y).iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn identity_matmul() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let i = g.constant(Array2::eye(2));
        let m = g.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let p = g.matmul(i, m).unwrap();
        assert_eq!(g.value(p), array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let a = g.constant(Array2::zeros((2, 3)));
        let b = g.constant(Array2::zeros((2, 3)));
        assert_eq!(
            g.matmul(a, b).unwrap_err(),
            NumericError::Shape {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
    }

    #[test]
    fn tanh_derivative_at_zero_is_one() {
        let mut store = ParamStore::<f64>::new();
        let x = store.insert("x", array![[0.0]], true).unwrap();
        let mut g = Graph::new(&store);
        let xv = g.param(x);
        let y = g.tanh(xv);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap()[[0, 0]], 1.0);
    }

    #[test]
    fn sum_gives_all_ones_and_zero_scale_gives_zeros() {
        let mut store = ParamStore::<f64>::new();
        let p = store.insert("p", array![[1.5, -2.0], [0.3, 7.0]], true).unwrap();
        let mut g = Graph::new(&store);
        let pv = g.param(p);
        let l = g.sum(pv);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(p).unwrap(), &Array2::<f64>::ones((2, 2)));

        let mut g = Graph::new(&store);
        let pv = g.param(p);
        let z = g.scale(pv, 0.0);
        let l = g.sum(z);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(p).unwrap(), &Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.row(&[1.0, 2.0]);
        assert!(matches!(g.backward(x), Err(NumericError::NotScalar { .. })));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut store = ParamStore::<f64>::new();
        let p = store.insert("p", array![[1.0, 2.0]], true).unwrap();
        for _ in 0..3 {
            let grads = {
                let mut g = Graph::new(&store);
                let pv = g.param(p);
                let l = g.sum(pv);
                g.backward(l).unwrap()
            };
            store.accumulate(&grads);
        }
        assert_eq!(store.grad(p), &array![[3.0, 3.0]]);
    }

    #[test]
    fn cross_entropy_matches_log_softmax_route() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let z = g.row(&[0.3, -1.2, 2.0]);
        let t = [0.2, 0.3, 0.5];
        let fused = g.cross_entropy(z, &t).unwrap();
        let ls = g.log_softmax_rows(z);
        let tv = g.row(&t);
        let prod = g.mul(ls, tv).unwrap();
        let s = g.sum(prod);
        let unfused = g.scale(s, -1.0);
        assert_abs_diff_eq!(
            g.scalar(fused).unwrap(),
            g.scalar(unfused).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn peaked_logits_stay_finite() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let z = g.row(&[1000.0, -1000.0, 0.0]);
        let a = g.softmax_rows(z);
        assert!(g.value(a).iter().all(|v| v.is_finite()));
        let ce = g.cross_entropy(z, &[0.0, 1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(g.scalar(ce).unwrap(), 2000.0, epsilon = 1e-9);
    }

    #[test]
    fn frozen_gather_gets_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        let table = store.insert("t", array![[1.0, 2.0], [3.0, 4.0]], false).unwrap();
        let w = store.insert("w", array![[1.0], [1.0]], true).unwrap();
        let mut g = Graph::new(&store);
        let rows = g.gather_rows(table, &[Some(1), None, Some(0)]).unwrap();
        assert_eq!(g.value(rows), array![[3.0, 4.0], [0.0, 0.0], [1.0, 2.0]]);
        let wv = g.param(w);
        let y = g.matmul(rows, wv).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(table).is_none());
        assert_eq!(grads.get(w).unwrap(), &array![[4.0], [6.0]]);
    }

    #[test]
    fn trainable_gather_scatters_rows() {
        let mut store = ParamStore::<f64>::new();
        let table = store.insert("t", Array2::zeros((3, 2)), true).unwrap();
        let mut g = Graph::new(&store);
        let rows = g.gather_rows(table, &[Some(2), Some(2), Some(0), None]).unwrap();
        let l = g.sum(rows);
        let grads = g.backward(l).unwrap();
        assert_eq!(
            grads.get(table).unwrap(),
            &array![[1.0, 1.0], [0.0, 0.0], [2.0, 2.0]]
        );
    }

    #[test]
    fn add_broadcasts_a_single_row() {
        let mut store = ParamStore::<f64>::new();
        let b = store.insert("b", array![[1.0, 2.0]], true).unwrap();
        let mut g = Graph::new(&store);
        let x = g.constant(Array2::zeros((3, 2)));
        let bv = g.param(b);
        let y = g.add(x, bv).unwrap();
        assert_eq!(g.value(y).row(2).to_vec(), vec![1.0, 2.0]);
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(b).unwrap(), &array![[3.0, 3.0]]);
        let bad = g.constant(Array2::zeros((2, 3)));
        assert!(g.add(x, bad).is_err());
    }

    #[test]
    fn log_of_nonpositive_is_an_error() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.row(&[1.0, 0.0]);
        assert_eq!(g.log(x).unwrap_err(), NumericError::NonFinite { op: "log" });
    }
}
