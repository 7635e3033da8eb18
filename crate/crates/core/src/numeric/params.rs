use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;

use super::error::{NumericError, Result};
use crate::Scalar;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Array2<T>,
    /// Always the same shape as `value`.
    pub grad: Array2<T>,
    pub trainable: bool,
}

/// Named parameters with paired gradient buffers.
///
/// Frozen parameters take part in the forward pass but never receive
/// gradients or optimizer updates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: BTreeMap<String, ParamId>,
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub(crate) per_param: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub(crate) fn new(len: usize) -> Self {
        Self {
            per_param: vec![None; len],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<T>> {
        self.per_param.get(id.0).and_then(Option::as_ref)
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Array2<T>, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(NumericError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.params.len());
        let grad = Array2::zeros(value.raw_dim());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| NumericError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<T> {
        &self.params[id.0].value
    }

    /// Replaces a parameter value. The shape must not change.
    pub fn set_value(&mut self, id: ParamId, value: Array2<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.dim() != value.dim() {
            return Err(NumericError::Shape {
                op: "set_value",
                left: p.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Array2<T> {
        &self.params[id.0].grad
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Total scalar count, optionally restricted to trainable parameters.
    pub fn scalar_count(&self, trainable_only: bool) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable || !trainable_only)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Adds a backward pass's gradients into the buffers. Repeated calls
    /// accumulate.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (p, g) in self.params.iter_mut().zip(&grads.per_param) {
            if let (true, Some(g)) = (p.trainable, g) {
                p.grad += g;
            }
        }
    }
}

/// Glorot/Xavier uniform initialization for a `rows × cols` matrix.
///
/// Values are drawn as `f64` so the stream is identical for every scalar type.
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rows, cols, limit, rng)
}

/// Uniform values in `[-limit, limit)`.
pub fn uniform<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Array2<T> {
    let mut out = Array2::zeros((rows, cols));
    for v in out.iter_mut() {
        *v = T::of(rng.random_range(-limit..limit));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grad_buffers_track_shapes() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", array![[1.0, 2.0, 3.0]], true).unwrap();
        assert_eq!(store.grad(id).dim(), (1, 3));
        assert!(store.set_value(id, array![[1.0], [2.0]]).is_err());
        assert!(matches!(
            store.insert("w", array![[0.0]], true),
            Err(NumericError::DuplicateParam(_))
        ));
    }

    #[test]
    fn frozen_params_do_not_accumulate() {
        let mut store = ParamStore::<f64>::new();
        let a = store.insert("a", array![[0.0, 0.0]], true).unwrap();
        let b = store.insert("b", array![[0.0, 0.0]], false).unwrap();
        let mut g = Gradients::new(2);
        g.per_param[0] = Some(array![[1.0, 2.0]]);
        g.per_param[1] = Some(array![[1.0, 2.0]]);
        store.accumulate(&g);
        store.accumulate(&g);
        assert_eq!(store.grad(a), &array![[2.0, 4.0]]);
        assert_eq!(store.grad(b), &array![[0.0, 0.0]]);
    }

    #[test]
    fn glorot_is_seeded_and_bounded() {
        let x: Array2<f64> = glorot_uniform(20, 30, &mut ChaCha8Rng::seed_from_u64(3));
        let y: Array2<f64> = glorot_uniform(20, 30, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(x, y);
        let limit = (6.0f64 / 50.0).sqrt();
        assert!(x.iter().all(|v| v.abs() <= limit));
    }
}
