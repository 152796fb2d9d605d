use std::collections::HashMap;

use crate::scalar::Scalar;

use super::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<T>,
}

/// Named dense parameter arrays plus the optimizer step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
    pub step: u64,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), by_name: HashMap::new(), step: 0 }
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, values: Vec<T>) -> Result<ParamId, TensorError> {
        if self.by_name.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        if values.len() != rows * cols {
            return Err(TensorError::ShapeMismatch { op: "param", left: (rows, cols), right: (values.len(), 1) });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteInput("param"));
        }
        let id = ParamId(self.params.len());
        self.params.push(Param { name: name.to_string(), rows, cols, values });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId, TensorError> {
        self.add(name, rows, cols, vec![T::zero(); rows * cols])
    }

    /// Glorot-uniform initialisation, `U(-s, s)` with `s = sqrt(6 / (rows + cols))`.
    pub fn add_glorot(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut impl rand::Rng,
    ) -> Result<ParamId, TensorError> {
        let s = (6.0 / (rows + cols) as f64).sqrt();
        let values = (0..rows * cols).map(|_| T::of(rng.gen_range(-s..s))).collect();
        self.add(name, rows, cols, values)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    /// Flat coordinate addressing, in parameter order.
    pub fn coord(&self, mut flat: usize) -> (ParamId, usize) {
        for (i, p) in self.params.iter().enumerate() {
            if flat < p.values.len() {
                return (ParamId(i), flat);
            }
            flat -= p.values.len();
        }
        panic!("flat coordinate out of range");
    }

    /// Replaces the values of a parameter, keeping its shape.
    pub fn set(&mut self, id: ParamId, values: Vec<T>) -> Result<(), TensorError> {
        let p = &mut self.params[id.0];
        if values.len() != p.values.len() {
            return Err(TensorError::ShapeMismatch { op: "set", left: (p.rows, p.cols), right: (values.len(), 1) });
        }
        p.values = values;
        Ok(())
    }
}

/// Gradients aligned with the parameters of one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    grads: Vec<Vec<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        ParamGrads { grads: store.params.iter().map(|p| vec![T::zero(); p.values.len()]).collect() }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Vec<T> {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<T>> {
        self.grads.iter()
    }

    pub fn global_norm(&self) -> T {
        self.grads.iter().flatten().map(|g| *g * *g).sum::<T>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm && norm > T::zero() {
            let scale = max_norm / norm;
            for g in self.grads.iter_mut().flatten() {
                *g *= scale;
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn names_are_unique_and_shapes_checked() {
        let mut s = ParamStore::<f64>::new();
        s.add_zeros("w", 2, 3).unwrap();
        assert_eq!(s.add_zeros("w", 1, 1), Err(TensorError::DuplicateParam("w".into())));
        assert!(s.add("v", 2, 2, vec![0.0; 3]).is_err());
        assert!(s.add("nan", 1, 1, vec![f64::NAN]).is_err());
        assert_eq!(s.num_values(), 6);
    }

    #[test]
    fn glorot_bounds() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add_glorot("w", 10, 14, &mut rng_from(1)).unwrap();
        let bound = (6.0f64 / 24.0).sqrt();
        assert!(s.get(id).values.iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add_zeros("w", 1, 2).unwrap();
        let mut g = ParamGrads::zeros_like(&s);
        *g.get_mut(id) = vec![3.0, 4.0];
        assert_eq!(g.clip_global_norm(1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-15);
    }
}
