//! Named parameter storage shared between tapes and optimizers.
//!
//! Parameter values are held behind `Rc` so a tape can reference them without
//! copying; the optimizer mutates them through `Arc::make_mut` once all tapes
//! from the step have been dropped.

use std::collections::HashMap;
use std::sync::Arc;

use crate::array::Array;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// An accumulated gradient. Weight matrices multiplied by single-row
/// activations receive rank-1 (outer product) gradients; keeping the factors
/// avoids materializing the full matrix on the hot path.
#[derive(Clone, Debug)]
pub enum Grad {
    Dense(Array),
    /// sum over terms of u ⊗ v, with u the row factor (length = rows).
    Rank1Sum { rows: usize, cols: usize, terms: Vec<(Vec<f64>, Vec<f64>)> },
}

impl Grad {
    pub fn to_dense(&self, shape: &[usize]) -> Array {
        match self {
            Grad::Dense(a) => a.clone(),
            Grad::Rank1Sum { rows, cols, terms } => {
                let mut out = Array::zeros(shape.to_vec());
                for (u, v) in terms {
                    for i in 0..*rows {
                        let ui = u[i];
                        if ui == 0.0 {
                            continue;
                        }
                        let row = &mut out.data_mut()[i * cols..(i + 1) * cols];
                        for (o, x) in row.iter_mut().zip(v) {
                            *o += ui * x;
                        }
                    }
                }
                out
            }
        }
    }
}

#[derive(Clone)]
pub struct Param {
    pub name: String,
    pub value: Arc<Array>,
    /// Accumulated gradient; `None` means zero. Cleared by the optimizer.
    pub grad: Option<Grad>,
}

#[derive(Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, value: Arc::new(value), grad: None });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.params[id.0].value
    }

    pub fn rc_value(&self, id: ParamId) -> Arc<Array> {
        Arc::clone(&self.params[id.0].value)
    }

    /// Mutable access to a parameter value. Clones the storage if a tape from
    /// a previous step still holds a reference (normally none do).
    pub fn value_mut(&mut self, id: ParamId) -> &mut Array {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn grad(&self, id: ParamId) -> Option<&Grad> {
        self.params[id.0].grad.as_ref()
    }

    /// The gradient as a dense array (materializing rank-1 factors).
    pub fn grad_dense(&self, id: ParamId) -> Option<Array> {
        let p = &self.params[id.0];
        p.grad.as_ref().map(|g| g.to_dense(p.value.shape()))
    }

    pub fn has_grad(&self, id: ParamId) -> bool {
        self.params[id.0].grad.is_some()
    }

    pub fn take_grad(&mut self, id: ParamId) -> Option<Grad> {
        self.params[id.0].grad.take()
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: Array) {
        let p = &mut self.params[id.0];
        debug_assert_eq!(p.value.shape(), g.shape(), "grad shape mismatch for {}", p.name);
        match &mut p.grad {
            None => p.grad = Some(Grad::Dense(g)),
            Some(Grad::Dense(existing)) => existing.add_assign(&g),
            Some(rank1 @ Grad::Rank1Sum { .. }) => {
                let mut dense = rank1.to_dense(p.value.shape());
                dense.add_assign(&g);
                p.grad = Some(Grad::Dense(dense));
            }
        }
    }

    /// Accumulate an outer-product gradient u ⊗ v without materializing it.
    pub fn accumulate_grad_rank1(&mut self, id: ParamId, u: Vec<f64>, v: Vec<f64>) {
        let p = &mut self.params[id.0];
        let (rows, cols) = (p.value.rows(), p.value.cols());
        debug_assert_eq!(u.len(), rows, "rank-1 row factor mismatch for {}", p.name);
        debug_assert_eq!(v.len(), cols, "rank-1 col factor mismatch for {}", p.name);
        match &mut p.grad {
            None => {
                p.grad = Some(Grad::Rank1Sum { rows, cols, terms: vec![(u, v)] });
            }
            Some(Grad::Rank1Sum { terms, .. }) => terms.push((u, v)),
            Some(Grad::Dense(existing)) => {
                for i in 0..rows {
                    let ui = u[i];
                    if ui == 0.0 {
                        continue;
                    }
                    let row = &mut existing.data_mut()[i * cols..(i + 1) * cols];
                    for (o, x) in row.iter_mut().zip(&v) {
                        *o += ui * x;
                    }
                }
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Iterate (name, value) pairs in insertion order, e.g. for checkpoints.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.params.iter().map(|p| (p.name.as_str(), &*p.value))
    }

    /// Overwrite a parameter value by name; shape must match.
    pub fn load(&mut self, name: &str, value: Array) -> Result<(), String> {
        let id = self
            .lookup(name)
            .ok_or_else(|| format!("unknown parameter {name}"))?;
        if self.params[id.0].value.shape() != value.shape() {
            return Err(format!(
                "shape mismatch for {name}: checkpoint {:?} vs model {:?}",
                value.shape(),
                self.params[id.0].value.shape()
            ));
        }
        self.params[id.0].value = Arc::new(value);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_accumulation() {
        let mut s = ParamStore::new();
        let id = s.add("w", Array::row(vec![1.0, 2.0]));
        s.accumulate_grad(id, Array::row(vec![0.5, 0.5]));
        s.accumulate_grad(id, Array::row(vec![0.25, 0.0]));
        assert_eq!(s.grad_dense(id).unwrap().data(), &[0.75, 0.5]);
        assert!(s.take_grad(id).is_some());
        assert!(s.grad(id).is_none());
    }

    #[test]
    fn rank1_matches_dense() {
        let mut s = ParamStore::new();
        let id = s.add("w", Array::matrix(2, 3, vec![0.0; 6]));
        s.accumulate_grad_rank1(id, vec![1.0, 2.0], vec![3.0, 4.0, 5.0]);
        s.accumulate_grad_rank1(id, vec![0.5, -1.0], vec![1.0, 0.0, 2.0]);
        let dense = s.grad_dense(id).unwrap();
        assert_eq!(dense.data(), &[3.5, 4.0, 6.0, 5.0, 8.0, 8.0]);
        // mixing in a dense contribution densifies correctly
        s.accumulate_grad(id, Array::matrix(2, 3, vec![1.0; 6]));
        let mixed = s.grad_dense(id).unwrap();
        assert_eq!(mixed.data(), &[4.5, 5.0, 7.0, 6.0, 9.0, 9.0]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_name_panics() {
        let mut s = ParamStore::new();
        s.add("w", Array::row(vec![1.0]));
        s.add("w", Array::row(vec![2.0]));
    }
}
