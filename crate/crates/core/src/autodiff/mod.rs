//! Dense `f64` tensors, a reverse-mode tape, Adam and parameter checkpoints.

mod adam;
mod checkpoint;
mod graph;
mod tensor;

use std::collections::BTreeMap;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{Graph, Mode, Var};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("output does not depend on any parameter")]
    Disconnected,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    DropoutRate(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Named parameters with shape-matched gradients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    values: BTreeMap<String, Tensor>,
    grads: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        self.grads.insert(name.clone(), Tensor::zeros(value.shape()));
        self.values.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.values.get_mut(name)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_values(&self) -> usize {
        self.values.values().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, g: &Tensor) -> Result<(), TensorError> {
        let slot = self
            .grads
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        if slot.shape() != g.shape() {
            return Err(TensorError::Shape {
                op: "accumulate_grad",
                detail: format!("{name}: {:?} vs {:?}", slot.shape(), g.shape()),
            });
        }
        slot.data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub(crate) fn values_and_grads_mut(
        &mut self,
    ) -> impl Iterator<Item = (&String, &mut Tensor, &Tensor)> {
        self.values
            .iter_mut()
            .zip(self.grads.values())
            .map(|((k, v), g)| (k, v, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[4])).unwrap();
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.25; 4]);
        let x = g.constant(t(&[4], &[2f64.ln(), 0.0, 0.0, 0.0])).unwrap();
        let y = g.softmax(x).unwrap();
        for (a, b) in g.value(y).data().iter().zip([0.4, 0.2, 0.2, 0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
        // large logits stay finite
        let x = g.constant(t(&[2], &[1000.0, -1000.0])).unwrap();
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 0.0]);
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3, 3], &[1.0; 9])).unwrap();
        let y = g.causal_softmax(x).unwrap();
        let v = g.value(y).data();
        assert_eq!(&v[0..3], &[1.0, 0.0, 0.0]);
        assert_eq!(&v[3..6], &[0.5, 0.5, 0.0]);
        for k in 6..9 {
            assert!((v[k] - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let m = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        let p = g.matmul(i, m).unwrap();
        assert_eq!(g.value(p), g.value(m));
        assert!(g.matmul(m, m).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut p = ParameterSet::new();
        p.insert("w", t(&[2, 3], &[0.1, -0.2, 0.3, 0.4, 0.5, 0.6]));
        p.insert("unused", t(&[2], &[1.0, 2.0]));
        let mut g = Graph::new();
        let w = g.param(&p, "w").unwrap();
        let s = g.sum(w).unwrap();
        g.backward(s, &mut p).unwrap();
        assert_eq!(p.grad("w").unwrap().data(), &[1.0; 6]);
        assert_eq!(p.grad("unused").unwrap().data(), &[0.0; 2]);
    }

    #[test]
    fn backward_errors() {
        let mut p = ParameterSet::new();
        p.insert("w", t(&[2], &[1.0, 2.0]));
        let mut g = Graph::new();
        let w = g.param(&p, "w").unwrap();
        assert!(matches!(g.backward(w, &mut p), Err(TensorError::NotScalar(_))));
        let c = g.constant(Tensor::scalar(1.0)).unwrap();
        assert!(matches!(g.backward(c, &mut p), Err(TensorError::Disconnected)));
        let neg = g.constant(t(&[1], &[-1.0])).unwrap();
        assert!(matches!(g.log(neg), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn dropout_modes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[10], 2.0)).unwrap();
        let e = g.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(g.value(e), g.value(x));
        let z = g.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(g.value(z), g.value(x));
        assert!(g.dropout(x, 1.0, Mode::Train, &mut rng).is_err());

        let big = g.constant(Tensor::full(&[1_000_000], 1.0)).unwrap();
        let d = g.dropout(big, 0.05, Mode::Train, &mut rng).unwrap();
        let v = g.value(d).data();
        let zeros = v.iter().filter(|&&x| x == 0.0).count() as f64 / v.len() as f64;
        assert!((zeros - 0.05).abs() < 0.002, "{zeros}");
        assert!(v.iter().all(|&x| x == 0.0 || (x - 1.0 / 0.95).abs() < 1e-15));
    }
}
