use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered, named parameter tensors. Declaration order defines the layout
/// of the flattened vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.push((name.into(), value));
    }

    pub fn with(mut self, name: impl Into<String>, value: Tensor) -> Self {
        self.push(name, value);
        self
    }

    /// Number of tensors.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count `n`.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.entries[index].1
    }

    pub(crate) fn set(&mut self, index: usize, value: Tensor) {
        debug_assert_eq!(self.entries[index].1.shape(), value.shape());
        self.entries[index].1 = value;
    }

    /// All parameters concatenated into one vector of length `n`.
    pub fn flatten(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.numel());
        for t in self.tensors() {
            data.extend_from_slice(t.data());
        }
        let n = data.len();
        Tensor::from_parts(vec![n], data)
    }

    /// Splits `flat` into tensors shaped like `self`, in declaration order.
    pub fn split(&self, flat: &Tensor) -> Result<Vec<Tensor>> {
        if flat.numel() != self.numel() {
            return Err(Error::dim(
                "unflatten",
                format!("vector of length {} for {} parameters", flat.numel(), self.numel()),
            ));
        }
        let mut rest = flat.data();
        Ok(self
            .tensors()
            .map(|t| {
                let (head, tail) = rest.split_at(t.numel());
                rest = tail;
                Tensor::from_parts(t.shape().to_vec(), head.to_vec())
            })
            .collect())
    }

    /// A set with the same names and shapes holding the values of `flat`.
    pub fn unflatten(&self, flat: &Tensor) -> Result<ParamSet> {
        let parts = self.split(flat)?;
        Ok(ParamSet {
            entries: self
                .entries
                .iter()
                .zip(parts)
                .map(|((name, _), t)| (name.clone(), t))
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use proptest::prelude::*;

    #[test]
    fn flatten_follows_declaration_order() {
        let p = ParamSet::new()
            .with("a", Tensor::from_slice(&[3], &[1.0, 2.0, 3.0]).unwrap())
            .with("b", Tensor::from_slice(&[2], &[4.0, 5.0]).unwrap());
        assert_eq!(p.numel(), 5);
        assert_eq!(p.flatten().data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let parts = p.split(&p.flatten()).unwrap();
        assert_eq!(parts[0].data(), &[1.0, 2.0, 3.0]);
        assert_eq!(parts[1].data(), &[4.0, 5.0]);
        assert!(p.split(&Tensor::zeros(&[4])).is_err());
    }

    proptest! {
        #[test]
        fn flatten_unflatten_identity(shapes in proptest::collection::vec((1usize..4, 1usize..4), 1..5), seed in any::<u64>()) {
            let mut rng = RngState::new(seed);
            let mut p = ParamSet::new();
            for (i, (r, c)) in shapes.iter().enumerate() {
                p.push(format!("p{i}"), Tensor::randn(&mut rng, &[*r, *c]));
            }
            prop_assert_eq!(p.numel(), shapes.iter().map(|(r, c)| r * c).sum::<usize>());
            prop_assert_eq!(p.unflatten(&p.flatten()).unwrap(), p);
        }
    }
}
