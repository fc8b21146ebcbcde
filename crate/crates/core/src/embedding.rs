use std::ops::Deref;
use std::sync::Arc;

/// An embedding vector. Cloning shares the underlying buffer. The norm is
/// cached, and so is the list of nonzero positions when the vector is
/// sparse, which keeps similarity scans over hashed bag-of-words vectors
/// cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Arc<[f64]>,
    norm: f64,
    support: Option<Arc<[u32]>>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        let norm = dense_dot(&values, &values).sqrt();
        let nonzero: Vec<u32> = values.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, _)| i as u32).collect();
        let support = (nonzero.len() * 4 <= values.len()).then(|| nonzero.into());
        Self { values: values.into(), norm, support }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Inner product. Terms where either side is zero are skipped, which
    /// leaves the sum bit-for-bit equal to the dense one because the
    /// accumulator starts at +0.0.
    pub fn dot(&self, other: &Embedding) -> f64 {
        let sparse = match (&self.support, &other.support) {
            (Some(a), Some(b)) => Some(if a.len() <= b.len() { a } else { b }),
            (Some(a), None) | (None, Some(a)) => Some(a),
            (None, None) => None,
        };
        match sparse {
            Some(idx) => {
                let mut acc = 0.0;
                for &i in idx.iter() {
                    let i = i as usize;
                    if let (Some(x), Some(y)) = (self.values.get(i), other.values.get(i)) {
                        acc += x * y;
                    }
                }
                acc
            }
            None => dense_dot(&self.values, &other.values),
        }
    }
}

impl Deref for Embedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(v: Vec<f64>) -> Self {
        Self::new(v)
    }
}

fn dense_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Cosine similarity. Any zero vector yields 0. Callers must check that the
/// dimensions agree; extra components of the longer vector are ignored.
pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    let denom = a.norm * b.norm;
    if denom == 0.0 {
        return 0.0;
    }
    a.dot(b) / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec())
    }

    #[test]
    fn zero_vector_cosine_is_zero() {
        assert_eq!(cosine(&e(&[0.0, 0.0]), &e(&[1.0, 0.0])), 0.0);
        assert_eq!(cosine(&e(&[0.0]), &e(&[0.0])), 0.0);
    }

    #[test]
    fn cosine_is_exactly_symmetric() {
        let a = e(&[0.3, -0.1, 0.77, 0.2]);
        let b = e(&[0.9, 0.4, -0.05, 0.1]);
        assert_eq!(cosine(&a, &b).to_bits(), cosine(&b, &a).to_bits());
    }

    proptest! {
        #[test]
        fn sparse_and_dense_products_agree_bitwise(
            a in proptest::collection::vec(prop_oneof![3 => Just(0.0), 1 => -1.0f64..1.0], 32),
            b in proptest::collection::vec(prop_oneof![1 => Just(0.0), 1 => -1.0f64..1.0], 32),
        ) {
            let (ea, eb) = (e(&a), e(&b));
            prop_assert_eq!(ea.dot(&eb).to_bits(), dense_dot(&a, &b).to_bits());
            prop_assert_eq!(eb.dot(&ea).to_bits(), dense_dot(&b, &a).to_bits());
        }
    }
}
