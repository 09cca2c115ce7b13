use crate::numcore::{Matrix, Tape, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Matrix,
}

/// Ordered set of named parameter matrices with a stable flat layout.
///
/// Flat index `i` always refers to the same scalar for the lifetime of the
/// registry; regularizers key their per-parameter importances by it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamRegistry {
    entries: Vec<ParamEntry>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Matrix) {
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
        });
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.entries.iter_mut().find(|e| e.name == name).map(|e| &mut e.value)
    }

    /// Total scalar count `P`.
    pub fn len(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for e in &self.entries {
            out.extend_from_slice(e.value.as_slice());
        }
        out
    }

    pub fn assign(&mut self, values: &[f64]) -> Result<()> {
        let p = self.len();
        if values.len() != p {
            return Err(Error::LengthMismatch {
                expected: p,
                got: values.len(),
            });
        }
        let mut offset = 0;
        for e in &mut self.entries {
            let n = e.value.len();
            e.value.as_mut_slice().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Registers every entry as a differentiable leaf, in registry order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries.iter().map(|e| tape.leaf(e.value.clone())).collect()
    }

    /// Registers every entry as a constant (no gradient).
    pub fn bind_constant(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries.iter().map(|e| tape.constant(e.value.clone())).collect()
    }

    /// Flat gradient of the leaves returned by [`bind`](Self::bind).
    pub fn gradient(&self, tape: &Tape, vars: &[Var]) -> Vec<f64> {
        assert_eq!(vars.len(), self.entries.len());
        let mut out = Vec::with_capacity(self.len());
        for v in vars {
            out.extend_from_slice(tape.grad(*v).as_slice());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ParamRegistry {
        let mut r = ParamRegistry::new();
        r.push("w", Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        r.push("b", Matrix::row_vector(&[5.0, 6.0]));
        r
    }

    #[test]
    fn assign_rejects_wrong_length() {
        let mut r = sample();
        assert!(matches!(
            r.assign(&[0.0; 5]),
            Err(Error::LengthMismatch { expected: 6, got: 5 })
        ));
    }

    #[test]
    fn flatten_follows_registration_order() {
        assert_eq!(sample().flatten(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    proptest! {
        #[test]
        fn assign_then_flatten_is_identity(v in prop::collection::vec(-1e6f64..1e6, 6)) {
            let mut r = sample();
            r.assign(&v).unwrap();
            prop_assert_eq!(r.flatten(), v);
        }
    }
}
