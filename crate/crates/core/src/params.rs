//! Named parameter groups and their flat-vector view.

use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Result};
use crate::numerics::DenseMatrix;
use crate::scalar::Real;

/// Ordered collection of named parameter arrays.
///
/// The flat vector concatenates the groups in insertion order, each group in
/// row-major order. Positive quantities are stored as logarithms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<DenseMatrix<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseMatrix<T>) {
        let name = name.into();
        assert!(self.position(&name).is_none(), "duplicate parameter group `{name}`");
        self.names.push(name);
        self.values.push(value);
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    /// Panics on an unknown name; group names are fixed by the model builder.
    pub fn get(&self, name: &str) -> &DenseMatrix<T> {
        &self.values[self.position(name).unwrap_or_else(|| panic!("no parameter group `{name}`"))]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut DenseMatrix<T> {
        let i = self.position(name).unwrap_or_else(|| panic!("no parameter group `{name}`"));
        &mut self.values[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> impl Iterator<Item = (&str, &DenseMatrix<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn n_groups(&self) -> usize {
        self.names.len()
    }

    pub fn n_params(&self) -> usize {
        self.values.iter().map(DenseMatrix::len).sum()
    }

    /// `(offset, len)` of a group inside the flat vector.
    pub fn span(&self, name: &str) -> (usize, usize) {
        let i = self.position(name).unwrap_or_else(|| panic!("no parameter group `{name}`"));
        let off = self.values[..i].iter().map(DenseMatrix::len).sum();
        (off, self.values[i].len())
    }

    pub fn flatten(&self) -> Vec<T> {
        self.values.iter().flat_map(|v| v.as_slice().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(dim_err(format!("{} values for {} parameters", flat.len(), self.n_params())));
        }
        let mut off = 0;
        for v in &mut self.values {
            let n = v.len();
            v.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Leaves on `tape`, one per group, in group order.
    pub fn on_tape<'t>(&self, tape: &'t Tape<T>) -> TapeParams<'t, T> {
        TapeParams {
            names: self.names.clone(),
            vars: self.values.iter().map(|v| tape.leaf(v.clone())).collect(),
        }
    }
}

/// Tape leaves of a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct TapeParams<'t, T> {
    names: Vec<String>,
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Real> TapeParams<'t, T> {
    pub fn get(&self, name: &str) -> Var<'t, T> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("no parameter group `{name}`"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }
}
