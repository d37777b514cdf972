//! Flat parameter container with per-layer boundaries.
//!
//! A `ParamVector` stores the parameters (or gradients, or momentum) of a
//! contiguous run of layers as one flat `f64` array, plus the boundaries that
//! map a layer index to its slice. All elementwise combinators require an
//! exact shape match (same boundaries), so client-side and server-side
//! vectors can never be mixed up silently.

use crate::error::{Error, Result};

/// Flat parameter/gradient/momentum vector with layer boundaries.
///
/// `offsets` has one entry per layer plus one: `offsets[0] == 0`,
/// `offsets[i]..offsets[i+1]` is layer `i`'s slice, and the last offset equals
/// the total length. Boundaries are non-decreasing; layers without parameters
/// (activations, loss heads) contribute empty slices.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    offsets: Vec<usize>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, offsets: Vec<usize>) -> Result<Self> {
        if offsets.is_empty() || offsets[0] != 0 {
            return Err(Error::usage("layer offsets must start at 0"));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::usage("layer offsets must be non-decreasing"));
        }
        if *offsets.last().unwrap() != values.len() {
            return Err(Error::usage(format!(
                "last offset {} does not equal total length {}",
                offsets.last().unwrap(),
                values.len()
            )));
        }
        Ok(ParamVector { values, offsets })
    }

    /// A zero vector with the given per-layer parameter counts.
    pub fn zeros(counts: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(counts.len() + 1);
        offsets.push(0);
        let mut total = 0;
        for &c in counts {
            total += c;
            offsets.push(total);
        }
        ParamVector {
            values: vec![0.0; total],
            offsets,
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![0.0; self.values.len()],
            offsets: self.offsets.clone(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn layer_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn layer_len(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn layer(&self, i: usize) -> &[f64] {
        &self.values[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn same_shape(&self, other: &ParamVector) -> bool {
        self.offsets == other.offsets
    }

    fn check_shape(&self, other: &ParamVector, op: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::usage(format!(
                "shape mismatch in {op}: {:?} vs {:?}",
                self.offsets, other.offsets
            )));
        }
        Ok(())
    }

    /// `self += c * other`, elementwise.
    pub fn add_scaled_assign(&mut self, other: &ParamVector, c: f64) -> Result<()> {
        self.check_shape(other, "add_scaled_assign")?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        Ok(())
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, other: &ParamVector, c: f64) -> Result<ParamVector> {
        let mut out = self.clone();
        out.add_scaled_assign(other, c)?;
        Ok(out)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.add_scaled(other, -1.0)
    }

    /// `c * self`, elementwise.
    pub fn scaled(&self, c: f64) -> ParamVector {
        ParamVector {
            values: self.values.iter().map(|v| c * v).collect(),
            offsets: self.offsets.clone(),
        }
    }

    pub fn scale_assign(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    /// Concatenates parameter vectors of consecutive layer runs.
    pub fn concat(parts: &[&ParamVector]) -> Result<ParamVector> {
        if parts.is_empty() {
            return Err(Error::usage("cannot concatenate zero parameter vectors"));
        }
        let mut values = Vec::new();
        let mut offsets = vec![0];
        for p in parts {
            let base = values.len();
            values.extend_from_slice(&p.values);
            offsets.extend(p.offsets.iter().skip(1).map(|o| base + o));
        }
        Ok(ParamVector { values, offsets })
    }

    /// Extracts layers `range` as a standalone vector.
    pub fn slice_layers(&self, start: usize, end: usize) -> Result<ParamVector> {
        if start > end || end > self.layer_count() {
            return Err(Error::usage(format!(
                "layer range {start}..{end} out of bounds for {} layers",
                self.layer_count()
            )));
        }
        let lo = self.offsets[start];
        let hi = self.offsets[end];
        let offsets = self.offsets[start..=end].iter().map(|o| o - lo).collect();
        ParamVector::new(self.values[lo..hi].to_vec(), offsets)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
