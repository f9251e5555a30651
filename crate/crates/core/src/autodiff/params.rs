use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// One named parameter tensor inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

/// Flat, deterministically ordered storage for all trainable parameters of a
/// network. Gradients returned by [`Graph::backward`](super::Graph::backward)
/// use the same type, so task and energy gradients live in the same space as
/// the parameters they differentiate.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<ParamEntry>,
}

impl ParamVector {
    pub fn empty() -> Self {
        Self {
            values: Vec::new(),
            layout: Vec::new(),
        }
    }

    /// Appends a parameter; offsets are assigned contiguously in call order.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        let offset = self.values.len();
        self.layout.push(ParamEntry {
            name: name.into(),
            shape: tensor.shape().to_vec(),
            offset,
        });
        self.values.extend_from_slice(tensor.data());
        self.layout.len() - 1
    }

    pub fn from_tensors<I, S>(tensors: I) -> Self
    where
        I: IntoIterator<Item = (S, Tensor)>,
        S: Into<String>,
    {
        let mut pv = Self::empty();
        for (name, t) in tensors {
            pv.push(name, t);
        }
        pv
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::LengthMismatch {
                what: "param vector",
                expected: self.values.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            values,
            layout: self.layout.clone(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[ParamEntry] {
        &self.layout
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }

    pub fn entry_slice(&self, idx: usize) -> &[f64] {
        &self.values[self.layout[idx].range()]
    }

    pub fn entry_tensor(&self, idx: usize) -> Tensor {
        let e = &self.layout[idx];
        Tensor::new(e.shape.clone(), self.values[e.range()].to_vec())
            .expect("layout entries always describe valid tensors")
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        let idx = self
            .layout
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        Ok(self.entry_tensor(idx))
    }

    pub fn unflatten(&self) -> Vec<(String, Tensor)> {
        (0..self.layout.len())
            .map(|i| (self.layout[i].name.clone(), self.entry_tensor(i)))
            .collect()
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_len(other)?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_len(&self, other: &ParamVector) -> Result<()> {
        if self.values.len() != other.values.len() {
            return Err(Error::LengthMismatch {
                what: "param vector",
                expected: self.values.len(),
                got: other.values.len(),
            });
        }
        Ok(())
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::LayoutMismatch);
        }
        Ok(())
    }

    /// Prefixes every entry name, e.g. `policy.` for checkpoints.
    pub fn renamed(&self, prefix: &str) -> Self {
        let mut out = self.clone();
        for e in &mut out.layout {
            e.name = format!("{prefix}{}", e.name);
        }
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
