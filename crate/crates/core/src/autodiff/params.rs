use serde::{Deserialize, Serialize};

use super::AutodiffError;

/// Named logical sub-block of a [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub dims: Vec<usize>,
}

impl Block {
    pub fn new(name: impl Into<String>, dims: &[usize]) -> Self {
        Self { name: name.into(), dims: dims.to_vec() }
    }

    pub fn size(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Flat parameter storage with a block layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    blocks: Vec<Block>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, blocks: Vec<Block>) -> Result<Self, AutodiffError> {
        let expected: usize = blocks.iter().map(Block::size).sum();
        if expected != values.len() {
            return Err(AutodiffError::ShapeMismatch { expected, found: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFiniteParameter { index: i });
        }
        Ok(Self { values, blocks })
    }

    /// Single block named `"values"`.
    pub fn flat(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::new(values, vec![Block::new("values", &[n])]).expect("flat parameter vector must be finite")
    }

    pub fn zeros(blocks: Vec<Block>) -> Self {
        let n = blocks.iter().map(Block::size).sum();
        Self { values: vec![0.0; n], blocks }
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

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::new(values, self.blocks.clone())
    }

    /// Offset and length of a named block.
    pub fn block_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut start = 0;
        for b in &self.blocks {
            if b.name == name {
                return Some(start..start + b.size());
            }
            start += b.size();
        }
        None
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.block_range(name).map(|r| &self.values[r])
    }

    pub(crate) fn check_same_len(&self, other: &ParamVector) -> Result<(), AutodiffError> {
        if self.len() != other.len() {
            return Err(AutodiffError::ShapeMismatch { expected: self.len(), found: other.len() });
        }
        Ok(())
    }
}
