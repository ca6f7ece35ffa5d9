//! Immutable n-dimensional value. A `Tensor` is a shape plus shared storage,
//! optionally carrying a reference to the tape node that produced it. Detached
//! tensors (no node) are plain data and can cross threads freely.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Identifies a node on a specific tape. The `tape` field is a process-unique
/// id, so a stale reference from another tape is detected instead of silently
/// reading the wrong node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeRef {
    pub(crate) tape: u64,
    pub(crate) index: usize,
}

#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeRef>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Tensor {
    /// Detached tensor from raw data. Fails if the element count does not
    /// match the shape product.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::BadShape {
                op: "tensor",
                msg: format!("{} elements do not fill", data.len()),
                shape: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        })
    }

    /// Detached scalar (rank 0).
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: Arc::new(vec![value]),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![0.0; numel(shape)]),
            node: None,
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; numel(shape)]),
            node: None,
        }
    }

    pub(crate) fn tracked(shape: Vec<usize>, data: Arc<Vec<f64>>, node: NodeRef) -> Self {
        Tensor {
            shape,
            data,
            node: Some(node),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn storage(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub fn node(&self) -> Option<NodeRef> {
        self.node
    }

    /// Same values with no tape reference.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::BadShape {
                op: "item",
                msg: "expected exactly one element".into(),
                shape: self.shape.clone(),
            });
        }
        Ok(self.data[0])
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_element_count() {
        assert!(Tensor::new(vec![1.0, 2.0, 3.0], &[2, 2]).is_err());
        assert!(Tensor::new(vec![1.0; 4], &[2, 2]).is_ok());
    }

    #[test]
    fn scalar_has_rank_zero_and_one_element() {
        let t = Tensor::scalar(4.5);
        assert!(t.shape().is_empty());
        assert_eq!(t.numel(), 1);
        assert_eq!(t.item().unwrap(), 4.5);
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[5]), vec![1]);
        assert!(strides(&[]).is_empty());
    }

    #[test]
    fn detach_shares_storage_but_drops_node() {
        let t = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let d = t.detach();
        assert_eq!(d.data(), t.data());
        assert!(d.node().is_none());
    }
}
