//! Trainable parameter: an owned f64 buffer plus the tape binding from its
//! most recent forward pass. Binding is per-pass because tapes are transient;
//! the slot is a mutex so a model can be shared read-only across threads for
//! inference, while training stays single-writer.

use std::sync::Mutex;

use crate::autodiff::tape::{Gradients, Tape};
use crate::autodiff::tensor::{numel, NodeRef, Tensor};
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct Parameter {
    data: Vec<f64>,
    shape: Vec<usize>,
    bound: Mutex<Option<NodeRef>>,
}

impl Parameter {
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::BadShape {
                op: "parameter",
                msg: format!("{} elements do not fill", data.len()),
                shape: shape.to_vec(),
            });
        }
        Ok(Parameter {
            data,
            shape: shape.to_vec(),
            bound: Mutex::new(None),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Parameter {
            data: vec![0.0; numel(shape)],
            shape: shape.to_vec(),
            bound: Mutex::new(None),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Replaces the values, keeping the shape.
    pub fn set_data(&mut self, data: Vec<f64>) -> Result<()> {
        if data.len() != self.data.len() {
            return Err(Error::BadShape {
                op: "parameter",
                msg: format!("{} elements do not fill", data.len()),
                shape: self.shape.clone(),
            });
        }
        self.data = data;
        Ok(())
    }

    /// Registers this parameter as a leaf on `tape` and remembers the node so
    /// `grad` can find it after backward. Call once per forward pass.
    pub fn tracked(&self, tape: &Tape) -> Result<Tensor> {
        let t = tape.leaf(self.data.clone(), &self.shape)?;
        *self.bound.lock().expect("parameter binding poisoned") = t.node();
        Ok(t)
    }

    /// Gradient from the most recent pass this parameter was tracked on.
    pub fn grad<'g>(&self, grads: &'g Gradients) -> Option<&'g [f64]> {
        let bound = (*self.bound.lock().expect("parameter binding poisoned"))?;
        let probe = Tensor::tracked(self.shape.clone(), std::sync::Arc::new(vec![]), bound);
        grads.wrt(&probe)
    }

    /// Round-trips the values through f32, the checkpoint precision.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

impl Clone for Parameter {
    fn clone(&self) -> Self {
        Parameter {
            data: self.data.clone(),
            shape: self.shape.clone(),
            bound: Mutex::new(None),
        }
    }
}

/// Anything holding named parameters. Visit order must be deterministic and
/// identical between the `visit` and `visit_mut` so optimizer state lines up.
pub trait ParamSet {
    fn visit(&self, f: &mut dyn FnMut(&str, &Parameter));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, p| n += p.data().len());
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |name, _| names.push(name.to_string()));
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracked_binds_and_grad_resolves() {
        let p = Parameter::new(vec![2.0, 3.0], &[2]).unwrap();
        let tape = Tape::new();
        let x = p.tracked(&tape).unwrap();
        let y = tape.sum(&tape.mul(&x, &x).unwrap(), None).unwrap();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(p.grad(&grads).unwrap(), &[4.0, 6.0]);
    }

    #[test]
    fn grad_is_none_before_any_pass() {
        let p = Parameter::zeros(&[3]);
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0], &[1]).unwrap();
        let grads = tape.backward(&tape.sum(&x, None).unwrap()).unwrap();
        assert!(p.grad(&grads).is_none());
    }

    #[test]
    fn quantize_matches_f32_cast() {
        let v = 0.1234567890123456789;
        let mut p = Parameter::new(vec![v], &[1]).unwrap();
        p.quantize();
        assert_eq!(p.data()[0], v as f32 as f64);
    }
}
