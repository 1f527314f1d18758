use nbtf_tensor::{Conv2dSpec, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Ordered, named trainable tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub(crate) fn add(&mut self, name: String, t: Tensor) -> usize {
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Places every tensor on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    /// Replaces the tensor called `name`, which must keep its shape.
    pub fn assign(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Validation(format!("no parameter named {name}")))?;
        if self.tensors[i].shape() != value.shape() {
            return Err(Error::Validation(format!(
                "parameter {name} has shape {:?}, got {:?}",
                self.tensors[i].shape(),
                value.shape()
            )));
        }
        self.tensors[i] = value;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Conv {
    pub weight: usize,
    pub bias: Option<usize>,
    pub spec: Conv2dSpec,
}

impl Conv {
    pub fn apply(&self, t: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        Ok(t.conv2d(x, p[self.weight], self.bias.map(|b| p[b]), self.spec)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Norm {
    pub gamma: usize,
    pub beta: usize,
}

pub(crate) const LN_EPS: f32 = 1e-5;

impl Norm {
    pub fn apply(&self, t: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        Ok(t.layer_norm(x, p[self.gamma], p[self.beta], LN_EPS)?)
    }
}
