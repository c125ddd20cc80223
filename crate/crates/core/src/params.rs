//! Named traversal over parameter and gradient trees.
//!
//! Parameters and their gradients use identical names, so an optimizer or a
//! checkpoint writer can walk both trees in lockstep.

use crate::layers::{BatchNormState, BnGrad, ConvGrad, ConvParams};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Updated by the optimizer.
    Learnable,
    /// Batch-norm running statistics: saved, never differentiated.
    RunningStat,
}

pub type Entry<'a, F> = (String, Role, &'a Tensor<F>);
pub type EntryMut<'a, F> = (String, Role, &'a mut Tensor<F>);

pub trait Visit<F: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Entry<'a, F>>);
}

pub trait VisitMut<F: Scalar> {
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<EntryMut<'a, F>>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<F: Scalar> Visit<F> for ConvParams<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Entry<'a, F>>) {
        out.push((join(prefix, "weight"), Role::Learnable, &self.weight));
        out.push((join(prefix, "bias"), Role::Learnable, &self.bias));
    }
}

impl<F: Scalar> VisitMut<F> for ConvParams<F> {
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<EntryMut<'a, F>>) {
        out.push((join(prefix, "weight"), Role::Learnable, &mut self.weight));
        out.push((join(prefix, "bias"), Role::Learnable, &mut self.bias));
    }
}

impl<F: Scalar> Visit<F> for ConvGrad<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Entry<'a, F>>) {
        out.push((join(prefix, "weight"), Role::Learnable, &self.weight));
        out.push((join(prefix, "bias"), Role::Learnable, &self.bias));
    }
}

impl<F: Scalar> Visit<F> for BatchNormState<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Entry<'a, F>>) {
        out.push((join(prefix, "gamma"), Role::Learnable, &self.gamma));
        out.push((join(prefix, "beta"), Role::Learnable, &self.beta));
        out.push((join(prefix, "running_mean"), Role::RunningStat, &self.running_mean));
        out.push((join(prefix, "running_var"), Role::RunningStat, &self.running_var));
    }
}

impl<F: Scalar> VisitMut<F> for BatchNormState<F> {
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<EntryMut<'a, F>>) {
        out.push((join(prefix, "gamma"), Role::Learnable, &mut self.gamma));
        out.push((join(prefix, "beta"), Role::Learnable, &mut self.beta));
        out.push((join(prefix, "running_mean"), Role::RunningStat, &mut self.running_mean));
        out.push((join(prefix, "running_var"), Role::RunningStat, &mut self.running_var));
    }
}

impl<F: Scalar> Visit<F> for BnGrad<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Entry<'a, F>>) {
        out.push((join(prefix, "gamma"), Role::Learnable, &self.gamma));
        out.push((join(prefix, "beta"), Role::Learnable, &self.beta));
    }
}

/// Flattened `(name, role, tensor)` list of a tree.
pub fn entries<F: Scalar, T: Visit<F>>(tree: &T) -> Vec<Entry<'_, F>> {
    let mut out = Vec::new();
    tree.visit("", &mut out);
    out
}

pub fn entries_mut<F: Scalar, T: VisitMut<F>>(tree: &mut T) -> Vec<EntryMut<'_, F>> {
    let mut out = Vec::new();
    tree.visit_mut("", &mut out);
    out
}

/// Learnable tensors only, in traversal order.
pub fn learnable<F: Scalar, T: Visit<F>>(tree: &T) -> Vec<(String, &Tensor<F>)> {
    entries(tree)
        .into_iter()
        .filter(|(_, role, _)| *role == Role::Learnable)
        .map(|(name, _, t)| (name, t))
        .collect()
}

pub fn learnable_mut<F: Scalar, T: VisitMut<F>>(tree: &mut T) -> Vec<(String, &mut Tensor<F>)> {
    entries_mut(tree)
        .into_iter()
        .filter(|(_, role, _)| *role == Role::Learnable)
        .map(|(name, _, t)| (name, t))
        .collect()
}
