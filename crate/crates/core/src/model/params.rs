use crate::error::Result;
use crate::numerics::Tensor;

/// Read-only walk over named parameter tensors.
pub trait ParamVisitor<T> {
    fn visit(&mut self, name: &str, tensor: &Tensor<T>);
}

impl<T, F: FnMut(&str, &Tensor<T>)> ParamVisitor<T> for F {
    fn visit(&mut self, name: &str, tensor: &Tensor<T>) {
        self(name, tensor)
    }
}

/// Mutable walk, used for loading weights into a zeroed skeleton.
pub trait ParamVisitorMut<T> {
    fn visit(&mut self, name: &str, tensor: &mut Tensor<T>) -> Result<()>;
}

impl<T, F: FnMut(&str, &mut Tensor<T>) -> Result<()>> ParamVisitorMut<T> for F {
    fn visit(&mut self, name: &str, tensor: &mut Tensor<T>) -> Result<()> {
        self(name, tensor)
    }
}
