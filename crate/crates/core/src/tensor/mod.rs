//! Dense tensors with a small reverse-mode autodiff tape.
//!
//! Feature maps are laid out `channels × height × width`, convolution kernels
//! `out × in × kh × kw`. There is no batch axis: a minibatch is a set of
//! independent graphs whose parameter gradients are summed afterwards.

mod graph;
pub mod ops;
mod optim;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use crate::error::{shape_err, Result};

pub use graph::{Gradients, Graph, Var};
pub use optim::{adam_step, lr_schedule, AdamState};

/// Floating-point element type. Training and inference use `f32`; `f64`
/// exists for gradient checks.
pub trait Element: Float + Default + Debug + Send + Sync + Sum + 'static {
    fn cast(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    #[inline]
    fn cast(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    #[inline]
    fn cast(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Element = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(shape_err!("zero extent in shape {shape:?}"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            ));
        }
        Ok(Self { shape: shape.to_vec(), data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Self::from_vec(shape, vec![value; numel])
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value], requires_grad: false, grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// `(channels, height, width)` of a rank-3 feature map.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(shape_err!("expected a C×H×W tensor, got shape {:?}", self.shape)),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Turns gradient tracking on or off. Turning it on allocates a zeroed
    /// gradient buffer; turning it off drops the buffer.
    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        self.grad = on.then(|| vec![T::zero(); self.data.len()]);
    }

    pub fn with_grad(mut self) -> Self {
        self.set_requires_grad(true);
        self
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<()> {
        let Some(g) = self.grad.as_mut() else {
            return Err(shape_err!("tensor {:?} does not track gradients", self.shape));
        };
        if g.len() != delta.len() {
            return Err(shape_err!(
                "gradient of length {} does not fit tensor {:?}",
                delta.len(),
                self.shape
            ));
        }
        g.iter_mut().zip(delta).for_each(|(a, &b)| *a = *a + b);
        Ok(())
    }

    /// Element-type conversion. Gradient tracking carries over, the buffer
    /// contents do too.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::cast(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|&v| U::cast(v.as_f64())).collect()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Option<T> {
        (self.shape == other.shape).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a - b).abs())
                .fold(T::zero(), T::max)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_product() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn grad_buffer_follows_flag() {
        let mut t = Tensor::<f64>::zeros(&[2, 2]).unwrap();
        assert!(t.grad().is_none());
        t.set_requires_grad(true);
        assert_eq!(t.grad().unwrap().len(), 4);
        t.accumulate_grad(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        t.accumulate_grad(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 3.0, 4.0, 5.0]);
        assert!(t.accumulate_grad(&[1.0]).is_err());
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0; 4]);
    }

    #[test]
    fn cast_round_trips_exact_values() {
        let t = Tensor::<f32>::from_vec(&[3], vec![0.5, -1.25, 3.0]).unwrap();
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t, back);
    }
}
