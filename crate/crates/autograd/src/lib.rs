//! Reverse-mode automatic differentiation for the small convolutional
//! networks used by `regionmix`.
//!
//! Kernels are generic over [`Scalar`]: `f32` for training, `f64` for
//! gradient checks, and [`Dual`] for exact Hessian-vector products (run the
//! whole forward and backward pass over dual numbers and read the tangent of
//! the gradients).

pub mod check;
mod graph;
mod ops;
mod scalar;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use ops::{concat, resize_bilinear_data, sigmoid, softplus};
pub use scalar::{Dual, Scalar};
pub use tensor::{broadcast_shape, Tensor};
