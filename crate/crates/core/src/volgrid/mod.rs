//! A small, deterministic reverse-mode autodiff engine for volumetric networks.
//!
//! The engine knows exactly the pieces a convolutional VAE needs: 3-D
//! convolution ("same" zero padding), 3-D transposed convolution with an
//! explicit output size, dense layers, ReLU, sigmoid, the mean-squared-error
//! and closed-form diagonal-Gaussian KL losses, and the reparameterization
//! step. Gradients are accumulated in a fixed sequential order so two backward
//! passes over the same graph produce bitwise-identical results.
//!
//! Everything is generic over [`Real`], so training runs in `f32` while the
//! finite-difference checks run in `f64` through the same code path.
//!
//! ```
//! use contrast3d::volgrid::{Graph, Tensor};
//!
//! let x = Tensor::new(vec![3], vec![1.0_f64, -2.0, 0.5]).unwrap();
//! let mut g = Graph::new();
//! let xv = g.variable(x);
//! let y = g.sigmoid(xv);
//! let loss = g.sum(y);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(xv).unwrap().len(), 3);
//! ```

mod adam;
mod graph;
mod kernels;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use graph::{Gradients, Graph, NodeId};
pub use kernels::{
    conv3d_forward, conv_output_side, deconv3d_forward, dense_forward, kl_diag_gaussian,
    mse_loss, reparameterize,
};
pub use tensor::{LayerKind, LayerSpec, Real, Tensor};

#[allow(unused_imports)]
pub(crate) use tensor::lit;
