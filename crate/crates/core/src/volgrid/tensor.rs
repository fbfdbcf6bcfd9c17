use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point element type usable by the engine (`f32` or `f64`).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + Sum + Default + Debug + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("finite literal")
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} holds {n} elements, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: Vec<usize>, f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(f).collect(),
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "dot",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        let mut acc = T::zero();
        for (a, b) in self.data.iter().zip(&other.data) {
            acc += *a * *b;
        }
        Ok(acc)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv3d,
    Deconv3d,
    Dense,
    Relu,
    Sigmoid,
}

/// Static description of one layer: enough to allocate and validate its
/// parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv3d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Deconv3d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        target_spatial: usize,
    },
    Dense {
        in_nodes: usize,
        out_nodes: usize,
    },
    Relu,
    Sigmoid,
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Conv3d { .. } => LayerKind::Conv3d,
            LayerSpec::Deconv3d { .. } => LayerKind::Deconv3d,
            LayerSpec::Dense { .. } => LayerKind::Dense,
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::Sigmoid => LayerKind::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel,
                stride,
            }
            | LayerSpec::Deconv3d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if kernel == 0 || stride == 0 {
                    return Err(Error::Config(format!(
                        "kernel and stride must be >= 1 (kernel {kernel}, stride {stride})"
                    )));
                }
                if in_channels == 0 || out_channels == 0 {
                    return Err(Error::Config("channel counts must be >= 1".into()));
                }
                if let LayerSpec::Deconv3d { target_spatial, .. } = *self {
                    if target_spatial == 0 || target_spatial % stride != 0 {
                        return Err(Error::Config(format!(
                            "deconv target side {target_spatial} is not a multiple of stride {stride}"
                        )));
                    }
                }
                Ok(())
            }
            LayerSpec::Dense {
                in_nodes,
                out_nodes,
            } => {
                if in_nodes == 0 || out_nodes == 0 {
                    return Err(Error::Config("dense layers need >= 1 node".into()));
                }
                Ok(())
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(()),
        }
    }

    /// Weight and bias shapes, or `None` for parameter-free layers.
    ///
    /// Transposed convolutions store weights as `[in, out, k, k, k]`, which is
    /// the weight layout of the convolution they are the adjoint of.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel, kernel],
                vec![out_channels],
            )),
            LayerSpec::Deconv3d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![in_channels, out_channels, kernel, kernel, kernel],
                vec![out_channels],
            )),
            LayerSpec::Dense {
                in_nodes,
                out_nodes,
            } => Some((vec![out_nodes, in_nodes], vec![out_nodes])),
            LayerSpec::Relu | LayerSpec::Sigmoid => None,
        }
    }

    /// `(fan_in, fan_out)` used by the uniform initializer.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel,
                ..
            }
            | LayerSpec::Deconv3d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let k3 = kernel * kernel * kernel;
                Some((in_channels * k3, out_channels * k3))
            }
            LayerSpec::Dense {
                in_nodes,
                out_nodes,
            } => Some((in_nodes, out_nodes)),
            LayerSpec::Relu | LayerSpec::Sigmoid => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_rejects_count_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0f32; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], Vec::<f32>::new()).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0f32; 6]).is_ok());
    }

    #[test]
    fn layer_validation() {
        let bad = LayerSpec::Conv3d {
            in_channels: 1,
            out_channels: 2,
            kernel: 0,
            stride: 1,
        };
        assert!(bad.validate().is_err());
        let bad = LayerSpec::Dense {
            in_nodes: 0,
            out_nodes: 2,
        };
        assert!(bad.validate().is_err());
        let deconv = LayerSpec::Deconv3d {
            in_channels: 4,
            out_channels: 2,
            kernel: 3,
            stride: 2,
            target_spatial: 8,
        };
        deconv.validate().unwrap();
        assert_eq!(deconv.param_shapes().unwrap().0, vec![4, 2, 3, 3, 3]);
    }
}
