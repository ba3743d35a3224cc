//! Shaped float and int8 tensors.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::quant::QuantParams;

/// Tensor dimensions. Activations are NHWC, conv weights are `[kh, kw, cin, cout]`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(contract("shape must have at least one dimension"));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(contract(format!(
                "shape {dims:?} has zero-sized dimension {i}"
            )));
        }
        Ok(Self(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Returns the four NHWC dimensions, or a contract error for other ranks.
    pub fn nhwc(&self) -> Result<[usize; 4]> {
        match self.0.as_slice() {
            &[n, h, w, c] => Ok([n, h, w, c]),
            other => Err(contract(format!("expected a rank-4 shape, got {other:?}"))),
        }
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = crate::Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Shape::new(dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

/// A dense float tensor. Float payloads never carry quantization parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Copy> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(contract(format!(
                "payload has {} elements but shape {} needs {}",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, f: impl FnMut(usize) -> T) -> Self {
        let data = (0..shape.numel()).map(f).collect();
        Self { shape, data }
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        let data = vec![value; shape.numel()];
        Self { shape, data }
    }

    pub fn shape(&self) -> &Shape {
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

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().copied().map(f).collect(),
        }
    }
}

/// An int8 tensor together with the affine parameters that give it meaning.
#[derive(Clone, Debug, PartialEq)]
pub struct QTensor {
    shape: Shape,
    data: Vec<i8>,
    params: QuantParams,
}

impl QTensor {
    pub fn new(shape: Shape, data: Vec<i8>, params: QuantParams) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(contract(format!(
                "payload has {} elements but shape {} needs {}",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Self {
            shape,
            data,
            params,
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn params(&self) -> QuantParams {
        self.params
    }

    pub fn into_parts(self) -> (Shape, Vec<i8>, QuantParams) {
        (self.shape, self.data, self.params)
    }
}

/// Element type of an activation or weight tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    I8,
    I32,
}

impl DType {
    pub fn size_of(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::I8 => 1,
        }
    }
}
