//! Dense row-major tensors.

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Dense array with an explicit shape. Image batches use `(N, H, W, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return invalid(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Element-wise conversion into another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.to_f64_lossless())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Splits the leading (batch) axis into single-sample tensors.
    pub fn unstack(&self) -> Vec<Tensor<T>> {
        let n = self.shape[0];
        let per = self.data.len() / n.max(1);
        let mut shape = self.shape.clone();
        shape[0] = 1;
        self.data
            .chunks(per.max(1))
            .take(n)
            .map(|c| Tensor {
                shape: shape.clone(),
                data: c.to_vec(),
            })
            .collect()
    }

    /// Concatenates tensors along the leading axis. All trailing dims must agree.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let Some(first) = items.first() else {
            return invalid("cannot stack an empty list");
        };
        let tail = &first.shape[1..];
        let mut data = Vec::with_capacity(first.data.len() * items.len());
        let mut n = 0;
        for t in items {
            if &t.shape[1..] != tail {
                return invalid(format!(
                    "stack: shape {:?} does not match {:?}",
                    t.shape, first.shape
                ));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Ok(Tensor { shape, data })
    }
}

impl<T> Tensor<T> {
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

    pub(crate) fn reshape_unchecked(mut self, shape: &[usize]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    /// Interprets the shape as `(N, H, W, C)`.
    pub fn nhwc(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, h, w, c] => Ok((n, h, w, c)),
            _ => invalid(format!("expected an (N,H,W,C) tensor, got {:?}", self.shape)),
        }
    }
}
