//! Dense row-major `f64` tensors and the numeric kernels everything else is
//! built from.
//!
//! A [`Tensor`] is immutable once built: clones share storage, and the few
//! in-place helpers used internally copy on write.

mod conv;
mod loss;
mod matmul;

use std::fmt;
use std::sync::Arc;

use crate::alloc::Buffer;
use crate::error::{Error, Result};
use crate::rng::RngState;

pub use conv::{conv2d, conv2d_input_grad, conv2d_kernel_grad, maxpool2d, maxpool2d_scatter, MaxPool};
pub use loss::{logsoftmax_nll, logsoftmax_nll_with_probs};
pub use matmul::{matmul, matmul_nt, matmul_tn};

#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Buffer>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        let data = self.data();
        if data.len() <= SHOWN {
            write!(f, "{data:?}")
        } else {
            write!(f, "{:?}..", &data[..SHOWN])
        }
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data() == other.data()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Builds a tensor, checking that every extent is positive and that
    /// `data` holds exactly one value per element. An empty shape is a
    /// scalar.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim("tensor", format!("zero extent in shape {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Tensor::from_parts(shape.to_vec(), data))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            shape,
            data: Arc::new(Buffer::new(data)),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_parts(Vec::new(), vec![value])
    }

    pub fn from_slice(shape: &[usize], data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.to_vec())
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor::from_parts(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, 1.0)
    }

    /// Square identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::from_parts(vec![n, n], data)
    }

    /// I.i.d. standard normal entries drawn from `rng` in row-major order.
    pub fn randn(rng: &mut RngState, shape: &[usize]) -> Self {
        let mut data = vec![0.0; numel(shape)];
        rng.fill_normal(&mut data);
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// I.i.d. entries uniform on `[lo, hi)`.
    pub fn uniform(rng: &mut RngState, shape: &[usize], lo: f64, hi: f64) -> Self {
        let data = (0..numel(shape)).map(|_| lo + (hi - lo) * rng.next_f64()).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data() {
            [x] => Ok(*x),
            _ => Err(Error::Contract(format!(
                "expected a scalar, found shape {:?}",
                self.shape
            ))),
        }
    }

    /// Same elements, new shape. Shares storage with `self`.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.contains(&0) || numel(shape) != self.numel() {
            return Err(Error::shapes("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    /// Mutable view of the elements, copying first if storage is shared.
    pub(crate) fn make_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    fn check_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shapes(op, &self.shape, &other.shape));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data().iter().map(|&x| f(x)).collect())
    }

    fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same(other, op)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|x| x * c)
    }

    pub fn offset(&self, c: f64) -> Tensor {
        self.map(|x| x + c)
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, other: &Tensor, alpha: f64) -> Result<Tensor> {
        self.zip(other, "add_scaled", |a, b| a + alpha * b)
    }

    /// In-place `self += alpha * other`.
    pub(crate) fn axpy_assign(&mut self, other: &Tensor, alpha: f64) -> Result<()> {
        self.check_same(other, "axpy")?;
        let src = Arc::clone(&other.data);
        for (a, &b) in self.make_mut().iter_mut().zip(src.iter()) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Sum of all elements in row-major order.
    pub fn sum(&self) -> f64 {
        self.data().iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.numel() != other.numel() {
            return Err(Error::shapes("dot", &self.shape, &other.shape));
        }
        Ok(self.data().iter().zip(other.data()).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data().iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn relu(&self) -> Tensor {
        self.map(|x| x.max(0.0))
    }

    /// Keeps `values` where `self > 0` and zeroes it elsewhere; the ReLU
    /// derivative routing used by both AD modes.
    pub fn relu_mask(&self, values: &Tensor) -> Result<Tensor> {
        self.zip(values, "relu_mask", |x, v| if x > 0.0 { v } else { 0.0 })
    }

    /// Adds a length-`K` bias to every row of a `B×K` matrix.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let k = match self.shape.as_slice() {
            [_, k] if bias.shape == [*k] => *k,
            _ => return Err(Error::shapes("add_bias", &self.shape, &bias.shape)),
        };
        let b = bias.data();
        let data = self
            .data()
            .chunks_exact(k)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    /// Column sums of a `B×K` matrix, accumulated row by row.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let k = match self.shape.as_slice() {
            [_, k] => *k,
            _ => return Err(Error::dim("sum_rows", format!("expected a matrix, got {:?}", self.shape))),
        };
        let mut out = vec![0.0; k];
        for row in self.data().chunks_exact(k) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        Ok(Tensor::from_parts(vec![k], out))
    }

    /// Elements at the given flat indices, laid out as `shape`.
    pub fn gather(&self, indices: &[usize], shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != indices.len() {
            return Err(Error::dim("gather", format!("{} indices for shape {shape:?}", indices.len())));
        }
        let src = self.data();
        let data = indices
            .iter()
            .map(|&i| {
                src.get(i).copied().ok_or(Error::Index {
                    op: "gather",
                    index: i,
                    bound: src.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::from_parts(shape.to_vec(), data))
    }

    /// Rows `indices` of the leading axis, stacked in order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let rows = *self.shape.first().ok_or_else(|| Error::dim("select_rows", "scalar has no rows"))?;
        if indices.is_empty() {
            return Err(Error::dim("select_rows", "no rows selected"));
        }
        let width = self.numel() / rows;
        let src = self.data();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            if i >= rows {
                return Err(Error::Index {
                    op: "select_rows",
                    index: i,
                    bound: rows,
                });
            }
            data.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Tensor::from_parts(shape, data))
    }
}
