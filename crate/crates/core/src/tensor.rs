//! Dense fp32 tensors and the handful of kernels the Mamba pipeline needs.
//!
//! Sequence tensors are time-major (`L x C`, row-major). Kernels come in two
//! flavours: allocating wrappers over [`Tensor`] and `*_into` forms that
//! write into caller-owned views, so the planned executor can run entirely
//! inside one arena. Both flavours share the same inner loops, which keeps
//! their results bit-identical.

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

/// Contiguous row-major fp32 array with an explicit shape of rank 1 to 4.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    dims: [usize; MAX_RANK],
    rank: u8,
    data: Vec<f32>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("data", &self.data)
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<[usize; MAX_RANK]> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::Shape {
            shape: shape.to_vec(),
            reason: "rank must be between 1 and 4",
        });
    }
    if shape.contains(&0) {
        return Err(Error::Shape {
            shape: shape.to_vec(),
            reason: "extents must be at least 1",
        });
    }
    let mut dims = [1; MAX_RANK];
    dims[..shape.len()].copy_from_slice(shape);
    Ok(dims)
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let dims = check_shape(shape)?;
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::dim("tensor", shape, &[data.len()]));
        }
        Ok(Self {
            dims,
            rank: shape.len() as u8,
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let numel = shape.iter().product();
        Self::new(shape, vec![0.0; numel])
    }

    /// Builds a tensor by evaluating `f` at each flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f32) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Self::new(shape, (0..numel).map(f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.dims[..self.rank as usize]
    }

    pub fn rank(&self) -> usize {
        self.rank as usize
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Number of rows when viewed as a matrix (1 for vectors).
    pub fn rows(&self) -> usize {
        match self.rank() {
            1 => 1,
            r => self.dims[..r - 1].iter().product(),
        }
    }

    /// Innermost extent.
    pub fn cols(&self) -> usize {
        self.dims[self.rank() - 1]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Matrix view with the innermost extent as columns.
    pub fn mat(&self) -> MatRef<'_> {
        MatRef::new(&self.data, self.rows(), self.cols())
    }

    pub fn mat_mut(&mut self) -> MatMut<'_> {
        let (rows, cols) = (self.rows(), self.cols());
        MatMut::new(&mut self.data, rows, cols)
    }

    /// Copies columns `[start, start + width)` of a matrix-shaped tensor.
    pub fn column_slice(&self, start: usize, width: usize) -> Result<Tensor> {
        let view = self.mat().columns(start, width)?;
        view.to_tensor()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Borrowed, possibly strided, row-major matrix view.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    data: &'a [f32],
    rows: usize,
    cols: usize,
    stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols)
    }

    /// # Panics
    /// If `data` is too short for `rows` rows of `stride` elements.
    pub fn strided(data: &'a [f32], rows: usize, cols: usize, stride: usize) -> Self {
        assert!(cols <= stride, "cols {cols} exceed stride {stride}");
        assert!(
            rows == 0 || data.len() >= (rows - 1) * stride + cols,
            "view {rows}x{cols}/{stride} exceeds buffer of {}",
            data.len()
        );
        Self {
            data,
            rows,
            cols,
            stride,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f32] {
        let start = i * self.stride;
        &self.data[start..start + self.cols]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f32 {
        debug_assert!(j < self.cols);
        self.data[i * self.stride + j]
    }

    /// Sub-view of columns `[start, start + width)`.
    pub fn columns(&self, start: usize, width: usize) -> Result<MatRef<'a>> {
        if width == 0 || start + width > self.cols {
            return Err(Error::dim("columns", &[start, width], &self.shape()));
        }
        let data = &self.data[start..];
        Ok(MatRef {
            data,
            rows: self.rows,
            cols: width,
            stride: self.stride,
        })
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            out.extend_from_slice(self.row(i));
        }
        Tensor::new(&[self.rows, self.cols], out)
    }
}

/// Mutable counterpart of [`MatRef`]; always dense.
#[derive(Debug)]
pub struct MatMut<'a> {
    data: &'a mut [f32],
    rows: usize,
    cols: usize,
}

impl<'a> MatMut<'a> {
    /// # Panics
    /// If `data` is shorter than `rows * cols`.
    pub fn new(data: &'a mut [f32], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols);
        Self { data, rows, cols }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let start = i * self.cols;
        &mut self.data[start..start + self.cols]
    }

    pub fn as_ref(&self) -> MatRef<'_> {
        MatRef::new(self.data, self.rows, self.cols)
    }
}

/// `out[l, o] = sum_i x[l, i] * w[o, i] + b[o]`.
///
/// Products accumulate in f64 over ascending `i` and round to f32 once.
pub fn linear_into(x: MatRef, w: MatRef, b: Option<&[f32]>, out: &mut MatMut) -> Result<()> {
    if x.cols() != w.cols() {
        return Err(Error::dim("linear", &x.shape(), &w.shape()));
    }
    if let Some(b) = b {
        if b.len() != w.rows() {
            return Err(Error::dim("linear.bias", &w.shape(), &[b.len()]));
        }
    }
    if out.shape() != [x.rows(), w.rows()] {
        return Err(Error::dim(
            "linear.out",
            &[x.rows(), w.rows()],
            &out.shape(),
        ));
    }
    for l in 0..x.rows() {
        let xr = x.row(l);
        let orow = out.row_mut(l);
        for (o, slot) in orow.iter_mut().enumerate() {
            let wr = w.row(o);
            let mut acc = 0.0f64;
            for i in 0..xr.len() {
                acc += xr[i] as f64 * wr[i] as f64;
            }
            if let Some(b) = b {
                acc += b[o] as f64;
            }
            *slot = acc as f32;
        }
    }
    Ok(())
}

pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    linear_view(x.mat(), w, b)
}

/// [`linear`] over a borrowed (possibly strided) input view.
pub fn linear_view(x: MatRef, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    if w.rank() != 2 {
        return Err(Error::dim("linear.weight", w.shape(), &[0, 0]));
    }
    let mut out = Tensor::zeros(&[x.rows(), w.rows()])?;
    linear_into(x, w.mat(), b.map(Tensor::data), &mut out.mat_mut())?;
    Ok(out)
}

/// Rounds a double-precision exponential once to fp32.
#[inline]
pub fn exp_f32(x: f32) -> f32 {
    (x as f64).exp() as f32
}

/// `ln(1 + e^x)` in the overflow-safe form `max(x, 0) + ln(1 + e^-|x|)`.
#[inline]
pub fn softplus_scalar(x: f32) -> f32 {
    let x = x as f64;
    (x.max(0.0) + (-x.abs()).exp().ln_1p()) as f32
}

#[inline]
pub fn silu_scalar(x: f32) -> f32 {
    let x = x as f64;
    (x / (1.0 + (-x).exp())) as f32
}

pub fn softplus_inplace(xs: &mut [f32]) {
    xs.iter_mut().for_each(|v| *v = softplus_scalar(*v));
}

pub fn silu_inplace(xs: &mut [f32]) {
    xs.iter_mut().for_each(|v| *v = silu_scalar(*v));
}

pub fn softplus(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    softplus_inplace(out.data_mut());
    out
}

pub fn silu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    silu_inplace(out.data_mut());
    out
}

/// Causal depthwise convolution with `K - 1` implicit leading zero rows.
///
/// `out[t, c] = sum_k w[c, k] * x_pad[t + k, c] + b[c]`, accumulated in f64.
pub fn depthwise_conv1d_causal_into(
    x: MatRef,
    w: MatRef,
    b: Option<&[f32]>,
    out: &mut MatMut,
) -> Result<()> {
    let (len, channels) = (x.rows(), x.cols());
    let k = w.cols();
    if w.rows() != channels || k == 0 {
        return Err(Error::dim("conv1d", &x.shape(), &w.shape()));
    }
    if let Some(b) = b {
        if b.len() != channels {
            return Err(Error::dim("conv1d.bias", &w.shape(), &[b.len()]));
        }
    }
    if out.shape() != x.shape() {
        return Err(Error::dim("conv1d.out", &x.shape(), &out.shape()));
    }
    for t in 0..len {
        let orow = out.row_mut(t);
        for (c, slot) in orow.iter_mut().enumerate() {
            let taps = w.row(c);
            let mut acc = 0.0f64;
            for (tap, &wk) in taps.iter().enumerate() {
                // x_pad[t + tap] == x[t + tap - (k - 1)]
                if let Some(src) = (t + tap).checked_sub(k - 1) {
                    acc += wk as f64 * x.at(src, c) as f64;
                }
            }
            if let Some(b) = b {
                acc += b[c] as f64;
            }
            *slot = acc as f32;
        }
    }
    Ok(())
}

pub fn depthwise_conv1d_causal(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    conv_view(x.mat(), w, b)
}

pub(crate) fn conv_view(x: MatRef, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    if w.rank() != 2 {
        return Err(Error::dim("conv1d.weight", w.shape(), &[0, 0]));
    }
    let mut out = Tensor::zeros(&[x.rows(), x.cols()])?;
    depthwise_conv1d_causal_into(x, w.mat(), b.map(Tensor::data), &mut out.mat_mut())?;
    Ok(out)
}

/// Column means over time, summed in f64 in ascending time order.
pub fn mean_pool_time_into(x: MatRef, out: &mut [f32]) -> Result<()> {
    if out.len() != x.cols() {
        return Err(Error::dim("mean_pool", &x.shape(), &[out.len()]));
    }
    for (c, slot) in out.iter_mut().enumerate() {
        let sum: f64 = (0..x.rows()).map(|l| x.at(l, c) as f64).sum();
        *slot = (sum / x.rows() as f64) as f32;
    }
    Ok(())
}

pub fn max_pool_time_into(x: MatRef, out: &mut [f32]) -> Result<()> {
    if out.len() != x.cols() {
        return Err(Error::dim("max_pool", &x.shape(), &[out.len()]));
    }
    out.copy_from_slice(x.row(0));
    for l in 1..x.rows() {
        for (acc, &v) in out.iter_mut().zip(x.row(l)) {
            if v > *acc {
                *acc = v;
            }
        }
    }
    Ok(())
}

pub fn mean_pool_time(x: &Tensor) -> Tensor {
    let mut out = vec![0.0; x.cols()];
    mean_pool_time_into(x.mat(), &mut out).expect("output sized from input");
    Tensor::new(&[x.cols()], out).expect("cols >= 1")
}

pub fn max_pool_time(x: &Tensor) -> Tensor {
    let mut out = vec![0.0; x.cols()];
    max_pool_time_into(x.mat(), &mut out).expect("output sized from input");
    Tensor::new(&[x.cols()], out).expect("cols >= 1")
}

/// Index of the maximum; ties resolve to the lowest index.
///
/// # Panics
/// If `xs` is empty.
pub fn argmax_slice(xs: &[f32]) -> usize {
    assert!(!xs.is_empty(), "argmax of an empty slice");
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

pub fn argmax(x: &Tensor) -> usize {
    argmax_slice(x.data())
}
