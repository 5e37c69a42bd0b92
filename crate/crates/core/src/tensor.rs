//! Dense row-major tensors and the numerical kernels the networks are built on.
//!
//! Spatial tensors use the `[H, W, C]` layout with channels fastest; convolution
//! kernels are `[kh, kw, Cin, Cout]`. Production paths run on `f32`; every kernel
//! is generic over [`Real`] so the verification oracles can run the same code in
//! `f64`.
//!
//! Convolution is cross-correlation: `out[y, x, o] = Σ in[y·s + i, x·s + j, c] · k[i, j, c, o]`.
//! The textbook convolution `Σ x(i − d) ω(d)` is the same operation applied to a
//! kernel flipped along both spatial axes.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating point element type of a [`Tensor`].
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.iter().any(|&e| e == 0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "extents must be positive".into(),
        });
    }
    Ok(shape.iter().product())
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("holds {} elements but data has {}", n, data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Reinterprets the data under a new shape; element order is unchanged.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Sum accumulated in `f64` regardless of the element type.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Flat row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &e)| acc * e + i)
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    /// Extents of a rank-3 `[H, W, C]` tensor.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[h, w, c] => Ok((h, w, c)),
            s => Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "expected rank 3 [H, W, C]".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolMode {
    Avg,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Identity,
}

/// Output extents and leading padding of one convolution axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisGeometry {
    pub input: usize,
    pub kernel: usize,
    pub output: usize,
    pub pad_before: usize,
}

impl AxisGeometry {
    pub fn new(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<Self> {
        if stride == 0 || kernel == 0 || input == 0 {
            return None;
        }
        match padding {
            Padding::Valid => {
                if kernel > input {
                    return None;
                }
                Some(AxisGeometry {
                    input,
                    kernel,
                    output: (input - kernel) / stride + 1,
                    pad_before: 0,
                })
            }
            Padding::Same => {
                let output = input.div_ceil(stride);
                let needed = ((output - 1) * stride + kernel).saturating_sub(input);
                Some(AxisGeometry {
                    input,
                    kernel,
                    output,
                    pad_before: needed / 2,
                })
            }
        }
    }

    /// Input coordinate hit by kernel tap `k` of output `o`, if inside the input.
    #[inline]
    pub fn source(&self, o: usize, k: usize, stride: usize) -> Option<usize> {
        let pos = (o * stride + k) as isize - self.pad_before as isize;
        (pos >= 0 && (pos as usize) < self.input).then_some(pos as usize)
    }
}

/// Geometry of a 2-D convolution over `[H, W, Cin]` with `[kh, kw, Cin, Cout]` kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub rows: AxisGeometry,
    pub cols: AxisGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn new(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch {
            op: "conv2d",
            left: input_shape.to_vec(),
            right: kernel_shape.to_vec(),
        };
        let (&[h, w, cin], &[kh, kw, kcin, cout]) = (input_shape, kernel_shape) else {
            return Err(mismatch());
        };
        if cin != kcin || stride == 0 {
            return Err(mismatch());
        }
        let rows = AxisGeometry::new(h, kh, stride, padding).ok_or_else(mismatch)?;
        let cols = AxisGeometry::new(w, kw, stride, padding).ok_or_else(mismatch)?;
        Ok(ConvGeometry {
            rows,
            cols,
            in_channels: cin,
            out_channels: cout,
            stride,
        })
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.rows.output, self.cols.output, self.out_channels]
    }

    /// Visits every in-bounds tap of output pixel `(oy, ox)` as
    /// `(input pixel offset, kernel tap offset)`, both pointing at channel 0.
    #[inline]
    pub fn for_each_tap(&self, oy: usize, ox: usize, mut f: impl FnMut(usize, usize)) {
        let (cin, cout, s) = (self.in_channels, self.out_channels, self.stride);
        for ky in 0..self.rows.kernel {
            let Some(iy) = self.rows.source(oy, ky, s) else {
                continue;
            };
            for kx in 0..self.cols.kernel {
                let Some(ix) = self.cols.source(ox, kx, s) else {
                    continue;
                };
                let input_off = (iy * self.cols.input + ix) * cin;
                let kernel_off = (ky * self.cols.kernel + kx) * cin * cout;
                f(input_off, kernel_off);
            }
        }
    }
}

/// 2-D cross-correlation without bias.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let geo = ConvGeometry::new(input.shape(), kernels.shape(), stride, padding)?;
    Ok(conv2d_with(&geo, input.data(), kernels.data(), None))
}

pub(crate) fn conv2d_with<T: Real>(
    geo: &ConvGeometry,
    input: &[T],
    kernels: &[T],
    bias: Option<&[T]>,
) -> Tensor<T> {
    let [oh, ow, cout] = geo.output_shape();
    let cin = geo.in_channels;
    let mut out = vec![T::zero(); oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            let acc = &mut out[(oy * ow + ox) * cout..][..cout];
            if let Some(b) = bias {
                acc.copy_from_slice(b);
            }
            geo.for_each_tap(oy, ox, |in_off, k_off| {
                for ci in 0..cin {
                    let a = input[in_off + ci];
                    if a == T::zero() {
                        continue;
                    }
                    let row = &kernels[k_off + ci * cout..][..cout];
                    for (o, &w) in acc.iter_mut().zip(row) {
                        *o += a * w;
                    }
                }
            });
        }
    }
    Tensor {
        shape: vec![oh, ow, cout],
        data: out,
    }
}

/// Gradient of a convolution with respect to its input.
pub fn conv2d_backward_input<T: Real>(
    geo: &ConvGeometry,
    grad_out: &[T],
    kernels: &[T],
) -> Vec<T> {
    let [oh, ow, cout] = geo.output_shape();
    let cin = geo.in_channels;
    let mut grad_in = vec![T::zero(); geo.rows.input * geo.cols.input * cin];
    for oy in 0..oh {
        for ox in 0..ow {
            let g = &grad_out[(oy * ow + ox) * cout..][..cout];
            geo.for_each_tap(oy, ox, |in_off, k_off| {
                for ci in 0..cin {
                    let row = &kernels[k_off + ci * cout..][..cout];
                    let mut s = T::zero();
                    for (&w, &d) in row.iter().zip(g) {
                        s += w * d;
                    }
                    grad_in[in_off + ci] += s;
                }
            });
        }
    }
    grad_in
}

/// Accumulates the kernel gradient of a convolution into `grad_kernels`.
pub fn conv2d_backward_kernels<T: Real>(
    geo: &ConvGeometry,
    input: &[T],
    grad_out: &[T],
    grad_kernels: &mut [T],
) {
    let [oh, ow, cout] = geo.output_shape();
    let cin = geo.in_channels;
    for oy in 0..oh {
        for ox in 0..ow {
            let g = &grad_out[(oy * ow + ox) * cout..][..cout];
            geo.for_each_tap(oy, ox, |in_off, k_off| {
                for ci in 0..cin {
                    let a = input[in_off + ci];
                    if a == T::zero() {
                        continue;
                    }
                    let row = &mut grad_kernels[k_off + ci * cout..][..cout];
                    for (w, &d) in row.iter_mut().zip(g) {
                        *w += a * d;
                    }
                }
            });
        }
    }
}

/// Result of a 2×2/stride-2 pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    /// Flat input offset of each output element's winner (max mode only).
    pub switches: Option<Vec<usize>>,
}

/// Flat input offsets of the four cells of pooling window `(oy, ox)` in channel `c`.
///
/// Odd extents are padded by edge replication, so the last row/column of a
/// window may repeat the input's edge cell.
#[inline]
pub fn pool_window(h: usize, w: usize, c: usize, oy: usize, ox: usize, ch: usize) -> [usize; 4] {
    let y0 = 2 * oy;
    let x0 = 2 * ox;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    [
        (y0 * w + x0) * c + ch,
        (y0 * w + x1) * c + ch,
        (y1 * w + x0) * c + ch,
        (y1 * w + x1) * c + ch,
    ]
}

pub fn pool_output_shape(h: usize, w: usize, c: usize) -> [usize; 3] {
    [h.div_ceil(2), w.div_ceil(2), c]
}

/// 2×2 pooling with stride 2.
pub fn pool2d<T: Real>(input: &Tensor<T>, mode: PoolMode) -> Result<Pooled<T>> {
    let (h, w, c) = input.hwc()?;
    let [oh, ow, _] = pool_output_shape(h, w, c);
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut switches = (mode == PoolMode::Max).then(|| Vec::with_capacity(oh * ow * c));
    let quarter = T::lit(0.25);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let cells = pool_window(h, w, c, oy, ox, ch);
                match mode {
                    PoolMode::Avg => {
                        let s = x[cells[0]] + x[cells[1]] + x[cells[2]] + x[cells[3]];
                        out.push(s * quarter);
                    }
                    PoolMode::Max => {
                        let mut best = cells[0];
                        for &idx in &cells[1..] {
                            if x[idx] > x[best] || (x[idx] == x[best] && idx < best) {
                                best = idx;
                            }
                        }
                        out.push(x[best]);
                        if let Some(s) = switches.as_mut() {
                            s.push(best);
                        }
                    }
                }
            }
        }
    }
    Ok(Pooled {
        output: Tensor {
            shape: vec![oh, ow, c],
            data: out,
        },
        switches,
    })
}

/// Gradient of a pooling layer with respect to its input.
pub fn pool2d_backward<T: Real>(
    input_shape: &[usize],
    grad_out: &[T],
    mode: PoolMode,
    switches: Option<&[usize]>,
) -> Result<Vec<T>> {
    let &[h, w, c] = input_shape else {
        return Err(Error::InvalidShape {
            shape: input_shape.to_vec(),
            reason: "expected rank 3 [H, W, C]".into(),
        });
    };
    let mut grad_in = vec![T::zero(); h * w * c];
    match mode {
        PoolMode::Max => {
            let sw = switches.ok_or_else(|| Error::invalid("max-pool backward needs switches"))?;
            for (&idx, &g) in sw.iter().zip(grad_out) {
                grad_in[idx] += g;
            }
        }
        PoolMode::Avg => {
            let [oh, ow, _] = pool_output_shape(h, w, c);
            let quarter = T::lit(0.25);
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let g = grad_out[(oy * ow + ox) * c + ch] * quarter;
                        for idx in pool_window(h, w, c, oy, ox, ch) {
                            grad_in[idx] += g;
                        }
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

/// `out_k = σ(Σ_j a_j·w_jk + b_k)` with `weights` laid out `[n_in, n_out]`.
pub fn dense_forward<T: Real>(
    input: &[T],
    weights: &Tensor<T>,
    bias: &[T],
    activation: Activation,
) -> Result<Vec<T>> {
    let &[n_in, n_out] = weights.shape() else {
        return Err(Error::InvalidShape {
            shape: weights.shape().to_vec(),
            reason: "dense weights must be [n_in, n_out]".into(),
        });
    };
    if input.len() != n_in || bias.len() != n_out {
        return Err(Error::ShapeMismatch {
            op: "dense",
            left: vec![input.len(), bias.len()],
            right: vec![n_in, n_out],
        });
    }
    let mut out = bias.to_vec();
    let w = weights.data();
    for (j, &a) in input.iter().enumerate() {
        if a == T::zero() {
            continue;
        }
        for (o, &wk) in out.iter_mut().zip(&w[j * n_out..(j + 1) * n_out]) {
            *o += a * wk;
        }
    }
    if activation == Activation::Relu {
        relu_in_place(&mut out);
    }
    Ok(out)
}

pub fn relu_in_place<T: Real>(values: &mut [T]) {
    for v in values {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Numerically stable softmax (the maximum logit is subtracted first).
pub fn softmax<T: Real>(logits: &[T]) -> Result<Vec<T>> {
    if logits.len() < 2 {
        return Err(Error::invalid("softmax needs at least two logits"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}
