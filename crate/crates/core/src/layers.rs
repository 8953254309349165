//! Forward and backward kernels for the dense, convolution, dropout and
//! concatenation layers.
//!
//! Kernels work on a leading batch axis. The `*_apply` functions are the
//! standalone single-layer entry points and accept either one sample or a
//! batch.

use rand::Rng;

use crate::error::{Error, Result};
use crate::network::Mode;
use crate::tensor::{axpy, dot, Activation, Scalar, Tensor};

/// Output extent of a valid (unpadded) convolution, `None` when the kernel
/// does not fit.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > input {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

/// `y = act(W x + b)` for one sample (`x` rank 1) or a batch (`x` rank 2).
pub fn dense_apply<T: Scalar>(
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    x: &Tensor<T>,
    activation: Activation,
) -> Result<Tensor<T>> {
    if weight.rank() != 2 {
        return Err(Error::Shape(format!(
            "dense weight must be rank 2, got {:?}",
            weight.shape()
        )));
    }
    let (units, fan_in) = (weight.shape()[0], weight.shape()[1]);
    if let Some(b) = bias {
        if b.shape() != [units] {
            return Err(Error::Shape(format!(
                "bias {:?} does not match {units} units",
                b.shape()
            )));
        }
    }
    let (batch, single) = match x.shape() {
        [n] if *n == fan_in => (1, true),
        [b, n] if *n == fan_in => (*b, false),
        other => {
            return Err(Error::Shape(format!(
                "input {other:?} does not match fan-in {fan_in}"
            )))
        }
    };
    let y = dense_forward(weight, bias, x.data(), batch, activation);
    let shape = if single {
        vec![units]
    } else {
        vec![batch, units]
    };
    Tensor::new(shape, y)
}

pub(crate) fn dense_forward<T: Scalar>(
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    x: &[T],
    batch: usize,
    activation: Activation,
) -> Vec<T> {
    let (units, fan_in) = (weight.shape()[0], weight.shape()[1]);
    let w = weight.data();
    let mut y = Vec::with_capacity(batch * units);
    for xb in x.chunks_exact(fan_in).take(batch) {
        for u in 0..units {
            let mut z = dot(&w[u * fan_in..(u + 1) * fan_in], xb);
            if let Some(b) = bias {
                z = z + b.data()[u];
            }
            y.push(activation.apply(z));
        }
    }
    y
}

pub(crate) struct DenseGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub input: Option<Vec<T>>,
}

/// Backward pass of a dense layer given its input `x`, output `y` and the
/// gradient `gy` flowing into the output.
pub(crate) fn dense_backward<T: Scalar>(
    weight: &Tensor<T>,
    x: &[T],
    y: &[T],
    gy: &[T],
    batch: usize,
    activation: Activation,
    need_input_grad: bool,
) -> DenseGrads<T> {
    let (units, fan_in) = (weight.shape()[0], weight.shape()[1]);
    let w = weight.data();
    let mut gw = vec![T::zero(); units * fan_in];
    let mut gb = vec![T::zero(); units];
    let mut gx = need_input_grad.then(|| vec![T::zero(); batch * fan_in]);
    for b in 0..batch {
        let xb = &x[b * fan_in..(b + 1) * fan_in];
        for u in 0..units {
            let idx = b * units + u;
            let gz = gy[idx] * activation.grad_from_output(y[idx]);
            if gz == T::zero() {
                continue;
            }
            gb[u] = gb[u] + gz;
            axpy(gz, xb, &mut gw[u * fan_in..(u + 1) * fan_in]);
            if let Some(gx) = gx.as_mut() {
                axpy(
                    gz,
                    &w[u * fan_in..(u + 1) * fan_in],
                    &mut gx[b * fan_in..(b + 1) * fan_in],
                );
            }
        }
    }
    DenseGrads {
        weight: gw,
        bias: gb,
        input: gx,
    }
}

/// Geometry of a convolution call: `[channels, height, width]` in, square
/// kernel, stride.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn from_shapes(kernel_shape: &[usize], input: [usize; 3], stride: usize) -> Result<Self> {
        let [filters, in_ch, kh, kw] = match kernel_shape {
            [f, c, h, w] => [*f, *c, *h, *w],
            other => {
                return Err(Error::Shape(format!(
                    "conv kernels must be rank 4, got {other:?}"
                )))
            }
        };
        if kh != kw {
            return Err(Error::Shape(format!(
                "conv kernels must be square, got {kh}x{kw}"
            )));
        }
        let [channels, height, width] = input;
        if channels != in_ch {
            return Err(Error::Shape(format!(
                "kernel expects {in_ch} input channels, input has {channels}"
            )));
        }
        if stride == 0 {
            return Err(Error::Shape("conv stride must be positive".into()));
        }
        let (out_height, out_width) = match (
            conv_output_extent(height, kh, stride),
            conv_output_extent(width, kw, stride),
        ) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                return Err(Error::KernelTooLarge {
                    kernel: kh,
                    height,
                    width,
                })
            }
        };
        Ok(Self {
            channels,
            height,
            width,
            filters,
            kernel: kh,
            stride,
            out_height,
            out_width,
        })
    }

    fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn out_len(&self) -> usize {
        self.filters * self.out_height * self.out_width
    }
}

/// Valid cross-correlation with bias and activation for one sample
/// (`x` is `[C, H, W]`) or a batch (`[B, C, H, W]`).
pub fn conv2d_apply<T: Scalar>(
    kernels: &Tensor<T>,
    biases: &Tensor<T>,
    x: &Tensor<T>,
    stride: usize,
    activation: Activation,
) -> Result<Tensor<T>> {
    let (batch, dims, single) = match x.shape() {
        [c, h, w] => (1, [*c, *h, *w], true),
        [b, c, h, w] => (*b, [*c, *h, *w], false),
        other => {
            return Err(Error::Shape(format!(
                "conv input must be rank 3 or 4, got {other:?}"
            )))
        }
    };
    let geo = ConvGeometry::from_shapes(kernels.shape(), dims, stride)?;
    if biases.shape() != [geo.filters] {
        return Err(Error::Shape(format!(
            "bias {:?} does not match {} filters",
            biases.shape(),
            geo.filters
        )));
    }
    let y = conv_forward(
        &geo,
        kernels.data(),
        biases.data(),
        x.data(),
        batch,
        activation,
    );
    let mut shape = vec![geo.filters, geo.out_height, geo.out_width];
    if !single {
        shape.insert(0, batch);
    }
    Tensor::new(shape, y)
}

pub(crate) fn conv_forward<T: Scalar>(
    geo: &ConvGeometry,
    kernels: &[T],
    biases: &[T],
    x: &[T],
    batch: usize,
    activation: Activation,
) -> Vec<T> {
    let k = geo.kernel;
    let plane = geo.height * geo.width;
    let kernel_len = geo.channels * k * k;
    let mut y = Vec::with_capacity(batch * geo.out_len());
    for xb in x.chunks_exact(geo.in_len()).take(batch) {
        for f in 0..geo.filters {
            let kf = &kernels[f * kernel_len..(f + 1) * kernel_len];
            for oy in 0..geo.out_height {
                for ox in 0..geo.out_width {
                    let mut z = biases[f];
                    for c in 0..geo.channels {
                        for ky in 0..k {
                            let row =
                                c * plane + (oy * geo.stride + ky) * geo.width + ox * geo.stride;
                            let krow = (c * k + ky) * k;
                            z = z + dot(&kf[krow..krow + k], &xb[row..row + k]);
                        }
                    }
                    y.push(activation.apply(z));
                }
            }
        }
    }
    y
}

pub(crate) struct ConvGrads<T> {
    pub kernels: Vec<T>,
    pub biases: Vec<T>,
    pub input: Option<Vec<T>>,
}

pub(crate) fn conv_backward<T: Scalar>(
    geo: &ConvGeometry,
    kernels: &[T],
    x: &[T],
    y: &[T],
    gy: &[T],
    batch: usize,
    activation: Activation,
    need_input_grad: bool,
) -> ConvGrads<T> {
    let k = geo.kernel;
    let plane = geo.height * geo.width;
    let kernel_len = geo.channels * k * k;
    let out_plane = geo.out_height * geo.out_width;
    let mut gk = vec![T::zero(); kernels.len()];
    let mut gb = vec![T::zero(); geo.filters];
    let mut gx = need_input_grad.then(|| vec![T::zero(); batch * geo.in_len()]);
    for b in 0..batch {
        let xb = &x[b * geo.in_len()..(b + 1) * geo.in_len()];
        for f in 0..geo.filters {
            let kf = &kernels[f * kernel_len..(f + 1) * kernel_len];
            for oy in 0..geo.out_height {
                for ox in 0..geo.out_width {
                    let idx = b * geo.out_len() + f * out_plane + oy * geo.out_width + ox;
                    let gz = gy[idx] * activation.grad_from_output(y[idx]);
                    if gz == T::zero() {
                        continue;
                    }
                    gb[f] = gb[f] + gz;
                    for c in 0..geo.channels {
                        for ky in 0..k {
                            let row =
                                c * plane + (oy * geo.stride + ky) * geo.width + ox * geo.stride;
                            let krow = f * kernel_len + (c * k + ky) * k;
                            axpy(gz, &xb[row..row + k], &mut gk[krow..krow + k]);
                            if let Some(gx) = gx.as_mut() {
                                let base = b * geo.in_len() + row;
                                let klocal = (c * k + ky) * k;
                                axpy(gz, &kf[klocal..klocal + k], &mut gx[base..base + k]);
                            }
                        }
                    }
                }
            }
        }
    }
    ConvGrads {
        kernels: gk,
        biases: gb,
        input: gx,
    }
}

/// Dropout with drop probability `p`.
///
/// In training mode every element is independently zeroed with probability
/// `p` and the keep mask (ones and zeros) is returned for the backward pass.
/// In evaluation mode every element is scaled by the keep probability `1 - p`,
/// which makes the evaluation output equal the expectation of the training
/// output.
pub fn dropout_apply<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor<T>,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> (Tensor<T>, Option<Tensor<T>>) {
    if p == 0.0 {
        return (x.clone(), None);
    }
    match mode {
        Mode::Eval => {
            let keep = T::from_f64(1.0 - p);
            (x.map(|v| v * keep), None)
        }
        Mode::Train => {
            let mask = Tensor::new(
                x.shape().to_vec(),
                (0..x.len())
                    .map(|_| {
                        if rng.gen::<f64>() < p {
                            T::zero()
                        } else {
                            T::one()
                        }
                    })
                    .collect(),
            )
            .expect("mask mirrors input shape");
            let out = Tensor::new(
                x.shape().to_vec(),
                x.data()
                    .iter()
                    .zip(mask.data())
                    .map(|(&v, &m)| v * m)
                    .collect(),
            )
            .expect("output mirrors input shape");
            (out, Some(mask))
        }
    }
}

/// Concatenation of rank-1 tensors in the given order.
pub fn concat_apply<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if inputs.is_empty() {
        return Err(Error::Shape("concat needs at least one input".into()));
    }
    let mut out = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        if t.rank() != 1 {
            return Err(Error::Shape(format!(
                "concat input {i} has rank {}, expected 1",
                t.rank()
            )));
        }
        out.extend_from_slice(t.data());
    }
    Ok(Tensor::vector(out))
}

/// Batched concatenation: each part is `[batch, width_i]` flattened.
pub(crate) fn concat_forward<T: Scalar>(parts: &[(&[T], usize)], batch: usize) -> Vec<T> {
    let total: usize = parts.iter().map(|(_, w)| w).sum();
    let mut out = Vec::with_capacity(batch * total);
    for b in 0..batch {
        for (data, width) in parts {
            out.extend_from_slice(&data[b * width..(b + 1) * width]);
        }
    }
    out
}
