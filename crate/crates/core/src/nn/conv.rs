use super::tensor::{matmul, Mat, Scalar, Tensor};
use super::NnError;

/// Shape bookkeeping for a valid (unpadded) square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - self.kernel) / self.stride + 1
    }

    /// Output positions per channel.
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Length of one receptive field: `in_channels · kernel²`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.positions()
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }
}

/// Unfolds a CHW input into a `patch_len × positions` column matrix; rows
/// are ordered `(channel, ky, kx)` to match the kernel layout.
pub fn im2col<S: Scalar>(input: &[S], g: &ConvGeometry, cols: &mut Vec<S>) {
    let (oh, ow, k, s) = (g.out_h(), g.out_w(), g.kernel, g.stride);
    let positions = oh * ow;
    let plane_len = g.in_h * g.in_w;
    cols.resize(g.patch_len() * positions, S::zero());
    for (row, dst) in cols.chunks_exact_mut(positions).enumerate() {
        let (c, ky, kx) = (row / (k * k), (row / k) % k, row % k);
        let plane = &input[c * plane_len..(c + 1) * plane_len];
        for (oy, dst_row) in dst.chunks_exact_mut(ow).enumerate() {
            let start = (oy * s + ky) * g.in_w + kx;
            let src = &plane[start..start + (ow - 1) * s + 1];
            for (d, &v) in dst_row.iter_mut().zip(src.iter().step_by(s)) {
                *d = v;
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds column gradients back onto the input.
pub fn col2im<S: Scalar>(cols: &[S], g: &ConvGeometry, input_grad: &mut [S]) {
    let (ow, k, s) = (g.out_w(), g.kernel, g.stride);
    let positions = g.positions();
    let plane_len = g.in_h * g.in_w;
    input_grad.iter_mut().for_each(|v| *v = S::zero());
    for (row, src) in cols.chunks_exact(positions).enumerate() {
        let (c, ky, kx) = (row / (k * k), (row / k) % k, row % k);
        let plane = &mut input_grad[c * plane_len..(c + 1) * plane_len];
        for (oy, src_row) in src.chunks_exact(ow).enumerate() {
            let base = (oy * s + ky) * g.in_w + kx;
            for (ox, &v) in src_row.iter().enumerate() {
                plane[base + ox * s] = plane[base + ox * s] + v;
            }
        }
    }
}

/// Unfolds a CHW input into a `positions × patch_len` matrix (the
/// transpose of [`im2col`]).
pub fn im2row<S: Scalar>(input: &[S], g: &ConvGeometry, rows: &mut Vec<S>) {
    let (ow, k, s) = (g.out_w(), g.kernel, g.stride);
    let patch = g.patch_len();
    let plane_len = g.in_h * g.in_w;
    rows.resize(patch * g.positions(), S::zero());
    for (p, dst) in rows.chunks_exact_mut(patch).enumerate() {
        let (oy, ox) = (p / ow, p % ow);
        for c in 0..g.in_channels {
            let plane = &input[c * plane_len..(c + 1) * plane_len];
            for ky in 0..k {
                let src = (oy * s + ky) * g.in_w + ox * s;
                let at = (c * k + ky) * k;
                dst[at..at + k].copy_from_slice(&plane[src..src + k]);
            }
        }
    }
}

/// `out = W · im2col(input) + b`, laid out as `out_channels × positions`.
pub fn conv_forward<S: Scalar>(
    weight: &[S],
    bias: &[S],
    input: &[S],
    g: &ConvGeometry,
    scratch: &mut Vec<S>,
    out: &mut Vec<S>,
) {
    let positions = g.positions();
    im2col(input, g, scratch);
    out.resize(g.output_len(), S::zero());
    for (oc, row) in out.chunks_mut(positions).enumerate() {
        row.iter_mut().for_each(|v| *v = bias[oc]);
    }
    matmul(
        Mat::new(weight, g.out_channels, g.patch_len()),
        false,
        Mat::new(scratch, g.patch_len(), positions),
        false,
        out,
        true,
    );
}

/// Accumulates weight and bias gradients for one sample and, when asked,
/// writes the gradient with respect to the layer input.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<S: Scalar>(
    weight: &[S],
    input: &[S],
    out_grad: &[S],
    g: &ConvGeometry,
    weight_grad: &mut [S],
    bias_grad: &mut [S],
    scratch: &mut Vec<S>,
    input_grad: Option<&mut [S]>,
) {
    let positions = g.positions();
    im2row(input, g, scratch);
    matmul(
        Mat::new(out_grad, g.out_channels, positions),
        false,
        Mat::new(scratch, positions, g.patch_len()),
        false,
        weight_grad,
        true,
    );
    for (oc, row) in out_grad.chunks(positions).enumerate() {
        bias_grad[oc] = row.iter().fold(bias_grad[oc], |acc, &v| acc + v);
    }
    if let Some(input_grad) = input_grad {
        scratch.resize(g.patch_len() * positions, S::zero());
        matmul(
            Mat::new(weight, g.out_channels, g.patch_len()),
            true,
            Mat::new(out_grad, g.out_channels, positions),
            false,
            scratch,
            false,
        );
        col2im(scratch, g, input_grad);
    }
}

/// Valid 2-D convolution of a `[C, H, W]` input with a `[O, C, K, K]`
/// kernel and `[O]` bias. Returns `[O, H', W']`.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
) -> Result<Tensor<S>, NnError> {
    let &[in_channels, in_h, in_w] = input.shape() else {
        return Err(NnError::ShapeMismatch {
            expected: vec![0, 0, 0],
            actual: input.shape().to_vec(),
        });
    };
    let &[out_channels, wc, kh, kw] = weight.shape() else {
        return Err(NnError::ShapeMismatch {
            expected: vec![0, in_channels, 0, 0],
            actual: weight.shape().to_vec(),
        });
    };
    if wc != in_channels || kh != kw || kh > in_h || kw > in_w || stride == 0 {
        return Err(NnError::ShapeMismatch {
            expected: vec![out_channels, in_channels, kh, kh],
            actual: weight.shape().to_vec(),
        });
    }
    if bias.shape() != [out_channels] {
        return Err(NnError::ShapeMismatch {
            expected: vec![out_channels],
            actual: bias.shape().to_vec(),
        });
    }
    let g = ConvGeometry {
        in_channels,
        in_h,
        in_w,
        out_channels,
        kernel: kh,
        stride,
    };
    let mut scratch = Vec::new();
    let mut out = Vec::new();
    conv_forward(weight.data(), bias.data(), input.data(), &g, &mut scratch, &mut out);
    Tensor::from_vec(&[out_channels, g.out_h(), g.out_w()], out)
}
