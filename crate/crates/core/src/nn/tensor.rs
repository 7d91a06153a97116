use std::fmt::Debug;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::NnError;

/// Floating-point element type for tensors. Training runs in `f32`; the
/// gradient checker instantiates the same code at `f64`.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// C (+)= A·B for arbitrary row/column strides.
    ///
    /// # Safety
    /// Slices must cover every element addressed by the given strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row-major matrix operand: `rows × cols`, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, S> {
    pub data: &'a [S],
    pub rows: usize,
    pub cols: usize,
}

impl<'a, S> Mat<'a, S> {
    pub fn new(data: &'a [S], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Mat { data, rows, cols }
    }
}

const SMALL_TRANSPOSE: usize = 1 << 16;

fn transpose<S: Scalar>(m: Mat<'_, S>) -> Vec<S> {
    let mut t = vec![S::zero(); m.rows * m.cols];
    for r in 0..m.rows {
        for c in 0..m.cols {
            t[c * m.rows + r] = m.data[r * m.cols + c];
        }
    }
    t
}

/// `out (+)= op(a) · op(b)` where `op` optionally transposes. `out` is
/// row-major with shape `op(a).rows × op(b).cols`.
pub(crate) fn matmul<S: Scalar>(
    a: Mat<'_, S>,
    transpose_a: bool,
    b: Mat<'_, S>,
    transpose_b: bool,
    out: &mut [S],
    accumulate: bool,
) {
    // strided (transposed) operands take a slow packing path in the gemm
    // kernel; small ones are cheaper to transpose up front
    let a_t;
    let (a, transpose_a) = if transpose_a && a.rows * a.cols <= SMALL_TRANSPOSE {
        a_t = transpose(a);
        (Mat::new(&a_t, a.cols, a.rows), false)
    } else {
        (a, transpose_a)
    };
    let b_t;
    let (b, transpose_b) = if transpose_b && b.rows * b.cols <= SMALL_TRANSPOSE {
        b_t = transpose(b);
        (Mat::new(&b_t, b.cols, b.rows), false)
    } else {
        (b, transpose_b)
    };
    let (m, k, rsa, csa) = if transpose_a {
        (a.cols, a.rows, 1isize, a.cols as isize)
    } else {
        (a.rows, a.cols, a.cols as isize, 1isize)
    };
    let (kb, n, rsb, csb) = if transpose_b {
        (b.cols, b.rows, 1isize, b.cols as isize)
    } else {
        (b.rows, b.cols, b.cols as isize, 1isize)
    };
    assert_eq!(k, kb, "inner dimensions differ");
    assert!(out.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out[..m * n].iter_mut().for_each(|v| *v = S::zero());
        }
        return;
    }
    let beta = if accumulate { S::one() } else { S::zero() };
    // SAFETY: dimensions and strides were checked against the slice lengths above.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    const LANES: usize = 16;
    let mut acc = [S::zero(); LANES];
    let (ca, ra) = a.as_chunks::<LANES>();
    let (cb, rb) = b[..a.len()].as_chunks::<LANES>();
    for (x, y) in ca.iter().zip(cb) {
        for i in 0..LANES {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut tail = S::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

/// `y += alpha · x`.
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Dense n-dimensional array, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<S = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::ShapeMismatch {
                expected: shape.to_vec(),
                actual: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
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

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn fill(&mut self, value: S) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum_squares(&self) -> f64 {
        // eight partial sums so the loop vectorizes; fixed order keeps it deterministic
        let mut acc = [0.0f64; 8];
        let chunks = self.data.chunks_exact(8);
        let tail: f64 = chunks.remainder().iter().map(|v| v.as_f64() * v.as_f64()).sum();
        for c in chunks {
            for (a, v) in acc.iter_mut().zip(c) {
                *a += v.as_f64() * v.as_f64();
            }
        }
        acc.iter().sum::<f64>() + tail
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total = exps.iter().copied().fold(S::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / total).collect()
}

/// `log softmax(z)` computed as `z - logsumexp(z)`.
pub fn log_softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let total = logits
        .iter()
        .map(|&z| (z - max).exp())
        .fold(S::zero(), |a, b| a + b);
    let lse = max + total.ln();
    logits.iter().map(|&z| z - lse).collect()
}
