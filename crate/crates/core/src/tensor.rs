//! Dense NCHW tensors and the matrix kernels the layers are built on.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating point element type used by every layer.
///
/// Training runs in `f32`; gradient checking runs the same code in `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + std::iter::Sum + 'static
{
    /// `c = alpha * a * b + beta * c` for row/column strided matrices.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

macro_rules! impl_scalar {
    ($ty:ty, $kernel:path) => {
        impl Scalar for $ty {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(span(m, k, rsa, csa) <= a.len(), "gemm: lhs out of bounds");
                assert!(span(k, n, rsb, csb) <= b.len(), "gemm: rhs out of bounds");
                assert!(span(m, n, rsc, csc) <= c.len(), "gemm: dst out of bounds");
                // SAFETY: the extents of all three operands were checked above and
                // the strides are non-negative by construction at every call site.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

/// Row-major `c (+)= a * b` with `a: m x k`, `b: k x n`.
pub fn matmul<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F], accumulate: bool) {
    let beta = if accumulate { F::one() } else { F::zero() };
    F::gemm(m, k, n, F::one(), a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1);
}

/// Row-major `c (+)= a^T * b` with `a: k x m`, `b: k x n`.
pub fn matmul_tn<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F], accumulate: bool) {
    let beta = if accumulate { F::one() } else { F::zero() };
    F::gemm(m, k, n, F::one(), a, 1, m as isize, b, n as isize, 1, beta, c, n as isize, 1);
}

/// Row-major `c (+)= a * b^T` with `a: m x k`, `b: n x k`.
pub fn matmul_nt<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F], accumulate: bool) {
    let beta = if accumulate { F::one() } else { F::zero() };
    F::gemm(m, k, n, F::one(), a, k as isize, 1, b, 1, k as isize, beta, c, n as isize, 1);
}

/// A rank-4 `(batch, channels, height, width)` array stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: [usize; 4],
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], value: F) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<F>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{} values cannot fill a tensor of shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Number of elements in one `(channels, height, width)` item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    pub fn item(&self, n: usize) -> &[F] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [F] {
        let len = self.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[F] {
        let plane = self.plane_len();
        let start = (n * self.shape[1] + c) * plane;
        &self.data[start..start + plane]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [F] {
        let plane = self.plane_len();
        let start = (n * self.shape[1] + c) * plane;
        &mut self.data[start..start + plane]
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> F {
        let [_, ch, h, w] = self.shape;
        self.data[((n * ch + c) * h + y) * w + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| G::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let [n, _, h, w] = first.shape;
        if let Some(bad) = parts.iter().find(|p| p.batch() != n || p.height() != h || p.width() != w) {
            return Err(Error::Shape(format!(
                "cannot concat {:?} with {:?} along channels",
                first.shape, bad.shape
            )));
        }
        let channels = parts.iter().map(|p| p.channels()).sum();
        let mut data = Vec::with_capacity(n * channels * h * w);
        for item in 0..n {
            for p in parts {
                data.extend_from_slice(p.item(item));
            }
        }
        Ok(Self {
            shape: [n, channels, h, w],
            data,
        })
    }

    /// Inverse of [`Tensor::concat_channels`]: splits off consecutive channel groups.
    pub fn split_channels(&self, sizes: &[usize]) -> Vec<Self> {
        let [n, c, h, w] = self.shape;
        assert_eq!(sizes.iter().sum::<usize>(), c, "split sizes must cover all channels");
        let plane = h * w;
        let mut out: Vec<Self> = sizes.iter().map(|&s| Self::zeros([n, s, h, w])).collect();
        for item in 0..n {
            let src = self.item(item);
            let mut offset = 0;
            for (part, &s) in out.iter_mut().zip(sizes) {
                part.item_mut(item)
                    .copy_from_slice(&src[offset * plane..(offset + s) * plane]);
                offset += s;
            }
        }
        out
    }
}

/// Unfolds one `(channels, height, width)` item into a
/// `(channels * k * k) x (out_h * out_w)` column block whose rows are `ld` apart.
#[allow(clippy::too_many_arguments)]
pub fn im2col<F: Scalar>(
    input: &[F],
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    cols: &mut [F],
    ld: usize,
) {
    let out_h = (height + 2 * pad - kernel) / stride + 1;
    let out_w = (width + 2 * pad - kernel) / stride + 1;
    let out_len = out_h * out_w;
    debug_assert!(cols.len() >= (channels * kernel * kernel - 1) * ld + out_len);
    for c in 0..channels {
        let plane = &input[c * height * width..(c + 1) * height * width];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let dst = &mut cols[row * ld..row * ld + out_len];
                let (lo, hi) = valid_span(kx, pad, stride, width, out_w);
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let line = &mut dst[oy * out_w..(oy + 1) * out_w];
                    if iy < 0 || iy >= height as isize || lo >= hi {
                        line.fill(F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * width..(iy as usize + 1) * width];
                    line[..lo].fill(F::zero());
                    line[hi..].fill(F::zero());
                    let first = lo * stride + kx - pad;
                    if stride == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (v, &s) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(stride)) {
                            *v = s;
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `lo..hi` whose input column `ox * stride + kx - pad` lies inside `0..width`.
fn valid_span(kx: usize, pad: usize, stride: usize, width: usize, out_w: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx).div_ceil(stride);
    let hi = if width + pad > kx {
        ((width + pad - kx - 1) / stride + 1).min(out_w)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Adjoint of [`im2col`]: scatters (adds) a column block back into an image item.
#[allow(clippy::too_many_arguments)]
pub fn col2im<F: Scalar>(
    cols: &[F],
    ld: usize,
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output: &mut [F],
) {
    let out_h = (height + 2 * pad - kernel) / stride + 1;
    let out_w = (width + 2 * pad - kernel) / stride + 1;
    let out_len = out_h * out_w;
    debug_assert!(cols.len() >= (channels * kernel * kernel - 1) * ld + out_len);
    for c in 0..channels {
        let plane = &mut output[c * height * width..(c + 1) * height * width];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let src = &cols[row * ld..row * ld + out_len];
                let (lo, hi) = valid_span(kx, pad, stride, width, out_w);
                if lo >= hi {
                    continue;
                }
                let first = lo * stride + kx - pad;
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * width..(iy as usize + 1) * width];
                    let line = &src[oy * out_w + lo..oy * out_w + hi];
                    if stride == 1 {
                        for (d, &v) in dst[first..first + hi - lo].iter_mut().zip(line) {
                            *d = *d + v;
                        }
                    } else {
                        for (d, &v) in dst[first..].iter_mut().step_by(stride).zip(line) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

/// Rearranges `(n, c, h, w)` into a `c x (n * h * w)` matrix.
pub fn to_channel_major<F: Scalar>(t: &Tensor<F>) -> Vec<F> {
    let mut out = Vec::new();
    to_channel_major_into(t, &mut out);
    out
}

/// [`to_channel_major`] into a reused buffer.
pub fn to_channel_major_into<F: Scalar>(t: &Tensor<F>, out: &mut Vec<F>) {
    let [n, c, _, _] = t.shape();
    let plane = t.plane_len();
    let ld = n * plane;
    out.resize(c * ld, F::zero());
    for item in 0..n {
        for ch in 0..c {
            out[ch * ld + item * plane..ch * ld + (item + 1) * plane].copy_from_slice(t.plane(item, ch));
        }
    }
}

/// Inverse of [`to_channel_major`].
pub fn from_channel_major<F: Scalar>(buf: &[F], shape: [usize; 4]) -> Tensor<F> {
    let [n, c, h, w] = shape;
    let plane = h * w;
    let ld = n * plane;
    let mut t = Tensor::zeros(shape);
    for item in 0..n {
        for ch in 0..c {
            t.plane_mut(item, ch)
                .copy_from_slice(&buf[ch * ld + item * plane..ch * ld + (item + 1) * plane]);
        }
    }
    t
}
