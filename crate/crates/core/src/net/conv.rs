//! Dilated same-padding convolution via im2col and a GEMM.

use std::ops::{Add, AddAssign, Mul, Sub};

/// Scalar type the network can run in. `f32` for training and inference,
/// `f64` for gradient checking.
pub trait Real:
    Copy + Default + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + AddAssign + Send + Sync + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                // SAFETY: the slices cover every index reachable from the given
                // dimensions and strides (checked above for the dense layouts
                // used in this module); `c` does not alias `a` or `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    )
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Geometry of one convolution applied to an `h x w` map.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvShape {
    fn pad(&self) -> isize {
        (self.dilation * (self.kernel - 1) / 2) as isize
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1
    }
}

/// Unfolds a planar `in_ch x h x w` input into a `(in_ch*k*k) x (h*w)` matrix.
pub(crate) fn im2col<T: Real>(s: &ConvShape, input: &[T]) -> Vec<T> {
    let (h, w, k, d) = (s.h, s.w, s.kernel, s.dilation as isize);
    let hw = h * w;
    let pad = s.pad();
    let mut col = vec![T::ZERO; s.col_rows() * hw];
    for ci in 0..s.in_ch {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let oy = ky as isize * d - pad;
                let ox = kx as isize * d - pad;
                let x_lo = (-ox).max(0) as usize;
                let x_hi = (w as isize - ox).clamp(0, w as isize) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let sx_lo = (x_lo as isize + ox) as usize;
                    dst[y * w + x_lo..y * w + x_hi].copy_from_slice(&src[sx_lo..sx_lo + (x_hi - x_lo)]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: folds a column matrix back, accumulating into `out`.
pub(crate) fn col2im<T: Real>(s: &ConvShape, col: &[T], out: &mut [T]) {
    let (h, w, k, d) = (s.h, s.w, s.kernel, s.dilation as isize);
    let hw = h * w;
    let pad = s.pad();
    for ci in 0..s.in_ch {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let oy = ky as isize * d - pad;
                let ox = kx as isize * d - pad;
                let x_lo = (-ox).max(0) as usize;
                let x_hi = (w as isize - ox).clamp(0, w as isize) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let base = ci * hw + sy as usize * w;
                    for x in x_lo..x_hi {
                        out[base + (x as isize + ox) as usize] += src[y * w + x];
                    }
                }
            }
        }
    }
}

/// `out = weights * unfold(input) + bias`, planar `out_ch x h x w`.
pub(crate) fn conv_forward<T: Real>(s: &ConvShape, input: &[T], weights: &[T], bias: &[T]) -> Vec<T> {
    let hw = s.h * s.w;
    let mut out = vec![T::ZERO; s.out_ch * hw];
    for (o, b) in bias.iter().enumerate() {
        out[o * hw..(o + 1) * hw].fill(*b);
    }
    let owned;
    let col: &[T] = if s.is_pointwise() {
        input
    } else {
        owned = im2col(s, input);
        &owned
    };
    let kk = s.col_rows();
    T::gemm(s.out_ch, kk, hw, weights, kk as isize, 1, col, hw as isize, 1, T::ONE, &mut out);
    out
}

/// Gradients of a convolution given the gradient at its (pre-activation) output.
///
/// Returns `(d_weights, d_bias, d_input)`; `d_input` is skipped when `need_input` is false.
pub(crate) fn conv_backward<T: Real>(
    s: &ConvShape,
    input: &[T],
    weights: &[T],
    d_out: &[T],
    need_input: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let hw = s.h * s.w;
    let kk = s.col_rows();
    let owned;
    let col: &[T] = if s.is_pointwise() {
        input
    } else {
        owned = im2col(s, input);
        &owned
    };
    // dW = dOut (out x hw) * col^T (hw x kk)
    let mut d_w = vec![T::ZERO; s.out_ch * kk];
    T::gemm(s.out_ch, hw, kk, d_out, hw as isize, 1, col, 1, hw as isize, T::ZERO, &mut d_w);
    let d_b = (0..s.out_ch)
        .map(|o| {
            let mut acc = T::ZERO;
            for &v in &d_out[o * hw..(o + 1) * hw] {
                acc += v;
            }
            acc
        })
        .collect();
    let d_in = need_input.then(|| {
        // dCol = W^T (kk x out) * dOut (out x hw)
        let mut d_col = vec![T::ZERO; kk * hw];
        T::gemm(kk, s.out_ch, hw, weights, 1, kk as isize, d_out, hw as isize, 1, T::ZERO, &mut d_col);
        if s.is_pointwise() {
            d_col
        } else {
            let mut d_in = vec![T::ZERO; s.in_ch * hw];
            col2im(s, &d_col, &mut d_in);
            d_in
        }
    });
    (d_w, d_b, d_in)
}
