//! Raw convolution / normalization kernels shared by forward and backward
//! passes. All of them work on one batch sample at a time; batching loops
//! live in the graph ops.
//!
//! Both convolution directions reduce to one im2col/col2im geometry: the
//! "big" side is the spatially larger tensor (the input of a strided
//! convolution, the output of a transposed one) and the "small" side holds
//! the L = Ds*Hs*Ws sliding-window positions.

use crate::tensor::{Scalar, Tensor};

/// Sliding-window geometry linking the big side (C, Db, Hb, Wb) to the small
/// side (Ds, Hs, Ws) through kernel/stride/pad triples ordered (depth, h, w).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub big: [usize; 3],
    pub small: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    /// Geometry for a forward convolution from `big` spatial dims.
    /// Panics if any output dim would be empty.
    pub fn for_conv(channels: usize, big: [usize; 3], kernel: [usize; 3], stride: [usize; 3], pad: [usize; 3]) -> Self {
        let mut small = [0usize; 3];
        for i in 0..3 {
            let padded = big[i] + 2 * pad[i];
            assert!(padded >= kernel[i], "kernel {:?} exceeds padded input {:?}", kernel, big);
            small[i] = (padded - kernel[i]) / stride[i] + 1;
        }
        ConvGeom { channels, big, small, kernel, stride, pad }
    }

    /// Geometry for a transposed convolution from `small` spatial dims.
    pub fn for_conv_transpose(
        channels: usize,
        small: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Self {
        let mut big = [0usize; 3];
        for i in 0..3 {
            let grown = (small[i] - 1) * stride[i] + kernel[i];
            assert!(grown > 2 * pad[i], "padding {:?} swallows the whole output", pad);
            big[i] = grown - 2 * pad[i];
        }
        ConvGeom { channels, big, small, kernel, stride, pad }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.channels * self.kernel[0] * self.kernel[1] * self.kernel[2]
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.small[0] * self.small[1] * self.small[2]
    }

    #[inline]
    pub fn big_len(&self) -> usize {
        self.channels * self.big[0] * self.big[1] * self.big[2]
    }
}

/// Gathers sliding windows of one big-side sample into `col` with shape
/// (rows, cols) = (C*kd*kh*kw, Ds*Hs*Ws). Out-of-bounds taps read zero.
pub fn im2col<T: Scalar>(geom: &ConvGeom, big: &[T], col: &mut [T]) {
    assert_eq!(big.len(), geom.big_len());
    assert_eq!(col.len(), geom.rows() * geom.cols());
    let [db, hb, wb] = geom.big;
    let [ds, hs, ws] = geom.small;
    let [kd, kh, kw] = geom.kernel;
    let [sd, sh, sw] = geom.stride;
    let [pd, ph, pw] = geom.pad;
    let cols = geom.cols();
    let mut row = 0;
    for c in 0..geom.channels {
        let cbase = c * db * hb * wb;
        for zk in 0..kd {
            for yk in 0..kh {
                for xk in 0..kw {
                    let out_row = &mut col[row * cols..(row + 1) * cols];
                    row += 1;
                    let mut idx = 0;
                    for od in 0..ds {
                        let id = (od * sd + zk) as isize - pd as isize;
                        let d_ok = id >= 0 && (id as usize) < db;
                        for oh in 0..hs {
                            let ih = (oh * sh + yk) as isize - ph as isize;
                            let ok = d_ok && ih >= 0 && (ih as usize) < hb;
                            if !ok {
                                for _ in 0..ws {
                                    out_row[idx] = T::ZERO;
                                    idx += 1;
                                }
                                continue;
                            }
                            let rbase = cbase + (id as usize * hb + ih as usize) * wb;
                            for ow in 0..ws {
                                let iw = (ow * sw + xk) as isize - pw as isize;
                                out_row[idx] = if iw >= 0 && (iw as usize) < wb {
                                    big[rbase + iw as usize]
                                } else {
                                    T::ZERO
                                };
                                idx += 1;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `col` back into one big-side sample.
/// The caller zeroes `big` first if plain assignment semantics are wanted.
pub fn col2im<T: Scalar>(geom: &ConvGeom, col: &[T], big: &mut [T]) {
    assert_eq!(big.len(), geom.big_len());
    assert_eq!(col.len(), geom.rows() * geom.cols());
    let [db, hb, wb] = geom.big;
    let [ds, hs, ws] = geom.small;
    let [kd, kh, kw] = geom.kernel;
    let [sd, sh, sw] = geom.stride;
    let [pd, ph, pw] = geom.pad;
    let cols = geom.cols();
    let mut row = 0;
    for c in 0..geom.channels {
        let cbase = c * db * hb * wb;
        for zk in 0..kd {
            for yk in 0..kh {
                for xk in 0..kw {
                    let in_row = &col[row * cols..(row + 1) * cols];
                    row += 1;
                    let mut idx = 0;
                    for od in 0..ds {
                        let id = (od * sd + zk) as isize - pd as isize;
                        let d_ok = id >= 0 && (id as usize) < db;
                        for oh in 0..hs {
                            let ih = (oh * sh + yk) as isize - ph as isize;
                            let ok = d_ok && ih >= 0 && (ih as usize) < hb;
                            if !ok {
                                idx += ws;
                                continue;
                            }
                            let rbase = cbase + (id as usize * hb + ih as usize) * wb;
                            for ow in 0..ws {
                                let iw = (ow * sw + xk) as isize - pw as isize;
                                if iw >= 0 && (iw as usize) < wb {
                                    big[rbase + iw as usize] += in_row[idx];
                                }
                                idx += 1;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// c(m,n) = alpha * a(m,k) * b(k,n) + beta * c, all row-major.
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, alpha: T, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m * k * n == 0 {
        return;
    }
    unsafe {
        T::gemm_strided(
            m, k, n, alpha,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// c(m,n) = alpha * a^T * b + beta * c where a is stored as (k,m) row-major.
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, alpha: T, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    if m * k * n == 0 {
        return;
    }
    unsafe {
        T::gemm_strided(
            m, k, n, alpha,
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// c(m,n) = alpha * a * b^T + beta * c where b is stored as (n,k) row-major.
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, alpha: T, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    if m * k * n == 0 {
        return;
    }
    unsafe {
        T::gemm_strided(
            m, k, n, alpha,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Forward convolution over a batch.
///
/// `x`: (N, Cin, D, H, W); `w`: (Cout, Cin, kd, kh, kw); `bias`: per-Cout.
pub fn conv3d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Tensor<T> {
    let (n, cin) = (x.shape()[0], x.shape()[1]);
    let big = [x.shape()[2], x.shape()[3], x.shape()[4]];
    let cout = w.shape()[0];
    assert_eq!(w.shape()[1], cin, "weight/input channel mismatch");
    let kernel = [w.shape()[2], w.shape()[3], w.shape()[4]];
    let geom = ConvGeom::for_conv(cin, big, kernel, stride, pad);
    let [ds, hs, ws] = geom.small;
    let (rows, cols) = (geom.rows(), geom.cols());
    let mut y = Tensor::zeros(&[n, cout, ds, hs, ws]);
    let mut col = vec![T::ZERO; rows * cols];
    let xs = x.data();
    let ys = y.data_mut();
    let sample_in = geom.big_len();
    let sample_out = cout * cols;
    for i in 0..n {
        im2col(&geom, &xs[i * sample_in..(i + 1) * sample_in], &mut col);
        gemm_nn(cout, rows, cols, T::ONE, w.data(), &col, T::ZERO, &mut ys[i * sample_out..(i + 1) * sample_out]);
    }
    if let Some(b) = bias {
        assert_eq!(b.numel(), cout);
        for i in 0..n {
            for c in 0..cout {
                let bc = b.data()[c];
                let base = i * sample_out + c * cols;
                for v in &mut ys[base..base + cols] {
                    *v += bc;
                }
            }
        }
    }
    y
}

/// Transposed convolution over a batch.
///
/// `x`: (N, Cin, D, H, W); `w`: (Cin, Cout, kd, kh, kw); `bias`: per-Cout.
pub fn conv_transpose3d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Tensor<T> {
    let (n, cin) = (x.shape()[0], x.shape()[1]);
    let small = [x.shape()[2], x.shape()[3], x.shape()[4]];
    assert_eq!(w.shape()[0], cin, "weight/input channel mismatch");
    let cout = w.shape()[1];
    let kernel = [w.shape()[2], w.shape()[3], w.shape()[4]];
    let geom = ConvGeom::for_conv_transpose(cout, small, kernel, stride, pad);
    let [db, hb, wb] = geom.big;
    let (rows, cols) = (geom.rows(), geom.cols());
    let mut y = Tensor::zeros(&[n, cout, db, hb, wb]);
    let mut col = vec![T::ZERO; rows * cols];
    let xs = x.data();
    let ys = y.data_mut();
    let sample_in = cin * cols;
    let sample_out = geom.big_len();
    for i in 0..n {
        // col = w^T (rows x cin) * x_i (cin x cols), then scatter into y.
        gemm_tn(rows, cin, cols, T::ONE, w.data(), &xs[i * sample_in..(i + 1) * sample_in], T::ZERO, &mut col);
        col2im(&geom, &col, &mut ys[i * sample_out..(i + 1) * sample_out]);
    }
    if let Some(b) = bias {
        assert_eq!(b.numel(), cout);
        let plane = db * hb * wb;
        for i in 0..n {
            for c in 0..cout {
                let bc = b.data()[c];
                let base = i * sample_out + c * plane;
                for v in &mut ys[base..base + plane] {
                    *v += bc;
                }
            }
        }
    }
    y
}
