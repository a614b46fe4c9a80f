//! Batched im2col / col2im kernels shared by the convolution and transposed
//! convolution ops. Column matrices are laid out as `[C*K*K, N*OH*OW]`.

use crate::nn::Scalar;

/// Geometry of a cross-correlation from an `img_h x img_w` image to an
/// `out_h x out_w` map. A transposed convolution uses the same geometry with
/// the roles of image and output swapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub batch: usize,
    pub channels: usize,
    pub img_h: usize,
    pub img_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geometry {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }
}

pub(crate) fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub(crate) fn deconv_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> Option<usize> {
    ((input.max(1) - 1) * stride + kernel + output_pad).checked_sub(2 * pad)
}

/// Gathers receptive fields of an NCHW image into a column matrix.
pub(crate) fn im2col<T: Scalar>(img: &[T], g: &Geometry) -> Vec<T> {
    let ohw = g.out_h * g.out_w;
    let ncols = g.col_cols();
    let mut cols = vec![T::zero(); g.col_rows() * ncols];
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let row_buf = &mut cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.batch {
                    let plane = &img[(n * g.channels + c) * g.img_h * g.img_w..][..g.img_h * g.img_w];
                    let dst = &mut row_buf[n * ohw..(n + 1) * ohw];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.img_h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * g.img_w..][..g.img_w];
                        let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.img_w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters a column matrix back into an NCHW image, accumulating.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &Geometry, img: &mut [T]) {
    let ohw = g.out_h * g.out_w;
    let ncols = g.col_cols();
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let row_buf = &cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.batch {
                    let plane = &mut img[(n * g.channels + c) * g.img_h * g.img_w..][..g.img_h * g.img_w];
                    let src = &row_buf[n * ohw..(n + 1) * ohw];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.img_h as isize {
                            continue;
                        }
                        let dst_row = &mut plane[iy as usize * g.img_w..][..g.img_w];
                        let src_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                        for (ox, s) in src_row.iter().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.img_w as isize {
                                dst_row[ix as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// NCHW -> `[C, N*H*W]`.
pub(crate) fn nchw_to_cm<T: Scalar>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &x[(b * c + ch) * hw..][..hw];
            out[ch * n * hw + b * hw..][..hw].copy_from_slice(src);
        }
    }
    out
}

/// `[C, N*H*W]` -> NCHW.
pub(crate) fn cm_to_nchw<T: Scalar>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            out[(b * c + ch) * hw..][..hw].copy_from_slice(&x[ch * n * hw + b * hw..][..hw]);
        }
    }
    out
}
