//! Numeric kernels behind the tape operations.

const LANES: usize = 8;

/// `sum(x)` accumulated in `f64` over eight interleaved partial sums.
pub(crate) fn sum_f64(x: &[f32]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let chunks = x.chunks_exact(LANES);
    let rest = chunks.remainder();
    for c in chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a += v as f64;
        }
    }
    acc.iter().sum::<f64>() + rest.iter().map(|&v| v as f64).sum::<f64>()
}

/// `sum(a * b)` accumulated in `f64` over eight interleaved partial sums.
pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum();
    for (x, y) in ca.zip(cb) {
        for ((s, &u), &v) in acc.iter_mut().zip(x).zip(y) {
            *s += u as f64 * v as f64;
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// `sum((x - mean)^2)` in `f64`.
pub(crate) fn sq_dev_f64(x: &[f32], mean: f64) -> f64 {
    let mut acc = [0.0f64; LANES];
    let chunks = x.chunks_exact(LANES);
    let tail: f64 = chunks.remainder().iter().map(|&v| (v as f64 - mean).powi(2)).sum();
    for c in chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            let d = v as f64 - mean;
            *a += d * d;
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl Layout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Layout {
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `rows x cols` buffer, viewed as `cols x rows`.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        Layout {
            rows: cols,
            cols: rows,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        (self.rows - 1) * self.row_stride as usize + (self.cols - 1) * self.col_stride as usize
    }
}

/// `c = a * b + beta * c` with `c` row-major `a.rows x b.cols`.
pub(crate) fn gemm(a: &[f32], la: Layout, b: &[f32], lb: Layout, c: &mut [f32], beta: f32) {
    let lc = Layout::row_major(la.rows, lb.cols);
    gemm_strided(a, la, b, lb, c, lc, beta);
}

/// `c = a * b + beta * c` with an arbitrary output layout.
///
/// Operands are strided views, so transposed operands are never copied.
pub(crate) fn gemm_strided(a: &[f32], la: Layout, b: &[f32], lb: Layout, c: &mut [f32], lc: Layout, beta: f32) {
    assert_eq!(la.cols, lb.rows, "gemm inner dimension mismatch");
    let (m, k, n) = (la.rows, la.cols, lb.cols);
    assert!(lc.rows == m && lc.cols == n, "gemm output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    assert!(lc.max_offset() < c.len());
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * lc.row_stride as usize + j * lc.col_stride as usize] *= beta;
            }
        }
        return;
    }
    assert!(la.max_offset() < a.len());
    assert!(lb.max_offset() < b.len());
    // SAFETY: operand extents were bounds-checked above against the slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.row_stride,
            la.col_stride,
            b.as_ptr(),
            lb.row_stride,
            lb.col_stride,
            beta,
            c.as_mut_ptr(),
            lc.row_stride,
            lc.col_stride,
        );
    }
}

/// Geometry of a square-kernel, stride-1 convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn out_pixels(&self) -> usize {
        self.h_out * self.w_out
    }

    /// A 1x1 unpadded convolution reads the input directly as its column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }

    /// Output columns whose tap `kx` lands inside the input row.
    fn valid_ox(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.w_out);
        (lo, hi.max(lo))
    }
}

/// Unfolds `input` into a `[c_in*k*k, h_out*w_out]` column matrix.
pub(crate) fn im2col(input: &[f32], g: &ConvGeom) -> Vec<f32> {
    let np = g.out_pixels();
    let mut cols = vec![0.0f32; g.patch_len() * np];
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * np..(row + 1) * np];
                for oy in 0..g.h_out {
                    let iy = oy as isize + ky as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let (ox0, ox1) = g.valid_ox(kx);
                    let ix0 = ox0 + kx - g.pad;
                    let src_row = &plane[iy as usize * g.w + ix0..][..ox1 - ox0];
                    dst[oy * g.w_out + ox0..oy * g.w_out + ox1].copy_from_slice(src_row);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-adds a column matrix back onto an input-shaped buffer.
pub(crate) fn col2im_add(cols: &[f32], g: &ConvGeom, out: &mut [f32]) {
    let np = g.out_pixels();
    for c in 0..g.c_in {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * np..(row + 1) * np];
                for oy in 0..g.h_out {
                    let iy = oy as isize + ky as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let (ox0, ox1) = g.valid_ox(kx);
                    let ix0 = ox0 + kx - g.pad;
                    let dst_row = &mut plane[iy as usize * g.w + ix0..][..ox1 - ox0];
                    let src_row = &src[oy * g.w_out + ox0..oy * g.w_out + ox1];
                    for (d, &s) in dst_row.iter_mut().zip(src_row) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Per-output-index interpolation taps for a 2x bilinear upsample (half-pixel centers).
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Taps {
    pub i0: usize,
    pub i1: usize,
    pub w0: f32,
    pub w1: f32,
}

pub(crate) fn upsample_taps(n_in: usize) -> Vec<Taps> {
    (0..2 * n_in)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            if i0 + 1 >= n_in {
                return Taps {
                    i0,
                    i1: i0,
                    w0: 1.0,
                    w1: 0.0,
                };
            }
            let frac = (src - i0 as f64) as f32;
            Taps {
                i0,
                i1: i0 + 1,
                w0: 1.0 - frac,
                w1: frac,
            }
        })
        .collect()
}
