//! Feature-map kernels shared by training and inference. Maps are
//! height × width × channel, one image at a time.

use crate::network::ConvGeom;

/// Unroll one image into `patches` rows of `row_len ≥ depth` entries
/// (ky, kx, channel order), zero outside the map and past `depth`.
pub fn im2col<T: Copy + Default>(x: &[T], g: &ConvGeom, cols: &mut [T], row_len: usize) {
    let (h, w, c) = (g.input.height, g.input.width, g.input.channels);
    let k = g.kernel;
    let depth = k * k * c;
    debug_assert_eq!(x.len(), h * w * c);
    debug_assert!(row_len >= depth);
    debug_assert_eq!(cols.len(), g.patches() * row_len);
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let full = &mut cols[(oy * g.out_w + ox) * row_len..][..row_len];
            full[depth..].fill(T::default());
            let row = &mut full[..depth];
            for ky in 0..k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                for kx in 0..k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    let dst = &mut row[(ky * k + kx) * c..][..c];
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                        dst.fill(T::default());
                    } else {
                        let src = (iy as usize * w + ix as usize) * c;
                        dst.copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch gradients into `dx`.
pub fn col2im_add(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let (h, w, c) = (g.input.height, g.input.width, g.input.channels);
    let k = g.kernel;
    let depth = k * k * c;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &cols[(oy * g.out_w + ox) * depth..][..depth];
            for ky in 0..k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = (iy as usize * w + ix as usize) * c;
                    for (d, s) in dx[dst..dst + c].iter_mut().zip(&row[(ky * k + kx) * c..][..c]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Row-major matrix operand, optionally transposed.
#[derive(Clone, Copy)]
pub struct Mat<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    /// Use the transpose of the stored `rows × cols` matrix.
    pub t: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Mat { data, rows, cols, t: false }
    }

    pub fn t(self) -> Self {
        Mat { t: !self.t, ..self }
    }

    fn shape(&self) -> (usize, usize) {
        if self.t {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.t {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = beta·c + a·b` with `c` row-major.
pub fn gemm(a: Mat, b: Mat, c: &mut [f32], beta: f32) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: shapes and strides above describe the slices exactly.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Pool window geometry.
#[derive(Debug, Clone, Copy)]
pub struct Pool {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub size: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Pool {
    /// Max over each window; `arg` (if given) receives the flat input index of
    /// the first maximum.
    pub fn forward<T: Copy + PartialOrd>(&self, x: &[T], y: &mut [T], mut arg: Option<&mut [u32]>) {
        let c = self.c;
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                for ch in 0..c {
                    let mut best = (oy * self.stride * self.w + ox * self.stride) * c + ch;
                    for py in 0..self.size {
                        for px in 0..self.size {
                            let i = ((oy * self.stride + py) * self.w + ox * self.stride + px) * c + ch;
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    let o = (oy * self.out_w + ox) * c + ch;
                    y[o] = x[best];
                    if let Some(a) = arg.as_deref_mut() {
                        a[o] = best as u32;
                    }
                }
            }
        }
    }
}
