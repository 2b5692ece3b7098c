//! Dense loops shared by the forward and backward rules.

use alloc::vec;

/// `c += a · b` with `a: m×k`, `b: k×n`, all row-major.
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    let a = &a[..m * k];
    let b = &b[..k * n];
    let c = &mut c[..m * n];
    let mut i = 0;
    // Four output rows at a time so each row of `b` is loaded once per block.
    while i + 4 <= m {
        let (c0, rest) = c[i * n..(i + 4) * n].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for p in 0..k {
            let (x0, x1, x2, x3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let v = b_row[j];
                c0[j] += x0 * v;
                c1[j] += x1 * v;
                c2[j] += x2 * v;
                c3[j] += x3 * v;
            }
        }
        i += 4;
    }
    for i in i..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, &v) in c_row.iter_mut().zip(b_row) {
                *c_ij += x * v;
            }
        }
    }
}

/// Row-major transpose of an `r×c` matrix.
fn transpose(r: usize, c: usize, x: &[f64]) -> alloc::vec::Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = x[i * c + j];
        }
    }
    t
}

/// `c += a · bᵀ` with `a: m×k`, `b: n×k`.
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm_nn(m, k, n, a, &transpose(n, k, b), c);
}

/// `c += aᵀ · b` with `a: k×m`, `b: k×n`.
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm_nn(m, k, n, &transpose(k, m, a), b, c);
}

/// Geometry of one 2-D sliding-window pass over a single image plane.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn new(h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || kh == 0 || kw == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        Some(Self {
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        })
    }

    /// Input coordinate for output position `o` and kernel offset `k`,
    /// or `None` if it falls in the padding.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        let pos = o * stride + k;
        if pos < pad || pos - pad >= len {
            None
        } else {
            Some(pos - pad)
        }
    }

    #[inline]
    pub fn src_row(&self, oy: usize, ky: usize) -> Option<usize> {
        Self::src(oy, ky, self.stride, self.pad, self.h)
    }

    #[inline]
    pub fn src_col(&self, ox: usize, kx: usize) -> Option<usize> {
        Self::src(ox, kx, self.stride, self.pad, self.w)
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `channels` planes into a `(channels·kh·kw) × (out_h·out_w)` matrix.
pub(crate) fn im2col(input: &[f64], channels: usize, win: &Window, cols: &mut [f64]) {
    let plane = win.h * win.w;
    let out_len = win.out_len();
    for c in 0..channels {
        let src = &input[c * plane..(c + 1) * plane];
        for ky in 0..win.kh {
            for kx in 0..win.kw {
                let row = ((c * win.kh + ky) * win.kw + kx) * out_len;
                for oy in 0..win.out_h {
                    let dst = &mut cols[row + oy * win.out_w..row + (oy + 1) * win.out_w];
                    match win.src_row(oy, ky) {
                        None => dst.iter_mut().for_each(|v| *v = 0.0),
                        Some(iy) => {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = match win.src_col(ox, kx) {
                                    Some(ix) => src[iy * win.w + ix],
                                    None => 0.0,
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the planes.
pub(crate) fn col2im(cols: &[f64], channels: usize, win: &Window, grad: &mut [f64]) {
    let plane = win.h * win.w;
    let out_len = win.out_len();
    for c in 0..channels {
        let dst = &mut grad[c * plane..(c + 1) * plane];
        for ky in 0..win.kh {
            for kx in 0..win.kw {
                let row = ((c * win.kh + ky) * win.kw + kx) * out_len;
                for oy in 0..win.out_h {
                    let Some(iy) = win.src_row(oy, ky) else { continue };
                    for ox in 0..win.out_w {
                        if let Some(ix) = win.src_col(ox, kx) {
                            dst[iy * win.w + ix] += cols[row + oy * win.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> [f64; 6] {
        let mut c = [0.0; 6];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_variants_agree() {
        // a: 2×3, b: 3×3 (uses the first 6 outputs of a 2×3 result)
        let a = [1.0, -2.0, 0.5, 3.0, 0.0, 4.0];
        let b = [2.0, 1.0, 0.0, -1.0, 3.0, 2.0, 0.5, 0.0, 1.0];
        let want = naive(2, 3, 3, &a, &b);
        let mut c = [0.0; 6];
        gemm_nn(2, 3, 3, &a, &b, &mut c);
        assert_eq!(c, want);

        let mut bt = [0.0; 9];
        for p in 0..3 {
            for j in 0..3 {
                bt[j * 3 + p] = b[p * 3 + j];
            }
        }
        let mut c = [0.0; 6];
        gemm_nt(2, 3, 3, &a, &bt, &mut c);
        assert_eq!(c, want);

        let mut at = [0.0; 6];
        for i in 0..2 {
            for p in 0..3 {
                at[p * 2 + i] = a[i * 3 + p];
            }
        }
        let mut c = [0.0; 6];
        gemm_tn(2, 3, 3, &at, &b, &mut c);
        assert_eq!(c, want);
    }

    #[test]
    fn window_rejects_oversized_kernels() {
        assert!(Window::new(2, 2, 3, 3, 1, 0).is_none());
        let w = Window::new(2, 2, 3, 3, 1, 1).unwrap();
        assert_eq!((w.out_h, w.out_w), (2, 2));
    }
}
