//! Raw convolution kernels: im2col / col2im lowering onto a GEMM.

use matrixmultiply::dgemm;

/// How out-of-range rows/columns are filled when a convolution window
/// hangs over the border.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `p` zeros on every side.
    Zero(usize),
    /// `p` mirrored samples on every side (edge not repeated). Falls back to
    /// replication when the extent is 1 and reflection is undefined.
    Reflect(usize),
}

impl Padding {
    pub fn amount(&self) -> usize {
        match *self {
            Padding::Zero(p) | Padding::Reflect(p) => p,
        }
    }
}

/// Maps a padded coordinate in `[-pad, extent + pad)` to a source index.
pub(crate) fn reflect_index(i: isize, extent: usize) -> usize {
    let n = extent as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Geometry of one strided convolution between a "large" grid
/// (conv input, transposed-conv output) and a "small" grid.
#[derive(Clone, Debug)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub out_h: usize,
    pub out_w: usize,
    /// `row_map[ki * out_h + oy]` is the source row for kernel row `ki` at output row `oy`.
    row_map: Vec<Option<usize>>,
    col_map: Vec<Option<usize>>,
}

fn axis_map(
    extent: usize,
    k: usize,
    out: usize,
    stride: usize,
    padding: Padding,
) -> Vec<Option<usize>> {
    let pad = padding.amount() as isize;
    let mut map = Vec::with_capacity(k * out);
    for ki in 0..k {
        for o in 0..out {
            let i = (o * stride + ki) as isize - pad;
            let src = if i >= 0 && (i as usize) < extent {
                Some(i as usize)
            } else {
                match padding {
                    Padding::Zero(_) => None,
                    Padding::Reflect(_) => Some(reflect_index(i, extent)),
                }
            };
            map.push(src);
        }
    }
    map
}

impl ConvGeometry {
    /// Output extent along one axis, or `None` when the window does not fit.
    pub fn output_extent(extent: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = extent + 2 * pad;
        if padded < k || stride == 0 {
            None
        } else {
            Some((padded - k) / stride + 1)
        }
    }

    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    ) -> Option<Self> {
        let pad = padding.amount();
        let out_h = Self::output_extent(height, kh, stride, pad)?;
        let out_w = Self::output_extent(width, kw, stride, pad)?;
        Some(ConvGeometry {
            channels,
            height,
            width,
            kh,
            kw,
            out_h,
            out_w,
            row_map: axis_map(height, kh, out_h, stride, padding),
            col_map: axis_map(width, kw, out_w, stride, padding),
        })
    }

    /// Rows of the lowered matrix: `channels * kh * kw`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_plane(&self) -> usize {
        self.height * self.width
    }

    /// Lowers one `[channels, height, width]` image to `[patch_len, out_plane]`.
    pub fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let plane = self.out_plane();
        debug_assert_eq!(cols.len(), self.patch_len() * plane);
        let (oh, ow) = (self.out_h, self.out_w);
        for c in 0..self.channels {
            let src = &image[c * self.in_plane()..(c + 1) * self.in_plane()];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    let cmap = &self.col_map[kj * ow..(kj + 1) * ow];
                    for oy in 0..oh {
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        match self.row_map[ki * oh + oy] {
                            None => out_row.fill(0.0),
                            Some(iy) => {
                                let line = &src[iy * self.width..(iy + 1) * self.width];
                                for (o, m) in out_row.iter_mut().zip(cmap) {
                                    *o = match m {
                                        Some(ix) => line[*ix],
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

    /// Adjoint of [`im2col`](Self::im2col): scatter-adds columns into `image`.
    pub fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let plane = self.out_plane();
        let (oh, ow) = (self.out_h, self.out_w);
        for c in 0..self.channels {
            let dst = &mut image[c * self.in_plane()..(c + 1) * self.in_plane()];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * plane..(row + 1) * plane];
                    let cmap = &self.col_map[kj * ow..(kj + 1) * ow];
                    for oy in 0..oh {
                        if let Some(iy) = self.row_map[ki * oh + oy] {
                            let line = &mut dst[iy * self.width..(iy + 1) * self.width];
                            for (v, m) in src[oy * ow..(oy + 1) * ow].iter().zip(cmap) {
                                if let Some(ix) = m {
                                    line[*ix] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-major operand: either `rows x cols` as stored, or the transpose of a
/// stored `cols x rows` matrix.
#[derive(Clone, Copy)]
pub(crate) enum Layout {
    Normal,
    Transposed,
}

/// `c = beta * c + a(m x k) * b(k x n)`, all row-major, with optional transposes.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_layout: Layout,
    b: &[f64],
    b_layout: Layout,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match a_layout {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match b_layout {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    // SAFETY: slice lengths checked above cover every index the strides reach.
    unsafe {
        dgemm(
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
        );
    }
}
