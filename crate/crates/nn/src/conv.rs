//! im2col / col2im kernels shared by convolution and transposed convolution.

/// Geometry of a 2-D convolution applied to a `channels x height x width` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_len(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Rows of the column matrix: `channels * kernel * kernel`.
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Output positions `o` along one axis whose input index `o * stride + k - pad`
/// falls inside `0..len`, as a half-open range.
fn valid_range(len: usize, out: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k { ((len + pad - k - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfold a batch of `n` images into a `[col_rows, n * out_len]` matrix.
pub fn im2col(images: &[f32], n: usize, g: &ConvGeom) -> Vec<f32> {
    assert_eq!(images.len(), n * g.image_len(), "im2col input size");
    let (oh, ow) = (g.out_height(), g.out_width());
    let l = oh * ow;
    let total_cols = n * l;
    let mut cols = vec![0.0f32; g.col_rows() * total_cols];
    for ky in 0..g.kernel {
        let (y_lo, y_hi) = valid_range(g.height, oh, ky, g.stride, g.pad);
        for kx in 0..g.kernel {
            let (x_lo, x_hi) = valid_range(g.width, ow, kx, g.stride, g.pad);
            if x_lo >= x_hi {
                continue;
            }
            let ix0 = x_lo * g.stride + kx - g.pad;
            for c in 0..g.channels {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                for b in 0..n {
                    let plane = &images[b * g.image_len() + c * g.height * g.width..][..g.height * g.width];
                    let dst = &mut cols[row * total_cols + b * l..][..l];
                    for oy in y_lo..y_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let src = &plane[iy * g.width..(iy + 1) * g.width];
                        let out_row = &mut dst[oy * ow + x_lo..oy * ow + x_hi];
                        if g.stride == 1 {
                            out_row.copy_from_slice(&src[ix0..ix0 + out_row.len()]);
                        } else {
                            for (o, v) in out_row.iter_mut().zip(src[ix0..].iter().step_by(g.stride)) {
                                *o = *v;
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add a column matrix back into `n` images.
pub fn col2im(cols: &[f32], n: usize, g: &ConvGeom) -> Vec<f32> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let l = oh * ow;
    let total_cols = n * l;
    assert_eq!(cols.len(), g.col_rows() * total_cols, "col2im input size");
    let mut images = vec![0.0f32; n * g.image_len()];
    let plane_len = g.height * g.width;
    for ky in 0..g.kernel {
        let (y_lo, y_hi) = valid_range(g.height, oh, ky, g.stride, g.pad);
        for kx in 0..g.kernel {
            let (x_lo, x_hi) = valid_range(g.width, ow, kx, g.stride, g.pad);
            if x_lo >= x_hi {
                continue;
            }
            let ix0 = x_lo * g.stride + kx - g.pad;
            for c in 0..g.channels {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                for b in 0..n {
                    let plane = &mut images[b * g.image_len() + c * plane_len..][..plane_len];
                    let src = &cols[row * total_cols + b * l..][..l];
                    for oy in y_lo..y_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let dst = &mut plane[iy * g.width..(iy + 1) * g.width];
                        let in_row = &src[oy * ow + x_lo..oy * ow + x_hi];
                        if g.stride == 1 {
                            for (d, v) in dst[ix0..ix0 + in_row.len()].iter_mut().zip(in_row) {
                                *d += *v;
                            }
                        } else {
                            for (d, v) in dst[ix0..].iter_mut().step_by(g.stride).zip(in_row) {
                                *d += *v;
                            }
                        }
                    }
                }
            }
        }
    }
    images
}

/// `[n, c, l]` -> `[c, n * l]`.
pub fn batch_to_channel_major(x: &[f32], n: usize, c: usize, l: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &x[(b * c + ch) * l..(b * c + ch + 1) * l];
            out[ch * n * l + b * l..ch * n * l + (b + 1) * l].copy_from_slice(src);
        }
    }
    out
}

/// `[c, n * l]` -> `[n, c, l]`.
pub fn channel_major_to_batch(x: &[f32], n: usize, c: usize, l: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &x[ch * n * l + b * l..ch * n * l + (b + 1) * l];
            out[(b * c + ch) * l..(b * c + ch + 1) * l].copy_from_slice(src);
        }
    }
    out
}
