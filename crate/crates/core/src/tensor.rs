//! Dense f32 buffers and the handful of kernels the CNN substrate needs.
//!
//! Feature maps are stored channel-major across the batch, `[C][B][H][W]`, so a
//! convolution over the whole batch is a single GEMM of the kernel matrix with
//! the im2col buffer, and a per-kernel mask is a row scale.

/// Activations laid out as `[channels][batch][height][width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![0.0; channels * batch * height * width],
        }
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Elements belonging to one channel across the whole batch.
    #[inline]
    pub fn channel_len(&self) -> usize {
        self.batch * self.plane()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.channel_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.channel_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Flattens into `[batch][channels * height * width]`, PyTorch `view` order.
    pub fn to_rows(&self) -> Matrix {
        let plane = self.plane();
        let features = self.channels * plane;
        let mut out = vec![0.0; self.batch * features];
        for c in 0..self.channels {
            for b in 0..self.batch {
                let src = &self.data[(c * self.batch + b) * plane..][..plane];
                out[b * features + c * plane..][..plane].copy_from_slice(src);
            }
        }
        Matrix::from_vec(self.batch, features, out)
    }

    /// Inverse of [`FeatureMap::to_rows`].
    pub fn from_rows(rows: &Matrix, channels: usize, height: usize, width: usize) -> Self {
        let plane = height * width;
        assert_eq!(rows.cols, channels * plane);
        let mut fm = FeatureMap::zeros(channels, rows.rows, height, width);
        for b in 0..rows.rows {
            for c in 0..channels {
                let src = &rows.data[b * rows.cols + c * plane..][..plane];
                fm.data[(c * rows.rows + b) * plane..][..plane].copy_from_slice(src);
            }
        }
        fm
    }
}

/// Row-major f32 matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Index of the largest entry per row; the first index wins ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows).map(|r| argmax(self.row(r))).collect()
    }
}

pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `c = alpha * a(m×k) · b(k×n) + beta * c`, all strides in elements.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    c: &mut [f32],
    rsc: usize,
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    assert!(c.len() > (m - 1) * rsc + (n - 1));
    // SAFETY: the bounds of every operand were checked above against the
    // largest offset sgemm will touch.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Geometry of one convolution over a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// 1×1, stride 1, no padding: the input already is its own im2col matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfolds `input` into `[C·k·k][B·Hout·Wout]`.
pub fn im2col(input: &FeatureMap, g: &ConvGeometry, col: &mut Vec<f32>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let batch = input.batch;
    let cols = batch * oh * ow;
    col.clear();
    col.resize(g.patch_len() * cols, 0.0);
    let k = g.kernel;
    let pad = g.padding as isize;
    for ci in 0..g.in_channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst_row = &mut col[row * cols..(row + 1) * cols];
                for b in 0..batch {
                    let src = &input.data[(ci * batch + b) * g.in_h * g.in_w..][..g.in_h * g.in_w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - pad;
                        let dst = &mut dst_row[(b * oh + oy) * ow..][..ow];
                        if iy < 0 || iy >= g.in_h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src_row = &src[iy as usize * g.in_w..][..g.in_w];
                        if g.stride == 1 {
                            let (lo, hi) = valid_span(kx, g.padding, g.in_w, ow);
                            dst[..lo].fill(0.0);
                            dst[hi.max(lo)..].fill(0.0);
                            if hi > lo {
                                let off = lo + kx - g.padding;
                                dst[lo..hi].copy_from_slice(&src_row[off..off + hi - lo]);
                            }
                            continue;
                        }
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - pad;
                            *d = if ix >= 0 && ix < g.in_w as isize {
                                src_row[ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `[lo, hi)` whose stride-1 tap `kx` lands inside the input.
#[inline]
fn valid_span(kx: usize, pad: usize, in_w: usize, ow: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx);
    let hi = (in_w + pad).saturating_sub(kx).min(ow);
    (lo, hi)
}

/// Folds a `[C·k·k][B·Hout·Wout]` gradient back onto the input, accumulating.
pub fn col2im(col: &[f32], g: &ConvGeometry, out: &mut FeatureMap) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let batch = out.batch;
    let cols = batch * oh * ow;
    let k = g.kernel;
    let pad = g.padding as isize;
    for ci in 0..g.in_channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src_row = &col[row * cols..(row + 1) * cols];
                for b in 0..batch {
                    let dst = &mut out.data[(ci * batch + b) * g.in_h * g.in_w..][..g.in_h * g.in_w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - pad;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        let src = &src_row[(b * oh + oy) * ow..][..ow];
                        let dst_row = &mut dst[iy as usize * g.in_w..][..g.in_w];
                        if g.stride == 1 {
                            let (lo, hi) = valid_span(kx, g.padding, g.in_w, ow);
                            if hi > lo {
                                let off = lo + kx - g.padding;
                                for (d, &v) in dst_row[off..off + hi - lo].iter_mut().zip(&src[lo..hi]) {
                                    *d += v;
                                }
                            }
                            continue;
                        }
                        for (ox, &s) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - pad;
                            if ix >= 0 && ix < g.in_w as isize {
                                dst_row[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 max pooling with stride 2 (floor). Returns the argmax offsets into the
/// input buffer for the backward pass.
pub fn max_pool2(input: &FeatureMap, want_index: bool) -> (FeatureMap, Vec<u32>) {
    let (oh, ow) = (input.height / 2, input.width / 2);
    let mut out = FeatureMap::zeros(input.channels, input.batch, oh, ow);
    let mut index = if want_index {
        vec![0u32; out.data.len()]
    } else {
        Vec::new()
    };
    let (ih, iw) = (input.height, input.width);
    for plane in 0..input.channels * input.batch {
        let src_base = plane * ih * iw;
        let dst_base = plane * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let p = src_base + 2 * oy * iw + 2 * ox;
                let cands = [p, p + 1, p + iw, p + iw + 1];
                let mut best = cands[0];
                for &q in &cands[1..] {
                    if input.data[q] > input.data[best] {
                        best = q;
                    }
                }
                let o = dst_base + oy * ow + ox;
                out.data[o] = input.data[best];
                if want_index {
                    index[o] = best as u32;
                }
            }
        }
    }
    (out, index)
}

pub fn max_unpool2(grad: &FeatureMap, index: &[u32], input_shape: (usize, usize)) -> FeatureMap {
    let mut out = FeatureMap::zeros(grad.channels, grad.batch, input_shape.0, input_shape.1);
    for (g, &i) in grad.data.iter().zip(index) {
        out.data[i as usize] += g;
    }
    out
}

/// Numerically stable softmax of one row, in f64.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
