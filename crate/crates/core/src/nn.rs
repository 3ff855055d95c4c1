//! Deterministic CPU inference primitives and the shared weight-file format.
//!
//! Activations are `(channels, height, width)` tensors; convolution kernels are
//! `(out_ch, in_ch, kh, kw)`. All ops are single-threaded and bit-reproducible.

use std::collections::HashMap;
use std::path::Path;

use crate::binio::{put_f32s, put_u32, Reader};
use crate::error::{domain, format, Error, Result};

pub const LEAKY_SLOPE: f32 = 0.01;
pub const BN_EPS: f32 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n != data.len() {
            return domain(format!("tensor shape {shape:?} does not match {} elements", data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return domain("tensor contains non-finite values");
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(c, h, w)` of an activation tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => domain(format!("expected (C, H, W) tensor, got shape {:?}", self.shape)),
        }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.shape[1] * self.shape[2];
        &self.data[c * plane..(c + 1) * plane]
    }
}

/// Elementwise tail applied while a convolution writes its output: leaky
/// ReLU, then a per-channel affine map (inference batch norm). Same
/// arithmetic as running the separate ops afterwards.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Epilogue {
    pub leaky_slope: Option<f32>,
    pub affine: Option<(Vec<f32>, Vec<f32>)>,
}

impl Epilogue {
    #[inline]
    fn apply(&self, row: &mut [f32], o: usize) {
        match (self.leaky_slope, &self.affine) {
            (None, None) => {}
            (Some(s), None) => row.iter_mut().for_each(|x| {
                if *x < 0.0 {
                    *x *= s
                }
            }),
            (None, Some((a, b))) => {
                let (a, b) = (a[o], b[o]);
                row.iter_mut().for_each(|x| *x = *x * a + b);
            }
            (Some(s), Some((a, b))) => {
                let (a, b) = (a[o], b[o]);
                row.iter_mut().for_each(|x| {
                    if *x < 0.0 {
                        *x *= s
                    }
                    *x = *x * a + b;
                });
            }
        }
    }
}

/// Cross-correlation with zero padding.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &[f32], padding: usize, stride: usize) -> Result<Tensor> {
    conv2d_fused(input, kernel, bias, padding, stride, &Epilogue::default())
}

/// [`conv2d`] followed by `epilogue`.
pub fn conv2d_fused(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f32],
    padding: usize,
    stride: usize,
    epilogue: &Epilogue,
) -> Result<Tensor> {
    let (ic, h, w) = input.chw()?;
    let [oc, kic, kh, kw] = kernel.shape[..] else {
        return domain(format!("kernel must be 4-D, got {:?}", kernel.shape));
    };
    if kic != ic {
        return domain(format!("kernel expects {kic} input channels, input has {ic}"));
    }
    if bias.len() != oc {
        return domain(format!("bias has {} entries, kernel has {oc} outputs", bias.len()));
    }
    if stride == 0 {
        return domain("stride must be at least 1");
    }
    let (hp, wp) = (h + 2 * padding, w + 2 * padding);
    if kh > hp || kw > wp {
        return domain("kernel larger than padded input");
    }
    let oh = (hp - kh) / stride + 1;
    let ow = (wp - kw) / stride + 1;
    if let Some((a, b)) = &epilogue.affine {
        if a.len() != oc || b.len() != oc {
            return domain(format!("epilogue affine map must have {oc} entries"));
        }
    }
    let ep = epilogue;
    if stride == 1 && kh == 3 && kw == 3 && ic >= WINOGRAD_MIN_CHANNELS {
        Ok(conv2d_winograd(input, kernel, bias, padding, oh, ow, ep))
    } else if stride == 1 {
        Ok(conv2d_gemm(input, kernel, bias, padding, oh, ow, ep))
    } else {
        Ok(conv2d_direct(input, kernel, bias, padding, stride, oh, ow, ep))
    }
}

const COLUMN_BLOCK_BYTES: usize = 2 << 20;

/// Row-major `C = A * B` with A m x k (row stride lda), B k x n (row stride
/// ldb), C m x n (row stride ldc).
///
/// # Safety
/// All three pointers must address buffers covering the stated extents.
#[allow(clippy::too_many_arguments)]
unsafe fn sgemm(m: usize, k: usize, n: usize, a: *const f32, lda: usize, b: *const f32, ldb: usize, c: *mut f32, ldc: usize) {
    // SAFETY: forwarded from the caller.
    unsafe {
        matrixmultiply::sgemm(m, k, n, 1.0, a, lda as isize, 1, b, ldb as isize, 1, 0.0, c, ldc as isize, 1)
    }
}

/// Stride-1 convolution as blocked GEMMs over the padded, flattened input;
/// output columns falling in the padding gutter are discarded.
fn conv2d_gemm(input: &Tensor, kernel: &Tensor, bias: &[f32], pad: usize, oh: usize, ow: usize, ep: &Epilogue) -> Tensor {
    let (ic, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let [oc, _, kh, kw] = kernel.shape[..] else { unreachable!() };
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);

    let padded_owned;
    let (src, plane): (&[f32], usize) = if pad == 0 && kw == 1 {
        (&input.data, h * w)
    } else {
        let plane = hp * wp;
        let mut buf = vec![0.0f32; ic * plane + kw];
        for c in 0..ic {
            for y in 0..h {
                let s = &input.data[(c * h + y) * w..(c * h + y + 1) * w];
                let d = c * plane + (y + pad) * wp + pad;
                buf[d..d + w].copy_from_slice(s);
            }
        }
        padded_owned = buf;
        (&padded_owned, plane)
    };

    let n = oh * wp;
    let mut out = vec![0.0f32; oc * oh * ow];
    let taps = kh * kw;
    let k = ic * taps;
    // Column blocks of the flattened (oh x wp) output. Each block's GEMM
    // result stays in cache for bias, epilogue and the crop to ow columns.
    let nb = if taps == 1 { ONE_BY_ONE_COLUMNS } else { (COLUMN_BLOCK_BYTES / (4 * k)).clamp(256, n.max(256)) }.min(n);
    let mut patch = if taps == 1 { Vec::new() } else { vec![0.0f32; k * nb] };
    let mut cbuf = vec![0.0f32; oc * nb];
    let mut j0 = 0;
    while j0 < n {
        let cols = nb.min(n - j0);
        if taps == 1 {
            // SAFETY: B is the ic x cols view of `src` at column j0 with row
            // stride `plane` (j0 + cols <= n <= plane); C is oc x cols.
            unsafe { sgemm(oc, k, cols, kernel.data.as_ptr(), k, src.as_ptr().add(j0), plane, cbuf.as_mut_ptr(), cols) };
        } else {
            // k x cols patch matrix, rows ordered like the kernel (channel, ky, kx)
            for c in 0..ic {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let row = (c * kh + ky) * kw + kx;
                        // largest read: ic*plane + kw - 1, covered by the slack
                        let s0 = c * plane + ky * wp + kx + j0;
                        patch[row * cols..(row + 1) * cols].copy_from_slice(&src[s0..s0 + cols]);
                    }
                }
            }
            // SAFETY: A is oc x k, B is k x cols, C is oc x cols, all dense.
            unsafe { sgemm(oc, k, cols, kernel.data.as_ptr(), k, patch.as_ptr(), cols, cbuf.as_mut_ptr(), cols) };
        }
        for o in 0..oc {
            let row = &mut cbuf[o * cols..(o + 1) * cols];
            row.iter_mut().for_each(|x| *x += bias[o]);
            ep.apply(row, o);
            let plane_out = &mut out[o * oh * ow..(o + 1) * oh * ow];
            if ow == wp {
                plane_out[j0..j0 + cols].copy_from_slice(row);
                continue;
            }
            // copy the x < ow part of every output row this block overlaps
            let mut j = j0;
            while j < j0 + cols {
                let (y, x) = (j / wp, j % wp);
                let end = (j0 + cols).min((y + 1) * wp);
                if x < ow {
                    let take = (ow - x).min(end - j);
                    plane_out[y * ow + x..y * ow + x + take].copy_from_slice(&row[j - j0..j - j0 + take]);
                }
                j = end;
            }
        }
        j0 += cols;
    }
    Tensor::from_parts(vec![oc, oh, ow], out)
}

/// Input channels below which 3x3 layers use the plain GEMM path.
const WINOGRAD_MIN_CHANNELS: usize = 8;
/// Output columns per GEMM block for 1x1 kernels.
const ONE_BY_ONE_COLUMNS: usize = 1024;
/// Tiles per Winograd block (bounds the transformed-input buffer).
const WINOGRAD_BLOCK_BYTES: usize = 4 << 20;

/// Stride-1 3x3 convolution with the F(2x2, 3x3) Winograd transform: each
/// 2x2 output tile costs 16 products per channel pair instead of 36. The
/// 16 transform coordinates become 16 independent GEMMs over tile blocks.
fn conv2d_winograd(input: &Tensor, kernel: &Tensor, bias: &[f32], pad: usize, oh: usize, ow: usize, ep: &Epilogue) -> Tensor {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
        // SAFETY: the required CPU features were just detected.
        return unsafe { winograd_avx2(input, kernel, bias, pad, oh, ow, ep) };
    }
    winograd_body(input, kernel, bias, pad, oh, ow, ep)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn winograd_avx2(input: &Tensor, kernel: &Tensor, bias: &[f32], pad: usize, oh: usize, ow: usize, ep: &Epilogue) -> Tensor {
    winograd_body(input, kernel, bias, pad, oh, ow, ep)
}

#[inline(always)]
fn winograd_body(input: &Tensor, kernel: &Tensor, bias: &[f32], pad: usize, oh: usize, ow: usize, ep: &Epilogue) -> Tensor {
    let (ic, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let oc = kernel.shape[0];
    let (th, tw) = (oh.div_ceil(2), ow.div_ceil(2));
    // rows are padded on the fly; wp covers every tile's 4x4 patch
    let we = tw + 1;
    let wp = 2 * we;
    // U = G g G^T, stored as 16 matrices of oc x ic
    let mut u = vec![0.0f32; 16 * oc * ic];
    for o in 0..oc {
        for c in 0..ic {
            let g = &kernel.data[(o * ic + c) * 9..(o * ic + c) * 9 + 9];
            let mut t = [[0.0f32; 3]; 4];
            for j in 0..3 {
                let (g0, g1, g2) = (g[j], g[3 + j], g[6 + j]);
                t[0][j] = g0;
                t[1][j] = 0.5 * (g0 + g1 + g2);
                t[2][j] = 0.5 * (g0 - g1 + g2);
                t[3][j] = g2;
            }
            for (i, r) in t.iter().enumerate() {
                let row = [r[0], 0.5 * (r[0] + r[1] + r[2]), 0.5 * (r[0] - r[1] + r[2]), r[2]];
                for (j, v) in row.into_iter().enumerate() {
                    u[((i * 4 + j) * oc + o) * ic + c] = v;
                }
            }
        }
    }

    let mut out = vec![0.0f32; oc * oh * ow];
    let rows_per_block = (WINOGRAD_BLOCK_BYTES / (4 * 16 * ic.max(oc) * tw)).clamp(1, th);
    let max_tiles = rows_per_block * tw;
    let mut strip = vec![0.0f32; (2 * rows_per_block + 2) * wp];
    let mut v = vec![0.0f32; 16 * ic * max_tiles];
    let mut m = vec![0.0f32; 16 * oc * max_tiles];
    let mut tmp = vec![0.0f32; 4 * wp];
    let mut srow = vec![0.0f32; 8 * tw];
    let mut ty0 = 0;
    while ty0 < th {
        let rows = rows_per_block.min(th - ty0);
        let nt = rows * tw;
        // input transform V = B^T d B, written as V[k][c][tile]
        for c in 0..ic {
            // padded rows 2*ty0 .. 2*(ty0+rows)+2 of channel c, each stored
            // deinterleaved: even columns, then odd
            for (i, dst) in strip.chunks_exact_mut(wp).take(2 * rows + 2).enumerate() {
                dst.fill(0.0);
                if let Some(sy) = (2 * ty0 + i).checked_sub(pad).filter(|&sy| sy < h) {
                    let line = &input.data[(c * h + sy) * w..(c * h + sy + 1) * w];
                    let (ev, od) = dst.split_at_mut(we);
                    let q = pad / 2;
                    let (first, second) = if pad.is_multiple_of(2) { (&mut ev[q..], &mut od[q..]) } else { (&mut od[q..], &mut ev[q + 1..]) };
                    let pairs = line.chunks_exact(2);
                    if let [last] = pairs.remainder() {
                        first[w / 2] = *last;
                    }
                    for ((p, f), g) in pairs.zip(first.iter_mut()).zip(second.iter_mut()) {
                        *f = p[0];
                        *g = p[1];
                    }
                }
            }
            for r in 0..rows {
                let rows4 = &strip[2 * r * wp..(2 * r + 4) * wp];
                let (r0, rest) = rows4.split_at(wp);
                let (r1, rest) = rest.split_at(wp);
                let (r2, r3) = rest.split_at(wp);
                let (t0, rest) = tmp.split_at_mut(wp);
                let (t1, rest) = rest.split_at_mut(wp);
                let (t2, t3) = rest.split_at_mut(wp);
                for x in 0..wp {
                    t0[x] = r0[x] - r2[x];
                    t1[x] = r1[x] + r2[x];
                    t2[x] = r2[x] - r1[x];
                    t3[x] = r1[x] - r3[x];
                }
                for (i, t) in [&*t0, &*t1, &*t2, &*t3].into_iter().enumerate() {
                    let (ev, od) = t.split_at(we);
                    let dst = |j: usize| ((i * 4 + j) * ic + c) * nt + r * tw;
                    let o = &mut v[dst(0)..dst(0) + tw];
                    for tx in 0..tw {
                        o[tx] = ev[tx] - ev[tx + 1];
                    }
                    let o = &mut v[dst(1)..dst(1) + tw];
                    for tx in 0..tw {
                        o[tx] = od[tx] + ev[tx + 1];
                    }
                    let o = &mut v[dst(2)..dst(2) + tw];
                    for tx in 0..tw {
                        o[tx] = ev[tx + 1] - od[tx];
                    }
                    let o = &mut v[dst(3)..dst(3) + tw];
                    for tx in 0..tw {
                        o[tx] = od[tx] - od[tx + 1];
                    }
                }
            }
        }
        for k in 0..16 {
            // SAFETY: U_k is oc x ic, V_k is ic x nt, M_k is oc x nt, each
            // contiguous inside its buffer.
            unsafe {
                sgemm(
                    oc,
                    ic,
                    nt,
                    u.as_ptr().add(k * oc * ic),
                    ic,
                    v.as_ptr().add(k * ic * nt),
                    nt,
                    m.as_mut_ptr().add(k * oc * nt),
                    nt,
                )
            };
        }
        // output transform Y = A^T M A, plus bias
        for o in 0..oc {
            for r in 0..rows {
                let y = 2 * (ty0 + r);
                let e = |k: usize| {
                    let at = (k * oc + o) * nt + r * tw;
                    &m[at..at + tw]
                };
                // column pass: p_j from A^T row [1, 1, 1, 0], q_j from [0, 1, -1, -1]
                let (p, q) = srow.split_at_mut(4 * tw);
                for j in 0..4 {
                    let (a, b, c, d) = (e(j), e(4 + j), e(8 + j), e(12 + j));
                    let pj = &mut p[j * tw..(j + 1) * tw];
                    let qj = &mut q[j * tw..(j + 1) * tw];
                    for t in 0..tw {
                        pj[t] = a[t] + b[t] + c[t];
                        qj[t] = b[t] - c[t] - d[t];
                    }
                }
                let bo = bias[o];
                for (dy, s) in [&*p, &*q].into_iter().enumerate() {
                    if y + dy >= oh {
                        break;
                    }
                    let (s0, rest) = s.split_at(tw);
                    let (s1, rest) = rest.split_at(tw);
                    let (s2, s3) = rest.split_at(tw);
                    let row = &mut out[(o * oh + y + dy) * ow..(o * oh + y + dy + 1) * ow];
                    let mut pairs = row.chunks_exact_mut(2);
                    for (t, pair) in pairs.by_ref().enumerate() {
                        pair[0] = s0[t] + s1[t] + s2[t] + bo;
                        pair[1] = s1[t] - s2[t] - s3[t] + bo;
                    }
                    if let [last] = pairs.into_remainder() {
                        let t = ow / 2;
                        *last = s0[t] + s1[t] + s2[t] + bo;
                    }
                    ep.apply(row, o);
                }
            }
        }
        ty0 += rows;
    }
    Tensor::from_parts(vec![oc, oh, ow], out)
}

#[allow(clippy::too_many_arguments)]
fn conv2d_direct(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f32],
    pad: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    ep: &Epilogue,
) -> Tensor {
    let (ic, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let [oc, _, kh, kw] = kernel.shape[..] else { unreachable!() };
    let mut out = vec![0.0f32; oc * oh * ow];
    for o in 0..oc {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias[o];
                for c in 0..ic {
                    for ky in 0..kh {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (x * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += kernel.data[((o * ic + c) * kh + ky) * kw + kx]
                                * input.data[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * oh + y) * ow + x] = acc;
            }
        }
        ep.apply(&mut out[o * oh * ow..(o + 1) * oh * ow], o);
    }
    Tensor::from_parts(vec![oc, oh, ow], out)
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta`, per channel.
pub fn batch_norm_inference(
    input: &Tensor,
    mean: &[f32],
    var: &[f32],
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
) -> Result<Tensor> {
    let mut out = input.clone();
    batch_norm_in_place(&mut out, mean, var, gamma, beta, eps)?;
    Ok(out)
}

pub fn batch_norm_in_place(
    t: &mut Tensor,
    mean: &[f32],
    var: &[f32],
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
) -> Result<()> {
    let (c, h, w) = t.chw()?;
    if [mean.len(), var.len(), gamma.len(), beta.len()].iter().any(|&l| l != c) {
        return domain(format!("batch-norm parameters must have {c} entries"));
    }
    if var.iter().any(|v| !(v + eps > 0.0)) {
        return domain("batch-norm variance + eps must be positive");
    }
    let plane = h * w;
    for ch in 0..c {
        let scale = gamma[ch] / (var[ch] + eps).sqrt();
        let shift = beta[ch] - mean[ch] * scale;
        t.data[ch * plane..(ch + 1) * plane].iter_mut().for_each(|x| *x = *x * scale + shift);
    }
    Ok(())
}

pub fn leaky_relu(input: &Tensor, slope: f32) -> Tensor {
    let mut t = input.clone();
    leaky_relu_in_place(&mut t, slope);
    t
}

pub fn leaky_relu_in_place(t: &mut Tensor, slope: f32) {
    t.data.iter_mut().for_each(|x| {
        if *x < 0.0 {
            *x *= slope
        }
    });
}

pub fn tanh(input: &Tensor) -> Tensor {
    let mut t = input.clone();
    t.data.iter_mut().for_each(|x| *x = x.tanh());
    t
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    let mut t = input.clone();
    t.data.iter_mut().for_each(|x| *x = sigmoid_scalar(*x));
    t
}

#[inline]
fn sigmoid_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
pub fn max_pool2(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return domain("max_pool2 needs at least 2x2 input");
    }
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        let src = input.channel(ch);
        for y in 0..oh {
            for x in 0..ow {
                let a = src[2 * y * w + 2 * x];
                let b = src[2 * y * w + 2 * x + 1];
                let cc = src[(2 * y + 1) * w + 2 * x];
                let d = src[(2 * y + 1) * w + 2 * x + 1];
                out[(ch * oh + y) * ow + x] = a.max(b).max(cc.max(d));
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, oh, ow], out))
}

pub fn upsample_nearest2(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        let src = input.channel(ch);
        for y in 0..oh {
            let row = &src[(y / 2) * w..(y / 2 + 1) * w];
            let dst = &mut out[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = row[x / 2];
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, oh, ow], out))
}

/// Channel-wise concatenation `[a, b]`.
impl Tensor {
    /// Appends `other`'s channels after this tensor's, in place.
    /// Copy of `t` with room for `extra` more channels of the same size.
    pub fn with_channel_capacity(t: &Tensor, extra: usize) -> Tensor {
        let plane: usize = t.shape.iter().skip(1).product();
        let mut data = Vec::with_capacity(t.data.len() + extra * plane);
        data.extend_from_slice(&t.data);
        Tensor { shape: t.shape.clone(), data }
    }

    pub fn append_channels(&mut self, other: &Tensor) -> Result<()> {
        let (ca, ha, wa) = self.chw()?;
        let (cb, hb, wb) = other.chw()?;
        if (ha, wa) != (hb, wb) {
            return domain(format!("cannot concatenate {ha}x{wa} with {hb}x{wb}"));
        }
        self.data.extend_from_slice(&other.data);
        self.shape[0] = ca + cb;
        Ok(())
    }

    /// Copy of channels `range` of a `(C, H, W)` tensor.
    pub fn channels(&self, range: std::ops::Range<usize>) -> Result<Tensor> {
        let (c, h, w) = self.chw()?;
        if range.start > range.end || range.end > c {
            return domain(format!("channel range {range:?} out of bounds for {c} channels"));
        }
        let plane = h * w;
        Ok(Tensor::from_parts(vec![range.len(), h, w], self.data[range.start * plane..range.end * plane].to_vec()))
    }
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, ha, wa) = a.chw()?;
    let (cb, hb, wb) = b.chw()?;
    if (ha, wa) != (hb, wb) {
        return domain(format!("cannot concatenate {ha}x{wa} with {hb}x{wb}"));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Ok(Tensor::from_parts(vec![ca + cb, ha, wa], data))
}

/// Which network a weight file parameterizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    Routing,
    Fusion,
}

impl Architecture {
    pub fn tag(self) -> u8 {
        match self {
            Architecture::Routing => 1,
            Architecture::Fusion => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(Architecture::Routing),
            2 => Ok(Architecture::Fusion),
            t => format(format!("unknown architecture tag {t}")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Routing => "routing",
            Architecture::Fusion => "fusion",
        }
    }
}

pub const WEIGHTS_MAGIC: &[u8; 6] = b"RFWTS\0";
pub const WEIGHTS_VERSION: u32 = 1;

/// Ordered named tensors for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    arch: Architecture,
    tensors: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl NetworkWeights {
    /// Builds a weight set; names must be unique. Shapes are checked by
    /// [`NetworkWeights::validate`], not here.
    pub fn new(arch: Architecture, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tensors.len());
        for (i, (name, _)) in tensors.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return format(format!("duplicate tensor name '{name}'"));
            }
        }
        Ok(Self { arch, tensors, index })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i].1)
            .ok_or_else(|| Error::Format(format!("missing tensor '{name}'")))
    }

    /// Checks names and shapes against the architecture's layer schedule.
    pub fn validate(&self) -> Result<()> {
        let schedule = match self.arch {
            Architecture::Routing => crate::routing::routing_schedule(),
            Architecture::Fusion => {
                let s = crate::fusion::infer_window_size(self)?;
                crate::fusion::fusion_schedule(s)
            }
        };
        validate_against(self, &schedule)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        put_u32(&mut out, WEIGHTS_VERSION);
        out.push(self.arch.tag());
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                put_u32(&mut out, d as u32);
            }
            put_f32s(&mut out, &t.data);
        }
        out
    }

    /// Parses the framing without checking against a layer schedule.
    pub fn from_bytes_unchecked(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "weight file");
        r.magic(WEIGHTS_MAGIC)?;
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return format(format!("weight file: unsupported version {version}"));
        }
        let arch = Architecture::from_tag(r.u8()?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("weight file: tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u8()? as usize;
            if ndim == 0 {
                return format(format!("weight file: tensor '{name}' has no dimensions"));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .map_or_else(|| format(format!("weight file: tensor '{name}' too large")), Ok)?;
            let data = r.f32_vec(n)?;
            let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor '{name}': {e}")))?;
            tensors.push((name, t));
        }
        r.finish()?;
        Self::new(arch, tensors)
    }

    /// Parses and validates against the layer schedule.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let w = Self::from_bytes_unchecked(bytes)?;
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

pub fn load_weights(bytes: &[u8]) -> Result<NetworkWeights> {
    NetworkWeights::from_bytes(bytes)
}

pub fn save_weights(weights: &NetworkWeights) -> Vec<u8> {
    weights.to_bytes()
}

/// One expected tensor in a layer schedule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

pub(crate) fn conv_specs(out: &mut Vec<TensorSpec>, prefix: &str, oc: usize, ic: usize, k: usize) {
    out.push(TensorSpec { name: format!("{prefix}.weight"), shape: vec![oc, ic, k, k] });
    out.push(TensorSpec { name: format!("{prefix}.bias"), shape: vec![oc] });
}

pub(crate) fn bn_specs(out: &mut Vec<TensorSpec>, prefix: &str, c: usize) {
    for p in ["mean", "var", "gamma", "beta"] {
        out.push(TensorSpec { name: format!("{prefix}.{p}"), shape: vec![c] });
    }
}

fn validate_against(w: &NetworkWeights, schedule: &[TensorSpec]) -> Result<()> {
    for spec in schedule {
        let t = w.get(&spec.name)?;
        if t.shape != spec.shape {
            return format(format!(
                "tensor '{}' has shape {:?}, schedule expects {:?}",
                spec.name, t.shape, spec.shape
            ));
        }
    }
    if w.tensors.len() != schedule.len() {
        let known: std::collections::HashSet<&str> = schedule.iter().map(|s| s.name.as_str()).collect();
        let extra = w.tensors.iter().find(|(n, _)| !known.contains(n.as_str())).map(|(n, _)| n.clone());
        return format(format!("unexpected tensor '{}'", extra.unwrap_or_default()));
    }
    Ok(())
}

/// Convolution layer view into a weight set.
pub(crate) struct Conv<'a> {
    pub weight: &'a Tensor,
    pub bias: &'a [f32],
    pub padding: usize,
}

impl<'a> Conv<'a> {
    pub fn from(w: &'a NetworkWeights, prefix: &str) -> Result<Self> {
        let weight = w.get(&format!("{prefix}.weight"))?;
        let bias = w.get(&format!("{prefix}.bias"))?.data();
        let padding = weight.shape()[2] / 2;
        Ok(Self { weight, bias, padding })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, self.weight, self.bias, self.padding, 1)
    }

    pub fn forward_fused(&self, x: &Tensor, ep: &Epilogue) -> Result<Tensor> {
        conv2d_fused(x, self.weight, self.bias, self.padding, 1, ep)
    }
}

pub(crate) struct BatchNorm<'a> {
    mean: &'a [f32],
    var: &'a [f32],
    gamma: &'a [f32],
    beta: &'a [f32],
}

impl<'a> BatchNorm<'a> {
    pub fn from(w: &'a NetworkWeights, prefix: &str) -> Result<Self> {
        Ok(Self {
            mean: w.get(&format!("{prefix}.mean"))?.data(),
            var: w.get(&format!("{prefix}.var"))?.data(),
            gamma: w.get(&format!("{prefix}.gamma"))?.data(),
            beta: w.get(&format!("{prefix}.beta"))?.data(),
        })
    }

    #[cfg(test)]
    fn apply(&self, t: &mut Tensor) -> Result<()> {
        batch_norm_in_place(t, self.mean, self.var, self.gamma, self.beta, BN_EPS)
    }

    /// The per-channel `(scale, shift)` that [`batch_norm_in_place`] applies.
    pub fn affine(&self) -> Result<(Vec<f32>, Vec<f32>)> {
        if self.var.iter().any(|v| !(v + BN_EPS > 0.0)) {
            return domain("batch-norm variance + eps must be positive");
        }
        let scale: Vec<f32> = self.gamma.iter().zip(self.var).map(|(g, v)| g / (v + BN_EPS).sqrt()).collect();
        let shift = self.beta.iter().zip(self.mean).zip(&scale).map(|((b, m), s)| b - m * s).collect();
        Ok((scale, shift))
    }
}

/// Named intermediate activations recorded during a forward pass.
pub type Trace = Vec<(String, Tensor)>;

pub(crate) fn record(trace: &mut Option<&mut Trace>, name: &str, t: &Tensor) {
    if let Some(tr) = trace.as_deref_mut() {
        tr.push((name.to_string(), t.clone()));
    }
}

/// Activation dump: the weight-file framing with one tensor per traced layer.
pub fn write_activation_dump(arch: Architecture, trace: &Trace) -> Result<Vec<u8>> {
    Ok(NetworkWeights::new(arch, trace.clone())?.to_bytes())
}

pub fn read_activation_dump(bytes: &[u8]) -> Result<NetworkWeights> {
    NetworkWeights::from_bytes_unchecked(bytes)
}

/// Largest absolute difference between matching layers of a reference dump and
/// a freshly computed trace; errors if a layer is missing or has another shape.
pub fn max_activation_diff(reference: &NetworkWeights, trace: &Trace) -> Result<f32> {
    let mut worst = 0.0f32;
    for (name, t) in trace {
        let r = reference.get(name)?;
        if r.shape() != t.shape() {
            return domain(format!("layer '{name}': shape {:?} vs reference {:?}", t.shape(), r.shape()));
        }
        for (a, b) in r.data().iter().zip(t.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}
