//! Forward and backward kernels on plain tensors.
//!
//! These are the building blocks behind [`Graph`](super::Graph) and the
//! gradient-free inference path. They never record anything.

use crate::error::{Error, Result};

use super::Tensor;

/// Norm below which a per-pixel vector is treated as degenerate and replaced
/// by `(0, 0, 1)` during normalisation.
pub const NORMALIZE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    pub fn new(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Self> {
        let (n, cin, h, w) = input.dims4("conv2d")?;
        let (cout, wcin, k, k2) = weight.dims4("conv2d")?;
        if wcin != cin || k2 != k {
            return Err(Error::Shape {
                op: "conv2d",
                expected: vec![cout, cin, k, k],
                actual: weight.shape().to_vec(),
            });
        }
        if bias.shape() != [cout] {
            return Err(Error::Shape {
                op: "conv2d",
                expected: vec![cout],
                actual: bias.shape().to_vec(),
            });
        }
        if k % 2 == 0 {
            return Err(Error::invalid(format!("conv2d: kernel size {k} must be odd")));
        }
        if !(stride == 1 || stride == 2) {
            return Err(Error::invalid(format!("conv2d: stride {stride} not in {{1, 2}}")));
        }
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(Error::Shape {
                op: "conv2d",
                expected: vec![n, cin, k.saturating_sub(2 * padding), k.saturating_sub(2 * padding)],
                actual: input.shape().to_vec(),
            });
        }
        let ho = (h + 2 * padding - k) / stride + 1;
        let wo = (w + 2 * padding - k) / stride + 1;
        Ok(ConvGeometry {
            n,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            padding,
            ho,
            wo,
        })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }
}

/// Row-major `c = alpha * a * b + beta * c` with arbitrary strides on `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the bounds above cover every element addressed with the given
    // strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(g: &ConvGeometry, x: &[f64], cols: &mut [f64]) {
    let p = g.out_pixels();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = &mut cols[((c * g.k + ki) * g.k + kj) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let out = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeometry, cols: &[f64], x: &mut [f64]) {
    let p = g.out_pixels();
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = &cols[((c * g.k + ki) * g.k + kj) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in row[oy * g.wo..(oy + 1) * g.wo].iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input [N,Cin,H,W]` with `weight [Cout,Cin,k,k]`.
///
/// Output extents use floor division: `H' = (H + 2p - k) / stride + 1`.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = ConvGeometry::new(input, weight, bias, stride, padding)?;
    let p = g.out_pixels();
    let kk = g.patch_len();
    let mut out = vec![0.0; g.n * g.cout * p];
    let mut cols = vec![0.0; kk * p];
    let in_len = g.cin * g.h * g.w;
    for n in 0..g.n {
        im2col(&g, &input.data()[n * in_len..(n + 1) * in_len], &mut cols);
        let o = &mut out[n * g.cout * p..(n + 1) * g.cout * p];
        for (co, row) in o.chunks_mut(p).enumerate() {
            row.fill(bias.data()[co]);
        }
        gemm(g.cout, kk, p, weight.data(), (kk, 1), &cols, (p, 1), 1.0, o);
    }
    Tensor::new(&[g.n, g.cout, g.ho, g.wo], out)?.ensure_finite("conv2d")
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

/// Gradients of [`conv2d`] given the upstream gradient `grad_out`.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
    need: [bool; 3],
) -> Result<ConvGrads> {
    let g = ConvGeometry::new(input, weight, bias, stride, padding)?;
    let p = g.out_pixels();
    let kk = g.patch_len();
    let in_len = g.cin * g.h * g.w;
    let [need_input, need_weight, need_bias] = need;

    let mut gx = need_input.then(|| vec![0.0; input.len()]);
    let mut gw = need_weight.then(|| vec![0.0; weight.len()]);
    let mut gb = need_bias.then(|| vec![0.0; g.cout]);
    let mut cols = vec![0.0; kk * p];

    for n in 0..g.n {
        let go = &grad_out.data()[n * g.cout * p..(n + 1) * g.cout * p];
        if let Some(gw) = gw.as_mut() {
            im2col(&g, &input.data()[n * in_len..(n + 1) * in_len], &mut cols);
            // gw += go · colsᵀ
            gemm(g.cout, p, kk, go, (p, 1), &cols, (1, p), 1.0, gw);
        }
        if let Some(gx) = gx.as_mut() {
            // gcols = wᵀ · go
            gemm(kk, g.cout, p, weight.data(), (1, kk), go, (p, 1), 0.0, &mut cols);
            col2im_add(&g, &cols, &mut gx[n * in_len..(n + 1) * in_len]);
        }
        if let Some(gb) = gb.as_mut() {
            for (co, row) in go.chunks(p).enumerate() {
                gb[co] += row.iter().sum::<f64>();
            }
        }
    }
    Ok(ConvGrads {
        input: gx.map(|d| Tensor::new(input.shape(), d)).transpose()?,
        weight: gw.map(|d| Tensor::new(weight.shape(), d)).transpose()?,
        bias: gb.map(|d| Tensor::new(bias.shape(), d)).transpose()?,
    })
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    check_slope(slope)?;
    let data = x
        .data()
        .iter()
        .map(|&v| if v >= 0.0 { v } else { slope * v })
        .collect();
    Tensor::new(x.shape(), data)?.ensure_finite("leaky_relu")
}

/// Derivative is 1 for positive inputs and `slope` otherwise (including 0).
pub fn leaky_relu_backward(x: &Tensor, slope: f64, grad_out: &Tensor) -> Result<Tensor> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
        .collect();
    Tensor::new(x.shape(), data)
}

pub(crate) fn check_slope(slope: f64) -> Result<()> {
    if (0.0..1.0).contains(&slope) {
        Ok(())
    } else {
        Err(Error::invalid(format!("leaky_relu: slope {slope} outside [0, 1)")))
    }
}

/// Corner-aligned linear interpolation taps for resizing `src` samples to `dst`.
fn lerp_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if dst == 1 || src == 1 {
                return (0, 0, 0.0);
            }
            let pos = (i * (src - 1)) as f64 / (dst - 1) as f64;
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

fn check_upsample(x: &Tensor, out_h: usize, out_w: usize) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = x.dims4("bilinear_upsample")?;
    if out_h < h || out_w < w {
        return Err(Error::invalid(format!(
            "bilinear_upsample: cannot downscale {h}x{w} to {out_h}x{out_w}"
        )));
    }
    Ok((n, c, h, w))
}

/// Corner-aligned bilinear upsampling of `[N,C,H,W]` to `[N,C,out_h,out_w]`.
pub fn bilinear_upsample(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = check_upsample(x, out_h, out_w)?;
    let ty = lerp_taps(h, out_h);
    let tx = lerp_taps(w, out_w);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in x.data().chunks(h * w) {
        for &(y0, y1, fy) in &ty {
            let r0 = &plane[y0 * w..(y0 + 1) * w];
            let r1 = &plane[y1 * w..(y1 + 1) * w];
            for &(x0, x1, fx) in &tx {
                let top = (1.0 - fx) * r0[x0] + fx * r0[x1];
                let bot = (1.0 - fx) * r1[x0] + fx * r1[x1];
                out.push((1.0 - fy) * top + fy * bot);
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out)?.ensure_finite("bilinear_upsample")
}

/// Adjoint of [`bilinear_upsample`]: maps a `[N,C,out_h,out_w]` gradient back to `in_shape`.
pub fn bilinear_upsample_backward(in_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (_, _, out_h, out_w) = grad_out.dims4("bilinear_upsample")?;
    let ty = lerp_taps(h, out_h);
    let tx = lerp_taps(w, out_w);
    let mut gx = vec![0.0; in_shape.iter().product()];
    for (plane, gplane) in gx.chunks_mut(h * w).zip(grad_out.data().chunks(out_h * out_w)) {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = gplane[oy * out_w + ox];
                plane[y0 * w + x0] += (1.0 - fy) * (1.0 - fx) * g;
                plane[y0 * w + x1] += (1.0 - fy) * fx * g;
                plane[y1 * w + x0] += fy * (1.0 - fx) * g;
                plane[y1 * w + x1] += fy * fx * g;
            }
        }
    }
    Tensor::new(in_shape, gx)
}

/// Element-wise maximum across same-shaped tensors, with the index of the
/// winning input per element (lowest index on ties).
pub fn max_over_set(items: &[&Tensor]) -> Result<(Tensor, Vec<u32>)> {
    let first = items
        .first()
        .ok_or_else(|| Error::invalid("max_over_set: empty input list"))?;
    for t in &items[1..] {
        if t.shape() != first.shape() {
            return Err(Error::Shape {
                op: "max_over_set",
                expected: first.shape().to_vec(),
                actual: t.shape().to_vec(),
            });
        }
    }
    let mut out = first.data().to_vec();
    let mut winners = vec![0u32; out.len()];
    for (idx, t) in items.iter().enumerate().skip(1) {
        for ((o, win), &v) in out.iter_mut().zip(winners.iter_mut()).zip(t.data()) {
            if v > *o {
                *o = v;
                *win = idx as u32;
            }
        }
    }
    Ok((Tensor::new(first.shape(), out)?.ensure_finite("max_over_set")?, winners))
}

/// Concatenation of `[N,Ci,H,W]` tensors along the channel axis.
pub fn concat_channels(items: &[&Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| Error::invalid("concat_channels: empty input list"))?;
    let (n, _, h, w) = first.dims4("concat_channels")?;
    let mut total_c = 0;
    for t in items {
        let (tn, tc, th, tw) = t.dims4("concat_channels")?;
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::Shape {
                op: "concat_channels",
                expected: vec![n, tc, h, w],
                actual: t.shape().to_vec(),
            });
        }
        total_c += tc;
    }
    let mut out = Vec::with_capacity(n * total_c * h * w);
    for b in 0..n {
        for t in items {
            let per = t.shape()[1] * h * w;
            out.extend_from_slice(&t.data()[b * per..(b + 1) * per]);
        }
    }
    Tensor::new(&[n, total_c, h, w], out)
}

/// Per-pixel L2 normalisation over the channel axis of `[N,C,H,W]`.
///
/// Pixels with norm below [`NORMALIZE_EPS`] become the last basis vector,
/// i.e. `(0, 0, 1)` for three channels.
pub fn normalize_channels(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4("normalize")?;
    let hw = h * w;
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        let base = b * c * hw;
        for px in 0..hw {
            let norm = (0..c)
                .map(|ch| x.data()[base + ch * hw + px].powi(2))
                .sum::<f64>()
                .sqrt();
            if norm < NORMALIZE_EPS {
                out[base + (c - 1) * hw + px] = 1.0;
            } else {
                for ch in 0..c {
                    out[base + ch * hw + px] = x.data()[base + ch * hw + px] / norm;
                }
            }
        }
    }
    Tensor::new(x.shape(), out)?.ensure_finite("normalize")
}

pub fn normalize_channels_backward(x: &Tensor, y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4("normalize")?;
    let hw = h * w;
    let mut gx = vec![0.0; x.len()];
    let (xd, yd, gd) = (x.data(), y.data(), grad_out.data());
    for b in 0..n {
        let base = b * c * hw;
        for px in 0..hw {
            let idx = |ch: usize| base + ch * hw + px;
            let norm = (0..c).map(|ch| xd[idx(ch)].powi(2)).sum::<f64>().sqrt();
            if norm < NORMALIZE_EPS {
                continue;
            }
            let yg: f64 = (0..c).map(|ch| yd[idx(ch)] * gd[idx(ch)]).sum();
            for ch in 0..c {
                gx[idx(ch)] = (gd[idx(ch)] - yd[idx(ch)] * yg) / norm;
            }
        }
    }
    Tensor::new(x.shape(), gx)
}

/// Area-weighted coverage matrix for shrinking `src` samples into `dst` bins.
fn area_taps(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Area-average downsampling of every `H×W` plane of `x` (rank ≥ 2, spatial
/// axes last) to `out_h×out_w`. Constant planes stay constant.
pub fn area_downsample(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let rank = x.shape().len();
    if rank < 2 {
        return Err(Error::invalid("area_downsample: need spatial axes"));
    }
    let (h, w) = (x.shape()[rank - 2], x.shape()[rank - 1]);
    if out_h > h || out_w > w || out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "area_downsample: cannot resize {h}x{w} to {out_h}x{out_w}"
        )));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(x.clone());
    }
    let ty = area_taps(h, out_h);
    let tx = area_taps(w, out_w);
    let mut out = Vec::with_capacity(x.len() / (h * w) * out_h * out_w);
    let mut rows = vec![0.0; out_h * w];
    for plane in x.data().chunks(h * w) {
        rows.fill(0.0);
        for (oy, taps) in ty.iter().enumerate() {
            let dst = &mut rows[oy * w..(oy + 1) * w];
            for &(sy, wy) in taps {
                for (d, s) in dst.iter_mut().zip(&plane[sy * w..(sy + 1) * w]) {
                    *d += wy * s;
                }
            }
        }
        for oy in 0..out_h {
            let row = &rows[oy * w..(oy + 1) * w];
            out.extend(tx.iter().map(|taps| taps.iter().map(|&(sx, wx)| wx * row[sx]).sum::<f64>()));
        }
    }
    let mut shape = x.shape().to_vec();
    shape[rank - 2] = out_h;
    shape[rank - 1] = out_w;
    Tensor::new(&shape, out)
}
