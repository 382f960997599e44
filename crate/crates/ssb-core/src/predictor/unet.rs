//! Small two-level UNet noise predictor with a hand-written backward pass.
//! No autograd: every layer's forward stores what its backward needs on a
//! tape, and `backward` walks the tape in reverse producing a flat gradient
//! vector aligned with the flat parameter vector.
//!
//! Topology (H = grid_size, C0/C1 = channels):
//!     conv_in 3x3: 1 -> C0                      @ H
//!     block1: res block C0 -> C0                @ H
//!     down:   avg-pool + conv 3x3 or strided conv 3x3, C0 -> C1   @ H/2
//!     block2: res block C1 -> C1                @ H/2
//!     up:     nearest or bilinear x2 + conv 3x3, C1 -> C0         @ H
//!     concat(up, block1) -> res block 2*C0 -> C0
//!     head:   group norm + silu + conv 3x3 -> 1
//!
//! Each res block is GN -> silu -> conv -> (+ per-channel embedding bias)
//! -> GN -> silu -> conv, with an identity or 1x1-conv skip when residual
//! connections are enabled. Conditioning: sinusoidal step embedding plus a
//! learned label row (row 0 is the null label), mixed by a 2-layer MLP and
//! projected per block.

use crate::error::{Result, SsbError};
use crate::grid::Grid;
use crate::predictor::{ExpertId, Predictor};
use crate::rng::stream;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use std::ops::Range;

const GN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleKind {
    AvgPool,
    StridedConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleKind {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub grid_size: usize,
    pub channels: [usize; 2],
    pub time_embed_dim: usize,
    pub groups: usize,
    /// Number of expert labels; the embedding table holds eta + 1 rows.
    pub eta: u32,
    pub down_kind: DownsampleKind,
    pub up_kind: UpsampleKind,
    pub residual: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            grid_size: 32,
            channels: [16, 32],
            time_embed_dim: 32,
            groups: 8,
            eta: 4,
            down_kind: DownsampleKind::StridedConv,
            up_kind: UpsampleKind::Nearest,
            residual: true,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SsbError::InvalidArgument(msg));
        if self.grid_size < 4 || self.grid_size % 2 != 0 {
            return bad(format!("grid_size must be even and at least 4, got {}", self.grid_size));
        }
        let [c0, c1] = self.channels;
        if c0 == 0 || c1 == 0 {
            return bad("channels must be nonzero".into());
        }
        if self.groups == 0
            || c0 % self.groups != 0
            || c1 % self.groups != 0
            || (2 * c0) % self.groups != 0
        {
            return bad(format!(
                "groups ({}) must divide channels {c0}, {c1} and {}",
                self.groups,
                2 * c0
            ));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return bad(format!(
                "time_embed_dim must be even and at least 2, got {}",
                self.time_embed_dim
            ));
        }
        if self.eta == 0 {
            return bad("eta must be at least 1".into());
        }
        Ok(())
    }
}

/// One named parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone)]
struct BlockOffsets {
    gn1_g: Range<usize>,
    gn1_b: Range<usize>,
    c1_w: Range<usize>,
    c1_b: Range<usize>,
    emb_w: Range<usize>,
    emb_b: Range<usize>,
    gn2_g: Range<usize>,
    gn2_b: Range<usize>,
    c2_w: Range<usize>,
    c2_b: Range<usize>,
    skip_w: Option<Range<usize>>,
    skip_b: Option<Range<usize>>,
    cin: usize,
    cout: usize,
}

#[derive(Debug, Clone)]
struct Offsets {
    conv_in_w: Range<usize>,
    conv_in_b: Range<usize>,
    emb_l1_w: Range<usize>,
    emb_l1_b: Range<usize>,
    emb_l2_w: Range<usize>,
    emb_l2_b: Range<usize>,
    label_table: Range<usize>,
    blk1: BlockOffsets,
    down_w: Range<usize>,
    down_b: Range<usize>,
    blk2: BlockOffsets,
    up_w: Range<usize>,
    up_b: Range<usize>,
    blk3: BlockOffsets,
    head_gn_g: Range<usize>,
    head_gn_b: Range<usize>,
    head_w: Range<usize>,
    head_b: Range<usize>,
    total: usize,
}

struct LayoutBuilder {
    entries: Vec<LayoutEntry>,
    cursor: usize,
}

impl LayoutBuilder {
    fn new() -> Self {
        LayoutBuilder { entries: Vec::new(), cursor: 0 }
    }

    fn push(&mut self, name: &str, shape: &[usize]) -> Range<usize> {
        let len: usize = shape.iter().product();
        let range = self.cursor..self.cursor + len;
        self.entries.push(LayoutEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.cursor,
        });
        self.cursor += len;
        range
    }

    fn block(&mut self, prefix: &str, cin: usize, cout: usize, e: usize, residual: bool) -> BlockOffsets {
        let gn1_g = self.push(&format!("{prefix}.gn1.g"), &[cin]);
        let gn1_b = self.push(&format!("{prefix}.gn1.b"), &[cin]);
        let c1_w = self.push(&format!("{prefix}.conv1.w"), &[cout, cin, 3, 3]);
        let c1_b = self.push(&format!("{prefix}.conv1.b"), &[cout]);
        let emb_w = self.push(&format!("{prefix}.emb.w"), &[cout, e]);
        let emb_b = self.push(&format!("{prefix}.emb.b"), &[cout]);
        let gn2_g = self.push(&format!("{prefix}.gn2.g"), &[cout]);
        let gn2_b = self.push(&format!("{prefix}.gn2.b"), &[cout]);
        let c2_w = self.push(&format!("{prefix}.conv2.w"), &[cout, cout, 3, 3]);
        let c2_b = self.push(&format!("{prefix}.conv2.b"), &[cout]);
        let (skip_w, skip_b) = if residual && cin != cout {
            (
                Some(self.push(&format!("{prefix}.skip.w"), &[cout, cin, 1, 1])),
                Some(self.push(&format!("{prefix}.skip.b"), &[cout])),
            )
        } else {
            (None, None)
        };
        BlockOffsets { gn1_g, gn1_b, c1_w, c1_b, emb_w, emb_b, gn2_g, gn2_b, c2_w, c2_b, skip_w, skip_b, cin, cout }
    }
}

fn build_layout(arch: &ArchConfig) -> (Vec<LayoutEntry>, Offsets) {
    let [c0, c1] = arch.channels;
    let e = arch.time_embed_dim;
    let mut b = LayoutBuilder::new();
    let conv_in_w = b.push("conv_in.w", &[c0, 1, 3, 3]);
    let conv_in_b = b.push("conv_in.b", &[c0]);
    let emb_l1_w = b.push("emb.lin1.w", &[e, e]);
    let emb_l1_b = b.push("emb.lin1.b", &[e]);
    let emb_l2_w = b.push("emb.lin2.w", &[e, e]);
    let emb_l2_b = b.push("emb.lin2.b", &[e]);
    let label_table = b.push("label.table", &[arch.eta as usize + 1, e]);
    let blk1 = b.block("block1", c0, c0, e, arch.residual);
    let down_w = b.push("down.conv.w", &[c1, c0, 3, 3]);
    let down_b = b.push("down.conv.b", &[c1]);
    let blk2 = b.block("block2", c1, c1, e, arch.residual);
    let up_w = b.push("up.conv.w", &[c0, c1, 3, 3]);
    let up_b = b.push("up.conv.b", &[c0]);
    let blk3 = b.block("block3", 2 * c0, c0, e, arch.residual);
    let head_gn_g = b.push("head.gn.g", &[c0]);
    let head_gn_b = b.push("head.gn.b", &[c0]);
    let head_w = b.push("head.conv.w", &[1, c0, 3, 3]);
    let head_b = b.push("head.conv.b", &[1]);
    let total = b.cursor;
    (
        b.entries,
        Offsets {
            conv_in_w,
            conv_in_b,
            emb_l1_w,
            emb_l1_b,
            emb_l2_w,
            emb_l2_b,
            label_table,
            blk1,
            down_w,
            down_b,
            blk2,
            up_w,
            up_b,
            blk3,
            head_gn_g,
            head_gn_b,
            head_w,
            head_b,
            total,
        },
    )
}

// ---------------------------------------------------------------------------
// layer primitives on flat [C, H, W] buffers

/// Output index range where o*stride + k_off - pad lands inside [0, in_dim).
fn conv_range(k_off: usize, pad: usize, stride: usize, in_dim: usize, out_dim: usize) -> (usize, usize) {
    let lo = if pad > k_off { (pad - k_off + stride - 1) / stride } else { 0 };
    let hi_inclusive = (in_dim - 1 + pad).saturating_sub(k_off) / stride;
    (lo.min(out_dim), (hi_inclusive + 1).min(out_dim))
}

#[allow(clippy::too_many_arguments)]
fn conv2d(
    x: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    wgt: &[f64],
    bias: &[f64],
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; co * oh * ow];
    for oc in 0..co {
        let ob = oc * oh * ow;
        out[ob..ob + oh * ow].fill(bias[oc]);
        for ic in 0..ci {
            let xb = ic * h * w;
            let wb = (oc * ci + ic) * k * k;
            for ky in 0..k {
                let (oy_lo, oy_hi) = conv_range(ky, pad, stride, h, oh);
                for kx in 0..k {
                    let wv = wgt[wb + ky * k + kx];
                    let (ox_lo, ox_hi) = conv_range(kx, pad, stride, w, ow);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let row = xb + iy * w;
                        let orow = ob + oy * ow;
                        for ox in ox_lo..ox_hi {
                            let ix = ox * stride + kx - pad;
                            out[orow + ox] += wv * x[row + ix];
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

/// Gradients of conv2d. `dx` is skipped when the input needs no gradient.
#[allow(clippy::too_many_arguments)]
fn conv2d_back(
    x: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    wgt: &[f64],
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dout: &[f64],
    oh: usize,
    ow: usize,
    want_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; co * ci * k * k];
    let mut db = vec![0.0; co];
    let mut dx = if want_dx { Some(vec![0.0; ci * h * w]) } else { None };
    for oc in 0..co {
        let ob = oc * oh * ow;
        db[oc] += dout[ob..ob + oh * ow].iter().sum::<f64>();
        for ic in 0..ci {
            let xb = ic * h * w;
            let wb = (oc * ci + ic) * k * k;
            for ky in 0..k {
                let (oy_lo, oy_hi) = conv_range(ky, pad, stride, h, oh);
                for kx in 0..k {
                    let (ox_lo, ox_hi) = conv_range(kx, pad, stride, w, ow);
                    let mut acc = 0.0;
                    let wv = wgt[wb + ky * k + kx];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let row = xb + iy * w;
                        let orow = ob + oy * ow;
                        if let Some(dx) = dx.as_mut() {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - pad;
                                let d = dout[orow + ox];
                                acc += d * x[row + ix];
                                dx[row + ix] += wv * d;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - pad;
                                acc += dout[orow + ox] * x[row + ix];
                            }
                        }
                    }
                    dw[wb + ky * k + kx] += acc;
                }
            }
        }
    }
    (dx, dw, db)
}

/// Group norm over channel groups; returns (out, xhat, inv_std per group).
fn group_norm(
    x: &[f64],
    c: usize,
    hw: usize,
    groups: usize,
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let cg = c / groups;
    let n = cg * hw;
    let mut out = vec![0.0; c * hw];
    let mut xhat = vec![0.0; c * hw];
    let mut inv_std = vec![0.0; groups];
    for g in 0..groups {
        let base = g * cg * hw;
        let slice = &x[base..base + n];
        let mean = slice.iter().sum::<f64>() / n as f64;
        let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + GN_EPS).sqrt();
        inv_std[g] = is;
        for i in 0..n {
            let xh = (slice[i] - mean) * is;
            xhat[base + i] = xh;
            let ch = g * cg + i / hw;
            out[base + i] = gamma[ch] * xh + beta[ch];
        }
    }
    (out, xhat, inv_std)
}

fn group_norm_back(
    dout: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    c: usize,
    hw: usize,
    groups: usize,
    gamma: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let cg = c / groups;
    let n = cg * hw;
    let mut dx = vec![0.0; c * hw];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for g in 0..groups {
        let base = g * cg * hw;
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for i in 0..n {
            let ch = g * cg + i / hw;
            let d = dout[base + i];
            let xh = xhat[base + i];
            dgamma[ch] += d * xh;
            dbeta[ch] += d;
            let dxh = d * gamma[ch];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh;
        }
        let is = inv_std[g];
        let nf = n as f64;
        for i in 0..n {
            let ch = g * cg + i / hw;
            let dxh = dout[base + i] * gamma[ch];
            dx[base + i] = is / nf * (nf * dxh - sum_dxhat - xhat[base + i] * sum_dxhat_xhat);
        }
    }
    (dx, dgamma, dbeta)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// d silu / dx evaluated at the pre-activation x, times upstream d.
fn silu_back(x: &[f64], dout: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(dout)
        .map(|(&v, &d)| {
            let s = sigmoid(v);
            d * s * (1.0 + v * (1.0 - s))
        })
        .collect()
}

fn avg_pool2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let i = ch * h * w + 2 * oy * w + 2 * ox;
                out[ch * oh * ow + oy * ow + ox] = 0.25 * (x[i] + x[i + 1] + x[i + w] + x[i + w + 1]);
            }
        }
    }
    out
}

fn avg_pool2_back(dout: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let d = 0.25 * dout[ch * oh * ow + oy * ow + ox];
                let i = ch * h * w + 2 * oy * w + 2 * ox;
                dx[i] += d;
                dx[i + 1] += d;
                dx[i + w] += d;
                dx[i + w + 1] += d;
            }
        }
    }
    dx
}

fn nearest_up2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                out[ch * oh * ow + oy * ow + ox] = x[ch * h * w + (oy / 2) * w + ox / 2];
            }
        }
    }
    out
}

fn nearest_up2_back(dout: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                dx[ch * h * w + (oy / 2) * w + ox / 2] += dout[ch * oh * ow + oy * ow + ox];
            }
        }
    }
    dx
}

/// 2x bilinear tap table (half-pixel centers): output o samples source
/// o/2 - 0.25, clamped, giving 0.75/0.25 taps except at the borders.
fn bilinear_taps(out_dim: usize, in_dim: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..out_dim)
        .map(|o| {
            let src = o as f64 / 2.0 - 0.25;
            let floor = src.floor();
            let frac = src - floor;
            let i0 = floor.max(0.0) as usize;
            let i1 = (i0 + 1).min(in_dim - 1);
            let i0 = i0.min(in_dim - 1);
            if src < 0.0 {
                (i0, i1, 1.0, 0.0)
            } else {
                (i0, i1, 1.0 - frac, frac)
            }
        })
        .collect()
}

fn bilinear_up2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let ytaps = bilinear_taps(oh, h);
    let xtaps = bilinear_taps(ow, w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let xb = ch * h * w;
        let ob = ch * oh * ow;
        for oy in 0..oh {
            let (y0, y1, wy0, wy1) = ytaps[oy];
            for ox in 0..ow {
                let (x0, x1, wx0, wx1) = xtaps[ox];
                out[ob + oy * ow + ox] = wy0 * (wx0 * x[xb + y0 * w + x0] + wx1 * x[xb + y0 * w + x1])
                    + wy1 * (wx0 * x[xb + y1 * w + x0] + wx1 * x[xb + y1 * w + x1]);
            }
        }
    }
    out
}

fn bilinear_up2_back(dout: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let ytaps = bilinear_taps(oh, h);
    let xtaps = bilinear_taps(ow, w);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        let xb = ch * h * w;
        let ob = ch * oh * ow;
        for oy in 0..oh {
            let (y0, y1, wy0, wy1) = ytaps[oy];
            for ox in 0..ow {
                let (x0, x1, wx0, wx1) = xtaps[ox];
                let d = dout[ob + oy * ow + ox];
                dx[xb + y0 * w + x0] += wy0 * wx0 * d;
                dx[xb + y0 * w + x1] += wy0 * wx1 * d;
                dx[xb + y1 * w + x0] += wy1 * wx0 * d;
                dx[xb + y1 * w + x1] += wy1 * wx1 * d;
            }
        }
    }
    dx
}

/// y = W x + b for row-major W [rows, cols].
fn linear(w: &[f64], b: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut y = b.to_vec();
    for r in 0..rows {
        let wb = r * cols;
        let mut acc = 0.0;
        for c in 0..cols {
            acc += w[wb + c] * x[c];
        }
        y[r] += acc;
    }
    y
}

fn linear_back(
    w: &[f64],
    x: &[f64],
    dout: &[f64],
    rows: usize,
    cols: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; cols];
    let mut dw = vec![0.0; rows * cols];
    for r in 0..rows {
        let d = dout[r];
        let wb = r * cols;
        for c in 0..cols {
            dw[wb + c] += d * x[c];
            dx[c] += d * w[wb + c];
        }
    }
    (dx, dw, dout.to_vec())
}

/// Sinusoidal embedding of an integer step.
fn time_embedding(step: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let exponent = if half > 1 { k as f64 / (half - 1) as f64 } else { 0.0 };
        let freq = (10000f64).powf(-exponent);
        let angle = step as f64 * freq;
        out[k] = angle.sin();
        out[half + k] = angle.cos();
    }
    out
}

// ---------------------------------------------------------------------------
// res block forward/backward

struct BlockTape {
    x: Vec<f64>,
    xhat1: Vec<f64>,
    inv_std1: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    xhat2: Vec<f64>,
    inv_std2: Vec<f64>,
    h6: Vec<f64>,
}

/// Tape of one training forward; consumed by `TinyUNet::backward`.
pub struct Tape {
    label_index: usize,
    emb0: Vec<f64>,
    e1: Vec<f64>,
    e1s: Vec<f64>,
    emb: Vec<f64>,
    se: Vec<f64>,
    x_in: Vec<f64>,
    blk1: BlockTape,
    pooled: Option<Vec<f64>>,
    blk2: BlockTape,
    upsampled: Vec<f64>,
    cat: Vec<f64>,
    blk3: BlockTape,
    head_xhat: Vec<f64>,
    head_inv_std: Vec<f64>,
    head_act_in: Vec<f64>,
    head_conv_in: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TinyUNet {
    arch: ArchConfig,
    params: Vec<f64>,
    layout: Vec<LayoutEntry>,
    off: Offsets,
}

impl TinyUNet {
    /// Fresh network. Convolutions draw Kaiming-style normals, norms start at
    /// identity, the head conv starts at zero so the initial prediction is
    /// exactly zero noise.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<TinyUNet> {
        arch.validate()?;
        let (layout, off) = build_layout(&arch);
        let mut params = vec![0.0; off.total];
        let mut rng = stream(seed, &[b"unet-init"]);
        for entry in &layout {
            let len: usize = entry.shape.iter().product();
            let slice = &mut params[entry.offset..entry.offset + len];
            let name = entry.name.as_str();
            if name.ends_with(".gn1.g") || name.ends_with(".gn2.g") || name == "head.gn.g" {
                slice.fill(1.0);
            } else if name.ends_with(".b") || name == "head.gn.b" {
                // biases and norm shifts start at zero
            } else if name == "head.conv.w" {
                // zero head
            } else if name == "label.table" {
                let dist = Normal::new(0.0, 0.02).expect("valid std");
                slice.iter_mut().for_each(|v| *v = rng.sample(dist));
            } else {
                // conv and linear weights: fan_in = product of trailing dims
                let fan_in: usize = entry.shape[1..].iter().product();
                let std = (2.0 / fan_in as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("valid std");
                slice.iter_mut().for_each(|v| *v = rng.sample(dist));
            }
        }
        Ok(TinyUNet { arch, params, layout, off })
    }

    /// Rebuild from a stored parameter vector (checkpoint load).
    pub fn from_params(arch: ArchConfig, params: Vec<f64>) -> Result<TinyUNet> {
        arch.validate()?;
        let (layout, off) = build_layout(&arch);
        if params.len() != off.total {
            return Err(SsbError::Checkpoint(format!(
                "parameter vector has {} values, architecture needs {}",
                params.len(),
                off.total
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(SsbError::Checkpoint("parameter vector contains non-finite values".into()));
        }
        Ok(TinyUNet { arch, params, layout, off })
    }

    pub fn param_count(arch: &ArchConfig) -> Result<usize> {
        arch.validate()?;
        Ok(build_layout(arch).1.total)
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layout(&self) -> &[LayoutEntry] {
        &self.layout
    }

    fn p(&self, r: &Range<usize>) -> &[f64] {
        &self.params[r.clone()]
    }

    fn label_index(&self, label: Option<ExpertId>) -> Result<usize> {
        match label {
            None => Ok(0),
            Some(id) => {
                if id.get() > self.arch.eta {
                    return Err(SsbError::InvalidArgument(format!(
                        "label {} exceeds eta {}",
                        id.get(),
                        self.arch.eta
                    )));
                }
                Ok(id.get() as usize)
            }
        }
    }

    fn block_forward(
        &self,
        bo: &BlockOffsets,
        x: Vec<f64>,
        hw: usize,
        se: &[f64],
    ) -> (Vec<f64>, BlockTape) {
        let groups = self.arch.groups;
        let e = self.arch.time_embed_dim;
        let side = (hw as f64).sqrt() as usize;
        let (h1, xhat1, inv_std1) =
            group_norm(&x, bo.cin, hw, groups, self.p(&bo.gn1_g), self.p(&bo.gn1_b));
        let h2 = silu_vec(&h1);
        let (mut h4, _, _) =
            conv2d(&h2, bo.cin, side, side, self.p(&bo.c1_w), self.p(&bo.c1_b), bo.cout, 3, 1, 1);
        let bvec = linear(self.p(&bo.emb_w), self.p(&bo.emb_b), se, bo.cout, e);
        for c in 0..bo.cout {
            for v in &mut h4[c * hw..(c + 1) * hw] {
                *v += bvec[c];
            }
        }
        let (h5, xhat2, inv_std2) =
            group_norm(&h4, bo.cout, hw, groups, self.p(&bo.gn2_g), self.p(&bo.gn2_b));
        let h6 = silu_vec(&h5);
        let (h7, _, _) =
            conv2d(&h6, bo.cout, side, side, self.p(&bo.c2_w), self.p(&bo.c2_b), bo.cout, 3, 1, 1);
        let out = if self.arch.residual {
            match (&bo.skip_w, &bo.skip_b) {
                (Some(sw), Some(sb)) => {
                    let (skip, _, _) =
                        conv2d(&x, bo.cin, side, side, self.p(sw), self.p(sb), bo.cout, 1, 1, 0);
                    h7.iter().zip(&skip).map(|(a, b)| a + b).collect()
                }
                _ => h7.iter().zip(&x).map(|(a, b)| a + b).collect(),
            }
        } else {
            h7
        };
        (out, BlockTape { x, xhat1, inv_std1, h1, h2, xhat2, inv_std2, h6 })
    }

    /// Returns (d_input, d_se_accum) and accumulates parameter grads.
    fn block_backward(
        &self,
        bo: &BlockOffsets,
        tape: &BlockTape,
        dout: &[f64],
        hw: usize,
        se: &[f64],
        grads: &mut [f64],
        d_se: &mut [f64],
    ) -> Vec<f64> {
        let groups = self.arch.groups;
        let e = self.arch.time_embed_dim;
        let side = (hw as f64).sqrt() as usize;
        // out = h7 (+ skip)
        let mut dx_total = vec![0.0; bo.cin * hw];
        if self.arch.residual {
            match (&bo.skip_w, &bo.skip_b) {
                (Some(sw), Some(sb)) => {
                    let (dx_skip, dsw, dsb) = conv2d_back(
                        &tape.x, bo.cin, side, side, self.p(sw), bo.cout, 1, 1, 0, dout, side,
                        side, true,
                    );
                    add_into(&mut grads[sw.clone()], &dsw);
                    add_into(&mut grads[sb.clone()], &dsb);
                    add_into(&mut dx_total, &dx_skip.expect("dx requested"));
                }
                _ => add_into(&mut dx_total, dout),
            }
        }
        // conv2
        let (dh6, dc2w, dc2b) = conv2d_back(
            &tape.h6, bo.cout, side, side, self.p(&bo.c2_w), bo.cout, 3, 1, 1, dout, side, side,
            true,
        );
        add_into(&mut grads[bo.c2_w.clone()], &dc2w);
        add_into(&mut grads[bo.c2_b.clone()], &dc2b);
        // silu at h5 = gn2(h4); recompute h5 from xhat2 and the affine params
        let g2 = self.p(&bo.gn2_g);
        let b2 = self.p(&bo.gn2_b);
        let h5: Vec<f64> = (0..bo.cout * hw)
            .map(|i| g2[i / hw] * tape.xhat2[i] + b2[i / hw])
            .collect();
        let dh5 = silu_back(&h5, &dh6.expect("dx requested"));
        // gn2
        let (dh4, dg2, db2) =
            group_norm_back(&dh5, &tape.xhat2, &tape.inv_std2, bo.cout, hw, groups, g2);
        add_into(&mut grads[bo.gn2_g.clone()], &dg2);
        add_into(&mut grads[bo.gn2_b.clone()], &db2);
        // per-channel embedding bias
        let mut dbvec = vec![0.0; bo.cout];
        for c in 0..bo.cout {
            dbvec[c] = dh4[c * hw..(c + 1) * hw].iter().sum();
        }
        let (dse_part, demb_w, demb_b) = linear_back(self.p(&bo.emb_w), se, &dbvec, bo.cout, e);
        add_into(&mut grads[bo.emb_w.clone()], &demb_w);
        add_into(&mut grads[bo.emb_b.clone()], &demb_b);
        add_into(d_se, &dse_part);
        // conv1
        let (dh2, dc1w, dc1b) = conv2d_back(
            &tape.h2, bo.cin, side, side, self.p(&bo.c1_w), bo.cout, 3, 1, 1, &dh4, side, side,
            true,
        );
        add_into(&mut grads[bo.c1_w.clone()], &dc1w);
        add_into(&mut grads[bo.c1_b.clone()], &dc1b);
        // silu at h1
        let dh1 = silu_back(&tape.h1, &dh2.expect("dx requested"));
        // gn1
        let (dx_gn, dg1, db1) = group_norm_back(
            &dh1,
            &tape.xhat1,
            &tape.inv_std1,
            bo.cin,
            hw,
            groups,
            self.p(&bo.gn1_g),
        );
        add_into(&mut grads[bo.gn1_g.clone()], &dg1);
        add_into(&mut grads[bo.gn1_b.clone()], &db1);
        add_into(&mut dx_total, &dx_gn);
        dx_total
    }

    /// Forward pass that records the tape needed by `backward`.
    pub fn forward_train(
        &self,
        x_t: &Grid,
        label: Option<ExpertId>,
        step: usize,
    ) -> Result<(Grid, Tape)> {
        let s = self.arch.grid_size;
        if x_t.height() != s || x_t.width() != s {
            return Err(SsbError::InvalidArgument(format!(
                "input is {}x{}, network expects {s}x{s}",
                x_t.height(),
                x_t.width()
            )));
        }
        if step == 0 {
            return Err(SsbError::InvalidArgument("network step must be at least 1".into()));
        }
        if !x_t.is_finite() {
            return Err(SsbError::Domain("network input is not finite".into()));
        }
        let [c0, c1] = self.arch.channels;
        let e = self.arch.time_embed_dim;
        let hw = s * s;
        let h2s = s / 2;
        let hw2 = h2s * h2s;
        let label_index = self.label_index(label)?;

        // conditioning path
        let t_emb = time_embedding(step, e);
        let row = &self.p(&self.off.label_table)[label_index * e..(label_index + 1) * e];
        let emb0: Vec<f64> = t_emb.iter().zip(row).map(|(a, b)| a + b).collect();
        let e1 = linear(self.p(&self.off.emb_l1_w), self.p(&self.off.emb_l1_b), &emb0, e, e);
        let e1s = silu_vec(&e1);
        let emb = linear(self.p(&self.off.emb_l2_w), self.p(&self.off.emb_l2_b), &e1s, e, e);
        let se = silu_vec(&emb);

        // encoder
        let x_in = x_t.data().to_vec();
        let (f0, _, _) = conv2d(
            &x_in,
            1,
            s,
            s,
            self.p(&self.off.conv_in_w),
            self.p(&self.off.conv_in_b),
            c0,
            3,
            1,
            1,
        );
        let (f1, blk1) = self.block_forward(&self.off.blk1, f0.clone(), hw, &se);
        let (f_down, pooled) = match self.arch.down_kind {
            DownsampleKind::AvgPool => {
                let pooled = avg_pool2(&f1, c0, s, s);
                let (fd, _, _) = conv2d(
                    &pooled,
                    c0,
                    h2s,
                    h2s,
                    self.p(&self.off.down_w),
                    self.p(&self.off.down_b),
                    c1,
                    3,
                    1,
                    1,
                );
                (fd, Some(pooled))
            }
            DownsampleKind::StridedConv => {
                let (fd, _, _) = conv2d(
                    &f1,
                    c0,
                    s,
                    s,
                    self.p(&self.off.down_w),
                    self.p(&self.off.down_b),
                    c1,
                    3,
                    2,
                    1,
                );
                (fd, None)
            }
        };
        let (f2, blk2) = self.block_forward(&self.off.blk2, f_down, hw2, &se);
        let upsampled = match self.arch.up_kind {
            UpsampleKind::Nearest => nearest_up2(&f2, c1, h2s, h2s),
            UpsampleKind::Bilinear => bilinear_up2(&f2, c1, h2s, h2s),
        };
        let (f_up, _, _) = conv2d(
            &upsampled,
            c1,
            s,
            s,
            self.p(&self.off.up_w),
            self.p(&self.off.up_b),
            c0,
            3,
            1,
            1,
        );
        let mut cat = Vec::with_capacity(2 * c0 * hw);
        cat.extend_from_slice(&f_up);
        cat.extend_from_slice(&f1);
        let (f3, blk3) = self.block_forward(&self.off.blk3, cat.clone(), hw, &se);
        let (head_act_pre, head_xhat, head_inv_std) = group_norm(
            &f3,
            c0,
            hw,
            self.arch.groups,
            self.p(&self.off.head_gn_g),
            self.p(&self.off.head_gn_b),
        );
        let head_conv_in = silu_vec(&head_act_pre);
        let (out, _, _) = conv2d(
            &head_conv_in,
            c0,
            s,
            s,
            self.p(&self.off.head_w),
            self.p(&self.off.head_b),
            1,
            3,
            1,
            1,
        );
        let out_grid = Grid::from_vec(s, s, out)?;
        let tape = Tape {
            label_index,
            emb0,
            e1,
            e1s,
            emb,
            se,
            x_in,
            blk1,
            pooled,
            blk2,
            upsampled,
            cat,
            blk3,
            head_xhat,
            head_inv_std,
            head_act_in: head_act_pre,
            head_conv_in,
        };
        Ok((out_grid, tape))
    }

    /// Parameter gradient for upstream dL/d(output). Returns a vector aligned
    /// with `params()`/`layout()`.
    pub fn backward(&self, tape: &Tape, dout: &Grid) -> Result<Vec<f64>> {
        let s = self.arch.grid_size;
        if dout.height() != s || dout.width() != s {
            return Err(SsbError::InvalidArgument(format!(
                "gradient is {}x{}, network expects {s}x{s}",
                dout.height(),
                dout.width()
            )));
        }
        let [c0, c1] = self.arch.channels;
        let e = self.arch.time_embed_dim;
        let hw = s * s;
        let h2s = s / 2;
        let mut grads = vec![0.0; self.off.total];
        let mut d_se = vec![0.0; e];

        // head conv
        let (dhci, dhw, dhb) = conv2d_back(
            &tape.head_conv_in,
            c0,
            s,
            s,
            self.p(&self.off.head_w),
            1,
            3,
            1,
            1,
            dout.data(),
            s,
            s,
            true,
        );
        add_into(&mut grads[self.off.head_w.clone()], &dhw);
        add_into(&mut grads[self.off.head_b.clone()], &dhb);
        let dact = silu_back(&tape.head_act_in, &dhci.expect("dx requested"));
        let (df3, dhg, dhbeta) = group_norm_back(
            &dact,
            &tape.head_xhat,
            &tape.head_inv_std,
            c0,
            hw,
            self.arch.groups,
            self.p(&self.off.head_gn_g),
        );
        add_into(&mut grads[self.off.head_gn_g.clone()], &dhg);
        add_into(&mut grads[self.off.head_gn_b.clone()], &dhbeta);

        // block3 and the concat split
        let dcat =
            self.block_backward(&self.off.blk3, &tape.blk3, &df3, hw, &tape.se, &mut grads, &mut d_se);
        let (df_up, df1_from_cat) = dcat.split_at(c0 * hw);

        // up conv and upsampling
        let (dups, duw, dub) = conv2d_back(
            &tape.upsampled,
            c1,
            s,
            s,
            self.p(&self.off.up_w),
            c0,
            3,
            1,
            1,
            df_up,
            s,
            s,
            true,
        );
        add_into(&mut grads[self.off.up_w.clone()], &duw);
        add_into(&mut grads[self.off.up_b.clone()], &dub);
        let df2 = match self.arch.up_kind {
            UpsampleKind::Nearest => nearest_up2_back(&dups.expect("dx requested"), c1, h2s, h2s),
            UpsampleKind::Bilinear => bilinear_up2_back(&dups.expect("dx requested"), c1, h2s, h2s),
        };

        // block2
        let df_down = self.block_backward(
            &self.off.blk2,
            &tape.blk2,
            &df2,
            h2s * h2s,
            &tape.se,
            &mut grads,
            &mut d_se,
        );

        // downsample back to f1
        let mut df1 = match self.arch.down_kind {
            DownsampleKind::AvgPool => {
                let pooled = tape.pooled.as_ref().expect("avg-pool tape");
                let (dpooled, ddw, ddb) = conv2d_back(
                    pooled,
                    c0,
                    h2s,
                    h2s,
                    self.p(&self.off.down_w),
                    c1,
                    3,
                    1,
                    1,
                    &df_down,
                    h2s,
                    h2s,
                    true,
                );
                add_into(&mut grads[self.off.down_w.clone()], &ddw);
                add_into(&mut grads[self.off.down_b.clone()], &ddb);
                avg_pool2_back(&dpooled.expect("dx requested"), c0, s, s)
            }
            DownsampleKind::StridedConv => {
                // forward consumed f1 = block1 output, stored as blk2 tape input
                // only after downsampling; the strided conv input is the
                // block1 output, which is tape.blk1's forward result. It was
                // not stored separately, so rebuild it from the concat tail.
                let f1 = &tape.cat[c0 * hw..];
                let (df1, ddw, ddb) = conv2d_back(
                    f1,
                    c0,
                    s,
                    s,
                    self.p(&self.off.down_w),
                    c1,
                    3,
                    2,
                    1,
                    &df_down,
                    h2s,
                    h2s,
                    true,
                );
                add_into(&mut grads[self.off.down_w.clone()], &ddw);
                add_into(&mut grads[self.off.down_b.clone()], &ddb);
                df1.expect("dx requested")
            }
        };
        add_into(&mut df1, df1_from_cat);

        // block1 and input conv
        let df0 = self.block_backward(
            &self.off.blk1,
            &tape.blk1,
            &df1,
            hw,
            &tape.se,
            &mut grads,
            &mut d_se,
        );
        let (_, dciw, dcib) = conv2d_back(
            &tape.x_in,
            1,
            s,
            s,
            self.p(&self.off.conv_in_w),
            c0,
            3,
            1,
            1,
            &df0,
            s,
            s,
            false,
        );
        add_into(&mut grads[self.off.conv_in_w.clone()], &dciw);
        add_into(&mut grads[self.off.conv_in_b.clone()], &dcib);

        // conditioning path: se = silu(emb)
        let demb = silu_back(&tape.emb, &d_se);
        let (de1s, dl2w, dl2b) =
            linear_back(self.p(&self.off.emb_l2_w), &tape.e1s, &demb, e, e);
        add_into(&mut grads[self.off.emb_l2_w.clone()], &dl2w);
        add_into(&mut grads[self.off.emb_l2_b.clone()], &dl2b);
        let de1 = silu_back(&tape.e1, &de1s);
        let (demb0, dl1w, dl1b) =
            linear_back(self.p(&self.off.emb_l1_w), &tape.emb0, &de1, e, e);
        add_into(&mut grads[self.off.emb_l1_w.clone()], &dl1w);
        add_into(&mut grads[self.off.emb_l1_b.clone()], &dl1b);
        // emb0 = t_emb (constant) + label row
        let row_start = self.off.label_table.start + tape.label_index * e;
        add_into(&mut grads[row_start..row_start + e], &demb0);
        Ok(grads)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Predictor for TinyUNet {
    fn predict(&self, x_t: &Grid, label: Option<ExpertId>, step: usize) -> Result<Grid> {
        Ok(self.forward_train(x_t, label, step)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch(down: DownsampleKind, up: UpsampleKind, residual: bool) -> ArchConfig {
        ArchConfig {
            grid_size: 8,
            channels: [4, 8],
            time_embed_dim: 8,
            groups: 2,
            eta: 2,
            down_kind: down,
            up_kind: up,
            residual,
        }
    }

    fn randomize(net: &mut TinyUNet, seed: u64) {
        let mut rng = stream(seed, &[b"test-randomize"]);
        let dist = Normal::new(0.0, 0.3).unwrap();
        net.params_mut().iter_mut().for_each(|v| *v = rng.sample(dist));
    }

    #[test]
    fn default_param_count_is_about_45k() {
        let n = TinyUNet::param_count(&ArchConfig::default()).unwrap();
        assert_eq!(n, 44881);
    }

    #[test]
    fn layout_is_contiguous_and_named() {
        let net = TinyUNet::init(tiny_arch(DownsampleKind::StridedConv, UpsampleKind::Nearest, true), 0).unwrap();
        let mut cursor = 0;
        for e in net.layout() {
            assert_eq!(e.offset, cursor, "{}", e.name);
            cursor += e.shape.iter().product::<usize>();
        }
        assert_eq!(cursor, net.params().len());
        let names: Vec<_> = net.layout().iter().map(|e| e.name.as_str()).collect();
        assert!(names.contains(&"conv_in.w"));
        assert!(names.contains(&"block3.skip.w"));
        assert!(names.contains(&"head.conv.b"));
    }

    #[test]
    fn zero_head_means_zero_output() {
        let arch = tiny_arch(DownsampleKind::StridedConv, UpsampleKind::Nearest, true);
        let net = TinyUNet::init(arch, 7).unwrap();
        let x = Grid::constant(8, 8, 0.4);
        let out = net.predict(&x, None, 3).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic_and_label_sensitive() {
        let arch = tiny_arch(DownsampleKind::AvgPool, UpsampleKind::Bilinear, true);
        let mut net = TinyUNet::init(arch, 7).unwrap();
        randomize(&mut net, 1);
        let x = Grid::constant(8, 8, 0.4);
        let a = net.predict(&x, Some(ExpertId::new(1).unwrap()), 3).unwrap();
        let b = net.predict(&x, Some(ExpertId::new(1).unwrap()), 3).unwrap();
        assert_eq!(a, b);
        let c = net.predict(&x, Some(ExpertId::new(2).unwrap()), 3).unwrap();
        assert_ne!(a, c);
        let d = net.predict(&x, None, 3).unwrap();
        assert_ne!(a, d);
        let e = net.predict(&x, Some(ExpertId::new(1).unwrap()), 4).unwrap();
        assert_ne!(a, e);
    }

    #[test]
    fn rejects_bad_inputs() {
        let arch = tiny_arch(DownsampleKind::StridedConv, UpsampleKind::Nearest, true);
        let net = TinyUNet::init(arch, 0).unwrap();
        assert!(net.predict(&Grid::zeros(4, 4), None, 3).is_err());
        assert!(net.predict(&Grid::zeros(8, 8), None, 0).is_err());
        assert!(net.predict(&Grid::zeros(8, 8), Some(ExpertId::new(3).unwrap()), 1).is_err());
        let bad = ArchConfig { groups: 3, ..ArchConfig::default() };
        assert!(TinyUNet::init(bad, 0).is_err());
    }

    /// Full finite-difference sweep of d(0.5*sum(out^2))/d(theta) for one
    /// variant; the quadratic objective makes dL/dout = out.
    fn grad_check(arch: ArchConfig, seed: u64, full: bool) {
        let mut net = TinyUNet::init(arch, seed).unwrap();
        randomize(&mut net, seed + 100);
        let mut rng = stream(seed, &[b"grad-input"]);
        let x = Grid::randn(8, 8, &mut rng).map(|v| 0.4 + 0.1 * v);
        let label = Some(ExpertId::new(1).unwrap());
        let loss = |net: &TinyUNet| -> f64 {
            let out = net.predict(&x, label, 3).unwrap();
            0.5 * out.data().iter().map(|v| v * v).sum::<f64>()
        };
        let (out, tape) = net.forward_train(&x, label, 3).unwrap();
        let grads = net.backward(&tape, &out).unwrap();
        let h = 1e-5;
        let coords: Vec<usize> = if full {
            (0..net.params().len()).collect()
        } else {
            // first and last coordinate of every tensor
            net.layout()
                .iter()
                .flat_map(|e| {
                    let len: usize = e.shape.iter().product();
                    [e.offset, e.offset + len - 1]
                })
                .collect()
        };
        let mut worst = 0.0f64;
        for i in coords {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let lp = loss(&net);
            net.params_mut()[i] = orig - h;
            let lm = loss(&net);
            net.params_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = grads[i];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-8);
            worst = worst.max(rel);
            assert!(rel < 1e-5, "param {i}: fd {fd} analytic {an} rel {rel}");
        }
        assert!(worst < 1e-5, "worst rel err {worst}");
    }

    #[test]
    fn gradients_match_finite_differences_strided_nearest() {
        grad_check(tiny_arch(DownsampleKind::StridedConv, UpsampleKind::Nearest, true), 11, true);
    }

    #[test]
    fn gradients_match_finite_differences_avgpool_bilinear() {
        grad_check(tiny_arch(DownsampleKind::AvgPool, UpsampleKind::Bilinear, true), 13, false);
    }

    #[test]
    fn gradients_match_finite_differences_no_residual() {
        grad_check(tiny_arch(DownsampleKind::StridedConv, UpsampleKind::Bilinear, false), 17, false);
    }

    #[test]
    fn unused_label_rows_get_no_gradient() {
        let arch = tiny_arch(DownsampleKind::StridedConv, UpsampleKind::Nearest, true);
        let mut net = TinyUNet::init(arch, 3).unwrap();
        randomize(&mut net, 4);
        let x = Grid::constant(8, 8, 0.3);
        let (out, tape) = net.forward_train(&x, Some(ExpertId::new(2).unwrap()), 2).unwrap();
        let grads = net.backward(&tape, &out).unwrap();
        let e = net.arch().time_embed_dim;
        let table = net.off.label_table.clone();
        let row = |k: usize| &grads[table.start + k * e..table.start + (k + 1) * e];
        assert!(row(0).iter().all(|&v| v == 0.0));
        assert!(row(1).iter().all(|&v| v == 0.0));
        assert!(row(2).iter().any(|&v| v != 0.0));
    }
}
