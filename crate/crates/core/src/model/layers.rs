//! Forward kernels and their hand-written backward passes.
//!
//! Backward functions add into a flat gradient vector laid out like the
//! parameters, and into caller-owned input gradients.

use super::params::{ConvLayout, MlpLayout, ModelParams, ENSEMBLE_CHANNELS};
use super::tensor::{nearest_index, ChannelStack, HeatMap};
use crate::error::{Error, Result};
use crate::geometry::RleMask;
use crate::scalar::Scalar;

pub const LOSS_EPSILON: f64 = 1e-7;

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn leaky<T: Scalar>(x: T, slope: T) -> T {
    if x > T::zero() {
        x
    } else {
        slope * x
    }
}

fn leaky_grad<T: Scalar>(x: T, slope: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        slope
    }
}

// ---------------------------------------------------------------- MLP

/// Intermediates of `out = W2 · drop(leaky(W1 x + b1)) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpTape<T> {
    pub pre: Vec<T>,
    pub act: Vec<T>,
    pub out: Vec<T>,
}

pub fn mlp_forward<T: Scalar>(
    p: &[T],
    l: &MlpLayout,
    x: &[T],
    slope: T,
    dropout: Option<&[T]>,
) -> Result<MlpTape<T>> {
    if x.len() != l.d_in {
        return Err(Error::Model(format!(
            "input dimension {} does not match network input {}",
            x.len(),
            l.d_in
        )));
    }
    let w1 = &p[l.w1.clone()];
    let b1 = &p[l.b1.clone()];
    let mut pre = b1.to_vec();
    for (j, pj) in pre.iter_mut().enumerate() {
        let row = &w1[j * l.d_in..(j + 1) * l.d_in];
        for (w, xi) in row.iter().zip(x) {
            *pj += *w * *xi;
        }
    }
    let mut act: Vec<T> = pre.iter().map(|&v| leaky(v, slope)).collect();
    if let Some(mask) = dropout {
        for (a, m) in act.iter_mut().zip(mask) {
            *a *= *m;
        }
    }
    let w2 = &p[l.w2.clone()];
    let mut out = p[l.b2.clone()].to_vec();
    for (k, ok) in out.iter_mut().enumerate() {
        let row = &w2[k * l.hidden..(k + 1) * l.hidden];
        for (w, a) in row.iter().zip(&act) {
            *ok += *w * *a;
        }
    }
    Ok(MlpTape { pre, act, out })
}

/// Backward of [`mlp_forward`] given `d_out`; adds the input gradient to `dx`.
#[allow(clippy::too_many_arguments)]
pub fn mlp_backward<T: Scalar>(
    p: &[T],
    l: &MlpLayout,
    x: &[T],
    tape: &MlpTape<T>,
    d_out: &[T],
    slope: T,
    dropout: Option<&[T]>,
    grad: &mut [T],
    dx: &mut [T],
) {
    let w2 = &p[l.w2.clone()];
    let mut d_act = vec![T::zero(); l.hidden];
    for (k, &g) in d_out.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        grad[l.b2.start + k] += g;
        let gw = &mut grad[l.w2.start + k * l.hidden..][..l.hidden];
        for ((gwi, a), (da, w)) in gw
            .iter_mut()
            .zip(&tape.act)
            .zip(d_act.iter_mut().zip(&w2[k * l.hidden..(k + 1) * l.hidden]))
        {
            *gwi += g * *a;
            *da += g * *w;
        }
    }
    let w1 = &p[l.w1.clone()];
    for j in 0..l.hidden {
        let mut g = d_act[j] * leaky_grad(tape.pre[j], slope);
        if let Some(mask) = dropout {
            g *= mask[j];
        }
        if g == T::zero() {
            continue;
        }
        grad[l.b1.start + j] += g;
        let gw = &mut grad[l.w1.start + j * l.d_in..][..l.d_in];
        for ((gwi, xi), (dxi, w)) in gw
            .iter_mut()
            .zip(x)
            .zip(dx.iter_mut().zip(&w1[j * l.d_in..(j + 1) * l.d_in]))
        {
            *gwi += g * *xi;
            *dxi += g * *w;
        }
    }
}

/// `A = σ(f(e))`.
pub fn attention_weights<T: Scalar>(p: &[T], l: &MlpLayout, e: &[T], slope: T) -> Result<Vec<T>> {
    Ok(mlp_forward(p, l, e, slope, None)?.out.into_iter().map(sigmoid).collect())
}

// ------------------------------------------------------- channels

/// Per-channel `(x − μ) / √(σ² + ε)`.
pub fn standardize<T: Scalar>(stack: &ChannelStack<T>, epsilon: T) -> ChannelStack<T> {
    let mut out = stack.clone();
    let n = T::of(stack.pixels() as f64);
    for c in 0..stack.n_channels() {
        let ch = out.channel_mut(c);
        let mean = ch.iter().copied().sum::<T>() / n;
        let var = ch.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + epsilon).sqrt();
        for v in ch.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}

/// Standardize each channel, then apply per-channel `gain` and `bias`.
pub fn channel_norm<T: Scalar>(stack: &ChannelStack<T>, gain: &[T], bias: &[T], epsilon: T) -> Result<ChannelStack<T>> {
    if gain.len() != stack.n_channels() || bias.len() != stack.n_channels() {
        return Err(Error::Model(format!(
            "norm parameters sized {}/{} for {} channels",
            gain.len(),
            bias.len(),
            stack.n_channels()
        )));
    }
    let mut out = standardize(stack, epsilon);
    for c in 0..out.n_channels() {
        for v in out.channel_mut(c) {
            *v = gain[c] * *v + bias[c];
        }
    }
    Ok(out)
}

/// `S = Σ_c A_c · C_c`.
pub fn attend<T: Scalar>(stack: &ChannelStack<T>, a: &[T]) -> Result<HeatMap<T>> {
    if a.len() != stack.n_channels() {
        return Err(Error::Model(format!(
            "{} attention weights for {} channels",
            a.len(),
            stack.n_channels()
        )));
    }
    let mut s = vec![T::zero(); stack.pixels()];
    for (c, &ac) in a.iter().enumerate() {
        if ac == T::zero() {
            continue;
        }
        for (sv, &v) in s.iter_mut().zip(stack.channel(c)) {
            *sv += ac * v;
        }
    }
    HeatMap::new(stack.width(), stack.height(), s)
}

/// `P = σ(a·S + b)`.
pub fn module_out<T: Scalar>(s: &HeatMap<T>, a: T, b: T) -> HeatMap<T> {
    let v = s.values().iter().map(|&x| sigmoid(a * x + b)).collect();
    HeatMap::new(s.width(), s.height(), v).expect("same shape")
}

/// `S = Σ_c A_c (g_c z_c + β_c)` over standardized channels `z`.
pub(crate) fn attend_normalized<T: Scalar>(z: &ChannelStack<T>, a: &[T], gain: &[T], bias: &[T]) -> Vec<T> {
    let mut s = vec![T::zero(); z.pixels()];
    let mut offset = T::zero();
    for c in 0..z.n_channels() {
        offset += a[c] * bias[c];
        let k = a[c] * gain[c];
        if k == T::zero() {
            continue;
        }
        for (sv, &v) in s.iter_mut().zip(z.channel(c)) {
            *sv += k * v;
        }
    }
    for sv in &mut s {
        *sv += offset;
    }
    s
}

/// Backward of [`attend_normalized`]: returns `dA`, adds gain/bias gradients.
pub(crate) fn attend_normalized_backward<T: Scalar>(
    z: &ChannelStack<T>,
    a: &[T],
    gain: &[T],
    bias: &[T],
    ds: &[T],
    d_gain: &mut [T],
    d_bias: &mut [T],
) -> Vec<T> {
    let sum_ds: T = ds.iter().copied().sum();
    (0..z.n_channels())
        .map(|c| {
            let t: T = ds.iter().zip(z.channel(c)).map(|(&g, &v)| g * v).sum();
            d_gain[c] += a[c] * t;
            d_bias[c] += a[c] * sum_ds;
            gain[c] * t + bias[c] * sum_ds
        })
        .collect()
}

// ------------------------------------------------------ resampling

/// Separable linear map between two grids: box averaging when shrinking,
/// nearest cell otherwise.
#[derive(Debug, Clone)]
pub(crate) struct Resample {
    src_w: usize,
    dst_w: usize,
    dst_h: usize,
    xs: Vec<Vec<(usize, f64)>>,
    ys: Vec<Vec<(usize, f64)>>,
}

fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    if dst <= src {
        (0..dst)
            .map(|i| {
                let lo = i * src / dst;
                let hi = ((i + 1) * src / dst).max(lo + 1);
                let w = 1.0 / (hi - lo) as f64;
                (lo..hi).map(|s| (s, w)).collect()
            })
            .collect()
    } else {
        nearest_index(dst as u32, src as u32)
            .into_iter()
            .map(|s| vec![(s as usize, 1.0)])
            .collect()
    }
}

impl Resample {
    pub fn new(src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Self {
        Self {
            src_w,
            dst_w,
            dst_h,
            xs: axis_weights(src_w, dst_w),
            ys: axis_weights(src_h, dst_h),
        }
    }

    pub fn apply<T: Scalar>(&self, src: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dst_w * self.dst_h];
        for (gy, ywts) in self.ys.iter().enumerate() {
            for (gx, xwts) in self.xs.iter().enumerate() {
                let mut acc = T::zero();
                for &(sy, wy) in ywts {
                    for &(sx, wx) in xwts {
                        acc += T::of(wy * wx) * src[sy * self.src_w + sx];
                    }
                }
                out[gy * self.dst_w + gx] = acc;
            }
        }
        out
    }

    /// Adds `Mᵀ d_dst` into `d_src`.
    pub fn apply_transpose<T: Scalar>(&self, d_dst: &[T], d_src: &mut [T]) {
        for (gy, ywts) in self.ys.iter().enumerate() {
            for (gx, xwts) in self.xs.iter().enumerate() {
                let g = d_dst[gy * self.dst_w + gx];
                if g == T::zero() {
                    continue;
                }
                for &(sy, wy) in ywts {
                    for &(sx, wx) in xwts {
                        d_src[sy * self.src_w + sx] += T::of(wy * wx) * g;
                    }
                }
            }
        }
    }
}

// -------------------------------------------------------- relation

/// Intermediates of the relation network on a `g × g` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationTape<T> {
    /// `u[o, tap] = Σ_k W1[o, 1+k, tap] e_k`.
    pub u: Vec<T>,
    pub pre1: Vec<T>,
    pub act1: Vec<T>,
    pub conv2: Vec<T>,
    /// After the affine, before the sigmoid.
    pub logits: Vec<T>,
    pub out: Vec<T>,
}

struct Taps {
    g: usize,
    k: usize,
    dilation: usize,
}

impl Taps {
    /// Offset of tap index `t` along one axis.
    fn offset(&self, t: usize) -> isize {
        (t as isize - (self.k / 2) as isize) * self.dilation as isize
    }

    /// Output positions `i` for which `i + off` is inside the grid.
    fn valid(&self, off: isize) -> std::ops::Range<usize> {
        let lo = (-off).max(0) as usize;
        let hi = (self.g as isize - off.max(0)).max(0) as usize;
        lo.min(hi)..hi
    }
}

/// `out[y][x] += Σ_tap w[tap] · src[y + dy][x + dx]` (zero outside).
fn conv_add<T: Scalar>(taps: &Taps, w: &[T], src: &[T], out: &mut [T]) {
    let (g, k) = (taps.g, taps.k);
    for ky in 0..k {
        let dy = taps.offset(ky);
        for kx in 0..k {
            let wv = w[ky * k + kx];
            if wv == T::zero() {
                continue;
            }
            let dx = taps.offset(kx);
            let xr = taps.valid(dx);
            for y in taps.valid(dy) {
                let sy = (y as isize + dy) as usize;
                let orow = &mut out[y * g..(y + 1) * g];
                let srow = &src[sy * g..(sy + 1) * g];
                for x in xr.clone() {
                    orow[x] += wv * srow[(x as isize + dx) as usize];
                }
            }
        }
    }
}

/// Backward of [`conv_add`]: adds kernel gradients and the source gradient.
fn conv_add_backward<T: Scalar>(taps: &Taps, w: &[T], src: &[T], d_out: &[T], d_w: &mut [T], d_src: &mut [T]) {
    let (g, k) = (taps.g, taps.k);
    for ky in 0..k {
        let dy = taps.offset(ky);
        for kx in 0..k {
            let wv = w[ky * k + kx];
            let dx = taps.offset(kx);
            let xr = taps.valid(dx);
            let mut acc = T::zero();
            for y in taps.valid(dy) {
                let sy = (y as isize + dy) as usize;
                let drow = &d_out[y * g..(y + 1) * g];
                for x in xr.clone() {
                    let sx = (x as isize + dx) as usize;
                    acc += drow[x] * src[sy * g + sx];
                    d_src[sy * g + sx] += wv * drow[x];
                }
            }
            d_w[ky * k + kx] += acc;
        }
    }
}

pub(crate) struct RelationNet<'a, T> {
    pub p: &'a [T],
    pub conv: &'a ConvLayout,
    pub affine: &'a std::ops::Range<usize>,
    pub grid: usize,
    pub dilation: usize,
    pub slope: T,
}

impl<T: Scalar> RelationNet<'_, T> {
    fn taps(&self) -> Taps {
        Taps {
            g: self.grid,
            k: self.conv.k,
            dilation: self.dilation,
        }
    }

    pub fn forward(&self, support: &[T], e: &[T]) -> RelationTape<T> {
        let c = self.conv;
        let taps = self.taps();
        let (g, kk, d) = (self.grid, c.k * c.k, c.c_in - 1);
        let gg = g * g;
        let w1 = &self.p[c.w1.clone()];
        let mut u = vec![T::zero(); c.hidden * kk];
        for o in 0..c.hidden {
            for i in 0..d {
                let ei = e[i];
                if ei == T::zero() {
                    continue;
                }
                let wk = &w1[(o * c.c_in + 1 + i) * kk..][..kk];
                for (uv, &wv) in u[o * kk..(o + 1) * kk].iter_mut().zip(wk) {
                    *uv += wv * ei;
                }
            }
        }
        let mut pre1 = vec![T::zero(); c.hidden * gg];
        for o in 0..c.hidden {
            let out = &mut pre1[o * gg..(o + 1) * gg];
            out.fill(self.p[c.b1.start + o]);
            conv_add(&taps, &w1[o * c.c_in * kk..][..kk], support, out);
            // the embedding channels are constant, so each tap adds u over the
            // positions where it lands inside the grid
            for ky in 0..c.k {
                let yr = taps.valid(taps.offset(ky));
                for kx in 0..c.k {
                    let uv = u[o * kk + ky * c.k + kx];
                    if uv == T::zero() {
                        continue;
                    }
                    let xr = taps.valid(taps.offset(kx));
                    for y in yr.clone() {
                        for v in &mut out[y * g + xr.start..y * g + xr.end] {
                            *v += uv;
                        }
                    }
                }
            }
        }
        let act1: Vec<T> = pre1.iter().map(|&v| leaky(v, self.slope)).collect();
        let w2 = &self.p[c.w2.clone()];
        let mut conv2 = vec![self.p[c.b2.start]; gg];
        for o in 0..c.hidden {
            conv_add(&taps, &w2[o * kk..(o + 1) * kk], &act1[o * gg..(o + 1) * gg], &mut conv2);
        }
        let (a, b) = (self.p[self.affine.start], self.p[self.affine.start + 1]);
        let logits: Vec<T> = conv2.iter().map(|&v| a * v + b).collect();
        let out = logits.iter().map(|&v| sigmoid(v)).collect();
        RelationTape {
            u,
            pre1,
            act1,
            conv2,
            logits,
            out,
        }
    }

    /// Backward from `d_out` (gradient w.r.t. the sigmoid output grid).
    pub fn backward(
        &self,
        support: &[T],
        e: &[T],
        tape: &RelationTape<T>,
        d_out: &[T],
        grad: &mut [T],
        d_support: &mut [T],
        d_e: &mut [T],
    ) {
        let c = self.conv;
        let taps = self.taps();
        let (g, kk, d) = (self.grid, c.k * c.k, c.c_in - 1);
        let gg = g * g;
        let a = self.p[self.affine.start];
        let mut d_conv2 = vec![T::zero(); gg];
        let (mut da, mut db) = (T::zero(), T::zero());
        for i in 0..gg {
            let s = tape.out[i];
            let dl = d_out[i] * s * (T::one() - s);
            db += dl;
            da += dl * tape.conv2[i];
            d_conv2[i] = dl * a;
        }
        grad[self.affine.start] += da;
        grad[self.affine.start + 1] += db;

        grad[c.b2.start] += d_conv2.iter().copied().sum::<T>();
        let w2 = &self.p[c.w2.clone()];
        let mut d_pre1 = vec![T::zero(); c.hidden * gg];
        for o in 0..c.hidden {
            let (lo, hi) = (o * gg, (o + 1) * gg);
            let mut d_act = vec![T::zero(); gg];
            conv_add_backward(
                &taps,
                &w2[o * kk..(o + 1) * kk],
                &tape.act1[lo..hi],
                &d_conv2,
                &mut grad[c.w2.start + o * kk..][..kk],
                &mut d_act,
            );
            for ((dp, &da), &pre) in d_pre1[lo..hi].iter_mut().zip(&d_act).zip(&tape.pre1[lo..hi]) {
                *dp = da * leaky_grad(pre, self.slope);
            }
        }

        let w1 = &self.p[c.w1.clone()];
        for o in 0..c.hidden {
            let dp = &d_pre1[o * gg..(o + 1) * gg];
            grad[c.b1.start + o] += dp.iter().copied().sum::<T>();
            conv_add_backward(
                &taps,
                &w1[o * c.c_in * kk..][..kk],
                support,
                dp,
                &mut grad[c.w1.start + o * c.c_in * kk..][..kk],
                d_support,
            );
            for ky in 0..c.k {
                let yr = taps.valid(taps.offset(ky));
                for kx in 0..c.k {
                    let xr = taps.valid(taps.offset(kx));
                    let mut du = T::zero();
                    for y in yr.clone() {
                        for &v in &dp[y * g + xr.start..y * g + xr.end] {
                            du += v;
                        }
                    }
                    let tap = ky * c.k + kx;
                    for i in 0..d {
                        let wi = (o * c.c_in + 1 + i) * kk + tap;
                        grad[c.w1.start + wi] += du * e[i];
                        d_e[i] += du * w1[wi];
                    }
                }
            }
        }
    }
}

pub(crate) fn relation_net<T: Scalar>(params: &ModelParams<T>) -> RelationNet<'_, T> {
    RelationNet {
        p: &params.values,
        conv: &params.layout.relation,
        affine: &params.layout.rel_affine,
        grid: params.config.relation_grid,
        dilation: params.config.dilation,
        slope: T::of(params.config.leaky_slope),
    }
}

fn check_grid<T: Scalar>(params: &ModelParams<T>, support: &HeatMap<T>, e_rel: &[T]) -> Result<()> {
    let g = params.config.relation_grid;
    if support.width() as usize != g || support.height() as usize != g {
        return Err(Error::Model(format!(
            "support map is {}x{}, relation grid is {g}x{g}",
            support.width(),
            support.height()
        )));
    }
    if e_rel.len() != params.config.embed_dim {
        return Err(Error::Model(format!(
            "relationship embedding has dimension {}, expected {}",
            e_rel.len(),
            params.config.embed_dim
        )));
    }
    Ok(())
}

/// Relation output on the grid before the sigmoid.
pub fn relate_logits<T: Scalar>(params: &ModelParams<T>, support: &HeatMap<T>, e_rel: &[T]) -> Result<HeatMap<T>> {
    check_grid(params, support, e_rel)?;
    let tape = relation_net(params).forward(support.values(), e_rel);
    HeatMap::new(support.width(), support.height(), tape.logits)
}

/// Relation heat map, upsampled (nearest) to `width × height`.
pub fn relate<T: Scalar>(
    params: &ModelParams<T>,
    support: &HeatMap<T>,
    e_rel: &[T],
    width: u32,
    height: u32,
) -> Result<HeatMap<T>> {
    check_grid(params, support, e_rel)?;
    let tape = relation_net(params).forward(support.values(), e_rel);
    Ok(HeatMap::new(support.width(), support.height(), tape.out)?.upsample_nearest(width, height))
}

// --------------------------------------------------------- ensemble

/// Modules each ensemble channel depends on: `(category, attribute, relation)`.
pub const CHANNEL_USES: [(bool, bool, bool); ENSEMBLE_CHANNELS] = [
    (true, false, false),
    (false, true, false),
    (false, false, true),
    (true, false, false),
    (true, true, false),
    (true, false, true),
    (false, true, false),
    (false, true, true),
    (false, false, true),
    (false, false, false),
];

/// Channels that survive when the attribute and/or relation module is absent.
pub fn present_channels(has_attribute: bool, has_relationship: bool) -> [bool; ENSEMBLE_CHANNELS] {
    CHANNEL_USES.map(|(_, a, r)| (!a || has_attribute) && (!r || has_relationship))
}

/// `[P_c, P_a, P_r, P_c², P_c·P_a, P_c·P_r, P_a², P_a·P_r, P_r², 1]` at one pixel.
pub fn features<T: Scalar>(pc: T, pa: T, pr: T) -> [T; ENSEMBLE_CHANNELS] {
    [pc, pa, pr, pc * pc, pc * pa, pc * pr, pa * pa, pa * pr, pr * pr, T::one()]
}

/// Zeroes absent channels and rescales the rest to sum to one.
pub fn renormalize<T: Scalar>(w: &[T; ENSEMBLE_CHANNELS], present: &[bool; ENSEMBLE_CHANNELS]) -> Result<[T; ENSEMBLE_CHANNELS]> {
    let mut out = [T::zero(); ENSEMBLE_CHANNELS];
    let mut total = T::zero();
    for t in 0..ENSEMBLE_CHANNELS {
        if present[t] {
            out[t] = w[t];
            total += w[t];
        }
    }
    if !(total > T::zero()) {
        return Err(Error::Model("ensemble weights sum to zero after masking".into()));
    }
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// Softmax over the present channels' logits.
pub fn ensemble_weights<T: Scalar>(logits: &[T], present: &[bool; ENSEMBLE_CHANNELS]) -> Result<[T; ENSEMBLE_CHANNELS]> {
    if logits.len() != ENSEMBLE_CHANNELS {
        return Err(Error::Model(format!("{} ensemble logits, expected 10", logits.len())));
    }
    let m = (0..ENSEMBLE_CHANNELS)
        .filter(|&t| present[t])
        .map(|t| logits[t])
        .fold(T::neg_infinity(), T::max);
    let mut raw = [T::zero(); ENSEMBLE_CHANNELS];
    for t in 0..ENSEMBLE_CHANNELS {
        if present[t] {
            raw[t] = (logits[t] - m).exp();
        }
    }
    renormalize(&raw, present)
}

/// `O = Σ_t F_t w_t`; absent maps are treated as zero.
pub fn combine_with_weights<T: Scalar>(
    pc: &HeatMap<T>,
    pa: Option<&HeatMap<T>>,
    pr: Option<&HeatMap<T>>,
    w: &[T; ENSEMBLE_CHANNELS],
) -> Result<HeatMap<T>> {
    for m in [pa, pr].into_iter().flatten() {
        if (m.width(), m.height()) != (pc.width(), pc.height()) {
            return Err(Error::SizeMismatch {
                left_w: pc.width(),
                left_h: pc.height(),
                right_w: m.width(),
                right_h: m.height(),
            });
        }
    }
    let at = |m: Option<&HeatMap<T>>, i: usize| m.map_or(T::zero(), |m| m.values()[i]);
    let out = (0..pc.values().len())
        .map(|i| {
            let f = features(pc.values()[i], at(pa, i), at(pr, i));
            f.iter().zip(w).map(|(&f, &w)| f * w).sum()
        })
        .collect();
    HeatMap::new(pc.width(), pc.height(), out)
}

/// Masks and renormalizes `raw_weights` by module presence, then combines.
pub fn combine<T: Scalar>(
    pc: &HeatMap<T>,
    pa: Option<&HeatMap<T>>,
    pr: Option<&HeatMap<T>>,
    raw_weights: &[T; ENSEMBLE_CHANNELS],
) -> Result<HeatMap<T>> {
    let w = renormalize(raw_weights, &present_channels(pa.is_some(), pr.is_some()))?;
    combine_with_weights(pc, pa, pr, &w)
}

// -------------------------------------------------------------- loss

/// `max(1, negatives / positives)` capped at `cap`; 1 without positives.
pub fn positive_weight<T: Scalar>(gt: &[T], cap: f64) -> T {
    let pos = gt.iter().filter(|&&v| v > T::of(0.5)).count();
    if pos == 0 {
        return T::one();
    }
    let neg = gt.len() - pos;
    T::of((neg as f64 / pos as f64).clamp(1.0, cap))
}

/// Mean weighted BCE over pixels; optionally writes `∂loss/∂pred`.
pub fn bce<T: Scalar>(pred: &[T], gt: &[T], lambda: T, d_pred: Option<&mut [T]>) -> T {
    let eps = T::of(LOSS_EPSILON);
    let hi = T::one() - eps;
    let n = T::of(pred.len() as f64);
    let mut total = T::zero();
    let positive = |y: T| y > T::of(0.5);
    for (&p, &y) in pred.iter().zip(gt) {
        let q = p.max(eps).min(hi);
        total += if positive(y) { -lambda * q.ln() } else { -(T::one() - q).ln() };
    }
    if let Some(d) = d_pred {
        for ((dv, &p), &y) in d.iter_mut().zip(pred).zip(gt) {
            *dv = if p < eps || p > hi {
                T::zero()
            } else if positive(y) {
                -lambda / (p * n)
            } else {
                T::one() / ((T::one() - p) * n)
            };
        }
    }
    total / n
}

/// Weighted BCE of a heat map against a mask of the same size.
pub fn loss<T: Scalar>(pred: &HeatMap<T>, gt: &RleMask, lambda: T) -> Result<T> {
    let size = gt.size();
    if (size.width, size.height) != (pred.width(), pred.height()) {
        return Err(Error::SizeMismatch {
            left_w: pred.width(),
            left_h: pred.height(),
            right_w: size.width,
            right_h: size.height,
        });
    }
    let y = HeatMap::<T>::from_mask(gt);
    Ok(bce(pred.values(), y.values(), lambda, None))
}
