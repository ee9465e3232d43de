//! Shared generative model: an untrained deep-decoder image generator.
//!
//! Each layer applies pixel-wise channel mixing (1x1, no bias), ReLU,
//! bilinear upsampling by per-layer factors (the final layer resizes exactly
//! to the target grid), and channel normalization (per channel: subtract
//! mean, divide by std + 1e-6, then learned scale and shift). The head mixes
//! down to one channel, applies a sigmoid, and maps affinely into the
//! scenario's physical property range, so outputs are bounded by
//! construction.
//!
//! The backward pass is hand-derived reverse mode through every stage,
//! including the mean/std dependencies of the channel norm and the adjoint
//! of the bilinear interpolation; it is verified against central finite
//! differences in the tests and by `check-grad`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::gmm::{gmm_sample, GmmParams};
use crate::grid::Grid2D;
use crate::grid::Tensor3;
use crate::real::Real;
use crate::rng::{sample_standard_normal, StreamRng};

pub const CHANNEL_NORM_EPS: f64 = 1e-6;

/// Latent geometry and the per-layer upsampling plan.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSpec {
    /// Channel counts `[c0, c1, .., cL]`; layer `l` mixes `c_l -> c_{l+1}`.
    channels: Vec<usize>,
    h0: usize,
    w0: usize,
    /// Per-layer (height, width) upsample factors.
    upsample: Vec<(f64, f64)>,
    target_nz: usize,
    target_nx: usize,
    /// Output (h, w) of each layer; the last entry is the target grid.
    layer_dims: Vec<(usize, usize)>,
}

impl LatentSpec {
    pub fn new(
        latent_channels: usize,
        h0: usize,
        w0: usize,
        layer_channels: Vec<usize>,
        upsample: Vec<(f64, f64)>,
        target_nz: usize,
        target_nx: usize,
    ) -> Result<Self> {
        let layers = layer_channels.len();
        if layers == 0 {
            return Err(CoreError::InvalidArg {
                name: "layer_channels",
                why: "need at least one layer",
            });
        }
        if upsample.len() != layers {
            return Err(CoreError::ShapeMismatch {
                expected: (layers, 1),
                got: (upsample.len(), 1),
            });
        }
        if latent_channels == 0
            || h0 == 0
            || w0 == 0
            || target_nz == 0
            || target_nx == 0
            || layer_channels.iter().any(|&c| c == 0)
        {
            return Err(CoreError::EmptyShape);
        }
        for &(fh, fw) in &upsample {
            if !(fh > 0.0) || !(fw > 0.0) {
                return Err(CoreError::InvalidArg {
                    name: "upsample",
                    why: "factors must be positive",
                });
            }
        }
        // the factor product must land on the target (the last layer resizes
        // exactly, so only rounding-level slack is allowed)
        let ph: f64 = upsample.iter().map(|f| f.0).product();
        let pw: f64 = upsample.iter().map(|f| f.1).product();
        if (h0 as f64 * ph - target_nz as f64).abs() > 0.5 + 1e-9
            || (w0 as f64 * pw - target_nx as f64).abs() > 0.5 + 1e-9
        {
            return Err(CoreError::InvalidArg {
                name: "upsample",
                why: "factor product does not map the latent dims to the target dims",
            });
        }
        let mut dims = Vec::with_capacity(layers);
        let (mut h, mut w) = (h0 as f64, w0 as f64);
        for (l, &(fh, fw)) in upsample.iter().enumerate() {
            if l + 1 == layers {
                dims.push((target_nz, target_nx));
            } else {
                h = libm::round(h * fh).max(1.0);
                w = libm::round(w * fw).max(1.0);
                dims.push((h as usize, w as usize));
            }
        }
        let mut channels = Vec::with_capacity(layers + 1);
        channels.push(latent_channels);
        channels.extend_from_slice(&layer_channels);
        Ok(Self {
            channels,
            h0,
            w0,
            upsample,
            target_nz,
            target_nx,
            layer_dims: dims,
        })
    }

    /// Default plan: `num_layers` doubling stages with the latent at
    /// `1/2^num_layers` of the target per axis; the final stage resizes
    /// exactly onto the (generally non-power-of-two) target grid.
    pub fn default_for(
        target_nz: usize,
        target_nx: usize,
        num_layers: usize,
        channels: usize,
    ) -> Result<Self> {
        if num_layers == 0 {
            return Err(CoreError::InvalidArg {
                name: "num_layers",
                why: "need at least one layer",
            });
        }
        let denom = 1usize << num_layers;
        let h0 = target_nz.div_ceil(denom).max(1);
        let w0 = target_nx.div_ceil(denom).max(1);
        let head = 1usize << (num_layers - 1);
        let mut ups = vec![(2.0, 2.0); num_layers - 1];
        ups.push((
            target_nz as f64 / (h0 * head) as f64,
            target_nx as f64 / (w0 * head) as f64,
        ));
        Self::new(
            channels,
            h0,
            w0,
            vec![channels; num_layers],
            ups,
            target_nz,
            target_nx,
        )
    }

    #[inline]
    pub fn num_layers(&self) -> usize {
        self.layer_dims.len()
    }

    #[inline]
    pub fn latent_shape(&self) -> (usize, usize, usize) {
        (self.channels[0], self.h0, self.w0)
    }

    #[inline]
    pub fn latent_len(&self) -> usize {
        self.channels[0] * self.h0 * self.w0
    }

    #[inline]
    pub fn target_dims(&self) -> (usize, usize) {
        (self.target_nz, self.target_nx)
    }

    #[inline]
    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    #[inline]
    pub fn layer_dims(&self) -> &[(usize, usize)] {
        &self.layer_dims
    }

    fn layer_input_dims(&self, l: usize) -> (usize, usize) {
        if l == 0 {
            (self.h0, self.w0)
        } else {
            self.layer_dims[l - 1]
        }
    }
}

/// One axis of a bilinear resize: source index pair and weights per output
/// index. Half-pixel-center convention; an unchanged axis is the identity.
#[derive(Debug, Clone)]
struct Lerp<T> {
    i0: usize,
    i1: usize,
    w0: T,
    w1: T,
}

fn lerp_table<T: Real>(n_in: usize, n_out: usize) -> Vec<Lerp<T>> {
    (0..n_out)
        .map(|io| {
            let src = (io as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
            let src = src.max(0.0).min((n_in - 1) as f64);
            let i0 = libm::floor(src) as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            let w1 = src - i0 as f64;
            Lerp {
                i0,
                i1,
                w0: T::from_f64(1.0 - w1),
                w1: T::from_f64(w1),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
struct ResizePlan<T> {
    w_in: usize,
    h_out: usize,
    w_out: usize,
    rows: Vec<Lerp<T>>,
    cols: Vec<Lerp<T>>,
}

impl<T: Real> ResizePlan<T> {
    fn new(h_in: usize, w_in: usize, h_out: usize, w_out: usize) -> Self {
        Self {
            w_in,
            h_out,
            w_out,
            rows: lerp_table(h_in, h_out),
            cols: lerp_table(w_in, w_out),
        }
    }

    fn forward(&self, src: &[T], dst: &mut [T]) {
        for (io, r) in self.rows.iter().enumerate() {
            let top = &src[r.i0 * self.w_in..r.i0 * self.w_in + self.w_in];
            let bot = &src[r.i1 * self.w_in..r.i1 * self.w_in + self.w_in];
            let out = &mut dst[io * self.w_out..io * self.w_out + self.w_out];
            for (jo, c) in self.cols.iter().enumerate() {
                let v_top = c.w0 * top[c.i0] + c.w1 * top[c.i1];
                let v_bot = c.w0 * bot[c.i0] + c.w1 * bot[c.i1];
                out[jo] = r.w0 * v_top + r.w1 * v_bot;
            }
        }
    }

    /// Exact transpose of [`forward`](Self::forward): scatter-add with the
    /// same weights.
    fn adjoint(&self, g_out: &[T], g_src: &mut [T]) {
        for v in g_src.iter_mut() {
            *v = T::zero();
        }
        for (io, r) in self.rows.iter().enumerate() {
            let row = &g_out[io * self.w_out..io * self.w_out + self.w_out];
            for (jo, c) in self.cols.iter().enumerate() {
                let g = row[jo];
                g_src[r.i0 * self.w_in + c.i0] += r.w0 * c.w0 * g;
                g_src[r.i0 * self.w_in + c.i1] += r.w0 * c.w1 * g;
                g_src[r.i1 * self.w_in + c.i0] += r.w1 * c.w0 * g;
                g_src[r.i1 * self.w_in + c.i1] += r.w1 * c.w1 * g;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
    total: usize,
}

impl ParamLayout {
    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn name_at(&self, index: usize) -> &str {
        for b in &self.blocks {
            if index < b.offset + b.len {
                return &b.name;
            }
        }
        "out of range"
    }
}

/// Trainable decoder weights, stored flat for optimizer and checkpoint use.
/// The output affine (`out_shift`, `out_scale`) is a fixed physical
/// calibration, not a trainable block.
#[derive(Debug, Clone)]
pub struct DecoderParams<T> {
    spec: LatentSpec,
    layout: ParamLayout,
    data: Vec<T>,
    out_shift: T,
    out_scale: T,
    resize: Vec<ResizePlan<T>>,
}

impl<T: Real> DecoderParams<T> {
    fn build(spec: LatentSpec, out_shift: f64, out_scale: f64) -> Result<Self> {
        if !(out_scale > 0.0) || !out_shift.is_finite() {
            return Err(CoreError::InvalidArg {
                name: "out_scale/out_shift",
                why: "scale must be positive and shift finite",
            });
        }
        let layers = spec.num_layers();
        let mut blocks = Vec::new();
        let mut total = 0usize;
        for l in 0..layers {
            let (c_in, c_out) = (spec.channels[l], spec.channels[l + 1]);
            for (suffix, len) in [
                ("mix", c_in * c_out),
                ("norm_scale", c_out),
                ("norm_shift", c_out),
            ] {
                blocks.push(ParamBlock {
                    name: alloc::format!("layer{l}/{suffix}"),
                    offset: total,
                    len,
                });
                total += len;
            }
        }
        blocks.push(ParamBlock {
            name: String::from("final_mix"),
            offset: total,
            len: spec.channels[layers],
        });
        total += spec.channels[layers];

        let mut resize = Vec::with_capacity(layers);
        for l in 0..layers {
            let (h_in, w_in) = spec.layer_input_dims(l);
            let (h_out, w_out) = spec.layer_dims[l];
            resize.push(ResizePlan::new(h_in, w_in, h_out, w_out));
        }

        Ok(Self {
            spec,
            layout: ParamLayout { blocks, total },
            data: vec![T::zero(); total],
            out_shift: T::from_f64(out_shift),
            out_scale: T::from_f64(out_scale),
            resize,
        })
    }

    /// All-zero weights (the constant-output network); used by tests.
    pub fn zeros(spec: LatentSpec, out_shift: f64, out_scale: f64) -> Result<Self> {
        let mut p = Self::build(spec, out_shift, out_scale)?;
        let layers = p.spec.num_layers();
        for l in 0..layers {
            p.norm_scale_mut(l).iter_mut().for_each(|v| *v = T::one());
        }
        Ok(p)
    }

    /// Standard initialization: mixing weights `N(0, 1/c_in)`, norm scale 1,
    /// norm shift 0.
    pub fn init(spec: LatentSpec, out_shift: f64, out_scale: f64, rng: &mut StreamRng) -> Result<Self> {
        let mut p = Self::build(spec, out_shift, out_scale)?;
        let layers = p.spec.num_layers();
        for l in 0..layers {
            let std = 1.0 / libm::sqrt(p.spec.channels[l] as f64);
            for v in p.mix_mut(l) {
                *v = T::from_f64(std * rng.next_normal());
            }
            p.norm_scale_mut(l).iter_mut().for_each(|v| *v = T::one());
        }
        let std = 1.0 / libm::sqrt(p.spec.channels[layers] as f64);
        for v in p.final_mix_mut() {
            *v = T::from_f64(std * rng.next_normal());
        }
        Ok(p)
    }

    #[inline]
    pub fn spec(&self) -> &LatentSpec {
        &self.spec
    }

    #[inline]
    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    #[inline]
    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub fn params(&self) -> &[T] {
        &self.data
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn out_shift(&self) -> T {
        self.out_shift
    }

    #[inline]
    pub fn out_scale(&self) -> T {
        self.out_scale
    }

    fn block(&self, idx: usize) -> &[T] {
        let b = &self.layout.blocks[idx];
        &self.data[b.offset..b.offset + b.len]
    }

    fn block_mut(&mut self, idx: usize) -> &mut [T] {
        let b = &self.layout.blocks[idx];
        let (off, len) = (b.offset, b.len);
        &mut self.data[off..off + len]
    }

    pub fn mix(&self, l: usize) -> &[T] {
        self.block(3 * l)
    }

    pub fn mix_mut(&mut self, l: usize) -> &mut [T] {
        self.block_mut(3 * l)
    }

    pub fn norm_scale(&self, l: usize) -> &[T] {
        self.block(3 * l + 1)
    }

    pub fn norm_scale_mut(&mut self, l: usize) -> &mut [T] {
        self.block_mut(3 * l + 1)
    }

    pub fn norm_shift(&self, l: usize) -> &[T] {
        self.block(3 * l + 2)
    }

    pub fn norm_shift_mut(&mut self, l: usize) -> &mut [T] {
        self.block_mut(3 * l + 2)
    }

    pub fn final_mix(&self) -> &[T] {
        self.block(3 * self.spec.num_layers())
    }

    pub fn final_mix_mut(&mut self) -> &mut [T] {
        self.block_mut(3 * self.spec.num_layers())
    }
}

/// Per-layer activations retained for the backward pass. Consumed by value:
/// a cache pairs with exactly one backward call.
#[derive(Debug)]
pub struct DecoderCache<T> {
    layer_inputs: Vec<Tensor3<T>>,
    relu_masks: Vec<Vec<bool>>,
    norm_xhat: Vec<Tensor3<T>>,
    norm_s: Vec<Vec<T>>,
    norm_d: Vec<Vec<T>>,
    head_input: Tensor3<T>,
    sigmoid: Vec<T>,
}

fn mix_forward<T: Real>(w: &[T], x: &Tensor3<T>, c_out: usize) -> Tensor3<T> {
    let (c_in, h, wd) = x.shape();
    let mut u = Tensor3::zeros(c_out, h, wd);
    for co in 0..c_out {
        let plane = u.plane_mut(co);
        for ci in 0..c_in {
            let wv = w[ci * c_out + co];
            if wv != T::zero() {
                for (o, &xv) in plane.iter_mut().zip(x.plane(ci)) {
                    *o += wv * xv;
                }
            }
        }
    }
    u
}

fn channel_stats<T: Real>(plane: &[T]) -> (T, T, T) {
    let n = T::from_f64(plane.len() as f64);
    let mut mean = T::zero();
    for &v in plane {
        mean += v;
    }
    mean /= n;
    let mut var = T::zero();
    for &v in plane {
        let d = v - mean;
        var += d * d;
    }
    var /= n;
    let s = var.sqrt();
    (mean, s, s + T::from_f64(CHANNEL_NORM_EPS))
}

enum CacheSink<'a, T> {
    Keep(&'a mut DecoderCache<T>),
    Discard,
}

fn forward_impl<T: Real>(
    theta: &DecoderParams<T>,
    latent: &Tensor3<T>,
    mut sink: CacheSink<'_, T>,
) -> Result<Grid2D<T>> {
    let spec = &theta.spec;
    if latent.shape() != spec.latent_shape() {
        let (c, h, w) = spec.latent_shape();
        return Err(CoreError::ShapeMismatch {
            expected: (c * h, w),
            got: (latent.channels() * latent.height(), latent.width()),
        });
    }
    let layers = spec.num_layers();
    let mut x = latent.clone();
    for l in 0..layers {
        let c_out = spec.channels[l + 1];
        if let CacheSink::Keep(cache) = &mut sink {
            cache.layer_inputs.push(x.clone());
        }
        let mut u = mix_forward(theta.mix(l), &x, c_out);
        // ReLU with subgradient 0 at exactly 0
        let mask: Vec<bool> = u.as_slice().iter().map(|&v| v > T::zero()).collect();
        for v in u.as_mut_slice() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        let plan = &theta.resize[l];
        let mut t = Tensor3::zeros(c_out, plan.h_out, plan.w_out);
        for c in 0..c_out {
            plan.forward(u.plane(c), t.plane_mut(c));
        }
        let scale = theta.norm_scale(l);
        let shift = theta.norm_shift(l);
        let mut s_all = Vec::new();
        let mut d_all = Vec::new();
        for c in 0..c_out {
            let plane = t.plane_mut(c);
            let (mean, s, d) = channel_stats(plane);
            for v in plane.iter_mut() {
                *v = (*v - mean) / d;
            }
            s_all.push(s);
            d_all.push(d);
        }
        if let CacheSink::Keep(cache) = &mut sink {
            cache.relu_masks.push(mask);
            cache.norm_xhat.push(t.clone());
            cache.norm_s.push(s_all);
            cache.norm_d.push(d_all);
        }
        for c in 0..c_out {
            let (g, b) = (scale[c], shift[c]);
            for v in t.plane_mut(c) {
                *v = g * *v + b;
            }
        }
        x = t;
    }

    let (nz, nx) = spec.target_dims();
    let n = nz * nx;
    let wf = theta.final_mix();
    let mut head = vec![T::zero(); n];
    for (c, &wv) in wf.iter().enumerate() {
        if wv != T::zero() {
            for (o, &xv) in head.iter_mut().zip(x.plane(c)) {
                *o += wv * xv;
            }
        }
    }
    let mut sig = head;
    for v in sig.iter_mut() {
        *v = T::one() / (T::one() + (-*v).exp());
    }
    if let CacheSink::Keep(cache) = &mut sink {
        cache.head_input = x;
        cache.sigmoid = sig.clone();
    }
    let mut out = sig;
    for v in out.iter_mut() {
        *v = theta.out_shift + theta.out_scale * *v;
    }
    Grid2D::from_vec(nz, nx, out)
}

/// Full forward pass retaining the activations needed for
/// [`decoder_backward`].
pub fn decoder_forward<T: Real>(
    theta: &DecoderParams<T>,
    latent: &Tensor3<T>,
) -> Result<(Grid2D<T>, DecoderCache<T>)> {
    let mut cache = DecoderCache {
        layer_inputs: Vec::new(),
        relu_masks: Vec::new(),
        norm_xhat: Vec::new(),
        norm_s: Vec::new(),
        norm_d: Vec::new(),
        head_input: Tensor3::zeros(1, 1, 1),
        sigmoid: Vec::new(),
    };
    let out = forward_impl(theta, latent, CacheSink::Keep(&mut cache))?;
    Ok((out, cache))
}

/// Forward pass without cache, for posterior sampling and probes.
pub fn decoder_infer<T: Real>(theta: &DecoderParams<T>, latent: &Tensor3<T>) -> Result<Grid2D<T>> {
    forward_impl(theta, latent, CacheSink::Discard)
}

/// Exact reverse-mode gradients. Returns the flat gradient w.r.t. the
/// trainable blocks (layout of [`DecoderParams::params`]) and the gradient
/// w.r.t. the latent tensor.
pub fn decoder_backward<T: Real>(
    theta: &DecoderParams<T>,
    cache: DecoderCache<T>,
    grad_output: &Grid2D<T>,
) -> Result<(Vec<T>, Tensor3<T>)> {
    let spec = &theta.spec;
    let (nz, nx) = spec.target_dims();
    if grad_output.dims() != (nz, nx) {
        return Err(CoreError::ShapeMismatch {
            expected: (nz, nx),
            got: grad_output.dims(),
        });
    }
    let layers = spec.num_layers();
    let n = nz * nx;
    let mut grads = vec![T::zero(); theta.n_params()];

    // head: affine then sigmoid
    let mut g_head = vec![T::zero(); n];
    for (i, g) in g_head.iter_mut().enumerate() {
        let s = cache.sigmoid[i];
        *g = grad_output.as_slice()[i] * theta.out_scale * s * (T::one() - s);
    }
    // final mix: dWf[c] = <head_input[c], g>, g_x[c] = Wf[c] * g
    let c_last = spec.channels[layers];
    let wf = theta.final_mix();
    let final_off = theta.layout.blocks[3 * layers].offset;
    let mut g_x = Tensor3::zeros(c_last, nz, nx);
    for c in 0..c_last {
        let xin = cache.head_input.plane(c);
        let mut acc = T::zero();
        for (&xv, &gv) in xin.iter().zip(g_head.iter()) {
            acc += xv * gv;
        }
        grads[final_off + c] = acc;
        let plane = g_x.plane_mut(c);
        let wv = wf[c];
        for (o, &gv) in plane.iter_mut().zip(g_head.iter()) {
            *o = wv * gv;
        }
    }

    for l in (0..layers).rev() {
        let (c_in, c_out) = (spec.channels[l], spec.channels[l + 1]);
        let xhat = &cache.norm_xhat[l];
        let s_all = &cache.norm_s[l];
        let d_all = &cache.norm_d[l];
        let scale = theta.norm_scale(l);
        let scale_off = theta.layout.blocks[3 * l + 1].offset;
        let shift_off = theta.layout.blocks[3 * l + 2].offset;
        let plan = &theta.resize[l];
        let m = plan.h_out * plan.w_out;
        let inv_m = T::from_f64(1.0 / m as f64);

        // channel norm backward:
        //   g_t = (g_xhat - mean(g_xhat)) / d - xhat * mean(g_xhat .* xhat) / s
        // with g_xhat = g_y * scale; the second term drops when the channel
        // variance is exactly zero (xhat is identically zero there).
        let mut g_t = Tensor3::zeros(c_out, plan.h_out, plan.w_out);
        for c in 0..c_out {
            let gy = g_x.plane(c);
            let xh = xhat.plane(c);
            let mut d_scale = T::zero();
            let mut d_shift = T::zero();
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for (&g, &x) in gy.iter().zip(xh.iter()) {
                d_scale += g * x;
                d_shift += g;
                let gxh = g * scale[c];
                sum_g += gxh;
                sum_gx += gxh * x;
            }
            grads[scale_off + c] = d_scale;
            grads[shift_off + c] = d_shift;
            let m1 = sum_g * inv_m;
            let m2 = sum_gx * inv_m;
            let d = d_all[c];
            let s = s_all[c];
            let curv = if s > T::zero() { m2 / s } else { T::zero() };
            let out = g_t.plane_mut(c);
            for ((o, &g), &x) in out.iter_mut().zip(gy.iter()).zip(xh.iter()) {
                *o = (g * scale[c] - m1) / d - x * curv;
            }
        }

        // bilinear adjoint
        let (h_in, w_in) = spec.layer_input_dims(l);
        let mut g_r = Tensor3::zeros(c_out, h_in, w_in);
        for c in 0..c_out {
            plan.adjoint(g_t.plane(c), g_r.plane_mut(c));
        }

        // ReLU mask
        let mask = &cache.relu_masks[l];
        for (v, &keep) in g_r.as_mut_slice().iter_mut().zip(mask.iter()) {
            if !keep {
                *v = T::zero();
            }
        }

        // mixing backward
        let xin = &cache.layer_inputs[l];
        let wmat = theta.mix(l);
        let mix_off = theta.layout.blocks[3 * l].offset;
        let mut g_prev = Tensor3::zeros(c_in, h_in, w_in);
        for ci in 0..c_in {
            let xp = xin.plane(ci);
            let gp = g_prev.plane_mut(ci);
            for co in 0..c_out {
                let gu = g_r.plane(co);
                let mut acc = T::zero();
                for (&xv, &gv) in xp.iter().zip(gu.iter()) {
                    acc += xv * gv;
                }
                grads[mix_off + ci * c_out + co] = acc;
                let wv = wmat[ci * c_out + co];
                if wv != T::zero() {
                    for (o, &gv) in gp.iter_mut().zip(gu.iter()) {
                        *o += wv * gv;
                    }
                }
            }
        }
        g_x = g_prev;
    }

    Ok((grads, g_x))
}

/// `count` posterior draws: fresh `z ~ N(0,I)` pushed through the mixture
/// encoder and the decoder. Uses no forward-operator calls.
pub fn sample_posterior<T: Real>(
    theta: &DecoderParams<T>,
    phi: &GmmParams<T>,
    rng: &mut StreamRng,
    count: usize,
) -> Result<Vec<Grid2D<T>>> {
    if count == 0 {
        return Err(CoreError::InvalidArg {
            name: "count",
            why: "need at least one sample",
        });
    }
    let (c, h, w) = theta.spec.latent_shape();
    let mut out = Vec::with_capacity(count);
    for s in 0..count {
        let mut draw_rng = rng.derive(s as u64);
        let z = sample_standard_normal(&mut draw_rng, c, h, w)?;
        let (latent, _k) = gmm_sample(phi, &z, &mut draw_rng)?;
        out.push(decoder_infer(theta, &latent)?);
    }
    Ok(out)
}
