//! Forward and backward kernels for each layer kind, on `(C, T, H, W)`
//! row-major activations.

use std::borrow::Cow;

use super::arch::{LayerSpec, PlannedLayer, Shape};

/// Per-layer state kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum Aux {
    None,
    Cols(Vec<f32>),
    Argmax(Vec<u32>),
}

fn vol(s: Shape) -> [usize; 4] {
    match s {
        Shape::Volume(v) => v,
        Shape::Flat(n) => [n, 1, 1, 1],
    }
}

/// `C[m×n] = beta·C + A[m×k]·B[k×n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices covering the full strided extents.
    unsafe {
        matrixmultiply::sgemm(
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

/// Valid destination range along one axis for a tap offset `d`.
fn span(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

fn im2col(input: &[f32], [c, t, h, w]: [usize; 4], [kt, kh, kw]: [usize; 3]) -> Vec<f32> {
    let p = t * h * w;
    let mut cols = vec![0.0f32; c * kt * kh * kw * p];
    for ci in 0..c {
        let src = &input[ci * p..(ci + 1) * p];
        for a in 0..kt {
            let dt = a as isize - (kt / 2) as isize;
            let (t0, t1) = span(t, dt);
            for b in 0..kh {
                let dh = b as isize - (kh / 2) as isize;
                let (h0, h1) = span(h, dh);
                for cc in 0..kw {
                    let dw = cc as isize - (kw / 2) as isize;
                    let (w0, w1) = span(w, dw);
                    let row = ((ci * kt + a) * kh + b) * kw + cc;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for tt in t0..t1 {
                        let st = (tt as isize + dt) as usize;
                        for hh in h0..h1 {
                            let sh = (hh as isize + dh) as usize;
                            let d0 = (tt * h + hh) * w;
                            let s0 = (st * h + sh) * w;
                            let sw0 = (w0 as isize + dw) as usize;
                            dst[d0 + w0..d0 + w1].copy_from_slice(&src[s0 + sw0..s0 + sw0 + (w1 - w0)]);
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f32], [c, t, h, w]: [usize; 4], [kt, kh, kw]: [usize; 3], out: &mut [f32]) {
    let p = t * h * w;
    for ci in 0..c {
        let dst = &mut out[ci * p..(ci + 1) * p];
        for a in 0..kt {
            let dt = a as isize - (kt / 2) as isize;
            let (t0, t1) = span(t, dt);
            for b in 0..kh {
                let dh = b as isize - (kh / 2) as isize;
                let (h0, h1) = span(h, dh);
                for cc in 0..kw {
                    let dw = cc as isize - (kw / 2) as isize;
                    let (w0, w1) = span(w, dw);
                    let row = ((ci * kt + a) * kh + b) * kw + cc;
                    let src = &cols[row * p..(row + 1) * p];
                    for tt in t0..t1 {
                        let st = (tt as isize + dt) as usize;
                        for hh in h0..h1 {
                            let sh = (hh as isize + dh) as usize;
                            let s0 = (tt * h + hh) * w;
                            let d0 = (st * h + sh) * w;
                            let dw0 = (w0 as isize + dw) as usize;
                            for (o, &g) in dst[d0 + dw0..d0 + dw0 + (w1 - w0)]
                                .iter_mut()
                                .zip(&src[s0 + w0..s0 + w1])
                            {
                                *o += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Calls `f(channel, dst_index, src_index)`-style loops for a depthwise
/// tap, over the valid region only.
#[inline]
fn for_tap_rows(
    [t, h, w]: [usize; 3],
    (dt, dh, dw): (isize, isize, isize),
    mut f: impl FnMut(usize, usize, usize),
) {
    let (t0, t1) = span(t, dt);
    let (h0, h1) = span(h, dh);
    let (w0, w1) = span(w, dw);
    let n = w1 - w0;
    if n == 0 {
        return;
    }
    for tt in t0..t1 {
        let st = (tt as isize + dt) as usize;
        for hh in h0..h1 {
            let sh = (hh as isize + dh) as usize;
            let d0 = (tt * h + hh) * w + w0;
            let s0 = (st * h + sh) * w + (w0 as isize + dw) as usize;
            f(d0, s0, n);
        }
    }
}

fn tap_offsets([kt, kh, kw]: [usize; 3]) -> Vec<(isize, isize, isize)> {
    let mut v = Vec::with_capacity(kt * kh * kw);
    for a in 0..kt {
        for b in 0..kh {
            for c in 0..kw {
                v.push((
                    a as isize - (kt / 2) as isize,
                    b as isize - (kh / 2) as isize,
                    c as isize - (kw / 2) as isize,
                ));
            }
        }
    }
    v
}

pub(crate) fn forward(layer: &PlannedLayer, params: &[f32], input: &[f32], keep_aux: bool) -> (Vec<f32>, Aux) {
    let in_v = vol(layer.input);
    let out_len = layer.output.len();
    match &layer.spec {
        LayerSpec::Conv3d {
            out_channels, kernel, ..
        } => {
            let p = in_v[1] * in_v[2] * in_v[3];
            let kdim = in_v[0] * kernel.iter().product::<usize>();
            let (wts, bias) = params.split_at(out_channels * kdim);
            let cols: Cow<[f32]> = if *kernel == [1, 1, 1] {
                Cow::Borrowed(input)
            } else {
                Cow::Owned(im2col(input, in_v, *kernel))
            };
            let mut out = Vec::with_capacity(out_len);
            for &b in bias {
                out.extend(std::iter::repeat(b).take(p));
            }
            gemm(*out_channels, kdim, p, wts, kdim as isize, 1, &cols, p as isize, 1, 1.0, &mut out);
            let aux = match cols {
                Cow::Owned(c) if keep_aux => Aux::Cols(c),
                _ => Aux::None,
            };
            (out, aux)
        }
        LayerSpec::DepthwiseConv3d { channels, kernel } => {
            let p = in_v[1] * in_v[2] * in_v[3];
            let kvol: usize = kernel.iter().product();
            let (wts, bias) = params.split_at(channels * kvol);
            let taps = tap_offsets(*kernel);
            let mut out = vec![0.0f32; out_len];
            for ch in 0..*channels {
                let src = &input[ch * p..(ch + 1) * p];
                let dst = &mut out[ch * p..(ch + 1) * p];
                dst.fill(bias[ch]);
                for (k, &off) in taps.iter().enumerate() {
                    let wgt = wts[ch * kvol + k];
                    for_tap_rows([in_v[1], in_v[2], in_v[3]], off, |d0, s0, n| {
                        for (o, &x) in dst[d0..d0 + n].iter_mut().zip(&src[s0..s0 + n]) {
                            *o += wgt * x;
                        }
                    });
                }
            }
            (out, Aux::None)
        }
        LayerSpec::MaxPool3d { kernel } => {
            let [c, t, h, w] = in_v;
            let [_, ot, oh, ow] = vol(layer.output);
            let mut out = Vec::with_capacity(out_len);
            let mut arg = Vec::with_capacity(if keep_aux { out_len } else { 0 });
            for ci in 0..c {
                for a in 0..ot {
                    for b in 0..oh {
                        for cc in 0..ow {
                            let mut best = f32::NEG_INFINITY;
                            let mut best_i = 0usize;
                            for x in 0..kernel[0] {
                                for y in 0..kernel[1] {
                                    for z in 0..kernel[2] {
                                        let i = ((ci * t + a * kernel[0] + x) * h + b * kernel[1] + y) * w
                                            + cc * kernel[2]
                                            + z;
                                        if input[i] > best {
                                            best = input[i];
                                            best_i = i;
                                        }
                                    }
                                }
                            }
                            out.push(best);
                            if keep_aux {
                                arg.push(best_i as u32);
                            }
                        }
                    }
                }
            }
            (out, if keep_aux { Aux::Argmax(arg) } else { Aux::None })
        }
        LayerSpec::AvgPool3d { kernel } => {
            let [c, t, h, w] = in_v;
            let [_, ot, oh, ow] = vol(layer.output);
            let scale = 1.0 / kernel.iter().product::<usize>() as f32;
            let mut out = Vec::with_capacity(out_len);
            for ci in 0..c {
                for a in 0..ot {
                    for b in 0..oh {
                        for cc in 0..ow {
                            let mut s = 0.0f32;
                            for x in 0..kernel[0] {
                                for y in 0..kernel[1] {
                                    for z in 0..kernel[2] {
                                        s += input[((ci * t + a * kernel[0] + x) * h + b * kernel[1] + y) * w
                                            + cc * kernel[2]
                                            + z];
                                    }
                                }
                            }
                            out.push(s * scale);
                        }
                    }
                }
            }
            (out, Aux::None)
        }
        LayerSpec::ChannelNorm { channels } => {
            let p = input.len() / channels;
            let (scale, shift) = params.split_at(*channels);
            let out = input
                .chunks(p)
                .enumerate()
                .flat_map(|(c, xs)| xs.iter().map(move |&x| scale[c] * x + shift[c]))
                .collect();
            (out, Aux::None)
        }
        LayerSpec::Relu => (input.iter().map(|&x| x.max(0.0)).collect(), Aux::None),
        LayerSpec::GlobalAvgPool => {
            let c = in_v[0];
            let p = input.len() / c;
            let out = input
                .chunks(p)
                .map(|xs| xs.iter().sum::<f32>() / p as f32)
                .collect();
            (out, Aux::None)
        }
        LayerSpec::Dense {
            in_features,
            out_features,
        } => {
            let (wts, bias) = params.split_at(in_features * out_features);
            let out = (0..*out_features)
                .map(|o| {
                    bias[o]
                        + wts[o * in_features..(o + 1) * in_features]
                            .iter()
                            .zip(input)
                            .map(|(w, x)| w * x)
                            .sum::<f32>()
                })
                .collect();
            (out, Aux::None)
        }
    }
}

/// Accumulates parameter gradients into `grad_params` and returns the input
/// gradient when `need_input` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    layer: &PlannedLayer,
    params: &[f32],
    input: &[f32],
    output: &[f32],
    aux: &Aux,
    grad_out: &[f32],
    grad_params: &mut [f32],
    need_input: bool,
) -> Option<Vec<f32>> {
    let in_v = vol(layer.input);
    match &layer.spec {
        LayerSpec::Conv3d {
            out_channels, kernel, ..
        } => {
            let p = in_v[1] * in_v[2] * in_v[3];
            let kdim = in_v[0] * kernel.iter().product::<usize>();
            let (gw, gb) = grad_params.split_at_mut(out_channels * kdim);
            let cols: Cow<[f32]> = match aux {
                Aux::Cols(c) => Cow::Borrowed(c),
                _ if *kernel == [1, 1, 1] => Cow::Borrowed(input),
                _ => Cow::Owned(im2col(input, in_v, *kernel)),
            };
            // dW += dY · colsᵀ
            gemm(
                *out_channels,
                p,
                kdim,
                grad_out,
                p as isize,
                1,
                &cols,
                1,
                p as isize,
                1.0,
                gw,
            );
            for (co, g) in gb.iter_mut().enumerate() {
                *g += grad_out[co * p..(co + 1) * p].iter().sum::<f32>();
            }
            if !need_input {
                return None;
            }
            let wts = &params[..out_channels * kdim];
            let mut dcols = vec![0.0f32; kdim * p];
            // dcols = Wᵀ · dY
            gemm(
                kdim,
                *out_channels,
                p,
                wts,
                1,
                kdim as isize,
                grad_out,
                p as isize,
                1,
                0.0,
                &mut dcols,
            );
            if *kernel == [1, 1, 1] {
                Some(dcols)
            } else {
                let mut gin = vec![0.0f32; input.len()];
                col2im(&dcols, in_v, *kernel, &mut gin);
                Some(gin)
            }
        }
        LayerSpec::DepthwiseConv3d { channels, kernel } => {
            let p = in_v[1] * in_v[2] * in_v[3];
            let kvol: usize = kernel.iter().product();
            let taps = tap_offsets(*kernel);
            let mut gin = if need_input { vec![0.0f32; input.len()] } else { Vec::new() };
            let (gw, gb) = grad_params.split_at_mut(channels * kvol);
            for ch in 0..*channels {
                let src = &input[ch * p..(ch + 1) * p];
                let go = &grad_out[ch * p..(ch + 1) * p];
                gb[ch] += go.iter().sum::<f32>();
                for (k, &off) in taps.iter().enumerate() {
                    let wgt = params[ch * kvol + k];
                    let mut acc = 0.0f32;
                    for_tap_rows([in_v[1], in_v[2], in_v[3]], off, |d0, s0, n| {
                        acc += go[d0..d0 + n]
                            .iter()
                            .zip(&src[s0..s0 + n])
                            .map(|(g, x)| g * x)
                            .sum::<f32>();
                        if need_input {
                            let gi = &mut gin[ch * p..(ch + 1) * p];
                            for (o, &g) in gi[s0..s0 + n].iter_mut().zip(&go[d0..d0 + n]) {
                                *o += wgt * g;
                            }
                        }
                    });
                    gw[ch * kvol + k] += acc;
                }
            }
            need_input.then_some(gin)
        }
        LayerSpec::MaxPool3d { .. } => {
            if !need_input {
                return None;
            }
            let Aux::Argmax(arg) = aux else {
                panic!("max pool backward without argmax state");
            };
            let mut gin = vec![0.0f32; input.len()];
            for (&i, &g) in arg.iter().zip(grad_out) {
                gin[i as usize] += g;
            }
            Some(gin)
        }
        LayerSpec::AvgPool3d { kernel } => {
            if !need_input {
                return None;
            }
            let [c, t, h, w] = in_v;
            let [_, ot, oh, ow] = vol(layer.output);
            let scale = 1.0 / kernel.iter().product::<usize>() as f32;
            let mut gin = vec![0.0f32; input.len()];
            let mut gi = grad_out.iter();
            for ci in 0..c {
                for a in 0..ot {
                    for b in 0..oh {
                        for cc in 0..ow {
                            let g = gi.next().copied().unwrap_or(0.0) * scale;
                            for x in 0..kernel[0] {
                                for y in 0..kernel[1] {
                                    for z in 0..kernel[2] {
                                        gin[((ci * t + a * kernel[0] + x) * h + b * kernel[1] + y) * w
                                            + cc * kernel[2]
                                            + z] += g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Some(gin)
        }
        LayerSpec::ChannelNorm { channels } => {
            let p = input.len() / channels;
            let (gs, gsh) = grad_params.split_at_mut(*channels);
            for c in 0..*channels {
                let xs = &input[c * p..(c + 1) * p];
                let go = &grad_out[c * p..(c + 1) * p];
                gs[c] += xs.iter().zip(go).map(|(x, g)| x * g).sum::<f32>();
                gsh[c] += go.iter().sum::<f32>();
            }
            need_input.then(|| {
                grad_out
                    .chunks(p)
                    .enumerate()
                    .flat_map(|(c, gs)| gs.iter().map(move |&g| params[c] * g))
                    .collect()
            })
        }
        LayerSpec::Relu => need_input.then(|| {
            output
                .iter()
                .zip(grad_out)
                .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
                .collect()
        }),
        LayerSpec::GlobalAvgPool => need_input.then(|| {
            let p = input.len() / in_v[0];
            grad_out
                .iter()
                .flat_map(|&g| std::iter::repeat(g / p as f32).take(p))
                .collect()
        }),
        LayerSpec::Dense {
            in_features,
            out_features,
        } => {
            let (gw, gb) = grad_params.split_at_mut(in_features * out_features);
            for o in 0..*out_features {
                let g = grad_out[o];
                gb[o] += g;
                for (gwi, &x) in gw[o * in_features..(o + 1) * in_features].iter_mut().zip(input) {
                    *gwi += g * x;
                }
            }
            need_input.then(|| {
                let wts = &params[..in_features * out_features];
                (0..*in_features)
                    .map(|i| (0..*out_features).map(|o| wts[o * in_features + i] * grad_out[o]).sum())
                    .collect()
            })
        }
    }
}
