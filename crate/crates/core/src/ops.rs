//! Layer primitives: 2-D convolution, relu, max pooling, bilinear resizing,
//! channel softmax with cross-entropy, channel concat, and elementwise add.
//!
//! Conventions that tests rely on:
//! - Convolution is cross-correlation (no kernel flip) with zero padding.
//! - Accumulation order inside a convolution output element is
//!   `bias, then (in-channel, ky, kx)` ascending, so results are bit-identical
//!   to the obvious nested-loop formulation.
//! - Max-pool ties resolve to the first maximum in row-major window order.
//! - `relu` and max-pool use the zero subgradient at their kinks.
//!
//! Tensors are `CxHxW` or `NxCxHxW`; rank-3 inputs produce rank-3 outputs.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Output extent of a conv/pool axis:
/// `floor((in + 2*pad - dilation*(k-1) - 1) / stride) + 1`, which must be >= 1.
pub fn conv_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Result<usize> {
    if kernel == 0 || stride == 0 || dilation == 0 {
        return Err(Error::InvalidConfig(
            "kernel, stride and dilation must be positive".into(),
        ));
    }
    let span = dilation * (kernel - 1) + 1;
    let padded = input + 2 * padding;
    if padded < span {
        return Err(Error::InvalidConfig(format!(
            "kernel span {span} exceeds padded input {padded}"
        )));
    }
    Ok((padded - span) / stride + 1)
}

fn weight_dims(w: &Tensor, context: &'static str) -> Result<(usize, usize, usize, usize)> {
    match w.shape()[..] {
        [o, i, kh, kw] => Ok((o, i, kh, kw)),
        _ => Err(Error::ShapeMismatch {
            context,
            expected: "rank-4 weight (OxIxKhxKw)".into(),
            got: format!("{:?}", w.shape()),
        }),
    }
}

fn restore_rank(data: Vec<Scalar>, rank3: bool, n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let shape: Vec<usize> = if rank3 {
        vec![c, h, w]
    } else {
        vec![n, c, h, w]
    };
    Tensor::new(&shape, data).expect("internal shape accounting")
}

pub fn conv2d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, in_c, h, w) = x.dims4("conv2d_forward input")?;
    let (out_c, w_in, kh, kw) = weight_dims(weight, "conv2d_forward weight")?;
    if w_in != in_c {
        return Err(Error::ShapeMismatch {
            context: "conv2d_forward",
            expected: format!("weight with {in_c} input channels"),
            got: format!("{w_in}"),
        });
    }
    if bias.shape() != [out_c] {
        return Err(Error::ShapeMismatch {
            context: "conv2d_forward",
            expected: format!("bias of length {out_c}"),
            got: format!("{:?}", bias.shape()),
        });
    }
    let out_h = conv_output_extent(h, kh, stride, dilation, padding)?;
    let out_w = conv_output_extent(w, kw, stride, dilation, padding)?;

    let xd = x.data();
    let wd = weight.data();
    let bd = bias.data();
    let mut out = vec![0.0 as Scalar; n * out_c * out_h * out_w];
    let pad = padding as isize;

    for bi in 0..n {
        for oc in 0..out_c {
            let w_oc = &wd[oc * in_c * kh * kw..(oc + 1) * in_c * kh * kw];
            let out_plane =
                &mut out[(bi * out_c + oc) * out_h * out_w..(bi * out_c + oc + 1) * out_h * out_w];
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = bd[oc];
                    for ic in 0..in_c {
                        let x_plane = &xd[(bi * in_c + ic) * h * w..(bi * in_c + ic + 1) * h * w];
                        let w_row = &w_oc[ic * kh * kw..(ic + 1) * kh * kw];
                        for ky in 0..kh {
                            let iy = (oy * stride + ky * dilation) as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let x_row = &x_plane[iy as usize * w..(iy as usize + 1) * w];
                            if dilation == 1 {
                                // Contiguous input row: clamp the kx range once and zip.
                                let base = ox as isize * stride as isize - pad;
                                let kx_lo = (-base).max(0) as usize;
                                let kx_hi = ((w as isize - base).max(0) as usize).min(kw);
                                if kx_lo >= kx_hi {
                                    continue;
                                }
                                let ix0 = (base + kx_lo as isize) as usize;
                                for (wv, xv) in w_row[ky * kw + kx_lo..ky * kw + kx_hi]
                                    .iter()
                                    .zip(&x_row[ix0..ix0 + (kx_hi - kx_lo)])
                                {
                                    acc += wv * xv;
                                }
                            } else {
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx * dilation) as isize - pad;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += w_row[ky * kw + kx] * x_row[ix as usize];
                                }
                            }
                        }
                    }
                    out_plane[oy * out_w + ox] = acc;
                }
            }
        }
    }

    let out = restore_rank(out, x.rank() == 3, n, out_c, out_h, out_w);
    out.validate_finite("conv2d_forward")?;
    Ok(out)
}

/// Gradients of a convolution w.r.t. input, weight, and bias.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    stride: usize,
    dilation: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, in_c, h, w) = x.dims4("conv2d_backward input")?;
    let (out_c, _, kh, kw) = weight_dims(weight, "conv2d_backward weight")?;
    let (gn, g_c, out_h, out_w) = grad_out.dims4("conv2d_backward grad")?;
    if gn != n || g_c != out_c {
        return Err(Error::ShapeMismatch {
            context: "conv2d_backward",
            expected: format!("grad with batch {n} and {out_c} channels"),
            got: format!("{:?}", grad_out.shape()),
        });
    }

    let xd = x.data();
    let wd = weight.data();
    let gd = grad_out.data();
    let mut gx = vec![0.0 as Scalar; xd.len()];
    let mut gw = vec![0.0 as Scalar; wd.len()];
    let mut gb = vec![0.0 as Scalar; out_c];
    let pad = padding as isize;

    for bi in 0..n {
        for oc in 0..out_c {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let g = gd[((bi * out_c + oc) * out_h + oy) * out_w + ox];
                    gb[oc] += g;
                    for ic in 0..in_c {
                        let x_base = (bi * in_c + ic) * h * w;
                        let w_base = (oc * in_c + ic) * kh * kw;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky * dilation) as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx * dilation) as isize - pad;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xi = x_base + iy as usize * w + ix as usize;
                                let wi = w_base + ky * kw + kx;
                                gw[wi] += g * xd[xi];
                                gx[xi] += g * wd[wi];
                            }
                        }
                    }
                }
            }
        }
    }

    Ok((
        restore_rank(gx, x.rank() == 3, n, in_c, h, w),
        Tensor::new(weight.shape(), gw)?,
        Tensor::new(&[out_c], gb)?,
    ))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Zero subgradient at the origin: inputs exactly 0 pass no gradient.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch {
            context: "relu_backward",
            expected: format!("{:?}", x.shape()),
            got: format!("{:?}", grad_out.shape()),
        });
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data)
}

pub struct MaxPoolOut {
    pub output: Tensor,
    /// Flat index into the input buffer of each output element's argmax.
    pub argmax: Vec<usize>,
}

pub fn maxpool_forward(
    x: &Tensor,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<MaxPoolOut> {
    let (n, c, h, w) = x.dims4("maxpool_forward input")?;
    if padding >= kernel {
        return Err(Error::InvalidConfig(format!(
            "maxpool padding {padding} must be smaller than kernel {kernel}"
        )));
    }
    let out_h = conv_output_extent(h, kernel, stride, 1, padding)?;
    let out_w = conv_output_extent(w, kernel, stride, 1, padding)?;
    let xd = x.data();
    let mut out = vec![0.0 as Scalar; n * c * out_h * out_w];
    let mut argmax = vec![0usize; out.len()];
    let pad = padding as isize;

    for bi in 0..n {
        for ci in 0..c {
            let plane = (bi * c + ci) * h * w;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut best = Scalar::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = plane + iy as usize * w + ix as usize;
                            // Strict > keeps the first maximum in row-major order.
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    debug_assert!(best_idx != usize::MAX, "window fully out of bounds");
                    let o = ((bi * c + ci) * out_h + oy) * out_w + ox;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }

    Ok(MaxPoolOut {
        output: restore_rank(out, x.rank() == 3, n, c, out_h, out_w),
        argmax,
    })
}

pub fn maxpool_backward(x_shape: &[usize], pool: &MaxPoolOut, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != pool.argmax.len() {
        return Err(Error::ShapeMismatch {
            context: "maxpool_backward",
            expected: format!("{} grad elements", pool.argmax.len()),
            got: format!("{}", grad_out.len()),
        });
    }
    let mut gx = Tensor::zeros(x_shape);
    let data = gx.data_mut();
    for (g, &idx) in grad_out.data().iter().zip(&pool.argmax) {
        data[idx] += g;
    }
    Ok(gx)
}

/// Bilinear resize with half-pixel sampling and edge clamping. The lerp form
/// keeps constant inputs bit-exact under any scale factor.
pub fn bilinear_resize_forward(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4("bilinear_resize input")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidConfig("resize target must be positive".into()));
    }
    let xd = x.data();
    let mut out = vec![0.0 as Scalar; n * c * out_h * out_w];
    let ry = h as Scalar / out_h as Scalar;
    let rx = w as Scalar / out_w as Scalar;

    for bi in 0..n {
        for ci in 0..c {
            let plane = &xd[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
            let out_plane =
                &mut out[(bi * c + ci) * out_h * out_w..(bi * c + ci + 1) * out_h * out_w];
            for oy in 0..out_h {
                let sy = (oy as Scalar + 0.5) * ry - 0.5;
                let y0 = sy.floor();
                let fy = sy - y0;
                let y0c = (y0 as isize).clamp(0, h as isize - 1) as usize;
                let y1c = (y0 as isize + 1).clamp(0, h as isize - 1) as usize;
                for ox in 0..out_w {
                    let sx = (ox as Scalar + 0.5) * rx - 0.5;
                    let x0 = sx.floor();
                    let fx = sx - x0;
                    let x0c = (x0 as isize).clamp(0, w as isize - 1) as usize;
                    let x1c = (x0 as isize + 1).clamp(0, w as isize - 1) as usize;
                    let v00 = plane[y0c * w + x0c];
                    let v01 = plane[y0c * w + x1c];
                    let v10 = plane[y1c * w + x0c];
                    let v11 = plane[y1c * w + x1c];
                    let top = v00 + fx * (v01 - v00);
                    let bot = v10 + fx * (v11 - v10);
                    out_plane[oy * out_w + ox] = top + fy * (bot - top);
                }
            }
        }
    }
    Ok(restore_rank(out, x.rank() == 3, n, c, out_h, out_w))
}

/// Transpose of [`bilinear_resize_forward`] as a linear map.
pub fn bilinear_resize_backward(x_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let mut gx = Tensor::zeros(x_shape);
    let (n, c, h, w) = gx.dims4("bilinear_resize_backward input shape")?;
    let (gn, gc, out_h, out_w) = grad_out.dims4("bilinear_resize_backward grad")?;
    if gn != n || gc != c {
        return Err(Error::ShapeMismatch {
            context: "bilinear_resize_backward",
            expected: format!("grad with batch {n}, channels {c}"),
            got: format!("{:?}", grad_out.shape()),
        });
    }
    let gd = grad_out.data();
    let gxd = gx.data_mut();
    let ry = h as Scalar / out_h as Scalar;
    let rx = w as Scalar / out_w as Scalar;

    for bi in 0..n {
        for ci in 0..c {
            let plane = (bi * c + ci) * h * w;
            let gplane = &gd[(bi * c + ci) * out_h * out_w..(bi * c + ci + 1) * out_h * out_w];
            for oy in 0..out_h {
                let sy = (oy as Scalar + 0.5) * ry - 0.5;
                let y0 = sy.floor();
                let fy = sy - y0;
                let y0c = (y0 as isize).clamp(0, h as isize - 1) as usize;
                let y1c = (y0 as isize + 1).clamp(0, h as isize - 1) as usize;
                for ox in 0..out_w {
                    let sx = (ox as Scalar + 0.5) * rx - 0.5;
                    let x0 = sx.floor();
                    let fx = sx - x0;
                    let x0c = (x0 as isize).clamp(0, w as isize - 1) as usize;
                    let x1c = (x0 as isize + 1).clamp(0, w as isize - 1) as usize;
                    let g = gplane[oy * out_w + ox];
                    gxd[plane + y0c * w + x0c] += g * (1.0 - fy) * (1.0 - fx);
                    gxd[plane + y0c * w + x1c] += g * (1.0 - fy) * fx;
                    gxd[plane + y1c * w + x0c] += g * fy * (1.0 - fx);
                    gxd[plane + y1c * w + x1c] += g * fy * fx;
                }
            }
        }
    }
    Ok(gx)
}

/// Per-pixel softmax over the channel axis of a `CxHxW` tensor.
pub fn softmax_channels(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3("softmax_channels")?;
    let xd = x.data();
    let mut out = vec![0.0 as Scalar; xd.len()];
    for y in 0..h {
        for xx in 0..w {
            let px = y * w + xx;
            let mut m = Scalar::NEG_INFINITY;
            for ci in 0..c {
                m = m.max(xd[ci * h * w + px]);
            }
            let mut sum = 0.0;
            for ci in 0..c {
                let e = (xd[ci * h * w + px] - m).exp();
                out[ci * h * w + px] = e;
                sum += e;
            }
            for ci in 0..c {
                out[ci * h * w + px] /= sum;
            }
        }
    }
    let t = Tensor::new(x.shape(), out)?;
    t.validate_finite("softmax_channels")?;
    Ok(t)
}

pub struct XentOut {
    pub loss: Scalar,
    pub probs: Tensor,
}

/// Mean per-pixel cross-entropy of channel softmax against an integer label
/// map. Loss is >= 0, and exactly 0 only when every pixel's softmax puts all
/// mass on its target class.
pub fn softmax_xent_forward(logits: &Tensor, labels: &Tensor) -> Result<XentOut> {
    let (c, h, w) = logits.dims3("softmax_xent logits")?;
    let (lh, lw) = labels.dims2("softmax_xent labels")?;
    if (lh, lw) != (h, w) {
        return Err(Error::ShapeMismatch {
            context: "softmax_xent_forward",
            expected: format!("labels {h}x{w}"),
            got: format!("{lh}x{lw}"),
        });
    }
    let xd = logits.data();
    let probs = softmax_channels(logits)?;
    let mut loss: Scalar = 0.0;
    for y in 0..h {
        for xx in 0..w {
            let px = y * w + xx;
            let lv = labels.data()[px];
            if lv.fract() != 0.0 || lv < 0.0 || lv >= c as Scalar {
                return Err(Error::InvalidConfig(format!(
                    "label {lv} out of range for {c} classes"
                )));
            }
            let t = lv as usize;
            // Stable -log(p[t]) via log-sum-exp around the max logit.
            let mut m = Scalar::NEG_INFINITY;
            for ci in 0..c {
                m = m.max(xd[ci * h * w + px]);
            }
            let mut sum = 0.0;
            for ci in 0..c {
                sum += (xd[ci * h * w + px] - m).exp();
            }
            loss += sum.ln() + m - xd[t * h * w + px];
        }
    }
    loss /= (h * w) as Scalar;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            op: "softmax_xent_forward".into(),
        });
    }
    Ok(XentOut { loss, probs })
}

/// Gradient of the mean cross-entropy w.r.t. the logits: `(p - onehot) / HW`.
pub fn softmax_xent_backward(probs: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let (c, h, w) = probs.dims3("softmax_xent_backward probs")?;
    let inv = 1.0 / (h * w) as Scalar;
    let mut grad = probs.clone();
    let gd = grad.data_mut();
    for v in gd.iter_mut() {
        *v *= inv;
    }
    for y in 0..h {
        for xx in 0..w {
            let px = y * w + xx;
            let t = labels.data()[px] as usize;
            gd[t * h * w + px] -= inv;
        }
    }
    let _ = c;
    Ok(grad)
}

/// Concatenate rank-3 tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::InvalidConfig("concat of zero tensors".into()));
    }
    let (_, h, w) = parts[0].dims3("concat_channels")?;
    let mut total_c = 0;
    for p in parts {
        let (pc, ph, pw) = p.dims3("concat_channels")?;
        if (ph, pw) != (h, w) {
            return Err(Error::ShapeMismatch {
                context: "concat_channels",
                expected: format!("{h}x{w} spatial dims"),
                got: format!("{ph}x{pw}"),
            });
        }
        total_c += pc;
    }
    let mut data = Vec::with_capacity(total_c * h * w);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::new(&[total_c, h, w], data)
}

/// Split a concat gradient back into per-part gradients.
pub fn concat_backward(grad: &Tensor, channel_splits: &[usize]) -> Result<Vec<Tensor>> {
    let (c, h, w) = grad.dims3("concat_backward")?;
    let total: usize = channel_splits.iter().sum();
    if total != c {
        return Err(Error::ShapeMismatch {
            context: "concat_backward",
            expected: format!("{c} channels"),
            got: format!("{total}"),
        });
    }
    let mut out = Vec::with_capacity(channel_splits.len());
    let mut offset = 0;
    for &ck in channel_splits {
        let part = grad.data()[offset * h * w..(offset + ck) * h * w].to_vec();
        out.push(Tensor::new(&[ck, h, w], part)?);
        offset += ck;
    }
    Ok(out)
}

pub fn add_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context: "add_forward",
            expected: format!("{:?}", a.shape()),
            got: format!("{:?}", b.shape()),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape(), data)
}
