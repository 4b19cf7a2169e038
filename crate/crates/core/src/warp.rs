//! Flow-guided feature propagation.
//!
//! A flow field `M` maps each position `p` on the target grid to a sample
//! point `p + dp(p)` on the source grid. Warping evaluates
//!
//! ```text
//! out[c][p] = sum_q  g(q_x, p_x + dp_x) * g(q_y, p_y + dp_y) * f[c][q]
//! g(a, b)   = max(0, 1 - |a - b|)
//! ```
//!
//! over all source locations `q`; the kernel makes at most four terms
//! nonzero, and the fast path visits exactly those neighbors in row-major
//! order with the same floating-point expressions, so it is bit-identical to
//! the literal full summation.
//!
//! Positions that sample outside the source grid contribute nothing (the
//! feature map is treated as absent there, not zero-padded with gradient).
//! Derivatives of `g` use the zero subgradient at its kinks (integer-aligned
//! samples and the support edge).

use crate::error::{Error, Result};
use crate::ops::{bilinear_resize_backward, bilinear_resize_forward};
use crate::tensor::{Scalar, Tensor};

/// Per-pixel displacement field on its own grid: channel 0 is the horizontal
/// component `dp_x`, channel 1 the vertical component `dp_y`, both in pixels
/// of the grid the field lives on.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    tensor: Tensor,
}

impl FlowField {
    /// Wraps a `2xHxW` tensor. Rejects non-finite values and displacements
    /// larger than the grid diagonal, which could only arise from a diverged
    /// producer.
    pub fn new(tensor: Tensor) -> Result<FlowField> {
        let (c, h, w) = tensor.dims3("FlowField::new")?;
        if c != 2 {
            return Err(Error::ShapeMismatch {
                context: "FlowField::new",
                expected: "2 channels (dx, dy)".into(),
                got: format!("{c}"),
            });
        }
        tensor.validate_finite("FlowField::new")?;
        let bound = (h as Scalar).hypot(w as Scalar);
        if tensor.data().iter().any(|v| v.abs() > bound) {
            return Err(Error::InvalidConfig(format!(
                "flow displacement exceeds grid diagonal {bound:.1}"
            )));
        }
        Ok(FlowField { tensor })
    }

    pub fn zeros(h: usize, w: usize) -> FlowField {
        FlowField {
            tensor: Tensor::zeros(&[2, h, w]),
        }
    }

    /// Constant displacement everywhere.
    pub fn constant(h: usize, w: usize, dx: Scalar, dy: Scalar) -> Result<FlowField> {
        let mut t = Tensor::zeros(&[2, h, w]);
        for i in 0..h * w {
            t.data_mut()[i] = dx;
            t.data_mut()[h * w + i] = dy;
        }
        FlowField::new(t)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn dx(&self, p: usize) -> Scalar {
        self.tensor.data()[p]
    }

    pub fn dy(&self, p: usize) -> Scalar {
        let hw = self.height() * self.width();
        self.tensor.data()[hw + p]
    }
}

/// Up to four (flat source index, weight) pairs for one sample point,
/// in row-major source order. Weights use the exact expression
/// `max(0, 1 - |q - s|)` per axis so callers compose bit-stable sums.
fn neighbor_terms(
    sy: Scalar,
    sx: Scalar,
    h: usize,
    w: usize,
    out: &mut [(usize, Scalar, Scalar, Scalar); 4],
) -> usize {
    let y0 = sy.floor() as isize;
    let x0 = sx.floor() as isize;
    let mut n = 0;
    for qy in [y0, y0 + 1] {
        if qy < 0 || qy >= h as isize {
            continue;
        }
        let gy = (1.0 - (qy as Scalar - sy).abs()).max(0.0);
        for qx in [x0, x0 + 1] {
            if qx < 0 || qx >= w as isize {
                continue;
            }
            let gx = (1.0 - (qx as Scalar - sx).abs()).max(0.0);
            out[n] = (qy as usize * w + qx as usize, gy * gx, gy, gx);
            n += 1;
        }
    }
    n
}

/// Bilinear warp of a `CxHxW` feature map by a flow field on the same grid.
pub fn warp_features(features: &Tensor, flow: &FlowField) -> Result<Tensor> {
    let (c, h, w) = features.dims3("warp_features")?;
    if flow.height() != h || flow.width() != w {
        return Err(Error::ShapeMismatch {
            context: "warp_features",
            expected: format!("flow on {h}x{w} grid"),
            got: format!("{}x{}", flow.height(), flow.width()),
        });
    }
    let fd = features.data();
    let mut out = Tensor::zeros(&[c, h, w]);
    let od = out.data_mut();
    let mut terms = [(0usize, 0.0 as Scalar, 0.0, 0.0); 4];

    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let sx = x as Scalar + flow.dx(p);
            let sy = y as Scalar + flow.dy(p);
            let n = neighbor_terms(sy, sx, h, w, &mut terms);
            for ci in 0..c {
                let plane = ci * h * w;
                let mut acc: Scalar = 0.0;
                for &(q, g, _, _) in &terms[..n] {
                    acc += g * fd[plane + q];
                }
                od[plane + p] = acc;
            }
        }
    }
    Ok(out)
}

/// Warp then modulate by a per-channel, per-pixel scale field (same shape as
/// the warped output).
pub fn propagate(features: &Tensor, flow: &FlowField, scale: &Tensor) -> Result<Tensor> {
    let mut out = warp_features(features, flow)?;
    if scale.shape() != out.shape() {
        return Err(Error::ShapeMismatch {
            context: "propagate",
            expected: format!("scale of shape {:?}", out.shape()),
            got: format!("{:?}", scale.shape()),
        });
    }
    for (o, s) in out.data_mut().iter_mut().zip(scale.data()) {
        *o *= s;
    }
    Ok(out)
}

/// Gradients of [`propagate`] w.r.t. the key-frame features, the flow field
/// (as a raw `2xHxW` tensor), and the scale field.
pub fn propagate_backward(
    features: &Tensor,
    flow: &FlowField,
    scale: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c, h, w) = features.dims3("propagate_backward features")?;
    if grad_out.shape() != features.shape() || scale.shape() != features.shape() {
        return Err(Error::ShapeMismatch {
            context: "propagate_backward",
            expected: format!("{:?} grad and scale", features.shape()),
            got: format!("{:?} / {:?}", grad_out.shape(), scale.shape()),
        });
    }
    if flow.height() != h || flow.width() != w {
        return Err(Error::ShapeMismatch {
            context: "propagate_backward",
            expected: format!("flow on {h}x{w} grid"),
            got: format!("{}x{}", flow.height(), flow.width()),
        });
    }

    let fd = features.data();
    let sd = scale.data();
    let gd = grad_out.data();
    let mut grad_f = Tensor::zeros(&[c, h, w]);
    let mut grad_flow = Tensor::zeros(&[2, h, w]);
    let mut grad_scale = Tensor::zeros(&[c, h, w]);
    let gf = grad_f.data_mut();
    let gs = grad_scale.data_mut();
    let mut terms = [(0usize, 0.0 as Scalar, 0.0, 0.0); 4];

    // Subgradient of g(q, s) = max(0, 1 - |q - s|) w.r.t. s; zero at kinks.
    let dg = |q: Scalar, s: Scalar| -> Scalar {
        let d = q - s;
        if d.abs() >= 1.0 || d == 0.0 {
            0.0
        } else if d > 0.0 {
            1.0
        } else {
            -1.0
        }
    };

    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let sx = x as Scalar + flow.dx(p);
            let sy = y as Scalar + flow.dy(p);
            let n = neighbor_terms(sy, sx, h, w, &mut terms);
            let mut acc_dx: Scalar = 0.0;
            let mut acc_dy: Scalar = 0.0;
            for ci in 0..c {
                let plane = ci * h * w;
                // Gradient reaching the warp output at this element.
                let g_warp = gd[plane + p] * sd[plane + p];
                let mut warped: Scalar = 0.0;
                for &(q, gqp, gy, gx) in &terms[..n] {
                    let fv = fd[plane + q];
                    warped += gqp * fv;
                    gf[plane + q] += gqp * g_warp;
                    let qy = (q / w) as Scalar;
                    let qx = (q % w) as Scalar;
                    acc_dx += g_warp * gy * dg(qx, sx) * fv;
                    acc_dy += g_warp * dg(qy, sy) * gx * fv;
                }
                gs[plane + p] = gd[plane + p] * warped;
            }
            grad_flow.data_mut()[p] = acc_dx;
            grad_flow.data_mut()[h * w + p] = acc_dy;
        }
    }
    Ok((grad_f, grad_flow, grad_scale))
}

/// Resize a flow field to a new grid: bilinear on both channels, then scale
/// the displacement components so they stay expressed in target-grid pixels.
pub fn resize_flow(flow: &FlowField, out_h: usize, out_w: usize) -> Result<FlowField> {
    let (sh, sw) = (flow.height(), flow.width());
    let mut t = bilinear_resize_forward(flow.tensor(), out_h, out_w)?;
    let fx = out_w as Scalar / sw as Scalar;
    let fy = out_h as Scalar / sh as Scalar;
    let hw = out_h * out_w;
    for i in 0..hw {
        t.data_mut()[i] *= fx;
        t.data_mut()[hw + i] *= fy;
    }
    FlowField::new(t)
}

/// Transpose of [`resize_flow`] as a linear map: scale the gradient channels
/// by the same factors, then push them back through the resize.
pub fn resize_flow_backward(
    src_h: usize,
    src_w: usize,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let (c, out_h, out_w) = grad_out.dims3("resize_flow_backward")?;
    if c != 2 {
        return Err(Error::ShapeMismatch {
            context: "resize_flow_backward",
            expected: "2-channel flow gradient".into(),
            got: format!("{c}"),
        });
    }
    let fx = out_w as Scalar / src_w as Scalar;
    let fy = out_h as Scalar / src_h as Scalar;
    let mut scaled = grad_out.clone();
    let hw = out_h * out_w;
    for i in 0..hw {
        scaled.data_mut()[i] *= fx;
        scaled.data_mut()[hw + i] *= fy;
    }
    bilinear_resize_backward(&[2, src_h, src_w], &scaled)
}

/// Resize a scale field: plain bilinear, values are dimensionless.
pub fn resize_scale(scale: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    bilinear_resize_forward(scale, out_h, out_w)
}

pub fn resize_scale_backward(src_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    bilinear_resize_backward(src_shape, grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcheck::{max_gradient_error, FD_STEP};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn rand_flow(h: usize, w: usize, span: Scalar, rng: &mut ChaCha8Rng) -> FlowField {
        FlowField::new(Tensor::from_fn(&[2, h, w], |_| {
            rng.random_range(-span..span)
        }))
        .unwrap()
    }

    /// Literal full-grid summation of the warp definition. Written from the
    /// formula, not from the implementation: every source location is
    /// visited and weighted, with no neighborhood shortcut.
    fn warp_oracle(features: &Tensor, flow: &FlowField) -> Tensor {
        let (c, h, w) = features.dims3("oracle").unwrap();
        let mut out = Tensor::zeros(&[c, h, w]);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let sx = x as Scalar + flow.dx(p);
                    let sy = y as Scalar + flow.dy(p);
                    let mut acc: Scalar = 0.0;
                    for qy in 0..h {
                        let gy = (1.0 - (qy as Scalar - sy).abs()).max(0.0);
                        for qx in 0..w {
                            let gx = (1.0 - (qx as Scalar - sx).abs()).max(0.0);
                            acc += (gy * gx) * features.at3(ci, qy, qx);
                        }
                    }
                    out.set3(ci, y, x, acc);
                }
            }
        }
        out
    }

    #[test]
    fn warp_matches_full_summation_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for case in 0..30 {
            let h = 2 + case % 15; // up to 16
            let w = 2 + (case * 5) % 15;
            let c = 1 + case % 4;
            let f = rand_tensor(&[c, h, w], &mut rng);
            let flow = rand_flow(h, w, (h.min(w)) as Scalar * 0.8, &mut rng);
            let fast = warp_features(&f, &flow).unwrap();
            let slow = warp_oracle(&f, &flow);
            assert!(fast.bit_eq(&slow), "case {case}: fast warp != full summation");
        }
    }

    #[test]
    fn warp_is_linear_in_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let f = rand_tensor(&[3, 9, 7], &mut rng);
        let g = rand_tensor(&[3, 9, 7], &mut rng);
        let flow = rand_flow(9, 7, 3.0, &mut rng);
        let (a, b) = (0.7, -1.3);

        let mut combo = f.clone();
        for (cv, (fv, gv)) in combo.data_mut().iter_mut().zip(f.data().iter().zip(g.data())) {
            *cv = a * fv + b * gv;
        }
        let lhs = warp_features(&combo, &flow).unwrap();
        let wf = warp_features(&f, &flow).unwrap();
        let wg = warp_features(&g, &flow).unwrap();
        for i in 0..lhs.len() {
            let rhs = a * wf.data()[i] + b * wg.data()[i];
            assert!((lhs.data()[i] - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn warp_weights_partition_unity_for_interior_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let f = Tensor::full(&[2, 8, 8], 0.637);
        // Small displacements keep every sample point strictly inside.
        let flow = rand_flow(8, 8, 0.9, &mut rng);
        let out = warp_features(&f, &flow).unwrap();
        for y in 1..7 {
            for x in 1..7 {
                for c in 0..2 {
                    assert!((out.at3(c, y, x) - 0.637).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn warp_zero_flow_is_bitwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(109);
        let f = rand_tensor(&[4, 6, 5], &mut rng);
        let out = warp_features(&f, &FlowField::zeros(6, 5)).unwrap();
        assert!(out.bit_eq(&f));
    }

    #[test]
    fn warp_integer_shift_copies_and_zero_fills() {
        let mut rng = ChaCha8Rng::seed_from_u64(113);
        let f = rand_tensor(&[2, 6, 6], &mut rng);
        // dp = (+2, -1): sample (y-1, x+2).
        let flow = FlowField::constant(6, 6, 2.0, -1.0).unwrap();
        let out = warp_features(&f, &flow).unwrap();
        for c in 0..2 {
            for y in 0..6 {
                for x in 0..6 {
                    let (sy, sx) = (y as isize - 1, x as isize + 2);
                    let want = if sy >= 0 && sy < 6 && sx < 6 {
                        f.at3(c, sy as usize, sx as usize)
                    } else {
                        0.0
                    };
                    assert_eq!(out.at3(c, y, x).to_bits(), want.to_bits());
                }
            }
        }
    }

    #[test]
    fn warp_support_is_at_most_four_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(127);
        let h = 7;
        let w = 7;
        let flow = rand_flow(h, w, 2.5, &mut rng);
        let base = rand_tensor(&[1, h, w], &mut rng);
        let out0 = warp_features(&base, &flow).unwrap();

        // Count, per output pixel, how many single-point feature edits move it.
        for (y, x) in [(0, 0), (3, 4), (6, 6), (2, 5)] {
            let mut movers = 0;
            for q in 0..h * w {
                let mut bumped = base.clone();
                bumped.data_mut()[q] += 10.0;
                let out1 = warp_features(&bumped, &flow).unwrap();
                if out1.at3(0, y, x) != out0.at3(0, y, x) {
                    movers += 1;
                }
            }
            assert!(movers <= 4, "pixel ({y},{x}) depends on {movers} sources");
        }
    }

    #[test]
    fn propagate_is_warp_times_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(131);
        let f = rand_tensor(&[3, 5, 5], &mut rng);
        let s = rand_tensor(&[3, 5, 5], &mut rng);
        let flow = rand_flow(5, 5, 1.5, &mut rng);
        let warped = warp_features(&f, &flow).unwrap();
        let prop = propagate(&f, &flow, &s).unwrap();
        for i in 0..prop.len() {
            let want = warped.data()[i] * s.data()[i];
            assert_eq!(prop.data()[i].to_bits(), want.to_bits());
        }
    }

    #[test]
    fn propagate_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(137);
        for case in 0..6 {
            let h = 3 + case % 4;
            let w = 3 + (case * 2) % 4;
            let c = 1 + case % 3;
            let f = rand_tensor(&[c, h, w], &mut rng);
            let s = rand_tensor(&[c, h, w], &mut rng);
            let flow = rand_flow(h, w, 1.8, &mut rng);
            let g = rand_tensor(&[c, h, w], &mut rng);

            let (gf, gm, gs) = propagate_backward(&f, &flow, &s, &g).unwrap();
            let score = |f: &Tensor, m: &FlowField, s: &Tensor| -> Scalar {
                propagate(f, m, s)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(o, gi)| o * gi)
                    .sum()
            };

            let ef = max_gradient_error(
                &mut |v| score(&Tensor::new(f.shape(), v.to_vec()).unwrap(), &flow, &s),
                f.data(),
                gf.data(),
                FD_STEP,
            );
            let em = max_gradient_error(
                &mut |v| {
                    let m = FlowField::new(Tensor::new(&[2, h, w], v.to_vec()).unwrap()).unwrap();
                    score(&f, &m, &s)
                },
                flow.tensor().data(),
                gm.data(),
                FD_STEP,
            );
            let es = max_gradient_error(
                &mut |v| score(&f, &flow, &Tensor::new(s.shape(), v.to_vec()).unwrap()),
                s.data(),
                gs.data(),
                FD_STEP,
            );
            assert!(ef < 1e-6, "case {case}: feature grad error {ef}");
            assert!(em < 1e-4, "case {case}: flow grad error {em}");
            assert!(es < 1e-6, "case {case}: scale grad error {es}");
        }
    }

    #[test]
    fn flow_ctor_rejects_garbage() {
        assert!(FlowField::new(Tensor::zeros(&[3, 4, 4])).is_err());
        let huge = Tensor::full(&[2, 4, 4], 1e6);
        assert!(FlowField::new(huge).is_err());
        let mut nan = Tensor::zeros(&[2, 4, 4]);
        nan.data_mut()[0] = Scalar::NAN;
        assert!(FlowField::new(nan).is_err());
    }

    #[test]
    fn resize_flow_rescales_displacements() {
        // Constant (dx=2, dy=-4) on 8x8 halved to 4x4 must become (1, -2).
        let flow = FlowField::constant(8, 8, 2.0, -4.0).unwrap();
        let half = resize_flow(&flow, 4, 4).unwrap();
        for p in 0..16 {
            assert_eq!(half.dx(p), 1.0);
            assert_eq!(half.dy(p), -2.0);
        }
        // And upsampling back doubles it again.
        let back = resize_flow(&half, 8, 8).unwrap();
        for p in 0..64 {
            assert_eq!(back.dx(p), 2.0);
            assert_eq!(back.dy(p), -4.0);
        }
    }

    #[test]
    fn resize_flow_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(139);
        let src = rand_flow(6, 4, 1.5, &mut rng);
        let g = rand_tensor(&[2, 3, 8], &mut rng);
        let grad = resize_flow_backward(6, 4, &g).unwrap();
        let err = max_gradient_error(
            &mut |v| {
                let m = FlowField::new(Tensor::new(&[2, 6, 4], v.to_vec()).unwrap()).unwrap();
                resize_flow(&m, 3, 8)
                    .unwrap()
                    .into_tensor()
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(o, gi)| o * gi)
                    .sum()
            },
            src.tensor().data(),
            grad.data(),
            FD_STEP,
        );
        assert!(err < 1e-6, "resize_flow grad error {err}");
    }

    #[test]
    fn resize_scale_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(149);
        let s = rand_tensor(&[3, 5, 5], &mut rng);
        let g = rand_tensor(&[3, 9, 7], &mut rng);
        let grad = resize_scale_backward(s.shape(), &g).unwrap();
        let err = max_gradient_error(
            &mut |v| {
                let st = Tensor::new(s.shape(), v.to_vec()).unwrap();
                resize_scale(&st, 9, 7)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(o, gi)| o * gi)
                    .sum()
            },
            s.data(),
            grad.data(),
            FD_STEP,
        );
        assert!(err < 1e-6, "resize_scale grad error {err}");
    }
}
