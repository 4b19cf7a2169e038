//! SGD training for the recognition and flow networks.
//!
//! A recognition step samples an annotated frame `i` and a key offset `d`,
//! extracts features on frame `i - d`, carries them to frame `i` through the
//! flow network and the warp, and scores the task head against the frame's
//! labels. With `d == 0` the propagation stage is bypassed entirely, exactly
//! as a key frame is handled at inference time, which makes the per-frame
//! baseline the `max_offset = 0` special case of the same loop.
//!
//! Flow pretraining supervises the displacement channels directly with an
//! endpoint-error loss against the generator's exact flow; the scale
//! channels receive no gradient there and stay at their identity init.

use crate::engine::split_flow_output;
use crate::error::{Error, Result};
use crate::metrics::downsample_labels;
use crate::nets::{self, ModelBundle, Parameters};
use crate::ops::{bilinear_resize_forward, concat_channels};
use crate::synth::Snippet;
use crate::tensor::{Scalar, Tensor};
use crate::warp::{
    propagate, propagate_backward, resize_flow, resize_flow_backward, resize_scale,
    resize_scale_backward,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Per-frame recognition, no propagation anywhere.
    Frame,
    /// Joint training of feature, flow, and task networks through the warp.
    Dff,
    /// Recognition networks frozen; only the flow network learns.
    DffFixN,
    /// Flow network frozen; recognition networks learn through the warp.
    DffFixF,
    /// Recognition trained per-frame and flow trained on endpoint error,
    /// in the same run but with no gradient exchange.
    DffSeparate,
    /// Flow network alone, supervised by ground-truth displacement.
    FlowEpe,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<TrainMode> {
        match s {
            "frame" => Ok(TrainMode::Frame),
            "dff" => Ok(TrainMode::Dff),
            "dff-fix-n" => Ok(TrainMode::DffFixN),
            "dff-fix-f" => Ok(TrainMode::DffFixF),
            "dff-separate" => Ok(TrainMode::DffSeparate),
            "flow-epe" => Ok(TrainMode::FlowEpe),
            other => Err(Error::InvalidConfig(format!("unknown train mode {other}"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            TrainMode::Frame => "frame",
            TrainMode::Dff => "dff",
            TrainMode::DffFixN => "dff-fix-n",
            TrainMode::DffFixF => "dff-fix-f",
            TrainMode::DffSeparate => "dff-separate",
            TrainMode::FlowEpe => "flow-epe",
        }
    }

    fn updates_recognition(&self) -> bool {
        matches!(
            self,
            TrainMode::Frame | TrainMode::Dff | TrainMode::DffFixF | TrainMode::DffSeparate
        )
    }

    fn updates_flow(&self) -> bool {
        matches!(
            self,
            TrainMode::Dff | TrainMode::DffFixN | TrainMode::DffSeparate | TrainMode::FlowEpe
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub iters: usize,
    pub lr: Scalar,
    /// Iteration index after which the rate drops by 10x.
    pub lr_drop: Option<usize>,
    pub batch: usize,
    /// Largest key-frame offset sampled during recognition steps.
    pub max_offset: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 || self.batch == 0 {
            return Err(Error::InvalidConfig("iters and batch must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("bad learning rate {}", self.lr)));
        }
        let needs_offsets =
            matches!(self.mode, TrainMode::DffSeparate | TrainMode::FlowEpe);
        if needs_offsets && self.max_offset == 0 {
            return Err(Error::InvalidConfig(
                "flow supervision needs max_offset >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub mode: String,
    pub iters: usize,
    /// Mean task loss per iteration (endpoint error for flow pretraining).
    pub losses: Vec<Scalar>,
    /// Endpoint-error trace when a run supervises flow alongside the task.
    pub flow_losses: Vec<Scalar>,
}

impl TrainReport {
    pub fn last_loss(&self) -> Scalar {
        *self.losses.last().expect("at least one iteration")
    }

    pub fn tail_mean(&self, n: usize) -> Scalar {
        let tail = &self.losses[self.losses.len().saturating_sub(n)..];
        tail.iter().sum::<Scalar>() / tail.len() as Scalar
    }
}

/// Gradients of one sample, keyed like the bundle's parameter maps.
pub struct StepGrads {
    pub loss: Scalar,
    pub feature: Option<Parameters>,
    pub task: Option<Parameters>,
    pub flow: Option<Parameters>,
}

fn half_pair(key_frame: &Tensor, current: &Tensor) -> Result<Tensor> {
    let (_, h, w) = current.dims3("half_pair")?;
    let (hh, hw) = (h.div_ceil(2), w.div_ceil(2));
    let hk = bilinear_resize_forward(key_frame, hh, hw)?;
    let hc = bilinear_resize_forward(current, hh, hw)?;
    concat_channels(&[&hk, &hc])
}

fn annotated_labels(snippet: &Snippet, frame: usize, stride: usize) -> Result<Tensor> {
    let full = snippet.labels.get(frame).and_then(|l| l.as_ref()).ok_or_else(|| {
        Error::InvalidConfig(format!("frame {frame} carries no labels"))
    })?;
    downsample_labels(full, stride)
}

/// Task loss and parameter gradients for annotated frame `i` with features
/// taken `offset` frames earlier. `offset == 0` skips propagation.
pub fn recognition_step(
    bundle: &ModelBundle,
    snippet: &Snippet,
    frame: usize,
    offset: usize,
) -> Result<StepGrads> {
    let labels = annotated_labels(snippet, frame, bundle.meta.feature_stride)?;
    if offset > frame {
        return Err(Error::InvalidConfig(format!(
            "offset {offset} reaches before the snippet at frame {frame}"
        )));
    }
    let key = frame - offset;
    let feat_acts =
        nets::forward(&bundle.feature_spec, &bundle.feature_params, &snippet.frames[key])?;
    let features = feat_acts.output(&bundle.feature_spec);

    if offset == 0 {
        let (loss, task_acts) =
            nets::forward_loss(&bundle.task_spec, &bundle.task_params, features, &labels)?;
        let task_back =
            nets::backward_from_loss(&bundle.task_spec, &bundle.task_params, &task_acts, &labels)?;
        let feat_back = nets::backward(
            &bundle.feature_spec,
            &bundle.feature_params,
            &feat_acts,
            &task_back.grad_input,
        )?;
        return Ok(StepGrads {
            loss,
            feature: Some(feat_back.grads),
            task: Some(task_back.grads),
            flow: None,
        });
    }

    let (_, fh, fw) = features.dims3("recognition_step features")?;
    let stacked = half_pair(&snippet.frames[key], &snippet.frames[frame])?;
    let flow_acts = nets::forward(&bundle.flow_spec, &bundle.flow_params, &stacked)?;
    let (flow_raw, scale_raw) = split_flow_output(flow_acts.output(&bundle.flow_spec))?;
    let (gh, gw) = (flow_raw.height(), flow_raw.width());
    let flow = resize_flow(&flow_raw, fh, fw)?;
    let scale = resize_scale(&scale_raw, fh, fw)?;
    let propagated = propagate(features, &flow, &scale)?;

    let (loss, task_acts) =
        nets::forward_loss(&bundle.task_spec, &bundle.task_params, &propagated, &labels)?;
    let task_back =
        nets::backward_from_loss(&bundle.task_spec, &bundle.task_params, &task_acts, &labels)?;
    let (grad_feat, grad_flow, grad_scale) =
        propagate_backward(features, &flow, &scale, &task_back.grad_input)?;
    let grad_flow_raw = resize_flow_backward(gh, gw, &grad_flow)?;
    let grad_scale_raw = resize_scale_backward(scale_raw.shape(), &grad_scale)?;
    let grad_head = concat_channels(&[&grad_flow_raw, &grad_scale_raw])?;
    let flow_back = nets::backward(&bundle.flow_spec, &bundle.flow_params, &flow_acts, &grad_head)?;
    let feat_back =
        nets::backward(&bundle.feature_spec, &bundle.feature_params, &feat_acts, &grad_feat)?;
    Ok(StepGrads {
        loss,
        feature: Some(feat_back.grads),
        task: Some(task_back.grads),
        flow: Some(flow_back.grads),
    })
}

/// Forward-only task loss of `recognition_step`, for derivative checks.
pub fn joint_loss(
    bundle: &ModelBundle,
    snippet: &Snippet,
    frame: usize,
    offset: usize,
) -> Result<Scalar> {
    let labels = annotated_labels(snippet, frame, bundle.meta.feature_stride)?;
    let key = frame - offset;
    let feat_acts =
        nets::forward(&bundle.feature_spec, &bundle.feature_params, &snippet.frames[key])?;
    let features = feat_acts.output(&bundle.feature_spec);
    let input = if offset == 0 {
        features.clone()
    } else {
        let (_, fh, fw) = features.dims3("joint_loss features")?;
        let stacked = half_pair(&snippet.frames[key], &snippet.frames[frame])?;
        let flow_acts = nets::forward(&bundle.flow_spec, &bundle.flow_params, &stacked)?;
        let (flow_raw, scale_raw) = split_flow_output(flow_acts.output(&bundle.flow_spec))?;
        let flow = resize_flow(&flow_raw, fh, fw)?;
        let scale = resize_scale(&scale_raw, fh, fw)?;
        propagate(features, &flow, &scale)?
    };
    let (loss, _) = nets::forward_loss(&bundle.task_spec, &bundle.task_params, &input, &labels)?;
    Ok(loss)
}

/// Endpoint-error step against the generator's exact displacement field,
/// from frame `frame` back onto frame `frame - offset`.
pub fn flow_epe_step(
    bundle: &ModelBundle,
    snippet: &Snippet,
    frame: usize,
    offset: usize,
) -> Result<StepGrads> {
    if offset == 0 || offset > frame {
        return Err(Error::InvalidConfig(format!(
            "flow supervision needs 1 <= offset <= frame, got {offset} at {frame}"
        )));
    }
    let key = frame - offset;
    let stacked = half_pair(&snippet.frames[key], &snippet.frames[frame])?;
    let flow_acts = nets::forward(&bundle.flow_spec, &bundle.flow_params, &stacked)?;
    let out = flow_acts.output(&bundle.flow_spec);
    let (c, gh, gw) = out.dims3("flow_epe_step output")?;
    let truth = resize_flow(&snippet.composed_flow(frame, key)?, gh, gw)?;

    // loss = mean_p sqrt(dx^2 + dy^2 + eps); the eps keeps the root smooth
    // where prediction and truth coincide.
    const EPS: Scalar = 1e-12;
    let px = out.data();
    let (tx, ty) = (truth.tensor().data(), gh * gw);
    let mut grad = Tensor::zeros(&[c, gh, gw]);
    let inv = 1.0 / ty as Scalar;
    let mut loss = 0.0;
    for p in 0..ty {
        let dx = px[p] - tx[p];
        let dy = px[ty + p] - tx[ty + p];
        let root = (dx * dx + dy * dy + EPS).sqrt();
        loss += root;
        grad.data_mut()[p] = inv * dx / root;
        grad.data_mut()[ty + p] = inv * dy / root;
    }
    loss *= inv;
    let flow_back = nets::backward(&bundle.flow_spec, &bundle.flow_params, &flow_acts, &grad)?;
    Ok(StepGrads {
        loss,
        feature: None,
        task: None,
        flow: Some(flow_back.grads),
    })
}

fn merge_grads(into: &mut Option<Parameters>, from: Option<Parameters>) -> Result<()> {
    let Some(from) = from else { return Ok(()) };
    match into {
        None => *into = Some(from),
        Some(acc) => {
            for (name, g) in from {
                let slot = acc.get_mut(&name).ok_or_else(|| {
                    Error::InvalidSpec(format!("gradient for unknown layer {name}"))
                })?;
                slot.weight.axpy(1.0, &g.weight)?;
                slot.bias.axpy(1.0, &g.bias)?;
            }
        }
    }
    Ok(())
}

fn apply_sgd(params: &mut Parameters, grads: &Parameters, step: Scalar) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get_mut(name)
            .ok_or_else(|| Error::InvalidSpec(format!("no parameters for layer {name}")))?;
        p.weight.axpy(-step, &g.weight)?;
        p.bias.axpy(-step, &g.bias)?;
    }
    Ok(())
}

fn check_finite(loss: Scalar, iter: usize) -> Result<Scalar> {
    if loss.is_finite() && loss < 1e12 {
        Ok(loss)
    } else {
        Err(Error::Diverged { iter, loss: loss.into() })
    }
}

pub fn train(
    bundle: &mut ModelBundle,
    snippets: &[Snippet],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let annotated: Vec<(usize, usize)> = snippets
        .iter()
        .enumerate()
        .flat_map(|(s, sn)| {
            sn.labels
                .iter()
                .enumerate()
                .filter(|(_, l)| l.is_some())
                .map(move |(i, _)| (s, i))
        })
        .collect();
    let flow_pairs: Vec<(usize, usize)> = snippets
        .iter()
        .enumerate()
        .flat_map(|(s, sn)| (1..sn.len()).map(move |i| (s, i)))
        .collect();
    if annotated.is_empty() && cfg.mode != TrainMode::FlowEpe {
        return Err(Error::InvalidConfig("no annotated frames to train on".into()));
    }
    if flow_pairs.is_empty() && matches!(cfg.mode, TrainMode::FlowEpe | TrainMode::DffSeparate) {
        return Err(Error::InvalidConfig("no frame pairs for flow supervision".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport {
        mode: cfg.mode.label().into(),
        iters: cfg.iters,
        losses: Vec::with_capacity(cfg.iters),
        flow_losses: Vec::new(),
    };

    for iter in 0..cfg.iters {
        let lr = match cfg.lr_drop {
            Some(drop) if iter >= drop => cfg.lr * 0.1,
            _ => cfg.lr,
        };
        let mut feat_acc: Option<Parameters> = None;
        let mut task_acc: Option<Parameters> = None;
        let mut flow_acc: Option<Parameters> = None;
        let mut loss_sum = 0.0;
        let mut flow_loss_sum = 0.0;

        for _ in 0..cfg.batch {
            match cfg.mode {
                TrainMode::FlowEpe => {
                    let (s, i) = flow_pairs[rng.random_range(0..flow_pairs.len())];
                    let d = rng.random_range(1..=cfg.max_offset.min(i));
                    let step = flow_epe_step(bundle, &snippets[s], i, d)?;
                    loss_sum += step.loss;
                    merge_grads(&mut flow_acc, step.flow)?;
                }
                mode => {
                    let (s, i) = annotated[rng.random_range(0..annotated.len())];
                    let span = match mode {
                        TrainMode::Frame | TrainMode::DffSeparate => 0,
                        _ => cfg.max_offset.min(i),
                    };
                    let d = rng.random_range(0..=span);
                    let step = recognition_step(bundle, &snippets[s], i, d)?;
                    loss_sum += step.loss;
                    merge_grads(&mut feat_acc, step.feature)?;
                    merge_grads(&mut task_acc, step.task)?;
                    merge_grads(&mut flow_acc, step.flow)?;
                    if mode == TrainMode::DffSeparate {
                        let (s, i) = flow_pairs[rng.random_range(0..flow_pairs.len())];
                        let d = rng.random_range(1..=cfg.max_offset.min(i));
                        let epe = flow_epe_step(bundle, &snippets[s], i, d)?;
                        flow_loss_sum += epe.loss;
                        merge_grads(&mut flow_acc, epe.flow)?;
                    }
                }
            }
        }

        let step = lr / cfg.batch as Scalar;
        if cfg.mode.updates_recognition() {
            if let Some(acc) = &feat_acc {
                apply_sgd(&mut bundle.feature_params, acc, step)?;
            }
            if let Some(acc) = &task_acc {
                apply_sgd(&mut bundle.task_params, acc, step)?;
            }
        }
        if cfg.mode.updates_flow() {
            if let Some(acc) = &flow_acc {
                apply_sgd(&mut bundle.flow_params, acc, step)?;
            }
        }

        let mean = check_finite(loss_sum / cfg.batch as Scalar, iter)?;
        report.losses.push(mean);
        if cfg.mode == TrainMode::DffSeparate {
            report
                .flow_losses
                .push(check_finite(flow_loss_sum / cfg.batch as Scalar, iter)?);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::FlowTier;
    use crate::numcheck::relative_error;
    use crate::synth::{render_snippet, SynthConfig};

    fn toy_data(frames: usize, period: usize) -> Vec<Snippet> {
        let cfg = SynthConfig {
            height: 32,
            width: 32,
            classes: 3,
            snippets: 2,
            frames,
            annotation_period: period,
            seed: 5,
            min_shapes: 2,
            max_shapes: 3,
        };
        (0..2).map(|i| render_snippet(&cfg, i)).collect()
    }

    fn toy_bundle(seed: u64) -> ModelBundle {
        ModelBundle::initialize(3, 8, FlowTier::Full, seed).unwrap()
    }

    fn params_bit_eq(a: &Parameters, b: &Parameters) -> bool {
        a.len() == b.len()
            && a.iter().zip(b).all(|((an, ap), (bn, bp))| {
                an == bn && ap.weight.bit_eq(&bp.weight) && ap.bias.bit_eq(&bp.bias)
            })
    }

    #[test]
    fn zero_offset_training_is_the_per_frame_baseline() {
        let data = toy_data(6, 2);
        let mut frame = toy_bundle(3);
        let mut dff = frame.clone();
        let cfg = TrainConfig {
            mode: TrainMode::Frame,
            iters: 4,
            lr: 0.05,
            lr_drop: None,
            batch: 2,
            max_offset: 0,
            seed: 11,
        };
        train(&mut frame, &data, &cfg).unwrap();
        let cfg_dff = TrainConfig { mode: TrainMode::Dff, ..cfg };
        train(&mut dff, &data, &cfg_dff).unwrap();
        assert!(params_bit_eq(&frame.feature_params, &dff.feature_params));
        assert!(params_bit_eq(&frame.task_params, &dff.task_params));
        assert!(params_bit_eq(&frame.flow_params, &dff.flow_params));
    }

    #[test]
    fn frozen_networks_keep_their_bytes() {
        let data = toy_data(6, 2);
        let init = toy_bundle(4);

        let mut fix_n = init.clone();
        let cfg = TrainConfig {
            mode: TrainMode::DffFixN,
            iters: 4,
            lr: 0.05,
            lr_drop: None,
            batch: 2,
            max_offset: 3,
            seed: 13,
        };
        train(&mut fix_n, &data, &cfg).unwrap();
        assert!(params_bit_eq(&fix_n.feature_params, &init.feature_params));
        assert!(params_bit_eq(&fix_n.task_params, &init.task_params));
        assert!(!params_bit_eq(&fix_n.flow_params, &init.flow_params));

        let mut fix_f = init.clone();
        let cfg = TrainConfig { mode: TrainMode::DffFixF, ..cfg };
        train(&mut fix_f, &data, &cfg).unwrap();
        assert!(params_bit_eq(&fix_f.flow_params, &init.flow_params));
        assert!(!params_bit_eq(&fix_f.feature_params, &init.feature_params));
    }

    #[test]
    fn propagation_couples_the_flow_network() {
        let data = toy_data(6, 2);
        let bundle = toy_bundle(5);
        let step = recognition_step(&bundle, &data[0], 2, 1).unwrap();
        let flow = step.flow.expect("offset 1 runs the flow net");
        let energy: Scalar = flow
            .values()
            .map(|g| g.weight.data().iter().map(|v| v * v).sum::<Scalar>())
            .sum();
        assert!(energy > 0.0, "flow gradients all zero");
        assert!(step.loss.is_finite());
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let data = toy_data(6, 2);
        let bundle = toy_bundle(6);
        let step = recognition_step(&bundle, &data[0], 2, 2).unwrap();
        // One coordinate per network, against a centered difference.
        for (role, grads) in [
            ("feature", step.feature.as_ref().unwrap()),
            ("task", step.task.as_ref().unwrap()),
            ("flow", step.flow.as_ref().unwrap()),
        ] {
            let (layer, lp) = grads.iter().next_back().unwrap();
            let coord = lp.weight.len() / 2;
            let analytic = lp.weight.data()[coord];
            let h = 1e-5;
            let probe = |delta: Scalar| -> Scalar {
                let mut b = bundle.clone();
                let params = match role {
                    "feature" => &mut b.feature_params,
                    "task" => &mut b.task_params,
                    _ => &mut b.flow_params,
                };
                params.get_mut(layer).unwrap().weight.data_mut()[coord] += delta;
                joint_loss(&b, &data[0], 2, 2).unwrap()
            };
            let fd = (probe(h) - probe(-h)) / (2.0 * h);
            assert!(
                relative_error(fd, analytic) < 1e-4,
                "{role}/{layer}[{coord}]: fd {fd} vs {analytic}"
            );
        }
    }

    #[test]
    fn per_frame_training_reduces_loss() {
        let data = toy_data(4, 2);
        let mut bundle = toy_bundle(7);
        let cfg = TrainConfig {
            mode: TrainMode::Frame,
            iters: 30,
            lr: 0.2,
            lr_drop: None,
            batch: 1,
            max_offset: 0,
            seed: 21,
        };
        let report = train(&mut bundle, &data, &cfg).unwrap();
        let head: Scalar = report.losses[..5].iter().sum::<Scalar>() / 5.0;
        assert!(
            report.tail_mean(5) < head * 0.8,
            "no progress: {head} -> {}",
            report.tail_mean(5)
        );
    }

    #[test]
    fn endpoint_supervision_reduces_flow_error() {
        let data = toy_data(8, 4);
        let mut bundle = toy_bundle(8);
        let cfg = TrainConfig {
            mode: TrainMode::FlowEpe,
            iters: 40,
            lr: 0.1,
            lr_drop: None,
            batch: 2,
            max_offset: 3,
            seed: 31,
        };
        let report = train(&mut bundle, &data, &cfg).unwrap();
        let head: Scalar = report.losses[..5].iter().sum::<Scalar>() / 5.0;
        assert!(
            report.tail_mean(5) < head,
            "endpoint error did not fall: {head} -> {}",
            report.tail_mean(5)
        );
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let data = toy_data(6, 2);
        let cfg = TrainConfig {
            mode: TrainMode::Dff,
            iters: 3,
            lr: 0.05,
            lr_drop: None,
            batch: 2,
            max_offset: 2,
            seed: 17,
        };
        let mut a = toy_bundle(9);
        let mut b = toy_bundle(9);
        train(&mut a, &data, &cfg).unwrap();
        train(&mut b, &data, &cfg).unwrap();
        assert!(params_bit_eq(&a.feature_params, &b.feature_params));
        assert!(params_bit_eq(&a.task_params, &b.task_params));
        assert!(params_bit_eq(&a.flow_params, &b.flow_params));
    }

    #[test]
    fn runaway_rates_report_divergence() {
        let data = toy_data(4, 2);
        let mut bundle = toy_bundle(10);
        let cfg = TrainConfig {
            mode: TrainMode::Frame,
            iters: 20,
            lr: 1e9,
            lr_drop: None,
            batch: 1,
            max_offset: 0,
            seed: 41,
        };
        let err = train(&mut bundle, &data, &cfg).unwrap_err();
        assert!(err.is_divergence(), "unexpected error: {err}");
    }

    #[test]
    fn learning_rate_drop_changes_trajectory() {
        let data = toy_data(4, 2);
        let base = TrainConfig {
            mode: TrainMode::Frame,
            iters: 6,
            lr: 0.1,
            lr_drop: None,
            batch: 1,
            max_offset: 0,
            seed: 51,
        };
        let mut plain = toy_bundle(12);
        let mut dropped = toy_bundle(12);
        train(&mut plain, &data, &base).unwrap();
        let cfg = TrainConfig { lr_drop: Some(3), ..base };
        train(&mut dropped, &data, &cfg).unwrap();
        assert!(!params_bit_eq(&plain.task_params, &dropped.task_params));
    }
}
