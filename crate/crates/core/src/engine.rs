//! Video inference engine with sparse key frames.
//!
//! Key frames (every `key_interval`-th frame) run the full feature
//! extractor. In-between frames never touch it: the cached key features are
//! carried forward by a displacement field, either predicted by the learned
//! flow network (with its multiplicative scale head) or found by classic
//! block matching (warp only, no scale). The task head runs on every frame.
//!
//! Every frame's trace records the FLOPs of exactly the work performed, and
//! the totals are consistent with the cost model by construction, which the
//! tests pin down.

use crate::cost::{Convention, PerFrameCosts};
use crate::error::{Error, Result};
use crate::nets::{self, ModelBundle, FLOW_CHANNELS};
use crate::ops::bilinear_resize_forward;
use crate::tensor::{Scalar, Tensor};
use crate::warp::{propagate, resize_flow, warp_features, FlowField};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    /// Full feature extraction on every frame.
    Frame,
    /// Learned flow and scale fields propagate cached key features.
    Dff,
    /// Block-matching flow at pixel resolution, warp without scale.
    Sff { block: usize, radius: usize },
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Frame => "frame".into(),
            Variant::Dff => "dff".into(),
            Variant::Sff { .. } => "sff".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameResult {
    pub index: usize,
    pub is_key: bool,
    pub flops: f64,
    pub ms: f64,
    /// Class probabilities on the feature grid.
    pub probs: Tensor,
}

#[derive(Debug, Clone)]
pub struct InferenceTrace {
    pub variant: String,
    pub key_interval: usize,
    pub frames: Vec<FrameResult>,
}

impl InferenceTrace {
    pub fn total_flops(&self) -> f64 {
        self.frames.iter().map(|f| f.flops).sum()
    }

    pub fn total_ms(&self) -> f64 {
        self.frames.iter().map(|f| f.ms).sum()
    }

    pub fn mean_flops_per_frame(&self) -> f64 {
        self.total_flops() / self.frames.len() as f64
    }
}

fn grid_of(spec: &nets::NetworkSpec, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
    let shapes = nets::layer_shapes(spec, input)?;
    Ok(shapes.last().expect("non-empty net").1)
}

/// Per-frame cost split for a given variant and frame size, from the same
/// cost model the trace accounting uses.
pub fn pipeline_costs(
    bundle: &ModelBundle,
    variant: &Variant,
    h: usize,
    w: usize,
) -> Result<PerFrameCosts> {
    let conv = Convention::standard();
    let feat_in = (3, h, w);
    let (fc, fh, fw) = grid_of(&bundle.feature_spec, feat_in)?;
    let feature = nets::network_cost(&bundle.feature_spec, feat_in, &conv)?.total_flops;
    let task = nets::network_cost(&bundle.task_spec, (fc, fh, fw), &conv)?.total_flops;
    let key_frame = feature + task;

    let non_key = match variant {
        Variant::Frame => key_frame,
        Variant::Dff => {
            let (hh, hw) = (h.div_ceil(2), w.div_ceil(2));
            let flow = nets::network_cost(&bundle.flow_spec, (6, hh, hw), &conv)?.total_flops;
            let half_resizes = conv.resize_per_out_elem * (2 * 3 * hh * hw) as f64;
            let flow_resize = conv.resize_per_out_elem * (FLOW_CHANNELS * fh * fw) as f64;
            let scale_resize = conv.resize_per_out_elem * (fc * fh * fw) as f64;
            let warp = conv.warp_per_out_elem * (fc * fh * fw) as f64;
            let scale_apply = conv.scale_per_elem * (fc * fh * fw) as f64;
            flow + half_resizes + flow_resize + scale_resize + warp + scale_apply + task
        }
        Variant::Sff { block, radius } => {
            let candidates = (2 * radius + 1).pow(2) as f64;
            // Each candidate compares block^2 pixels over 3 channels at one
            // subtract, abs, and accumulate apiece.
            let sad = (h * w) as f64 * candidates * (block * block * 3) as f64 * 3.0;
            let flow_resize = conv.resize_per_out_elem * (FLOW_CHANNELS * fh * fw) as f64;
            let warp = conv.warp_per_out_elem * (fc * fh * fw) as f64;
            sad + flow_resize + warp + task
        }
    };
    Ok(PerFrameCosts {
        key_frame,
        non_key_frame: non_key,
    })
}

/// Exhaustive block-matching displacement from `current` onto `reference`:
/// per pixel, the sum of absolute differences over a centered block, with
/// out-of-grid samples read as zero. Candidates are scanned nearest-first
/// (then row-major) and only a strictly better SAD replaces the champion,
/// so ties resolve to the smallest displacement.
pub fn block_matching_flow(
    reference: &Tensor,
    current: &Tensor,
    block: usize,
    radius: usize,
) -> Result<FlowField> {
    let (c, h, w) = current.dims3("block_matching_flow current")?;
    if reference.shape() != current.shape() {
        return Err(Error::ShapeMismatch {
            context: "block_matching_flow",
            expected: format!("{:?}", current.shape()),
            got: format!("{:?}", reference.shape()),
        });
    }
    if block % 2 == 0 || block == 0 {
        return Err(Error::InvalidConfig("block size must be odd".into()));
    }
    let half = (block / 2) as isize;
    let mut candidates: Vec<(isize, isize)> = Vec::new();
    let r = radius as isize;
    for dy in -r..=r {
        for dx in -r..=r {
            candidates.push((dy, dx));
        }
    }
    candidates.sort_by_key(|&(dy, dx)| (dy * dy + dx * dx, dy, dx));

    let sample = |t: &Tensor, ci: usize, y: isize, x: isize| -> Scalar {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            t.at3(ci, y as usize, x as usize)
        }
    };

    let mut out = Tensor::zeros(&[2, h, w]);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut best_sad = Scalar::INFINITY;
            let mut best = (0isize, 0isize);
            for &(dy, dx) in &candidates {
                let mut sad: Scalar = 0.0;
                for ci in 0..c {
                    for by in -half..=half {
                        for bx in -half..=half {
                            let cur = sample(current, ci, y + by, x + bx);
                            let re = sample(reference, ci, y + by + dy, x + bx + dx);
                            sad += (cur - re).abs();
                        }
                    }
                }
                if sad < best_sad {
                    best_sad = sad;
                    best = (dy, dx);
                }
            }
            let p = (y * w as isize + x) as usize;
            out.data_mut()[p] = best.1 as Scalar;
            out.data_mut()[(h * w) as usize + p] = best.0 as Scalar;
        }
    }
    FlowField::new(out)
}

fn task_probs(bundle: &ModelBundle, features: &Tensor) -> Result<Tensor> {
    let acts = nets::forward(&bundle.task_spec, &bundle.task_params, features)?;
    Ok(acts.output(&bundle.task_spec).clone())
}

/// Split a flow-net output into its displacement field and scale field.
pub fn split_flow_output(out: &Tensor) -> Result<(FlowField, Tensor)> {
    let (c, h, w) = out.dims3("split_flow_output")?;
    if c <= FLOW_CHANNELS {
        return Err(Error::ShapeMismatch {
            context: "split_flow_output",
            expected: format!("more than {FLOW_CHANNELS} channels"),
            got: format!("{c}"),
        });
    }
    let flow = Tensor::new(&[FLOW_CHANNELS, h, w], out.data()[..FLOW_CHANNELS * h * w].to_vec())?;
    let scale = Tensor::new(
        &[c - FLOW_CHANNELS, h, w],
        out.data()[FLOW_CHANNELS * h * w..].to_vec(),
    )?;
    Ok((FlowField::new(flow)?, scale))
}

/// Predict flow and scale on the feature grid for the frame pair
/// `(key, current)`, through the half-resolution flow network.
pub fn predict_flow_scale(
    bundle: &ModelBundle,
    key_frame: &Tensor,
    current_frame: &Tensor,
    feature_grid: (usize, usize),
) -> Result<(FlowField, Tensor)> {
    let (_, h, w) = current_frame.dims3("predict_flow_scale")?;
    let (hh, hw) = (h.div_ceil(2), w.div_ceil(2));
    let half_key = bilinear_resize_forward(key_frame, hh, hw)?;
    let half_cur = bilinear_resize_forward(current_frame, hh, hw)?;
    let stacked = crate::ops::concat_channels(&[&half_key, &half_cur])?;
    let acts = nets::forward(&bundle.flow_spec, &bundle.flow_params, &stacked)?;
    let (flow_raw, scale_raw) = split_flow_output(acts.output(&bundle.flow_spec))?;
    let flow = resize_flow(&flow_raw, feature_grid.0, feature_grid.1)?;
    let scale = crate::warp::resize_scale(&scale_raw, feature_grid.0, feature_grid.1)?;
    Ok((flow, scale))
}

pub fn run_inference(
    bundle: &ModelBundle,
    frames: &[Tensor],
    variant: &Variant,
    key_interval: usize,
) -> Result<InferenceTrace> {
    if frames.is_empty() {
        return Err(Error::InvalidConfig("no frames to run".into()));
    }
    if key_interval == 0 {
        return Err(Error::InvalidConfig("key interval must be positive".into()));
    }
    let (_, h, w) = frames[0].dims3("run_inference frames")?;
    for f in frames {
        if f.shape() != frames[0].shape() {
            return Err(Error::ShapeMismatch {
                context: "run_inference",
                expected: format!("{:?}", frames[0].shape()),
                got: format!("{:?}", f.shape()),
            });
        }
    }
    let costs = pipeline_costs(bundle, variant, h, w)?;
    let (_, fh, fw) = grid_of(&bundle.feature_spec, (3, h, w))?;

    let mut trace = InferenceTrace {
        variant: variant.label(),
        key_interval,
        frames: Vec::with_capacity(frames.len()),
    };
    let mut cached: Option<Tensor> = None;
    let mut key_index = 0usize;

    for (i, frame) in frames.iter().enumerate() {
        let start = Instant::now();
        let is_key = matches!(variant, Variant::Frame) || i % key_interval == 0;
        let probs = if is_key {
            let acts = nets::forward(&bundle.feature_spec, &bundle.feature_params, frame)?;
            let features = acts.output(&bundle.feature_spec).clone();
            let p = task_probs(bundle, &features)?;
            cached = Some(features);
            key_index = i;
            p
        } else {
            let key_features = cached.as_ref().expect("frame 0 is always a key frame");
            let propagated = match variant {
                Variant::Frame => unreachable!("frame variant has only key frames"),
                Variant::Dff => {
                    let (flow, scale) =
                        predict_flow_scale(bundle, &frames[key_index], frame, (fh, fw))?;
                    propagate(key_features, &flow, &scale)?
                }
                Variant::Sff { block, radius } => {
                    let pixel_flow =
                        block_matching_flow(&frames[key_index], frame, *block, *radius)?;
                    let flow = resize_flow(&pixel_flow, fh, fw)?;
                    warp_features(key_features, &flow)?
                }
            };
            task_probs(bundle, &propagated)?
        };
        trace.frames.push(FrameResult {
            index: i,
            is_key,
            flops: if is_key { costs.key_frame } else { costs.non_key_frame },
            ms: start.elapsed().as_secs_f64() * 1e3,
            probs,
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::FlowTier;
    use crate::synth::{render_snippet, SynthConfig};

    fn toy_bundle(seed: u64) -> ModelBundle {
        ModelBundle::initialize(3, 8, FlowTier::Full, seed).unwrap()
    }

    fn toy_frames() -> Vec<Tensor> {
        let cfg = SynthConfig {
            height: 48,
            width: 48,
            classes: 3,
            snippets: 1,
            frames: 8,
            annotation_period: 1,
            seed: 99,
            min_shapes: 2,
            max_shapes: 3,
        };
        render_snippet(&cfg, 0).frames
    }

    #[test]
    fn interval_one_feature_propagation_equals_per_frame() {
        let bundle = toy_bundle(1);
        let frames = toy_frames();
        let frame_trace = run_inference(&bundle, &frames, &Variant::Frame, 1).unwrap();
        let dff_trace = run_inference(&bundle, &frames, &Variant::Dff, 1).unwrap();
        for (a, b) in frame_trace.frames.iter().zip(&dff_trace.frames) {
            assert!(a.probs.bit_eq(&b.probs), "frame {} diverged", a.index);
            assert!(b.is_key);
        }
    }

    #[test]
    fn key_frames_agree_across_intervals() {
        let bundle = toy_bundle(2);
        let frames = toy_frames();
        let t3 = run_inference(&bundle, &frames, &Variant::Dff, 3).unwrap();
        let t5 = run_inference(&bundle, &frames, &Variant::Dff, 5).unwrap();
        let full = run_inference(&bundle, &frames, &Variant::Frame, 1).unwrap();
        for i in [0usize] {
            assert!(t3.frames[i].probs.bit_eq(&t5.frames[i].probs));
        }
        for f in &t3.frames {
            if f.is_key {
                assert!(f.probs.bit_eq(&full.frames[f.index].probs));
            }
        }
        for f in &t5.frames {
            if f.is_key {
                assert!(f.probs.bit_eq(&full.frames[f.index].probs));
            }
        }
    }

    #[test]
    fn inert_flow_head_makes_propagation_an_identity() {
        // Zero the flow rows too: displacement exactly 0, scale exactly 1,
        // so a propagated frame must reproduce its key frame's output bits.
        let mut bundle = toy_bundle(3);
        nets::init_constant_one_rows(&mut bundle.flow_params, "head", 0).unwrap();
        {
            let lp = bundle.flow_params.get_mut("head").unwrap();
            let row = lp.weight.shape()[1];
            for oc in 0..FLOW_CHANNELS {
                for v in &mut lp.weight.data_mut()[oc * row..(oc + 1) * row] {
                    *v = 0.0;
                }
                lp.bias.data_mut()[oc] = 0.0;
            }
        }
        let frames = toy_frames();
        let trace = run_inference(&bundle, &frames, &Variant::Dff, 4).unwrap();
        for f in &trace.frames {
            let key = &trace.frames[f.index - f.index % 4];
            assert!(f.probs.bit_eq(&key.probs), "frame {} drifted", f.index);
        }
    }

    #[test]
    fn block_matching_recovers_integer_shift() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(17);
        let reference = Tensor::from_fn(&[3, 16, 16], |_| {
            rand::Rng::random_range(&mut rng, 0.0..1.0)
        });
        // current(p) = reference(p + (dx=2, dy=-1)).
        let (dx, dy) = (2isize, -1isize);
        let current = Tensor::from_fn(&[3, 16, 16], |i| {
            let c = i / 256;
            let y = (i % 256) / 16;
            let x = i % 16;
            let (sy, sx) = (y as isize + dy, x as isize + dx);
            if sy >= 0 && sy < 16 && sx >= 0 && sx < 16 {
                reference.at3(c, sy as usize, sx as usize)
            } else {
                0.0
            }
        });
        let flow = block_matching_flow(&reference, &current, 3, 3).unwrap();
        for y in 4..12 {
            for x in 4..12 {
                let p = y * 16 + x;
                assert_eq!(flow.dx(p), dx as Scalar, "at ({y},{x})");
                assert_eq!(flow.dy(p), dy as Scalar, "at ({y},{x})");
            }
        }
    }

    #[test]
    fn block_matching_prefers_zero_on_ties() {
        let flat = Tensor::full(&[3, 10, 10], 0.4);
        let flow = block_matching_flow(&flat, &flat, 3, 2).unwrap();
        assert!(flow.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trace_flops_match_cost_model_exactly() {
        let bundle = toy_bundle(4);
        let frames = toy_frames();
        for (variant, l) in [
            (Variant::Frame, 1usize),
            (Variant::Dff, 4),
            (Variant::Sff { block: 3, radius: 2 }, 4),
        ] {
            let costs = pipeline_costs(&bundle, &variant, 48, 48).unwrap();
            let trace = run_inference(&bundle, &frames, &variant, l).unwrap();
            let keys = trace.frames.iter().filter(|f| f.is_key).count() as f64;
            let nonkeys = trace.frames.len() as f64 - keys;
            let predicted = keys * costs.key_frame + nonkeys * costs.non_key_frame;
            let got = trace.total_flops();
            assert!(
                ((got - predicted) / predicted).abs() < 1e-12,
                "{variant:?}: {got} vs {predicted}"
            );
        }
    }

    #[test]
    fn propagated_frames_are_cheaper_than_key_frames() {
        // Width 24 is the size the quality experiments run at; the speedup
        // story needs propagation to undercut a key frame by a wide margin.
        let bundle = ModelBundle::initialize(3, 24, FlowTier::Full, 5).unwrap();
        let costs = pipeline_costs(&bundle, &Variant::Dff, 48, 48).unwrap();
        assert!(
            costs.non_key_frame < costs.key_frame / 3.0,
            "propagation not cheap enough: {costs:?}"
        );
        assert!(costs.mean_flops(5) <= costs.key_frame / 3.0, "interval-5 mean too high");
        // The pixel-domain block matcher is far more expensive than the
        // learned half-resolution flow network.
        let sff = pipeline_costs(&bundle, &Variant::Sff { block: 5, radius: 3 }, 48, 48).unwrap();
        assert!(sff.non_key_frame > costs.non_key_frame * 3.0);
    }
}
