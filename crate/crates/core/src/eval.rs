//! Evaluation protocols: scheduled runs, offset sweeps, and wall-clock
//! timing.
//!
//! Quality numbers always come from full-resolution comparison: the class
//! map predicted on the feature grid is block-upsampled by the feature
//! stride and scored against the original labels. Snippets are evaluated in
//! parallel but merged in input order, so every reported number is
//! independent of the thread count.

use crate::cost::speedup;
use crate::engine::{pipeline_costs, predict_flow_scale, run_inference, Variant};
use crate::error::{Error, Result};
use crate::metrics::{argmax_channels, miou, upsample_nearest, ScoreMean};
use crate::nets::{self, ModelBundle};
use crate::synth::Snippet;
use crate::tensor::{Scalar, Tensor};
use crate::threads;
use crate::warp::propagate;
use serde::Serialize;
use std::time::Instant;

/// Mean IoU of feature-grid probabilities against a full-resolution label
/// map. `class_ids` counts the background, so it is `classes + 1`.
pub fn score_probs(
    probs: &Tensor,
    label: &Tensor,
    stride: usize,
    class_ids: usize,
) -> Result<Scalar> {
    let pred = argmax_channels(probs)?;
    let up = upsample_nearest(&pred, stride)?;
    if up.shape() != label.shape() {
        return Err(Error::ShapeMismatch {
            context: "score_probs",
            expected: format!("{:?}", label.shape()),
            got: format!("{:?} (is the canvas a stride multiple?)", up.shape()),
        });
    }
    miou(&up, label, class_ids)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduledEval {
    pub variant: String,
    pub key_interval: usize,
    pub miou: Scalar,
    pub frames_scored: usize,
    pub frames_total: usize,
    pub mean_flops_per_frame: f64,
}

/// Run the engine over every snippet and score the annotated frames.
pub fn evaluate_scheduled(
    bundle: &ModelBundle,
    snippets: &[Snippet],
    variant: &Variant,
    key_interval: usize,
) -> Result<ScheduledEval> {
    let class_ids = bundle.meta.classes + 1;
    let stride = bundle.meta.feature_stride;
    let per_snippet = threads::try_map_ordered(snippets, |sn| {
        let trace = run_inference(bundle, &sn.frames, variant, key_interval)?;
        let mut scores = ScoreMean::default();
        for f in &trace.frames {
            if let Some(label) = &sn.labels[f.index] {
                scores.push(score_probs(&f.probs, label, stride, class_ids)?);
            }
        }
        Ok((scores, trace.total_flops(), trace.frames.len()))
    })?;

    let mut scores = ScoreMean::default();
    let mut flops = 0.0;
    let mut frames = 0usize;
    for (s, f, n) in &per_snippet {
        scores.merge(s);
        flops += f;
        frames += n;
    }
    Ok(ScheduledEval {
        variant: variant.label(),
        key_interval,
        miou: scores.mean(),
        frames_scored: scores.count(),
        frames_total: frames,
        mean_flops_per_frame: flops / frames as f64,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OffsetScore {
    pub offset: usize,
    pub mean_miou: Scalar,
    pub samples: usize,
}

/// Propagation quality as a function of the key-frame distance: every
/// annotated frame is predicted from features extracted `d` frames earlier,
/// for each `d` up to `max_offset` that stays inside the snippet.
pub fn evaluate_offsets(
    bundle: &ModelBundle,
    snippets: &[Snippet],
    max_offset: usize,
) -> Result<Vec<OffsetScore>> {
    let class_ids = bundle.meta.classes + 1;
    let stride = bundle.meta.feature_stride;
    let per_snippet = threads::try_map_ordered(snippets, |sn| {
        let mut features: Vec<Option<Tensor>> = vec![None; sn.len()];
        let mut scores = vec![ScoreMean::default(); max_offset + 1];
        for i in 0..sn.len() {
            let Some(label) = &sn.labels[i] else { continue };
            for d in 0..=max_offset.min(i) {
                let k = i - d;
                if features[k].is_none() {
                    let acts =
                        nets::forward(&bundle.feature_spec, &bundle.feature_params, &sn.frames[k])?;
                    features[k] = Some(acts.output(&bundle.feature_spec).clone());
                }
                let f_k = features[k].as_ref().expect("just filled");
                let (_, fh, fw) = f_k.dims3("evaluate_offsets features")?;
                let fed = if d == 0 {
                    f_k.clone()
                } else {
                    let (flow, scale) =
                        predict_flow_scale(bundle, &sn.frames[k], &sn.frames[i], (fh, fw))?;
                    propagate(f_k, &flow, &scale)?
                };
                let acts = nets::forward(&bundle.task_spec, &bundle.task_params, &fed)?;
                let probs = acts.output(&bundle.task_spec);
                scores[d].push(score_probs(probs, label, stride, class_ids)?);
            }
        }
        Ok(scores)
    })?;

    let mut merged = vec![ScoreMean::default(); max_offset + 1];
    for per_offset in &per_snippet {
        for (m, s) in merged.iter_mut().zip(per_offset) {
            m.merge(s);
        }
    }
    Ok(merged
        .into_iter()
        .enumerate()
        .map(|(offset, s)| OffsetScore {
            offset,
            mean_miou: s.mean(),
            samples: s.count(),
        })
        .collect())
}

pub fn offsets_csv(rows: &[OffsetScore]) -> String {
    let mut out = String::from("offset,mean_miou,samples\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{}\n", r.offset, r.mean_miou, r.samples));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingStats {
    pub runs_ms: Vec<f64>,
    pub median_ms: f64,
    pub frames: usize,
    pub fps: f64,
}

/// Wall-clock fps over the whole snippet set: `warmup` throwaway passes,
/// then the median of `timed` measured passes. Passes run sequentially so
/// the number reflects single-stream latency.
pub fn timed_inference(
    bundle: &ModelBundle,
    snippets: &[Snippet],
    variant: &Variant,
    key_interval: usize,
    warmup: usize,
    timed: usize,
) -> Result<TimingStats> {
    if timed == 0 {
        return Err(Error::InvalidConfig("need at least one timed pass".into()));
    }
    let mut frames = 0usize;
    for _ in 0..warmup {
        for sn in snippets {
            run_inference(bundle, &sn.frames, variant, key_interval)?;
        }
    }
    let mut runs_ms = Vec::with_capacity(timed);
    for _ in 0..timed {
        frames = 0;
        let start = Instant::now();
        for sn in snippets {
            let trace = run_inference(bundle, &sn.frames, variant, key_interval)?;
            frames += trace.frames.len();
        }
        runs_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mut sorted = runs_ms.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median_ms = sorted[sorted.len() / 2];
    Ok(TimingStats {
        runs_ms,
        median_ms,
        frames,
        fps: frames as f64 / (median_ms / 1e3),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub variant: String,
    pub key_interval: usize,
    pub miou: Scalar,
    pub mean_flops_per_frame: f64,
    /// Ratio of the per-frame baseline's mean FLOPs to this row's.
    pub speedup_vs_frame: f64,
    /// Key-interval speedup predicted from the cost model's per-frame ratio.
    pub predicted_speedup: f64,
}

/// Evaluate a grid of (variant, key interval) settings on one model.
/// Rows come back sorted by variant label, then interval.
pub fn sweep(
    bundle: &ModelBundle,
    snippets: &[Snippet],
    grid: &[(Variant, usize)],
) -> Result<Vec<SweepRow>> {
    let first = snippets
        .first()
        .ok_or_else(|| Error::InvalidConfig("no snippets to sweep".into()))?;
    let (h, w) = (first.height(), first.width());
    let frame_flops = pipeline_costs(bundle, &Variant::Frame, h, w)?.key_frame;

    let mut rows = threads::try_map_ordered(grid, |(variant, l)| {
        let ev = evaluate_scheduled(bundle, snippets, variant, *l)?;
        let costs = pipeline_costs(bundle, variant, h, w)?;
        Ok(SweepRow {
            variant: variant.label(),
            key_interval: *l,
            miou: ev.miou,
            mean_flops_per_frame: ev.mean_flops_per_frame,
            speedup_vs_frame: frame_flops / ev.mean_flops_per_frame,
            predicted_speedup: match variant {
                Variant::Frame => 1.0,
                _ => speedup(costs.ratio(), *l),
            },
        })
    })?;
    rows.sort_by(|a, b| (a.variant.as_str(), a.key_interval).cmp(&(b.variant.as_str(), b.key_interval)));
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out =
        String::from("variant,key_interval,miou,mean_flops_per_frame,speedup_vs_frame,predicted_speedup\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.3},{:.6},{:.6}\n",
            r.variant,
            r.key_interval,
            r.miou,
            r.mean_flops_per_frame,
            r.speedup_vs_frame,
            r.predicted_speedup
        ));
    }
    out
}
