//! Synthetic video snippets with exact ground truth.
//!
//! Each snippet is a static sinusoid background plus a few rigid shapes that
//! translate with piecewise-constant velocity, bouncing off the canvas
//! edges. Class identity is doubly coded, by silhouette (square, disk,
//! diamond) and by dominant color channel, and shapes carry a radial shade
//! so their interiors are not textureless. Each shape's hue also drifts
//! slowly over time, so appearance changes even where geometry does not.
//! Because motion is rigid translation, per-pixel flow between any two
//! frames is known in closed form, and labels are exact.
//!
//! Generation is deterministic: snippet `i` of a dataset draws from stream
//! `i` of one seeded generator, so any snippet can be regenerated in
//! isolation.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::warp::FlowField;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Foreground classes; labels run 0 (background) to `classes`.
    pub classes: usize,
    pub snippets: usize,
    pub frames: usize,
    /// Frame `i` carries a label iff `i % annotation_period == 0`.
    pub annotation_period: usize,
    pub seed: u64,
    pub min_shapes: usize,
    pub max_shapes: usize,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::InvalidConfig("canvas must be at least 16x16".into()));
        }
        if self.classes == 0 || self.classes > 3 {
            return Err(Error::InvalidConfig("classes must be 1..=3".into()));
        }
        if self.frames == 0 || self.snippets == 0 {
            return Err(Error::InvalidConfig("need at least one frame and snippet".into()));
        }
        if self.annotation_period == 0 {
            return Err(Error::InvalidConfig("annotation period must be positive".into()));
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes {
            return Err(Error::InvalidConfig("bad shape count range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Silhouette {
    Square,
    Disk,
    Diamond,
}

impl Silhouette {
    fn for_class(class: usize) -> Silhouette {
        match (class - 1) % 3 {
            0 => Silhouette::Square,
            1 => Silhouette::Disk,
            _ => Silhouette::Diamond,
        }
    }

    /// Signed distance from the boundary, negative inside.
    fn distance(&self, dx: Scalar, dy: Scalar, r: Scalar) -> Scalar {
        match self {
            Silhouette::Square => dx.abs().max(dy.abs()) - r,
            Silhouette::Disk => dx.hypot(dy) - r,
            Silhouette::Diamond => dx.abs() + dy.abs() - r,
        }
    }
}

#[derive(Debug, Clone)]
struct Shape {
    class: usize,
    silhouette: Silhouette,
    radius: Scalar,
    color: [Scalar; 3],
    /// Center per frame, after bounce simulation.
    centers: Vec<(Scalar, Scalar)>,
    /// Slow hue oscillation (amplitude, phase): energy crossfades from the
    /// dominant channel into `counter`, so appearance drifts over time in a
    /// class-relevant direction while geometry and labels stay exact, and
    /// features carried across frames go stale rather than merely displaced.
    /// The dominant channel only ever dims and keeps a wide margin over the
    /// boosted channel, so labels remain unambiguous at any phase.
    pulse: (Scalar, Scalar),
    /// Non-dominant channel that gains what the dominant channel loses.
    counter: usize,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    shapes: Vec<Shape>,
    bg_freq: [(Scalar, Scalar); 3],
    bg_phase: [Scalar; 3],
}

/// Frames per full hue cycle. Long against the usual key interval, so
/// staleness grows smoothly with propagation distance.
const PULSE_PERIOD: Scalar = 16.0;

fn simulate_centers(
    start: (Scalar, Scalar),
    vel: (Scalar, Scalar),
    radius: Scalar,
    h: usize,
    w: usize,
    frames: usize,
) -> Vec<(Scalar, Scalar)> {
    let (mut x, mut y) = start;
    let (mut vx, mut vy) = vel;
    let (lo_x, hi_x) = (radius, (w - 1) as Scalar - radius);
    let (lo_y, hi_y) = (radius, (h - 1) as Scalar - radius);
    let mut out = Vec::with_capacity(frames);
    out.push((x, y));
    for _ in 1..frames {
        x += vx;
        y += vy;
        if x < lo_x {
            x = lo_x + (lo_x - x);
            vx = -vx;
        } else if x > hi_x {
            x = hi_x - (x - hi_x);
            vx = -vx;
        }
        if y < lo_y {
            y = lo_y + (lo_y - y);
            vy = -vy;
        } else if y > hi_y {
            y = hi_y - (y - hi_y);
            vy = -vy;
        }
        out.push((x, y));
    }
    out
}

impl Scene {
    pub fn generate(cfg: &SynthConfig, snippet: usize) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(snippet as u64);
        let n_shapes = rng.random_range(cfg.min_shapes..=cfg.max_shapes);
        // Shapes span a few cells of the stride-4 feature grid; much smaller
        // and a sub-cell warp blur erodes most of their area.
        let max_r = (cfg.height.min(cfg.width) as Scalar / 3.6).max(4.0);
        let min_r = (max_r * 0.6).max(3.0);

        let mut shapes = Vec::with_capacity(n_shapes);
        for s in 0..n_shapes {
            // Every class appears before any repeats, so small scenes still
            // cover the label set across a dataset.
            let class = (s % cfg.classes) + 1;
            let radius = rng.random_range(min_r..max_r);
            let x = rng.random_range(radius..(cfg.width - 1) as Scalar - radius);
            let y = rng.random_range(radius..(cfg.height - 1) as Scalar - radius);
            // Moderate motion: around one feature cell of travel across a
            // typical key interval, the regime propagation is meant for.
            let speed = rng.random_range(0.2..0.8);
            let angle = rng.random_range(0.0..std::f64::consts::TAU as Scalar);
            let vel = (speed * angle.cos(), speed * angle.sin());
            let dominant = (class - 1) % 3;
            let mut color = [0.0; 3];
            for (ch, c) in color.iter_mut().enumerate() {
                *c = if ch == dominant {
                    rng.random_range(0.82..0.98)
                } else {
                    rng.random_range(0.15..0.3)
                };
            }
            let pulse = (
                rng.random_range(0.12..0.25),
                rng.random_range(0.0..std::f64::consts::TAU as Scalar),
            );
            let counter = (dominant + 1 + rng.random_range(0..2)) % 3;
            shapes.push(Shape {
                class,
                silhouette: Silhouette::for_class(class),
                radius,
                color,
                centers: simulate_centers((x, y), vel, radius, cfg.height, cfg.width, cfg.frames),
                pulse,
                counter,
            });
        }

        let mut bg_freq = [(0.0, 0.0); 3];
        let mut bg_phase = [0.0; 3];
        for ch in 0..3 {
            bg_freq[ch] = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
            bg_phase[ch] = rng.random_range(0.0..std::f64::consts::TAU as Scalar);
        }
        Scene {
            height: cfg.height,
            width: cfg.width,
            classes: cfg.classes,
            shapes,
            bg_freq,
            bg_phase,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.shapes.first().map_or(0, |s| s.centers.len())
    }

    /// Index of the topmost shape covering the pixel center, if any.
    fn owner(&self, frame: usize, y: usize, x: usize) -> Option<usize> {
        let mut hit = None;
        for (idx, shape) in self.shapes.iter().enumerate() {
            let (cx, cy) = shape.centers[frame];
            let d = shape
                .silhouette
                .distance(x as Scalar - cx, y as Scalar - cy, shape.radius);
            if d <= 0.0 {
                hit = Some(idx);
            }
        }
        hit
    }

    pub fn render_frame(&self, frame: usize) -> Tensor {
        let (h, w) = (self.height, self.width);
        let mut img = Tensor::zeros(&[3, h, w]);
        let scale = 1.0 / h.max(w) as Scalar;
        for ch in 0..3 {
            let (fx, fy) = self.bg_freq[ch];
            let phase = self.bg_phase[ch];
            for y in 0..h {
                for x in 0..w {
                    let s = (std::f64::consts::TAU as Scalar
                        * (fx * x as Scalar + fy * y as Scalar)
                        * scale
                        + phase)
                        .sin();
                    img.set3(ch, y, x, 0.15 + 0.08 * s);
                }
            }
        }
        for shape in &self.shapes {
            let (cx, cy) = shape.centers[frame];
            // Crossfade share in 0..=amplitude: the dominant channel dims by
            // `fade`, the counter channel gains twice that share. Dim-only on
            // the bright channel keeps pixels in range without clipping.
            let u = (std::f64::consts::TAU as Scalar * frame as Scalar / PULSE_PERIOD
                + shape.pulse.1)
                .sin();
            let fade = shape.pulse.0 * (u + 1.0) * 0.5;
            let dominant = (shape.class - 1) % 3;
            for y in 0..h {
                for x in 0..w {
                    let d = shape
                        .silhouette
                        .distance(x as Scalar - cx, y as Scalar - cy, shape.radius);
                    // One-pixel soft band at the boundary, radial shade inside.
                    let alpha = (0.5 - d).clamp(0.0, 1.0);
                    if alpha <= 0.0 {
                        continue;
                    }
                    let shade = 0.75 + 0.25 * (-d / shape.radius).clamp(0.0, 1.0);
                    for ch in 0..3 {
                        let gain = if ch == dominant {
                            1.0 - fade
                        } else if ch == shape.counter {
                            1.0 + 2.0 * fade
                        } else {
                            1.0
                        };
                        let v = shape.color[ch] * shade * gain;
                        let prev = img.at3(ch, y, x);
                        img.set3(ch, y, x, alpha * v + (1.0 - alpha) * prev);
                    }
                }
            }
        }
        img
    }

    pub fn labels(&self, frame: usize) -> Tensor {
        Tensor::from_fn(&[self.height, self.width], |i| {
            let (y, x) = (i / self.width, i % self.width);
            self.owner(frame, y, x)
                .map_or(0.0, |s| self.shapes[s].class as Scalar)
        })
    }

    /// Exact displacement field mapping positions in `from` onto the same
    /// material point in `to`; background pixels are static.
    pub fn flow(&self, from: usize, to: usize) -> FlowField {
        let (h, w) = (self.height, self.width);
        let mut t = Tensor::zeros(&[2, h, w]);
        for y in 0..h {
            for x in 0..w {
                if let Some(s) = self.owner(from, y, x) {
                    let (fx, fy) = self.shapes[s].centers[from];
                    let (tx, ty) = self.shapes[s].centers[to];
                    let p = y * w + x;
                    t.data_mut()[p] = tx - fx;
                    t.data_mut()[h * w + p] = ty - fy;
                }
            }
        }
        FlowField::new(t).expect("bounded motion")
    }
}

/// One loaded (or freshly rendered) video snippet.
#[derive(Debug, Clone)]
pub struct Snippet {
    /// `3xHxW` frames in [0, 1].
    pub frames: Vec<Tensor>,
    /// `HxW` class maps at annotated indices.
    pub labels: Vec<Option<Tensor>>,
    /// `flows[i]` maps frame `i` onto frame `i - 1`; index 0 is empty.
    pub flows: Vec<Option<FlowField>>,
}

impl Snippet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames[0].shape()[2]
    }

    /// Flow from frame `i` onto earlier frame `k`, chained through the
    /// stored adjacent fields with nearest-neighbor resampling.
    pub fn composed_flow(&self, i: usize, k: usize) -> Result<FlowField> {
        if k > i || i >= self.len() {
            return Err(Error::InvalidConfig(format!(
                "composed_flow({i}, {k}) out of range"
            )));
        }
        let (h, w) = (self.height(), self.width());
        if i == k {
            return Ok(FlowField::zeros(h, w));
        }
        let mut acc = Tensor::zeros(&[2, h, w]);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let first = self.flows[i].as_ref().expect("i > 0");
                let mut dx = first.dx(p);
                let mut dy = first.dy(p);
                for j in (k + 1..i).rev() {
                    let sx = ((x as Scalar + dx).round() as isize).clamp(0, w as isize - 1);
                    let sy = ((y as Scalar + dy).round() as isize).clamp(0, h as isize - 1);
                    let q = sy as usize * w + sx as usize;
                    let fj = self.flows[j].as_ref().expect("j > 0");
                    dx += fj.dx(q);
                    dy += fj.dy(q);
                }
                acc.data_mut()[p] = dx;
                acc.data_mut()[h * w + p] = dy;
            }
        }
        FlowField::new(acc)
    }
}

/// Render a whole snippet in memory.
pub fn render_snippet(cfg: &SynthConfig, snippet: usize) -> Snippet {
    let scene = Scene::generate(cfg, snippet);
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut labels = Vec::with_capacity(cfg.frames);
    let mut flows = Vec::with_capacity(cfg.frames);
    for i in 0..cfg.frames {
        frames.push(scene.render_frame(i));
        labels.push((i % cfg.annotation_period == 0).then(|| scene.labels(i)));
        flows.push((i > 0).then(|| scene.flow(i, i - 1)));
    }
    Snippet { frames, labels, flows }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub snippets: usize,
    pub frames: usize,
    pub annotation_period: usize,
    pub seed: u64,
    pub version: String,
}

fn snippet_dir(root: &Path, idx: usize) -> std::path::PathBuf {
    root.join(format!("snippet_{idx:03}"))
}

/// Write every snippet plus a manifest under `dir`.
pub fn generate_dataset(cfg: &SynthConfig, dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in 0..cfg.snippets {
        let snip = render_snippet(cfg, s);
        let sdir = snippet_dir(dir, s);
        std::fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
        for (i, frame) in snip.frames.iter().enumerate() {
            frame.save(sdir.join(format!("frame_{i:03}.fft1")))?;
            if let Some(lbl) = &snip.labels[i] {
                lbl.save(sdir.join(format!("label_{i:03}.fft1")))?;
            }
            if let Some(flow) = &snip.flows[i] {
                flow.tensor().save(sdir.join(format!("flow_{i:03}.fft1")))?;
            }
        }
    }
    let manifest = DatasetManifest {
        height: cfg.height,
        width: cfg.width,
        classes: cfg.classes,
        snippets: cfg.snippets,
        frames: cfg.frames,
        annotation_period: cfg.annotation_period,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    let mpath = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&mpath, body).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let mpath = dir.join("manifest.json");
    let body = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    serde_json::from_str(&body).map_err(|e| Error::json(&mpath, e))
}

pub fn load_snippet(dir: &Path, manifest: &DatasetManifest, idx: usize) -> Result<Snippet> {
    if idx >= manifest.snippets {
        return Err(Error::InvalidConfig(format!(
            "snippet {idx} out of {}",
            manifest.snippets
        )));
    }
    let sdir = snippet_dir(dir, idx);
    let mut frames = Vec::with_capacity(manifest.frames);
    let mut labels = Vec::with_capacity(manifest.frames);
    let mut flows = Vec::with_capacity(manifest.frames);
    for i in 0..manifest.frames {
        frames.push(Tensor::load(sdir.join(format!("frame_{i:03}.fft1")))?);
        let lpath = sdir.join(format!("label_{i:03}.fft1"));
        labels.push(if lpath.exists() {
            Some(Tensor::load(lpath)?)
        } else {
            None
        });
        flows.push(if i > 0 {
            Some(FlowField::new(Tensor::load(
                sdir.join(format!("flow_{i:03}.fft1")),
            )?)?)
        } else {
            None
        });
    }
    Ok(Snippet { frames, labels, flows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_cfg() -> SynthConfig {
        SynthConfig {
            height: 48,
            width: 48,
            classes: 3,
            snippets: 4,
            frames: 12,
            annotation_period: 2,
            seed: 7,
            min_shapes: 2,
            max_shapes: 4,
        }
    }

    #[test]
    fn generation_is_deterministic_per_stream() {
        let cfg = test_cfg();
        let a = render_snippet(&cfg, 2);
        let b = render_snippet(&cfg, 2);
        let c = render_snippet(&cfg, 3);
        assert!(a.frames[5].bit_eq(&b.frames[5]));
        assert!(a.labels[4].as_ref().unwrap().bit_eq(b.labels[4].as_ref().unwrap()));
        assert!(!a.frames[0].bit_eq(&c.frames[0]), "streams must differ");
    }

    #[test]
    fn labels_partition_into_known_classes() {
        let cfg = test_cfg();
        let mut seen_fg = false;
        for s in 0..cfg.snippets {
            let scene = Scene::generate(&cfg, s);
            let lbl = scene.labels(0);
            for &v in lbl.data() {
                assert!(v.fract() == 0.0 && v >= 0.0 && v <= cfg.classes as Scalar);
                if v > 0.0 {
                    seen_fg = true;
                }
            }
        }
        assert!(seen_fg, "no foreground pixels generated at all");
    }

    #[test]
    fn frames_stay_in_unit_range() {
        let cfg = test_cfg();
        let snip = render_snippet(&cfg, 0);
        for frame in &snip.frames {
            for &v in frame.data() {
                assert!((0.0..=1.0).contains(&v), "pixel out of range: {v}");
            }
        }
    }

    #[test]
    fn shapes_never_leave_the_canvas() {
        let mut cfg = test_cfg();
        cfg.frames = 120;
        let scene = Scene::generate(&cfg, 1);
        for shape in &scene.shapes {
            for &(x, y) in &shape.centers {
                assert!(x >= shape.radius - 1e-9 && x <= 47.0 - shape.radius + 1e-9);
                assert!(y >= shape.radius - 1e-9 && y <= 47.0 - shape.radius + 1e-9);
            }
        }
    }

    #[test]
    fn ground_truth_flow_transports_labels() {
        // Stepping every label pixel along the stored flow must land on the
        // same class in the previous frame for nearly all pixels; failures
        // are confined to occlusion boundaries.
        let cfg = test_cfg();
        for s in 0..cfg.snippets {
            let scene = Scene::generate(&cfg, s);
            for i in 1..cfg.frames {
                let li = scene.labels(i);
                let lk = scene.labels(i - 1);
                let flow = scene.flow(i, i - 1);
                let (h, w) = (cfg.height, cfg.width);
                let mut ok = 0usize;
                for y in 0..h {
                    for x in 0..w {
                        let p = y * w + x;
                        let sx = (x as Scalar + flow.dx(p)).round() as isize;
                        let sy = (y as Scalar + flow.dy(p)).round() as isize;
                        if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                            continue;
                        }
                        if li.data()[p] == lk.data()[sy as usize * w + sx as usize] {
                            ok += 1;
                        }
                    }
                }
                let frac = ok as Scalar / (h * w) as Scalar;
                assert!(frac >= 0.95, "snippet {s} frame {i}: correspondence {frac}");
            }
        }
    }

    #[test]
    fn composed_flow_matches_direct_flow() {
        let cfg = test_cfg();
        let scene = Scene::generate(&cfg, 0);
        let snip = render_snippet(&cfg, 0);
        let (i, k) = (9, 3);
        let direct = scene.flow(i, k);
        let composed = snip.composed_flow(i, k).unwrap();
        let (h, w) = (cfg.height, cfg.width);
        let mut close = 0usize;
        for p in 0..h * w {
            let err = (direct.dx(p) - composed.dx(p)).abs()
                + (direct.dy(p) - composed.dy(p)).abs();
            if err < 0.75 {
                close += 1;
            }
        }
        let frac = close as Scalar / (h * w) as Scalar;
        assert!(frac >= 0.9, "composition drifted: only {frac} close");
        // Zero-offset composition is exactly zero.
        let zero = snip.composed_flow(4, 4).unwrap();
        assert!(zero.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dataset_roundtrips_bitwise() {
        let cfg = test_cfg();
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(manifest.snippets, cfg.snippets);

        let back = load_manifest(dir.path()).unwrap();
        assert_eq!(back.frames, cfg.frames);

        let mem = render_snippet(&cfg, 1);
        let disk = load_snippet(dir.path(), &back, 1).unwrap();
        assert_eq!(disk.len(), mem.len());
        for i in 0..mem.len() {
            assert!(disk.frames[i].bit_eq(&mem.frames[i]));
            match (&disk.labels[i], &mem.labels[i]) {
                (Some(a), Some(b)) => assert!(a.bit_eq(b)),
                (None, None) => {}
                _ => panic!("annotation pattern drifted at {i}"),
            }
            if i > 0 {
                assert!(disk.flows[i]
                    .as_ref()
                    .unwrap()
                    .tensor()
                    .bit_eq(mem.flows[i].as_ref().unwrap().tensor()));
            }
        }
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let mut cfg = test_cfg();
        cfg.classes = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = test_cfg();
        cfg.min_shapes = 5;
        cfg.max_shapes = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = test_cfg();
        cfg.annotation_period = 0;
        assert!(cfg.validate().is_err());
    }
}
