//! Subcommand implementations.

use crate::manifest::{self, RunManifest};
use clap::Args;
use featflow_core::cost::{self, reference, Convention};
use featflow_core::engine::{run_inference, Variant};
use featflow_core::eval;
use featflow_core::nets::{self, FlowTier, ModelBundle};
use featflow_core::synth::{self, DatasetManifest, Snippet, SynthConfig};
use featflow_core::train::{train, TrainConfig, TrainMode};
use featflow_core::{threads, Error, Result, Scalar};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidConfig(msg()))
    }
}

fn load_all_snippets(dir: &Path, dm: &DatasetManifest) -> Result<Vec<Snippet>> {
    let indices: Vec<usize> = (0..dm.snippets).collect();
    threads::try_map_ordered(&indices, |&i| synth::load_snippet(dir, dm, i))
}

pub fn parse_variant(name: &str, block: usize, radius: usize) -> Result<Variant> {
    match name {
        "frame" => Ok(Variant::Frame),
        "dff" => Ok(Variant::Dff),
        "sff" => Ok(Variant::Sff { block, radius }),
        other => Err(Error::InvalidConfig(format!(
            "unknown variant {other} (expected frame, dff, or sff)"
        ))),
    }
}

fn parse_schedule(s: &str) -> Result<usize> {
    let bad = || Error::InvalidConfig(format!("schedule must look like fixed:<n>, got {s}"));
    let l: usize = s.strip_prefix("fixed:").ok_or_else(bad)?.parse().map_err(|_| bad())?;
    ensure(l >= 1, || "key interval must be at least 1".into())?;
    Ok(l)
}

fn parse_res(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidConfig(format!("resolution must look like HxW, got {s}"));
    let (h, w) = s.split_once('x').ok_or_else(bad)?;
    let (h, w) = (h.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?);
    ensure(h > 0 && w > 0, bad_dims(s))?;
    Ok((h, w))
}

fn bad_dims(s: &str) -> impl FnOnce() -> String + '_ {
    move || format!("resolution must be positive, got {s}")
}

// ---------------------------------------------------------------- gen-data

#[derive(Args, Serialize, Clone)]
pub struct GenDataArgs {
    /// Dataset directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 48)]
    pub height: usize,
    #[arg(long, default_value_t = 48)]
    pub width: usize,
    /// Foreground classes (1-3).
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 20)]
    pub snippets: usize,
    /// Frames per snippet.
    #[arg(long, default_value_t = 30)]
    pub frames: usize,
    /// Label every n-th frame.
    #[arg(long, default_value_t = 5)]
    pub annotation_period: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub min_shapes: usize,
    #[arg(long, default_value_t = 4)]
    pub max_shapes: usize,
}

pub fn gen_data(args: &GenDataArgs, started: Instant) -> Result<()> {
    let cfg = SynthConfig {
        height: args.height,
        width: args.width,
        classes: args.classes,
        snippets: args.snippets,
        frames: args.frames,
        annotation_period: args.annotation_period,
        seed: args.seed,
        min_shapes: args.min_shapes,
        max_shapes: args.max_shapes,
    };
    let dm = synth::generate_dataset(&cfg, &args.out)?;
    println!(
        "wrote {} snippets x {} frames ({}x{}, {} classes) to {}",
        dm.snippets,
        dm.frames,
        dm.height,
        dm.width,
        dm.classes,
        args.out.display()
    );
    let mut man = RunManifest::new("gen-data", args.clone());
    man.output(&args.out);
    man.write(&args.out.join("run.json"), started)
}

// ------------------------------------------------------------------- train

#[derive(Args, Serialize, Clone)]
pub struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Model directory to write.
    #[arg(long)]
    pub out: PathBuf,
    /// frame | dff | dff-fix-n | dff-fix-f | dff-separate | flow-epe
    #[arg(long, default_value = "dff")]
    pub mode: String,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Iteration after which the rate drops 10x.
    #[arg(long)]
    pub lr_drop: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    /// Largest key-frame offset sampled for propagation.
    #[arg(long, default_value_t = 4)]
    pub max_offset: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feature-net width (channels of its first conv).
    #[arg(long, default_value_t = 24)]
    pub feature_width: usize,
    /// full | half | lite
    #[arg(long, default_value = "full")]
    pub flow_tier: String,
    /// Model directory donating initial feature+task weights.
    #[arg(long)]
    pub feature_init: Option<PathBuf>,
    /// Model directory donating initial flow weights.
    #[arg(long)]
    pub flow_init: Option<PathBuf>,
}

pub fn train_cmd(args: &TrainArgs, started: Instant) -> Result<()> {
    let mode = TrainMode::parse(&args.mode)?;
    let tier = FlowTier::parse(&args.flow_tier)?;
    let dm = synth::load_manifest(&args.data)?;
    let snippets = load_all_snippets(&args.data, &dm)?;
    let mut bundle = ModelBundle::initialize(dm.classes, args.feature_width, tier, args.seed)?;

    if let Some(dir) = &args.feature_init {
        let donor = ModelBundle::load(dir)?;
        ensure(
            donor.meta.classes == bundle.meta.classes
                && donor.meta.feature_width == bundle.meta.feature_width,
            || format!("feature init {} was built for another geometry", dir.display()),
        )?;
        bundle.feature_params = donor.feature_params;
        bundle.task_params = donor.task_params;
    }
    if let Some(dir) = &args.flow_init {
        let donor = ModelBundle::load(dir)?;
        ensure(
            donor.meta.flow_tier == bundle.meta.flow_tier
                && donor.meta.feature_channels == bundle.meta.feature_channels,
            || format!("flow init {} was built for another flow net", dir.display()),
        )?;
        bundle.flow_params = donor.flow_params;
    }

    let cfg = TrainConfig {
        mode,
        iters: args.iters,
        lr: args.lr as Scalar,
        lr_drop: args.lr_drop,
        batch: args.batch,
        max_offset: args.max_offset,
        seed: args.seed,
    };
    let report = train(&mut bundle, &snippets, &cfg)?;
    bundle.meta.train_mode = mode.label().to_string();
    bundle.save(&args.out)?;
    let report_path = args.out.join("train_report.json");
    manifest::write_json_pretty(&report_path, &report)?;
    println!(
        "{} x {} steps: loss {:.4} -> {:.4}, model in {}",
        report.iters,
        cfg.batch,
        report.losses.first().copied().unwrap_or(Scalar::NAN),
        report.last_loss(),
        args.out.display()
    );
    let mut man = RunManifest::new("train", args.clone());
    man.output(&args.out);
    man.write(&args.out.join("run.json"), started)
}

// ------------------------------------------------------------------- infer

#[derive(Args, Serialize, Clone)]
pub struct InferArgs {
    /// Dataset directory holding the video snippets.
    #[arg(long)]
    pub video: PathBuf,
    /// Snippet index within the dataset.
    #[arg(long, default_value_t = 0)]
    pub snippet: usize,
    /// Model directory (from `featflow train`).
    #[arg(long)]
    pub nets: PathBuf,
    /// Key-frame schedule, e.g. fixed:5.
    #[arg(long, default_value = "fixed:5")]
    pub schedule: String,
    /// frame | dff | sff
    #[arg(long, default_value = "dff")]
    pub variant: String,
    /// Block size for the sff matcher (odd).
    #[arg(long, default_value_t = 5)]
    pub block: usize,
    /// Search radius for the sff matcher.
    #[arg(long, default_value_t = 3)]
    pub radius: usize,
    /// Trace file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct TraceFrameOut {
    index: usize,
    is_key: bool,
    flops: f64,
    probs_shape: Vec<usize>,
    probs: Vec<Scalar>,
}

#[derive(Serialize)]
struct TraceOut {
    variant: String,
    key_interval: usize,
    snippet: usize,
    total_flops: f64,
    frames: Vec<TraceFrameOut>,
}

#[derive(Serialize)]
struct TimingOut {
    total_ms: f64,
    per_frame_ms: Vec<f64>,
}

pub fn infer(args: &InferArgs, started: Instant) -> Result<()> {
    let key_interval = parse_schedule(&args.schedule)?;
    let variant = parse_variant(&args.variant, args.block, args.radius)?;
    let bundle = ModelBundle::load(&args.nets)?;
    let dm = synth::load_manifest(&args.video)?;
    let sn = synth::load_snippet(&args.video, &dm, args.snippet)?;
    let trace = run_inference(&bundle, &sn.frames, &variant, key_interval)?;

    let out = TraceOut {
        variant: trace.variant.clone(),
        key_interval,
        snippet: args.snippet,
        total_flops: trace.total_flops(),
        frames: trace
            .frames
            .iter()
            .map(|f| TraceFrameOut {
                index: f.index,
                is_key: f.is_key,
                flops: f.flops,
                probs_shape: f.probs.shape().to_vec(),
                probs: f.probs.data().to_vec(),
            })
            .collect(),
    };
    manifest::write_json_compact(&args.out, &out)?;
    let timing_path = manifest::sibling(&args.out, "timing");
    let timing = TimingOut {
        total_ms: trace.total_ms(),
        per_frame_ms: trace.frames.iter().map(|f| f.ms).collect(),
    };
    manifest::write_json_pretty(&timing_path, &timing)?;
    let keys = trace.frames.iter().filter(|f| f.is_key).count();
    println!(
        "{}: {} frames ({} keys), {:.1} MFLOPs/frame, trace in {}",
        trace.variant,
        trace.frames.len(),
        keys,
        trace.mean_flops_per_frame() / 1e6,
        args.out.display()
    );
    let mut man = RunManifest::new("infer", args.clone());
    man.output(&args.out);
    man.aux(&timing_path);
    man.write(&manifest::sibling(&args.out, "run"), started)
}

// ------------------------------------------------------------------- flops

#[derive(Args, Serialize, Clone)]
pub struct FlopsArgs {
    /// ratio-table | resnet50-dff | resnet101-dff | flownet | flownet-half |
    /// flownet-inception | feature:<width> | flow:<tier>
    #[arg(long, default_value = "ratio-table")]
    pub arch: String,
    /// Input size as HxW.
    #[arg(long, default_value = "600x1000")]
    pub res: String,
    /// Extra cost fraction charged to a flow net for its refinement/head
    /// stages beyond the contracting convolutions.
    #[arg(long, default_value_t = 0.0)]
    pub surcharge: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn flops(args: &FlopsArgs, started: Instant) -> Result<()> {
    let (h, w) = parse_res(&args.res)?;
    let mut man = RunManifest::new("flops", args.clone());

    if args.arch == "ratio-table" {
        let rows = reference::ratio_table(h, w, args.surcharge);
        println!("feature x flow cost ratios at {h}x{w} (surcharge {}):", args.surcharge);
        println!("{:<14} {:<18} {:>10} {:>10} {:>8}", "feature", "flow", "1/r", "reference", "rel err");
        for r in &rows {
            println!(
                "{:<14} {:<18} {:>10.2} {:>10.2} {:>7.1}%",
                r.feature_net,
                r.flow_net,
                r.inverse_r_hat,
                r.reference_value,
                r.relative_error * 100.0
            );
        }
        if let Some(out) = &args.out {
            manifest::write_json_pretty(out, &rows)?;
            man.output(out);
        }
    } else {
        let conv = Convention::conv_only();
        let report = match args.arch.as_str() {
            "resnet50-dff" => reference::resnet_dff(reference::ResNetDepth::R50, conv, h, w),
            "resnet101-dff" => reference::resnet_dff(reference::ResNetDepth::R101, conv, h, w),
            "flownet" => reference::flownet(conv, h, w, args.surcharge),
            "flownet-half" => reference::flownet_half(conv, h, w, args.surcharge),
            "flownet-inception" => reference::flownet_inception(conv, h, w, args.surcharge),
            other => {
                if let Some(width) = other.strip_prefix("feature:") {
                    let width: usize = width.parse().map_err(|_| {
                        Error::InvalidConfig(format!("bad feature width in {other}"))
                    })?;
                    nets::network_cost(&nets::feature_net(width), (3, h, w), &Convention::standard())?
                } else if let Some(tier) = other.strip_prefix("flow:") {
                    let tier = FlowTier::parse(tier)?;
                    let ch = nets::feature_channels(24);
                    nets::network_cost(&nets::flow_net(tier, ch), (6, h, w), &Convention::standard())?
                } else {
                    return Err(Error::InvalidConfig(format!("unknown arch {other}")));
                }
            }
        };
        println!(
            "{} at {h}x{w}: {:.3} GFLOPs total, {:.1} FLOPs/px over {} stages",
            report.name,
            report.total_flops / 1e9,
            report.flops_per_input_pixel,
            report.items.len()
        );
        for wmsg in &report.warnings {
            println!("  note: {wmsg}");
        }
        if let Some(out) = &args.out {
            manifest::write_json_pretty(out, &report)?;
            man.output(out);
        }
    }
    match &args.out {
        Some(out) => man.write(&manifest::sibling(out, "run"), started),
        None => Ok(()),
    }
}

// ----------------------------------------------------------------- speedup

#[derive(Args, Serialize, Clone)]
pub struct SpeedupArgs {
    /// Per-frame cost ratio(s) r = propagated/key, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub r: Vec<f64>,
    /// Inverse ratios 1/r, comma separated (merged with --r).
    #[arg(long, value_delimiter = ',')]
    pub inv_r: Vec<f64>,
    /// Key interval(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub l: Vec<usize>,
    /// Inclusive interval range a..b (merged with --l).
    #[arg(long)]
    pub l_range: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
pub struct SpeedupRow {
    pub r: f64,
    pub inv_r: f64,
    pub key_interval: usize,
    pub speedup: f64,
}

fn parse_interval_range(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidConfig(format!("range must look like a..b, got {s}"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let (a, b) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
    ensure(a >= 1 && b >= a, || format!("empty or zero-based range {s}"))?;
    Ok((a, b))
}

pub fn speedup_cmd(args: &SpeedupArgs, started: Instant) -> Result<()> {
    let mut ratios = args.r.clone();
    ratios.extend(args.inv_r.iter().map(|x| 1.0 / x));
    for r in &ratios {
        ensure(r.is_finite() && *r > 0.0, || format!("ratio {r} out of range"))?;
    }
    let mut intervals = args.l.clone();
    if let Some(range) = &args.l_range {
        let (a, b) = parse_interval_range(range)?;
        intervals.extend(a..=b);
    }
    intervals.sort_unstable();
    intervals.dedup();
    ensure(!ratios.is_empty(), || "need --r or --inv-r".into())?;
    ensure(
        !intervals.is_empty() && intervals[0] >= 1,
        || "need --l or --l-range with intervals >= 1".into(),
    )?;

    let rows: Vec<SpeedupRow> = ratios
        .iter()
        .flat_map(|&r| {
            intervals.iter().map(move |&l| SpeedupRow {
                r,
                inv_r: 1.0 / r,
                key_interval: l,
                speedup: cost::speedup(r, l),
            })
        })
        .collect();
    println!("{:>10} {:>8} {:>9}", "1/r", "interval", "speedup");
    for row in &rows {
        println!("{:>10.2} {:>8} {:>9.3}", row.inv_r, row.key_interval, row.speedup);
    }
    if let Some(out) = &args.out {
        manifest::write_json_pretty(out, &rows)?;
        let mut man = RunManifest::new("speedup", args.clone());
        man.output(out);
        man.write(&manifest::sibling(out, "run"), started)?;
    }
    Ok(())
}

// ------------------------------------------------------------------- sweep

#[derive(Args, Serialize, Clone)]
pub struct SweepArgs {
    /// Evaluation dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Model directory.
    #[arg(long)]
    pub nets: PathBuf,
    /// Comma list drawn from frame, dff, sff.
    #[arg(long, default_value = "frame,dff", value_delimiter = ',')]
    pub variants: Vec<String>,
    /// Key intervals for the propagating variants.
    #[arg(long, default_value = "2,5,10", value_delimiter = ',')]
    pub l: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub block: usize,
    #[arg(long, default_value_t = 3)]
    pub radius: usize,
    /// CSV output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Timed passes per row for the timing sidecar (0 = skip timing).
    #[arg(long, default_value_t = 0)]
    pub timed_runs: usize,
}

#[derive(Serialize)]
struct SweepTimingRow {
    variant: String,
    key_interval: usize,
    median_ms: f64,
    fps: f64,
}

pub fn sweep_cmd(args: &SweepArgs, started: Instant) -> Result<()> {
    let bundle = ModelBundle::load(&args.nets)?;
    let dm = synth::load_manifest(&args.data)?;
    let snippets = load_all_snippets(&args.data, &dm)?;

    let mut grid: Vec<(Variant, usize)> = Vec::new();
    for name in &args.variants {
        if name == "frame" {
            grid.push((Variant::Frame, 1));
            continue;
        }
        let variant = parse_variant(name, args.block, args.radius)?;
        for &l in &args.l {
            ensure(l >= 1, || "key intervals must be >= 1".into())?;
            grid.push((variant.clone(), l));
        }
    }
    ensure(!grid.is_empty(), || "nothing to sweep".into())?;

    let rows = eval::sweep(&bundle, &snippets, &grid)?;
    manifest::write_atomic(&args.out, eval::sweep_csv(&rows).as_bytes())?;
    for r in &rows {
        println!(
            "{:<6} l={:<3} mIoU {:.4}  {:>10.1} kFLOPs/frame  {:>6.2}x",
            r.variant,
            r.key_interval,
            r.miou,
            r.mean_flops_per_frame / 1e3,
            r.speedup_vs_frame
        );
    }

    let mut man = RunManifest::new("sweep", args.clone());
    man.output(&args.out);
    if args.timed_runs > 0 {
        let mut timing = Vec::new();
        for (variant, l) in &grid {
            let stats = eval::timed_inference(&bundle, &snippets, variant, *l, 1, args.timed_runs)?;
            timing.push(SweepTimingRow {
                variant: variant.label(),
                key_interval: *l,
                median_ms: stats.median_ms,
                fps: stats.fps,
            });
        }
        let timing_path = manifest::sibling(&args.out, "timing");
        manifest::write_json_pretty(&timing_path, &timing)?;
        man.aux(&timing_path);
    }
    man.write(&manifest::sibling(&args.out, "run"), started)
}
