// Scratch diagnostic: per-offset quality of joint fine-tuning vs the
// untouched composition, to locate where recognition movement wins or
// loses. Not part of the test suite.

use featflow_core::engine::Variant;
use featflow_core::eval::{evaluate_offsets, evaluate_scheduled};
use featflow_core::nets::{FlowTier, ModelBundle};
use featflow_core::synth::{render_snippet, SynthConfig};
use featflow_core::train::{train, TrainConfig, TrainMode};

fn cfg(snippets: usize, frames: usize, period: usize, seed: u64, shapes: (usize, usize)) -> SynthConfig {
    SynthConfig {
        height: 48,
        width: 48,
        classes: 3,
        snippets,
        frames,
        annotation_period: period,
        seed,
        min_shapes: shapes.0,
        max_shapes: shapes.1,
    }
}

fn render(c: &SynthConfig) -> Vec<featflow_core::synth::Snippet> {
    (0..c.snippets).map(|i| render_snippet(c, i)).collect()
}

fn stage(mode: TrainMode, iters: usize, lr: f64, seed: u64) -> TrainConfig {
    stage_off(mode, iters, lr, seed, 4)
}

fn stage_off(mode: TrainMode, iters: usize, lr: f64, seed: u64, max_offset: usize) -> TrainConfig {
    TrainConfig {
        mode,
        iters,
        lr: lr as featflow_core::tensor::Scalar,
        lr_drop: Some(iters * 2 / 3),
        batch: 2,
        max_offset,
        seed,
    }
}

fn main() {
    let train_set = render(&cfg(40, 12, 2, 1000, (2, 4)));
    let eval_set = render(&cfg(20, 30, 1, 5000, (2, 4)));
    let flow_set = render(&cfg(40, 12, 2, 3000, (1, 1)));

    let mut frame_model = ModelBundle::initialize(3, 24, FlowTier::Full, 7000).unwrap();
    let r = train(&mut frame_model, &train_set, &stage(TrainMode::Frame, 1000, 0.15, 9100)).unwrap();
    println!("frame tail {:.4}", r.tail_mean(10));

    let mut donor = ModelBundle::initialize(3, 24, FlowTier::Full, 7500).unwrap();
    let r = train(&mut donor, &flow_set, &stage_off(TrainMode::FlowEpe, 300, 0.1, 9200, 1)).unwrap();
    println!("epe tail {:.4}", r.tail_mean(10));

    let mut separate = frame_model.clone();
    separate.flow_params = donor.flow_params.clone();

    let mut dff = separate.clone();
    let r = train(&mut dff, &train_set, &stage(TrainMode::Dff, 600, 0.05, 9300)).unwrap();
    println!("dff tail {:.4}", r.tail_mean(10));

    let mut fix_n = separate.clone();
    let r = train(&mut fix_n, &train_set, &stage(TrainMode::DffFixN, 600, 0.05, 9400)).unwrap();
    println!("fix-n tail {:.4}", r.tail_mean(10));

    let mut fix_f = separate.clone();
    let r = train(&mut fix_f, &train_set, &stage(TrainMode::DffFixF, 600, 0.05, 9500)).unwrap();
    println!("fix-f tail {:.4}", r.tail_mean(10));

    let f = evaluate_scheduled(&frame_model, &eval_set, &Variant::Frame, 1).unwrap();
    println!("eval frame {:.4}", f.miou);
    for (name, m) in [("separate", &separate), ("fix-n", &fix_n), ("fix-f", &fix_f), ("dff", &dff)] {
        let sch = evaluate_scheduled(m, &eval_set, &Variant::Dff, 5).unwrap();
        let offs = evaluate_offsets(m, &eval_set, 4).unwrap();
        let row: Vec<String> = offs.iter().map(|o| format!("{:.4}", o.mean_miou)).collect();
        println!("eval {name}: scheduled {:.4} offsets {}", sch.miou, row.join(" "));
    }
}
