//! Computation cost accounting and the key-frame speedup model.
//!
//! Costs are plain f64 FLOP counts, independent of the tensor scalar type.
//! Two counting conventions exist: [`Convention::standard`] charges every op
//! kind and drives the runtime engine's per-frame accounting, while
//! [`Convention::conv_only`] counts only convolution multiply-accumulates and
//! is used for the large reference-architecture tables, where elementwise
//! work is below the table's precision. Bias additions are folded into the
//! multiply-accumulate count in both.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub struct Convention {
    pub flops_per_mac: f64,
    pub pool_per_out_elem: f64,
    pub resize_per_out_elem: f64,
    pub relu_per_elem: f64,
    pub softmax_per_elem: f64,
    pub add_per_elem: f64,
    /// Per warped output element: four kernel terms at one multiply and one
    /// add each, two adds to form the sample position, amortized per channel.
    pub warp_per_out_elem: f64,
    pub scale_per_elem: f64,
}

impl Convention {
    pub fn standard() -> Convention {
        Convention {
            flops_per_mac: 2.0,
            pool_per_out_elem: 1.0,
            resize_per_out_elem: 1.0,
            relu_per_elem: 1.0,
            softmax_per_elem: 3.0,
            add_per_elem: 1.0,
            warp_per_out_elem: 14.0,
            scale_per_elem: 1.0,
        }
    }

    pub fn conv_only() -> Convention {
        Convention {
            flops_per_mac: 2.0,
            pool_per_out_elem: 0.0,
            resize_per_out_elem: 0.0,
            relu_per_elem: 0.0,
            softmax_per_elem: 0.0,
            add_per_elem: 0.0,
            warp_per_out_elem: 0.0,
            scale_per_elem: 0.0,
        }
    }

    /// Uniformly rescaled convention; cost ratios must be invariant to this.
    pub fn scaled(&self, factor: f64) -> Convention {
        Convention {
            flops_per_mac: self.flops_per_mac * factor,
            pool_per_out_elem: self.pool_per_out_elem * factor,
            resize_per_out_elem: self.resize_per_out_elem * factor,
            relu_per_elem: self.relu_per_elem * factor,
            softmax_per_elem: self.softmax_per_elem * factor,
            add_per_elem: self.add_per_elem * factor,
            warp_per_out_elem: self.warp_per_out_elem * factor,
            scale_per_elem: self.scale_per_elem * factor,
        }
    }

    pub fn conv_flops(&self, in_c: usize, out_c: usize, k: usize, out_pixels: usize) -> f64 {
        self.flops_per_mac * (in_c * out_c * k * k * out_pixels) as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CostItem {
    pub label: String,
    pub out_channels: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub flops: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub name: String,
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub items: Vec<CostItem>,
    pub total_flops: f64,
    pub flops_per_input_pixel: f64,
    pub warnings: Vec<String>,
}

/// Running shape-and-cost accumulator for a sequential stack. Spatial
/// reductions use ceiling division (same-padding semantics); a stride that
/// does not divide the extent is recorded as a warning, not an error.
pub struct CostTally {
    name: String,
    conv: Convention,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    input: (usize, usize, usize),
    items: Vec<CostItem>,
    warnings: Vec<String>,
}

impl CostTally {
    pub fn new(name: &str, conv: Convention, channels: usize, height: usize, width: usize) -> Self {
        CostTally {
            name: name.to_string(),
            conv,
            channels,
            height,
            width,
            input: (channels, height, width),
            items: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn downsample(&mut self, label: &str, stride: usize) {
        if stride > 1 && (self.height % stride != 0 || self.width % stride != 0) {
            self.warnings.push(format!(
                "{label}: stride {stride} does not divide {}x{}, rounding up",
                self.height, self.width
            ));
        }
        self.height = self.height.div_ceil(stride);
        self.width = self.width.div_ceil(stride);
    }

    fn push(&mut self, label: &str, flops: f64) {
        self.items.push(CostItem {
            label: label.to_string(),
            out_channels: self.channels,
            out_height: self.height,
            out_width: self.width,
            flops,
        });
    }

    /// Square convolution with same-padding shape semantics; dilation does
    /// not change the cost or the output shape under same padding.
    pub fn conv(&mut self, label: &str, out_c: usize, k: usize, stride: usize) -> &mut Self {
        let in_c = self.channels;
        self.downsample(label, stride);
        self.channels = out_c;
        let f = self
            .conv
            .conv_flops(in_c, out_c, k, self.height * self.width);
        self.push(label, f);
        self
    }

    pub fn pool(&mut self, label: &str, stride: usize) -> &mut Self {
        self.downsample(label, stride);
        let f = self.conv.pool_per_out_elem * (self.channels * self.height * self.width) as f64;
        self.push(label, f);
        self
    }

    pub fn relu(&mut self, label: &str) -> &mut Self {
        let f = self.conv.relu_per_elem * (self.channels * self.height * self.width) as f64;
        self.push(label, f);
        self
    }

    pub fn resize_to(&mut self, label: &str, h: usize, w: usize) -> &mut Self {
        self.height = h;
        self.width = w;
        let f = self.conv.resize_per_out_elem * (self.channels * h * w) as f64;
        self.push(label, f);
        self
    }

    pub fn softmax(&mut self, label: &str) -> &mut Self {
        let f = self.conv.softmax_per_elem * (self.channels * self.height * self.width) as f64;
        self.push(label, f);
        self
    }

    pub fn warp(&mut self, label: &str) -> &mut Self {
        let f = self.conv.warp_per_out_elem * (self.channels * self.height * self.width) as f64;
        self.push(label, f);
        self
    }

    pub fn scale_apply(&mut self, label: &str) -> &mut Self {
        let f = self.conv.scale_per_elem * (self.channels * self.height * self.width) as f64;
        self.push(label, f);
        self
    }

    /// Pre-computed cost (branchy blocks); updates channels and optionally
    /// strides the grid first.
    pub fn raw(&mut self, label: &str, flops: f64, out_c: usize, stride: usize) -> &mut Self {
        self.downsample(label, stride);
        self.channels = out_c;
        self.push(label, flops);
        self
    }

    /// One item worth `fraction` of everything tallied so far.
    pub fn surcharge(&mut self, label: &str, fraction: f64) -> &mut Self {
        let so_far: f64 = self.items.iter().map(|i| i.flops).sum();
        let f = so_far * fraction;
        self.push(label, f);
        self
    }

    pub fn total(&self) -> f64 {
        self.items.iter().map(|i| i.flops).sum()
    }

    pub fn finish(self) -> CostReport {
        let total: f64 = self.items.iter().map(|i| i.flops).sum();
        let px = (self.input.1 * self.input.2) as f64;
        CostReport {
            name: self.name,
            input_channels: self.input.0,
            input_height: self.input.1,
            input_width: self.input.2,
            items: self.items,
            total_flops: total,
            flops_per_input_pixel: total / px,
            warnings: self.warnings,
        }
    }
}

/// Per-frame cost split of the sparse-key-frame pipeline.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PerFrameCosts {
    /// Full feature extraction plus task head.
    pub key_frame: f64,
    /// Flow estimation, propagation, and task head.
    pub non_key_frame: f64,
}

impl PerFrameCosts {
    /// Cost ratio of a propagated frame to a fully computed one.
    pub fn ratio(&self) -> f64 {
        self.non_key_frame / self.key_frame
    }

    pub fn mean_flops(&self, key_interval: usize) -> f64 {
        let l = key_interval as f64;
        (self.key_frame + (l - 1.0) * self.non_key_frame) / l
    }
}

/// Predicted speedup of running one key frame per `l` frames when a
/// propagated frame costs `r` times a full one: `l / (1 + (l - 1) * r)`.
pub fn speedup(r: f64, key_interval: usize) -> f64 {
    let l = key_interval as f64;
    l / (1.0 + (l - 1.0) * r)
}

pub fn speedup_curve(r: f64, max_interval: usize) -> Vec<(usize, f64)> {
    (1..=max_interval).map(|l| (l, speedup(r, l))).collect()
}

/// Hand-encoded cost tables for the reference architectures the ratio
/// analysis is calibrated against. Only convolution MACs are charged; see
/// module docs.
pub mod reference {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum ResNetDepth {
        R50,
        R101,
    }

    /// Bottleneck residual block, stride on the 3x3, projection shortcut
    /// when the block changes shape.
    fn bottleneck(t: &mut CostTally, label: &str, mid: usize, out: usize, stride: usize) {
        let in_c = t.channels;
        let project = stride != 1 || in_c != out;
        t.conv(&format!("{label}.a"), mid, 1, 1);
        t.conv(&format!("{label}.b"), mid, 3, stride);
        t.conv(&format!("{label}.c"), out, 1, 1);
        if project {
            // Projection runs on the block input at the output grid.
            let f = t
                .conv_convention()
                .conv_flops(in_c, out, 1, t.height * t.width);
            t.push_raw(&format!("{label}.proj"), f);
        }
    }

    impl CostTally {
        fn conv_convention(&self) -> Convention {
            self.conv.clone()
        }
        fn push_raw(&mut self, label: &str, flops: f64) {
            self.push(label, flops);
        }
        fn amend_last(&mut self, flops: f64) {
            if let Some(last) = self.items.last_mut() {
                last.flops = flops;
            }
        }
    }

    /// Feature extractor: residual stages with the last stage dilated at
    /// stride 1 (output stride 16), then a dilated 3x3 reduction to 1024
    /// channels.
    pub fn resnet_dff(depth: ResNetDepth, conv: Convention, h: usize, w: usize) -> CostReport {
        let name = match depth {
            ResNetDepth::R50 => "resnet50-dff",
            ResNetDepth::R101 => "resnet101-dff",
        };
        let conv4_blocks = match depth {
            ResNetDepth::R50 => 6,
            ResNetDepth::R101 => 23,
        };
        let mut t = CostTally::new(name, conv, 3, h, w);
        t.conv("conv1", 64, 7, 2);
        t.pool("pool1", 2);
        for b in 0..3 {
            bottleneck(&mut t, &format!("conv2.{b}"), 64, 256, 1);
        }
        for b in 0..4 {
            bottleneck(&mut t, &format!("conv3.{b}"), 128, 512, if b == 0 { 2 } else { 1 });
        }
        for b in 0..conv4_blocks {
            bottleneck(&mut t, &format!("conv4.{b}"), 256, 1024, if b == 0 { 2 } else { 1 });
        }
        // Final stage keeps stride 16 via dilation instead of striding.
        for b in 0..3 {
            bottleneck(&mut t, &format!("conv5.{b}"), 512, 2048, 1);
        }
        t.conv("reduce", 1024, 3, 1);
        t.finish()
    }

    /// Contracting part of the encoder-style flow network, on its own
    /// (already half-sized) input. `head_surcharge` models the flow
    /// prediction and refinement path as a fraction of the contracting cost.
    pub fn flownet(conv: Convention, h: usize, w: usize, head_surcharge: f64) -> CostReport {
        let mut t = CostTally::new("flownet", conv, 6, h, w);
        t.conv("conv1", 64, 7, 2);
        t.conv("conv2", 128, 5, 2);
        t.conv("conv3", 256, 5, 2);
        t.conv("conv3_1", 256, 3, 1);
        t.conv("conv4", 512, 3, 2);
        t.conv("conv4_1", 512, 3, 1);
        t.conv("conv5", 512, 3, 2);
        t.conv("conv5_1", 512, 3, 1);
        t.conv("conv6", 1024, 3, 2);
        t.conv("conv6_1", 1024, 3, 1);
        if head_surcharge > 0.0 {
            t.surcharge("head+refine", head_surcharge);
        }
        t.finish()
    }

    /// Same layout at half the channel width everywhere (about a quarter of
    /// the multiplies).
    pub fn flownet_half(conv: Convention, h: usize, w: usize, head_surcharge: f64) -> CostReport {
        let mut t = CostTally::new("flownet-half", conv, 6, h, w);
        t.conv("conv1", 32, 7, 2);
        t.conv("conv2", 64, 5, 2);
        t.conv("conv3", 128, 5, 2);
        t.conv("conv3_1", 128, 3, 1);
        t.conv("conv4", 256, 3, 2);
        t.conv("conv4_1", 256, 3, 1);
        t.conv("conv5", 256, 3, 2);
        t.conv("conv5_1", 256, 3, 1);
        t.conv("conv6", 512, 3, 2);
        t.conv("conv6_1", 512, 3, 1);
        if head_surcharge > 0.0 {
            t.surcharge("head+refine", head_surcharge);
        }
        t.finish()
    }

    /// Mixed-branch block: 1x1, 1x1->3x3, and 1x1->3x3->3x3 paths, all at
    /// stride 1. `b1` may be zero (branch absent). Returns MACs.
    fn mixed_block(in_c: usize, b1: usize, r3: usize, b3: usize, r5: usize, m5: usize, b5: usize) -> (f64, usize) {
        let mut macs = 0u64;
        if b1 > 0 {
            macs += (in_c * b1) as u64;
        }
        macs += (in_c * r3 + r3 * b3 * 9) as u64;
        macs += (in_c * r5 + r5 * m5 * 9 + m5 * b5 * 9) as u64;
        (macs as f64, b1 + b3 + b5)
    }

    /// Stride-2 variant: reducers run on the input grid, 3x3s and the plain
    /// 1x1 land on the output grid, plus a pooled 1x1 projection branch.
    /// Returns (input-grid MACs, output-grid MACs, out channels).
    fn reduction_block(
        in_c: usize,
        b1: usize,
        r3: usize,
        b3: usize,
        r5: usize,
        m5: usize,
        b5: usize,
        pool_proj: usize,
    ) -> (f64, f64, usize) {
        let in_grid = (in_c * r3 + in_c * r5) as f64;
        let out_grid =
            (in_c * b1 + r3 * b3 * 9 + r5 * m5 * 9 + m5 * b5 * 9 + in_c * pool_proj) as f64;
        (in_grid, out_grid, b1 + b3 + b5 + pool_proj)
    }

    /// Mixed-branch flow network from the same family, built for a lower
    /// cost envelope than the plain encoder.
    pub fn flownet_inception(
        conv: Convention,
        h: usize,
        w: usize,
        head_surcharge: f64,
    ) -> CostReport {
        let mac = |t: &CostTally| t.conv_convention().flops_per_mac;
        let mut t = CostTally::new("flownet-inception", conv, 6, h, w);
        t.conv("conv1", 32, 7, 2);
        t.pool("pool1", 2);

        let px = |t: &CostTally| (t.height * t.width) as f64;
        let (m, c) = mixed_block(32, 0, 24, 32, 24, 32, 32);
        let f = m * px(&t) * mac(&t);
        t.raw("conv2", f, c, 1);

        t.conv("conv3_1", 128, 3, 2);
        let (m, c) = mixed_block(128, 48, 32, 64, 8, 16, 16);
        let f = m * px(&t) * mac(&t);
        t.raw("conv3_2", f, c, 1);
        let (m, c) = mixed_block(128, 48, 48, 64, 12, 16, 16);
        let f = m * px(&t) * mac(&t);
        t.raw("conv3_3", f, c, 1);

        let (mi, mo, c) = reduction_block(128, 32, 112, 128, 28, 32, 32, 64);
        let f_in = mi * px(&t) * mac(&t);
        t.raw("conv4_1", 0.0, c, 2);
        let f = f_in + mo * px(&t) * mac(&t);
        t.amend_last(f);
        let (m, c) = mixed_block(256, 96, 112, 128, 28, 32, 32);
        let f = m * px(&t) * mac(&t);
        t.raw("conv4_2", f, c, 1);

        let (mi, mo, c) = reduction_block(256, 48, 96, 192, 36, 48, 48, 96);
        let f_in = mi * px(&t) * mac(&t);
        t.raw("conv5_1", 0.0, c, 2);
        let f = f_in + mo * px(&t) * mac(&t);
        t.amend_last(f);
        let (m, c) = mixed_block(384, 144, 96, 192, 36, 48, 48);
        let f = m * px(&t) * mac(&t);
        t.raw("conv5_2", f, c, 1);

        let (mi, mo, c) = reduction_block(384, 64, 192, 256, 48, 64, 64, 128);
        let f_in = mi * px(&t) * mac(&t);
        t.raw("conv6_1", 0.0, c, 2);
        let f = f_in + mo * px(&t) * mac(&t);
        t.amend_last(f);
        let (m, c) = mixed_block(512, 192, 192, 256, 48, 64, 64);
        let f = m * px(&t) * mac(&t);
        t.raw("conv6_2", f, c, 1);

        if head_surcharge > 0.0 {
            t.surcharge("head+refine", head_surcharge);
        }
        t.finish()
    }

    #[derive(Debug, Clone, Serialize)]
    pub struct RatioRow {
        pub feature_net: String,
        pub flow_net: String,
        /// Feature-extraction cost over flow-estimation cost at matched
        /// image size; flow runs on a half-sized input.
        pub inverse_r_hat: f64,
        /// Ratio this implementation aims to reproduce.
        pub reference_value: f64,
        pub relative_error: f64,
    }

    /// The six feature/flow pairings at the given full image size.
    pub fn ratio_table(h: usize, w: usize, head_surcharge: f64) -> Vec<RatioRow> {
        let conv = Convention::conv_only;
        let features = [
            resnet_dff(ResNetDepth::R50, conv(), h, w),
            resnet_dff(ResNetDepth::R101, conv(), h, w),
        ];
        let flows = [
            flownet(conv(), h / 2, w / 2, head_surcharge),
            flownet_half(conv(), h / 2, w / 2, head_surcharge),
            flownet_inception(conv(), h / 2, w / 2, head_surcharge),
        ];
        let targets = [[9.20, 33.56, 68.97], [12.71, 46.30, 95.24]];
        let mut rows = Vec::new();
        for (fi, feat) in features.iter().enumerate() {
            for (mi, flow) in flows.iter().enumerate() {
                let inv = feat.total_flops / flow.total_flops;
                let target = targets[fi][mi];
                rows.push(RatioRow {
                    feature_net: feat.name.clone(),
                    flow_net: flow.name.clone(),
                    inverse_r_hat: inv,
                    reference_value: target,
                    relative_error: (inv - target) / target,
                });
            }
        }
        rows
    }
}
