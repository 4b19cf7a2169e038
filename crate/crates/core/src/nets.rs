//! Small trainable networks described by declarative layer graphs.
//!
//! A [`NetworkSpec`] is a topologically ordered list of layers; each layer
//! names its inputs (earlier layers, or the reserved name `input`). Forward
//! passes return every activation keyed by layer name, and the hand-written
//! backward pass walks the graph in reverse, so any spec that validates is
//! trainable without an autograd system.
//!
//! Parameter initialization is deterministic in the seed: conv layers are
//! drawn in spec order from one seeded stream.

use crate::cost::{Convention, CostItem, CostReport};
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const INPUT_NAME: &str = "input";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv,
    Relu,
    Maxpool,
    /// Output extent is `in * kernel / stride` per axis (exact division
    /// required); `kernel` and `stride` double as the scale numerator and
    /// denominator.
    BilinearResize,
    /// Produces per-pixel class probabilities on plain forward; terminal
    /// layer for loss-bearing passes.
    SoftmaxCrossEntropy,
    Concat,
    Add,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
    #[serde(default)]
    pub in_channels: usize,
    #[serde(default)]
    pub out_channels: usize,
    #[serde(default)]
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "one")]
    pub dilation: usize,
    #[serde(default)]
    pub padding: usize,
}

impl LayerSpec {
    fn conv(name: &str, inputs: &[&str], in_c: usize, out_c: usize, k: usize) -> LayerSpec {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            in_channels: in_c,
            out_channels: out_c,
            kernel: k,
            stride: 1,
            dilation: 1,
            padding: 0,
        }
    }

    fn strided(mut self, stride: usize) -> LayerSpec {
        self.stride = stride;
        self
    }

    fn dilated(mut self, dilation: usize, padding: usize) -> LayerSpec {
        self.dilation = dilation;
        self.padding = padding;
        self
    }

    fn padded(mut self, padding: usize) -> LayerSpec {
        self.padding = padding;
        self
    }

    fn simple(name: &str, kind: LayerKind, inputs: &[&str]) -> LayerSpec {
        LayerSpec {
            name: name.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            in_channels: 0,
            out_channels: 0,
            kernel: 0,
            stride: 1,
            dilation: 1,
            padding: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub split_point: Option<String>,
}

impl NetworkSpec {
    pub fn output_layer(&self) -> &str {
        &self.layers.last().expect("validated non-empty").name
    }

    /// Structural validation: unique names, inputs resolve to earlier layers,
    /// arity per kind, conv geometry present, loss layer only terminal.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidSpec(format!("network {}: no layers", self.name)));
        }
        let mut seen: Vec<&str> = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            let ctx = format!("network {} layer {}", self.name, layer.name);
            if layer.name.is_empty() || layer.name == INPUT_NAME || layer.name.contains('/') {
                return Err(Error::InvalidSpec(format!("{ctx}: reserved or unusable name")));
            }
            if seen.contains(&layer.name.as_str()) {
                return Err(Error::InvalidSpec(format!("{ctx}: duplicate name")));
            }
            for input in &layer.inputs {
                if input != INPUT_NAME && !seen.contains(&input.as_str()) {
                    return Err(Error::InvalidSpec(format!(
                        "{ctx}: input {input} is not an earlier layer"
                    )));
                }
            }
            let arity = layer.inputs.len();
            match layer.kind {
                LayerKind::Conv => {
                    if arity != 1 {
                        return Err(Error::InvalidSpec(format!("{ctx}: conv takes one input")));
                    }
                    if layer.in_channels == 0
                        || layer.out_channels == 0
                        || layer.kernel == 0
                        || layer.stride == 0
                        || layer.dilation == 0
                    {
                        return Err(Error::InvalidSpec(format!("{ctx}: incomplete conv geometry")));
                    }
                }
                LayerKind::Relu | LayerKind::SoftmaxCrossEntropy => {
                    if arity != 1 {
                        return Err(Error::InvalidSpec(format!("{ctx}: takes one input")));
                    }
                }
                LayerKind::Maxpool => {
                    if arity != 1 || layer.kernel == 0 || layer.stride == 0 {
                        return Err(Error::InvalidSpec(format!("{ctx}: bad pool geometry")));
                    }
                }
                LayerKind::BilinearResize => {
                    if arity != 1 || layer.kernel == 0 || layer.stride == 0 {
                        return Err(Error::InvalidSpec(format!("{ctx}: bad resize factors")));
                    }
                }
                LayerKind::Concat | LayerKind::Add => {
                    if arity < 2 {
                        return Err(Error::InvalidSpec(format!("{ctx}: needs two or more inputs")));
                    }
                }
            }
            if layer.kind == LayerKind::SoftmaxCrossEntropy && idx + 1 != self.layers.len() {
                return Err(Error::InvalidSpec(format!("{ctx}: loss layer must be terminal")));
            }
            seen.push(&layer.name);
        }
        if let Some(sp) = &self.split_point {
            if !self.layers.iter().any(|l| &l.name == sp) {
                return Err(Error::InvalidSpec(format!(
                    "network {}: split point {sp} not found",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Cut the network after `split_point`. The tail re-reads the cut
    /// activation as its `input`; any tail reference to another head layer
    /// means the cut is not a clean seam and is rejected.
    pub fn split(&self) -> Result<(NetworkSpec, NetworkSpec)> {
        let sp = self.split_point.as_ref().ok_or_else(|| {
            Error::InvalidSpec(format!("network {}: no split point", self.name))
        })?;
        self.validate()?;
        let cut = self
            .layers
            .iter()
            .position(|l| &l.name == sp)
            .expect("validated");
        let head_names: Vec<&str> = self.layers[..cut].iter().map(|l| l.name.as_str()).collect();
        let mut tail_layers = Vec::new();
        for layer in &self.layers[cut + 1..] {
            let mut l = layer.clone();
            for input in &mut l.inputs {
                if input == sp {
                    *input = INPUT_NAME.into();
                } else if head_names.contains(&input.as_str()) {
                    return Err(Error::InvalidSpec(format!(
                        "network {}: layer {} reaches past the split point",
                        self.name, layer.name
                    )));
                }
            }
            tail_layers.push(l);
        }
        if tail_layers.is_empty() {
            return Err(Error::InvalidSpec(format!(
                "network {}: nothing after split point",
                self.name
            )));
        }
        Ok((
            NetworkSpec {
                name: format!("{}-head", self.name),
                layers: self.layers[..=cut].to_vec(),
                split_point: None,
            },
            NetworkSpec {
                name: format!("{}-tail", self.name),
                layers: tail_layers,
                split_point: None,
            },
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

pub type Parameters = BTreeMap<String, LayerParams>;

/// He-uniform weights, zero biases, one seeded stream in spec order.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Parameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Parameters::new();
    for layer in &spec.layers {
        if layer.kind != LayerKind::Conv {
            continue;
        }
        let fan_in = (layer.in_channels * layer.kernel * layer.kernel) as Scalar;
        let bound = (6.0 / fan_in).sqrt();
        let weight = Tensor::from_fn(
            &[layer.out_channels, layer.in_channels, layer.kernel, layer.kernel],
            |_| rng.random_range(-bound..bound),
        );
        params.insert(
            layer.name.clone(),
            LayerParams {
                weight,
                bias: Tensor::zeros(&[layer.out_channels]),
            },
        );
    }
    params
}

/// Re-initialize the output rows `first_row..` of one conv head to emit an
/// exact constant 1: weights zeroed, biases set to one. Used for the scale
/// channels of a flow head so propagation starts as a pure warp.
pub fn init_constant_one_rows(params: &mut Parameters, layer: &str, first_row: usize) -> Result<()> {
    let lp = params
        .get_mut(layer)
        .ok_or_else(|| Error::InvalidSpec(format!("no parameters for layer {layer}")))?;
    let [out_c, in_c, kh, kw] = lp.weight.shape() else {
        return Err(Error::InvalidSpec(format!("layer {layer} has no conv weight")));
    };
    let (out_c, in_c, kh, kw) = (*out_c, *in_c, *kh, *kw);
    if first_row >= out_c {
        return Err(Error::InvalidSpec(format!(
            "layer {layer}: row {first_row} out of {out_c}"
        )));
    }
    let row = in_c * kh * kw;
    for oc in first_row..out_c {
        for v in &mut lp.weight.data_mut()[oc * row..(oc + 1) * row] {
            *v = 0.0;
        }
        lp.bias.data_mut()[oc] = 1.0;
    }
    Ok(())
}

pub struct Activations {
    pub values: BTreeMap<String, Tensor>,
    argmax: BTreeMap<String, Vec<usize>>,
}

impl Activations {
    pub fn output<'a>(&'a self, spec: &NetworkSpec) -> &'a Tensor {
        &self.values[spec.output_layer()]
    }
}

fn resize_target(layer: &LayerSpec, h: usize, w: usize) -> Result<(usize, usize)> {
    let th = h * layer.kernel;
    let tw = w * layer.kernel;
    if th % layer.stride != 0 || tw % layer.stride != 0 {
        return Err(Error::InvalidSpec(format!(
            "layer {}: resize {}x{} by {}/{} is not integral",
            layer.name, h, w, layer.kernel, layer.stride
        )));
    }
    Ok((th / layer.stride, tw / layer.stride))
}

fn params_for<'a>(params: &'a Parameters, layer: &LayerSpec) -> Result<&'a LayerParams> {
    params.get(&layer.name).ok_or_else(|| {
        Error::InvalidSpec(format!("missing parameters for conv layer {}", layer.name))
    })
}

/// Run the graph on a `CxHxW` input. A terminal loss layer contributes its
/// softmax probabilities, so inference and training share one spec.
pub fn forward(spec: &NetworkSpec, params: &Parameters, input: &Tensor) -> Result<Activations> {
    spec.validate()?;
    input.dims3("network input")?;
    let mut acts = Activations {
        values: BTreeMap::new(),
        argmax: BTreeMap::new(),
    };
    acts.values.insert(INPUT_NAME.into(), input.clone());
    for layer in &spec.layers {
        let ins: Vec<&Tensor> = layer.inputs.iter().map(|n| &acts.values[n]).collect();
        let out = match layer.kind {
            LayerKind::Conv => {
                let lp = params_for(params, layer)?;
                let (c, _, _) = ins[0].dims3("conv input")?;
                if c != layer.in_channels {
                    return Err(Error::ShapeMismatch {
                        context: "conv input channels",
                        expected: format!("{} at layer {}", layer.in_channels, layer.name),
                        got: format!("{c}"),
                    });
                }
                ops::conv2d_forward(ins[0], &lp.weight, &lp.bias, layer.stride, layer.dilation, layer.padding)?
            }
            LayerKind::Relu => ops::relu_forward(ins[0]),
            LayerKind::Maxpool => {
                let pool = ops::maxpool_forward(ins[0], layer.kernel, layer.stride, layer.padding)?;
                acts.argmax.insert(layer.name.clone(), pool.argmax);
                pool.output
            }
            LayerKind::BilinearResize => {
                let (_, h, w) = ins[0].dims3("resize input")?;
                let (th, tw) = resize_target(layer, h, w)?;
                ops::bilinear_resize_forward(ins[0], th, tw)?
            }
            LayerKind::SoftmaxCrossEntropy => ops::softmax_channels(ins[0])?,
            LayerKind::Concat => ops::concat_channels(&ins)?,
            LayerKind::Add => ops::add_forward(ins[0], ins[1])?,
        };
        acts.values.insert(layer.name.clone(), out);
    }
    Ok(acts)
}

/// Forward plus the mean cross-entropy of the terminal loss layer.
pub fn forward_loss(
    spec: &NetworkSpec,
    params: &Parameters,
    input: &Tensor,
    labels: &Tensor,
) -> Result<(Scalar, Activations)> {
    let terminal = spec.layers.last().ok_or_else(|| {
        Error::InvalidSpec(format!("network {}: no layers", spec.name))
    })?;
    if terminal.kind != LayerKind::SoftmaxCrossEntropy {
        return Err(Error::InvalidSpec(format!(
            "network {}: terminal layer is not a loss layer",
            spec.name
        )));
    }
    let acts = forward(spec, params, input)?;
    let logits = &acts.values[&terminal.inputs[0]];
    let out = ops::softmax_xent_forward(logits, labels)?;
    Ok((out.loss, acts))
}

pub struct BackwardOut {
    pub grads: BTreeMap<String, LayerParams>,
    pub grad_input: Tensor,
}

fn run_backward(
    spec: &NetworkSpec,
    params: &Parameters,
    acts: &Activations,
    mut grad_acts: BTreeMap<String, Tensor>,
    skip_terminal: bool,
) -> Result<BackwardOut> {
    let mut grads: BTreeMap<String, LayerParams> = BTreeMap::new();
    let take = |map: &mut BTreeMap<String, Tensor>, name: &str, like: &Tensor| -> Tensor {
        map.remove(name)
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    };
    let add_into = |map: &mut BTreeMap<String, Tensor>, name: &str, g: Tensor| {
        match map.remove(name) {
            Some(mut acc) => {
                acc.axpy(1.0, &g).expect("matching grad shapes");
                map.insert(name.into(), acc);
            }
            None => {
                map.insert(name.into(), g);
            }
        }
    };

    let skip_from = if skip_terminal { spec.layers.len() - 1 } else { spec.layers.len() };
    for (idx, layer) in spec.layers.iter().enumerate().rev() {
        if idx >= skip_from {
            continue;
        }
        let out_act = &acts.values[&layer.name];
        let g_out = take(&mut grad_acts, &layer.name, out_act);
        match layer.kind {
            LayerKind::Conv => {
                let lp = params_for(params, layer)?;
                let x = &acts.values[&layer.inputs[0]];
                let (gx, gw, gb) =
                    ops::conv2d_backward(x, &lp.weight, layer.stride, layer.dilation, layer.padding, &g_out)?;
                grads.insert(layer.name.clone(), LayerParams { weight: gw, bias: gb });
                add_into(&mut grad_acts, &layer.inputs[0], gx);
            }
            LayerKind::Relu => {
                let x = &acts.values[&layer.inputs[0]];
                add_into(&mut grad_acts, &layer.inputs[0], ops::relu_backward(x, &g_out)?);
            }
            LayerKind::Maxpool => {
                let x = &acts.values[&layer.inputs[0]];
                let pool = ops::MaxPoolOut {
                    output: out_act.clone(),
                    argmax: acts.argmax[&layer.name].clone(),
                };
                add_into(
                    &mut grad_acts,
                    &layer.inputs[0],
                    ops::maxpool_backward(x.shape(), &pool, &g_out)?,
                );
            }
            LayerKind::BilinearResize => {
                let x = &acts.values[&layer.inputs[0]];
                add_into(
                    &mut grad_acts,
                    &layer.inputs[0],
                    ops::bilinear_resize_backward(x.shape(), &g_out)?,
                );
            }
            LayerKind::SoftmaxCrossEntropy => {
                // Mid-graph softmax on a plain backward is unsupported; the
                // validate() terminal rule keeps this unreachable.
                return Err(Error::InvalidSpec(format!(
                    "layer {}: cannot backprop through inference softmax",
                    layer.name
                )));
            }
            LayerKind::Concat => {
                let splits: Vec<usize> = layer
                    .inputs
                    .iter()
                    .map(|n| acts.values[n].shape()[0])
                    .collect();
                let parts = ops::concat_backward(&g_out, &splits)?;
                for (input, part) in layer.inputs.iter().zip(parts) {
                    add_into(&mut grad_acts, input, part);
                }
            }
            LayerKind::Add => {
                add_into(&mut grad_acts, &layer.inputs[0], g_out.clone());
                add_into(&mut grad_acts, &layer.inputs[1], g_out);
            }
        }
    }
    let input_act = &acts.values[INPUT_NAME];
    let grad_input = take(&mut grad_acts, INPUT_NAME, input_act);
    Ok(BackwardOut { grads, grad_input })
}

/// Backward from an explicit gradient on the network output (the output must
/// not be a loss layer).
pub fn backward(
    spec: &NetworkSpec,
    params: &Parameters,
    acts: &Activations,
    grad_output: &Tensor,
) -> Result<BackwardOut> {
    let terminal = spec.layers.last().expect("validated");
    if terminal.kind == LayerKind::SoftmaxCrossEntropy {
        return Err(Error::InvalidSpec(format!(
            "network {}: use backward_from_loss for the loss terminal",
            spec.name
        )));
    }
    let mut seed = BTreeMap::new();
    seed.insert(terminal.name.clone(), grad_output.clone());
    run_backward(spec, params, acts, seed, false)
}

/// Backward of the mean cross-entropy at the terminal loss layer.
pub fn backward_from_loss(
    spec: &NetworkSpec,
    params: &Parameters,
    acts: &Activations,
    labels: &Tensor,
) -> Result<BackwardOut> {
    let terminal = spec.layers.last().expect("validated");
    if terminal.kind != LayerKind::SoftmaxCrossEntropy {
        return Err(Error::InvalidSpec(format!(
            "network {}: terminal layer is not a loss layer",
            spec.name
        )));
    }
    let probs = &acts.values[&terminal.name];
    let grad_logits = ops::softmax_xent_backward(probs, labels)?;
    let mut seed = BTreeMap::new();
    seed.insert(terminal.inputs[0].clone(), grad_logits);
    run_backward(spec, params, acts, seed, true)
}

/// Shape of every layer output for a given input shape, without running any
/// arithmetic. Must agree with [`forward`]; the cost report is built on it.
pub fn layer_shapes(
    spec: &NetworkSpec,
    input: (usize, usize, usize),
) -> Result<Vec<(String, (usize, usize, usize))>> {
    spec.validate()?;
    let mut shapes: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    shapes.insert(INPUT_NAME.into(), input);
    let mut out = Vec::new();
    for layer in &spec.layers {
        let ins: Vec<(usize, usize, usize)> =
            layer.inputs.iter().map(|n| shapes[n]).collect();
        let (c, h, w) = ins[0];
        let shape = match layer.kind {
            LayerKind::Conv => {
                if c != layer.in_channels {
                    return Err(Error::ShapeMismatch {
                        context: "conv input channels",
                        expected: format!("{} at layer {}", layer.in_channels, layer.name),
                        got: format!("{c}"),
                    });
                }
                (
                    layer.out_channels,
                    ops::conv_output_extent(h, layer.kernel, layer.stride, layer.dilation, layer.padding)?,
                    ops::conv_output_extent(w, layer.kernel, layer.stride, layer.dilation, layer.padding)?,
                )
            }
            LayerKind::Relu | LayerKind::SoftmaxCrossEntropy => (c, h, w),
            LayerKind::Maxpool => (
                c,
                ops::conv_output_extent(h, layer.kernel, layer.stride, 1, layer.padding)?,
                ops::conv_output_extent(w, layer.kernel, layer.stride, 1, layer.padding)?,
            ),
            LayerKind::BilinearResize => {
                let (th, tw) = resize_target(layer, h, w)?;
                (c, th, tw)
            }
            LayerKind::Concat => {
                let total: usize = ins.iter().map(|s| s.0).sum();
                for s in &ins {
                    if (s.1, s.2) != (h, w) {
                        return Err(Error::ShapeMismatch {
                            context: "concat spatial dims",
                            expected: format!("{h}x{w}"),
                            got: format!("{}x{}", s.1, s.2),
                        });
                    }
                }
                (total, h, w)
            }
            LayerKind::Add => {
                if ins[1] != ins[0] {
                    return Err(Error::ShapeMismatch {
                        context: "add operands",
                        expected: format!("{:?}", ins[0]),
                        got: format!("{:?}", ins[1]),
                    });
                }
                (c, h, w)
            }
        };
        shapes.insert(layer.name.clone(), shape);
        out.push((layer.name.clone(), shape));
    }
    Ok(out)
}

/// Itemized FLOP cost of one forward pass at the given input shape.
pub fn network_cost(
    spec: &NetworkSpec,
    input: (usize, usize, usize),
    conv: &Convention,
) -> Result<CostReport> {
    let shapes = layer_shapes(spec, input)?;
    let mut items = Vec::new();
    for (layer, (name, (c, h, w))) in spec.layers.iter().zip(&shapes) {
        let elems = (c * h * w) as f64;
        let flops = match layer.kind {
            LayerKind::Conv => conv.conv_flops(layer.in_channels, layer.out_channels, layer.kernel, h * w),
            LayerKind::Relu => conv.relu_per_elem * elems,
            LayerKind::Maxpool => conv.pool_per_out_elem * elems,
            LayerKind::BilinearResize => conv.resize_per_out_elem * elems,
            LayerKind::SoftmaxCrossEntropy => conv.softmax_per_elem * elems,
            LayerKind::Concat => 0.0,
            LayerKind::Add => conv.add_per_elem * elems,
        };
        items.push(CostItem {
            label: name.clone(),
            out_channels: *c,
            out_height: *h,
            out_width: *w,
            flops,
        });
    }
    let total: f64 = items.iter().map(|i| i.flops).sum();
    Ok(CostReport {
        name: spec.name.clone(),
        input_channels: input.0,
        input_height: input.1,
        input_width: input.2,
        items,
        total_flops: total,
        flops_per_input_pixel: total / (input.1 * input.2) as f64,
        warnings: Vec::new(),
    })
}

/// Flow-network tiers, ordered by cost envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowTier {
    Full,
    Half,
    Lite,
}

impl FlowTier {
    pub fn parse(s: &str) -> Result<FlowTier> {
        match s {
            "full" => Ok(FlowTier::Full),
            "half" => Ok(FlowTier::Half),
            "lite" => Ok(FlowTier::Lite),
            other => Err(Error::InvalidConfig(format!("unknown flow tier {other}"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            FlowTier::Full => "full",
            FlowTier::Half => "half",
            FlowTier::Lite => "lite",
        }
    }

    /// Output stride of the tier's flow field w.r.t. the net's own input.
    pub fn output_stride(&self) -> usize {
        match self {
            FlowTier::Full => 2,
            FlowTier::Half | FlowTier::Lite => 4,
        }
    }
}

/// Feature extractor: two stride-2 stages then dilated stride-1 convs, ending
/// in a half-width reduction. Output stride 4, `width/2` channels.
pub fn feature_net(width: usize) -> NetworkSpec {
    assert!(width >= 2 && width % 2 == 0, "feature width must be even");
    let w = width;
    NetworkSpec {
        name: "feature".into(),
        layers: vec![
            LayerSpec::conv("conv1", &[INPUT_NAME], 3, w, 3).strided(2).padded(1),
            LayerSpec::simple("conv1.relu", LayerKind::Relu, &["conv1"]),
            LayerSpec::conv("conv2", &["conv1.relu"], w, w, 3).strided(2).padded(1),
            LayerSpec::simple("conv2.relu", LayerKind::Relu, &["conv2"]),
            LayerSpec::conv("conv3", &["conv2.relu"], w, w, 3).dilated(2, 2),
            LayerSpec::simple("conv3.relu", LayerKind::Relu, &["conv3"]),
            LayerSpec::conv("reduce", &["conv3.relu"], w, w / 2, 3).dilated(2, 2),
            LayerSpec::simple("reduce.relu", LayerKind::Relu, &["reduce"]),
        ],
        split_point: Some("conv2.relu".into()),
    }
}

pub fn feature_channels(width: usize) -> usize {
    width / 2
}

/// Task head: 1x1 conv to `classes + 1` logits (channel 0 is background),
/// then per-pixel softmax / cross-entropy.
pub fn task_net(feature_ch: usize, classes: usize) -> NetworkSpec {
    NetworkSpec {
        name: "task".into(),
        layers: vec![
            LayerSpec::conv("logits", &[INPUT_NAME], feature_ch, classes + 1, 1),
            LayerSpec::simple("probs", LayerKind::SoftmaxCrossEntropy, &["logits"]),
        ],
        split_point: None,
    }
}

pub const FLOW_CHANNELS: usize = 2;

/// Flow network over a stacked frame pair (6 channels): predicts the 2
/// displacement channels plus `feature_ch` scale channels. The `Full` tier
/// keeps stride 2 so its field matches the feature grid; the cheaper tiers
/// emit a coarser stride-4 field that gets upsampled. `Lite` exercises
/// pool/concat branches.
pub fn flow_net(tier: FlowTier, feature_ch: usize) -> NetworkSpec {
    let head_in: usize;
    let mut layers: Vec<LayerSpec>;
    match tier {
        FlowTier::Full => {
            layers = vec![
                LayerSpec::conv("conv1", &[INPUT_NAME], 6, 6, 3).strided(2).padded(1),
                LayerSpec::simple("conv1.relu", LayerKind::Relu, &["conv1"]),
                LayerSpec::conv("conv2", &["conv1.relu"], 6, 12, 3).padded(1),
                LayerSpec::simple("conv2.relu", LayerKind::Relu, &["conv2"]),
            ];
            head_in = 12;
            layers.push(LayerSpec::conv("head", &["conv2.relu"], head_in, FLOW_CHANNELS + feature_ch, 1));
        }
        FlowTier::Half => {
            layers = vec![
                LayerSpec::conv("conv1", &[INPUT_NAME], 6, 4, 3).strided(2).padded(1),
                LayerSpec::simple("conv1.relu", LayerKind::Relu, &["conv1"]),
                LayerSpec::conv("conv2", &["conv1.relu"], 4, 8, 3).strided(2).padded(1),
                LayerSpec::simple("conv2.relu", LayerKind::Relu, &["conv2"]),
            ];
            head_in = 8;
            layers.push(LayerSpec::conv("head", &["conv2.relu"], head_in, FLOW_CHANNELS + feature_ch, 1));
        }
        FlowTier::Lite => {
            layers = vec![
                // 1x1 stride-2 stem: a cheap patchified entry.
                LayerSpec::conv("conv1", &[INPUT_NAME], 6, 6, 1).strided(2),
                LayerSpec::simple("conv1.relu", LayerKind::Relu, &["conv1"]),
                // Stride-2 split: a reduced 3x3 path beside a pooled one.
                LayerSpec::conv("red.conv", &["conv1.relu"], 6, 4, 3).strided(2).padded(1),
                LayerSpec {
                    name: "red.pool".into(),
                    kind: LayerKind::Maxpool,
                    inputs: vec!["conv1.relu".into()],
                    in_channels: 0,
                    out_channels: 0,
                    kernel: 2,
                    stride: 2,
                    dilation: 1,
                    padding: 0,
                },
                LayerSpec::simple("red.cat", LayerKind::Concat, &["red.conv", "red.pool"]),
                LayerSpec::simple("red.relu", LayerKind::Relu, &["red.cat"]),
                // Stride-1 split block.
                LayerSpec::conv("mix.b1", &["red.relu"], 10, 4, 1),
                LayerSpec::conv("mix.squeeze", &["red.relu"], 10, 4, 1),
                LayerSpec::conv("mix.b3", &["mix.squeeze"], 4, 6, 3).padded(1),
                LayerSpec::simple("mix.cat", LayerKind::Concat, &["mix.b1", "mix.b3"]),
                LayerSpec::simple("mix.relu", LayerKind::Relu, &["mix.cat"]),
            ];
            head_in = 10;
            layers.push(LayerSpec::conv("head", &["mix.relu"], head_in, FLOW_CHANNELS + feature_ch, 1));
        }
    }
    NetworkSpec {
        name: format!("flow-{}", tier.label()),
        layers,
        split_point: None,
    }
}

/// Zero the scale rows of a freshly initialized flow head so the scale field
/// starts exactly at 1 everywhere.
pub fn init_flow_params(spec: &NetworkSpec, seed: u64) -> Result<Parameters> {
    let mut params = init_params(spec, seed);
    init_constant_one_rows(&mut params, "head", FLOW_CHANNELS)?;
    Ok(params)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleMeta {
    pub classes: usize,
    pub feature_width: usize,
    pub feature_channels: usize,
    /// Output stride of the feature net w.r.t. the full frame.
    pub feature_stride: usize,
    pub flow_tier: FlowTier,
    /// Output stride of the flow net w.r.t. its own (half-sized) input.
    pub flow_stride: usize,
    pub train_mode: String,
    pub seed: u64,
}

/// The three networks of one recognition system plus their metadata,
/// serializable as a directory of spec JSON and tensor files.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub meta: BundleMeta,
    pub feature_spec: NetworkSpec,
    pub feature_params: Parameters,
    pub task_spec: NetworkSpec,
    pub task_params: Parameters,
    pub flow_spec: NetworkSpec,
    pub flow_params: Parameters,
}

impl ModelBundle {
    /// Fresh bundle: feature, task, and flow nets drawn from independent
    /// seeded streams, flow scale rows pinned to one.
    pub fn initialize(classes: usize, feature_width: usize, flow_tier: FlowTier, seed: u64) -> Result<ModelBundle> {
        let feature_spec = feature_net(feature_width);
        let fc = feature_channels(feature_width);
        let task_spec = task_net(fc, classes);
        let flow_spec = flow_net(flow_tier, fc);
        let meta = BundleMeta {
            classes,
            feature_width,
            feature_channels: fc,
            feature_stride: 4,
            flow_tier,
            flow_stride: flow_tier.output_stride(),
            train_mode: "init".into(),
            seed,
        };
        Ok(ModelBundle {
            feature_params: init_params(&feature_spec, seed ^ 0x66),
            task_params: init_params(&task_spec, seed ^ 0x7a),
            flow_params: init_flow_params(&flow_spec, seed ^ 0x11)?,
            meta,
            feature_spec,
            task_spec,
            flow_spec,
        })
    }

    fn nets(&self) -> [(&NetworkSpec, &Parameters); 3] {
        [
            (&self.feature_spec, &self.feature_params),
            (&self.task_spec, &self.task_params),
            (&self.flow_spec, &self.flow_params),
        ]
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta_path = dir.join("meta.json");
        let meta = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
        for (role, (spec, params)) in ["feature", "task", "flow"].iter().zip(self.nets()) {
            let spec_path = dir.join(format!("{role}.spec.json"));
            let body = serde_json::to_string_pretty(spec).expect("spec serializes");
            std::fs::write(&spec_path, body).map_err(|e| Error::io(&spec_path, e))?;
            let pdir = dir.join("params").join(role);
            std::fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
            for (name, lp) in params {
                lp.weight.save(pdir.join(format!("{name}.weight.fft1")))?;
                lp.bias.save(pdir.join(format!("{name}.bias.fft1")))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<ModelBundle> {
        let meta_path = dir.join("meta.json");
        let body = std::fs::read_to_string(&meta_path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingCheckpoint(meta_path.clone())
            } else {
                Error::io(&meta_path, e)
            }
        })?;
        let meta: BundleMeta = serde_json::from_str(&body).map_err(|e| Error::json(&meta_path, e))?;
        let mut specs = Vec::new();
        let mut all_params = Vec::new();
        for role in ["feature", "task", "flow"] {
            let spec_path = dir.join(format!("{role}.spec.json"));
            let body = std::fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
            let spec: NetworkSpec =
                serde_json::from_str(&body).map_err(|e| Error::json(&spec_path, e))?;
            spec.validate()?;
            let pdir = dir.join("params").join(role);
            let mut params = Parameters::new();
            for layer in &spec.layers {
                if layer.kind != LayerKind::Conv {
                    continue;
                }
                let wpath = pdir.join(format!("{}.weight.fft1", layer.name));
                let bpath = pdir.join(format!("{}.bias.fft1", layer.name));
                for p in [&wpath, &bpath] {
                    if !p.exists() {
                        return Err(Error::MissingCheckpoint(p.clone()));
                    }
                }
                params.insert(
                    layer.name.clone(),
                    LayerParams {
                        weight: Tensor::load(&wpath)?,
                        bias: Tensor::load(&bpath)?,
                    },
                );
            }
            specs.push(spec);
            all_params.push(params);
        }
        let mut it = specs.into_iter().zip(all_params);
        let (feature_spec, feature_params) = it.next().unwrap();
        let (task_spec, task_params) = it.next().unwrap();
        let (flow_spec, flow_params) = it.next().unwrap();
        Ok(ModelBundle {
            meta,
            feature_spec,
            feature_params,
            task_spec,
            task_params,
            flow_spec,
            flow_params,
        })
    }
}
