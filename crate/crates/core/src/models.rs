//! Desk-scale architectures and their canonical parameter layout.
//!
//! Parameters are stored as one flat `f32` vector. Entries are ordered by
//! layer index ascending, weight before bias, each tensor row-major:
//!
//! | model  | entries                                                                  |
//! |--------|--------------------------------------------------------------------------|
//! | lenet  | `fc1.weight [784,300]`, `fc1.bias`, `fc2.weight [300,100]`, `fc2.bias`, `fc3.weight [100,10]`, `fc3.bias` |
//! | conv_s | `conv1..conv4.weight [F,C,3,3]` + biases, then `fc1..fc3` as for lenet   |
//!
//! Dense weights are `[in, out]`; conv kernels `[out, in, k, k]`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{self, CounterRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Lenet,
    ConvS,
}

impl Architecture {
    pub fn id(self) -> &'static str {
        match self {
            Architecture::Lenet => "lenet",
            Architecture::ConvS => "conv_s",
        }
    }

    /// Initialization family used for this architecture's weights.
    pub fn init_mode(self) -> InitMode {
        match self {
            Architecture::Lenet => InitMode::Uniform,
            Architecture::ConvS => InitMode::Normal,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lenet" => Ok(Architecture::Lenet),
            "conv_s" => Ok(Architecture::ConvS),
            other => Err(Error::Config(format!(
                "unknown architecture {other:?} (expected lenet or conv_s)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// `U(−√(6/fan_in), √(6/fan_in))`
    Uniform,
    /// `N(0, 2/fan_in)`
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub offset: usize,
    pub fan_in: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered description of a model's parameters and their flat offsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        ParamLayout {
            entries: Vec::new(),
            total: 0,
        }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], kind: ParamKind, fan_in: usize) {
        let entry = ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            kind,
            offset: self.total,
            fan_in,
        };
        self.total += entry.len();
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Length of the canonical flat vector.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn weight_count(&self) -> usize {
        self.weights().map(ParamEntry::len).sum()
    }

    pub fn weights(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter().filter(|e| e.kind == ParamKind::Weight)
    }

    /// `true` at flat positions holding weights (as opposed to biases).
    pub fn weight_positions(&self) -> Vec<bool> {
        let mut out = vec![false; self.total];
        for e in self.weights() {
            out[e.range()].iter_mut().for_each(|b| *b = true);
        }
        out
    }
}

impl Default for ParamLayout {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameter values in canonical flat order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    layout: Arc<ParamLayout>,
    values: Vec<f32>,
}

impl ParamSet {
    /// Reassembles a parameter set from its flat view.
    pub fn unflatten(layout: Arc<ParamLayout>, values: Vec<f32>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::dim("unflatten", &[layout.len()], &[values.len()]));
        }
        Ok(ParamSet { layout, values })
    }

    pub fn flatten(&self) -> &[f32] {
        &self.values
    }

    pub fn into_flat(self) -> Vec<f32> {
        self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, index: usize) -> Tensor<f32> {
        let e = &self.layout.entries()[index];
        Tensor::from_parts(e.shape.clone(), self.values[e.range()].to_vec())
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.layout
            .entries()
            .iter()
            .find(|e| e.name == name)
            .map(|e| &self.values[e.range()])
    }
}

/// Samples a Kaiming-initialized tensor. Pure in `(shape, mode, fan_in, seed)`.
pub fn init_kaiming(shape: &[usize], mode: InitMode, fan_in: usize, seed: u64) -> Result<Tensor<f32>> {
    if fan_in == 0 {
        return Err(Error::Parameter("fan_in must be at least 1".into()));
    }
    let n: usize = shape.iter().product();
    let mut rng = CounterRng::new(seed);
    let data = match mode {
        InitMode::Uniform => {
            let bound = (6.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.uniform_range(-bound, bound) as f32).collect()
        }
        InitMode::Normal => {
            let std = (2.0 / fan_in as f64).sqrt();
            (0..n).map(|_| (rng.normal() * std) as f32).collect()
        }
    };
    Tensor::new(shape.to_vec(), data)
}

/// Architecture plus input geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Architecture,
    /// `[channels, height, width]`
    pub input: [usize; 3],
    pub classes: usize,
    pub init: InitMode,
}

impl ModelSpec {
    /// Spec with the architecture's default initialization.
    pub fn new(arch: Architecture, input: [usize; 3], classes: usize) -> Self {
        ModelSpec {
            arch,
            input,
            classes,
            init: arch.init_mode(),
        }
    }

    pub fn lenet() -> Self {
        Self::new(Architecture::Lenet, [1, 28, 28], 10)
    }

    pub fn conv_s(input: [usize; 3]) -> Self {
        Self::new(Architecture::ConvS, input, 10)
    }

    pub fn build(&self) -> Result<Model> {
        Model::new(*self)
    }
}

const LENET_WIDTHS: [usize; 2] = [300, 100];
const CONV_S_CHANNELS: [usize; 4] = [32, 32, 64, 64];
const CONV_S_DENSE: [usize; 2] = [256, 256];
const CONV_S_KERNEL: usize = 3;

/// A model definition: layout plus forward pass.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    layout: Arc<ParamLayout>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let [c, h, w] = spec.input;
        if c == 0 || h == 0 || w == 0 || spec.classes < 2 {
            return Err(Error::Parameter(format!("invalid model spec {spec:?}")));
        }
        let mut layout = ParamLayout::new();
        let dense = |layout: &mut ParamLayout, dims: &[usize]| {
            for (i, pair) in dims.windows(2).enumerate() {
                let name = format!("fc{}", i + 1);
                layout.push(&format!("{name}.weight"), &[pair[0], pair[1]], ParamKind::Weight, pair[0]);
                layout.push(&format!("{name}.bias"), &[pair[1]], ParamKind::Bias, pair[0]);
            }
        };
        match spec.arch {
            Architecture::Lenet => {
                dense(&mut layout, &[c * h * w, LENET_WIDTHS[0], LENET_WIDTHS[1], spec.classes]);
            }
            Architecture::ConvS => {
                if h < 4 || w < 4 {
                    return Err(Error::Parameter(format!(
                        "conv_s needs inputs of at least 4x4, got {h}x{w}"
                    )));
                }
                let k = CONV_S_KERNEL;
                let mut cin = c;
                for (i, &cout) in CONV_S_CHANNELS.iter().enumerate() {
                    let name = format!("conv{}", i + 1);
                    layout.push(&format!("{name}.weight"), &[cout, cin, k, k], ParamKind::Weight, cin * k * k);
                    layout.push(&format!("{name}.bias"), &[cout], ParamKind::Bias, cin * k * k);
                    cin = cout;
                }
                let flat = cin * (h / 2 / 2) * (w / 2 / 2);
                dense(&mut layout, &[flat, CONV_S_DENSE[0], CONV_S_DENSE[1], spec.classes]);
            }
        }
        Ok(Model {
            spec,
            layout: Arc::new(layout),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    /// Kaiming weights, zero biases.
    pub fn init(&self, seed: u64) -> ParamSet {
        self.init_with_mode(seed, self.spec.init)
    }

    pub fn init_with_mode(&self, seed: u64, mode: InitMode) -> ParamSet {
        let mut values = vec![0.0f32; self.layout.len()];
        let base = rng::derive(seed, rng::stream::INIT);
        for (i, e) in self.layout.entries().iter().enumerate() {
            if e.kind == ParamKind::Bias {
                continue;
            }
            let t = init_kaiming(&e.shape, mode, e.fan_in, rng::derive(base, i as u64))
                .expect("layout fan_in is positive");
            values[e.range()].copy_from_slice(t.data());
        }
        ParamSet {
            layout: self.layout.clone(),
            values,
        }
    }

    /// Adds one leaf per parameter tensor, in layout order.
    pub fn leaves<T: Element>(&self, g: &mut Graph<T>, flat: &[T], requires_grad: bool) -> Vec<Var> {
        assert_eq!(flat.len(), self.layout.len(), "flat parameter length");
        self.layout
            .entries()
            .iter()
            .map(|e| {
                let t = Tensor::from_parts(e.shape.clone(), flat[e.range()].to_vec());
                g.leaf(t, requires_grad)
            })
            .collect()
    }

    /// Logits `[B, classes]` for an input batch `[B, C, H, W]`.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, params: &[Var], input: Var) -> Result<Var> {
        if params.len() != self.layout.entries().len() {
            return Err(Error::dim(
                "forward",
                &[self.layout.entries().len()],
                &[params.len()],
            ));
        }
        let s = g.shape(input);
        if s.len() != 4 || s[1..] != self.spec.input {
            return Err(Error::dim("forward", &self.spec.input, s));
        }
        match self.spec.arch {
            Architecture::Lenet => {
                let x = g.flatten(input)?;
                dense_stack(g, x, params)
            }
            Architecture::ConvS => {
                let mut x = input;
                for (layer, p) in params[..8].chunks(2).enumerate() {
                    x = g.conv2d(x, p[0], 1, 1)?;
                    x = g.add_bias(x, p[1])?;
                    x = g.relu(x);
                    if layer % 2 == 1 {
                        x = g.maxpool2d(x, 2, 2)?;
                    }
                }
                let x = g.flatten(x)?;
                dense_stack(g, x, &params[8..])
            }
        }
    }
}

/// `(weight, bias)` pairs with relu between layers but not after the last.
fn dense_stack<T: Element>(g: &mut Graph<T>, mut x: Var, params: &[Var]) -> Result<Var> {
    let layers = params.len() / 2;
    for (i, p) in params.chunks(2).enumerate() {
        x = g.matmul(x, p[0])?;
        x = g.add_bias(x, p[1])?;
        if i + 1 < layers {
            x = g.relu(x);
        }
    }
    Ok(x)
}

pub fn build_lenet(seed: u64) -> (Model, ParamSet) {
    let model = ModelSpec::lenet().build().expect("lenet spec is valid");
    let params = model.init(seed);
    (model, params)
}

pub fn build_conv_s(seed: u64, input: [usize; 3]) -> Result<(Model, ParamSet)> {
    let model = ModelSpec::conv_s(input).build()?;
    let params = model.init(seed);
    Ok((model, params))
}
