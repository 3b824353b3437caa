//! Declarative network graphs: construction, validation and accounting.
//!
//! A [`NetworkGraph`] is an ordered list of [`LayerSpec`]s. Data flows from
//! each layer to the next; the only non-sequential edge is
//! [`LayerKind::ConcatInput`], which prepends the output of an earlier tap to
//! the current stream along the channel axis. Dense layers and U-Net skips
//! are both expressed that way, so one executor and one auditor cover every
//! architecture in the crate.

mod audit;
mod baselines;
mod denseed;
mod trace;

use std::fmt;
use std::ops::Range;

use num_rational::Ratio;
use thiserror::Error;

pub use audit::{audit_table, reference_table, AuditReport, AuditRow, ModelConfig, ReferenceRow};
pub use baselines::{build_dncnn, build_unet};
pub use denseed::{build_denseed, DenseEdSpec};
pub use trace::{count_conv_layers, count_parameters, trace_features, FeatureTrace, Stage};

/// Exact output/input side-length ratio of a layer or of a prefix of a graph.
pub type SpatialScale = Ratio<u64>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArchError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("unrepresentable spec: {0}")]
    Unrepresentable(String),
    #[error("inconsistent graph at layer {index}: {reason}")]
    InconsistentGraph { index: usize, reason: String },
}

/// Where a concatenation reads its prepended features from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tap {
    /// The graph input.
    Input,
    /// Output of the layer at this index.
    Layer(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    TransposedConv,
    BatchNorm,
    /// ReLU. The activation is fixed across the crate.
    Activation,
    /// `out = [source, current]` along channels.
    ConcatInput { source: Tap },
}

impl LayerKind {
    pub fn is_conv(&self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::TransposedConv)
    }

    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::TransposedConv => "transposed-conv",
            LayerKind::BatchNorm => "batch-norm",
            LayerKind::Activation => "activation",
            LayerKind::ConcatInput { .. } => "concat-input",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub label: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub has_bias: bool,
}

impl LayerSpec {
    pub fn spatial_scale(&self) -> SpatialScale {
        match (self.kind, self.stride) {
            (LayerKind::Conv, s) => Ratio::new(1, s as u64),
            (LayerKind::TransposedConv, s) => Ratio::from_integer(s as u64),
            _ => Ratio::from_integer(1),
        }
    }

    /// "Same" padding applied before striding: k3 -> 1, k7 -> 3, k1 -> 0.
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    /// Trainable scalars owned by this layer. Batch-norm running statistics
    /// are buffers and are not counted.
    pub fn parameter_count(&self) -> u64 {
        let (i, o, k) = (self.in_channels as u64, self.out_channels as u64, self.kernel as u64);
        match self.kind {
            LayerKind::Conv | LayerKind::TransposedConv => {
                i * o * k * k + if self.has_bias { o } else { 0 }
            }
            LayerKind::BatchNorm => 2 * o,
            LayerKind::Activation | LayerKind::ConcatInput { .. } => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseBlock {
    pub label: String,
    pub layers: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGraph {
    pub name: String,
    pub in_channels: usize,
    pub layers: Vec<LayerSpec>,
    pub blocks: Vec<DenseBlock>,
}

impl NetworkGraph {
    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(self.in_channels, |l| l.out_channels)
    }

    /// Channel count produced at a tap.
    pub fn tap_channels(&self, tap: Tap) -> usize {
        match tap {
            Tap::Input => self.in_channels,
            Tap::Layer(i) => self.layers[i].out_channels,
        }
    }

    /// Cumulative spatial scale after every layer, checking every structural
    /// invariant on the way.
    pub fn validate(&self) -> Result<Vec<SpatialScale>, ArchError> {
        let bad = |index: usize, reason: String| ArchError::InconsistentGraph { index, reason };
        if self.layers.is_empty() {
            return Err(bad(0, "graph has no layers".into()));
        }
        let mut scales: Vec<SpatialScale> = Vec::with_capacity(self.layers.len());
        let mut channels = self.in_channels;
        let mut scale = Ratio::from_integer(1u64);
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.in_channels != channels {
                return Err(bad(
                    i,
                    format!("expects {} input channels, predecessor yields {channels}", layer.in_channels),
                ));
            }
            if layer.out_channels == 0 {
                return Err(bad(i, "zero output channels".into()));
            }
            match layer.kind {
                LayerKind::Conv | LayerKind::TransposedConv => {
                    if ![1, 3, 7].contains(&layer.kernel) {
                        return Err(bad(i, format!("unsupported kernel {}", layer.kernel)));
                    }
                    if ![1, 2].contains(&layer.stride) {
                        return Err(bad(i, format!("unsupported stride {}", layer.stride)));
                    }
                }
                LayerKind::BatchNorm | LayerKind::Activation => {
                    if layer.out_channels != layer.in_channels || layer.kernel != 1 || layer.stride != 1 {
                        return Err(bad(i, "elementwise layer must preserve shape".into()));
                    }
                }
                LayerKind::ConcatInput { source } => {
                    let (src_channels, src_scale) = match source {
                        Tap::Input => (self.in_channels, Ratio::from_integer(1)),
                        Tap::Layer(j) if j < i => (self.layers[j].out_channels, scales[j]),
                        Tap::Layer(j) => {
                            return Err(bad(i, format!("concat source {j} is not an earlier layer")))
                        }
                    };
                    if src_scale != scale {
                        return Err(bad(
                            i,
                            format!("skip shape mismatch: source scale {src_scale}, stream scale {scale}"),
                        ));
                    }
                    if layer.out_channels != layer.in_channels + src_channels {
                        return Err(bad(i, "concat output must equal stream + source channels".into()));
                    }
                }
            }
            scale *= layer.spatial_scale();
            scales.push(scale);
            channels = layer.out_channels;
        }
        if scale != Ratio::from_integer(1) {
            return Err(bad(self.layers.len() - 1, format!("composed spatial scale is {scale}, not 1")));
        }
        for block in &self.blocks {
            if block.layers.end > self.layers.len() || block.layers.start > block.layers.end {
                return Err(bad(block.layers.start, format!("block {} out of range", block.label)));
            }
        }
        Ok(scales)
    }

    /// Smallest side-length divisor an input must satisfy so that every
    /// intermediate feature map has integral size.
    pub fn required_divisor(&self) -> usize {
        let mut scale = Ratio::from_integer(1u64);
        let mut worst = 1u64;
        for layer in &self.layers {
            scale *= layer.spatial_scale();
            worst = worst.max(*scale.denom());
        }
        worst as usize
    }
}

impl fmt::Display for NetworkGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} (in_channels={})", self.name, self.in_channels)?;
        for (i, l) in self.layers.iter().enumerate() {
            writeln!(
                f,
                "{i:>4} {:<28} {:<16} {:>4} -> {:<4} k{} s{}{}",
                l.label,
                l.kind.tag(),
                l.in_channels,
                l.out_channels,
                l.kernel,
                l.stride,
                if l.has_bias { " +bias" } else { "" }
            )?;
        }
        Ok(())
    }
}

/// Incremental graph assembly with channel bookkeeping.
#[derive(Debug)]
pub struct GraphBuilder {
    graph: NetworkGraph,
    channels: usize,
    open_block: Option<(String, usize)>,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>, in_channels: usize) -> Self {
        GraphBuilder {
            graph: NetworkGraph { name: name.into(), in_channels, layers: Vec::new(), blocks: Vec::new() },
            channels: in_channels,
            open_block: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Tap referring to the current stream (the most recently added layer).
    pub fn tap(&self) -> Tap {
        match self.graph.layers.len() {
            0 => Tap::Input,
            n => Tap::Layer(n - 1),
        }
    }

    fn push(&mut self, label: String, kind: LayerKind, out: usize, kernel: usize, stride: usize, bias: bool) -> &mut Self {
        self.graph.layers.push(LayerSpec {
            label,
            kind,
            in_channels: self.channels,
            out_channels: out,
            kernel,
            stride,
            has_bias: bias,
        });
        self.channels = out;
        self
    }

    pub fn conv(&mut self, label: impl Into<String>, out: usize, kernel: usize, stride: usize, bias: bool) -> &mut Self {
        self.push(label.into(), LayerKind::Conv, out, kernel, stride, bias)
    }

    pub fn transposed_conv(&mut self, label: impl Into<String>, out: usize, kernel: usize, stride: usize, bias: bool) -> &mut Self {
        self.push(label.into(), LayerKind::TransposedConv, out, kernel, stride, bias)
    }

    pub fn batch_norm(&mut self, label: impl Into<String>) -> &mut Self {
        let c = self.channels;
        self.push(label.into(), LayerKind::BatchNorm, c, 1, 1, false)
    }

    pub fn relu(&mut self, label: impl Into<String>) -> &mut Self {
        let c = self.channels;
        self.push(label.into(), LayerKind::Activation, c, 1, 1, false)
    }

    pub fn concat(&mut self, label: impl Into<String>, source: Tap) -> &mut Self {
        let out = self.channels + self.graph.tap_channels(source);
        self.push(label.into(), LayerKind::ConcatInput { source }, out, 1, 1, false)
    }

    pub fn begin_block(&mut self, label: impl Into<String>) -> &mut Self {
        self.open_block = Some((label.into(), self.graph.layers.len()));
        self
    }

    pub fn end_block(&mut self) -> &mut Self {
        if let Some((label, start)) = self.open_block.take() {
            let end = self.graph.layers.len();
            self.graph.blocks.push(DenseBlock { label, layers: start..end });
        }
        self
    }

    pub fn finish(self) -> Result<NetworkGraph, ArchError> {
        self.graph.validate()?;
        Ok(self.graph)
    }
}
