//! Architecture descriptors, shape inference and analytic cost profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LAYER_KINDS: &[&str] = &[
    "conv3d",
    "depthwise_conv3d",
    "max_pool3d",
    "avg_pool3d",
    "channel_norm",
    "relu",
    "global_avg_pool",
    "dense",
];

/// One layer. Convolutions use stride 1 and "same" zero padding; pooling
/// windows are non-overlapping (stride = kernel).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv3d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
    },
    DepthwiseConv3d {
        channels: usize,
        kernel: [usize; 3],
    },
    MaxPool3d {
        kernel: [usize; 3],
    },
    AvgPool3d {
        kernel: [usize; 3],
    },
    /// Per-channel learned scale and shift.
    ChannelNorm {
        channels: usize,
    },
    Relu,
    GlobalAvgPool,
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

/// A shared trunk followed by one or more heads fed by the trunk output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub name: String,
    /// `(channels, frames, height, width)`.
    pub input: [usize; 4],
    pub trunk: Vec<LayerSpec>,
    pub heads: Vec<HeadSpec>,
}

/// Activation shape: a `(C, T, H, W)` volume or a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Volume([usize; 4]),
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match self {
            Shape::Volume(s) => s.iter().product(),
            Shape::Flat(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dims(&self) -> Vec<usize> {
        match self {
            Shape::Volume(s) => s.to_vec(),
            Shape::Flat(n) => vec![*n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub flops_per_clip: u64,
    pub param_count: u64,
}

fn bad(msg: String) -> Error {
    Error::Architecture(msg)
}

fn volume(shape: Shape, layer: &LayerSpec) -> Result<[usize; 4]> {
    match shape {
        Shape::Volume(v) => Ok(v),
        Shape::Flat(_) => Err(bad(format!("{layer:?} needs a volume input"))),
    }
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv3d { .. } => "conv3d",
            LayerSpec::DepthwiseConv3d { .. } => "depthwise_conv3d",
            LayerSpec::MaxPool3d { .. } => "max_pool3d",
            LayerSpec::AvgPool3d { .. } => "avg_pool3d",
            LayerSpec::ChannelNorm { .. } => "channel_norm",
            LayerSpec::Relu => "relu",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel,
            } => {
                let [c, t, h, w] = volume(input, self)?;
                if c != *in_channels {
                    return Err(bad(format!("conv3d expects {in_channels} channels, got {c}")));
                }
                if kernel.iter().any(|k| k % 2 == 0) || *out_channels == 0 {
                    return Err(bad("conv3d kernels must be odd and outputs non-empty".into()));
                }
                Ok(Shape::Volume([*out_channels, t, h, w]))
            }
            LayerSpec::DepthwiseConv3d { channels, kernel } => {
                let v = volume(input, self)?;
                if v[0] != *channels {
                    return Err(bad(format!("depthwise conv expects {channels} channels, got {}", v[0])));
                }
                if kernel.iter().any(|k| k % 2 == 0) {
                    return Err(bad("depthwise kernels must be odd".into()));
                }
                Ok(input)
            }
            LayerSpec::MaxPool3d { kernel } | LayerSpec::AvgPool3d { kernel } => {
                let [c, t, h, w] = volume(input, self)?;
                if kernel.contains(&0) || t < kernel[0] || h < kernel[1] || w < kernel[2] {
                    return Err(bad(format!("pool kernel {kernel:?} does not fit {t}x{h}x{w}")));
                }
                Ok(Shape::Volume([c, t / kernel[0], h / kernel[1], w / kernel[2]]))
            }
            LayerSpec::ChannelNorm { channels } => {
                let v = volume(input, self)?;
                if v[0] != *channels {
                    return Err(bad(format!("norm expects {channels} channels, got {}", v[0])));
                }
                Ok(input)
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::GlobalAvgPool => {
                let [c, ..] = volume(input, self)?;
                Ok(Shape::Flat(c))
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let n = match input {
                    Shape::Flat(n) => n,
                    Shape::Volume(_) => return Err(bad("dense needs a flat input".into())),
                };
                if n != *in_features || *out_features == 0 {
                    return Err(bad(format!("dense expects {in_features} inputs, got {n}")));
                }
                Ok(Shape::Flat(*out_features))
            }
        }
    }

    /// Weight count and bias count.
    pub fn param_split(&self) -> (usize, usize) {
        match self {
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel,
            } => (out_channels * in_channels * kernel.iter().product::<usize>(), *out_channels),
            LayerSpec::DepthwiseConv3d { channels, kernel } => {
                (channels * kernel.iter().product::<usize>(), *channels)
            }
            LayerSpec::ChannelNorm { channels } => (*channels, *channels),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => (in_features * out_features, *out_features),
            _ => (0, 0),
        }
    }

    pub fn param_count(&self) -> usize {
        let (w, b) = self.param_split();
        w + b
    }

    /// Analytic operation count. A multiply-accumulate counts as 2;
    /// comparisons and element-wise ops count 1 per element touched. Bias
    /// additions are not counted.
    pub fn flops(&self, input: Shape, output: Shape) -> u64 {
        let out = output.len() as u64;
        match self {
            LayerSpec::Conv3d {
                in_channels, kernel, ..
            } => 2 * out * kernel.iter().product::<usize>() as u64 * *in_channels as u64,
            LayerSpec::DepthwiseConv3d { kernel, .. } => 2 * out * kernel.iter().product::<usize>() as u64,
            LayerSpec::MaxPool3d { kernel } | LayerSpec::AvgPool3d { kernel } => {
                out * kernel.iter().product::<usize>() as u64
            }
            LayerSpec::ChannelNorm { .. } => 2 * out,
            LayerSpec::Relu => out,
            LayerSpec::GlobalAvgPool => input.len() as u64,
            LayerSpec::Dense {
                in_features,
                out_features,
            } => 2 * (*in_features as u64) * (*out_features as u64),
        }
    }
}

/// One layer with resolved shapes and its slice of the flat parameter vector.
#[derive(Debug, Clone)]
pub struct PlannedLayer {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub param_offset: usize,
}

impl PlannedLayer {
    pub fn param_range(&self) -> std::ops::Range<usize> {
        self.param_offset..self.param_offset + self.spec.param_count()
    }
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub trunk: Vec<PlannedLayer>,
    pub heads: Vec<(String, Vec<PlannedLayer>)>,
    pub param_count: usize,
}

impl ArchDescriptor {
    /// Parses a descriptor, reporting unsupported layer kinds by name.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::config(format!("descriptor JSON: {e}")))?;
        let mut layer_lists: Vec<&serde_json::Value> = Vec::new();
        if let Some(t) = raw.get("trunk") {
            layer_lists.push(t);
        }
        if let Some(serde_json::Value::Array(heads)) = raw.get("heads") {
            layer_lists.extend(heads.iter().filter_map(|h| h.get("layers")));
        }
        for list in layer_lists {
            if let serde_json::Value::Array(layers) = list {
                for l in layers {
                    let kind = l.get("kind").and_then(|k| k.as_str()).unwrap_or("<missing>");
                    if !LAYER_KINDS.contains(&kind) {
                        return Err(Error::UnknownLayer(kind.to_string()));
                    }
                }
            }
        }
        let desc: ArchDescriptor =
            serde_json::from_value(raw).map_err(|e| Error::config(format!("descriptor: {e}")))?;
        desc.plan()?;
        Ok(desc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("descriptor serializes")
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.name == name)
    }

    pub fn plan(&self) -> Result<Plan> {
        if self.trunk.is_empty() && self.heads.iter().all(|h| h.layers.is_empty()) {
            return Err(bad("descriptor has no layers".into()));
        }
        if self.heads.is_empty() {
            return Err(bad("descriptor has no heads".into()));
        }
        if self.input.contains(&0) {
            return Err(bad("input shape has a zero dimension".into()));
        }
        let mut offset = 0;
        let mut shape = Shape::Volume(self.input);
        let mut trunk = Vec::with_capacity(self.trunk.len());
        for spec in &self.trunk {
            let out = spec.output_shape(shape)?;
            trunk.push(PlannedLayer {
                spec: spec.clone(),
                input: shape,
                output: out,
                param_offset: offset,
            });
            offset += spec.param_count();
            shape = out;
        }
        let embed = shape;
        let mut heads = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let mut shape = embed;
            let mut layers = Vec::with_capacity(h.layers.len());
            for spec in &h.layers {
                let out = spec.output_shape(shape)?;
                layers.push(PlannedLayer {
                    spec: spec.clone(),
                    input: shape,
                    output: out,
                    param_offset: offset,
                });
                offset += spec.param_count();
                shape = out;
            }
            if !matches!(shape, Shape::Flat(_)) {
                return Err(bad(format!("head `{}` must end in a flat output", h.name)));
            }
            heads.push((h.name.clone(), layers));
        }
        Ok(Plan {
            trunk,
            heads,
            param_count: offset,
        })
    }

    pub fn head_output_len(&self, name: &str) -> Option<usize> {
        let plan = self.plan().ok()?;
        plan.heads
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, ls)| ls.last().map(|l| l.output.len()))
    }
}

pub fn profile(desc: &ArchDescriptor) -> Result<ModelProfile> {
    let plan = desc.plan()?;
    let flops = plan
        .trunk
        .iter()
        .chain(plan.heads.iter().flat_map(|(_, ls)| ls.iter()))
        .map(|l| l.spec.flops(l.input, l.output))
        .sum();
    Ok(ModelProfile {
        flops_per_clip: flops,
        param_count: plan.param_count as u64,
    })
}

fn pool_kernel(shape: [usize; 4]) -> [usize; 3] {
    [
        if shape[1] >= 2 { 2 } else { 1 },
        if shape[2] >= 2 { 2 } else { 1 },
        if shape[3] >= 2 { 2 } else { 1 },
    ]
}

fn pool_shape(shape: [usize; 4], k: [usize; 3]) -> [usize; 4] {
    [shape[0], shape[1] / k[0], shape[2] / k[1], shape[3] / k[2]]
}

/// Four 3×3×3 convolution blocks (16, 32, 64, 128 channels) with
/// stride-two pooling between them, global average pooling and a dense head.
pub fn reference_teacher(num_classes: usize, clip_length: usize, frame_size: usize) -> ArchDescriptor {
    let mut shape = [3, clip_length, frame_size, frame_size];
    let widths = [16, 32, 64, 128];
    let mut trunk = Vec::new();
    for (i, &w) in widths.iter().enumerate() {
        trunk.push(LayerSpec::Conv3d {
            in_channels: shape[0],
            out_channels: w,
            kernel: [3, 3, 3],
        });
        trunk.push(LayerSpec::Relu);
        shape[0] = w;
        if i + 1 < widths.len() {
            let k = pool_kernel(shape);
            trunk.push(LayerSpec::MaxPool3d { kernel: k });
            shape = pool_shape(shape, k);
        }
    }
    trunk.push(LayerSpec::GlobalAvgPool);
    ArchDescriptor {
        name: "reference-teacher".into(),
        input: [3, clip_length, frame_size, frame_size],
        trunk,
        heads: vec![HeadSpec {
            name: "class".into(),
            layers: vec![LayerSpec::Dense {
                in_features: 128,
                out_features: num_classes,
            }],
        }],
    }
}

/// Two depthwise-separable blocks (8, 16 channels) feeding a classification
/// head and a single-logit confidence head.
pub fn reference_student(num_classes: usize, clip_length: usize, frame_size: usize) -> ArchDescriptor {
    let mut shape = [3, clip_length, frame_size, frame_size];
    let mut trunk = Vec::new();
    for &w in &[8usize, 16] {
        trunk.push(LayerSpec::Conv3d {
            in_channels: shape[0],
            out_channels: w,
            kernel: [1, 1, 1],
        });
        trunk.push(LayerSpec::Relu);
        trunk.push(LayerSpec::DepthwiseConv3d {
            channels: w,
            kernel: [3, 3, 3],
        });
        trunk.push(LayerSpec::Relu);
        shape[0] = w;
        let k = pool_kernel(shape);
        trunk.push(LayerSpec::MaxPool3d { kernel: k });
        shape = pool_shape(shape, k);
    }
    trunk.push(LayerSpec::GlobalAvgPool);
    ArchDescriptor {
        name: "reference-student".into(),
        input: [3, clip_length, frame_size, frame_size],
        trunk,
        heads: vec![
            HeadSpec {
                name: "class".into(),
                layers: vec![LayerSpec::Dense {
                    in_features: 16,
                    out_features: num_classes,
                }],
            },
            HeadSpec {
                name: "confidence".into(),
                layers: vec![LayerSpec::Dense {
                    in_features: 16,
                    out_features: 1,
                }],
            },
        ],
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.dims())
    }
}
