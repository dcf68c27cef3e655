//! Network descriptions, shape propagation and float parameters.
//!
//! Every weighted layer is a matrix of `depth × out` (row-major). Convolution
//! rows are ordered (ky, kx, input channel), which matches an im2col of
//! height × width × channel feature maps. Dense rows follow the flattened
//! (y, x, channel) order. ReLU follows every weighted layer except the last.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::N_CLASSES;
use crate::error::{NnError, Result};
use cim_core::variation::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}×{}×{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// 1×1 convolution.
    Pointwise { out_channels: usize },
    MaxPool { size: usize, stride: usize },
    Dense { units: usize },
}

impl LayerSpec {
    pub fn conv3(out_channels: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel: 3,
            stride: 1,
            pad: 1,
        }
    }

    pub fn pool2() -> Self {
        LayerSpec::MaxPool { size: 2, stride: 2 }
    }

    pub fn is_weighted(&self) -> bool {
        !matches!(self, LayerSpec::MaxPool { .. })
    }
}

/// Convolution window; dense layers are a window covering the whole input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub input: Shape,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patches(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn depth(&self) -> usize {
        self.kernel * self.kernel * self.input.channels
    }

    fn dense(input: Shape) -> Self {
        ConvGeom {
            input: Shape::new(1, 1, input.len()),
            kernel: 1,
            stride: 1,
            pad: 0,
            out_h: 1,
            out_w: 1,
        }
    }
}

/// A weighted layer after shape propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightedLayer {
    /// Position in [`NetworkSpec::layers`].
    pub index: usize,
    pub geom: ConvGeom,
    pub depth: usize,
    pub out: usize,
    pub is_conv: bool,
    pub output: Shape,
}

/// Op sequence executed on feature maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    /// Weighted layer `n` (index into the weighted list).
    Weighted(usize),
    MaxPool { input: Shape, size: usize, stride: usize, output: Shape },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

fn out_dim(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = n + 2 * p;
    if s == 0 || padded < k {
        return None;
    }
    Some((padded - k) / s + 1)
}

impl NetworkSpec {
    /// Output shape of every layer.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        if self.input.is_empty() {
            return Err(NnError::Shape(format!("empty input shape {}", self.input)));
        }
        let mut cur = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let bad = |what: &str| NnError::Shape(format!("layer {i} ({what}) does not fit input {cur}"));
            cur = match *l {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                } => {
                    if out_channels == 0 || kernel == 0 {
                        return Err(bad("conv with zero size"));
                    }
                    let h = out_dim(cur.height, kernel, stride, pad).ok_or_else(|| bad("conv"))?;
                    let w = out_dim(cur.width, kernel, stride, pad).ok_or_else(|| bad("conv"))?;
                    Shape::new(h, w, out_channels)
                }
                LayerSpec::Pointwise { out_channels } => {
                    if out_channels == 0 {
                        return Err(bad("pointwise with zero channels"));
                    }
                    Shape::new(cur.height, cur.width, out_channels)
                }
                LayerSpec::MaxPool { size, stride } => {
                    if size == 0 {
                        return Err(bad("pool of size 0"));
                    }
                    let h = out_dim(cur.height, size, stride, 0).ok_or_else(|| bad("maxpool"))?;
                    let w = out_dim(cur.width, size, stride, 0).ok_or_else(|| bad("maxpool"))?;
                    Shape::new(h, w, cur.channels)
                }
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(bad("dense with zero units"));
                    }
                    Shape::new(1, 1, units)
                }
            };
            out.push(cur);
        }
        Ok(out)
    }

    /// Check shapes and that the network ends in a 10-way dense layer.
    pub fn validate(&self) -> Result<()> {
        self.shapes()?;
        match self.layers.last() {
            Some(LayerSpec::Dense { units }) if *units == N_CLASSES => Ok(()),
            _ => Err(NnError::Shape(format!(
                "the last layer must be dense with {N_CLASSES} units"
            ))),
        }
    }

    pub fn weighted(&self) -> Result<Vec<WeightedLayer>> {
        self.validate()?;
        let shapes = self.shapes()?;
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let input = if i == 0 { self.input } else { shapes[i - 1] };
            let geom = match *l {
                LayerSpec::Conv { kernel, stride, pad, .. } => ConvGeom {
                    input,
                    kernel,
                    stride,
                    pad,
                    out_h: shapes[i].height,
                    out_w: shapes[i].width,
                },
                LayerSpec::Pointwise { .. } => ConvGeom {
                    input,
                    kernel: 1,
                    stride: 1,
                    pad: 0,
                    out_h: input.height,
                    out_w: input.width,
                },
                LayerSpec::Dense { .. } => ConvGeom::dense(input),
                LayerSpec::MaxPool { .. } => continue,
            };
            out.push(WeightedLayer {
                index: i,
                geom,
                depth: geom.depth(),
                out: shapes[i].channels,
                is_conv: !matches!(l, LayerSpec::Dense { .. }),
                output: shapes[i],
            });
        }
        Ok(out)
    }

    /// The op sequence with pools resolved to shapes.
    pub fn ops(&self) -> Result<Vec<Op>> {
        let shapes = self.shapes()?;
        let mut n = 0;
        let mut ops = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            match *l {
                LayerSpec::MaxPool { size, stride } => ops.push(Op::MaxPool {
                    input: if i == 0 { self.input } else { shapes[i - 1] },
                    size,
                    stride,
                    output: shapes[i],
                }),
                _ => {
                    ops.push(Op::Weighted(n));
                    n += 1;
                }
            }
        }
        Ok(ops)
    }
}

pub const PRESETS: [&str; 2] = ["vgg-mini", "vgg16"];

/// Named architecture on `input` (the preset's native input when `None`).
///
/// `vgg-mini`: six 3×3 convolutions (32, 32, 64, 64, 128, 128 channels) with a
/// 2×2 pool after each pair, then dense 256 and dense 10. Native input
/// 28×28×1.
///
/// `vgg16`: thirteen 3×3 convolutions in five pooled blocks (64, 128, 256,
/// 512, 512 channels) and dense 512, 512, 10. Native input 32×32×3.
pub fn build_network(preset: &str, input: Option<Shape>) -> Result<NetworkSpec> {
    let (native, layers) = match preset {
        "vgg-mini" => {
            let mut l = Vec::new();
            for c in [32, 64, 128] {
                l.extend([LayerSpec::conv3(c), LayerSpec::conv3(c), LayerSpec::pool2()]);
            }
            l.extend([LayerSpec::Dense { units: 256 }, LayerSpec::Dense { units: N_CLASSES }]);
            (Shape::new(28, 28, 1), l)
        }
        "vgg16" => {
            let mut l = Vec::new();
            for (c, n) in [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)] {
                l.extend(std::iter::repeat_n(LayerSpec::conv3(c), n));
                l.push(LayerSpec::pool2());
            }
            l.extend([
                LayerSpec::Dense { units: 512 },
                LayerSpec::Dense { units: 512 },
                LayerSpec::Dense { units: N_CLASSES },
            ]);
            (Shape::new(32, 32, 3), l)
        }
        _ => return Err(NnError::UnknownPreset(preset.to_string())),
    };
    let spec = NetworkSpec {
        name: preset.to_string(),
        input: input.unwrap_or(native),
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// Parameters of one weighted layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub depth: usize,
    pub out: usize,
    /// `depth × out`, row-major.
    pub w: Vec<f32>,
    pub b: Vec<f32>,
}

/// Float weights plus what inference needs to quantize activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatWeights {
    pub layers: Vec<LayerParams>,
    /// Running maximum of each weighted layer's input; 0 means never observed.
    pub act_max: Vec<f32>,
    /// Factor applied to each layer's matrix product at inference
    /// (the keep fraction for layers trained with column dropout).
    pub rescale: Vec<f32>,
}

impl FloatWeights {
    /// He-normal weights from the init stream, zero biases.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let wl = spec.weighted()?;
        let layers = wl
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut rng = stream_rng(seed, Stream::Init, i as u64);
                let std = (2.0 / l.depth as f64).sqrt();
                LayerParams {
                    depth: l.depth,
                    out: l.out,
                    w: (0..l.depth * l.out)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            (z * std) as f32
                        })
                        .collect(),
                    b: vec![0.0; l.out],
                }
            })
            .collect();
        Ok(Self::with_layers(layers))
    }

    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        let layers = spec
            .weighted()?
            .iter()
            .map(|l| LayerParams {
                depth: l.depth,
                out: l.out,
                w: vec![0.0; l.depth * l.out],
                b: vec![0.0; l.out],
            })
            .collect();
        Ok(Self::with_layers(layers))
    }

    fn with_layers(layers: Vec<LayerParams>) -> Self {
        let n = layers.len();
        let mut act_max = vec![0.0; n];
        act_max[0] = 1.0;
        FloatWeights {
            layers,
            act_max,
            rescale: vec![1.0; n],
        }
    }

    /// Fails unless the parameter shapes match `spec`.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let wl = spec.weighted()?;
        let n = wl.len();
        if self.layers.len() != n || self.act_max.len() != n || self.rescale.len() != n {
            return Err(NnError::Shape(format!(
                "{} parameter layers for {n} weighted layers",
                self.layers.len()
            )));
        }
        for (i, (l, p)) in wl.iter().zip(&self.layers).enumerate() {
            if p.depth != l.depth || p.out != l.out || p.w.len() != l.depth * l.out || p.b.len() != l.out {
                return Err(NnError::Shape(format!(
                    "weighted layer {i}: parameters {}×{} do not match {}×{}",
                    p.depth, p.out, l.depth, l.out
                )));
            }
        }
        Ok(())
    }

    /// Input quantization step of weighted layer `i` for `max_code` levels.
    pub fn act_scale(&self, i: usize, max_code: u32) -> f32 {
        act_scale(self.act_max[i], max_code)
    }
}

/// Step for activations up to `max`; an unobserved range uses a unit range.
pub fn act_scale(max: f32, max_code: u32) -> f32 {
    let m = if max > 0.0 && max.is_finite() { max } else { 1.0 };
    m / max_code as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vgg_mini_shapes() {
        let s = build_network("vgg-mini", None).unwrap();
        let sh = s.shapes().unwrap();
        assert_eq!(sh[2], Shape::new(14, 14, 32));
        assert_eq!(sh[8], Shape::new(3, 3, 128));
        let w = s.weighted().unwrap();
        assert_eq!(w.len(), 8);
        assert_eq!(w[6].depth, 1152);
        assert_eq!(w[7].out, 10);
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(build_network("resnet", None), Err(NnError::UnknownPreset(_))));
    }

    #[test]
    fn inconsistent_shapes_rejected() {
        assert!(build_network("vgg16", Some(Shape::new(16, 16, 3))).is_err());
        let s = NetworkSpec {
            name: "x".into(),
            input: Shape::new(4, 4, 1),
            layers: vec![LayerSpec::Dense { units: 5 }],
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn unobserved_range_uses_unit_scale() {
        assert_eq!(act_scale(0.0, 255), 1.0 / 255.0);
        assert_eq!(act_scale(2.55, 255), 0.01);
    }
}
