//! Network architecture as data: an ordered layer list with static shape
//! checking, plus the stock CNN6/TKN6 architectures and their reduced-channel
//! desk-scale variants.

use crate::attention::Family;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Same-padded square convolution, no bias.
    Conv { c_out: usize, k: usize },
    /// Convolution restricted to per-kernel attention windows; `lambda` is
    /// the layer's scale-penalty coefficient with any depth buildup applied.
    Target { c_out: usize, k: usize, family: Family, lambda: f64, sliced: bool },
    MaxPool2,
    Flatten,
    Dense { units: usize },
    Relu,
    Dropout { rate: f64 },
}

/// An input shape plus the layer stack. Shapes are checked once, statically,
/// so construction failures surface before any training starts.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// (channels, height, width) of one example.
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input: (usize, usize, usize), layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = NetworkSpec { input, layers };
        spec.shapes()?;
        Ok(spec)
    }

    /// Output shape of every layer, in order. Errors describe the first
    /// layer whose input does not compose.
    pub fn shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let (mut c, mut h, mut w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("degenerate input shape {c}x{h}x{w}")));
        }
        let mut out = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv { c_out, k } | LayerSpec::Target { c_out, k, .. } => {
                    if k % 2 == 0 || k == 0 {
                        return Err(Error::shape(format!("layer {idx}: kernel size {k} must be odd")));
                    }
                    if h < k || w < k {
                        return Err(Error::shape(format!(
                            "layer {idx}: {k}x{k} kernel does not fit a {h}x{w} activation"
                        )));
                    }
                    if c_out == 0 {
                        return Err(Error::shape(format!("layer {idx}: zero output channels")));
                    }
                    c = c_out;
                }
                LayerSpec::MaxPool2 => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(Error::shape(format!(
                            "layer {idx}: 2x2 pool needs even dims, got {h}x{w}"
                        )));
                    }
                    h /= 2;
                    w /= 2;
                }
                LayerSpec::Flatten => {
                    c *= h * w;
                    h = 1;
                    w = 1;
                }
                LayerSpec::Dense { units } => {
                    if (h, w) != (1, 1) {
                        return Err(Error::shape(format!(
                            "layer {idx}: dense needs flattened input, got {c}x{h}x{w}"
                        )));
                    }
                    if units == 0 {
                        return Err(Error::shape(format!("layer {idx}: zero units")));
                    }
                    c = units;
                }
                LayerSpec::Relu => {}
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::config(format!(
                            "layer {idx}: dropout rate {rate} outside [0,1)"
                        )));
                    }
                }
            }
            out.push((c, h, w));
        }
        Ok(out)
    }

    /// Units of the final dense layer (the classifier width).
    pub fn num_classes(&self) -> Result<usize> {
        match self.layers.last() {
            Some(LayerSpec::Dense { units }) => Ok(*units),
            _ => Err(Error::config("network does not end in a dense classifier".to_string())),
        }
    }

    pub fn has_target_layers(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Target { .. }))
    }
}

fn check_pool_divisible(h: usize, w: usize) -> Result<()> {
    if !h.is_multiple_of(4) || !w.is_multiple_of(4) {
        return Err(Error::shape(format!(
            "input {h}x{w} not divisible by 4 (two 2x2 pools)"
        )));
    }
    Ok(())
}

/// Shared tail: three 5x5 conv blocks with the given channel counts and two
/// interleaved pools, then the two-hidden-layer classifier head.
fn six_layer(
    input_hw: (usize, usize),
    channels: (usize, usize, usize),
    hidden: (usize, usize),
    num_classes: usize,
    target: Option<(Family, f64, f64, bool)>,
) -> Result<NetworkSpec> {
    let (h, w) = input_hw;
    check_pool_divisible(h, w)?;
    let conv = |c_out: usize, depth: u32| match target {
        None => LayerSpec::Conv { c_out, k: 5 },
        Some((family, lambda, beta, sliced)) => LayerSpec::Target {
            c_out,
            k: 5,
            family,
            lambda: lambda * beta.powi(depth as i32),
            sliced,
        },
    };
    let mut layers = vec![
        conv(channels.0, 0),
        LayerSpec::Relu,
        LayerSpec::MaxPool2,
        conv(channels.1, 1),
        LayerSpec::Relu,
        LayerSpec::MaxPool2,
        conv(channels.2, 2),
        LayerSpec::Relu,
        LayerSpec::Flatten,
    ];
    for units in [hidden.0, hidden.1] {
        layers.push(LayerSpec::Dense { units });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::Dropout { rate: 0.5 });
    }
    layers.push(LayerSpec::Dense { units: num_classes });
    NetworkSpec::new((1, h, w), layers)
}

/// 5x5 conv x3 (256/256/128 kernels), 2x2 pools, 328/192 hidden units,
/// dropout 0.5. 4,586,642 parameters at 28x28/10 classes.
pub fn build_cnn6(input_hw: (usize, usize), num_classes: usize) -> Result<NetworkSpec> {
    six_layer(input_hw, (256, 256, 128), (328, 192), num_classes, None)
}

/// CNN6 with every convolution swapped for a target layer. The scale
/// penalty builds up with depth: lambda, lambda*beta, lambda*beta^2.
pub fn build_tkn6(
    input_hw: (usize, usize),
    num_classes: usize,
    family: Family,
    lambda: f64,
    beta: f64,
) -> Result<NetworkSpec> {
    six_layer(input_hw, (256, 256, 128), (328, 192), num_classes, Some((family, lambda, beta, true)))
}

/// Reduced-channel (32/32/16) twin of CNN6 with a single 64-unit hidden
/// layer; small enough to train on one core in minutes.
pub fn build_cnn6_mini(input_hw: (usize, usize), num_classes: usize) -> Result<NetworkSpec> {
    let (h, w) = input_hw;
    check_pool_divisible(h, w)?;
    let layers = vec![
        LayerSpec::Conv { c_out: 32, k: 5 },
        LayerSpec::Relu,
        LayerSpec::MaxPool2,
        LayerSpec::Conv { c_out: 32, k: 5 },
        LayerSpec::Relu,
        LayerSpec::MaxPool2,
        LayerSpec::Conv { c_out: 16, k: 5 },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 64 },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::Dense { units: num_classes },
    ];
    NetworkSpec::new((1, h, w), layers)
}

/// Targeted twin of the mini network (same depth-buildup rule as TKN6).
pub fn build_tkn6_mini(
    input_hw: (usize, usize),
    num_classes: usize,
    family: Family,
    lambda: f64,
    beta: f64,
) -> Result<NetworkSpec> {
    let dense = build_cnn6_mini(input_hw, num_classes)?;
    let layers = dense
        .layers
        .into_iter()
        .scan(0u32, |depth, l| {
            Some(match l {
                LayerSpec::Conv { c_out, k } => {
                    let spec = LayerSpec::Target {
                        c_out,
                        k,
                        family,
                        lambda: lambda * beta.powi(*depth as i32),
                        sliced: true,
                    };
                    *depth += 1;
                    spec
                }
                other => other,
            })
        })
        .collect();
    NetworkSpec::new(dense.input, layers)
}

/// The dense twin of a spec: every target layer becomes a plain convolution.
/// Used for FLOP-ratio reporting.
pub fn dense_twin(spec: &NetworkSpec) -> NetworkSpec {
    NetworkSpec {
        input: spec.input,
        layers: spec
            .layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Target { c_out, k, .. } => LayerSpec::Conv { c_out, k },
                ref other => other.clone(),
            })
            .collect(),
    }
}
