//! Analytic per-example operation counting. Convention: one
//! multiply-accumulate = one FLOP; pooling, activations, and dropout are
//! counted as zero (they are dominated terms and the published totals for
//! this architecture family exclude them). Attention-window multiplies are
//! reported in their own column and included in a targeted network's total,
//! while the dense-twin baseline has none — so ratios charge the attention
//! overhead against the targeted model.

use crate::error::Result;
use crate::graph::{dense_twin, LayerSpec, NetworkSpec};
use crate::model::{Layer, Model};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct LayerFlops {
    pub index: usize,
    pub kind: &'static str,
    pub macs: u64,
    pub attention_muls: u64,
}

/// Per-example operation counts for one network, plus the total its dense
/// twin (every ROI full, no attention) would cost.
#[derive(Debug, Clone)]
pub struct FlopReport {
    pub layers: Vec<LayerFlops>,
    pub total_macs: u64,
    pub total_attention: u64,
    pub dense_twin_macs: u64,
}

impl FlopReport {
    /// Everything the model pays for: MACs plus attention multiplies.
    pub fn total(&self) -> u64 {
        self.total_macs + self.total_attention
    }

    /// Cost relative to the dense twin. 1.0 for dense networks; slightly
    /// above 1.0 for a freshly initialized targeted network (full ROIs plus
    /// the attention multiplies); below 1.0 once windows shrink.
    pub fn ratio(&self) -> f64 {
        self.total() as f64 / self.dense_twin_macs as f64
    }

    /// MACs spent in convolution-style layers only (plain and targeted),
    /// the part that ROI shrinkage reduces.
    pub fn conv_macs(&self) -> u64 {
        self.layers
            .iter()
            .filter(|l| l.kind == "conv" || l.kind == "target")
            .map(|l| l.macs)
            .sum()
    }

    /// Aligned human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:>5}  {:<8}  {:>14}  {:>12}\n",
            "layer", "kind", "macs", "att_muls"
        ));
        for l in &self.layers {
            out.push_str(&format!(
                "{:>5}  {:<8}  {:>14}  {:>12}\n",
                l.index, l.kind, l.macs, l.attention_muls
            ));
        }
        out.push_str(&format!(
            "{:>5}  {:<8}  {:>14}  {:>12}\n",
            "", "total", self.total_macs, self.total_attention
        ));
        out.push_str(&format!("dense twin: {} macs\n", self.dense_twin_macs));
        out.push_str(&format!("ratio: {:.6}\n", self.ratio()));
        out
    }

    /// Machine-readable key=value lines, one per layer plus a totals line.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for l in &self.layers {
            out.push_str(&format!(
                "layer={} kind={} macs={} att_muls={}\n",
                l.index, l.kind, l.macs, l.attention_muls
            ));
        }
        out.push_str(&format!(
            "total_macs={} total_att_muls={} total={} dense_twin_macs={} ratio={:.6}\n",
            self.total_macs,
            self.total_attention,
            self.total(),
            self.dense_twin_macs,
            self.ratio()
        ));
        out
    }
}

fn finish(layers: Vec<LayerFlops>, dense_twin_macs: u64) -> FlopReport {
    let total_macs = layers.iter().map(|l| l.macs).sum();
    let total_attention = layers.iter().map(|l| l.attention_muls).sum();
    FlopReport { layers, total_macs, total_attention, dense_twin_macs }
}

/// Count a spec as initialized: every target layer at full ROIs.
pub fn count_spec(spec: &NetworkSpec) -> Result<FlopReport> {
    let shapes = spec.shapes()?;
    let (mut c_in, mut h, mut w) = spec.input;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (idx, layer) in spec.layers.iter().enumerate() {
        let (kind, macs, att) = match *layer {
            LayerSpec::Conv { c_out, k } => {
                ("conv", (c_in * k * k * h * w * c_out) as u64, 0)
            }
            LayerSpec::Target { c_out, k, .. } => (
                "target",
                (c_in * k * k * h * w * c_out) as u64,
                (h * w * c_out) as u64,
            ),
            LayerSpec::Dense { units } => ("dense", (c_in * units) as u64, 0),
            LayerSpec::MaxPool2 => ("maxpool2", 0, 0),
            LayerSpec::Flatten => ("flatten", 0, 0),
            LayerSpec::Relu => ("relu", 0, 0),
            LayerSpec::Dropout { .. } => ("dropout", 0, 0),
        };
        layers.push(LayerFlops { index: idx, kind, macs, attention_muls: att });
        (c_in, h, w) = shapes[idx];
    }
    let twin = layers.iter().map(|l| l.macs).sum();
    Ok(finish(layers, twin))
}

/// Count a live model at its current ROIs.
pub fn count_model<T: Scalar>(model: &Model<T>) -> FlopReport {
    let shapes = model.spec.shapes().expect("model spec validated at init");
    let mut cur = model.spec.input; // (c, h, w) feeding each layer
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut twin = 0u64;
    for (idx, layer) in model.layers.iter().enumerate() {
        let (h, w) = (cur.1, cur.2);
        let (macs, att) = match layer {
            // kernels.len() = c_out·c_in·k²; one dot per output position
            Layer::Conv { kernels } => {
                let m = (kernels.len() * h * w) as u64;
                twin += m;
                (m, 0)
            }
            Layer::Target(st) => {
                let (m, a) = st.flops();
                twin += (st.kernels.len() * st.h * st.w) as u64;
                (m, a)
            }
            Layer::Dense { weights, .. } => {
                let m = weights.len() as u64;
                twin += m;
                (m, 0)
            }
            _ => (0, 0),
        };
        layers.push(LayerFlops { index: idx, kind: layer_kind(layer), macs, attention_muls: att });
        cur = shapes[idx];
    }
    finish(layers, twin)
}

fn layer_kind<T>(layer: &Layer<T>) -> &'static str {
    match layer {
        Layer::Conv { .. } => "conv",
        Layer::Target(_) => "target",
        Layer::MaxPool2 => "maxpool2",
        Layer::Flatten => "flatten",
        Layer::Dense { .. } => "dense",
        Layer::Relu => "relu",
        Layer::Dropout { .. } => "dropout",
    }
}

/// Learnable scalars in a spec: kernel weights, dense weights and biases,
/// and four attention parameters per targeted kernel.
pub fn param_count(spec: &NetworkSpec) -> Result<u64> {
    let shapes = spec.shapes()?;
    let mut c_in = spec.input.0;
    let mut total = 0u64;
    for (idx, layer) in spec.layers.iter().enumerate() {
        total += match *layer {
            LayerSpec::Conv { c_out, k } => (c_out * c_in * k * k) as u64,
            LayerSpec::Target { c_out, k, .. } => (c_out * c_in * k * k) as u64 + 4 * c_out as u64,
            LayerSpec::Dense { units } => (units * c_in + units) as u64,
            _ => 0,
        };
        c_in = shapes[idx].0;
    }
    Ok(total)
}

/// Dense-twin total for a spec (target layers replaced by plain convs).
pub fn dense_twin_total(spec: &NetworkSpec) -> Result<u64> {
    Ok(count_spec(&dense_twin(spec))?.total_macs)
}
