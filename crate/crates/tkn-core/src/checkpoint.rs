//! Model checkpoints. Layout: magic `TKN1`, a little-endian u32 byte length,
//! a line-based text manifest (input shape, seed, one line per layer), then
//! every parameter array as little-endian 32-bit floats in layer order —
//! conv: kernels; target: kernels then per-kernel (m_x, m_y, s_x, s_y);
//! dense: weights then biases. Round-trips are bit-exact for f32 models.

use std::fs;
use std::path::Path;

use crate::attention::Family;
use crate::error::{Error, Result};
use crate::graph::{LayerSpec, NetworkSpec};
use crate::model::{Layer, Model};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"TKN1";

/// Human-readable description of the architecture and seed; parsing it back
/// reconstructs the exact `NetworkSpec` (floats use shortest-round-trip
/// formatting, which is lossless).
pub fn write_manifest(spec: &NetworkSpec, seed: u64) -> String {
    let (c, h, w) = spec.input;
    let mut out = format!("input {c} {h} {w}\nseed {seed}\n");
    for layer in &spec.layers {
        match *layer {
            LayerSpec::Conv { c_out, k } => out.push_str(&format!("conv {c_out} {k}\n")),
            LayerSpec::Target { c_out, k, family, lambda, sliced } => {
                let mode = if sliced { "sliced" } else { "full" };
                out.push_str(&format!("target {c_out} {k} {} {lambda} {mode}\n", family.name()));
            }
            LayerSpec::MaxPool2 => out.push_str("maxpool2\n"),
            LayerSpec::Flatten => out.push_str("flatten\n"),
            LayerSpec::Dense { units } => out.push_str(&format!("dense {units}\n")),
            LayerSpec::Relu => out.push_str("relu\n"),
            LayerSpec::Dropout { rate } => out.push_str(&format!("dropout {rate}\n")),
        }
    }
    out
}

fn parse_usize(tok: Option<&str>, what: &str, line: &str) -> Result<usize> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::data(format!("manifest: bad {what} in {line:?}")))
}

fn parse_f64(tok: Option<&str>, what: &str, line: &str) -> Result<f64> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::data(format!("manifest: bad {what} in {line:?}")))
}

pub fn parse_manifest(text: &str) -> Result<(NetworkSpec, u64)> {
    let mut lines = text.lines();
    let input_line = lines.next().ok_or_else(|| Error::data("manifest: empty".to_string()))?;
    let mut it = input_line.split_whitespace();
    if it.next() != Some("input") {
        return Err(Error::data(format!("manifest: expected input line, got {input_line:?}")));
    }
    let c = parse_usize(it.next(), "channels", input_line)?;
    let h = parse_usize(it.next(), "height", input_line)?;
    let w = parse_usize(it.next(), "width", input_line)?;

    let seed_line = lines.next().ok_or_else(|| Error::data("manifest: missing seed".to_string()))?;
    let mut it = seed_line.split_whitespace();
    if it.next() != Some("seed") {
        return Err(Error::data(format!("manifest: expected seed line, got {seed_line:?}")));
    }
    let seed: u64 = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::data(format!("manifest: bad seed in {seed_line:?}")))?;

    let mut layers = Vec::new();
    for line in lines {
        let mut it = line.split_whitespace();
        let kind = match it.next() {
            Some(k) => k,
            None => continue, // blank line
        };
        layers.push(match kind {
            "conv" => LayerSpec::Conv {
                c_out: parse_usize(it.next(), "channels", line)?,
                k: parse_usize(it.next(), "kernel", line)?,
            },
            "target" => {
                let c_out = parse_usize(it.next(), "channels", line)?;
                let k = parse_usize(it.next(), "kernel", line)?;
                let family = Family::parse(
                    it.next().ok_or_else(|| Error::data(format!("manifest: missing family in {line:?}")))?,
                )?;
                let lambda = parse_f64(it.next(), "lambda", line)?;
                let sliced = match it.next() {
                    Some("sliced") => true,
                    Some("full") => false,
                    other => {
                        return Err(Error::data(format!("manifest: bad mode {other:?} in {line:?}")))
                    }
                };
                LayerSpec::Target { c_out, k, family, lambda, sliced }
            }
            "maxpool2" => LayerSpec::MaxPool2,
            "flatten" => LayerSpec::Flatten,
            "dense" => LayerSpec::Dense { units: parse_usize(it.next(), "units", line)? },
            "relu" => LayerSpec::Relu,
            "dropout" => LayerSpec::Dropout { rate: parse_f64(it.next(), "rate", line)? },
            other => return Err(Error::data(format!("manifest: unknown layer kind {other:?}"))),
        });
    }
    Ok((NetworkSpec::new((c, h, w), layers)?, seed))
}

fn push_f32<T: Scalar>(bytes: &mut Vec<u8>, values: impl IntoIterator<Item = T>) {
    for v in values {
        bytes.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
}

/// Serialize a model. Values are stored as f32; saving an f64 model narrows.
pub fn save_model<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let manifest = write_manifest(&model.spec, model.seed);
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    bytes.extend_from_slice(manifest.as_bytes());
    for layer in &model.layers {
        match layer {
            Layer::Conv { kernels } => push_f32(&mut bytes, kernels.data().iter().copied()),
            Layer::Target(st) => {
                push_f32(&mut bytes, st.kernels.data().iter().copied());
                for p in &st.params {
                    push_f32(&mut bytes, [p.m_x, p.m_y, p.s_x, p.s_y]);
                }
            }
            Layer::Dense { weights, bias } => {
                push_f32(&mut bytes, weights.data().iter().copied());
                push_f32(&mut bytes, bias.iter().copied());
            }
            _ => {}
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

struct F32Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl F32Reader<'_> {
    fn take<T: Scalar>(&mut self, out: &mut [T], what: &str) -> Result<()> {
        for v in out.iter_mut() {
            let src = self
                .bytes
                .get(self.pos..self.pos + 4)
                .ok_or_else(|| Error::data(format!("checkpoint truncated in {what}")))?;
            *v = T::from_f64(f32::from_le_bytes(src.try_into().unwrap()) as f64);
            self.pos += 4;
        }
        Ok(())
    }
}

/// Read a checkpoint back into a model. The attention windows' ROIs and
/// maps are rebuilt from the loaded parameters; dropout streams restart
/// from the stored seed.
pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(Error::data(format!(
            "{}: bad magic (not a TKN1 checkpoint)",
            path.as_ref().display()
        )));
    }
    let len = u32::from_le_bytes(
        bytes
            .get(4..8)
            .ok_or_else(|| Error::data("checkpoint truncated in header".to_string()))?
            .try_into()
            .unwrap(),
    ) as usize;
    let manifest = bytes
        .get(8..8 + len)
        .ok_or_else(|| Error::data("checkpoint truncated in manifest".to_string()))?;
    let manifest =
        std::str::from_utf8(manifest).map_err(|_| Error::data("manifest is not UTF-8".to_string()))?;
    let (spec, seed) = parse_manifest(manifest)?;

    let mut model = Model::<T>::init(&spec, seed)?;
    let mut r = F32Reader { bytes: &bytes, pos: 8 + len };
    for (idx, layer) in model.layers.iter_mut().enumerate() {
        let what = format!("layer {idx}");
        match layer {
            Layer::Conv { kernels } => r.take(kernels.data_mut(), &what)?,
            Layer::Target(st) => {
                r.take(st.kernels.data_mut(), &what)?;
                for p in &mut st.params {
                    let mut quad = [T::ZERO; 4];
                    r.take(&mut quad, &what)?;
                    [p.m_x, p.m_y, p.s_x, p.s_y] = quad;
                }
                st.refresh()?;
            }
            Layer::Dense { weights, bias } => {
                r.take(weights.data_mut(), &what)?;
                r.take(bias, &what)?;
            }
            _ => {}
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::data(format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}
