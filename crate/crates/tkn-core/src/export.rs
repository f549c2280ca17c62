//! Grayscale rendering of learned attention maps and ROI overlays as
//! binary PGM (P5) files: trivially byte-exact, no codec involved.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{Layer, Model};
use crate::scalar::Scalar;
use crate::target::TargetLayerState;

/// Raw 8-bit image: `P5\n<w> <h>\n255\n` then row-major bytes.
pub fn write_pgm(path: impl AsRef<Path>, w: usize, h: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != w * h {
        return Err(Error::shape(format!("{} bytes for a {w}x{h} image", pixels.len())));
    }
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes)?;
    Ok(())
}

/// Strict reader for the exact header layout `write_pgm` produces.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let name = path.as_ref().display().to_string();
    let bytes = fs::read(path.as_ref())?;
    let bad = |what: &str| Error::data(format!("{name}: {what}"));
    if bytes.get(..3) != Some(b"P5\n".as_slice()) {
        return Err(bad("not a binary PGM"));
    }
    let header_end = 3 + bytes[3..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("unterminated dimensions line"))?;
    let dims = std::str::from_utf8(&bytes[3..header_end]).map_err(|_| bad("non-text header"))?;
    let mut it = dims.split_whitespace();
    let w: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("missing width"))?;
    let h: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("missing height"))?;
    if it.next().is_some() {
        return Err(bad("extra tokens in dimensions line"));
    }
    let rest = &bytes[header_end + 1..];
    let maxval = b"255\n";
    if rest.get(..4) != Some(maxval.as_slice()) {
        return Err(bad("maxval is not 255"));
    }
    let pixels = &rest[4..];
    if pixels.len() != w * h {
        return Err(bad(&format!("{} pixel bytes for {w}x{h}", pixels.len())));
    }
    Ok((w, h, pixels.to_vec()))
}

/// Per-kernel tiles packed into a near-square grid with a one-pixel
/// mid-gray gutter between tiles.
pub struct MapGrid {
    pub rows: usize,
    pub cols: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub const GUTTER: u8 = 128;

impl MapGrid {
    fn empty(count: usize, tile_h: usize, tile_w: usize) -> MapGrid {
        let cols = (count as f64).sqrt().ceil() as usize;
        let rows = count.div_ceil(cols);
        let width = cols * tile_w + cols - 1;
        let height = rows * tile_h + rows - 1;
        MapGrid { rows, cols, tile_h, tile_w, width, height, pixels: vec![GUTTER; width * height] }
    }

    fn paint_tile(&mut self, idx: usize, tile: &[u8]) {
        let (r, c) = (idx / self.cols, idx % self.cols);
        let (y0, x0) = (r * (self.tile_h + 1), c * (self.tile_w + 1));
        for y in 0..self.tile_h {
            let dst = (y0 + y) * self.width + x0;
            self.pixels[dst..dst + self.tile_w]
                .copy_from_slice(&tile[y * self.tile_w..(y + 1) * self.tile_w]);
        }
    }

    /// Top-left pixel offset of tile `idx` as (y, x).
    pub fn tile_origin(&self, idx: usize) -> (usize, usize) {
        (idx / self.cols * (self.tile_h + 1), idx % self.cols * (self.tile_w + 1))
    }
}

fn quantize<T: Scalar>(v: T) -> u8 {
    (v.to_f64() * 255.0).round().clamp(0.0, 255.0) as u8
}

/// All of a layer's attention maps, linearly quantized (255·value).
pub fn render_map_grid<T: Scalar>(st: &TargetLayerState<T>) -> MapGrid {
    let mut grid = MapGrid::empty(st.maps.len(), st.h, st.w);
    let mut tile = vec![0u8; st.h * st.w];
    for (i, map) in st.maps.iter().enumerate() {
        for (b, &v) in tile.iter_mut().zip(&map.f_att) {
            *b = quantize(v);
        }
        grid.paint_tile(i, &tile);
    }
    grid
}

/// Map grid with each kernel's ROI rectangle drawn at 255 over its tile.
pub fn render_roi_overlay<T: Scalar>(st: &TargetLayerState<T>) -> MapGrid {
    let mut grid = render_map_grid(st);
    for (i, roi) in st.rois.iter().enumerate() {
        let (oy, ox) = grid.tile_origin(i);
        for x in roi.x0..roi.x1 {
            grid.pixels[(oy + roi.y0) * grid.width + ox + x] = 255;
            grid.pixels[(oy + roi.y1 - 1) * grid.width + ox + x] = 255;
        }
        for y in roi.y0..roi.y1 {
            grid.pixels[(oy + y) * grid.width + ox + roi.x0] = 255;
            grid.pixels[(oy + y) * grid.width + ox + roi.x1 - 1] = 255;
        }
    }
    grid
}

fn target_layer<T: Scalar>(model: &Model<T>, layer: usize) -> Result<&TargetLayerState<T>> {
    match model.layers.get(layer) {
        Some(Layer::Target(st)) => Ok(st),
        Some(_) => Err(Error::config(format!("layer {layer} has no attention windows"))),
        None => Err(Error::config(format!(
            "layer {layer} out of range ({} layers)",
            model.layers.len()
        ))),
    }
}

/// One `attention-layer<idx>.pgm` per selected target layer (all of them
/// when `layers` is None). Returns the written paths.
pub fn export_maps<T: Scalar>(
    model: &Model<T>,
    layers: Option<&[usize]>,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let all: Vec<usize> = match layers {
        Some(sel) => sel.to_vec(),
        None => model
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| matches!(l, Layer::Target(_)).then_some(i))
            .collect(),
    };
    if all.is_empty() {
        return Err(Error::config("model has no attention windows to export".to_string()));
    }
    fs::create_dir_all(out_dir.as_ref())?;
    let mut written = Vec::with_capacity(all.len());
    for idx in all {
        let grid = render_map_grid(target_layer(model, idx)?);
        let path = out_dir.as_ref().join(format!("attention-layer{idx:02}.pgm"));
        write_pgm(&path, grid.width, grid.height, &grid.pixels)?;
        written.push(path);
    }
    Ok(written)
}

/// ROI rectangles for one layer, written to `out_path`.
pub fn export_roi_overlay<T: Scalar>(
    model: &Model<T>,
    layer: usize,
    out_path: impl AsRef<Path>,
) -> Result<()> {
    let grid = render_roi_overlay(target_layer(model, layer)?);
    write_pgm(out_path, grid.width, grid.height, &grid.pixels)
}
