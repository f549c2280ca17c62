//! Dataset plumbing: IDX file ingestion (big-endian, magic 0x803/0x801),
//! deterministic synthesis of the four-quadrant top-left variant, and
//! seeded epoch batching.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{stream, STREAM_SHUFFLE, STREAM_TLMNIST};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use rand::Rng;

/// Images as (n, 1, h, w) with values in [0,1]; one class index per image.
#[derive(Debug, Clone)]
pub struct LabeledImageSet<T> {
    pub images: Tensor4<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> LabeledImageSet<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` examples (the files are stored pre-shuffled, so a prefix
    /// is an unbiased subset).
    pub fn subset(&self, n: usize) -> Result<LabeledImageSet<T>> {
        let (total, _, h, w) = self.images.shape();
        if n == 0 || n > total {
            return Err(Error::data(format!("subset of {n} from {total} examples")));
        }
        Ok(LabeledImageSet {
            images: Tensor4::from_vec(n, 1, h, w, self.images.data()[..n * h * w].to_vec())?,
            labels: self.labels[..n].to_vec(),
        })
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    let src = bytes
        .get(at..at + 4)
        .ok_or_else(|| Error::data(format!("{what}: truncated header")))?;
    Ok(u32::from_be_bytes(src.try_into().unwrap()))
}

/// Load an images/labels IDX pair. Pixel bytes are scaled to [0,1].
pub fn load_idx<T: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledImageSet<T>> {
    let ipath = images_path.as_ref();
    let lpath = labels_path.as_ref();
    let iname = ipath.display().to_string();
    let lname = lpath.display().to_string();
    let ibytes = fs::read(ipath).map_err(|e| Error::data(format!("{iname}: {e}")))?;
    let lbytes = fs::read(lpath).map_err(|e| Error::data(format!("{lname}: {e}")))?;

    let magic = be_u32(&ibytes, 0, &iname)?;
    if magic != 0x0000_0803 {
        return Err(Error::data(format!("{iname}: image magic {magic:#010x}, want 0x00000803")));
    }
    let n = be_u32(&ibytes, 4, &iname)? as usize;
    let h = be_u32(&ibytes, 8, &iname)? as usize;
    let w = be_u32(&ibytes, 12, &iname)? as usize;
    let want = 16 + n * h * w;
    if ibytes.len() != want {
        return Err(Error::data(format!(
            "{iname}: {} bytes for {n} images of {h}x{w}, want {want}",
            ibytes.len()
        )));
    }

    let lmagic = be_u32(&lbytes, 0, &lname)?;
    if lmagic != 0x0000_0801 {
        return Err(Error::data(format!("{lname}: label magic {lmagic:#010x}, want 0x00000801")));
    }
    let ln = be_u32(&lbytes, 4, &lname)? as usize;
    if lbytes.len() != 8 + ln {
        return Err(Error::data(format!(
            "{lname}: {} bytes for {ln} labels, want {}",
            lbytes.len(),
            8 + ln
        )));
    }
    if ln != n {
        return Err(Error::data(format!("{n} images but {ln} labels")));
    }

    let data = ibytes[16..].iter().map(|&b| T::from_f64(b as f64 / 255.0)).collect();
    Ok(LabeledImageSet {
        images: Tensor4::from_vec(n, 1, h, w, data)?,
        labels: lbytes[8..].iter().map(|&b| b as usize).collect(),
    })
}

/// Write the set back out as an IDX pair; pixels quantized as round(255·v).
pub fn write_idx<T: Scalar>(
    set: &LabeledImageSet<T>,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (n, _, h, w) = set.images.shape();
    let mut ibytes = Vec::with_capacity(16 + n * h * w);
    ibytes.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    ibytes.extend_from_slice(&(n as u32).to_be_bytes());
    ibytes.extend_from_slice(&(h as u32).to_be_bytes());
    ibytes.extend_from_slice(&(w as u32).to_be_bytes());
    for &v in set.images.data() {
        ibytes.push((v.to_f64() * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    fs::write(images_path, ibytes)?;

    let mut lbytes = Vec::with_capacity(8 + n);
    lbytes.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    lbytes.extend_from_slice(&(n as u32).to_be_bytes());
    for &l in &set.labels {
        lbytes.push(l as u8);
    }
    fs::write(labels_path, lbytes)?;
    Ok(())
}

/// Build the 56x56 four-quadrant variant: example i keeps its label and its
/// source image bitwise in the top-left quadrant; the other three quadrants
/// hold distractors drawn with replacement from the same set (they may
/// repeat the target's class — only the top-left digit defines the label).
pub fn make_tlmnist<T: Scalar>(source: &LabeledImageSet<T>, seed: u64) -> Result<LabeledImageSet<T>> {
    let (n, _, h, w) = source.images.shape();
    if (h, w) != (28, 28) {
        return Err(Error::data(format!("source images are {h}x{w}, want 28x28")));
    }
    if n == 0 {
        return Err(Error::data("empty source set".to_string()));
    }
    let mut rng = stream(seed, STREAM_TLMNIST, 0);
    let mut out = Tensor4::zeros(n, 1, 56, 56);
    for i in 0..n {
        // (row offset, col offset) of the three distractor quadrants
        let corners = [(0usize, 28usize), (28, 0), (28, 28)];
        let place = |img: usize, dy: usize, dx: usize, out: &mut Tensor4<T>| {
            let src = source.images.plane(img, 0);
            let dst = out.plane_mut(i, 0);
            for y in 0..28 {
                dst[(dy + y) * 56 + dx..][..28].copy_from_slice(&src[y * 28..(y + 1) * 28]);
            }
        };
        place(i, 0, 0, &mut out);
        for (dy, dx) in corners {
            let pick = rng.random_range(0..n);
            place(pick, dy, dx, &mut out);
        }
    }
    Ok(LabeledImageSet { images: out, labels: source.labels.clone() })
}

/// Seeded epoch batching: one full permutation per (seed, epoch), sliced
/// into `batch_size` chunks with the remainder kept as a short final batch.
pub struct Batches<'a, T> {
    set: &'a LabeledImageSet<T>,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

pub fn batches<'a, T: Scalar>(
    set: &'a LabeledImageSet<T>,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Batches<'a, T>> {
    if batch_size == 0 {
        return Err(Error::config("batch size 0".to_string()));
    }
    let n = set.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher–Yates, hand-rolled so the permutation is pinned by this code
    // alone rather than by a library's internal shuffle implementation
    let mut rng = stream(seed, STREAM_SHUFFLE, epoch as u64);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    Ok(Batches { set, order, batch_size, pos: 0 })
}

impl<T: Scalar> Iterator for Batches<'_, T> {
    type Item = (Tensor4<T>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let (_, _, h, w) = self.set.images.shape();
        let mut images = Tensor4::zeros(idx.len(), 1, h, w);
        let mut labels = Vec::with_capacity(idx.len());
        for (b, &i) in idx.iter().enumerate() {
            images.plane_mut(b, 0).copy_from_slice(self.set.images.plane(i, 0));
            labels.push(self.set.labels[i]);
        }
        Some((images, labels))
    }
}
