//! Dense 4-axis tensors and the raw compute kernels: same-padding convolution
//! (full-frame and ROI-restricted), 2×2 max pooling, dense layers, ReLU,
//! dropout, and softmax cross-entropy. Everything is single-threaded with a
//! fixed floating-point reduction order, so results are reproducible and the
//! ROI path is bit-compatible with the full path.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense numeric array in (batch, channel, row, col) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 { n, c, h, w, data: vec![T::ZERO; n * c * h * w] }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::shape(format!(
                "tensor data length {} does not match shape ({n},{c},{h},{w})",
                data.len()
            )));
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn offset(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.offset(b, c, y, x);
        self.data[i] = v;
    }

    /// Contiguous h·w slice of one (batch, channel) plane.
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let start = self.offset(b, c, 0, 0);
        &self.data[start..start + self.h * self.w]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let start = self.offset(b, c, 0, 0);
        let hw = self.h * self.w;
        &mut self.data[start..start + hw]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Reinterpret the same element count under a new shape.
    pub fn reshape(self, n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if self.data.len() != n * c * h * w {
            return Err(Error::shape(format!(
                "cannot reshape {} elements to ({n},{c},{h},{w})",
                self.data.len()
            )));
        }
        Ok(Tensor4 { n, c, h, w, data: self.data })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Precision-converting copy (f32 ↔ f64), used by oracle checks.
    pub fn convert<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Integer pixel rectangle, half-open on the right/bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Roi {
    pub fn full(h: usize, w: usize) -> Roi {
        Roi { x0: 0, y0: 0, x1: w, y1: h }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_full(&self, h: usize, w: usize) -> bool {
        *self == Roi::full(h, w)
    }

    /// Check containment in an h×w frame and a minimum side of k pixels.
    pub fn validate(&self, h: usize, w: usize, k: usize) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 || self.x1 > w || self.y1 > h {
            return Err(Error::shape(format!("roi {self:?} out of bounds for {h}x{w}")));
        }
        if self.width() < k || self.height() < k {
            return Err(Error::shape(format!("roi {self:?} smaller than kernel {k}")));
        }
        Ok(())
    }

    /// Smallest rectangle containing both.
    pub fn union(&self, other: &Roi) -> Roi {
        Roi {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }
}

/// One roi per output kernel covering the whole frame (the dense case).
pub fn full_rois(c_out: usize, h: usize, w: usize) -> Vec<Roi> {
    vec![Roi::full(h, w); c_out]
}

/// Dot product with eight independent accumulators in a fixed reduction
/// order: fast enough to vectorize, and bit-identical wherever the same row
/// values are fed in (which is what makes ROI output match full output).
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::ZERO; 8];
    for (ca, cb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = T::ZERO;
    for (x, y) in a.chunks_exact(8).remainder().iter().zip(b.chunks_exact(8).remainder()) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// y += alpha * x
#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

fn check_conv_args<T: Scalar>(input: &Tensor4<T>, kernels: &Tensor4<T>) -> Result<usize> {
    let (_, c_in, _, _) = input.shape();
    let (_, kc, kh, kw) = kernels.shape();
    if kh != kw {
        return Err(Error::shape(format!("kernels must be square, got {kh}x{kw}")));
    }
    if kh % 2 == 0 {
        return Err(Error::shape(format!("kernel size {kh} must be odd")));
    }
    if kc != c_in {
        return Err(Error::shape(format!(
            "kernel input channels {kc} do not match input channels {c_in}"
        )));
    }
    Ok(kh)
}

/// Write the im2col rows for every output pixel inside `region` of image `b`.
/// Row (y·w + x) holds the receptive field of output pixel (y, x) in
/// (ci, ky, kx) order, with zeros where the field crosses the frame boundary.
/// Rows outside `region` are left untouched and must not be read.
fn build_patches<T: Scalar>(
    input: &Tensor4<T>,
    b: usize,
    k: usize,
    region: Roi,
    patches: &mut [T],
) {
    let (_, c_in, h, w) = input.shape();
    let p = (k - 1) / 2;
    let rowlen = c_in * k * k;
    for y in region.y0..region.y1 {
        for x in region.x0..region.x1 {
            let row = &mut patches[(y * w + x) * rowlen..][..rowlen];
            let mut o = 0;
            for ci in 0..c_in {
                let plane = input.plane(b, ci);
                for ky in 0..k {
                    // y + ky - p as usize; wrapping makes "above the frame" huge
                    let iy = (y + ky).wrapping_sub(p);
                    if iy >= h {
                        row[o..o + k].fill(T::ZERO);
                        o += k;
                        continue;
                    }
                    let src = &plane[iy * w..(iy + 1) * w];
                    for kx in 0..k {
                        let ix = (x + kx).wrapping_sub(p);
                        row[o] = if ix < w { src[ix] } else { T::ZERO };
                        o += 1;
                    }
                }
            }
        }
    }
}

fn union_of(rois: &[Roi]) -> Roi {
    let mut u = rois[0];
    for r in &rois[1..] {
        u = u.union(r);
    }
    u
}

/// Same-padding convolution, no bias: output (n, c_out, h, w).
pub fn conv2d<T: Scalar>(input: &Tensor4<T>, kernels: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (_, _, h, w) = input.shape();
    let c_out = kernels.shape().0;
    conv2d_roi(input, kernels, &full_rois(c_out, h, w))
}

/// Convolution computed only inside each output kernel's roi; exact zeros
/// outside. Inside a roi the values are bit-identical to `conv2d`, because
/// the receptive field is read with the same frame-boundary zero padding
/// (the roi is expanded by (k−1)/2, clipped at the frame, zero-padded only
/// past the frame) and reduced in the same order.
pub fn conv2d_roi<T: Scalar>(
    input: &Tensor4<T>,
    kernels: &Tensor4<T>,
    rois: &[Roi],
) -> Result<Tensor4<T>> {
    let (n, c_in, h, w) = input.shape();
    let c_out = kernels.shape().0;
    let k = check_conv_args(input, kernels)?;
    if rois.len() != c_out {
        return Err(Error::shape(format!(
            "{} rois for {c_out} output kernels",
            rois.len()
        )));
    }
    for r in rois {
        r.validate(h, w, k)?;
    }

    let rowlen = c_in * k * k;
    let region = union_of(rois);
    let mut patches = vec![T::ZERO; h * w * rowlen];
    let mut out = Tensor4::zeros(n, c_out, h, w);
    for b in 0..n {
        build_patches(input, b, k, region, &mut patches);
        for (co, &r) in rois.iter().enumerate() {
            let kr = &kernels.data()[co * rowlen..(co + 1) * rowlen];
            let plane = out.plane_mut(b, co);
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    plane[y * w + x] = dot(&patches[(y * w + x) * rowlen..][..rowlen], kr);
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a (possibly ROI-restricted) convolution.
/// `dout` is dL/doutput with whatever masking/weighting the caller applied;
/// positions outside each kernel's roi contribute nothing. Returns
/// (dL/dinput, dL/dkernels).
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    kernels: &Tensor4<T>,
    dout: &Tensor4<T>,
    rois: &[Roi],
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let (n, c_in, h, w) = input.shape();
    let (c_out, _, _, _) = kernels.shape();
    let k = check_conv_args(input, kernels)?;
    if dout.shape() != (n, c_out, h, w) {
        return Err(Error::shape("upstream gradient shape mismatch".to_string()));
    }

    let p = (k - 1) / 2;
    let rowlen = c_in * k * k;
    let region = union_of(rois);
    let mut patches = vec![T::ZERO; h * w * rowlen];
    let mut dpatches = vec![T::ZERO; h * w * rowlen];
    let mut dinput = Tensor4::zeros(n, c_in, h, w);
    let mut dkernels = Tensor4::zeros(c_out, c_in, k, k);

    for b in 0..n {
        build_patches(input, b, k, region, &mut patches);
        dpatches[region.y0 * w * rowlen..region.y1 * w * rowlen].fill(T::ZERO);
        for (co, &r) in rois.iter().enumerate() {
            let kr = &kernels.data()[co * rowlen..(co + 1) * rowlen];
            let dkr = &mut dkernels.data_mut()[co * rowlen..(co + 1) * rowlen];
            let g = dout.plane(b, co);
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    let gv = g[y * w + x];
                    let row = &patches[(y * w + x) * rowlen..][..rowlen];
                    axpy(gv, row, dkr);
                    axpy(gv, kr, &mut dpatches[(y * w + x) * rowlen..][..rowlen]);
                }
            }
        }
        // scatter dpatches back to input pixels (col2im)
        for y in region.y0..region.y1 {
            for x in region.x0..region.x1 {
                let row = &dpatches[(y * w + x) * rowlen..][..rowlen];
                let mut o = 0;
                for ci in 0..c_in {
                    for ky in 0..k {
                        let iy = (y + ky).wrapping_sub(p);
                        if iy >= h {
                            o += k;
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (x + kx).wrapping_sub(p);
                            if ix < w {
                                let di = dinput.offset(b, ci, iy, ix);
                                dinput.data[di] += row[o];
                            }
                            o += 1;
                        }
                    }
                }
            }
        }
    }
    Ok((dinput, dkernels))
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat within-plane offset of the winning input pixel
/// (first-scanned wins ties) for the backward pass.
pub fn maxpool2<T: Scalar>(input: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<u32>)> {
    let (n, c, h, w) = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("maxpool2 needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros(n, c, oh, ow);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let mut oi = 0;
    for b in 0..n {
        for ch in 0..c {
            let plane = input.plane(b, ch);
            let oplane = out.plane_mut(b, ch);
            for y in 0..oh {
                for x in 0..ow {
                    let base = (2 * y) * w + 2 * x;
                    let mut best = base;
                    let mut bv = plane[base];
                    for &cand in &[base + 1, base + w, base + w + 1] {
                        if plane[cand] > bv {
                            bv = plane[cand];
                            best = cand;
                        }
                    }
                    oplane[y * ow + x] = bv;
                    argmax[oi] = best as u32;
                    oi += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2_backward<T: Scalar>(
    dout: &Tensor4<T>,
    argmax: &[u32],
    input_shape: (usize, usize, usize, usize),
) -> Tensor4<T> {
    let (n, c, h, w) = input_shape;
    let (_, _, oh, ow) = dout.shape();
    let mut dinput = Tensor4::zeros(n, c, h, w);
    let mut oi = 0;
    for b in 0..n {
        for ch in 0..c {
            let dplane = dinput.plane_mut(b, ch);
            let gplane = dout.plane(b, ch);
            for g in &gplane[..oh * ow] {
                dplane[argmax[oi] as usize] += *g;
                oi += 1;
            }
        }
    }
    dinput
}

/// Fully connected layer on (n, features, 1, 1): y = W·x + b,
/// weights (out, in, 1, 1), bias length out.
pub fn dense<T: Scalar>(input: &Tensor4<T>, weights: &Tensor4<T>, bias: &[T]) -> Result<Tensor4<T>> {
    let (n, f, ih, iw) = input.shape();
    let (out_f, in_f, _, _) = weights.shape();
    if ih != 1 || iw != 1 || in_f != f || bias.len() != out_f {
        return Err(Error::shape(format!(
            "dense shapes: input ({n},{f},{ih},{iw}), weights ({out_f},{in_f}), bias {}",
            bias.len()
        )));
    }
    let mut out = Tensor4::zeros(n, out_f, 1, 1);
    for b in 0..n {
        let x = &input.data()[b * f..(b + 1) * f];
        let y = &mut out.data_mut()[b * out_f..(b + 1) * out_f];
        for (o, yo) in y.iter_mut().enumerate() {
            *yo = dot(&weights.data()[o * f..(o + 1) * f], x) + bias[o];
        }
    }
    Ok(out)
}

/// Returns (dinput, dweights, dbias).
pub fn dense_backward<T: Scalar>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    dout: &Tensor4<T>,
) -> (Tensor4<T>, Tensor4<T>, Vec<T>) {
    let (n, f, _, _) = input.shape();
    let (out_f, _, _, _) = weights.shape();
    let mut dinput = Tensor4::zeros(n, f, 1, 1);
    let mut dweights = Tensor4::zeros(out_f, f, 1, 1);
    let mut dbias = vec![T::ZERO; out_f];
    for b in 0..n {
        let x = &input.data()[b * f..(b + 1) * f];
        let g = &dout.data()[b * out_f..(b + 1) * out_f];
        let dx = &mut dinput.data_mut()[b * f..(b + 1) * f];
        for o in 0..out_f {
            let gv = g[o];
            axpy(gv, &weights.data()[o * f..(o + 1) * f], dx);
            axpy(gv, x, &mut dweights.data_mut()[o * f..(o + 1) * f]);
            dbias[o] += gv;
        }
    }
    (dinput, dweights, dbias)
}

pub fn relu<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = v.maximum(T::ZERO);
    }
    out
}

/// Gradient masked by where the forward output was positive.
pub fn relu_backward<T: Scalar>(dout: &Tensor4<T>, output: &Tensor4<T>) -> Tensor4<T> {
    let mut din = dout.clone();
    for (g, o) in din.data_mut().iter_mut().zip(output.data()) {
        if *o <= T::ZERO {
            *g = T::ZERO;
        }
    }
    din
}

/// Inverted dropout: at train time keeps each unit with probability 1−rate and
/// scales it by 1/(1−rate); identity at eval. The mask is returned for the
/// backward pass. The RNG is an explicit argument — no hidden state.
pub fn dropout<T: Scalar>(
    input: &Tensor4<T>,
    rate: f64,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor4<T>, Option<Vec<bool>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0,1)")));
    }
    if !train || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let mut out = input.clone();
    let mut mask = vec![false; out.len()];
    for (v, keep) in out.data_mut().iter_mut().zip(mask.iter_mut()) {
        *keep = rng.random::<f64>() >= rate;
        *v = if *keep { *v * scale } else { T::ZERO };
    }
    Ok((out, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(dout: &Tensor4<T>, mask: &[bool], rate: f64) -> Tensor4<T> {
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let mut din = dout.clone();
    for (g, keep) in din.data_mut().iter_mut().zip(mask) {
        *g = if *keep { *g * scale } else { T::ZERO };
    }
    din
}

/// Mean softmax cross-entropy over the batch. Logits are (n, classes, 1, 1);
/// returns (loss, dL/dlogits) with the 1/n baked into the gradient.
pub fn softmax_xent<T: Scalar>(logits: &Tensor4<T>, labels: &[usize]) -> Result<(T, Tensor4<T>)> {
    let (n, classes, h, w) = logits.shape();
    if h != 1 || w != 1 {
        return Err(Error::shape("logits must be (n, classes, 1, 1)".to_string()));
    }
    if labels.len() != n || n == 0 {
        return Err(Error::shape(format!("{} labels for batch of {n}", labels.len())));
    }
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut dlogits = Tensor4::zeros(n, classes, 1, 1);
    let mut loss = T::ZERO;
    for b in 0..n {
        if labels[b] >= classes {
            return Err(Error::data(format!("label {} out of range {classes}", labels[b])));
        }
        let z = &logits.data()[b * classes..(b + 1) * classes];
        let mut m = z[0];
        for v in z {
            m = m.maximum(*v);
        }
        let mut sum = T::ZERO;
        for v in z {
            sum += (*v - m).exp();
        }
        // loss_b = ln Σ e^{z-m} − (z_label − m)
        loss += sum.ln() - (z[labels[b]] - m);
        let d = &mut dlogits.data_mut()[b * classes..(b + 1) * classes];
        for (i, v) in z.iter().enumerate() {
            d[i] = (*v - m).exp() / sum * inv_n;
        }
        d[labels[b]] -= inv_n;
    }
    Ok((loss * inv_n, dlogits))
}
