//! Target layer: convolution computed only inside each kernel's ROI, then
//! multiplied by that kernel's attention map. The un-sliced variant (full
//! ROI regardless of scale, attention multiply only) is the plain attentive
//! layer used for ablation.

use crate::attention::{
    build_map, clip_params, compute_roi, grad_params_weighted, AttentionMap, AttentionParams,
    Family,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{conv2d_backward, conv2d_roi, full_rois, Roi, Tensor4};

/// Weights plus per-kernel attention state for one layer working on a fixed
/// H×W activation. `rois` and `maps` are caches derived from `params`;
/// [`TargetLayerState::refresh`] rebuilds them and is called after every
/// parameter update.
#[derive(Debug, Clone)]
pub struct TargetLayerState<T> {
    pub kernels: Tensor4<T>,
    pub family: Family,
    pub params: Vec<AttentionParams<T>>,
    pub rois: Vec<Roi>,
    pub maps: Vec<AttentionMap<T>>,
    /// Scale-penalty coefficient for this layer, buildup factor included.
    pub lambda: f64,
    /// When false, convolution always runs on the full frame (ablation
    /// variant); attention windows still apply and still train.
    pub sliced: bool,
    pub h: usize,
    pub w: usize,
}

/// Forward state needed by [`TargetLayerState::backward`].
#[derive(Debug, Clone)]
pub struct TargetCache<T> {
    pub input: Tensor4<T>,
    /// ROI convolution output before the attention multiply.
    pub pre_attention: Tensor4<T>,
}

#[derive(Debug, Clone)]
pub struct TargetGrads<T> {
    pub dinput: Tensor4<T>,
    pub dkernels: Tensor4<T>,
    pub dparams: Vec<AttentionParams<T>>,
}

impl<T: Scalar> TargetLayerState<T> {
    /// Fresh layer: centered windows at scale 1 (full ROIs).
    pub fn new(
        kernels: Tensor4<T>,
        family: Family,
        lambda: f64,
        sliced: bool,
        h: usize,
        w: usize,
    ) -> Result<Self> {
        if lambda < 0.0 {
            return Err(Error::config(format!("negative scale penalty {lambda}")));
        }
        let c_out = kernels.shape().0;
        let params = vec![AttentionParams::init(); c_out];
        let mut state = TargetLayerState {
            kernels,
            family,
            params,
            rois: Vec::new(),
            maps: Vec::new(),
            lambda,
            sliced,
            h,
            w,
        };
        state.refresh()?;
        Ok(state)
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.shape().2
    }

    /// Clip parameters and rebuild the cached ROIs and attention maps.
    pub fn refresh(&mut self) -> Result<()> {
        let k = self.kernel_size();
        let (h, w) = (self.h, self.w);
        for p in &mut self.params {
            *p = clip_params(p, h, w, k);
        }
        self.rois = if self.sliced {
            self.params.iter().map(|p| compute_roi(p, h, w, k)).collect()
        } else {
            full_rois(self.params.len(), h, w)
        };
        self.maps = self
            .params
            .iter()
            .map(|p| build_map(self.family, p, h, w))
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// ROI convolution then attention multiply; exact zeros outside each
    /// kernel's roi.
    pub fn forward(&self, input: &Tensor4<T>) -> Result<(Tensor4<T>, TargetCache<T>)> {
        let (n, _, h, w) = input.shape();
        if (h, w) != (self.h, self.w) {
            return Err(Error::shape(format!(
                "target layer built for {}x{}, got {h}x{w}",
                self.h, self.w
            )));
        }
        let pre = conv2d_roi(input, &self.kernels, &self.rois)?;
        let c_out = self.kernels.shape().0;
        let mut out = pre.clone();
        for b in 0..n {
            for co in 0..c_out {
                let map = &self.maps[co].f_att;
                let r = &self.rois[co];
                let plane = out.plane_mut(b, co);
                for y in r.y0..r.y1 {
                    for x in r.x0..r.x1 {
                        plane[y * w + x] *= map[y * w + x];
                    }
                }
            }
        }
        Ok((
            out,
            TargetCache { input: input.clone(), pre_attention: pre },
        ))
    }

    /// Chain rule through the attention multiply and the ROI convolution.
    /// The scale-penalty gradient 2λs is added here so that optimizer-level
    /// weight decay never touches attention parameters.
    pub fn backward(&self, upstream: &Tensor4<T>, cache: &TargetCache<T>) -> Result<TargetGrads<T>> {
        let (n, c_out, h, w) = upstream.shape();
        if cache.pre_attention.shape() != (n, c_out, h, w) {
            return Err(Error::shape("upstream does not match cached forward".to_string()));
        }

        // into the convolution: dconv = upstream ⊙ F_att inside each roi
        let mut dconv = Tensor4::zeros(n, c_out, h, w);
        for b in 0..n {
            for co in 0..c_out {
                let map = &self.maps[co].f_att;
                let r = &self.rois[co];
                let up = upstream.plane(b, co);
                let d = dconv.plane_mut(b, co);
                for y in r.y0..r.y1 {
                    for x in r.x0..r.x1 {
                        d[y * w + x] = up[y * w + x] * map[y * w + x];
                    }
                }
            }
        }
        let (dinput, dkernels) = conv2d_backward(&cache.input, &self.kernels, &dconv, &self.rois)?;

        // into the window parameters: weight upstream by the pre-attention
        // activations, summed over the batch (parameters are batch-shared)
        let lambda2 = T::from_f64(2.0 * self.lambda);
        let mut weighted = vec![T::ZERO; h * w];
        let mut dparams = Vec::with_capacity(c_out);
        for co in 0..c_out {
            weighted.fill(T::ZERO);
            let r = &self.rois[co];
            for b in 0..n {
                let up = upstream.plane(b, co);
                let pre = cache.pre_attention.plane(b, co);
                for y in r.y0..r.y1 {
                    for x in r.x0..r.x1 {
                        weighted[y * w + x] += up[y * w + x] * pre[y * w + x];
                    }
                }
            }
            let mut g = grad_params_weighted(&weighted, self.family, &self.params[co], h, w);
            g.s_x += lambda2 * self.params[co].s_x;
            g.s_y += lambda2 * self.params[co].s_y;
            dparams.push(g);
        }

        Ok(TargetGrads { dinput, dkernels, dparams })
    }

    /// (convolution multiply-accumulates, attention multiplies) at the
    /// current ROIs: each kernel costs c_in·k² MACs per roi pixel plus one
    /// attention multiply per roi pixel.
    pub fn flops(&self) -> (u64, u64) {
        let (_, c_in, k, _) = self.kernels.shape();
        let per_pixel = (c_in * k * k) as u64;
        let mut macs = 0u64;
        let mut att = 0u64;
        for r in &self.rois {
            let area = r.area() as u64;
            macs += per_pixel * area;
            att += area;
        }
        (macs, att)
    }
}
