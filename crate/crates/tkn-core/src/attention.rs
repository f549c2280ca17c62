//! Parametric attention windows. Each kernel carries a relative mean and
//! scale per axis; sampling those on the activation grid gives two 1D
//! window vectors whose outer product is the kernel's 2D attention map, and
//! the scales also induce the integer ROI rectangle the convolution is
//! restricted to.
//!
//! Axis convention: x runs along the width (columns, length W), y along the
//! height (rows, length H). `F_att[i][j] = f_y[i] · f_x[j]`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Roi;

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Attention window shape family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    Cauchy,
}

impl Family {
    pub fn parse(s: &str) -> Result<Family> {
        match s {
            "gaussian" => Ok(Family::Gaussian),
            "cauchy" => Ok(Family::Cauchy),
            other => Err(Error::config(format!("unknown attention family '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Cauchy => "cauchy",
        }
    }
}

/// Per-kernel window parameters: relative means in [0,1] and positive
/// relative scales, one pair per axis. Also doubles as the gradient
/// container for these four scalars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionParams<T> {
    pub m_x: T,
    pub m_y: T,
    pub s_x: T,
    pub s_y: T,
}

impl<T: Scalar> AttentionParams<T> {
    /// Initialization: window centered with scale 1, so the ROI covers the
    /// whole activation.
    pub fn init() -> Self {
        AttentionParams {
            m_x: T::from_f64(0.5),
            m_y: T::from_f64(0.5),
            s_x: T::ONE,
            s_y: T::ONE,
        }
    }

    pub fn zero() -> Self {
        AttentionParams { m_x: T::ZERO, m_y: T::ZERO, s_x: T::ZERO, s_y: T::ZERO }
    }
}

/// Sampled attention state for one kernel on an H×W grid.
#[derive(Debug, Clone)]
pub struct AttentionMap<T> {
    /// 1D window along the width, length W.
    pub f_x: Vec<T>,
    /// 1D window along the height, length H.
    pub f_y: Vec<T>,
    /// Outer product, H·W row-major: `f_att[i*W + j] = f_y[i] * f_x[j]`.
    pub f_att: Vec<T>,
}

/// Window value at normalized offset u = (x − m)/s: 1 at the peak, strictly
/// decreasing in |u|, never reaching 0.
pub fn eval_window<T: Scalar>(family: Family, u: T) -> T {
    match family {
        Family::Gaussian => (-(u * u) / T::from_f64(2.0)).exp(),
        Family::Cauchy => T::ONE / (T::ONE + u * u),
    }
}

/// Endpoint-inclusive sample point i of a length-`len` axis, scaled to [0,1].
/// A single-point axis samples its center.
pub fn sample_point(i: usize, len: usize) -> f64 {
    if len == 1 {
        0.5
    } else {
        i as f64 / (len - 1) as f64
    }
}

/// Normalized offset of sample point i: (x_i − m)/s, evaluated as
/// (i − m·(L−1)) / (s·(L−1)) so that mirror points around a centered mean
/// produce exact negations (which keeps centered windows exactly
/// palindromic in floating point).
#[inline]
fn u_at<T: Scalar>(i: usize, len: usize, m: T, s: T) -> T {
    if len == 1 {
        (T::from_f64(0.5) - m) / s
    } else {
        let n = T::from_f64((len - 1) as f64);
        (T::from_f64(i as f64) - m * n) / (s * n)
    }
}

/// The 1D window sampled on the axis grid.
pub fn sample_vector<T: Scalar>(family: Family, m: T, s: T, len: usize) -> Result<Vec<T>> {
    if len == 0 {
        return Err(Error::shape("sample_vector needs len >= 1".to_string()));
    }
    Ok((0..len).map(|i| eval_window(family, u_at(i, len, m, s))).collect())
}

/// The 1D window plus its partials ∂f/∂m and ∂f/∂s at every sample point.
///
/// With u = (x−m)/s:
///   Gaussian f = e^{−u²/2}:  ∂f/∂m = f·u/s,      ∂f/∂s = f·u²/s
///   Cauchy   f = 1/(1+u²):   ∂f/∂m = 2u·f²/s,    ∂f/∂s = 2u²·f²/s
fn sample_vector_grads<T: Scalar>(
    family: Family,
    m: T,
    s: T,
    len: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut f = vec![T::ZERO; len];
    let mut dm = vec![T::ZERO; len];
    let mut ds = vec![T::ZERO; len];
    let two = T::from_f64(2.0);
    for i in 0..len {
        let u = u_at(i, len, m, s);
        let fv = eval_window(family, u);
        f[i] = fv;
        match family {
            Family::Gaussian => {
                dm[i] = fv * u / s;
                ds[i] = fv * u * u / s;
            }
            Family::Cauchy => {
                dm[i] = two * u * fv * fv / s;
                ds[i] = two * u * u * fv * fv / s;
            }
        }
    }
    (f, dm, ds)
}

/// Sample both axes and take the outer product.
pub fn build_map<T: Scalar>(
    family: Family,
    params: &AttentionParams<T>,
    h: usize,
    w: usize,
) -> Result<AttentionMap<T>> {
    let f_x = sample_vector(family, params.m_x, params.s_x, w)?;
    let f_y = sample_vector(family, params.m_y, params.s_y, h)?;
    let mut f_att = vec![T::ZERO; h * w];
    for (i, fy) in f_y.iter().enumerate() {
        for (j, fx) in f_x.iter().enumerate() {
            f_att[i * w + j] = *fy * *fx;
        }
    }
    Ok(AttentionMap { f_x, f_y, f_att })
}

/// The integer ROI induced by the window: relative bounds m ± s/√2 scaled by
/// the axis length, floored/ceiled outward (never dropping a touched pixel),
/// then clamped so the rectangle stays in frame and fits the kernel.
pub fn compute_roi<T: Scalar>(params: &AttentionParams<T>, h: usize, w: usize, k: usize) -> Roi {
    let axis = |m: f64, s: f64, len: usize| -> (usize, usize) {
        let r = s / SQRT2;
        let lo = ((m - r) * len as f64).floor();
        let hi = ((m + r) * len as f64).ceil();
        let lo = lo.clamp(0.0, (len - k) as f64) as usize;
        let hi = hi.clamp((lo + k) as f64, len as f64) as usize;
        (lo, hi)
    };
    let (x0, x1) = axis(params.m_x.to_f64(), params.s_x.to_f64(), w);
    let (y0, y1) = axis(params.m_y.to_f64(), params.s_y.to_f64(), h);
    Roi { x0, y0, x1, y1 }
}

/// Project parameters back into their valid region: means in [0,1], scales
/// at or above the floor where the ROI is still k pixels wide. Idempotent.
pub fn clip_params<T: Scalar>(
    params: &AttentionParams<T>,
    h: usize,
    w: usize,
    k: usize,
) -> AttentionParams<T> {
    let clamp01 = |v: T| v.maximum(T::ZERO).minimum(T::ONE);
    let floor_x = T::from_f64(k as f64 / (SQRT2 * w as f64));
    let floor_y = T::from_f64(k as f64 / (SQRT2 * h as f64));
    AttentionParams {
        m_x: clamp01(params.m_x),
        m_y: clamp01(params.m_y),
        s_x: params.s_x.maximum(floor_x),
        s_y: params.s_y.maximum(floor_y),
    }
}

/// Gradients of L = Σ_{i,j} upstream[i,j] · pre_attention[i,j] · F_att[i,j]
/// with respect to the four window parameters. Separability factors the
/// double sum into row/column sums against the 1D windows.
pub fn grad_params<T: Scalar>(
    upstream: &[T],
    pre_attention: &[T],
    family: Family,
    params: &AttentionParams<T>,
    h: usize,
    w: usize,
) -> AttentionParams<T> {
    let mut weighted = vec![T::ZERO; h * w];
    for ((g, u), p) in weighted.iter_mut().zip(upstream).zip(pre_attention) {
        *g = *u * *p;
    }
    grad_params_weighted(&weighted, family, params, h, w)
}

/// Same as [`grad_params`] but takes G[i,j] = upstream ⊙ pre_attention
/// already combined (and, in training, summed over the batch).
pub fn grad_params_weighted<T: Scalar>(
    weighted: &[T],
    family: Family,
    params: &AttentionParams<T>,
    h: usize,
    w: usize,
) -> AttentionParams<T> {
    debug_assert_eq!(weighted.len(), h * w);
    let (f_x, dfx_dm, dfx_ds) = sample_vector_grads(family, params.m_x, params.s_x, w);
    let (f_y, dfy_dm, dfy_ds) = sample_vector_grads(family, params.m_y, params.s_y, h);

    // colsum[j] = Σ_i G[i,j]·f_y[i], rowsum[i] = Σ_j G[i,j]·f_x[j]
    let mut colsum = vec![T::ZERO; w];
    let mut rowsum = vec![T::ZERO; h];
    for i in 0..h {
        let row = &weighted[i * w..(i + 1) * w];
        let fy = f_y[i];
        let mut rs = T::ZERO;
        for j in 0..w {
            colsum[j] += row[j] * fy;
            rs += row[j] * f_x[j];
        }
        rowsum[i] = rs;
    }

    let dot = |a: &[T], b: &[T]| -> T {
        let mut acc = T::ZERO;
        for (x, y) in a.iter().zip(b) {
            acc += *x * *y;
        }
        acc
    };
    AttentionParams {
        m_x: dot(&dfx_dm, &colsum),
        s_x: dot(&dfx_ds, &colsum),
        m_y: dot(&dfy_dm, &rowsum),
        s_y: dot(&dfy_ds, &rowsum),
    }
}
