//! Shared test oracles: direct-definition reference implementations that the
//! library must match. Deliberately naive — written against the math, not
//! against the library internals.

#![allow(dead_code)] // each test binary uses its own subset

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tkn_core::scalar::Scalar;
use tkn_core::tensor::Tensor4;

/// Same-padding cross-correlation by the nested loops of the definition:
/// single accumulator, zero padding outside the input, no bias.
pub fn conv2d_naive<T: Scalar>(input: &Tensor4<T>, kernels: &Tensor4<T>) -> Tensor4<T> {
    let (n, c_in, h, w) = input.shape();
    let (c_out, kc, kh, kw) = kernels.shape();
    assert_eq!(c_in, kc, "oracle: channel mismatch");
    assert_eq!(kh, kw, "oracle: square kernels only");
    assert_eq!(kh % 2, 1, "oracle: odd kernels only");
    let p = (kh - 1) / 2;
    let mut out = Tensor4::zeros(n, c_out, h, w);
    for b in 0..n {
        for co in 0..c_out {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = T::ZERO;
                    for ci in 0..c_in {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = y + ky;
                                let ix = x + kx;
                                if iy >= p && ix >= p && iy - p < h && ix - p < w {
                                    acc += input.get(b, ci, iy - p, ix - p)
                                        * kernels.get(co, ci, ky, kx);
                                }
                            }
                        }
                    }
                    out.set(b, co, y, x, acc);
                }
            }
        }
    }
    out
}

/// Endpoint-inclusive sample point i of a length-`len` axis, in [0,1].
pub fn sample_point(i: usize, len: usize) -> f64 {
    if len == 1 {
        0.5
    } else {
        i as f64 / (len - 1) as f64
    }
}

/// Zero-correlation bivariate Gaussian window evaluated jointly (one exponent)
/// on the H×W sample grid — the independent form the separable map must equal.
pub fn bivariate_gaussian(mx: f64, my: f64, sx: f64, sy: f64, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        let uy = (sample_point(i, h) - my) / sy;
        for j in 0..w {
            let ux = (sample_point(j, w) - mx) / sx;
            out[i * w + j] = (-(ux * ux + uy * uy) / 2.0).exp();
        }
    }
    out
}

/// Bivariate Cauchy window: product of the two 1D Cauchy windows, evaluated
/// jointly as a single rational expression.
pub fn bivariate_cauchy(mx: f64, my: f64, sx: f64, sy: f64, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        let uy = (sample_point(i, h) - my) / sy;
        for j in 0..w {
            let ux = (sample_point(j, w) - mx) / sx;
            out[i * w + j] = 1.0 / ((1.0 + ux * ux) * (1.0 + uy * uy));
        }
    }
    out
}

/// Relative error with an absolute floor so near-zero pairs don't blow up.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Relative error with the denominator floored at the data's natural scale.
/// Used when comparing f32 results against f64 oracles on unit-scale data:
/// where terms cancel far below the input magnitude, the difference is f32
/// rounding noise, not an implementation defect.
pub fn rel_err_unit(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central finite difference of a scalar function at x.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, step: f64) -> f64 {
    (f(x + step) - f(x - step)) / (2.0 * step)
}

/// Tensor with entries uniform in [-1, 1).
pub fn rand_tensor<T: Scalar>(
    rng: &mut ChaCha8Rng,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Tensor4<T> {
    let data = (0..n * c * h * w)
        .map(|_| T::from_f64(rng.random_range(-1.0..1.0)))
        .collect();
    Tensor4::from_vec(n, c, h, w, data).unwrap()
}
