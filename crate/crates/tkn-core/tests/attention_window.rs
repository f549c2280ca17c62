//! Window functions, sampled maps vs. the jointly-evaluated bivariate
//! oracle, ROI derivation, clipping, and analytic parameter gradients.

mod common;

use common::{bivariate_cauchy, bivariate_gaussian, central_diff, rand_tensor, rel_err};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tkn_core::attention::{
    build_map, clip_params, compute_roi, eval_window, grad_params, sample_vector,
    AttentionParams, Family, SQRT2,
};
use tkn_core::tensor::Roi;

/// Accessor picking one attention field out of the parameter struct.
type FieldRef = fn(&mut AttentionParams<f64>) -> &mut f64;

const BOTH: [Family; 2] = [Family::Gaussian, Family::Cauchy];

fn rand_params(rng: &mut ChaCha8Rng) -> AttentionParams<f64> {
    AttentionParams {
        m_x: rng.random_range(0.0..1.0),
        m_y: rng.random_range(0.0..1.0),
        s_x: rng.random_range(0.05..1.5),
        s_y: rng.random_range(0.05..1.5),
    }
}

#[test]
fn window_peaks_at_one_and_decays() {
    for fam in BOTH {
        assert_eq!(eval_window(fam, 0.0f64), 1.0);
        let mut prev = 1.0;
        for i in 1..50 {
            let u = i as f64 * 0.1;
            let v = eval_window(fam, u);
            assert!(v < prev && v > 0.0, "{fam:?} not strictly decreasing at {u}");
            assert_eq!(v, eval_window(fam, -u), "{fam:?} not symmetric at {u}");
            prev = v;
        }
    }
}

#[test]
fn window_closed_form_values() {
    assert!(rel_err(eval_window(Family::Gaussian, 1.0f64), (-0.5f64).exp()) <= 1e-12);
    assert!((eval_window(Family::Gaussian, 1.0f64) - 0.606531).abs() <= 1e-6);
    assert_eq!(eval_window(Family::Cauchy, 1.0f64), 0.5);
    assert_eq!(eval_window(Family::Cauchy, 2.0f64), 0.2);
    // heavier tails: Cauchy at |u|=2 sits well above the Gaussian
    let g2 = eval_window(Family::Gaussian, 2.0f64);
    assert!((g2 - 0.135335).abs() <= 1e-6);
    assert!(eval_window(Family::Cauchy, 2.0f64) > g2);
}

#[test]
fn window_value_at_roi_edge() {
    // the roi bound sits at |u| = 1/√2 regardless of the parameters
    let u = 1.0 / SQRT2;
    assert!(rel_err(eval_window(Family::Gaussian, u), (-0.25f64).exp()) <= 1e-12);
    assert!((eval_window(Family::Gaussian, u) - 0.778801).abs() <= 1e-6);
    assert!(rel_err(eval_window(Family::Cauchy, u), 2.0 / 3.0) <= 1e-12);
}

#[test]
fn sample_vector_known_values() {
    let v = sample_vector(Family::Gaussian, 0.5f64, 1.0, 5).unwrap();
    let want = [
        (-0.125f64).exp(), // u = ±1/2 at the endpoints
        (-0.03125f64).exp(),
        1.0,
        (-0.03125f64).exp(),
        (-0.125f64).exp(),
    ];
    for (got, w) in v.iter().zip(&want) {
        assert!(rel_err(*got, *w) <= 1e-12);
    }
    assert!((v[0] - 0.88250).abs() <= 1e-5);
    assert!((v[1] - 0.96923).abs() <= 1e-5);
    assert_eq!(v[2], 1.0);
}

#[test]
fn sample_vector_degenerate_and_errors() {
    for fam in BOTH {
        let v = sample_vector(fam, 0.3f64, 0.7, 1).unwrap();
        // single sample point sits at the axis center
        assert_eq!(v[0], eval_window(fam, (0.5 - 0.3) / 0.7));
        assert!(sample_vector(fam, 0.5f64, 1.0, 0).is_err());
    }
}

#[test]
fn centered_vector_is_palindromic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for fam in BOTH {
        for _ in 0..20 {
            let s = rng.random_range(0.05..2.0);
            let len = rng.random_range(1..40);
            let v = sample_vector(fam, 0.5f64, s, len).unwrap();
            for i in 0..len {
                assert_eq!(v[i], v[len - 1 - i]);
            }
        }
    }
}

#[test]
fn map_is_outer_product_with_peak_inside_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for fam in BOTH {
        for _ in 0..50 {
            let p = rand_params(&mut rng);
            let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
            let map = build_map(fam, &p, h, w).unwrap();
            assert_eq!(map.f_x.len(), w);
            assert_eq!(map.f_y.len(), h);
            for i in 0..h {
                for j in 0..w {
                    let v = map.f_att[i * w + j];
                    assert_eq!(v, map.f_y[i] * map.f_x[j]);
                    assert!(v > 0.0 && v <= 1.0);
                }
            }
        }
    }
}

#[test]
fn map_hits_one_exactly_at_mean_sample_point() {
    // 9-point axis puts sample points on multiples of 1/8
    let p = AttentionParams { m_x: 0.25f64, m_y: 0.5, s_x: 0.4, s_y: 0.9 };
    for fam in BOTH {
        let map = build_map(fam, &p, 9, 9).unwrap();
        let peak = map.f_att[4 * 9 + 2]; // row 4 = 0.5, col 2 = 0.25
        assert_eq!(peak, 1.0);
        let ones = map.f_att.iter().filter(|&&v| v == 1.0).count();
        assert_eq!(ones, 1);
    }
    // a mean off the grid never reaches 1
    let off = AttentionParams { m_x: 0.3f64, m_y: 0.3, s_x: 0.5, s_y: 0.5 };
    for fam in BOTH {
        let map = build_map(fam, &off, 9, 9).unwrap();
        assert!(map.f_att.iter().all(|&v| v < 1.0));
    }
}

#[test]
fn separable_map_equals_bivariate_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..1000 {
        let p = rand_params(&mut rng);
        let (h, w) = (rng.random_range(1..16), rng.random_range(1..16));
        for fam in BOTH {
            let map = build_map(fam, &p, h, w).unwrap();
            let oracle = match fam {
                Family::Gaussian => bivariate_gaussian(p.m_x, p.m_y, p.s_x, p.s_y, h, w),
                Family::Cauchy => bivariate_cauchy(p.m_x, p.m_y, p.s_x, p.s_y, h, w),
            };
            for (got, want) in map.f_att.iter().zip(&oracle) {
                assert!(
                    rel_err(*got, *want) <= 1e-12,
                    "trial {trial} {fam:?}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn init_params_give_full_roi() {
    let p = AttentionParams::<f64>::init();
    for &(h, w) in &[(28, 28), (56, 56), (14, 14), (7, 9), (8, 8), (3, 3)] {
        for &k in &[1usize, 3, 5] {
            if k <= h && k <= w {
                assert_eq!(compute_roi(&p, h, w, k), Roi::full(h, w), "{h}x{w} k={k}");
            }
        }
    }
}

#[test]
fn roi_known_bounds() {
    // raw x-interval (11.47, 20.53) lands on pixels 11..21
    let p = AttentionParams { m_x: 0.5f64, m_y: 0.5, s_x: 0.2, s_y: 1.0 };
    let roi = compute_roi(&p, 32, 32, 3);
    assert_eq!((roi.x0, roi.x1), (11, 21));
    assert_eq!((roi.y0, roi.y1), (0, 32));
}

#[test]
fn roi_width_is_kernel_at_scale_floor() {
    // odd frame, centered mean: the floor-scale bounds land on integers,
    // so the roi is exactly k wide
    for &(len, k) in &[(9usize, 3usize), (7, 3), (11, 5), (27, 3)] {
        let s = k as f64 / (SQRT2 * len as f64);
        let p = AttentionParams { m_x: 0.5f64, m_y: 0.5, s_x: s, s_y: s };
        let roi = compute_roi(&p, len, len, k);
        assert_eq!(roi.width(), k, "len {len} k {k}");
        assert_eq!(roi.height(), k);
    }
    // in general floor/ceil may add a pixel per side, never more
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..2000 {
        let len = rng.random_range(3..40);
        let k = *[1usize, 3, 5].iter().rfind(|&&k| k <= len).unwrap();
        let m = rng.random_range(0.0..1.0);
        let s = k as f64 / (SQRT2 * len as f64);
        let p = AttentionParams { m_x: m, m_y: m, s_x: s, s_y: s };
        let roi = compute_roi(&p, len, len, k);
        assert!(roi.width() >= k && roi.width() <= k + 2, "width {}", roi.width());
    }
}

#[test]
fn roi_valid_for_random_clipped_params() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let h = rng.random_range(3..40);
        let w = rng.random_range(3..40);
        let k = *[1usize, 3, 5].iter().rfind(|&&k| k <= h.min(w)).unwrap();
        let wild = AttentionParams {
            m_x: rng.random_range(-1.0..2.0),
            m_y: rng.random_range(-1.0..2.0),
            s_x: rng.random_range(0.0001..3.0),
            s_y: rng.random_range(0.0001..3.0),
        };
        let p = clip_params(&wild, h, w, k);
        let roi = compute_roi(&p, h, w, k);
        roi.validate(h, w, k).unwrap();
    }
}

#[test]
fn roi_grows_with_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10_000 {
        let (h, w, k) = (rng.random_range(5..30), rng.random_range(5..30), 3);
        let m_x = rng.random_range(0.0..1.0);
        let m_y = rng.random_range(0.0..1.0);
        let s1 = rng.random_range(0.08..1.0);
        let s2 = s1 + rng.random_range(0.01..1.0);
        let p1 = clip_params(&AttentionParams { m_x, m_y, s_x: s1, s_y: s1 }, h, w, k);
        let p2 = clip_params(&AttentionParams { m_x, m_y, s_x: s2, s_y: s2 }, h, w, k);
        let r1 = compute_roi(&p1, h, w, k);
        let r2 = compute_roi(&p2, h, w, k);
        assert!(
            r2.x0 <= r1.x0 && r2.y0 <= r1.y0 && r2.x1 >= r1.x1 && r2.y1 >= r1.y1,
            "larger scale must contain smaller: {r1:?} vs {r2:?}"
        );
    }
    // strict growth once the raw interval gains a pixel
    let p_small = AttentionParams { m_x: 0.5f64, m_y: 0.5, s_x: 0.2, s_y: 0.2 };
    let p_big = AttentionParams { m_x: 0.5f64, m_y: 0.5, s_x: 0.4, s_y: 0.4 };
    let (r_small, r_big) = (compute_roi(&p_small, 32, 32, 3), compute_roi(&p_big, 32, 32, 3));
    assert!(r_big.x0 < r_small.x0 && r_big.x1 > r_small.x1);
}

#[test]
fn clip_examples() {
    let p = AttentionParams { m_x: 1.3f64, m_y: -0.2, s_x: 0.01, s_y: 2.0 };
    let c = clip_params(&p, 28, 28, 3);
    assert_eq!(c.m_x, 1.0);
    assert_eq!(c.m_y, 0.0);
    assert!((c.s_x - 0.075761).abs() <= 1e-6); // 3/(√2·28)
    assert!(rel_err(c.s_x, 3.0 / (SQRT2 * 28.0)) <= 1e-12);
    assert_eq!(c.s_y, 2.0); // no upper clamp on scales

    let valid = AttentionParams { m_x: 0.4f64, m_y: 0.6, s_x: 0.5, s_y: 0.5 };
    assert_eq!(clip_params(&valid, 28, 28, 3), valid);
}

#[test]
fn clip_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let wild = AttentionParams {
            m_x: rng.random_range(-3.0..3.0),
            m_y: rng.random_range(-3.0..3.0),
            s_x: rng.random_range(-1.0..3.0),
            s_y: rng.random_range(-1.0..3.0),
        };
        let (h, w, k) = (rng.random_range(3..40), rng.random_range(3..40), 3);
        let once = clip_params(&wild, h, w, k);
        let twice = clip_params(&once, h, w, k);
        assert_eq!(once, twice);
    }
}

#[test]
fn zero_upstream_zero_param_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pre = rand_tensor::<f64>(&mut rng, 1, 1, 8, 8);
    let p = rand_params(&mut rng);
    for fam in BOTH {
        let g = grad_params(&[0.0; 64], pre.data(), fam, &p, 8, 8);
        assert_eq!(g, AttentionParams::zero());
    }
}

#[test]
fn mean_gradient_vanishes_at_peak_sample() {
    // single upstream spike exactly on the mean sample point: ∂f/∂m = 0 there
    let p = AttentionParams { m_x: 0.5f64, m_y: 0.5, s_x: 0.7, s_y: 0.3 };
    let (h, w) = (9, 9);
    let mut upstream = vec![0.0f64; h * w];
    upstream[4 * w + 4] = 1.7;
    let pre = vec![1.0f64; h * w];
    for fam in BOTH {
        let g = grad_params(&upstream, &pre, fam, &p, h, w);
        assert_eq!(g.m_x, 0.0);
        assert_eq!(g.m_y, 0.0);
        assert!(g.s_x == 0.0 && g.s_y == 0.0); // u = 0 kills ∂f/∂s too
    }
}

#[test]
fn param_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..100 {
        let (h, w) = (8, 8);
        let upstream = rand_tensor::<f64>(&mut rng, 1, 1, h, w);
        let pre = rand_tensor::<f64>(&mut rng, 1, 1, h, w);
        let p = rand_params(&mut rng);
        for fam in BOTH {
            let g = grad_params(upstream.data(), pre.data(), fam, &p, h, w);
            let loss = |q: &AttentionParams<f64>| -> f64 {
                let map = build_map(fam, q, h, w).unwrap();
                upstream
                    .data()
                    .iter()
                    .zip(pre.data())
                    .zip(&map.f_att)
                    .map(|((u, a), f)| u * a * f)
                    .sum()
            };
            let fields: [(f64, FieldRef); 4] = [
                (g.m_x, |q| &mut q.m_x),
                (g.m_y, |q| &mut q.m_y),
                (g.s_x, |q| &mut q.s_x),
                (g.s_y, |q| &mut q.s_y),
            ];
            for (analytic, field) in fields {
                let mut q = p;
                let orig = *field(&mut q);
                let num = central_diff(
                    |v| {
                        *field(&mut q) = v;
                        loss(&q)
                    },
                    orig,
                    1e-6,
                );
                assert!(
                    rel_err(analytic, num) <= 1e-4,
                    "trial {trial} {fam:?}: analytic {analytic} vs numeric {num}"
                );
            }
        }
    }
}

#[test]
fn family_parsing() {
    assert_eq!(Family::parse("gaussian").unwrap(), Family::Gaussian);
    assert_eq!(Family::parse("cauchy").unwrap(), Family::Cauchy);
    assert!(Family::parse("laplace").is_err());
    assert_eq!(Family::Cauchy.name(), "cauchy");
}
