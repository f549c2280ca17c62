//! Architecture shape checking, parameter-count reproduction, seeded
//! initialization, the Nesterov update rule, and an end-to-end gradient
//! check through a small two-target-layer network.

mod common;

use common::{central_diff, rel_err};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tkn_core::attention::{build_map, Family};
use tkn_core::data::LabeledImageSet;
use tkn_core::flops::param_count;
use tkn_core::graph::{
    build_cnn6, build_cnn6_mini, build_tkn6, build_tkn6_mini, dense_twin, LayerSpec, NetworkSpec,
};
use tkn_core::model::{Layer, LayerGrads, Model};
use tkn_core::tensor::{softmax_xent, Tensor4};
use tkn_core::train::{evaluate, sgd_nesterov_step};

#[test]
fn param_counts_match_published_tables() {
    let cnn28 = build_cnn6((28, 28), 10).unwrap();
    assert_eq!(param_count(&cnn28).unwrap(), 4_586_642);

    let cnn56 = build_cnn6((56, 56), 10).unwrap();
    assert_eq!(param_count(&cnn56).unwrap(), 10_758_290);

    let tkn28 = build_tkn6((28, 28), 10, Family::Cauchy, 1e-4, 2.0).unwrap();
    assert_eq!(param_count(&tkn28).unwrap(), 4_586_642 + 2_560);

    // the model materializes exactly the counted scalars
    let mini = build_tkn6_mini((28, 28), 10, Family::Cauchy, 1e-4, 4.0).unwrap();
    let model = Model::<f32>::init(&mini, 1).unwrap();
    assert_eq!(model.param_count(), param_count(&mini).unwrap());
    assert_eq!(
        param_count(&mini).unwrap(),
        param_count(&build_cnn6_mini((28, 28), 10).unwrap()).unwrap() + 4 * (32 + 32 + 16)
    );
}

#[test]
fn shape_chain_through_cnn6() {
    let spec = build_cnn6((28, 28), 10).unwrap();
    let shapes = spec.shapes().unwrap();
    assert_eq!(shapes[0], (256, 28, 28)); // conv1
    assert_eq!(shapes[2], (256, 14, 14)); // pool1
    assert_eq!(shapes[5], (256, 7, 7)); // pool2
    assert_eq!(shapes[6], (128, 7, 7)); // conv3
    assert_eq!(shapes[8], (6272, 1, 1)); // flatten
    assert_eq!(*shapes.last().unwrap(), (10, 1, 1));
    assert_eq!(spec.num_classes().unwrap(), 10);
    assert!(!spec.has_target_layers());
    assert!(build_tkn6((28, 28), 10, Family::Gaussian, 0.0, 1.0)
        .unwrap()
        .has_target_layers());
}

#[test]
fn buildup_multiplies_penalty_with_depth() {
    let spec = build_tkn6((28, 28), 10, Family::Cauchy, 1e-3, 4.0).unwrap();
    let lambdas: Vec<f64> = spec
        .layers
        .iter()
        .filter_map(|l| match l {
            LayerSpec::Target { lambda, .. } => Some(*lambda),
            _ => None,
        })
        .collect();
    assert_eq!(lambdas, vec![1e-3, 4e-3, 1.6e-2]);
}

#[test]
fn rejects_bad_architectures() {
    // spatial dims not divisible by 4 (two pools)
    assert!(build_cnn6((30, 30), 10).is_err());
    assert!(build_tkn6_mini((29, 28), 10, Family::Cauchy, 0.0, 1.0).is_err());
    // dense before flatten
    assert!(NetworkSpec::new(
        (1, 8, 8),
        vec![LayerSpec::Dense { units: 10 }]
    )
    .is_err());
    // even kernel
    assert!(NetworkSpec::new(
        (1, 8, 8),
        vec![LayerSpec::Conv { c_out: 4, k: 4 }]
    )
    .is_err());
    // kernel larger than the frame
    assert!(NetworkSpec::new(
        (1, 4, 4),
        vec![LayerSpec::Conv { c_out: 4, k: 5 }]
    )
    .is_err());
    // dropout rate 1.0 never keeps anything
    assert!(NetworkSpec::new(
        (1, 4, 4),
        vec![LayerSpec::Dropout { rate: 1.0 }]
    )
    .is_err());
    // pool on odd dims
    assert!(NetworkSpec::new((1, 7, 7), vec![LayerSpec::MaxPool2]).is_err());
}

#[test]
fn dense_twin_swaps_target_for_conv_only() {
    let spec = build_tkn6_mini((28, 28), 10, Family::Gaussian, 1e-3, 2.0).unwrap();
    let twin = dense_twin(&spec);
    assert_eq!(twin.layers.len(), spec.layers.len());
    for (a, b) in spec.layers.iter().zip(&twin.layers) {
        match (a, b) {
            (LayerSpec::Target { c_out, k, .. }, LayerSpec::Conv { c_out: c2, k: k2 }) => {
                assert_eq!((c_out, k), (c2, k2));
            }
            (a, b) => assert_eq!(a, b),
        }
    }
    assert_eq!(twin, build_cnn6_mini((28, 28), 10).unwrap());
}

#[test]
fn init_is_seed_deterministic_with_full_windows() {
    let spec = build_tkn6_mini((28, 28), 10, Family::Cauchy, 1e-4, 4.0).unwrap();
    let a = Model::<f32>::init(&spec, 7).unwrap();
    let b = Model::<f32>::init(&spec, 7).unwrap();
    let c = Model::<f32>::init(&spec, 8).unwrap();
    let mut saw_target = false;
    let mut diff_seed_differs = false;
    for ((la, lb), lc) in a.layers.iter().zip(&b.layers).zip(&c.layers) {
        match (la, lb, lc) {
            (Layer::Target(sa), Layer::Target(sb), Layer::Target(sc)) => {
                saw_target = true;
                assert_eq!(sa.kernels.data(), sb.kernels.data());
                assert_eq!(sa.params, sb.params);
                for (i, r) in sa.rois.iter().enumerate() {
                    assert!(r.is_full(sa.h, sa.w), "kernel {i} roi {r:?} not full at init");
                }
                if sa.kernels.data() != sc.kernels.data() {
                    diff_seed_differs = true;
                }
            }
            (Layer::Dense { weights: wa, bias: ba }, Layer::Dense { weights: wb, bias: bb }, _) => {
                assert_eq!(wa.data(), wb.data());
                assert_eq!(ba, bb);
                assert!(ba.iter().all(|&v| v == 0.0));
            }
            _ => {}
        }
    }
    assert!(saw_target);
    assert!(diff_seed_differs);
}

#[test]
fn init_variance_follows_fan_in() {
    // 5x5 kernels over 256 channels: fan_in 6400, so the sample variance of
    // the 1.6M weights should sit within 10% of 2/6400
    let spec = build_cnn6((28, 28), 10).unwrap();
    let model = Model::<f64>::init(&spec, 42).unwrap();
    let Layer::Conv { kernels } = &model.layers[3] else {
        panic!("layer 3 should be the second conv");
    };
    assert_eq!(kernels.shape(), (256, 256, 5, 5));
    let n = kernels.len() as f64;
    let mean: f64 = kernels.data().iter().sum::<f64>() / n;
    let var: f64 = kernels.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let want = 2.0 / 6400.0;
    assert!((var - want).abs() / want < 0.10, "variance {var} vs {want}");
    assert!(mean.abs() < 3e-4, "mean {mean}");

    // per-layer streams: different layers draw different weights
    let Layer::Conv { kernels: k1 } = &model.layers[0] else { panic!() };
    assert_ne!(&k1.data()[..25], &kernels.data()[..25]);
}

fn one_unit_model(w0: f32) -> Model<f32> {
    let spec = NetworkSpec::new((1, 1, 1), vec![LayerSpec::Dense { units: 1 }]).unwrap();
    let mut model = Model::<f32>::init(&spec, 0).unwrap();
    let Layer::Dense { weights, .. } = &mut model.layers[0] else { panic!() };
    weights.data_mut()[0] = w0;
    model
}

fn unit_grads(g: f32) -> Vec<LayerGrads<f32>> {
    vec![LayerGrads::Dense {
        dweights: Tensor4::from_vec(1, 1, 1, 1, vec![g]).unwrap(),
        dbias: vec![0.0],
    }]
}

#[test]
fn nesterov_update_hand_examples() {
    // w=1, g=1, μ=0.9, lr=0.1, v=0 → v=1, w = 1 − 0.1·(1 + 0.9) = 0.81
    let mut model = one_unit_model(1.0);
    let mut velocity = model.zero_grads();
    sgd_nesterov_step(&mut model, &unit_grads(1.0), &mut velocity, 0.1, 0.9, 0.0).unwrap();
    let Layer::Dense { weights, .. } = &model.layers[0] else { panic!() };
    assert_eq!(weights.data()[0], 0.81);

    // second identical step: v = 0.9 + 1 = 1.9, w = 0.81 − 0.1·(1 + 1.71)
    sgd_nesterov_step(&mut model, &unit_grads(1.0), &mut velocity, 0.1, 0.9, 0.0).unwrap();
    let Layer::Dense { weights, .. } = &model.layers[0] else { panic!() };
    assert!((weights.data()[0] - 0.539).abs() < 1e-6);

    // zero grads, zero velocity → unchanged
    let mut model = one_unit_model(0.625);
    let mut velocity = model.zero_grads();
    sgd_nesterov_step(&mut model, &unit_grads(0.0), &mut velocity, 0.1, 0.9, 0.0).unwrap();
    let Layer::Dense { weights, .. } = &model.layers[0] else { panic!() };
    assert_eq!(weights.data()[0], 0.625);
}

#[test]
fn weight_decay_touches_weights_not_biases() {
    let mut model = one_unit_model(1.0);
    let Layer::Dense { bias, .. } = &mut model.layers[0] else { panic!() };
    bias[0] = 1.0;
    let mut velocity = model.zero_grads();
    // zero loss gradient: only decay acts. g_w = 0.1 → v=0.1,
    // w = 1 − 0.1·(0.1 + 0.09) = 0.981; bias keeps no decay → unchanged.
    sgd_nesterov_step(&mut model, &unit_grads(0.0), &mut velocity, 0.1, 0.9, 0.1).unwrap();
    let Layer::Dense { weights, bias } = &model.layers[0] else { panic!() };
    assert!((weights.data()[0] - 0.981).abs() < 1e-7);
    assert_eq!(bias[0], 1.0);
}

#[test]
fn optimizer_projects_scales_back_to_floor() {
    let spec = NetworkSpec::new(
        (1, 8, 8),
        vec![LayerSpec::Target {
            c_out: 2,
            k: 3,
            family: Family::Cauchy,
            lambda: 0.0,
            sliced: true,
        }],
    )
    .unwrap();
    let mut model = Model::<f32>::init(&spec, 3).unwrap();
    let mut velocity = model.zero_grads();
    let mut grads = model.zero_grads();
    // huge positive scale gradient pushes s far below the floor
    let LayerGrads::Target { dparams, .. } = &mut grads[0] else { panic!() };
    dparams[0].s_x = 50.0;
    dparams[0].s_y = 80.0;
    sgd_nesterov_step(&mut model, &grads, &mut velocity, 0.1, 0.9, 0.0).unwrap();
    let Layer::Target(st) = &model.layers[0] else { panic!() };
    let floor = 3.0 / (std::f64::consts::SQRT_2 * 8.0);
    assert_eq!(st.params[0].s_x, floor as f32);
    assert_eq!(st.params[0].s_y, floor as f32);
    // maps and rois were rebuilt for the clipped params
    assert_eq!(st.rois[0], tkn_core::attention::compute_roi(&st.params[0], 8, 8, 3));
    assert_eq!(st.params[1].s_x, 1.0); // untouched kernel stays at init
}

/// Scale penalty matching what the target layers add to their gradients.
fn attention_penalty(model: &Model<f64>) -> f64 {
    model
        .layers
        .iter()
        .map(|l| match l {
            Layer::Target(st) => {
                st.params
                    .iter()
                    .map(|p| st.lambda * (p.s_x * p.s_x + p.s_y * p.s_y))
                    .sum::<f64>()
            }
            _ => 0.0,
        })
        .sum()
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let spec = NetworkSpec::new(
        (1, 8, 8),
        vec![
            LayerSpec::Target { c_out: 8, k: 3, family: Family::Cauchy, lambda: 0.01, sliced: true },
            LayerSpec::Relu,
            LayerSpec::MaxPool2,
            LayerSpec::Target { c_out: 8, k: 3, family: Family::Gaussian, lambda: 0.02, sliced: true },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 10 },
        ],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = Model::<f64>::init(&spec, 5).unwrap();
    // move the windows off their init so m-gradients are generic
    for li in [0usize, 3] {
        let Layer::Target(st) = &mut model.layers[li] else { panic!() };
        for p in &mut st.params {
            p.m_x = rng.random_range(0.25..0.75);
            p.m_y = rng.random_range(0.25..0.75);
            p.s_x = rng.random_range(0.45..0.9);
            p.s_y = rng.random_range(0.45..0.9);
        }
        st.refresh().unwrap();
    }

    let input = common::rand_tensor::<f64>(&mut rng, 4, 1, 8, 8);
    let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..10)).collect();

    let (loss0, grads) = {
        let (logits, caches) = model.forward(&input, true).unwrap();
        let (loss, dlogits) = softmax_xent(&logits, &labels).unwrap();
        let (_, grads) = model.backward(caches, dlogits).unwrap();
        (loss + attention_penalty(&model), grads)
    };
    assert!(loss0.is_finite());

    let loss_of = |model: &mut Model<f64>| -> f64 {
        let (logits, _) = model.forward(&input, true).unwrap();
        let (loss, _) = softmax_xent(&logits, &labels).unwrap();
        loss + attention_penalty(model)
    };

    let mut checked = 0;
    for li in [0usize, 3] {
        let (LayerGrads::Target { dkernels, dparams }, _) = (&grads[li], ()) else { panic!() };
        // kernels
        for _ in 0..10 {
            let i = rng.random_range(0..dkernels.len());
            let mut m2 = model.clone();
            let Layer::Target(st) = &mut m2.layers[li] else { panic!() };
            let orig = st.kernels.data()[i];
            let num = central_diff(
                |v| {
                    let Layer::Target(st) = &mut m2.layers[li] else { panic!() };
                    st.kernels.data_mut()[i] = v;
                    loss_of(&mut m2)
                },
                orig,
                1e-5,
            );
            let got = dkernels.data()[i];
            assert!(rel_err(got, num) <= 1e-4, "layer {li} kernel {i}: {got} vs {num}");
            checked += 1;
        }
        // attention params (rois held fixed, maps rebuilt, as the analytic
        // gradient is defined)
        for co in [0usize, 3, 7] {
            let fields: [(f64, usize); 4] = [
                (dparams[co].m_x, 0),
                (dparams[co].m_y, 1),
                (dparams[co].s_x, 2),
                (dparams[co].s_y, 3),
            ];
            for (analytic, which) in fields {
                let mut m2 = model.clone();
                let orig = {
                    let Layer::Target(st) = &m2.layers[li] else { panic!() };
                    let p = &st.params[co];
                    [p.m_x, p.m_y, p.s_x, p.s_y][which]
                };
                let num = central_diff(
                    |v| {
                        let Layer::Target(st) = &mut m2.layers[li] else { panic!() };
                        let p = &mut st.params[co];
                        *[&mut p.m_x, &mut p.m_y, &mut p.s_x, &mut p.s_y][which] = v;
                        st.maps[co] = build_map(st.family, &st.params[co], st.h, st.w).unwrap();
                        loss_of(&mut m2)
                    },
                    orig,
                    1e-6,
                );
                assert!(
                    rel_err(analytic, num) <= 1e-4,
                    "layer {li} kernel {co} param {which}: {analytic} vs {num}"
                );
                checked += 1;
            }
        }
    }
    // dense weights and bias
    let LayerGrads::Dense { dweights, dbias } = &grads[6] else { panic!() };
    for _ in 0..10 {
        let i = rng.random_range(0..dweights.len());
        let mut m2 = model.clone();
        let orig = {
            let Layer::Dense { weights, .. } = &m2.layers[6] else { panic!() };
            weights.data()[i]
        };
        let num = central_diff(
            |v| {
                let Layer::Dense { weights, .. } = &mut m2.layers[6] else { panic!() };
                weights.data_mut()[i] = v;
                loss_of(&mut m2)
            },
            orig,
            1e-5,
        );
        assert!(rel_err(dweights.data()[i], num) <= 1e-4);
        checked += 1;
    }
    {
        let mut m2 = model.clone();
        let num = central_diff(
            |v| {
                let Layer::Dense { bias, .. } = &mut m2.layers[6] else { panic!() };
                bias[2] = v;
                loss_of(&mut m2)
            },
            0.0,
            1e-5,
        );
        assert!(rel_err(dbias[2], num) <= 1e-4);
        checked += 1;
    }
    assert_eq!(checked, 2 * (10 + 12) + 11);
}

#[test]
fn eval_mode_is_rng_neutral_and_deterministic() {
    let spec = build_cnn6_mini((28, 28), 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let images = {
        let mut t = Tensor4::<f32>::zeros(16, 1, 28, 28);
        for v in t.data_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        t
    };
    let labels: Vec<usize> = (0..16).map(|_| rng.random_range(0..10)).collect();
    let set = LabeledImageSet { images: images.clone(), labels };

    // two eval passes then a train pass on model a; a bare train pass on
    // model b: eval must not have advanced the dropout streams
    let mut a = Model::<f32>::init(&spec, 9).unwrap();
    let mut b = Model::<f32>::init(&spec, 9).unwrap();
    let e1 = evaluate(&mut a, &set, 8).unwrap();
    let e2 = evaluate(&mut a, &set, 8).unwrap();
    assert_eq!(e1, e2);
    let (out_a, _) = a.forward(&images, true).unwrap();
    let (out_b, _) = b.forward(&images, true).unwrap();
    assert_eq!(out_a.data(), out_b.data());

    // and two train passes do differ (fresh dropout masks)
    let (out_a2, _) = a.forward(&images, true).unwrap();
    assert_ne!(out_a.data(), out_a2.data());
}

#[test]
fn untrained_balanced_eval_sits_at_chance() {
    let spec = NetworkSpec::new(
        (1, 8, 8),
        vec![
            LayerSpec::Conv { c_out: 8, k: 3 },
            LayerSpec::Relu,
            LayerSpec::MaxPool2,
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 10 },
        ],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 500;
    let mut images = Tensor4::<f32>::zeros(n, 1, 8, 8);
    for v in images.data_mut() {
        *v = rng.random_range(0.0..1.0);
    }
    let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    let set = LabeledImageSet { images, labels };
    let mut model = Model::<f32>::init(&spec, 17).unwrap();
    let m = evaluate(&mut model, &set, 50).unwrap();
    assert!((m.error - 0.9).abs() < 0.06, "error {}", m.error);
    // random label-independent logits keep the loss at or above chance
    // (ln 10 ≈ 2.303), inflated by about half the logit variance
    let chance = (10.0f64).ln();
    assert!(m.loss >= chance - 0.05, "loss {} below chance", m.loss);
    assert!(m.loss <= chance + 1.0, "loss {} far above chance", m.loss);
}
