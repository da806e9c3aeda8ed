mod common;

use std::collections::BTreeMap;

use common::{rng, uniform};
use fairst::fairness::{if_loss, rf_loss, AttributeConfig, FairnessConfig, RegularizerKind};
use fairst::ingest::{DemographicField, FeatureStack2D, TemporalSlice};
use fairst::model::{fairst_forward, stream1d, stream2d, stream3d, ArchConfig, Model, ModelParams};
use fairst::tensor::{AdamState, Tensor, LEAKY_SLOPE};
use fairst::train::{batch_gradients, FairnessContext};
use proptest::prelude::*;

const W: usize = 12;
const R: usize = 4;
const C: usize = 4;

fn tiny_arch() -> ArchConfig {
    ArchConfig::new(W, R, C, 2, 2)
}

struct Fixture {
    slice: TemporalSlice,
    features: FeatureStack2D,
    field: DemographicField,
}

fn fixture(seed: u64) -> Fixture {
    let mut r = rng(seed);
    let n = R * C;
    let slice = TemporalSlice {
        history: uniform(&mut r, W * n, 0.0, 4.0),
        target: uniform(&mut r, n, 0.0, 4.0),
        history_1d: uniform(&mut r, 2 * W, -1.0, 1.0),
        target_index: W,
    };
    let mut features = FeatureStack2D::new(R, C);
    features.push("a", uniform(&mut r, n, 0.0, 1.0)).unwrap();
    features.push("b", uniform(&mut r, n, 0.0, 1.0)).unwrap();
    let field = DemographicField::new(
        R,
        C,
        uniform(&mut r, n, 0.1, 1.0),
        BTreeMap::from([("race".to_string(), uniform(&mut r, n, 0.0, 1.0))]),
    )
    .unwrap();
    Fixture {
        slice,
        features,
        field,
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[test]
fn full_network_gradients_match_finite_differences_through_fairness_terms() {
    let fx = fixture(3);
    let params = ModelParams::init(&tiny_arch(), 11).unwrap();
    let model = Model::new(params.clone(), 1.0).unwrap();
    let fc = |kind| FairnessConfig {
        kind,
        lambda: 1.0,
        attributes: vec![AttributeConfig {
            name: "race".into(),
            weight: 1.0,
            threshold: 0.5,
        }],
        ..Default::default()
    };
    let (rf_cfg, if_cfg) = (fc(RegularizerKind::Rf), fc(RegularizerKind::If));
    let labs = rf_cfg.labelings(&fx.field).unwrap();
    let grads_for = |cfg: &FairnessConfig| {
        let ctx = FairnessContext {
            config: cfg,
            field: &fx.field,
            labelings: &labs,
        };
        batch_gradients(&[&fx.slice], &model, &fx.features, &ctx)
            .unwrap()
            .1
    };
    let g_rf = grads_for(&rf_cfg);
    let g_if = grads_for(&if_cfg);

    let objectives = |p: &ModelParams| -> (f64, f64, f64) {
        let pred = fairst_forward(
            &fx.slice.history,
            &fx.slice.history_1d,
            &fx.features.maps,
            p,
        )
        .unwrap();
        let pred = pred.data();
        let mae = pred
            .iter()
            .zip(&fx.slice.target)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / pred.len() as f64;
        let rf = rf_loss(pred, &fx.slice.target, &labs["race"], &fx.field, 1.0).unwrap();
        let ifl = if_loss(pred, &fx.slice.target, &fx.field, "race", 1e-9, 1.0).unwrap();
        (mae, rf, ifl)
    };
    let (_, rf0, if0) = objectives(&params);
    assert!(
        rf0 > 1e-6 && if0 > 1e-6,
        "fixture must sit away from the kink"
    );

    let h = 1e-5;
    let ok = |a: f64, n: f64| (a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-6);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut checked = 0;
    for (k, name) in names.iter().enumerate() {
        let base = params.get(name).unwrap().clone();
        for i in 0..base.len() {
            let eval = |d: f64| {
                let mut p = params.clone();
                let mut t = base.clone();
                t.data_mut()[i] += d;
                p.set(name, t).unwrap();
                objectives(&p)
            };
            let (mp, rp, ip) = eval(h);
            let (mm, rm, im) = eval(-h);
            let n_rf = ((mp + rp) - (mm + rm)) / (2.0 * h);
            let n_if = ((mp + ip) - (mm + im)) / (2.0 * h);
            assert!(
                ok(g_rf[k].data()[i], n_rf),
                "rf {name}[{i}]: {} vs {n_rf}",
                g_rf[k].data()[i]
            );
            assert!(
                ok(g_if[k].data()[i], n_if),
                "if {name}[{i}]: {} vs {n_if}",
                g_if[k].data()[i]
            );
            checked += 1;
        }
    }
    assert_eq!(checked, tiny_arch().param_count());
}

#[test]
fn parameter_count_matches_shape_walk() {
    // 3D: 1->16->32->1 with 3x3x3 kernels, closing 12->8 3x3
    let s3 = (16 * 27 + 16) + (32 * 16 * 27 + 32) + (32 * 27 + 1) + (8 * 12 * 9 + 8);
    // 1D: 2->8 width-3, collapse 8*12 -> 4
    let s1 = (8 * 2 * 3 + 8) + (4 * 8 * 12 + 4);
    // 2D: 2->8->4 3x3
    let s2 = (8 * 2 * 9 + 8) + (4 * 8 * 9 + 4);
    // head: 16->8->1 3x3
    let head = (8 * 16 * 9 + 8) + (9 * 8 + 1);
    let arch = tiny_arch();
    assert_eq!(arch.param_count(), s3 + s1 + s2 + head);
    assert_eq!(
        ModelParams::init(&arch, 0).unwrap().count(),
        s3 + s1 + s2 + head
    );
}

#[test]
fn zero_parameters_give_zero_outputs() {
    let fx = fixture(1);
    let p = ModelParams::constant(&tiny_arch(), 0.0).unwrap();
    assert!(stream3d(&fx.slice.history, &p)
        .unwrap()
        .data()
        .iter()
        .all(|v| *v == 0.0));
    assert!(stream1d(&fx.slice.history_1d, &p)
        .unwrap()
        .data()
        .iter()
        .all(|v| *v == 0.0));
    assert!(stream2d(&fx.features.maps, &p)
        .unwrap()
        .data()
        .iter()
        .all(|v| *v == 0.0));
    let out = fairst_forward(
        &fx.slice.history,
        &fx.slice.history_1d,
        &fx.features.maps,
        &p,
    )
    .unwrap();
    assert_eq!(out.shape(), &[R, C]);
    assert!(out.data().iter().all(|v| *v == 0.0));
}

#[test]
fn impulse_stays_inside_the_receptive_field() {
    let (w, rows, cols) = (5, 11, 11);
    let mut arch = ArchConfig::new(w, rows, cols, 0, 0);
    arch.filters_3d = vec![2, 2, 1];
    let mut p = ModelParams::constant(&arch, 0.0).unwrap();
    for (name, shape) in arch.param_shapes() {
        if name.ends_with(".w") {
            // all-ones kernels spread the impulse as far as each layer can
            p.set(&name, Tensor::full(&shape, 1.0)).unwrap();
        }
    }
    let mut history = vec![0.0; w * rows * cols];
    let (t0, r0, c0) = (2, 5, 5);
    history[(t0 * rows + r0) * cols + c0] = 1.0;
    let out = stream3d(&history, &p).unwrap();
    // three 3D layers then the closing 2D layer: reach 4 cells
    let reach = arch.filters_3d.len() + 1;
    for ch in 0..arch.c3 {
        for r in 0..rows {
            for c in 0..cols {
                let d = r.abs_diff(r0).max(c.abs_diff(c0));
                let v = out.data()[(ch * rows + r) * cols + c];
                if d > reach {
                    assert_eq!(v, 0.0, "({r},{c}) outside the field");
                } else {
                    assert!(v > 0.0, "({r},{c}) inside the field");
                }
            }
        }
    }
}

#[test]
fn one_dimensional_stream_matches_hand_forward_and_is_constant_over_space() {
    let mut arch = ArchConfig::new(4, 2, 3, 2, 0);
    arch.filters_1d = vec![2];
    arch.c1 = 2;
    let mut p = ModelParams::init(&arch, 5).unwrap();
    let mut r = rng(9);
    for name in ["s1.conv0.b", "s1.collapse.b"] {
        let n = p.get(name).unwrap().len();
        p.set(
            name,
            Tensor::new(vec![n], uniform(&mut r, n, -0.5, 0.5)).unwrap(),
        )
        .unwrap();
    }
    let series = uniform(&mut r, 8, -1.0, 1.0);
    let out = stream1d(&series, &p).unwrap();
    assert_eq!(out.shape(), &[2, 2, 3]);

    let w = p.get("s1.conv0.w").unwrap().data().to_vec();
    let b = p.get("s1.conv0.b").unwrap().data().to_vec();
    let mut hidden = vec![0.0; 2 * 4];
    for o in 0..2 {
        for t in 0..4 {
            let mut acc = b[o];
            for i in 0..2 {
                for k in 0..3 {
                    let tt = t as isize + k as isize - 1;
                    if (0..4).contains(&tt) {
                        acc += w[(o * 2 + i) * 3 + k] * series[i * 4 + tt as usize];
                    }
                }
            }
            hidden[o * 4 + t] = relu(acc);
        }
    }
    let wc = p.get("s1.collapse.w").unwrap().data().to_vec();
    let bc = p.get("s1.collapse.b").unwrap().data().to_vec();
    for ch in 0..2 {
        let v = relu(bc[ch] + (0..8).map(|j| wc[ch * 8 + j] * hidden[j]).sum::<f64>());
        for cell in 0..6 {
            assert!((out.data()[ch * 6 + cell] - v).abs() < 1e-14);
        }
    }
}

#[test]
fn two_dimensional_stream_identity_and_oracle() {
    let mut arch = ArchConfig::new(2, 3, 4, 0, 2);
    arch.filters_2d = vec![];
    arch.c2 = 2;
    let mut p = ModelParams::constant(&arch, 0.0).unwrap();
    let shape = arch
        .param_shapes()
        .into_iter()
        .find(|(n, _)| n == "s2.conv0.w")
        .unwrap()
        .1;
    // identity: out channel o reads in channel o at the center tap
    let ident = Tensor::from_fn(&shape, |i| {
        let (o, rest) = (i / 18, i % 18);
        let (c, tap) = (rest / 9, rest % 9);
        if o == c && tap == 4 {
            1.0
        } else {
            0.0
        }
    });
    p.set("s2.conv0.w", ident).unwrap();
    let feats: Vec<f64> = (0..24).map(|i| i as f64 / 24.0).collect();
    assert_eq!(stream2d(&feats, &p).unwrap().data(), &feats[..]);

    let mut arch = ArchConfig::new(2, 3, 4, 0, 2);
    arch.filters_2d = vec![3];
    let p = ModelParams::init(&arch, 8).unwrap();
    let w0 = p.get("s2.conv0.w").unwrap().data().to_vec();
    let w1 = p.get("s2.conv1.w").unwrap().data().to_vec();
    let h = common::direct_conv3(&feats, 2, [1, 3, 4], &w0, 3, [1, 3, 3], &[0.0; 3]);
    let h: Vec<f64> = h.into_iter().map(relu).collect();
    let o = common::direct_conv3(
        &h,
        3,
        [1, 3, 4],
        &w1,
        arch.c2,
        [1, 3, 3],
        &vec![0.0; arch.c2],
    );
    let o: Vec<f64> = o.into_iter().map(relu).collect();
    let got = stream2d(&feats, &p).unwrap();
    for (a, b) in got.data().iter().zip(&o) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn one_adam_step_moves_every_stream() {
    let fx = fixture(4);
    let mut model = Model::new(ModelParams::init(&tiny_arch(), 2).unwrap(), 4.0).unwrap();
    let cfg = FairnessConfig::default();
    let labs = BTreeMap::new();
    let ctx = FairnessContext {
        config: &cfg,
        field: &fx.field,
        labelings: &labs,
    };
    let before = model.params.clone();
    let (parts, grads) = batch_gradients(&[&fx.slice], &model, &fx.features, &ctx).unwrap();
    assert!(parts.total > 0.0);
    let mut adam = AdamState::new(model.params.iter().map(|(_, t)| t));
    adam.step(model.params.tensors_mut(), &grads, 0.005)
        .unwrap();
    for prefix in ["s3.", "s1.", "s2.", "head."] {
        let moved = before
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .any(|(n, t)| model.params.get(n).unwrap() != t);
        assert!(moved, "stream {prefix} did not move");
    }
}

#[test]
fn forward_is_deterministic() {
    let fx = fixture(6);
    let p = ModelParams::init(&tiny_arch(), 1).unwrap();
    let a = fairst_forward(
        &fx.slice.history,
        &fx.slice.history_1d,
        &fx.features.maps,
        &p,
    )
    .unwrap();
    let b = fairst_forward(
        &fx.slice.history,
        &fx.slice.history_1d,
        &fx.features.maps,
        &p,
    )
    .unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_valid_architecture_produces_one_frame(
        window in 1usize..6,
        rows in 1usize..5,
        cols in 1usize..5,
        n_series in 0usize..3,
        n_features in 0usize..3,
        f3 in proptest::collection::vec(1usize..4, 0..2),
        kernel in prop_oneof![Just(1usize), Just(3), Just(5)],
        head_layers in 1usize..3,
        seed in 0u64..100,
    ) {
        let mut arch = ArchConfig::new(window, rows, cols, n_series, n_features);
        arch.filters_3d = f3.into_iter().chain([1]).collect();
        arch.kernel = kernel;
        arch.head_layers = head_layers;
        arch.filters_1d = vec![2];
        arch.filters_2d = vec![];
        let p = ModelParams::init(&arch, seed).unwrap();
        let mut r = rng(seed);
        let out = fairst_forward(
            &uniform(&mut r, window * rows * cols, 0.0, 1.0),
            &uniform(&mut r, n_series * window, -1.0, 1.0),
            &uniform(&mut r, n_features * rows * cols, 0.0, 1.0),
            &p,
        ).unwrap();
        prop_assert_eq!(out.shape(), &[rows, cols]);
        prop_assert!(out.is_finite());
    }
}
