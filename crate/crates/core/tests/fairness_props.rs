mod common;

use std::collections::BTreeMap;

use common::{rng, uniform};
use fairst::fairness::{
    composite_loss, discretize_groups, em_loss, if_loss, ifg, pairwise_loss, rf_loss, rfg,
    AttributeConfig, FairnessConfig, FrameLoss, GroupLabel, GroupLabeling, RegularizerKind,
    DEFAULT_P_MIN, DEFAULT_Y_MIN,
};
use fairst::ingest::{DemandTensor, DemographicField};
use proptest::prelude::*;
use rand::Rng;

fn field(rows: usize, cols: usize, pop: Vec<f64>, w: Vec<f64>) -> DemographicField {
    DemographicField::new(rows, cols, pop, BTreeMap::from([("race".to_string(), w)])).unwrap()
}

fn labeling(labels: Vec<GroupLabel>) -> GroupLabeling {
    GroupLabeling {
        attribute: "race".into(),
        threshold: 0.5,
        labels,
    }
}

/// Random field with both groups present; some cells may be unpopulated.
fn random_case(seed: u64) -> (DemographicField, GroupLabeling) {
    let mut r = rng(seed);
    let rows = r.random_range(2..=6);
    let cols = r.random_range(2..=6);
    let n = rows * cols;
    let mut pop = uniform(&mut r, n, 0.0, 1.0);
    for p in pop.iter_mut() {
        if r.random_bool(0.1) {
            *p = 0.0;
        }
    }
    pop[0] = 0.5;
    pop[1] = 0.5;
    let mut w = uniform(&mut r, n, 0.0, 1.0);
    w[0] = 0.9;
    w[1] = 0.1;
    let f = field(rows, cols, pop, w);
    let labels = discretize_groups(&f, "race", 0.5, DEFAULT_P_MIN).unwrap();
    (f, labels)
}

/// Direct evaluation of the region gap from mean frames.
fn rfg_oracle(means: &[f64], labels: &GroupLabeling, p: &[f64]) -> f64 {
    let (mut yp, mut pp, mut ym, mut pm) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..means.len() {
        match labels.labels[i] {
            GroupLabel::Advantaged => {
                yp += means[i];
                pp += p[i];
            }
            GroupLabel::Disadvantaged => {
                ym += means[i];
                pm += p[i];
            }
            GroupLabel::Excluded => {}
        }
    }
    yp / pp - ym / pm
}

/// Direct evaluation of the individual gap.
fn ifg_oracle(means: &[f64], p: &[f64], w: &[f64]) -> f64 {
    let (mut yp, mut pp, mut ym, mut pm) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..means.len() {
        if p[i] >= DEFAULT_P_MIN {
            yp += w[i] * means[i];
            pp += w[i] * p[i];
            ym += (1.0 - w[i]) * means[i];
            pm += (1.0 - w[i]) * p[i];
        }
    }
    yp / pp - ym / pm
}

fn frame(f: &DemographicField, v: Vec<f64>) -> DemandTensor {
    DemandTensor::from_frames(f.rows, f.cols, 0, v).unwrap()
}

#[test]
fn two_cell_region_gap_is_ten() {
    let f = field(1, 2, vec![0.6, 0.4], vec![0.9, 0.1]);
    let l = labeling(vec![GroupLabel::Advantaged, GroupLabel::Disadvantaged]);
    // two hours whose means are 12 and 4
    let pred = DemandTensor::from_frames(1, 2, 0, vec![10.0, 3.0, 14.0, 5.0]).unwrap();
    assert_eq!(rfg(&pred, &l, &f).unwrap(), 10.0);
    assert!((rfg_oracle(&[12.0, 4.0], &l, &[0.6, 0.4]) - 10.0).abs() < 1e-12);
    let single = [12.0, 4.0];
    let loss = rf_loss(&single, &[15.0, 5.0], &l, &f, DEFAULT_Y_MIN).unwrap();
    assert!((loss - 0.5).abs() < 1e-12);
}

#[test]
fn two_cell_individual_gap_is_ten() {
    let f = field(1, 2, vec![0.5, 0.5], vec![1.0, 0.0]);
    let pred = [10.0, 5.0];
    assert!(
        (ifg(&frame(&f, pred.to_vec()), &f, "race", DEFAULT_P_MIN).unwrap() - 10.0).abs() < 1e-12
    );
    assert!((ifg_oracle(&pred, &[0.5, 0.5], &[1.0, 0.0]) - 10.0).abs() < 1e-12);
    let loss = if_loss(
        &pred,
        &[12.0, 8.0],
        &f,
        "race",
        DEFAULT_P_MIN,
        DEFAULT_Y_MIN,
    )
    .unwrap();
    assert!((loss - 0.5).abs() < 1e-12);
}

#[test]
fn equal_means_fixture() {
    let f = field(1, 2, vec![0.5, 0.5], vec![0.9, 0.1]);
    let l = labeling(vec![GroupLabel::Advantaged, GroupLabel::Disadvantaged]);
    // per-capita predictions 20 and 10
    let pred = [10.0, 5.0];
    let loss = em_loss(&pred, &[10.0, 10.0], &l, &f, DEFAULT_Y_MIN).unwrap();
    assert!((loss - (20.0f64 - 10.0).abs() / 20.0).abs() < 1e-12);

    // a third advantaged cell at the existing advantaged per-capita mean
    let f3 = field(1, 3, vec![0.25, 0.5, 0.25], vec![0.9, 0.1, 0.9]);
    let l3 = labeling(vec![
        GroupLabel::Advantaged,
        GroupLabel::Disadvantaged,
        GroupLabel::Advantaged,
    ]);
    let pred3 = [20.0 * 0.25, 10.0 * 0.5, 20.0 * 0.25];
    let loss3 = em_loss(&pred3, &[10.0, 5.0, 5.0], &l3, &f3, DEFAULT_Y_MIN).unwrap();
    assert!((loss3 - 0.5).abs() < 1e-12);
}

#[test]
fn pairwise_fixture() {
    let f = field(1, 2, vec![0.5, 0.5], vec![0.9, 0.1]);
    let l = labeling(vec![GroupLabel::Advantaged, GroupLabel::Disadvantaged]);
    // truth per-capita 10 and 10 (similarity 1); predicted per-capita 13 and 10
    let truth = [5.0, 5.0];
    let pred = [6.5, 5.0];
    let oracle = ((1.0 / 1.0) * 1.0 * 3.0 / 10.0f64).powi(2);
    let loss = pairwise_loss(&pred, &truth, &l, &f, DEFAULT_Y_MIN).unwrap();
    assert!((loss - oracle).abs() < 1e-12, "{loss} vs {oracle}");
    assert!((loss - 0.09).abs() < 1e-12);

    // distant true per-capita values push the similarity, and the loss, toward 0
    let far = pairwise_loss(&pred, &[5.0, 0.5], &l, &f, DEFAULT_Y_MIN).unwrap();
    assert!(far < 1e-12);
}

#[test]
fn composite_weights_attributes() {
    let f = DemographicField::new(
        1,
        3,
        vec![0.3, 0.3, 0.4],
        BTreeMap::from([
            ("a".to_string(), vec![0.9, 0.2, 0.4]),
            ("b".to_string(), vec![0.1, 0.8, 0.6]),
        ]),
    )
    .unwrap();
    let pred = [5.0, 1.0, 2.0];
    let truth = [3.0, 3.0, 3.0];
    let cfg = |wa: f64, wb: f64| FairnessConfig {
        kind: RegularizerKind::If,
        lambda: 1.0,
        attributes: vec![
            AttributeConfig {
                name: "a".into(),
                weight: wa,
                threshold: 0.5,
            },
            AttributeConfig {
                name: "b".into(),
                weight: wb,
                threshold: 0.5,
            },
        ],
        ..Default::default()
    };
    let la = if_loss(&pred, &truth, &f, "a", DEFAULT_P_MIN, DEFAULT_Y_MIN).unwrap();
    let lb = if_loss(&pred, &truth, &f, "b", DEFAULT_P_MIN, DEFAULT_Y_MIN).unwrap();
    let c = cfg(2.0, 0.0);
    let labs = c.labelings(&f).unwrap();
    assert!((composite_loss(&pred, &truth, &c, &f, &labs).unwrap() - 2.0 * la).abs() < 1e-12);
    let c = cfg(1.0, 1.0);
    assert!((composite_loss(&pred, &truth, &c, &f, &labs).unwrap() - (la + lb)).abs() < 1e-12);
}

#[test]
fn population_proportional_predictions_are_fair() {
    for seed in 0..50 {
        let (f, labels) = random_case(seed);
        let c = 1.0 + seed as f64;
        let pred: Vec<f64> = f.population_share.iter().map(|p| c * p).collect();
        let mut r = rng(seed + 77);
        let truth = uniform(&mut r, pred.len(), 0.0, 5.0);
        // the same proportional frame at two hours
        let mut frames = pred.clone();
        frames.extend(pred.iter().map(|v| 2.0 * v));
        let t = DemandTensor::from_frames(f.rows, f.cols, 0, frames).unwrap();
        assert!(rfg(&t, &labels, &f).unwrap().abs() < 1e-12, "seed {seed}");
        assert!(
            ifg(&t, &f, "race", DEFAULT_P_MIN).unwrap().abs() < 1e-12,
            "seed {seed}"
        );
        assert!(rf_loss(&pred, &truth, &labels, &f, DEFAULT_Y_MIN).unwrap() < 1e-12);
        assert!(if_loss(&pred, &truth, &f, "race", DEFAULT_P_MIN, DEFAULT_Y_MIN).unwrap() < 1e-12);
    }
}

#[test]
fn zero_truth_total_uses_the_floor() {
    let f = field(1, 2, vec![0.5, 0.5], vec![1.0, 0.0]);
    let l = labeling(vec![GroupLabel::Advantaged, GroupLabel::Disadvantaged]);
    let loss = rf_loss(&[1.0, 0.0], &[0.0, 0.0], &l, &f, DEFAULT_Y_MIN).unwrap();
    assert!((loss - 2.0 / DEFAULT_Y_MIN).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_nonnegative(seed in 0u64..100_000) {
        let (f, labels) = random_case(seed);
        let mut r = rng(seed ^ 1);
        let pred = uniform(&mut r, f.n_cells(), -3.0, 10.0);
        let truth = uniform(&mut r, f.n_cells(), 0.0, 10.0);
        prop_assert!(rf_loss(&pred, &truth, &labels, &f, DEFAULT_Y_MIN).unwrap() >= 0.0);
        prop_assert!(if_loss(&pred, &truth, &f, "race", DEFAULT_P_MIN, DEFAULT_Y_MIN).unwrap() >= 0.0);
        prop_assert!(em_loss(&pred, &truth, &labels, &f, DEFAULT_Y_MIN).unwrap() >= 0.0);
        prop_assert!(pairwise_loss(&pred, &truth, &labels, &f, DEFAULT_Y_MIN).unwrap() >= 0.0);
    }

    #[test]
    fn single_frame_loss_times_total_is_the_gap(seed in 0u64..100_000) {
        let (f, labels) = random_case(seed);
        let mut r = rng(seed ^ 2);
        let pred = uniform(&mut r, f.n_cells(), 0.0, 10.0);
        let truth = uniform(&mut r, f.n_cells(), 0.5, 10.0);
        let total: f64 = truth.iter().sum();
        let t = frame(&f, pred.clone());
        let gap = rfg(&t, &labels, &f).unwrap();
        let loss = rf_loss(&pred, &truth, &labels, &f, DEFAULT_Y_MIN).unwrap();
        prop_assert!((loss * total - gap.abs()).abs() <= 1e-10 * gap.abs().max(1.0));
        prop_assert!((gap - rfg_oracle(&pred, &labels, &f.population_share)).abs() <= 1e-10 * gap.abs().max(1.0));
        let igap = ifg(&t, &f, "race", DEFAULT_P_MIN).unwrap();
        let iloss = if_loss(&pred, &truth, &f, "race", DEFAULT_P_MIN, DEFAULT_Y_MIN).unwrap();
        prop_assert!((iloss * total - igap.abs()).abs() <= 1e-10 * igap.abs().max(1.0));
        let w = f.w_plus("race").unwrap();
        prop_assert!((igap - ifg_oracle(&pred, &f.population_share, w)).abs() <= 1e-10 * igap.abs().max(1.0));
    }

    #[test]
    fn gaps_are_homogeneous(seed in 0u64..100_000, k in 0.1f64..10.0) {
        let (f, labels) = random_case(seed);
        let mut r = rng(seed ^ 3);
        let pred = uniform(&mut r, 2 * f.n_cells(), 0.0, 10.0);
        let a = DemandTensor::from_frames(f.rows, f.cols, 0, pred.clone()).unwrap();
        let b = DemandTensor::from_frames(f.rows, f.cols, 0, pred.iter().map(|v| k * v).collect()).unwrap();
        let (ra, rb) = (rfg(&a, &labels, &f).unwrap(), rfg(&b, &labels, &f).unwrap());
        prop_assert!((rb - k * ra).abs() <= 1e-10 * ra.abs().max(1.0) * k.max(1.0));
        let (ia, ib) = (ifg(&a, &f, "race", DEFAULT_P_MIN).unwrap(), ifg(&b, &f, "race", DEFAULT_P_MIN).unwrap());
        prop_assert!((ib - k * ia).abs() <= 1e-10 * ia.abs().max(1.0) * k.max(1.0));
    }

    #[test]
    fn swapping_groups_negates_the_gap(seed in 0u64..100_000) {
        let (f, labels) = random_case(seed);
        let mut r = rng(seed ^ 4);
        let pred = uniform(&mut r, f.n_cells(), 0.0, 10.0);
        let truth = uniform(&mut r, f.n_cells(), 0.0, 10.0);
        let t = frame(&f, pred.clone());
        let swapped = labels.swapped();
        let (a, b) = (rfg(&t, &labels, &f).unwrap(), rfg(&t, &swapped, &f).unwrap());
        prop_assert!((a + b).abs() <= 1e-12 * a.abs().max(1.0));
        let la = FrameLoss::rf(&truth, &labels, &f, DEFAULT_Y_MIN).unwrap();
        let lb = FrameLoss::rf(&truth, &swapped, &f, DEFAULT_Y_MIN).unwrap();
        prop_assert!((la.signed_gap(&pred) + lb.signed_gap(&pred)).abs() <= 1e-12 * a.abs().max(1.0));
        prop_assert!((la.value(&pred) - lb.value(&pred)).abs() <= 1e-12);
    }

    #[test]
    fn loss_gradients_match_finite_differences(seed in 0u64..100_000, which in 0usize..4) {
        let (f, labels) = random_case(seed);
        let mut r = rng(seed ^ 5);
        let pred = uniform(&mut r, f.n_cells(), 0.0, 10.0);
        let mut truth = uniform(&mut r, f.n_cells(), 0.0, 3.0);
        if which == 3 {
            // per-capita truth within 0.5 of each other keeps the pair
            // similarities away from 0
            for (t, p) in truth.iter_mut().zip(&f.population_share) {
                *t = p * (2.0 + *t / 6.0);
            }
        }
        let loss = match which {
            0 => FrameLoss::rf(&truth, &labels, &f, DEFAULT_Y_MIN),
            1 => FrameLoss::if_(&truth, &f, "race", DEFAULT_P_MIN, DEFAULT_Y_MIN),
            2 => FrameLoss::em(&truth, &labels, &f, DEFAULT_Y_MIN),
            _ => FrameLoss::pairwise(&truth, &labels, &f, DEFAULT_Y_MIN),
        }.unwrap();
        // the losses are linear or quadratic in the prediction, so a wide step
        // is exact up to rounding as long as it cannot cross the kink
        let h = 1e-4;
        let cmax = loss.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        prop_assume!(loss.signed_gap(&pred).abs() > 2.0 * h * cmax);
        let (_, grad) = loss.value_and_grad(&pred);
        for i in 0..pred.len() {
            let mut p = pred.clone();
            p[i] += h;
            let up = loss.value(&p);
            p[i] -= 2.0 * h;
            let down = loss.value(&p);
            let n = (up - down) / (2.0 * h);
            let err = (grad[i] - n).abs();
            prop_assert!(err <= 1e-6 * grad[i].abs().max(n.abs()).max(1e-6), "cell {}: {} vs {}", i, grad[i], n);
        }
    }
}
