mod common;

use common::{direct_conv3, rel_err, rng, uniform};
use fairst::tensor::{conv_same, ConvRank, Graph, NodeId, ScalarObjective, Tensor, LEAKY_SLOPE};
use proptest::prelude::*;
use rand::Rng;

struct ConvCase {
    input: Tensor,
    kernels: Tensor,
    bias: Tensor,
    rank: ConvRank,
    cin: usize,
    cout: usize,
    dims: [usize; 3],
    k: [usize; 3],
}

fn conv_case(seed: u64, rank: ConvRank) -> ConvCase {
    let mut r = rng(seed);
    let axes = rank.axes();
    let cin = r.random_range(1..=4);
    let cout = r.random_range(1..=3);
    let limits = [6, 5, 5];
    let mut dims = [1; 3];
    let mut k = [1; 3];
    for a in 0..axes {
        dims[3 - axes + a] = r.random_range(1..=limits[3 - axes + a]);
        k[3 - axes + a] = [1, 3, 5][r.random_range(0..3)];
    }
    let spatial = &dims[3 - axes..];
    let kspatial = &k[3 - axes..];
    let mut ishape = vec![cin];
    ishape.extend_from_slice(spatial);
    let mut kshape = vec![cout, cin];
    kshape.extend_from_slice(kspatial);
    let n_in: usize = ishape.iter().product();
    let n_k: usize = kshape.iter().product();
    ConvCase {
        input: Tensor::new(ishape, uniform(&mut r, n_in, -1.0, 1.0)).unwrap(),
        kernels: Tensor::new(kshape, uniform(&mut r, n_k, -1.0, 1.0)).unwrap(),
        bias: Tensor::new(vec![cout], uniform(&mut r, cout, -1.0, 1.0)).unwrap(),
        rank,
        cin,
        cout,
        dims,
        k,
    }
}

fn check_against_oracle(c: &ConvCase) {
    let got = conv_same(&c.input, &c.kernels, c.rank, &c.bias).unwrap();
    let want = direct_conv3(
        c.input.data(),
        c.cin,
        c.dims,
        c.kernels.data(),
        c.cout,
        c.k,
        c.bias.data(),
    );
    let mut shape = c.input.shape().to_vec();
    shape[0] = c.cout;
    assert_eq!(got.shape(), &shape[..]);
    for (g, w) in got.data().iter().zip(&want) {
        assert!(
            rel_err(*g, *w) <= 1e-10 || (g - w).abs() <= 1e-12,
            "{g} vs {w}"
        );
    }
}

#[test]
fn conv_matches_nested_loops_for_every_rank() {
    for rank in [ConvRank::One, ConvRank::Two, ConvRank::Three] {
        for seed in 0..20 {
            check_against_oracle(&conv_case(seed * 31 + rank.axes() as u64, rank));
        }
    }
}

#[test]
fn batched_input_matches_per_sample() {
    let c = conv_case(7, ConvRank::Three);
    let mut shape = vec![2];
    shape.extend_from_slice(c.input.shape());
    let mut data = c.input.data().to_vec();
    data.extend(c.input.data().iter().map(|v| -2.0 * v));
    let batched = conv_same(
        &Tensor::new(shape, data).unwrap(),
        &c.kernels,
        c.rank,
        &c.bias,
    )
    .unwrap();
    let one = conv_same(&c.input, &c.kernels, c.rank, &c.bias).unwrap();
    assert_eq!(&batched.data()[..one.len()], one.data());
}

#[test]
fn worked_conv_examples() {
    let ones = Tensor::full(&[1, 3, 3], 1.0);
    let k = Tensor::full(&[1, 1, 3, 3], 1.0);
    let out = conv_same(&ones, &k, ConvRank::Two, &Tensor::zeros(&[1])).unwrap();
    assert_eq!(out.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let k = Tensor::new(vec![1, 1, 3], vec![1.0, 0.0, -1.0]).unwrap();
    let out = conv_same(&x, &k, ConvRank::One, &Tensor::zeros(&[1])).unwrap();
    assert_eq!(out.data(), &[-2.0, -2.0, 2.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn conv_is_linear_without_bias(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let c = conv_case(seed, ConvRank::Three);
        let mut r = rng(seed ^ 0xabc);
        let y = Tensor::new(c.input.shape().to_vec(), uniform(&mut r, c.input.len(), -1.0, 1.0)).unwrap();
        let zero = Tensor::zeros(&[c.cout]);
        let mix = c.input.scale(a).add_scaled(&y, b).unwrap();
        let lhs = conv_same(&mix, &c.kernels, c.rank, &zero).unwrap();
        let fx = conv_same(&c.input, &c.kernels, c.rank, &zero).unwrap();
        let fy = conv_same(&y, &c.kernels, c.rank, &zero).unwrap();
        let rhs = fx.scale(a).add_scaled(&fy, b).unwrap();
        let scale = rhs.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((l - r).abs() <= 1e-10 * scale);
        }
    }
}

/// Sum of squares, as a stand-in for an externally differentiated loss.
struct SumSquares;

impl ScalarObjective for SumSquares {
    fn value_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (
            x.iter().map(|v| v * v).sum(),
            x.iter().map(|v| 2.0 * v).collect(),
        )
    }
}

/// Three conv layers using every op kind; returns the scalar loss node and
/// the parameter leaves.
fn random_graph(values: &[Tensor], target: &[f64]) -> (Graph, NodeId, Vec<NodeId>) {
    let mut g = Graph::new();
    let p: Vec<NodeId> = values.iter().map(|t| g.param(t.clone())).collect();
    let (x, w0, b0, w1, b1, wd, bd, w2, b2) =
        (p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]);
    let h = g.conv(x, w0, b0, ConvRank::Two).unwrap();
    let h = g.leaky_relu(h, LEAKY_SLOPE).unwrap();
    let v = g.reshape(h, &[2, 12]).unwrap();
    let v = g.conv(v, w1, b1, ConvRank::One).unwrap();
    let v = g.leaky_relu(v, LEAKY_SLOPE).unwrap();
    let d = g.dense(v, wd, bd).unwrap();
    let d = g.broadcast(d, &[3, 4]).unwrap();
    let h2 = g.reshape(v, &[2, 3, 4]).unwrap();
    let cat = g.concat(&[h2, d]).unwrap();
    let o = g.conv(cat, w2, b2, ConvRank::Two).unwrap();
    let o = g.scale(o, 1.7).unwrap();
    let skip = g.reshape(x, &[1, 3, 4]).unwrap();
    let o = g.add(o, skip).unwrap();
    let mae = g.mean_abs_error(o, target).unwrap();
    let sq = g.objective(o, &SumSquares).unwrap();
    let sq = g.scale(sq, 0.1).unwrap();
    let tot = g.add(mae, sq).unwrap();
    let s = g.sum(tot).unwrap();
    (g, s, p)
}

#[test]
fn random_graphs_pass_finite_differences() {
    let shapes: [&[usize]; 9] = [
        &[1, 3, 4],
        &[2, 1, 3, 3],
        &[2],
        &[2, 2, 3],
        &[2],
        &[1, 24],
        &[1],
        &[1, 3, 3, 3],
        &[1],
    ];
    let h = 1e-5;
    for trial in 0..20u64 {
        let mut r = rng(1000 + trial);
        let values: Vec<Tensor> = shapes
            .iter()
            .map(|s| {
                Tensor::new(s.to_vec(), uniform(&mut r, s.iter().product(), -1.0, 1.0)).unwrap()
            })
            .collect();
        let target = uniform(&mut r, 12, -5.0, 5.0);
        let (g, loss, leaves) = random_graph(&values, &target);
        let grads = g.backward(loss).unwrap();
        for (k, &leaf) in leaves.iter().enumerate() {
            let analytic = grads.get(leaf).data().to_vec();
            for i in 0..values[k].len() {
                let eval = |delta: f64| {
                    let mut v = values.to_vec();
                    v[k].data_mut()[i] += delta;
                    let (g, l, _) = random_graph(&v, &target);
                    g.value(l).item().unwrap()
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let err = (analytic[i] - numeric).abs();
                assert!(
                    err <= 1e-4 * analytic[i].abs().max(numeric.abs()).max(1e-6),
                    "trial {trial} leaf {k}[{i}]: {} vs {numeric}",
                    analytic[i]
                );
            }
        }
    }
}
