use std::collections::BTreeMap;

use super::{ArchConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{ConvRank, Graph, NodeId, Tensor, LEAKY_SLOPE};

/// Node handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardGraph {
    /// Parameter leaves in [`ModelParams`] iteration order.
    pub params: Vec<(String, NodeId)>,
    /// `(rows, cols)` prediction in original demand units.
    pub prediction: NodeId,
}

struct Ctx<'a> {
    arch: &'a ArchConfig,
    nodes: BTreeMap<String, NodeId>,
}

impl Ctx<'_> {
    fn layer(&self, name: &str) -> (NodeId, NodeId) {
        (
            self.nodes[&format!("{name}.w")],
            self.nodes[&format!("{name}.b")],
        )
    }
}

fn conv_act(
    g: &mut Graph,
    ctx: &Ctx,
    x: NodeId,
    name: &str,
    rank: ConvRank,
    act: bool,
) -> Result<NodeId> {
    let (w, b) = ctx.layer(name);
    let y = g.conv(x, w, b, rank)?;
    if act {
        g.leaky_relu(y, LEAKY_SLOPE)
    } else {
        Ok(y)
    }
}

fn expect_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::invalid(format!(
            "{what} has {got} values, expected {want}"
        )));
    }
    Ok(())
}

/// 3D demand stream: `(W_in, H, W)` history to `(C3, H, W)` maps.
fn stream3d_nodes(g: &mut Graph, ctx: &Ctx, history: NodeId) -> Result<NodeId> {
    let a = ctx.arch;
    let mut x = g.reshape(history, &[1, a.window, a.rows, a.cols])?;
    for i in 0..a.filters_3d.len() {
        x = conv_act(g, ctx, x, &format!("s3.conv{i}"), ConvRank::Three, true)?;
    }
    // time axis becomes the channel axis of the closing 2D convolution
    let x = g.reshape(x, &[a.window, a.rows, a.cols])?;
    conv_act(g, ctx, x, "s3.close", ConvRank::Two, true)
}

/// 1D series stream: `(M, W_in)` to a `(C1)` vector broadcast to `(C1, H, W)`.
fn stream1d_nodes(g: &mut Graph, ctx: &Ctx, series: NodeId) -> Result<NodeId> {
    let a = ctx.arch;
    let mut x = series;
    for i in 0..a.filters_1d.len() {
        x = conv_act(g, ctx, x, &format!("s1.conv{i}"), ConvRank::One, true)?;
    }
    let (w, b) = ctx.layer("s1.collapse");
    let v = g.dense(x, w, b)?;
    let v = g.leaky_relu(v, LEAKY_SLOPE)?;
    g.broadcast(v, &[a.rows, a.cols])
}

/// 2D feature stream: `(N, H, W)` to `(C2, H, W)`.
fn stream2d_nodes(g: &mut Graph, ctx: &Ctx, features: NodeId) -> Result<NodeId> {
    let mut x = features;
    for i in 0..=ctx.arch.filters_2d.len() {
        x = conv_act(g, ctx, x, &format!("s2.conv{i}"), ConvRank::Two, true)?;
    }
    Ok(x)
}

fn register<'a>(
    g: &mut Graph,
    params: &'a ModelParams,
    track: bool,
) -> (Ctx<'a>, Vec<(String, NodeId)>) {
    let mut nodes = BTreeMap::new();
    let mut order = Vec::new();
    for (name, t) in params.iter() {
        let id = if track {
            g.param(t.clone())
        } else {
            g.input(t.clone())
        };
        nodes.insert(name.to_string(), id);
        order.push((name.to_string(), id));
    }
    (
        Ctx {
            arch: &params.arch,
            nodes,
        },
        order,
    )
}

/// Appends the full network to `g`.
///
/// `history` is in trips and is divided by `demand_scale` on entry; the
/// prediction node is multiplied back. `series` is `(M, W_in)` and
/// `features` `(N, H, W)`, both already normalized. With `track` set the
/// parameters are differentiable leaves.
pub fn build_forward(
    g: &mut Graph,
    params: &ModelParams,
    history: &[f64],
    series: &[f64],
    features: &[f64],
    demand_scale: f64,
    track: bool,
) -> Result<ForwardGraph> {
    let a = &params.arch;
    let cells = a.rows * a.cols;
    expect_len("history", history.len(), a.window * cells)?;
    expect_len("series", series.len(), a.n_series * a.window)?;
    expect_len("features", features.len(), a.n_features * cells)?;
    let (ctx, order) = register(g, params, track);

    let h = g.input(Tensor::new(
        vec![a.window, a.rows, a.cols],
        history.iter().map(|v| v / demand_scale).collect(),
    )?);
    let mut parts = vec![stream3d_nodes(g, &ctx, h)?];
    if a.n_features > 0 {
        let f = g.input(Tensor::new(
            vec![a.n_features, a.rows, a.cols],
            features.to_vec(),
        )?);
        parts.push(stream2d_nodes(g, &ctx, f)?);
    }
    if a.n_series > 0 {
        let s = g.input(Tensor::new(vec![a.n_series, a.window], series.to_vec())?);
        parts.push(stream1d_nodes(g, &ctx, s)?);
    }
    let mut x = g.concat(&parts)?;
    for i in 0..a.head_layers {
        let last = i + 1 == a.head_layers;
        x = conv_act(g, &ctx, x, &format!("head.conv{i}"), ConvRank::Two, !last)?;
    }
    let x = g.reshape(x, &[a.rows, a.cols])?;
    let prediction = g.scale(x, demand_scale)?;
    Ok(ForwardGraph {
        params: order,
        prediction,
    })
}

/// Network output `(H, W)` for already-scaled inputs.
pub fn fairst_forward(
    history: &[f64],
    series: &[f64],
    features: &[f64],
    params: &ModelParams,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let fwd = build_forward(&mut g, params, history, series, features, 1.0, false)?;
    Ok(g.value(fwd.prediction).clone())
}

/// Output of the 3D stream alone, `(C3, H, W)`.
pub fn stream3d(history: &[f64], params: &ModelParams) -> Result<Tensor> {
    let a = &params.arch;
    expect_len("history", history.len(), a.window * a.rows * a.cols)?;
    let mut g = Graph::new();
    let (ctx, _) = register(&mut g, params, false);
    let h = g.input(Tensor::new(
        vec![a.window, a.rows, a.cols],
        history.to_vec(),
    )?);
    let out = stream3d_nodes(&mut g, &ctx, h)?;
    Ok(g.value(out).clone())
}

/// Output of the 1D stream alone, `(C1, H, W)`.
pub fn stream1d(series: &[f64], params: &ModelParams) -> Result<Tensor> {
    let a = &params.arch;
    if a.n_series == 0 {
        return Err(Error::invalid("architecture has no 1D stream"));
    }
    expect_len("series", series.len(), a.n_series * a.window)?;
    let mut g = Graph::new();
    let (ctx, _) = register(&mut g, params, false);
    let s = g.input(Tensor::new(vec![a.n_series, a.window], series.to_vec())?);
    let out = stream1d_nodes(&mut g, &ctx, s)?;
    Ok(g.value(out).clone())
}

/// Output of the 2D stream alone, `(C2, H, W)`.
pub fn stream2d(features: &[f64], params: &ModelParams) -> Result<Tensor> {
    let a = &params.arch;
    if a.n_features == 0 {
        return Err(Error::invalid("architecture has no 2D stream"));
    }
    expect_len("features", features.len(), a.n_features * a.rows * a.cols)?;
    let mut g = Graph::new();
    let (ctx, _) = register(&mut g, params, false);
    let f = g.input(Tensor::new(
        vec![a.n_features, a.rows, a.cols],
        features.to_vec(),
    )?);
    let out = stream2d_nodes(&mut g, &ctx, f)?;
    Ok(g.value(out).clone())
}
