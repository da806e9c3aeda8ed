//! The three-stream forecasting network and the historical-average baseline.

mod ha;
mod network;

pub use ha::{ha_predict, ha_predict_series, WEEK};
pub use network::{build_forward, fairst_forward, stream1d, stream2d, stream3d, ForwardGraph};

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FeatureStack2D, TemporalSlice};
use crate::tensor::checkpoint::TensorFile;
use crate::tensor::Tensor;

/// Layer layout of the network. Every shape in [`ModelParams`] follows
/// from this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Hours of demand history per example.
    pub window: usize,
    pub rows: usize,
    pub cols: usize,
    /// Number of 1D series (M).
    pub n_series: usize,
    /// Number of 2D feature maps (N).
    pub n_features: usize,
    /// Filters of the stacked 3D convolutions; the last must be 1.
    pub filters_3d: Vec<usize>,
    /// Odd kernel extent along every convolved axis.
    pub kernel: usize,
    /// Output maps of the 3D stream's closing 2D convolution.
    pub c3: usize,
    /// Hidden widths of the 1D stream's convolutions.
    pub filters_1d: Vec<usize>,
    /// Output width of the 1D stream's time collapse.
    pub c1: usize,
    /// Hidden widths of the 2D stream's convolutions.
    pub filters_2d: Vec<usize>,
    /// Output maps of the 2D stream.
    pub c2: usize,
    /// Width of the hidden fusion-head layers.
    pub head_width: usize,
    /// Number of fusion-head convolutions (the last has one filter).
    pub head_layers: usize,
}

impl ArchConfig {
    pub fn new(
        window: usize,
        rows: usize,
        cols: usize,
        n_series: usize,
        n_features: usize,
    ) -> Self {
        Self {
            window,
            rows,
            cols,
            n_series,
            n_features,
            filters_3d: vec![16, 32, 1],
            kernel: 3,
            c3: 8,
            filters_1d: vec![8],
            c1: 4,
            filters_2d: vec![8],
            c2: 4,
            head_width: 8,
            head_layers: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("arch config: {m}")));
        if self.window == 0 || self.rows == 0 || self.cols == 0 {
            return bad("window, rows and cols must be positive");
        }
        if self.filters_3d.last() != Some(&1) {
            return bad("3D filter list must end in 1");
        }
        if self.filters_3d.contains(&0)
            || self.filters_1d.contains(&0)
            || self.filters_2d.contains(&0)
        {
            return bad("layer widths must be positive");
        }
        if self.kernel % 2 == 0 {
            return bad("kernel size must be odd");
        }
        if self.c3 == 0 || self.head_layers == 0 || (self.head_layers > 1 && self.head_width == 0) {
            return bad("c3, head_layers and head_width must be positive");
        }
        if (self.n_series > 0 && self.c1 == 0) || (self.n_features > 0 && self.c2 == 0) {
            return bad("stream widths must be positive when the stream is present");
        }
        Ok(())
    }

    /// Channels entering the fusion head.
    pub fn fused_channels(&self) -> usize {
        self.c3
            + if self.n_features > 0 { self.c2 } else { 0 }
            + if self.n_series > 0 { self.c1 } else { 0 }
    }

    /// `(name, shape)` of every parameter, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let k = self.kernel;
        let mut out = Vec::new();
        let mut push = |name: String, w: Vec<usize>, cout: usize| {
            out.push((format!("{name}.w"), w));
            out.push((format!("{name}.b"), vec![cout]));
        };
        let mut cin = 1;
        for (i, &f) in self.filters_3d.iter().enumerate() {
            push(format!("s3.conv{i}"), vec![f, cin, k, k, k], f);
            cin = f;
        }
        push("s3.close".into(), vec![self.c3, self.window, k, k], self.c3);
        if self.n_series > 0 {
            let mut cin = self.n_series;
            for (i, &f) in self.filters_1d.iter().enumerate() {
                push(format!("s1.conv{i}"), vec![f, cin, k], f);
                cin = f;
            }
            push(
                "s1.collapse".into(),
                vec![self.c1, cin * self.window],
                self.c1,
            );
        }
        if self.n_features > 0 {
            let mut cin = self.n_features;
            for (i, &f) in self
                .filters_2d
                .iter()
                .chain(std::iter::once(&self.c2))
                .enumerate()
            {
                push(format!("s2.conv{i}"), vec![f, cin, k, k], f);
                cin = f;
            }
        }
        let mut cin = self.fused_channels();
        for i in 0..self.head_layers {
            let f = if i + 1 == self.head_layers {
                1
            } else {
                self.head_width
            };
            push(format!("head.conv{i}"), vec![f, cin, k, k], f);
            cin = f;
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// All learnable tensors, keyed by layer name (`s3.conv0.w`, `head.conv1.b`, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Fan-in scaled uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
    /// zero biases, deterministic in `seed`.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in arch.param_shapes() {
            let t = if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                Tensor::from_fn(&shape, |_| rng.random_range(-bound..bound))
            };
            tensors.insert(name, t);
        }
        Ok(Self {
            arch: arch.clone(),
            tensors,
        })
    }

    /// Parameters set to a constant (zero for an inert network).
    pub fn constant(arch: &ArchConfig, value: f64) -> Result<Self> {
        arch.validate()?;
        let tensors = arch
            .param_shapes()
            .into_iter()
            .map(|(n, s)| (n, Tensor::full(&s, value)))
            .collect();
        Ok(Self {
            arch: arch.clone(),
            tensors,
        })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("no parameter '{name}'")))
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("no parameter '{name}'")))?;
        if slot.shape() != value.shape() {
            return Err(Error::invalid(format!(
                "parameter '{name}' has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.values_mut()
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

/// A trained network plus the demand scaling it was trained with.
///
/// History entering the network is divided by `demand_scale`; the raw
/// network output is multiplied by it, so predictions are in trips.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub demand_scale: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    arch: ArchConfig,
    demand_scale: f64,
}

const CHECKPOINT_KIND: &str = "fairst-model";

impl Model {
    pub fn new(params: ModelParams, demand_scale: f64) -> Result<Self> {
        if !(demand_scale > 0.0 && demand_scale.is_finite()) {
            return Err(Error::invalid(format!(
                "demand scale must be positive, got {demand_scale}"
            )));
        }
        Ok(Self {
            params,
            demand_scale,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.params.arch
    }

    /// Predicted next frame `(rows * cols)` in original demand units.
    pub fn predict(&self, slice: &TemporalSlice, features: &FeatureStack2D) -> Result<Vec<f64>> {
        let mut g = crate::tensor::Graph::new();
        let fwd = build_forward(
            &mut g,
            &self.params,
            &slice.history,
            &slice.history_1d,
            &features.maps,
            self.demand_scale,
            false,
        )?;
        Ok(g.value(fwd.prediction).data().to_vec())
    }

    pub fn to_tensor_file(&self) -> Result<TensorFile> {
        let meta = CheckpointMeta {
            kind: CHECKPOINT_KIND.into(),
            arch: self.params.arch.clone(),
            demand_scale: self.demand_scale,
        };
        let mut f =
            TensorFile::new(serde_json::to_value(meta).map_err(|e| Error::invalid(e.to_string()))?);
        for (name, t) in self.params.iter() {
            f.push(name, t);
        }
        Ok(f)
    }

    pub fn from_tensor_file(f: &TensorFile) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_value(f.meta.clone())
            .map_err(|e| Error::invalid(format!("checkpoint meta: {e}")))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(Error::invalid(format!(
                "not a model checkpoint ('{}')",
                meta.kind
            )));
        }
        let mut params = ModelParams::constant(&meta.arch, 0.0)?;
        let expected: Vec<String> = params.names().map(str::to_string).collect();
        if f.tensors.len() != expected.len() {
            return Err(Error::invalid(format!(
                "checkpoint holds {} tensors, architecture needs {}",
                f.tensors.len(),
                expected.len()
            )));
        }
        for name in expected {
            params.set(&name, f.get(&name)?)?;
        }
        Model::new(params, meta.demand_scale)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_tensor_file()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::load(path)?)
    }
}
