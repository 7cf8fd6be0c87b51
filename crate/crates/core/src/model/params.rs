use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{domain, RngStream};

/// One trainable array with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Param {
            name: name.into(),
            shape,
            value: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    /// Uniform in `[-b, b]` with `b = sqrt(6 / fan_in)`.
    pub fn fan_in_uniform(name: impl Into<String>, shape: Vec<usize>, fan_in: usize, rng: &mut RngStream) -> Self {
        let mut p = Param::zeros(name, shape);
        let bound = (6.0 / fan_in as f64).sqrt();
        p.value.iter_mut().for_each(|v| *v = rng.uniform_in(-bound, bound));
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Trainable arrays in declaration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    pub arrays: Vec<Param>,
}

impl ModelParams {
    pub fn param_count(&self) -> usize {
        self.arrays.iter().map(Param::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.arrays {
            p.grad.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.arrays.iter().find(|p| p.name == name)
    }

    /// Fresh zeroed gradient buffers matching every array.
    pub fn grad_buffers(&self) -> Vec<Vec<f64>> {
        self.arrays.iter().map(|p| vec![0.0; p.len()]).collect()
    }

    /// Adds per-array buffers into the gradient accumulators.
    pub fn accumulate(&mut self, grads: &[Vec<f64>]) {
        for (p, g) in self.arrays.iter_mut().zip(grads) {
            for (a, b) in p.grad.iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.arrays.iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Format(format!(
                "expected {} parameter values, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for p in &mut self.arrays {
            let n = p.len();
            p.value.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub downsample: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub conv_blocks: Vec<ConvBlock>,
    /// Must equal the last block's channel count (global average pooling
    /// produces one feature per channel).
    pub feature_dim: usize,
    pub projection_hidden: usize,
    pub embedding_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            conv_blocks: [(8, 2), (16, 2), (32, 2), (64, 2)]
                .map(|(out_channels, downsample)| ConvBlock { out_channels, downsample })
                .to_vec(),
            feature_dim: 64,
            projection_hidden: 64,
            embedding_dim: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.conv_blocks.is_empty() {
            return bad("model.conv_blocks must not be empty".into());
        }
        if let Some(b) = self.conv_blocks.iter().find(|b| b.out_channels == 0 || b.downsample == 0) {
            return bad(format!("conv block {b:?} needs positive channels and downsample"));
        }
        let last = self.conv_blocks.last().unwrap().out_channels;
        if self.feature_dim != last {
            return bad(format!(
                "model.feature_dim ({}) must equal the last block's channels ({last})",
                self.feature_dim
            ));
        }
        if self.projection_hidden == 0 {
            return bad("model.projection_hidden must be positive".into());
        }
        if self.embedding_dim < 2 {
            return bad(format!("model.embedding_dim must be >= 2, got {}", self.embedding_dim));
        }
        Ok(())
    }

    /// Product of downsample factors; input dims must be multiples of it.
    pub fn total_downsample(&self) -> usize {
        self.conv_blocks.iter().map(|b| b.downsample).product()
    }

    pub fn check_input(&self, dims: [usize; 3]) -> Result<()> {
        let f = self.total_downsample();
        if dims.iter().any(|&d| d % f != 0) {
            return Err(Error::Shape(format!(
                "input dims {dims:?} are not divisible by the total downsample factor {f}"
            )));
        }
        Ok(())
    }

    pub fn n_conv_arrays(&self) -> usize {
        2 * self.conv_blocks.len()
    }

    /// Encoder convolution arrays, biases zero.
    pub fn init_encoder(&self, rng: &mut RngStream) -> Vec<Param> {
        let mut arrays = Vec::new();
        let mut cin = 1;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            arrays.push(Param::fan_in_uniform(
                format!("conv{i}.weight"),
                vec![b.out_channels, cin, 3, 3, 3],
                cin * 27,
                rng,
            ));
            arrays.push(Param::zeros(format!("conv{i}.bias"), vec![b.out_channels]));
            cin = b.out_channels;
        }
        arrays
    }

    /// Encoder followed by the two-layer projection head.
    pub fn init_params(&self, seed: u64) -> Result<ModelParams> {
        self.validate()?;
        let mut rng = RngStream::from_key(&[domain::INIT, seed]);
        let mut arrays = self.init_encoder(&mut rng);
        let (f, h, d) = (self.feature_dim, self.projection_hidden, self.embedding_dim);
        arrays.push(Param::fan_in_uniform("proj1.weight", vec![h, f], f, &mut rng));
        arrays.push(Param::zeros("proj1.bias", vec![h]));
        arrays.push(Param::fan_in_uniform("proj2.weight", vec![d, h], h, &mut rng));
        arrays.push(Param::zeros("proj2.bias", vec![d]));
        Ok(ModelParams { arrays })
    }
}

pub fn init_params(cfg: &EncoderConfig, seed: u64) -> Result<ModelParams> {
    cfg.init_params(seed)
}
