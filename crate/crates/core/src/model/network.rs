//! Encoder, projection head and the unit-sphere embedding network.

use rayon::prelude::*;

use super::layers::*;
use super::params::{EncoderConfig, ModelParams, Param};
use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};
use crate::volume::Volume;

fn check_finite(layer: impl FnOnce() -> String, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            layer: layer(),
            message: "non-finite activation".into(),
        })
    }
}

#[derive(Debug, Clone)]
struct Stage {
    input: Vec<f64>,
    in_shape: Shape3,
    pre: Vec<f64>,
}

/// Activations of one sample's encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    stages: Vec<Stage>,
    final_shape: Shape3,
}

/// Runs the convolutional encoder on one volume; `arrays` starts with the
/// conv weights and biases in block order.
pub fn encode(cfg: &EncoderConfig, arrays: &[Param], vol: &Volume) -> Result<(Vec<f64>, EncoderTrace)> {
    cfg.check_input(vol.dims())?;
    let mut x = vol.data().to_vec();
    let mut shape = Shape3 { c: 1, d: vol.dims() };
    let mut stages = Vec::with_capacity(cfg.conv_blocks.len());
    for (b, block) in cfg.conv_blocks.iter().enumerate() {
        let (w, bias) = (&arrays[2 * b].value, &arrays[2 * b + 1].value);
        let pre = conv3_forward(&x, shape, w, bias, block.out_channels);
        check_finite(|| format!("conv{b}"), &pre)?;
        let mut act = pre.clone();
        relu_in_place(&mut act);
        let conv_shape = Shape3 { c: block.out_channels, d: shape.d };
        let pooled_shape = pooled_shape(conv_shape, block.downsample)?;
        let pooled = avg_pool_forward(&act, conv_shape, block.downsample);
        stages.push(Stage { input: x, in_shape: shape, pre });
        x = pooled;
        shape = pooled_shape;
    }
    let features = global_avg_pool(&x, shape);
    Ok((features, EncoderTrace { stages, final_shape: shape }))
}

/// Accumulates encoder parameter gradients into `grads` (indexed like
/// `arrays`) given the gradient of the loss with respect to the features.
pub fn encode_backward(cfg: &EncoderConfig, arrays: &[Param], trace: &EncoderTrace, grad_features: &[f64], grads: &mut [Vec<f64>]) {
    let mut g = global_avg_pool_backward(grad_features, trace.final_shape);
    for (b, block) in cfg.conv_blocks.iter().enumerate().rev() {
        let stage = &trace.stages[b];
        let conv_shape = Shape3 { c: block.out_channels, d: stage.in_shape.d };
        g = avg_pool_backward(&g, conv_shape, block.downsample);
        relu_backward_in_place(&stage.pre, &mut g);
        let (gw, rest) = grads[2 * b..].split_at_mut(1);
        let gi = conv3_backward(
            &stage.input,
            stage.in_shape,
            &arrays[2 * b].value,
            block.out_channels,
            &g,
            &mut gw[0],
            &mut rest[0],
            b > 0,
        );
        if let Some(gi) = gi {
            g = gi;
        }
    }
}

#[derive(Debug, Clone)]
struct HeadTrace {
    features: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    z: Vec<f64>,
    norm: f64,
}

fn project(head: &[Param], features: Vec<f64>) -> Result<HeadTrace> {
    let hidden_pre = linear_forward(&features, &head[0].value, &head[1].value);
    let mut hidden = hidden_pre.clone();
    relu_in_place(&mut hidden);
    let u = linear_forward(&hidden, &head[2].value, &head[3].value);
    check_finite(|| "proj2".into(), &u)?;
    let n = norm(&u);
    if !(n > 0.0) {
        return Err(Error::Numeric {
            layer: "normalize".into(),
            message: "projection output has zero norm".into(),
        });
    }
    let z = u.iter().map(|v| v / n).collect();
    Ok(HeadTrace { features, hidden_pre, hidden, z, norm: n })
}

/// Returns the feature gradient after accumulating head gradients.
fn project_backward(head: &[Param], t: &HeadTrace, grad_z: &[f64], grads: &mut [Vec<f64>]) -> Vec<f64> {
    // d(u/|u|) = (I - z z^T) / |u|
    let zg: f64 = t.z.iter().zip(grad_z).map(|(a, b)| a * b).sum();
    let grad_u: Vec<f64> = grad_z.iter().zip(&t.z).map(|(g, z)| (g - z * zg) / t.norm).collect();
    let (g01, g23) = grads.split_at_mut(2);
    let (g2, g3) = g23.split_at_mut(1);
    let mut grad_h = linear_backward(&t.hidden, &head[2].value, &grad_u, &mut g2[0], &mut g3[0]);
    relu_backward_in_place(&t.hidden_pre, &mut grad_h);
    let (g0, g1) = g01.split_at_mut(1);
    linear_backward(&t.features, &head[0].value, &grad_h, &mut g0[0], &mut g1[0])
}

#[derive(Debug, Clone)]
struct SampleTrace {
    encoder: EncoderTrace,
    head: HeadTrace,
}

/// The embedding network: encoder, projection head, normalization.
#[derive(Debug, Clone)]
pub struct Network {
    cfg: EncoderConfig,
    params: ModelParams,
    cache: Option<Vec<SampleTrace>>,
}

impl Network {
    pub fn new(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        let params = cfg.init_params(seed)?;
        Ok(Network { cfg, params, cache: None })
    }

    pub fn from_params(cfg: EncoderConfig, params: ModelParams) -> Result<Self> {
        let reference = cfg.init_params(0)?;
        let shapes_match = reference.arrays.len() == params.arrays.len()
            && reference.arrays.iter().zip(&params.arrays).all(|(a, b)| a.shape == b.shape && a.name == b.name);
        if !shapes_match {
            return Err(Error::Shape("parameter arrays do not match the model config".into()));
        }
        Ok(Network { cfg, params, cache: None })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    fn split(&self) -> (&[Param], &[Param]) {
        self.params.arrays.split_at(self.cfg.n_conv_arrays())
    }

    fn check_batch(&self, batch: &[Volume]) -> Result<()> {
        let first = batch.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        if batch.iter().any(|v| v.dims() != first.dims()) {
            return Err(Error::Shape("batch volumes have different dims".into()));
        }
        self.cfg.check_input(first.dims())
    }

    /// Unit-norm embeddings, one row per volume. Records activations for
    /// a following [`Network::backward`].
    pub fn embed(&mut self, batch: &[Volume]) -> Result<Matrix> {
        self.cache = None;
        self.check_batch(batch)?;
        let traces = {
            let (enc, head) = self.split();
            let cfg = &self.cfg;
            batch
                .par_iter()
                .map(|v| {
                    let (features, encoder) = encode(cfg, enc, v)?;
                    let head = project(head, features)?;
                    Ok(SampleTrace { encoder, head })
                })
                .collect::<Result<Vec<_>>>()?
        };
        let rows: Vec<Vec<f64>> = traces.iter().map(|t| t.head.z.clone()).collect();
        self.cache = Some(traces);
        Matrix::from_rows(&rows)
    }

    /// Embeddings without recording activations.
    pub fn embed_detached(&self, batch: &[Volume]) -> Result<Matrix> {
        self.check_batch(batch)?;
        let (enc, head) = self.split();
        let rows = batch
            .par_iter()
            .map(|v| {
                let (features, _) = encode(&self.cfg, enc, v)?;
                Ok(project(head, features)?.z)
            })
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }

    /// Encoder outputs (pre-projection), one row per volume.
    pub fn features(&self, batch: &[Volume]) -> Result<Matrix> {
        self.check_batch(batch)?;
        let (enc, _) = self.split();
        let rows = batch
            .par_iter()
            .map(|v| encode(&self.cfg, enc, v).map(|(f, _)| f))
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }

    /// Accumulates the parameter gradient of a loss whose gradient with
    /// respect to the last embeddings is `upstream`. Consumes the recorded
    /// activations.
    pub fn backward(&mut self, upstream: &Matrix) -> Result<()> {
        let traces = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        if upstream.shape() != (traces.len(), self.cfg.embedding_dim) {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, expected ({}, {})",
                upstream.shape(),
                traces.len(),
                self.cfg.embedding_dim
            )));
        }
        let n_conv = self.cfg.n_conv_arrays();
        let per_sample: Vec<Vec<Vec<f64>>> = {
            let (enc, head) = self.split();
            let cfg = &self.cfg;
            let params = &self.params;
            traces
                .par_iter()
                .enumerate()
                .map(|(i, t)| {
                    let mut grads = params.grad_buffers();
                    let (genc, ghead) = grads.split_at_mut(n_conv);
                    let grad_features = project_backward(head, &t.head, upstream.row(i), ghead);
                    encode_backward(cfg, enc, &t.encoder, &grad_features, genc);
                    grads
                })
                .collect()
        };
        // Fixed summation order keeps results independent of scheduling.
        for g in &per_sample {
            self.params.accumulate(g);
        }
        Ok(())
    }
}

/// Encoder plus a single-logit linear head, trained end to end.
#[derive(Debug, Clone)]
pub struct Classifier {
    cfg: EncoderConfig,
    params: ModelParams,
    cache: Option<Vec<(EncoderTrace, Vec<f64>)>>,
}

impl Classifier {
    /// Takes the encoder arrays of `source` and appends a freshly
    /// initialized head.
    pub fn from_network(source: &Network, head_seed: u64) -> Self {
        let cfg = source.cfg.clone();
        let mut arrays = source.params.arrays[..cfg.n_conv_arrays()].to_vec();
        let mut rng = crate::rng::RngStream::from_key(&[crate::rng::domain::INIT, head_seed, 1]);
        arrays.push(Param::fan_in_uniform("head.weight", vec![1, cfg.feature_dim], cfg.feature_dim, &mut rng));
        arrays.push(Param::zeros("head.bias", vec![1]));
        Classifier {
            cfg,
            params: ModelParams { arrays },
            cache: None,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    fn logit(&self, features: &[f64]) -> f64 {
        let n = self.params.arrays.len();
        linear_forward(features, &self.params.arrays[n - 2].value, &self.params.arrays[n - 1].value)[0]
    }

    /// Logits, recording activations for [`Classifier::backward`].
    pub fn forward(&mut self, batch: &[Volume]) -> Result<Vec<f64>> {
        self.cache = None;
        let enc = &self.params.arrays[..self.cfg.n_conv_arrays()];
        let traces = batch
            .par_iter()
            .map(|v| encode(&self.cfg, enc, v).map(|(f, t)| (t, f)))
            .collect::<Result<Vec<_>>>()?;
        let logits = traces.iter().map(|(_, f)| self.logit(f)).collect();
        self.cache = Some(traces);
        Ok(logits)
    }

    pub fn predict(&self, batch: &[Volume]) -> Result<Vec<f64>> {
        let enc = &self.params.arrays[..self.cfg.n_conv_arrays()];
        let feats = batch
            .par_iter()
            .map(|v| encode(&self.cfg, enc, v).map(|(f, _)| f))
            .collect::<Result<Vec<_>>>()?;
        Ok(feats.iter().map(|f| self.logit(f)).collect())
    }

    pub fn backward(&mut self, grad_logits: &[f64]) -> Result<()> {
        let traces = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        if grad_logits.len() != traces.len() {
            return Err(Error::Shape(format!("{} logit gradients for {} samples", grad_logits.len(), traces.len())));
        }
        let n_conv = self.cfg.n_conv_arrays();
        let per_sample: Vec<Vec<Vec<f64>>> = {
            let params = &self.params;
            let cfg = &self.cfg;
            traces
                .par_iter()
                .zip(grad_logits.par_iter())
                .map(|((trace, features), &g)| {
                    let mut grads = params.grad_buffers();
                    let (genc, ghead) = grads.split_at_mut(n_conv);
                    let (gw, gb) = ghead.split_at_mut(1);
                    let head = &params.arrays[n_conv..];
                    let grad_features = linear_backward(features, &head[0].value, &[g], &mut gw[0], &mut gb[0]);
                    encode_backward(cfg, &params.arrays[..n_conv], trace, &grad_features, genc);
                    grads
                })
                .collect()
        };
        for g in &per_sample {
            self.params.accumulate(g);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConvBlock;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            conv_blocks: vec![ConvBlock { out_channels: 2, downsample: 2 }, ConvBlock { out_channels: 3, downsample: 2 }],
            feature_dim: 3,
            projection_hidden: 4,
            embedding_dim: 3,
        }
    }

    fn vol(seed: f64) -> Volume {
        let data = (0..64).map(|i| ((i as f64 + 1.0) * seed).sin()).collect();
        Volume::new([4, 4, 4], [1.0; 3], data).unwrap()
    }

    #[test]
    fn rows_are_unit_norm() {
        let mut net = Network::new(EncoderConfig::default(), 1).unwrap();
        let batch: Vec<Volume> = (0..3)
            .map(|k| {
                let data = (0..4096).map(|i| ((i * (k + 1)) as f64 * 0.01).cos()).collect();
                Volume::new([16; 3], [1.0; 3], data).unwrap()
            })
            .collect();
        let z = net.embed(&batch).unwrap();
        assert_eq!(z.shape(), (3, 32));
        for i in 0..3 {
            assert!((norm(z.row(i)) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_inputs_identical_rows() {
        let mut net = Network::new(tiny_cfg(), 2).unwrap();
        let z = net.embed(&[vol(0.3), vol(0.3)]).unwrap();
        assert_eq!(z.row(0), z.row(1));
    }

    #[test]
    fn backward_requires_forward() {
        let mut net = Network::new(tiny_cfg(), 2).unwrap();
        let err = net.backward(&Matrix::zeros(1, 3)).unwrap_err();
        assert!(matches!(err, Error::State(_)));
        net.embed(&[vol(0.1)]).unwrap();
        net.backward(&Matrix::zeros(1, 3)).unwrap();
        // The forward record is consumed.
        assert!(net.backward(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut net = Network::new(tiny_cfg(), 5).unwrap();
        net.embed(&[vol(0.1), vol(0.7)]).unwrap();
        net.backward(&Matrix::zeros(2, 3)).unwrap();
        assert!(net.params().arrays.iter().all(|p| p.grad.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn duplicate_samples_contribute_equally() {
        let up = Matrix::from_rows(&[vec![0.3, -0.2, 0.5], vec![0.3, -0.2, 0.5]]).unwrap();
        let mut pair = Network::new(tiny_cfg(), 5).unwrap();
        pair.embed(&[vol(0.4), vol(0.4)]).unwrap();
        pair.backward(&up).unwrap();
        let mut single = Network::new(tiny_cfg(), 5).unwrap();
        single.embed(&[vol(0.4)]).unwrap();
        single.backward(&Matrix::from_rows(&[vec![0.3, -0.2, 0.5]]).unwrap()).unwrap();
        for (a, b) in pair.params().arrays.iter().zip(&single.params().arrays) {
            for (ga, gb) in a.grad.iter().zip(&b.grad) {
                assert!((ga - 2.0 * gb).abs() <= 1e-12 * (1.0 + gb.abs()));
            }
        }
    }

    #[test]
    fn shape_errors() {
        let mut net = Network::new(tiny_cfg(), 5).unwrap();
        let bad = Volume::filled([4, 4, 6], 1.0);
        assert!(matches!(net.embed(&[bad]), Err(Error::Shape(_))));
        assert!(matches!(net.embed(&[]), Err(Error::Shape(_))));
        net.embed(&[vol(0.2)]).unwrap();
        assert!(matches!(net.backward(&Matrix::zeros(2, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn from_params_checks_layout() {
        let other = EncoderConfig::default().init_params(0).unwrap();
        assert!(Network::from_params(tiny_cfg(), other).is_err());
        let same = tiny_cfg().init_params(9).unwrap();
        assert!(Network::from_params(tiny_cfg(), same).is_ok());
    }

    #[test]
    fn classifier_keeps_encoder() {
        let net = Network::new(tiny_cfg(), 3).unwrap();
        let clf = Classifier::from_network(&net, 1);
        let n = tiny_cfg().n_conv_arrays();
        assert_eq!(&clf.params().arrays[..n], &net.params().arrays[..n]);
        assert_eq!(clf.params().arrays.len(), n + 2);
    }
}
