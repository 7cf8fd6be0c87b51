//! Analytic gradients against central finite differences, and the network
//! forward pass against a direct loop transcription.

use yaware_core::kernel::{weight_matrix_1d, KernelConfig};
use yaware_core::linalg::Matrix;
use yaware_core::loss::{infonce, similarity_matrix, supcon_discrete, y_aware_infonce, LossConfig, LossResult};
use yaware_core::model::{Classifier, ConvBlock, EncoderConfig, ModelParams, Network};
use yaware_core::rng::RngStream;
use yaware_core::volume::Volume;

fn random_matrix(rng: &mut RngStream, n: usize, d: usize) -> Matrix {
    Matrix::from_vec(n, d, (0..n * d).map(|_| rng.normal() * 0.5).collect()).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn check_loss_gradient(f: impl Fn(&Matrix, &Matrix) -> LossResult, z1: &Matrix, z2: &Matrix) {
    let h = 1e-5;
    let res = f(z1, z2);
    for (which, analytic) in [(0, &res.grad_z1), (1, &res.grad_z2)] {
        let mut fd = vec![0.0; analytic.data().len()];
        for (k, slot) in fd.iter_mut().enumerate() {
            let perturb = |delta: f64| {
                let (mut a, mut b) = (z1.clone(), z2.clone());
                let m = if which == 0 { &mut a } else { &mut b };
                m.data_mut()[k] += delta;
                f(&a, &b).value
            };
            *slot = (perturb(h) - perturb(-h)) / (2.0 * h);
        }
        let e = rel_err(analytic.data(), &fd);
        assert!(e <= 1e-6, "view {which}: relative error {e}");
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = RngStream::from_key(&[11]);
    for trial in 0..5 {
        let n = 3 + trial * 2;
        let (z1, z2) = (random_matrix(&mut rng, n, 6), random_matrix(&mut rng, n, 6));
        let y: Vec<f64> = (0..n).map(|_| rng.uniform_in(20.0, 80.0)).collect();
        let labels: Vec<f64> = (0..n).map(|i| (i % 3) as f64).collect();
        let w = weight_matrix_1d(&y, &KernelConfig::rbf(5.0)).unwrap();
        check_loss_gradient(|a, b| infonce(&similarity_matrix(a, b, 0.1).unwrap()).unwrap(), &z1, &z2);
        check_loss_gradient(|a, b| y_aware_infonce(&similarity_matrix(a, b, 0.1).unwrap(), &w).unwrap(), &z1, &z2);
        check_loss_gradient(|a, b| supcon_discrete(&similarity_matrix(a, b, 0.5).unwrap(), &labels).unwrap(), &z1, &z2);
        let sym = LossConfig { symmetric: true, ..LossConfig::default() }.build().unwrap();
        check_loss_gradient(|a, b| sym.evaluate(a, b, &y).unwrap(), &z1, &z2);
    }
}

fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        conv_blocks: vec![ConvBlock { out_channels: 3, downsample: 2 }, ConvBlock { out_channels: 4, downsample: 1 }],
        feature_dim: 4,
        projection_hidden: 5,
        embedding_dim: 3,
    }
}

fn random_volume(rng: &mut RngStream, n: usize) -> Volume {
    Volume::new([n; 3], [1.0; 3], (0..n * n * n).map(|_| rng.normal()).collect()).unwrap()
}

/// Weighted sum of embeddings; linear so the upstream gradient is `c`.
fn probe_loss(net: &Network, batch: &[Volume], c: &Matrix) -> f64 {
    let z = net.embed_detached(batch).unwrap();
    z.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn model_gradients_match_finite_differences() {
    let mut rng = RngStream::from_key(&[12]);
    let mut net = Network::new(tiny_config(), 5).unwrap();
    // Keep activations away from ReLU kinks: positive biases.
    for p in net.params_mut().arrays.iter_mut().filter(|p| p.name.ends_with("bias")) {
        p.value.iter_mut().for_each(|v| *v = 0.1);
    }
    let batch: Vec<Volume> = (0..3).map(|_| random_volume(&mut rng, 4)).collect();
    let c = random_matrix(&mut rng, 3, 3);
    net.params_mut().zero_grad();
    net.embed(&batch).unwrap();
    net.backward(&c).unwrap();
    let h = 1e-4;
    let n_arrays = net.params().arrays.len();
    for a in 0..n_arrays {
        let analytic = net.params().arrays[a].grad.clone();
        let mut fd = vec![0.0; analytic.len()];
        for (k, slot) in fd.iter_mut().enumerate() {
            let mut probe = net.clone();
            probe.params_mut().arrays[a].value[k] += h;
            let up = probe_loss(&probe, &batch, &c);
            probe.params_mut().arrays[a].value[k] -= 2.0 * h;
            let down = probe_loss(&probe, &batch, &c);
            *slot = (up - down) / (2.0 * h);
        }
        let e = rel_err(&analytic, &fd);
        assert!(e <= 1e-4, "{}: relative error {e}", net.params().arrays[a].name);
    }
}

#[test]
fn classifier_gradients_match_finite_differences() {
    let mut rng = RngStream::from_key(&[13]);
    let base = Network::new(tiny_config(), 6).unwrap();
    let mut clf = Classifier::from_network(&base, 1);
    for p in clf.params_mut().arrays.iter_mut().filter(|p| p.name.starts_with("conv") && p.name.ends_with("bias")) {
        p.value.iter_mut().for_each(|v| *v = 0.1);
    }
    let batch: Vec<Volume> = (0..2).map(|_| random_volume(&mut rng, 4)).collect();
    let g = [0.7, -1.3];
    clf.params_mut().zero_grad();
    clf.forward(&batch).unwrap();
    clf.backward(&g).unwrap();
    let loss = |c: &Classifier| c.predict(&batch).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
    let h = 1e-4;
    for a in 0..clf.params().arrays.len() {
        let analytic = clf.params().arrays[a].grad.clone();
        let fd: Vec<f64> = (0..analytic.len())
            .map(|k| {
                let mut p = clf.clone();
                p.params_mut().arrays[a].value[k] += h;
                let up = loss(&p);
                p.params_mut().arrays[a].value[k] -= 2.0 * h;
                (up - loss(&p)) / (2.0 * h)
            })
            .collect();
        let e = rel_err(&analytic, &fd);
        assert!(e <= 1e-4, "{}: relative error {e}", clf.params().arrays[a].name);
    }
}

/// Direct transcription of the network: zero-padded 3x3x3
/// cross-correlation, ReLU, average pooling, global mean, two-layer
/// projection, L2 normalization.
fn reference_embedding(cfg: &EncoderConfig, params: &ModelParams, v: &Volume) -> Vec<f64> {
    let mut n = v.dims()[0];
    let mut c_in = 1;
    let mut x: Vec<f64> = v.data().to_vec();
    let at = |x: &[f64], c: usize, z: usize, y: usize, w: usize, n: usize| x[((c * n + z) * n + y) * n + w];
    for (b, block) in cfg.conv_blocks.iter().enumerate() {
        let w = &params.arrays[2 * b].value;
        let bias = &params.arrays[2 * b + 1].value;
        let co_n = block.out_channels;
        let mut conv = vec![0.0; co_n * n * n * n];
        for co in 0..co_n {
            for z in 0..n {
                for y in 0..n {
                    for xx in 0..n {
                        let mut s = bias[co];
                        for ci in 0..c_in {
                            for kz in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let (sz, sy, sx) = (z as isize + kz - 1, y as isize + ky - 1, xx as isize + kx - 1);
                                        if [sz, sy, sx].iter().any(|&s| s < 0 || s >= n as isize) {
                                            continue;
                                        }
                                        let wi = (co * c_in + ci) * 27 + (kz * 9 + ky * 3 + kx) as usize;
                                        s += w[wi] * at(&x, ci, sz as usize, sy as usize, sx as usize, n);
                                    }
                                }
                            }
                        }
                        conv[((co * n + z) * n + y) * n + xx] = s.max(0.0);
                    }
                }
            }
        }
        let f = block.downsample;
        let m = n / f;
        let mut pooled = vec![0.0; co_n * m * m * m];
        for co in 0..co_n {
            for z in 0..m {
                for y in 0..m {
                    for xx in 0..m {
                        let mut s = 0.0;
                        for a in 0..f {
                            for bb in 0..f {
                                for cc in 0..f {
                                    s += at(&conv, co, z * f + a, y * f + bb, xx * f + cc, n);
                                }
                            }
                        }
                        pooled[((co * m + z) * m + y) * m + xx] = s / (f * f * f) as f64;
                    }
                }
            }
        }
        x = pooled;
        n = m;
        c_in = co_n;
    }
    let vox = n * n * n;
    let feats: Vec<f64> = (0..c_in).map(|c| x[c * vox..(c + 1) * vox].iter().sum::<f64>() / vox as f64).collect();
    let lin = |w: &[f64], b: &[f64], x: &[f64]| -> Vec<f64> {
        (0..b.len()).map(|o| b[o] + (0..x.len()).map(|i| w[o * x.len() + i] * x[i]).sum::<f64>()).collect()
    };
    let k = 2 * cfg.conv_blocks.len();
    let a = &params.arrays;
    let hidden: Vec<f64> = lin(&a[k].value, &a[k + 1].value, &feats).into_iter().map(|v| v.max(0.0)).collect();
    let u = lin(&a[k + 2].value, &a[k + 3].value, &hidden);
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter().map(|v| v / norm).collect()
}

#[test]
fn forward_pass_matches_loop_reference() {
    let mut rng = RngStream::from_key(&[14]);
    let cfg = EncoderConfig {
        conv_blocks: vec![ConvBlock { out_channels: 3, downsample: 2 }, ConvBlock { out_channels: 5, downsample: 2 }],
        feature_dim: 5,
        projection_hidden: 6,
        embedding_dim: 4,
    };
    let net = Network::new(cfg.clone(), 9).unwrap();
    let batch: Vec<Volume> = (0..3).map(|_| random_volume(&mut rng, 8)).collect();
    let z = net.embed_detached(&batch).unwrap();
    for (i, v) in batch.iter().enumerate() {
        let r = reference_embedding(&cfg, net.params(), v);
        for (a, b) in z.row(i).iter().zip(&r) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn embeddings_lie_on_unit_sphere() {
    let mut rng = RngStream::from_key(&[15]);
    let net = Network::new(EncoderConfig::default(), 1).unwrap();
    let batch: Vec<Volume> = (0..2).map(|_| random_volume(&mut rng, 16)).collect();
    let z = net.embed_detached(&batch).unwrap();
    for i in 0..2 {
        let n: f64 = z.row(i).iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }
}
