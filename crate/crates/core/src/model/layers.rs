//! Single-sample layer kernels. Feature maps are `[channels, z, y, x]` in
//! C order.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape3 {
    pub c: usize,
    pub d: [usize; 3],
}

impl Shape3 {
    pub fn voxels(&self) -> usize {
        self.d[0] * self.d[1] * self.d[2]
    }

    pub fn len(&self) -> usize {
        self.c * self.voxels()
    }
}

/// Overlap of `0..n` shifted by `off` with itself: output indices `o` such
/// that `o + off` is in range.
#[inline]
fn valid(n: usize, off: isize) -> std::ops::Range<usize> {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off.max(0)).max(0) as usize;
    lo..hi.max(lo)
}

/// 3x3x3 convolution, stride 1, zero padding 1. `weight` is
/// `[cout, cin, 27]`.
pub fn conv3_forward(input: &[f64], shape: Shape3, weight: &[f64], bias: &[f64], cout: usize) -> Vec<f64> {
    let [dz, dy, dx] = shape.d;
    let plane = dy * dx;
    let vox = shape.voxels();
    let mut out = vec![0.0; cout * vox];
    for oc in 0..cout {
        let o = &mut out[oc * vox..(oc + 1) * vox];
        o.fill(bias[oc]);
        for ic in 0..shape.c {
            let inp = &input[ic * vox..(ic + 1) * vox];
            let w = &weight[(oc * shape.c + ic) * 27..(oc * shape.c + ic + 1) * 27];
            for k in 0..27 {
                let wk = w[k];
                if wk == 0.0 {
                    continue;
                }
                let (oz, oy, ox) = (k as isize / 9 - 1, (k as isize / 3) % 3 - 1, k as isize % 3 - 1);
                let xr = valid(dx, ox);
                for z in valid(dz, oz) {
                    let sz = (z as isize + oz) as usize;
                    for y in valid(dy, oy) {
                        let sy = (y as isize + oy) as usize;
                        let orow = &mut o[z * plane + y * dx..][xr.clone()];
                        let start = (sz * plane + sy * dx) as isize + xr.start as isize + ox;
                        let irow = &inp[start as usize..start as usize + orow.len()];
                        for (a, b) in orow.iter_mut().zip(irow) {
                            *a += wk * b;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `need_input_grad` is set.
pub fn conv3_backward(
    input: &[f64],
    shape: Shape3,
    weight: &[f64],
    cout: usize,
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let [dz, dy, dx] = shape.d;
    let plane = dy * dx;
    let vox = shape.voxels();
    let mut grad_in = need_input_grad.then(|| vec![0.0; shape.len()]);
    for oc in 0..cout {
        let go = &grad_out[oc * vox..(oc + 1) * vox];
        grad_b[oc] += go.iter().sum::<f64>();
        for ic in 0..shape.c {
            let inp = &input[ic * vox..(ic + 1) * vox];
            let base = (oc * shape.c + ic) * 27;
            for k in 0..27 {
                let (oz, oy, ox) = (k as isize / 9 - 1, (k as isize / 3) % 3 - 1, k as isize % 3 - 1);
                let xr = valid(dx, ox);
                let wk = weight[base + k];
                let mut acc = 0.0;
                for z in valid(dz, oz) {
                    let sz = (z as isize + oz) as usize;
                    for y in valid(dy, oy) {
                        let sy = (y as isize + oy) as usize;
                        let grow = &go[z * plane + y * dx..][xr.clone()];
                        let start = ((sz * plane + sy * dx) as isize + xr.start as isize + ox) as usize;
                        let irow = &inp[start..start + grow.len()];
                        acc += grow.iter().zip(irow).map(|(g, x)| g * x).sum::<f64>();
                        if let Some(gi) = grad_in.as_mut() {
                            let gi = &mut gi[ic * vox + start..ic * vox + start + grow.len()];
                            for (a, g) in gi.iter_mut().zip(grow) {
                                *a += wk * g;
                            }
                        }
                    }
                }
                grad_w[base + k] += acc;
            }
        }
    }
    grad_in
}

pub fn relu_in_place(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes gradient entries whose pre-activation was not positive.
pub fn relu_backward_in_place(pre: &[f64], grad: &mut [f64]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn pooled_shape(shape: Shape3, factor: usize) -> Result<Shape3> {
    if factor == 0 || shape.d.iter().any(|&n| n % factor != 0) {
        return Err(Error::Shape(format!(
            "feature map {:?} is not divisible by downsample factor {}",
            shape.d, factor
        )));
    }
    Ok(Shape3 {
        c: shape.c,
        d: shape.d.map(|n| n / factor),
    })
}

/// Non-overlapping average pooling with window `factor` per axis.
pub fn avg_pool_forward(input: &[f64], shape: Shape3, factor: usize) -> Vec<f64> {
    if factor == 1 {
        return input.to_vec();
    }
    let [dz, dy, dx] = shape.d;
    let (pz, py, px) = (dz / factor, dy / factor, dx / factor);
    let scale = 1.0 / (factor * factor * factor) as f64;
    let mut out = vec![0.0; shape.c * pz * py * px];
    for c in 0..shape.c {
        for z in 0..dz {
            for y in 0..dy {
                let irow = &input[((c * dz + z) * dy + y) * dx..][..dx];
                let orow = &mut out[((c * pz + z / factor) * py + y / factor) * px..][..px];
                for (x, &v) in irow.iter().enumerate() {
                    orow[x / factor] += v * scale;
                }
            }
        }
    }
    out
}

pub fn avg_pool_backward(grad_out: &[f64], in_shape: Shape3, factor: usize) -> Vec<f64> {
    if factor == 1 {
        return grad_out.to_vec();
    }
    let [dz, dy, dx] = in_shape.d;
    let (pz, py, px) = (dz / factor, dy / factor, dx / factor);
    let scale = 1.0 / (factor * factor * factor) as f64;
    let mut out = vec![0.0; in_shape.len()];
    for c in 0..in_shape.c {
        for z in 0..dz {
            for y in 0..dy {
                let grow = &grad_out[((c * pz + z / factor) * py + y / factor) * px..][..px];
                let orow = &mut out[((c * dz + z) * dy + y) * dx..][..dx];
                for (x, o) in orow.iter_mut().enumerate() {
                    *o = grow[x / factor] * scale;
                }
            }
        }
    }
    out
}

/// Mean over voxels, one value per channel.
pub fn global_avg_pool(input: &[f64], shape: Shape3) -> Vec<f64> {
    let vox = shape.voxels();
    (0..shape.c)
        .map(|c| input[c * vox..(c + 1) * vox].iter().sum::<f64>() / vox as f64)
        .collect()
}

pub fn global_avg_pool_backward(grad: &[f64], shape: Shape3) -> Vec<f64> {
    let vox = shape.voxels();
    let mut out = Vec::with_capacity(shape.len());
    for &g in grad {
        out.extend(std::iter::repeat_n(g / vox as f64, vox));
    }
    out
}

/// `weight` is `[out, in]`.
pub fn linear_forward(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| b + weight[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

/// Accumulates parameter gradients and returns the input gradient.
pub fn linear_backward(x: &[f64], weight: &[f64], grad_out: &[f64], grad_w: &mut [f64], grad_b: &mut [f64]) -> Vec<f64> {
    let n_in = x.len();
    let mut grad_in = vec![0.0; n_in];
    for (o, &g) in grad_out.iter().enumerate() {
        grad_b[o] += g;
        let w = &weight[o * n_in..(o + 1) * n_in];
        let gw = &mut grad_w[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            gw[i] += g * x[i];
            grad_in[i] += g * w[i];
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 7-loop convolution with explicit bounds checks.
    fn conv_reference(input: &[f64], shape: Shape3, weight: &[f64], bias: &[f64], cout: usize) -> Vec<f64> {
        let [dz, dy, dx] = shape.d;
        let mut out = vec![0.0; cout * shape.voxels()];
        for oc in 0..cout {
            for z in 0..dz {
                for y in 0..dy {
                    for x in 0..dx {
                        let mut acc = bias[oc];
                        for ic in 0..shape.c {
                            for kz in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let (sz, sy, sx) = (z + kz, y + ky, x + kx);
                                        if sz < 1 || sy < 1 || sx < 1 || sz > dz || sy > dy || sx > dx {
                                            continue;
                                        }
                                        let w = weight[((oc * shape.c + ic) * 3 + kz) * 9 + ky * 3 + kx];
                                        acc += w * input[((ic * dz + sz - 1) * dy + sy - 1) * dx + sx - 1];
                                    }
                                }
                            }
                        }
                        out[((oc * dz + z) * dy + y) * dx + x] = acc;
                    }
                }
            }
        }
        out
    }

    fn seq(n: usize, k: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * k).sin()).collect()
    }

    #[test]
    fn conv_matches_reference() {
        let shape = Shape3 { c: 2, d: [3, 4, 5] };
        let input = seq(shape.len(), 0.37);
        let weight = seq(3 * 2 * 27, 0.91);
        let bias = vec![0.1, -0.2, 0.3];
        let fast = conv3_forward(&input, shape, &weight, &bias, 3);
        let slow = conv_reference(&input, shape, &weight, &bias, 3);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> = <x, conv^T(g)> + bias term, and weight grads match
        // a linear functional derivative.
        let shape = Shape3 { c: 2, d: [4, 3, 5] };
        let input = seq(shape.len(), 0.53);
        let weight = seq(2 * 2 * 27, 0.29);
        let bias = vec![0.0, 0.0];
        let g = seq(2 * shape.voxels(), 0.71);
        let out = conv3_forward(&input, shape, &weight, &bias, 2);
        let mut gw = vec![0.0; weight.len()];
        let mut gb = vec![0.0; 2];
        let gi = conv3_backward(&input, shape, &weight, 2, &g, &mut gw, &mut gb, true).unwrap();
        let lhs: f64 = out.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = input.iter().zip(&gi).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let rhs_w: f64 = weight.iter().zip(&gw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-10);
    }

    #[test]
    fn pooling_round_trip_shapes() {
        let shape = Shape3 { c: 2, d: [4, 4, 2] };
        let input: Vec<f64> = (0..shape.len()).map(|i| i as f64).collect();
        let out = avg_pool_forward(&input, shape, 2);
        assert_eq!(out.len(), 2 * 2 * 2);
        // First window: z 0..2, y 0..2, x 0..2 of channel 0.
        let expected = [0.0, 1.0, 2.0, 3.0, 8.0, 9.0, 10.0, 11.0].iter().sum::<f64>() / 8.0;
        assert_eq!(out[0], expected);
        let back = avg_pool_backward(&vec![8.0; out.len()], shape, 2);
        assert!(back.iter().all(|&v| v == 1.0));
        assert!(pooled_shape(Shape3 { c: 1, d: [5, 4, 4] }, 2).is_err());
    }

    #[test]
    fn linear_small() {
        let y = linear_forward(&[1.0, 2.0], &[1.0, 0.0, 0.5, -1.0], &[0.0, 1.0]);
        assert_eq!(y, vec![1.0, -0.5]);
    }
}
