//! Resampling and filtering kernels shared by transforms and the
//! synthetic generator.

use crate::volume::Volume;

/// Mirror an out-of-range index back into `0..n` using half-sample
/// symmetric reflection (`d c b a | a b c d | d c b a`).
#[inline]
pub fn reflect_index(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Normalized 1D gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

fn convolve_axis(src: &[f64], dims: [usize; 3], axis: usize, taps: &[f64]) -> Vec<f64> {
    let radius = (taps.len() / 2) as isize;
    let strides = [dims[1] * dims[2], dims[2], 1];
    let n_axis = dims[axis];
    let stride = strides[axis];
    let mut out = vec![0.0; src.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let pos = (idx / stride) % n_axis;
        let base = idx - pos * stride;
        let mut acc = 0.0;
        for (t, &w) in taps.iter().enumerate() {
            let j = reflect_index(pos as isize + t as isize - radius, n_axis);
            acc += w * src[base + j * stride];
        }
        *o = acc;
    }
    out
}

/// Separable gaussian blur with reflective boundaries. `sigma <= 0` is the
/// identity.
pub fn gaussian_blur(v: &Volume, sigma: f64) -> Volume {
    if sigma <= 0.0 {
        return v.clone();
    }
    let taps = gaussian_kernel(sigma);
    let dims = v.dims();
    let mut data = v.data().to_vec();
    for axis in 0..3 {
        data = convolve_axis(&data, dims, axis, &taps);
    }
    v.with_data(data)
}

/// Reverses the selected axes.
pub fn flip_axes(v: &Volume, axes: [bool; 3]) -> Volume {
    let [dz, dy, dx] = v.dims();
    let mut data = Vec::with_capacity(v.len());
    for z in 0..dz {
        let sz = if axes[0] { dz - 1 - z } else { z };
        for y in 0..dy {
            let sy = if axes[1] { dy - 1 - y } else { y };
            for x in 0..dx {
                let sx = if axes[2] { dx - 1 - x } else { x };
                data.push(v.get(sz, sy, sx));
            }
        }
    }
    v.with_data(data)
}

/// Source coordinate and interpolation weight for each output index when
/// stretching `src_len` samples over `dst_len` (corner-aligned).
fn axis_samples(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    (0..dst_len)
        .map(|o| {
            if src_len == 1 || dst_len == 1 {
                return (0, 0, 0.0);
            }
            let s = (o * (src_len - 1)) as f64 / (dst_len - 1) as f64;
            let lo = (s.floor() as usize).min(src_len - 1);
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Trilinear resampling of the box `origin .. origin + size` of `v` onto
/// `v`'s own grid. A full-size box at the origin reproduces `v` exactly.
pub fn crop_resize(v: &Volume, origin: [usize; 3], size: [usize; 3]) -> Volume {
    let dims = v.dims();
    let sz = axis_samples(size[0], dims[0]);
    let sy = axis_samples(size[1], dims[1]);
    let sx = axis_samples(size[2], dims[2]);
    let at = |z: usize, y: usize, x: usize| v.get(origin[0] + z, origin[1] + y, origin[2] + x);
    let mut data = Vec::with_capacity(v.len());
    for &(z0, z1, tz) in &sz {
        for &(y0, y1, ty) in &sy {
            for &(x0, x1, tx) in &sx {
                let c00 = lerp(at(z0, y0, x0), at(z0, y0, x1), tx);
                let c01 = lerp(at(z0, y1, x0), at(z0, y1, x1), tx);
                let c10 = lerp(at(z1, y0, x0), at(z1, y0, x1), tx);
                let c11 = lerp(at(z1, y1, x0), at(z1, y1, x1), tx);
                data.push(lerp(lerp(c00, c01, ty), lerp(c10, c11, ty), tz));
            }
        }
    }
    v.with_data(data)
}
