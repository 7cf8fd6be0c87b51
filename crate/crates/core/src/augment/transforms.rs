use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use super::filters::{crop_resize, flip_axes, gaussian_blur};
use super::Transform;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::volume::Volume;

/// Per-axis side of a cube covering `fraction` of the volume:
/// `round(dim * fraction^(1/3))`, clamped to `[1, dim]`.
pub fn cube_sides(dims: [usize; 3], fraction: f64) -> [usize; 3] {
    let scale = fraction.cbrt();
    dims.map(|d| ((d as f64 * scale).round() as usize).clamp(1, d))
}

fn random_origin(dims: [usize; 3], sides: [usize; 3], rng: &mut RngStream) -> [usize; 3] {
    [0, 1, 2].map(|a| rng.index(dims[a] - sides[a] + 1))
}

fn parse<T: DeserializeOwned>(kind: &str, params: &Value) -> Result<T> {
    let params = if params.is_null() {
        Value::Object(Default::default())
    } else {
        params.clone()
    };
    serde_json::from_value(params)
        .map_err(|e| Error::Parameter(format!("bad params for transform '{kind}': {e}")))
}

fn check_range(kind: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
        return Err(Error::Parameter(format!(
            "{kind}: range must satisfy 0 <= min <= max, got [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// Zeroes a random cube covering the volume fraction `p`.
pub fn random_cutout(v: &Volume, p: f64, rng: &mut RngStream) -> Result<Volume> {
    Cutout::new(p)?.apply(v, rng)
}

/// Crops a random cube covering the volume fraction `p_prime` and resizes
/// it back to the input grid.
pub fn random_crop_resize(v: &Volume, p_prime: f64, rng: &mut RngStream) -> Result<Volume> {
    CropResize::new(p_prime)?.apply(v, rng)
}

#[derive(Debug, Clone, Copy)]
pub struct Cutout {
    p: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CutoutParams {
    #[serde(default = "default_cutout_p")]
    p: f64,
}

fn default_cutout_p() -> f64 {
    0.25
}

impl Cutout {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Parameter(format!("cutout: p must lie in (0, 1), got {p}")));
        }
        Ok(Cutout { p })
    }

    pub fn from_params(params: &Value) -> Result<Box<dyn Transform>> {
        let CutoutParams { p } = parse("cutout", params)?;
        Ok(Box::new(Cutout::new(p)?))
    }
}

impl Transform for Cutout {
    fn kind(&self) -> &'static str {
        "cutout"
    }

    fn stage(&self) -> u8 {
        1
    }

    fn apply(&self, v: &Volume, rng: &mut RngStream) -> Result<Volume> {
        let dims = v.dims();
        let sides = cube_sides(dims, self.p);
        let o = random_origin(dims, sides, rng);
        let mut out = v.clone();
        for z in o[0]..o[0] + sides[0] {
            for y in o[1]..o[1] + sides[1] {
                let start = out.index(z, y, o[2]);
                out.data_mut()[start..start + sides[2]].fill(0.0);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CropResize {
    p_prime: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CropParams {
    #[serde(default = "default_crop_p")]
    p_prime: f64,
}

fn default_crop_p() -> f64 {
    0.75
}

impl CropResize {
    pub fn new(p_prime: f64) -> Result<Self> {
        if !(p_prime > 0.0 && p_prime <= 1.0) {
            return Err(Error::Parameter(format!(
                "crop_resize: p_prime must lie in (0, 1], got {p_prime}"
            )));
        }
        Ok(CropResize { p_prime })
    }

    pub fn from_params(params: &Value) -> Result<Box<dyn Transform>> {
        let CropParams { p_prime } = parse("crop_resize", params)?;
        Ok(Box::new(CropResize::new(p_prime)?))
    }
}

impl Transform for CropResize {
    fn kind(&self) -> &'static str {
        "crop_resize"
    }

    fn stage(&self) -> u8 {
        0
    }

    fn apply(&self, v: &Volume, rng: &mut RngStream) -> Result<Volume> {
        let dims = v.dims();
        let sides = cube_sides(dims, self.p_prime);
        let o = random_origin(dims, sides, rng);
        Ok(crop_resize(v, o, sides))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Flip {
    probability: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FlipParams {
    #[serde(default = "default_flip_p")]
    probability: f64,
}

fn default_flip_p() -> f64 {
    0.5
}

impl Flip {
    pub fn new(probability: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::Parameter(format!(
                "flip: probability must lie in [0, 1], got {probability}"
            )));
        }
        Ok(Flip { probability })
    }

    pub fn from_params(params: &Value) -> Result<Box<dyn Transform>> {
        let FlipParams { probability } = parse("flip", params)?;
        Ok(Box::new(Flip::new(probability)?))
    }

    pub fn draw_axes(&self, rng: &mut RngStream) -> [bool; 3] {
        [0, 1, 2].map(|_| rng.bernoulli(self.probability))
    }
}

impl Transform for Flip {
    fn kind(&self) -> &'static str {
        "flip"
    }

    fn stage(&self) -> u8 {
        2
    }

    fn apply(&self, v: &Volume, rng: &mut RngStream) -> Result<Volume> {
        let axes = self.draw_axes(rng);
        Ok(flip_axes(v, axes))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Noise {
    std: (f64, f64),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseParams {
    #[serde(default = "default_noise_std")]
    std: (f64, f64),
}

fn default_noise_std() -> (f64, f64) {
    (0.05, 0.15)
}

impl Noise {
    pub fn new(std: (f64, f64)) -> Result<Self> {
        check_range("noise", std)?;
        Ok(Noise { std })
    }

    pub fn from_params(params: &Value) -> Result<Box<dyn Transform>> {
        let NoiseParams { std } = parse("noise", params)?;
        Ok(Box::new(Noise::new(std)?))
    }
}

impl Transform for Noise {
    fn kind(&self) -> &'static str {
        "noise"
    }

    fn stage(&self) -> u8 {
        3
    }

    fn apply(&self, v: &Volume, rng: &mut RngStream) -> Result<Volume> {
        let std = rng.uniform_in(self.std.0, self.std.1);
        let mut out = v.clone();
        if std > 0.0 {
            for x in out.data_mut() {
                *x += std * rng.normal();
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Blur {
    sigma: (f64, f64),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BlurParams {
    #[serde(default = "default_blur_sigma")]
    sigma: (f64, f64),
}

fn default_blur_sigma() -> (f64, f64) {
    (0.1, 2.0)
}

impl Blur {
    pub fn new(sigma: (f64, f64)) -> Result<Self> {
        check_range("blur", sigma)?;
        Ok(Blur { sigma })
    }

    pub fn from_params(params: &Value) -> Result<Box<dyn Transform>> {
        let BlurParams { sigma } = parse("blur", params)?;
        Ok(Box::new(Blur::new(sigma)?))
    }
}

impl Transform for Blur {
    fn kind(&self) -> &'static str {
        "blur"
    }

    fn stage(&self) -> u8 {
        4
    }

    fn apply(&self, v: &Volume, rng: &mut RngStream) -> Result<Volume> {
        let sigma = rng.uniform_in(self.sigma.0, self.sigma.1);
        Ok(gaussian_blur(v, sigma))
    }
}
