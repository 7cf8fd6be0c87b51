//! Stochastic transformations producing the two views of each sample.

pub mod filters;
mod transforms;

pub use transforms::{cube_sides, random_crop_resize, random_cutout, Blur, CropResize, Cutout, Flip, Noise};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::rng::RngStream;
use crate::volume::Volume;

/// A volume-to-volume augmentation drawing its randomness from a stream.
pub trait Transform: Send + Sync {
    fn kind(&self) -> &'static str;

    /// Position in the fixed application order; lower runs first.
    fn stage(&self) -> u8;

    fn apply(&self, v: &Volume, rng: &mut RngStream) -> Result<Volume>;
}

pub type TransformRegistry = Registry<dyn Transform, Value>;

/// Built-in transform kinds.
pub fn registry() -> TransformRegistry {
    let mut reg = Registry::new("transform");
    reg.register("crop_resize", CropResize::from_params)
        .register("cutout", Cutout::from_params)
        .register("flip", Flip::from_params)
        .register("noise", Noise::from_params)
        .register("blur", Blur::from_params);
    reg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSpec {
    pub kind: String,
    #[serde(default)]
    pub params: Value,
    #[serde(default = "one")]
    pub probability: f64,
}

fn one() -> f64 {
    1.0
}

impl TransformSpec {
    pub fn new(kind: &str, params: Value, probability: f64) -> Self {
        TransformSpec {
            kind: kind.to_string(),
            params,
            probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransformSet {
    pub specs: Vec<TransformSpec>,
}

impl Default for TransformSet {
    fn default() -> Self {
        TransformSet::cutout()
    }
}

impl TransformSet {
    /// `crop`: crop-and-resize with p' = 0.75, always applied.
    pub fn crop() -> Self {
        TransformSet {
            specs: vec![TransformSpec::new("crop_resize", serde_json::json!({"p_prime": 0.75}), 1.0)],
        }
    }

    /// `cutout`: black cube covering p = 25%, always applied.
    pub fn cutout() -> Self {
        TransformSet {
            specs: vec![TransformSpec::new("cutout", serde_json::json!({"p": 0.25}), 1.0)],
        }
    }

    /// `all_tf`: every built-in kind, each applied with probability 0.5.
    pub fn all_tf() -> Self {
        let spec = |kind, params| TransformSpec::new(kind, params, 0.5);
        TransformSet {
            specs: vec![
                spec("crop_resize", serde_json::json!({"p_prime": 0.75})),
                spec("cutout", serde_json::json!({"p": 0.25})),
                spec("flip", serde_json::json!({"probability": 0.5})),
                spec("noise", serde_json::json!({"std": [0.05, 0.15]})),
                spec("blur", serde_json::json!({"sigma": [0.1, 2.0]})),
            ],
        }
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "crop" => Ok(Self::crop()),
            "cutout" => Ok(Self::cutout()),
            "all_tf" => Ok(Self::all_tf()),
            other => Err(Error::Parameter(format!(
                "unknown transform set '{other}' (known: crop, cutout, all_tf)"
            ))),
        }
    }

    pub fn compile(&self) -> Result<Pipeline> {
        self.compile_with(&registry())
    }

    pub fn compile_with(&self, reg: &TransformRegistry) -> Result<Pipeline> {
        if self.specs.is_empty() {
            return Err(Error::Parameter("transform set is empty".into()));
        }
        let mut steps = Vec::with_capacity(self.specs.len());
        for spec in &self.specs {
            if !(0.0..=1.0).contains(&spec.probability) {
                return Err(Error::Parameter(format!(
                    "transform '{}': probability must lie in [0, 1], got {}",
                    spec.kind, spec.probability
                )));
            }
            steps.push(Step {
                transform: reg.build(&spec.kind, &spec.params)?,
                probability: spec.probability,
            });
        }
        steps.sort_by_key(|s| s.transform.stage());
        Ok(Pipeline { steps })
    }
}

struct Step {
    transform: Box<dyn Transform>,
    probability: f64,
}

/// A compiled transform set in application order
/// (crop, cutout, flip, noise, blur).
pub struct Pipeline {
    steps: Vec<Step>,
}

impl Pipeline {
    pub fn kinds(&self) -> Vec<&'static str> {
        self.steps.iter().map(|s| s.transform.kind()).collect()
    }

    /// One stochastic view. Every step consumes one uniform draw for its
    /// apply decision, applied or not, so streams stay aligned.
    pub fn view(&self, v: &Volume, rng: &mut RngStream) -> Result<Volume> {
        let mut out = v.clone();
        for step in &self.steps {
            if rng.uniform() < step.probability {
                out = step.transform.apply(&out, rng)?;
            }
        }
        Ok(out)
    }
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline").field("kinds", &self.kinds()).finish()
    }
}

pub fn sample_view_pair(
    v: &Volume,
    pipeline: &Pipeline,
    rng1: &mut RngStream,
    rng2: &mut RngStream,
) -> Result<(Volume, Volume)> {
    Ok((pipeline.view(v, rng1)?, pipeline.view(v, rng2)?))
}

/// Applies one noise, blur or flip spec unconditionally.
pub fn apply_simple_transform(v: &Volume, spec: &TransformSpec, rng: &mut RngStream) -> Result<Volume> {
    match spec.kind.as_str() {
        "noise" | "blur" | "flip" => registry().build(&spec.kind, &spec.params)?.apply(v, rng),
        other => Err(Error::Parameter(format!(
            "'{other}' is not a simple transform (expected noise, blur or flip)"
        ))),
    }
}
