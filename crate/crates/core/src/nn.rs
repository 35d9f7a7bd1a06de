//! The classification architectures and their parameter initialization.
//!
//! Forward passes are written once as a [`Program`] and so run unchanged
//! under plain, dual and taped execution.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::program::{evaluate, Exec, Program};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Pixels in one flattened MNIST image.
pub const IMAGE_PIXELS: usize = 784;
pub const IMAGE_SIDE: usize = 28;
pub const CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Multinomial logistic regression, `inputs → classes`.
    Logreg { inputs: usize, classes: usize },
    /// Fully-connected layers with ReLU after every hidden layer.
    Mlp {
        inputs: usize,
        hidden: Vec<usize>,
        classes: usize,
        bias: bool,
    },
    /// Four valid 3×3 convolutions with ReLU, 2×2 max pooling after the
    /// second and fourth, then `flatten → hidden → classes` with ReLU on
    /// the hidden layer. Convolutions have no bias.
    Cnn {
        side: usize,
        channels: usize,
        hidden: usize,
        classes: usize,
    },
}

impl ModelSpec {
    pub fn logreg() -> Self {
        ModelSpec::Logreg {
            inputs: IMAGE_PIXELS,
            classes: CLASSES,
        }
    }

    /// 784 → 1024 → 1024 → 10.
    pub fn mlp() -> Self {
        ModelSpec::mlp_with(&[1024, 1024])
    }

    pub fn mlp_with(hidden: &[usize]) -> Self {
        ModelSpec::Mlp {
            inputs: IMAGE_PIXELS,
            hidden: hidden.to_vec(),
            classes: CLASSES,
            bias: true,
        }
    }

    /// `depth` bias-free hidden layers of `width` units, then the classifier.
    pub fn mlp_depth(depth: usize, width: usize) -> Self {
        ModelSpec::Mlp {
            inputs: IMAGE_PIXELS,
            hidden: vec![width; depth],
            classes: CLASSES,
            bias: false,
        }
    }

    /// 64 channels, flatten 64·4·4 = 1024 → 1024 → 10.
    pub fn cnn() -> Self {
        ModelSpec::cnn_with(64, 1024)
    }

    pub fn cnn_with(channels: usize, hidden: usize) -> Self {
        ModelSpec::Cnn {
            side: IMAGE_SIDE,
            channels,
            hidden,
            classes: CLASSES,
        }
    }

    /// Desk-scale MLP: 784 → 256 → 256 → 10.
    pub fn mlp_small() -> Self {
        ModelSpec::mlp_with(&[256, 256])
    }

    /// Desk-scale CNN: 8 channels, flatten 128 → 128 → 10.
    pub fn cnn_small() -> Self {
        ModelSpec::cnn_with(8, 128)
    }

    pub fn tag(&self) -> String {
        match self {
            ModelSpec::Logreg { .. } => "logreg".into(),
            ModelSpec::Mlp { hidden, bias: false, .. } => {
                format!("mlp-depth-{}x{}", hidden.len(), hidden.first().copied().unwrap_or(0))
            }
            ModelSpec::Mlp { .. } if *self == ModelSpec::mlp() => "mlp".into(),
            ModelSpec::Mlp { .. } if *self == ModelSpec::mlp_small() => "mlp-small".into(),
            ModelSpec::Mlp { hidden, .. } => format!("mlp-{hidden:?}"),
            ModelSpec::Cnn { .. } if *self == ModelSpec::cnn() => "cnn".into(),
            ModelSpec::Cnn { .. } if *self == ModelSpec::cnn_small() => "cnn-small".into(),
            ModelSpec::Cnn { channels, hidden, .. } => format!("cnn-{channels}c-{hidden}h"),
        }
    }

    pub fn inputs(&self) -> usize {
        match self {
            ModelSpec::Logreg { inputs, .. } | ModelSpec::Mlp { inputs, .. } => *inputs,
            ModelSpec::Cnn { side, .. } => side * side,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ModelSpec::Logreg { classes, .. }
            | ModelSpec::Mlp { classes, .. }
            | ModelSpec::Cnn { classes, .. } => *classes,
        }
    }

    /// Spatial extent after the four convolutions and two pools.
    fn cnn_feature_side(side: usize) -> Result<usize> {
        // side → −2 → −2 → /2 → −2 → −2 → /2
        let s1 = side.checked_sub(4).filter(|s| *s > 0 && s % 2 == 0);
        let s2 = s1.and_then(|s| (s / 2).checked_sub(4)).filter(|s| *s > 0 && s % 2 == 0);
        s2.map(|s| s / 2).ok_or_else(|| {
            Error::dim("cnn", format!("image side {side} does not fit conv,conv,pool,conv,conv,pool"))
        })
    }

    /// Shapes of the parameters in declaration order.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let mut shapes = Vec::new();
        let mut dense = |name: String, fan_in: usize, fan_out: usize, bias: bool| {
            shapes.push((format!("{name}.weight"), vec![fan_in, fan_out]));
            if bias {
                shapes.push((format!("{name}.bias"), vec![fan_out]));
            }
        };
        match self {
            ModelSpec::Logreg { inputs, classes } => dense("fc1".into(), *inputs, *classes, true),
            ModelSpec::Mlp {
                inputs,
                hidden,
                classes,
                bias,
            } => {
                let mut fan_in = *inputs;
                for (i, &w) in hidden.iter().enumerate() {
                    dense(format!("fc{}", i + 1), fan_in, w, *bias);
                    fan_in = w;
                }
                dense(format!("fc{}", hidden.len() + 1), fan_in, *classes, *bias);
            }
            ModelSpec::Cnn {
                side,
                channels,
                hidden,
                classes,
            } => {
                let feat = ModelSpec::cnn_feature_side(*side)?;
                let flat = channels * feat * feat;
                dense("fc1".into(), flat, *hidden, true);
                dense("fc2".into(), *hidden, *classes, true);
                let mut convs = Vec::new();
                for i in 0..4 {
                    let c_in = if i == 0 { 1 } else { *channels };
                    convs.push((format!("conv{}.weight", i + 1), vec![*channels, c_in, 3, 3]));
                }
                convs.append(&mut shapes);
                shapes = convs;
            }
        }
        Ok(shapes)
    }

    pub fn num_params(&self) -> Result<usize> {
        Ok(self
            .param_shapes()?
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum())
    }

    /// Batch layout the model expects for `batch` flattened images.
    pub fn input_shape(&self, batch: usize) -> Vec<usize> {
        match self {
            ModelSpec::Cnn { side, .. } => vec![batch, 1, *side, *side],
            _ => vec![batch, self.inputs()],
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    /// Accepts `logreg`, `mlp`, `mlp-small`, `cnn`, `cnn-small` and
    /// `mlp-depth-<d>x<width>`.
    fn from_str(s: &str) -> Result<Self> {
        let spec = match s {
            "logreg" => ModelSpec::logreg(),
            "mlp" => ModelSpec::mlp(),
            "mlp-small" => ModelSpec::mlp_small(),
            "cnn" => ModelSpec::cnn(),
            "cnn-small" => ModelSpec::cnn_small(),
            other => {
                let parsed = other.strip_prefix("mlp-depth-").and_then(|rest| {
                    let (d, w) = rest.split_once('x')?;
                    Some(ModelSpec::mlp_depth(d.parse().ok()?, w.parse().ok()?))
                });
                parsed.ok_or_else(|| {
                    Error::Validation(format!(
                        "unknown model {other:?} (expected logreg, mlp, mlp-small, cnn, cnn-small or mlp-depth-<d>x<w>)"
                    ))
                })?
            }
        };
        Ok(spec)
    }
}

/// Weights uniform in `±1/√fan_in`, biases zero. `fan_in` of a convolution
/// kernel is `in_channels · 3 · 3`.
pub fn init(spec: &ModelSpec, rng: &mut RngState) -> Result<ParamSet> {
    let mut params = ParamSet::new();
    for (name, shape) in spec.param_shapes()? {
        let t = if name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            let fan_in: usize = if shape.len() == 4 { shape[1..].iter().product() } else { shape[0] };
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::uniform(rng, &shape, -bound, bound)
        };
        params.push(name, t);
    }
    Ok(params)
}

fn dense<E: Exec>(exec: &mut E, x: &E::Value, p: &[E::Value], at: &mut usize, bias: bool) -> Result<E::Value> {
    let y = exec.matmul(x, &p[*at])?;
    *at += 1;
    if bias {
        let y = exec.add_bias(&y, &p[*at])?;
        *at += 1;
        Ok(y)
    } else {
        Ok(y)
    }
}

/// Mean cross-entropy of a model on one batch, as a program of the model
/// parameters. `images` is `B×inputs`; labels are class indices.
#[derive(Debug, Clone, Copy)]
pub struct ModelLoss<'a> {
    pub spec: &'a ModelSpec,
    pub images: &'a Tensor,
    pub labels: &'a [usize],
}

impl<'a> ModelLoss<'a> {
    pub fn new(spec: &'a ModelSpec, images: &'a Tensor, labels: &'a [usize]) -> Self {
        ModelLoss { spec, images, labels }
    }

    pub fn logits<E: Exec>(&self, exec: &mut E, p: &[E::Value]) -> Result<E::Value> {
        let batch = match self.images.shape() {
            [b, f] if *f == self.spec.inputs() => *b,
            s => {
                return Err(Error::dim(
                    "forward",
                    format!("{} expects B×{} images, got {s:?}", self.spec, self.spec.inputs()),
                ))
            }
        };
        if self.labels.len() != batch {
            return Err(Error::dim("forward", format!("{} labels for batch of {batch}", self.labels.len())));
        }
        let input = self.images.reshape(&self.spec.input_shape(batch))?;
        let mut h = exec.constant(&input);
        let mut at = 0;
        match self.spec {
            ModelSpec::Logreg { .. } => dense(exec, &h, p, &mut at, true),
            ModelSpec::Mlp { hidden, bias, .. } => {
                for _ in hidden {
                    let z = dense(exec, &h, p, &mut at, *bias)?;
                    h = exec.relu(&z);
                }
                dense(exec, &h, p, &mut at, *bias)
            }
            ModelSpec::Cnn { side, channels, .. } => {
                for layer in 0..4 {
                    let z = exec.conv2d(&h, &p[at])?;
                    at += 1;
                    h = exec.relu(&z);
                    if layer % 2 == 1 {
                        h = exec.maxpool2d(&h)?;
                    }
                }
                let feat = ModelSpec::cnn_feature_side(*side)?;
                let flat_len = channels * feat * feat;
                h = exec.reshape(&h, &[batch, flat_len])?;
                let z = dense(exec, &h, p, &mut at, true)?;
                h = exec.relu(&z);
                dense(exec, &h, p, &mut at, true)
            }
        }
    }
}

impl Program for ModelLoss<'_> {
    fn run<E: Exec>(&self, exec: &mut E, p: &[E::Value]) -> Result<E::Value> {
        let logits = self.logits(exec, p)?;
        exec.logsoftmax_nll(&logits, self.labels)
    }
}

/// Plain forward pass returning the mean batch loss.
pub fn forward(spec: &ModelSpec, params: &ParamSet, images: &Tensor, labels: &[usize]) -> Result<f64> {
    evaluate(&ModelLoss::new(spec, images, labels), params)
}
