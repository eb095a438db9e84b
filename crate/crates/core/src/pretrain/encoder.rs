//! Dense encoder `E` and projection head `g`, with manual backprop.
//!
//! Every layer but the last is followed by `tanh`. The encoder's feature is
//! the pre-activation output of the second-to-last layer; the head is the
//! last layer, applied to `tanh(feature)`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub feature: usize,
    pub projection: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            input: 64 * 64,
            hidden: vec![256, 128],
            feature: 64,
            projection: 32,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.projection == 0 || self.projection % 2 != 0 {
            return Err(Error::Config(format!(
                "projection width {} must be even and positive",
                self.projection
            )));
        }
        if self.input == 0 || self.feature == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.hidden);
        w.push(self.feature);
        w.push(self.projection);
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in x out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    pub spec: EncoderSpec,
    pub layers: Vec<Dense>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    /// Input of each layer (`inputs[0]` is the batch itself).
    inputs: Vec<Array2<f64>>,
}

#[derive(Clone, Debug)]
pub struct Forward {
    /// `B x feature`.
    pub features: Array2<f64>,
    /// `B x projection`.
    pub projected: Array2<f64>,
    pub tape: Tape,
}

impl EncoderModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: EncoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = spec.widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-limit..limit)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn zeros(spec: EncoderSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths()
            .windows(2)
            .map(|w| Dense {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Forward> {
        if batch.ncols() != self.spec.input {
            return Err(Error::DimMismatch {
                expected: self.spec.input,
                found: batch.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = batch.to_owned();
        let mut features = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = x.dot(&layer.weight);
            y += &layer.bias;
            inputs.push(x);
            if l == last {
                return Ok(Forward {
                    features: features.expect("at least two layers"),
                    projected: y,
                    tape: Tape { inputs },
                });
            }
            if l == last - 1 {
                features = Some(y.clone());
            }
            y.mapv_inplace(f64::tanh);
            x = y;
        }
        unreachable!("encoder has at least two layers")
    }

    /// Parameter gradients given `dL/d projected`, in layer order.
    pub fn backward(&self, tape: &Tape, grad_projected: &Array2<f64>) -> Vec<Dense> {
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut g = grad_projected.clone();
        for l in (0..self.layers.len()).rev() {
            let x = &tape.inputs[l];
            grads.push(Dense {
                weight: x.t().dot(&g),
                bias: g.sum_axis(Axis(0)),
            });
            if l == 0 {
                break;
            }
            // x = tanh(y_{l-1}), so dy = dx * (1 - x^2)
            let mut gx = g.dot(&self.layers[l].weight.t());
            gx.zip_mut_with(x, |d, &a| *d *= 1.0 - a * a);
            g = gx;
        }
        grads.reverse();
        grads
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimMismatch {
                expected: self.num_params(),
                found: flat.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = flat[at];
                at += 1;
            }
            for b in l.bias.iter_mut() {
                *b = flat[at];
                at += 1;
            }
        }
        Ok(())
    }
}

pub fn flatten_grads(grads: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grads {
        out.extend(g.weight.iter());
        out.extend(g.bias.iter());
    }
    out
}

/// Forward pass for a single image.
pub fn encoder_forward(model: &EncoderModel, image: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Tape)> {
    let batch = ArrayView2::from_shape((1, image.len()), image).map_err(|_| Error::DimMismatch {
        expected: model.spec.input,
        found: image.len(),
    })?;
    let f = model.forward(batch)?;
    Ok((
        f.features.slice(s![0, ..]).to_vec(),
        f.projected.slice(s![0, ..]).to_vec(),
        f.tape,
    ))
}

/// SGD with momentum: `v = mu v + g; theta -= lr v`.
#[derive(Clone, Debug)]
pub struct Momentum {
    pub momentum: f64,
    velocity: Vec<Dense>,
}

impl Momentum {
    pub fn new(model: &EncoderModel, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: model
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn step(&mut self, model: &mut EncoderModel, grads: &[Dense], lr: f64) {
        let mu = self.momentum;
        for ((layer, v), g) in model.layers.iter_mut().zip(&mut self.velocity).zip(grads) {
            v.weight.zip_mut_with(&g.weight, |v, &g| *v = mu * *v + g);
            v.bias.zip_mut_with(&g.bias, |v, &g| *v = mu * *v + g);
            if lr != 0.0 {
                layer.weight.scaled_add(-lr, &v.weight);
                layer.bias.scaled_add(-lr, &v.bias);
            }
        }
    }
}
