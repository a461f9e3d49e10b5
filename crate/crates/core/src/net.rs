//! Small tanh feed-forward networks stored as flat parameter vectors.
//!
//! Layout per layer, in order: the weight matrix (`out x in`, row-major)
//! followed by the bias vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

/// Offsets of one affine layer inside a [`ParamVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    pub fn end(&self) -> usize {
        self.bias_offset + self.fan_out
    }
}

impl MlpSpec {
    pub fn new(in_dim: usize, hidden: &[usize], out_dim: usize) -> Self {
        MlpSpec {
            in_dim,
            out_dim,
            hidden: hidden.to_vec(),
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "all network widths must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut widths = vec![self.in_dim];
        widths.extend(&self.hidden);
        widths.push(self.out_dim);
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset = shape.end();
                shape
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().last().map_or(0, |l| l.end())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(spec: &MlpSpec) -> Self {
        ParamVector(vec![0.0; spec.param_count()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Seeded initialization: weights uniform in `+-1/sqrt(fan_in)`, biases zero,
/// last-layer weights scaled by 0.1 so the initial field is close to zero.
pub fn init(spec: &MlpSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec.layers();
    let mut values = vec![0.0; spec.param_count()];
    for (i, layer) in layers.iter().enumerate() {
        let s = 1.0 / (layer.fan_in as f64).sqrt();
        let scale = if i + 1 == layers.len() { 0.1 } else { 1.0 };
        for w in &mut values[layer.weight_offset..layer.bias_offset] {
            *w = scale * rng.gen_range(-s..s);
        }
    }
    ParamVector(values)
}

/// Evaluates the network on a single input.
pub fn forward(spec: &MlpSpec, params: &ParamVector, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), spec.in_dim);
    let layers = spec.layers();
    let p = &params.0;
    let mut act = x.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        let w = &p[layer.weight_offset..layer.bias_offset];
        let b = &p[layer.bias_offset..layer.end()];
        let mut next: Vec<f64> = (0..layer.fan_out)
            .map(|o| {
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                b[o] + row.iter().zip(&act).map(|(a, v)| a * v).sum::<f64>()
            })
            .collect();
        if i + 1 < layers.len() {
            next.iter_mut().for_each(|v| *v = v.tanh());
        }
        act = next;
    }
    act
}

/// One layer in nested form, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

pub fn to_nested(spec: &MlpSpec, params: &ParamVector) -> Vec<LayerParams> {
    spec.layers()
        .iter()
        .map(|l| LayerParams {
            weights: params.0[l.weight_offset..l.bias_offset]
                .chunks(l.fan_in)
                .map(<[f64]>::to_vec)
                .collect(),
            biases: params.0[l.bias_offset..l.end()].to_vec(),
        })
        .collect()
}

pub fn from_nested(spec: &MlpSpec, nested: &[LayerParams]) -> Result<ParamVector> {
    let layers = spec.layers();
    if layers.len() != nested.len() {
        return Err(Error::Shape(format!(
            "expected {} layers, found {}",
            layers.len(),
            nested.len()
        )));
    }
    let mut values = Vec::with_capacity(spec.param_count());
    for (shape, layer) in layers.iter().zip(nested) {
        if layer.weights.len() != shape.fan_out
            || layer.weights.iter().any(|row| row.len() != shape.fan_in)
            || layer.biases.len() != shape.fan_out
        {
            return Err(Error::Shape(format!(
                "layer {}x{} does not match stored parameters",
                shape.fan_out, shape.fan_in
            )));
        }
        for row in &layer.weights {
            values.extend_from_slice(row);
        }
        values.extend_from_slice(&layer.biases);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            t: 0.0,
            what: "stored network parameters".into(),
        });
    }
    Ok(ParamVector(values))
}
