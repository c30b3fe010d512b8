use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::pool::PoolSpec;

/// Selection rule of a subspace layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum UnitType {
    Maxout,
    Probout { lambda: f64 },
}

impl UnitType {
    pub fn probout_lambda(&self) -> Option<f64> {
        match *self {
            UnitType::Maxout => None,
            UnitType::Probout { lambda } => Some(lambda),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    /// Valid convolution producing `units * k` maps, subspace pooling over
    /// each group of `k` sibling maps, then optional spatial max pooling.
    ConvSubspace {
        units: usize,
        k: usize,
        receptive_field: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pool: Option<PoolSpec>,
        unit: UnitType,
    },
    /// Fully connected layer of `units` subspace units over `k` responses each.
    FcSubspace { units: usize, k: usize, unit: UnitType },
    Softmax { classes: usize },
}

impl LayerSpec {
    pub fn unit(&self) -> Option<UnitType> {
        match self {
            LayerSpec::ConvSubspace { unit, .. } | LayerSpec::FcSubspace { unit, .. } => Some(*unit),
            LayerSpec::Softmax { .. } => None,
        }
    }

    fn unit_mut(&mut self) -> Option<&mut UnitType> {
        match self {
            LayerSpec::ConvSubspace { unit, .. } | LayerSpec::FcSubspace { unit, .. } => Some(unit),
            LayerSpec::Softmax { .. } => None,
        }
    }
}

/// Shapes flowing through one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerGeometry {
    pub input: Vec<usize>,
    /// Linear responses before subspace selection (`[units*k, h, w]` or `[units*k]`).
    pub linear: Vec<usize>,
    /// After subspace selection and spatial pooling.
    pub output: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `[channels, height, width]`.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl ModelConfig {
    /// The first two convolutional stages of the five-layer CIFAR-10 model
    /// (48 and 128 units, k = 2, receptive fields 8, 4x4/2 pooling) followed
    /// by 240 fully connected units with k = 5 and a 10-way softmax.
    ///
    /// Under valid convolution the spatial extent is already 1x1 after the
    /// second stage, so the third (rf 5) stage cannot follow it.
    pub fn cifar_two_stage(unit: impl Fn(usize) -> UnitType) -> Self {
        let pool = Some(PoolSpec { size: 4, stride: 2 });
        ModelConfig {
            input: [3, 32, 32],
            layers: vec![
                LayerSpec::ConvSubspace { units: 48, k: 2, receptive_field: 8, pool, unit: unit(0) },
                LayerSpec::ConvSubspace { units: 128, k: 2, receptive_field: 8, pool, unit: unit(1) },
                LayerSpec::FcSubspace { units: 240, k: 5, unit: unit(2) },
                LayerSpec::Softmax { classes: 10 },
            ],
        }
    }

    /// Scaled-down three-stage network on 3x16x16 input: conv 8/16/16 units
    /// (k = 2), 32 fully connected units (k = 5).
    pub fn desk_scale(classes: usize, unit: impl Fn(usize) -> UnitType) -> Self {
        let pool = Some(PoolSpec { size: 2, stride: 2 });
        ModelConfig {
            input: [3, 16, 16],
            layers: vec![
                LayerSpec::ConvSubspace { units: 8, k: 2, receptive_field: 5, pool, unit: unit(0) },
                LayerSpec::ConvSubspace { units: 16, k: 2, receptive_field: 3, pool, unit: unit(1) },
                LayerSpec::ConvSubspace { units: 16, k: 2, receptive_field: 2, pool: None, unit: unit(2) },
                LayerSpec::FcSubspace { units: 32, k: 5, unit: unit(3) },
                LayerSpec::Softmax { classes },
            ],
        }
    }

    /// Per-layer λ that worked best in the cross-validation: 1, 2, 3, 4, then 4
    /// for any deeper layer.
    pub fn default_probout(layer: usize) -> UnitType {
        UnitType::Probout {
            lambda: [1.0, 2.0, 3.0, 4.0].get(layer).copied().unwrap_or(4.0),
        }
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Softmax { classes }) => *classes,
            _ => 0,
        }
    }

    pub fn hidden(&self) -> &[LayerSpec] {
        &self.layers[..self.layers.len().saturating_sub(1)]
    }

    /// `conv1, conv2, ..., fc1, ...` for the hidden layers.
    pub fn hidden_names(&self) -> Vec<String> {
        let (mut nc, mut nf) = (0, 0);
        self.hidden()
            .iter()
            .map(|l| match l {
                LayerSpec::ConvSubspace { .. } => {
                    nc += 1;
                    format!("conv{nc}")
                }
                _ => {
                    nf += 1;
                    format!("fc{nf}")
                }
            })
            .collect()
    }

    /// λ of each hidden layer (`None` for maxout layers).
    pub fn lambdas(&self) -> Vec<Option<f64>> {
        self.hidden()
            .iter()
            .map(|l| l.unit().and_then(|u| u.probout_lambda()))
            .collect()
    }

    /// Copy with probout λ replaced layer by layer; maxout layers keep their type.
    pub fn with_lambdas(&self, lambdas: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        let n = out.hidden().len();
        if lambdas.len() != n {
            return Err(Error::Config(format!("{} lambdas for {n} hidden layers", lambdas.len())));
        }
        for (spec, &lam) in out.layers.iter_mut().zip(lambdas) {
            if let Some(UnitType::Probout { lambda }) = spec.unit_mut() {
                *lambda = lam;
            }
        }
        out.validate()?;
        Ok(out)
    }

    /// Copy with every hidden layer's unit type chosen by `unit(layer)`.
    pub fn with_units(&self, unit: impl Fn(usize) -> UnitType) -> Self {
        let mut out = self.clone();
        let n = out.layers.len().saturating_sub(1);
        for (i, spec) in out.layers[..n].iter_mut().enumerate() {
            if let Some(u) = spec.unit_mut() {
                *u = unit(i);
            }
        }
        out
    }

    pub fn has_probout(&self) -> bool {
        self.lambdas().iter().any(Option::is_some)
    }

    /// Checks the layer chain and returns the shapes through every layer.
    pub fn validate(&self) -> Result<Vec<LayerGeometry>> {
        if self.input.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("input shape {:?} has a zero extent", self.input)));
        }
        match self.layers.last() {
            Some(LayerSpec::Softmax { classes }) if *classes >= 1 => {}
            _ => return Err(Error::Config("the last layer must be a softmax with >= 1 class".into())),
        }
        let mut shape = self.input.to_vec();
        let mut seen_fc = false;
        let mut geometry = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            let input = shape.clone();
            let (linear, output) = match *spec {
                LayerSpec::ConvSubspace { units, k, receptive_field: rf, pool, unit } => {
                    check_unit(i, units, k, unit)?;
                    if seen_fc || shape.len() != 3 {
                        return Err(Error::Config(format!("layer {i}: convolution after a fully connected layer")));
                    }
                    if rf == 0 {
                        return Err(Error::Config(format!("layer {i}: receptive field must be >= 1")));
                    }
                    if shape[1] < rf || shape[2] < rf {
                        return Err(Error::dim(format!(
                            "layer {i}: input {}x{} smaller than receptive field {rf}",
                            shape[1], shape[2]
                        )));
                    }
                    let (h, w) = (shape[1] - rf + 1, shape[2] - rf + 1);
                    let out = match pool {
                        Some(p) => vec![units, p.output_extent(h)?, p.output_extent(w)?],
                        None => vec![units, h, w],
                    };
                    (vec![units * k, h, w], out)
                }
                LayerSpec::FcSubspace { units, k, unit } => {
                    check_unit(i, units, k, unit)?;
                    seen_fc = true;
                    (vec![units * k], vec![units])
                }
                LayerSpec::Softmax { classes } => {
                    if i + 1 != self.layers.len() {
                        return Err(Error::Config(format!("layer {i}: softmax must be the last layer")));
                    }
                    (vec![classes], vec![classes])
                }
            };
            shape = output.clone();
            geometry.push(LayerGeometry { input, linear, output });
        }
        Ok(geometry)
    }
}

fn check_unit(i: usize, units: usize, k: usize, unit: UnitType) -> Result<()> {
    if units == 0 || k == 0 {
        return Err(Error::Config(format!("layer {i}: units and k must be >= 1")));
    }
    if let UnitType::Probout { lambda } = unit {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("layer {i}: lambda must be > 0, got {lambda}")));
        }
    }
    Ok(())
}
