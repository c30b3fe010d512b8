//! Layers, parameters and the forward/backward passes of a subspace-pooling
//! convolutional network.

mod config;
mod conv;
mod pool;

pub use config::{LayerGeometry, LayerSpec, ModelConfig, UnitType};
pub use conv::conv_forward;
pub use pool::{spatial_maxpool, PoolSpec};

use crate::error::{Error, Result};
use crate::numerics::{affine, Real, RngStream, Tensor};
use crate::subspace::{replay, unit_forward, Choice, SamplingMode};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Weights and biases of every layer, softmax included.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> Parameters<T> {
    /// Zero-mean uniform weights with half-width `sqrt(6 / (fan_in + fan_out))`,
    /// zero biases.
    pub fn init(config: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let geometry = config.validate()?;
        let layers = config
            .layers
            .iter()
            .zip(&geometry)
            .map(|(spec, g)| {
                let (shape, fan_in, fan_out) = match *spec {
                    LayerSpec::ConvSubspace { receptive_field: rf, .. } => {
                        let (cin, cout) = (g.input[0], g.linear[0]);
                        (vec![cout, cin, rf, rf], cin * rf * rf, cout * rf * rf)
                    }
                    _ => {
                        let fan_in: usize = g.input.iter().product();
                        (vec![g.linear[0], fan_in], fan_in, g.linear[0])
                    }
                };
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| T::lit(a * (2.0 * rng.uniform() - 1.0))).collect();
                Ok(LayerParams {
                    weight: Tensor::new(shape, data)?,
                    bias: Tensor::zeros(vec![g.linear[0]]),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Parameters { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Parameters {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: Tensor::zeros(l.weight.shape().to_vec()),
                    bias: Tensor::zeros(l.bias.shape().to_vec()),
                })
                .collect(),
        }
    }

    /// Weight and bias tensors in layer order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_values(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::dim("parameter sets have different layer counts"));
        }
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v = *v * s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        Parameters {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    fn check_against(&self, geometry: &[LayerGeometry], config: &ModelConfig) -> Result<()> {
        if self.layers.len() != config.layers.len() {
            return Err(Error::dim(format!(
                "{} parameter layers for {} configured layers",
                self.layers.len(),
                config.layers.len()
            )));
        }
        for (i, ((p, g), spec)) in self.layers.iter().zip(geometry).zip(&config.layers).enumerate() {
            let expect = match *spec {
                LayerSpec::ConvSubspace { receptive_field: rf, .. } => vec![g.linear[0], g.input[0], rf, rf],
                _ => vec![g.linear[0], g.input.iter().product()],
            };
            if p.weight.shape() != expect.as_slice() || p.bias.shape() != [g.linear[0]] {
                return Err(Error::dim(format!(
                    "layer {i}: weight {:?} / bias {:?}, expected {expect:?} / [{}]",
                    p.weight.shape(),
                    p.bias.shape(),
                    g.linear[0]
                )));
            }
        }
        Ok(())
    }
}

/// Choices made by one hidden layer in a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// One entry per pooled unit and location, `[units, h, w]` row-major.
    pub choices: Vec<Choice>,
    /// Winning input position of each spatial pooling window.
    pub pool_argmax: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionTrace {
    pub layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub probs: Vec<T>,
    pub trace: SelectionTrace,
    /// Input of every layer (softmax included) when retained.
    pub inputs: Option<Vec<Tensor<T>>>,
}

impl<T: Real> ForwardPass<T> {
    /// Output of hidden layer `layer` (after subspace and spatial pooling).
    pub fn features(&self, layer: usize) -> Option<&Tensor<T>> {
        self.inputs.as_ref().and_then(|v| v.get(layer + 1))
    }
}

enum Source<'a> {
    Sample { mode: SamplingMode, rng: &'a mut RngStream },
    Replay(&'a SelectionTrace),
}

/// Subspace selection over groups of `k` sibling channels at every location.
///
/// `linmaps` is `[units*k, h, w]` (or `[units*k]`, treated as 1x1). The
/// output keeps the spatial layout with `units` channels.
pub fn subspace_pool_spatialwise<T: Real>(
    linmaps: &Tensor<T>,
    k: usize,
    unit: UnitType,
    mode: SamplingMode,
    rng: &mut RngStream,
) -> Result<(Tensor<T>, Vec<Choice>)> {
    subspace_select(linmaps, k, unit, &mut Source::Sample { mode, rng }, 0)
}

fn subspace_select<'a, T: Real>(
    linmaps: &Tensor<T>,
    k: usize,
    unit: UnitType,
    src: &mut Source<'a>,
    layer: usize,
) -> Result<(Tensor<T>, Vec<Choice>)> {
    let shape = linmaps.shape();
    if k == 0 || shape[0] % k != 0 {
        return Err(Error::dim(format!("{} channels are not divisible by k = {k}", shape[0])));
    }
    let units = shape[0] / k;
    let spatial: usize = shape[1..].iter().product();
    let lin = linmaps.data();
    let mut out = Vec::with_capacity(units * spatial);
    let mut choices = Vec::with_capacity(units * spatial);
    let mut z = Vec::with_capacity(k);
    let mut scratch = Vec::with_capacity(k + 1);
    let lambda = unit.probout_lambda();
    let frozen = match src {
        Source::Replay(trace) => {
            let trace: &'a SelectionTrace = trace;
            let lt = trace.layers.get(layer).ok_or_else(|| Error::dim("stale trace: missing layer"))?;
            if lt.choices.len() != units * spatial {
                return Err(Error::dim("stale trace: choice count mismatch"));
            }
            Some(&lt.choices)
        }
        Source::Sample { .. } => None,
    };
    for u in 0..units {
        for pos in 0..spatial {
            z.clear();
            z.extend((0..k).map(|j| lin[(u * k + j) * spatial + pos]));
            let (choice, value) = match (&mut *src, frozen) {
                (_, Some(choices)) => {
                    let c = choices[u * spatial + pos];
                    (c, replay(&z, c)?)
                }
                (Source::Sample { mode, rng }, None) => {
                    let s = unit_forward(&z, lambda, *mode, rng, &mut scratch)?;
                    (s.choice, s.value)
                }
                (Source::Replay(_), None) => unreachable!(),
            };
            out.push(value);
            choices.push(choice);
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[0] = units;
    Ok((Tensor::new(out_shape, out)?, choices))
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// `softmax(W·h + b)`.
pub fn softmax_output<T: Real>(h: &[T], w: &Tensor<T>, b: &[T]) -> Result<Vec<T>> {
    Ok(softmax(&affine(w, h, b)?))
}

/// A configured network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: Parameters<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, params: Parameters<T>) -> Result<Self> {
        let geometry = config.validate()?;
        params.check_against(&geometry, &config)?;
        Ok(Self { config, params })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = Parameters::init(&config, &mut RngStream::new(seed, 0))?;
        Ok(Self { config, params })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// One pass in `mode`; every stochastic choice and pooling winner is
    /// recorded in the trace. Layer inputs are kept only when `retain` is set
    /// (they are needed by [`Model::backward`]).
    pub fn forward(
        &self,
        x: &Tensor<T>,
        mode: SamplingMode,
        rng: &mut RngStream,
        retain: bool,
    ) -> Result<ForwardPass<T>> {
        self.run(x, Source::Sample { mode, rng }, retain)
    }

    /// Output probabilities with every choice taken from `trace`.
    pub fn forward_replay(&self, x: &Tensor<T>, trace: &SelectionTrace) -> Result<Vec<T>> {
        Ok(self.run(x, Source::Replay(trace), false)?.probs)
    }

    fn run(&self, x: &Tensor<T>, mut src: Source<'_>, retain: bool) -> Result<ForwardPass<T>> {
        if x.shape() != self.config.input {
            return Err(Error::dim(format!(
                "input shape {:?}, model expects {:?}",
                x.shape(),
                self.config.input
            )));
        }
        let n_hidden = self.config.layers.len() - 1;
        if let Source::Replay(trace) = &src {
            if trace.layers.len() != n_hidden {
                return Err(Error::dim("stale trace: layer count mismatch"));
            }
        }
        let mut inputs = retain.then(|| Vec::with_capacity(n_hidden + 1));
        let mut trace = SelectionTrace::default();
        let mut h = x.clone();
        for (l, (spec, p)) in self.config.layers[..n_hidden].iter().zip(&self.params.layers).enumerate() {
            let next = match *spec {
                LayerSpec::ConvSubspace { k, pool, unit, .. } => {
                    let lin = conv_forward(&h, &p.weight, p.bias.data())?;
                    let (sub, choices) = subspace_select(&lin, k, unit, &mut src, l)?;
                    let (out, pool_argmax) = match (pool, &src) {
                        (None, _) => (sub, None),
                        (Some(spec), Source::Replay(t)) => {
                            let arg = t.layers[l]
                                .pool_argmax
                                .as_ref()
                                .ok_or_else(|| Error::dim("stale trace: missing pooling record"))?;
                            (pool::replay_pool(&sub, spec, arg)?, Some(arg.clone()))
                        }
                        (Some(spec), Source::Sample { .. }) => {
                            let (t, arg) = spatial_maxpool(&sub, spec)?;
                            (t, Some(arg))
                        }
                    };
                    trace.layers.push(LayerTrace { choices, pool_argmax });
                    out
                }
                LayerSpec::FcSubspace { k, unit, .. } => {
                    let z = Tensor::from_vec(affine(&p.weight, h.data(), p.bias.data())?);
                    let (out, choices) = subspace_select(&z, k, unit, &mut src, l)?;
                    trace.layers.push(LayerTrace { choices, pool_argmax: None });
                    out
                }
                LayerSpec::Softmax { .. } => unreachable!("validated: softmax is last"),
            };
            if let Some(v) = inputs.as_mut() {
                v.push(std::mem::replace(&mut h, next));
            } else {
                h = next;
            }
        }
        let out = &self.params.layers[n_hidden];
        let probs = softmax_output(h.data(), &out.weight, out.bias.data())?;
        if let Some(v) = inputs.as_mut() {
            v.push(h);
        }
        Ok(ForwardPass { probs, trace, inputs })
    }

    /// Exact gradient of a loss with respect to every parameter, holding the
    /// pass's choices fixed. `grad_probs` is `dL/do` for the output
    /// probabilities `o`.
    pub fn backward(&self, pass: &ForwardPass<T>, grad_probs: &[T]) -> Result<Parameters<T>> {
        if grad_probs.len() != pass.probs.len() {
            return Err(Error::dim(format!(
                "{} output gradients for {} classes",
                grad_probs.len(),
                pass.probs.len()
            )));
        }
        // Softmax Jacobian: dL/dlogit_j = o_j (g_j - <o, g>).
        let o = &pass.probs;
        let og: T = o.iter().zip(grad_probs).map(|(&a, &b)| a * b).sum();
        let dlogits: Vec<T> = o.iter().zip(grad_probs).map(|(&oj, &gj)| oj * (gj - og)).collect();
        self.backward_logits(pass, &dlogits)
    }

    /// Same as [`Model::backward`] but starting from `dL/dlogits`.
    pub fn backward_logits(&self, pass: &ForwardPass<T>, grad_logits: &[T]) -> Result<Parameters<T>> {
        let inputs = pass
            .inputs
            .as_ref()
            .ok_or_else(|| Error::Config("backward needs a forward pass with retained inputs".into()))?;
        let n_hidden = self.config.layers.len() - 1;
        if inputs.len() != n_hidden + 1 || pass.trace.layers.len() != n_hidden {
            return Err(Error::dim("stale trace: layer count mismatch"));
        }
        let c = pass.probs.len();
        if grad_logits.len() != c {
            return Err(Error::dim(format!("{} output gradients for {c} classes", grad_logits.len())));
        }
        let mut grads = self.params.zeros_like();
        let mut dh = dense_backward(
            &self.params.layers[n_hidden],
            &mut grads.layers[n_hidden],
            inputs[n_hidden].data(),
            grad_logits,
            n_hidden > 0,
        );

        for l in (0..n_hidden).rev() {
            let p = &self.params.layers[l];
            let lt = &pass.trace.layers[l];
            let input = &inputs[l];
            let need_input = l > 0;
            match self.config.layers[l] {
                LayerSpec::ConvSubspace { k, .. } => {
                    let units = p.weight.shape()[0] / k;
                    let h = input.shape()[1] - p.weight.shape()[2] + 1;
                    let w = input.shape()[2] - p.weight.shape()[3] + 1;
                    let spatial = h * w;
                    let dsub = match &lt.pool_argmax {
                        Some(arg) => pool::maxpool_backward(&dh, arg, units * spatial),
                        None => std::mem::take(&mut dh),
                    };
                    if dsub.len() != units * spatial || lt.choices.len() != units * spatial {
                        return Err(Error::dim("stale trace: subspace shape mismatch"));
                    }
                    let mut dlin = vec![T::zero(); units * k * spatial];
                    for u in 0..units {
                        for pos in 0..spatial {
                            if let Some(j) = routed(lt.choices[u * spatial + pos], k)? {
                                let slot = (u * k + j) * spatial + pos;
                                dlin[slot] = dlin[slot] + dsub[u * spatial + pos];
                            }
                        }
                    }
                    let (dw, db, dx) = conv::conv_backward(input, &p.weight, &dlin, need_input)?;
                    grads.layers[l].weight.data_mut().copy_from_slice(&dw);
                    grads.layers[l].bias.data_mut().copy_from_slice(&db);
                    dh = dx.unwrap_or_default();
                }
                LayerSpec::FcSubspace { k, units, .. } => {
                    if lt.choices.len() != units || dh.len() != units {
                        return Err(Error::dim("stale trace: subspace shape mismatch"));
                    }
                    let mut dz = vec![T::zero(); units * k];
                    for (u, &choice) in lt.choices.iter().enumerate() {
                        if let Some(j) = routed(choice, k)? {
                            dz[u * k + j] = dz[u * k + j] + dh[u];
                        }
                    }
                    dh = dense_backward(p, &mut grads.layers[l], input.data(), &dz, need_input);
                }
                LayerSpec::Softmax { .. } => unreachable!(),
            }
        }
        Ok(grads)
    }

    /// Test-time copy with the weights (not biases) of every layer that
    /// consumes dropout-sampled activations multiplied by 0.5. Applying it
    /// twice quarters those weights.
    pub fn halve_weights(&self) -> Model<T> {
        let mut out = self.clone();
        let half = T::lit(0.5);
        for layer in out.params.layers.iter_mut().skip(1) {
            for w in layer.weight.data_mut() {
                *w = *w * half;
            }
        }
        out
    }
}

fn routed(choice: Choice, k: usize) -> Result<Option<usize>> {
    match choice {
        Choice::Unit(j) if j < k => Ok(Some(j)),
        Choice::Unit(j) => Err(Error::Index { index: j, k }),
        Choice::Dropped => Ok(None),
        Choice::Weighted => Err(Error::Mode("no gradient through probability-weighted units".into())),
    }
}

// Gradients of y = W x + b; returns dL/dx when requested.
fn dense_backward<T: Real>(
    p: &LayerParams<T>,
    g: &mut LayerParams<T>,
    x: &[T],
    dy: &[T],
    need_input: bool,
) -> Vec<T> {
    let d = x.len();
    for (i, &dyi) in dy.iter().enumerate() {
        g.bias.data_mut()[i] = dyi;
        for (gw, &xj) in g.weight.data_mut()[i * d..(i + 1) * d].iter_mut().zip(x) {
            *gw = dyi * xj;
        }
    }
    if !need_input {
        return Vec::new();
    }
    let mut dx = vec![T::zero(); d];
    for (i, &dyi) in dy.iter().enumerate() {
        for (dxj, &w) in dx.iter_mut().zip(&p.weight.data()[i * d..(i + 1) * d]) {
            *dxj = *dxj + w * dyi;
        }
    }
    dx
}
