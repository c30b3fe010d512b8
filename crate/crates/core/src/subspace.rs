//! Maxout and probout subspace pooling.
//!
//! A subspace unit computes `k` linear responses `z` of the same input and
//! emits one of them. Maxout emits the largest; probout samples index `i`
//! with Boltzmann probability `exp(λ z_i) / Σ_j exp(λ z_j)`. During training
//! the sampling can absorb dropout as an extra outcome of fixed mass 0.5.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{affine, multinomial_draw, Real, RngStream, Tensor};

/// Inverse temperatures swept when cross-validating a layer's λ.
pub const LAMBDA_GRID: [f64; 6] = [0.1, 0.5, 1.0, 2.0, 3.0, 4.0];

/// Probability that dropout zeroes a unit.
pub const DROPOUT_MASS: f64 = 0.5;

/// The `k` linear responses of one subspace unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceActivations<T> {
    z: Vec<T>,
}

impl<T: Real> SubspaceActivations<T> {
    pub fn new(z: Vec<T>) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::dim("a subspace needs k >= 1 responses"));
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::Range(format!("subspace response z[{i}] is not finite")));
        }
        Ok(Self { z })
    }

    pub fn k(&self) -> usize {
        self.z.len()
    }

    pub fn values(&self) -> &[T] {
        &self.z
    }
}

/// How a subspace unit picks its output in a given pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Probout samples from the Boltzmann distribution; maxout takes the max.
    TrainSample,
    /// Like `TrainSample`, with dropout folded into the draw.
    TrainSampleDropout,
    /// Test-time sampling from the rescaled (dropout-free) probabilities.
    InferSample,
    /// Every unit takes its maximum response.
    InferMax,
    /// Probout emits the probability-weighted mean response.
    InferProbWeight,
}

impl SamplingMode {
    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            SamplingMode::TrainSample | SamplingMode::TrainSampleDropout | SamplingMode::InferSample
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProboutConfig {
    lambda: f64,
    pub mode: SamplingMode,
}

impl ProboutConfig {
    pub fn new(lambda: f64, mode: SamplingMode) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Range(format!("inverse temperature must be > 0, got {lambda}")));
        }
        Ok(Self { lambda, mode })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Which response a unit emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Choice {
    /// Zero-based sub-unit index.
    Unit(usize),
    /// The unit was dropped and emitted zero.
    Dropped,
    /// Deterministic probability-weighted mixture of all sub-units.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection<T> {
    pub choice: Choice,
    pub value: T,
}

/// `z_i = w_i · v + b_i` for the `k` rows of `w`.
pub fn linear_subspace<T: Real>(
    v: &[T],
    w: &Tensor<T>,
    b: &[T],
) -> Result<SubspaceActivations<T>> {
    SubspaceActivations::new(affine(w, v, b)?)
}

fn argmax<T: Real>(z: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Largest response; ties resolve to the lowest index.
pub fn maxout_forward<T: Real>(z: &SubspaceActivations<T>) -> Selection<T> {
    pick(&z.z, argmax(&z.z))
}

/// Boltzmann probabilities at inverse temperature `lambda`, computed with the
/// maximum subtracted from every exponent.
pub fn boltzmann_probs<T: Real>(z: &SubspaceActivations<T>, lambda: f64) -> Vec<T> {
    let mut p = Vec::with_capacity(z.k());
    boltzmann_into(&z.z, lambda, &mut p);
    p
}

pub(crate) fn boltzmann_into<T: Real>(z: &[T], lambda: f64, out: &mut Vec<T>) {
    let lambda = T::lit(lambda);
    let max = z[argmax(z)];
    out.clear();
    out.extend(z.iter().map(|&zi| (lambda * (zi - max)).exp()));
    let total: T = out.iter().copied().sum();
    for p in out.iter_mut() {
        *p = *p / total;
    }
}

/// `[0.5, p_1 / 2, ..., p_k / 2]` written into `out`.
pub(crate) fn dropout_into<T: Real>(z: &[T], lambda: f64, out: &mut Vec<T>) {
    let half = T::lit(DROPOUT_MASS);
    boltzmann_into(z, lambda, out);
    for p in out.iter_mut() {
        *p = *p * half;
    }
    out.insert(0, half);
}

/// The `k + 1` outcome distribution with dropout as outcome 0.
pub fn dropout_probs<T: Real>(z: &SubspaceActivations<T>, lambda: f64) -> Vec<T> {
    let mut p = Vec::with_capacity(z.k() + 1);
    dropout_into(&z.z, lambda, &mut p);
    p
}

/// Removes the dropout outcome and renormalises the remaining `k` masses.
pub fn inference_rescale<T: Real>(p_hat: &[T]) -> Result<Vec<T>> {
    let mut p = p_hat.to_vec();
    rescale_in_place(&mut p)?;
    p.remove(0);
    Ok(p)
}

// Rescales p[1..] so it sums to one; p[0] is left untouched.
fn rescale_in_place<T: Real>(p_hat: &mut [T]) -> Result<()> {
    let (&mut p0, rest) = p_hat
        .split_first_mut()
        .ok_or_else(|| Error::Probability("empty probability vector".into()))?;
    if rest.is_empty() {
        return Err(Error::dim("rescaling needs at least one non-dropout outcome"));
    }
    let keep = T::one() - p0;
    if keep <= T::zero() {
        return Err(Error::Degenerate("dropout outcome carries all the mass".into()));
    }
    for p in rest.iter_mut() {
        *p = *p / keep;
    }
    Ok(())
}

/// Expected response under the Boltzmann distribution.
pub fn probability_weighted_value<T: Real>(z: &SubspaceActivations<T>, lambda: f64) -> T {
    weighted_in(&z.z, lambda, &mut Vec::with_capacity(z.k()))
}

fn weighted_in<T: Real>(z: &[T], lambda: f64, scratch: &mut Vec<T>) -> T {
    boltzmann_into(z, lambda, scratch);
    scratch
        .iter()
        .zip(z)
        .fold(T::zero(), |acc, (&p, &zi)| acc + p * zi)
}

/// Samples one probout response. Every stochastic mode consumes exactly one
/// categorical draw; `InferMax` consumes none.
pub fn probout_select<T: Real>(
    z: &SubspaceActivations<T>,
    cfg: &ProboutConfig,
    rng: &mut RngStream,
) -> Result<Selection<T>> {
    probout_in(&z.z, cfg.lambda, cfg.mode, rng, &mut Vec::with_capacity(z.k() + 1))
}

fn probout_in<T: Real>(
    z: &[T],
    lambda: f64,
    mode: SamplingMode,
    rng: &mut RngStream,
    scratch: &mut Vec<T>,
) -> Result<Selection<T>> {
    match mode {
        SamplingMode::TrainSample => {
            boltzmann_into(z, lambda, scratch);
            Ok(pick(z, multinomial_draw(scratch, rng)?))
        }
        SamplingMode::InferSample => {
            dropout_into(z, lambda, scratch);
            rescale_in_place(scratch)?;
            Ok(pick(z, multinomial_draw(&scratch[1..], rng)?))
        }
        SamplingMode::TrainSampleDropout => {
            dropout_into(z, lambda, scratch);
            match multinomial_draw(scratch, rng)? {
                0 => Ok(dropped()),
                i => Ok(pick(z, i - 1)),
            }
        }
        SamplingMode::InferMax => Ok(pick(z, argmax(z))),
        SamplingMode::InferProbWeight => Err(Error::Mode(
            "probability weighting is deterministic; use probability_weighted_value".into(),
        )),
    }
}

/// Output of a maxout or probout unit under `mode`, for use inside layers.
///
/// Maxout units take their maximum and, with dropout, are zeroed with
/// probability one half. Probout units under `InferProbWeight` return the
/// weighted mean with [`Choice::Weighted`].
pub(crate) fn unit_forward<T: Real>(
    z: &[T],
    probout_lambda: Option<f64>,
    mode: SamplingMode,
    rng: &mut RngStream,
    scratch: &mut Vec<T>,
) -> Result<Selection<T>> {
    match probout_lambda {
        None => maxout_in(z, mode, rng),
        Some(lambda) if mode == SamplingMode::InferProbWeight => Ok(Selection {
            choice: Choice::Weighted,
            value: weighted_in(z, lambda, scratch),
        }),
        Some(lambda) => probout_in(z, lambda, mode, rng, scratch),
    }
}

/// Maxout selection under a pass mode. With dropout the unit is zeroed with
/// probability one half, using one draw.
pub fn maxout_select<T: Real>(
    z: &SubspaceActivations<T>,
    mode: SamplingMode,
    rng: &mut RngStream,
) -> Result<Selection<T>> {
    maxout_in(&z.z, mode, rng)
}

fn maxout_in<T: Real>(z: &[T], mode: SamplingMode, rng: &mut RngStream) -> Result<Selection<T>> {
    if mode == SamplingMode::TrainSampleDropout {
        let keep = T::lit(1.0 - DROPOUT_MASS);
        if multinomial_draw(&[T::lit(DROPOUT_MASS), keep], rng)? == 0 {
            return Ok(dropped());
        }
    }
    Ok(pick(z, argmax(z)))
}

fn pick<T: Real>(z: &[T], i: usize) -> Selection<T> {
    Selection {
        choice: Choice::Unit(i),
        value: z[i],
    }
}

fn dropped<T: Real>() -> Selection<T> {
    Selection {
        choice: Choice::Dropped,
        value: T::zero(),
    }
}

/// Recomputes the output of a frozen choice on (possibly perturbed) responses.
pub fn replay<T: Real>(z: &[T], choice: Choice) -> Result<T> {
    match choice {
        Choice::Unit(i) if i < z.len() => Ok(z[i]),
        Choice::Unit(i) => Err(Error::Index { index: i, k: z.len() }),
        Choice::Dropped => Ok(T::zero()),
        Choice::Weighted => Err(Error::Mode(
            "probability-weighted passes carry no frozen choice".into(),
        )),
    }
}

/// Gradient with respect to `z`, treating the choice as a constant of the pass.
pub fn subspace_backward<T: Real>(grad_out: T, sel: &Selection<T>, k: usize) -> Result<Vec<T>> {
    let mut g = vec![T::zero(); k];
    route_gradient(grad_out, sel.choice, &mut g)?;
    Ok(g)
}

/// Adds `grad_out` into the chosen slot of `grad_z`.
pub(crate) fn route_gradient<T: Real>(grad_out: T, choice: Choice, grad_z: &mut [T]) -> Result<()> {
    match choice {
        Choice::Unit(i) if i < grad_z.len() => {
            grad_z[i] = grad_z[i] + grad_out;
            Ok(())
        }
        Choice::Unit(i) => Err(Error::Index {
            index: i,
            k: grad_z.len(),
        }),
        Choice::Dropped => Ok(()),
        Choice::Weighted => Err(Error::Mode(
            "no gradient routing for probability-weighted passes".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn acts(z: &[f64]) -> SubspaceActivations<f64> {
        SubspaceActivations::new(z.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn linear_subspace_identity_and_degenerate() {
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let z = linear_subspace(&[5.0, -3.0], &w, &[0.0, 0.0]).unwrap();
        assert_eq!(z.values(), &[5.0, -3.0]);

        let w1 = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let z1 = linear_subspace(&[1.0, 1.0, 1.0], &w1, &[0.5]).unwrap();
        assert_eq!(z1.values(), &[6.5]);
    }

    #[test]
    fn linear_subspace_matches_naive_rows() {
        let mut rng = RngStream::new(31, 0);
        let (k, d) = (5, 8);
        let w: Vec<f64> = (0..k * d).map(|_| rng.uniform() - 0.5).collect();
        let v: Vec<f64> = (0..d).map(|_| rng.uniform() - 0.5).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.uniform() - 0.5).collect();
        let z = linear_subspace(&v, &Tensor::new(vec![k, d], w.clone()).unwrap(), &b).unwrap();
        for i in 0..k {
            let naive: f64 = (0..d).map(|j| w[i * d + j] * v[j]).sum::<f64>() + b[i];
            assert!((z.values()[i] - naive).abs() < 1e-12);
        }
        assert!(linear_subspace(&v[..3], &Tensor::new(vec![k, d], w).unwrap(), &b).is_err());
    }

    #[test]
    fn rejects_empty_or_non_finite() {
        assert!(SubspaceActivations::<f64>::new(vec![]).is_err());
        assert!(SubspaceActivations::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn maxout_examples() {
        let s = maxout_forward(&acts(&[3.0, -1.0, 2.0]));
        assert_eq!((s.value, s.choice), (3.0, Choice::Unit(0)));
        assert_eq!(maxout_forward(&acts(&[2.0, 2.0])).choice, Choice::Unit(0));
        assert_eq!(maxout_forward(&acts(&[-5.0, -1.0])).value, -1.0);
    }

    #[test]
    fn boltzmann_examples() {
        for c in [-30.0, 0.0, 4.5] {
            for lambda in [0.1, 1.0, 7.0] {
                assert_eq!(boltzmann_probs(&acts(&[c, c]), lambda), vec![0.5, 0.5]);
            }
        }
        let p = boltzmann_probs(&acts(&[1.0, 2.0]), 1.0);
        assert!(close(&p, &[0.268941, 0.731059], 1e-6));
        let p = boltzmann_probs(&acts(&[0.0, 1000.0]), 1.0);
        assert!(p.iter().all(|x| x.is_finite()));
        assert!(p[0] < 1e-300 && (p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dropout_examples() {
        assert_eq!(dropout_probs(&acts(&[0.0, 0.0]), 1.0), vec![0.5, 0.25, 0.25]);
        let p = dropout_probs(&acts(&[1.0, 2.0]), 1.0);
        assert!(close(&p, &[0.5, 0.134471, 0.365529], 1e-6));
        assert_eq!(p[0].to_bits(), 0.5f64.to_bits());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(inference_rescale(&[0.5, 0.25, 0.25]).unwrap(), vec![0.5, 0.5]);
        let p = inference_rescale(&[0.5, 0.134471, 0.365529]).unwrap();
        assert!(close(&p, &[0.268942, 0.731058], 1e-6));
        assert!(matches!(
            inference_rescale(&[1.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn prob_weight_examples() {
        assert!((probability_weighted_value(&acts(&[2.5, 2.5]), 3.0) - 2.5).abs() < 1e-15);
        let v = probability_weighted_value(&acts(&[1.0, 2.0]), 1.0);
        assert!((v - 1.731059).abs() < 1e-6);
        let v = probability_weighted_value(&acts(&[0.0, 1.0]), 1e6);
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn large_lambda_selects_max() {
        let cfg = ProboutConfig::new(1e6, SamplingMode::TrainSample).unwrap();
        let z = acts(&[0.0, 1.0]);
        let mut rng = RngStream::new(12, 0);
        for _ in 0..100_000 {
            assert_eq!(probout_select(&z, &cfg, &mut rng).unwrap().choice, Choice::Unit(1));
        }
    }

    #[test]
    fn dropout_frequency_is_half() {
        let cfg = ProboutConfig::new(1.3, SamplingMode::TrainSampleDropout).unwrap();
        let z = acts(&[0.4, -1.0, 2.0]);
        let mut rng = RngStream::new(99, 0);
        let n = 100_000;
        let mut dropped = 0;
        for _ in 0..n {
            let s = probout_select(&z, &cfg, &mut rng).unwrap();
            match s.choice {
                Choice::Dropped => {
                    assert_eq!(s.value, 0.0);
                    dropped += 1;
                }
                Choice::Unit(i) => assert_eq!(s.value, z.values()[i]),
                Choice::Weighted => unreachable!(),
            }
        }
        let f = dropped as f64 / n as f64;
        assert!((f - 0.5).abs() <= 0.0063, "dropout frequency {f}");
    }

    #[test]
    fn sampled_frequencies_match_boltzmann() {
        let cfg = ProboutConfig::new(1.0, SamplingMode::TrainSample).unwrap();
        let z = acts(&[1.0, 2.0]);
        let p = boltzmann_probs(&z, 1.0);
        let mut rng = RngStream::new(4242, 0);
        let n = 100_000;
        let mut counts = [0usize; 2];
        for _ in 0..n {
            if let Choice::Unit(i) = probout_select(&z, &cfg, &mut rng).unwrap().choice {
                counts[i] += 1;
            }
        }
        for i in 0..2 {
            let sigma = (p[i] * (1.0 - p[i]) / n as f64).sqrt();
            assert!((counts[i] as f64 / n as f64 - p[i]).abs() <= 4.0 * sigma);
        }
    }

    #[test]
    fn prob_weight_mode_is_rejected() {
        let cfg = ProboutConfig::new(1.0, SamplingMode::InferProbWeight).unwrap();
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(
            probout_select(&acts(&[1.0]), &cfg, &mut rng),
            Err(Error::Mode(_))
        ));
        assert!(ProboutConfig::new(0.0, SamplingMode::TrainSample).is_err());
        assert!(ProboutConfig::new(-1.0, SamplingMode::TrainSample).is_err());
    }

    #[test]
    fn each_stochastic_mode_consumes_one_draw() {
        let z = acts(&[0.3, 0.1, -0.2]);
        for mode in [
            SamplingMode::TrainSample,
            SamplingMode::TrainSampleDropout,
            SamplingMode::InferSample,
        ] {
            let cfg = ProboutConfig::new(2.0, mode).unwrap();
            let mut a = RngStream::new(5, 5);
            let mut b = a.clone();
            probout_select(&z, &cfg, &mut a).unwrap();
            b.uniform();
            assert_eq!(a.uniform(), b.uniform());
        }
    }

    #[test]
    fn backward_examples() {
        let sel = Selection {
            choice: Choice::Unit(1),
            value: 0.0,
        };
        assert_eq!(subspace_backward(2.5, &sel, 3).unwrap(), vec![0.0, 2.5, 0.0]);
        let drop = Selection {
            choice: Choice::Dropped,
            value: 0.0,
        };
        assert_eq!(subspace_backward(2.5, &drop, 3).unwrap(), vec![0.0; 3]);
        let bad = Selection {
            choice: Choice::Unit(3),
            value: 0.0,
        };
        assert!(matches!(subspace_backward(1.0, &bad, 3), Err(Error::Index { .. })));
    }

    #[test]
    fn backward_matches_finite_differences_with_frozen_choice() {
        // loss = c * h(z(v)) with z = W v + b and the selection frozen.
        let mut rng = RngStream::new(17, 0);
        let (k, d) = (4, 6);
        let w: Vec<f64> = (0..k * d).map(|_| rng.uniform() - 0.5).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.uniform() - 0.5).collect();
        let v: Vec<f64> = (0..d).map(|_| rng.uniform() - 0.5).collect();
        let c = 1.7;
        let cfg = ProboutConfig::new(1.0, SamplingMode::TrainSample).unwrap();
        let z = linear_subspace(&v, &Tensor::new(vec![k, d], w.clone()).unwrap(), &b).unwrap();
        let sel = probout_select(&z, &cfg, &mut rng).unwrap();
        let grad_z = subspace_backward(c, &sel, k).unwrap();

        let loss = |w: &[f64]| {
            let z = affine(&Tensor::new(vec![k, d], w.to_vec()).unwrap(), &v, &b).unwrap();
            c * replay(&z, sel.choice).unwrap()
        };
        let h = 1e-5;
        for idx in 0..k * d {
            let analytic = grad_z[idx / d] * v[idx % d];
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[idx] += h;
            wm[idx] -= h;
            let numeric = (loss(&wp) - loss(&wm)) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-7);
            assert!((analytic - numeric).abs() / denom < 1e-6, "w[{idx}]");
        }
    }

    #[test]
    fn k_one_degeneracy() {
        let z = acts(&[-0.7]);
        let mut rng = RngStream::new(1, 0);
        assert_eq!(maxout_forward(&z).value, -0.7);
        assert_eq!(probability_weighted_value(&z, 0.1), -0.7);
        for lambda in [0.1, 1.0, 1e6] {
            let cfg = ProboutConfig::new(lambda, SamplingMode::InferSample).unwrap();
            assert_eq!(probout_select(&z, &cfg, &mut rng).unwrap().value, -0.7);
        }
    }

    #[test]
    fn maxout_dropout_mode() {
        let z = acts(&[1.0, 3.0]);
        let mut rng = RngStream::new(8, 0);
        let n = 100_000;
        let dropped = (0..n)
            .filter(|_| {
                maxout_select(&z, SamplingMode::TrainSampleDropout, &mut rng)
                    .unwrap()
                    .choice
                    == Choice::Dropped
            })
            .count();
        assert!((dropped as f64 / n as f64 - 0.5).abs() <= 0.0063);
        let s = maxout_select(&z, SamplingMode::InferSample, &mut rng).unwrap();
        assert_eq!(s.choice, Choice::Unit(1));
    }

    proptest! {
        #[test]
        fn shift_invariance(z in prop::collection::vec(-10.0f64..10.0, 1..6), c in -50.0f64..50.0, lambda in 0.05f64..5.0) {
            let a = boltzmann_probs(&acts(&z), lambda);
            let shifted: Vec<f64> = z.iter().map(|x| x + c).collect();
            let b = boltzmann_probs(&acts(&shifted), lambda);
            prop_assert!(close(&a, &b, 1e-12));
        }

        #[test]
        fn scale_temperature_duality(z in prop::collection::vec(-10.0f64..10.0, 1..6), s in 0.1f64..10.0, lambda in 0.05f64..5.0) {
            let scaled: Vec<f64> = z.iter().map(|x| x * s).collect();
            let a = boltzmann_probs(&acts(&scaled), lambda);
            let b = boltzmann_probs(&acts(&z), s * lambda);
            prop_assert!(close(&a, &b, 1e-12));
        }

        #[test]
        fn rescale_composes_to_boltzmann(z in prop::collection::vec(-10.0f64..10.0, 1..8), lambda in 0.05f64..5.0) {
            let z = acts(&z);
            let r = inference_rescale(&dropout_probs(&z, lambda)).unwrap();
            prop_assert!(close(&r, &boltzmann_probs(&z, lambda), 1e-12));
        }

        #[test]
        fn dropout_mass_exact(z in prop::collection::vec(-100.0f64..100.0, 1..8), lambda in 0.01f64..100.0) {
            let p = dropout_probs(&acts(&z), lambda);
            prop_assert_eq!(p[0].to_bits(), 0.5f64.to_bits());
        }

        #[test]
        fn maxout_limit_mass(z in prop::collection::vec(-5.0f64..5.0, 2..6), lambda in 0.1f64..20.0) {
            let mut sorted = z.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let gap = sorted[0] - sorted[1];
            prop_assume!(gap > 0.0);
            let zz = acts(&z);
            let p = boltzmann_probs(&zz, lambda);
            let top = match maxout_forward(&zz).choice { Choice::Unit(i) => i, _ => unreachable!() };
            let bound = 1.0 - (z.len() as f64 - 1.0) * (-lambda * gap).exp();
            prop_assert!(p[top] >= bound - 1e-12);
        }
    }
}
