//! Central finite-difference verification of [`Network::backward`].
//!
//! The scalar under test is `f(θ) = Σ c ⊙ Q(x; θ)` for a fixed output
//! weighting `c`. Each probe perturbs one parameter tensor along a unit
//! direction `d` and compares `⟨∇f, d⟩` against
//! `(f(θ + h·d) − f(θ − h·d)) / 2h`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{Mode, NetInputs, Network};
use crate::tensor::{Scalar, Tensor};

/// One probe: a direction inside a single parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamProbe<T: Scalar> {
    pub param: usize,
    pub direction: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub probes: usize,
}

/// `count` random unit directions, cycling through every parameter tensor
/// so each one is probed.
pub fn random_probes<T: Scalar, R: Rng + ?Sized>(
    net: &Network<T>,
    count: usize,
    rng: &mut R,
) -> Vec<ParamProbe<T>> {
    let shapes: Vec<Vec<usize>> = net.params().iter().map(|t| t.shape().to_vec()).collect();
    if shapes.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|k| {
            let param = k % shapes.len();
            let n: usize = shapes[param].iter().product();
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = raw
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            let direction = Tensor::from_f64_slice(
                &shapes[param],
                &raw.iter().map(|v| v / norm).collect::<Vec<_>>(),
            )
            .expect("shape taken from parameter");
            ParamProbe { param, direction }
        })
        .collect()
}

/// Worst relative error between analytic and central-difference directional
/// derivatives over `probes`.
///
/// In [`Mode::Train`] every evaluation reuses the same dropout seed, so the
/// mask is fixed across the perturbed evaluations.
pub fn gradient_check<T: Scalar>(
    net: &Network<T>,
    inputs: &NetInputs<T>,
    output_weights: &Tensor<T>,
    probes: &[ParamProbe<T>],
    step: T,
    mode: Mode,
) -> Result<GradCheckReport> {
    const MASK_SEED: u64 = 0x5eed;
    let objective = |n: &Network<T>| -> Result<T> {
        let acts = n.forward(inputs, mode, &mut ChaCha8Rng::seed_from_u64(MASK_SEED))?;
        Ok(acts
            .output()
            .data()
            .iter()
            .zip(output_weights.data())
            .map(|(&q, &c)| q * c)
            .sum())
    };

    let acts = net.forward(inputs, mode, &mut ChaCha8Rng::seed_from_u64(MASK_SEED))?;
    let grads = net.backward(&acts, output_weights)?;
    let floor = T::epsilon().sqrt().to_f64() * 1e-2;

    let mut worst = 0.0f64;
    let mut shifted = net.clone();
    for probe in probes {
        let base = net.params()[probe.param].clone();
        if probe.direction.shape() != base.shape() {
            return Err(Error::Shape(format!(
                "probe direction {:?} does not match parameter {} {:?}",
                probe.direction.shape(),
                probe.param,
                base.shape()
            )));
        }
        let analytic: T = grads.tensors[probe.param]
            .data()
            .iter()
            .zip(probe.direction.data())
            .map(|(&g, &d)| g * d)
            .sum();

        let mut eval_at = |sign: T| -> Result<T> {
            let target = &mut *shifted.params_mut()[probe.param];
            for ((dst, &b), &d) in target
                .data_mut()
                .iter_mut()
                .zip(base.data())
                .zip(probe.direction.data())
            {
                *dst = b + sign * step * d;
            }
            objective(&shifted)
        };
        let plus = eval_at(T::one())?;
        let minus = eval_at(-T::one())?;
        *shifted.params_mut()[probe.param] = base;

        let numeric = (plus - minus) / (step + step);
        let (a, n) = (analytic.to_f64(), numeric.to_f64());
        let denom = a.abs().max(n.abs()).max(floor);
        worst = worst.max((a - n).abs() / denom);
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        probes: probes.len(),
    })
}
