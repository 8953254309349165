//! RMSprop updates and the squared Q-learning loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_RHO: f64 = 0.95;
pub const DEFAULT_EPS: f64 = 1e-6;

/// Running mean of squared gradients, one accumulator per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState<T: Scalar = f32> {
    pub mean_square: Vec<Tensor<T>>,
    pub config: RmsPropConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub eps: f64,
}

impl RmsPropConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            rho: DEFAULT_RHO,
            eps: DEFAULT_EPS,
        }
    }
}

impl<T: Scalar> RmsPropState<T> {
    /// Zeroed accumulators mirroring `params`.
    pub fn new(params: &[&Tensor<T>], config: RmsPropConfig) -> Self {
        Self {
            mean_square: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            config,
        }
    }
}

/// One elementwise RMSprop step:
///
/// ```text
/// acc   ← ρ·acc + (1 − ρ)·g²
/// param ← param − lr·g / sqrt(acc + eps)
/// ```
pub fn rmsprop_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut RmsPropState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.mean_square.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} accumulators",
            params.len(),
            grads.len(),
            state.mean_square.len()
        )));
    }
    for (i, ((p, g), acc)) in params.iter().zip(grads).zip(&state.mean_square).enumerate() {
        if p.shape() != g.shape() || p.shape() != acc.shape() {
            return Err(Error::Shape(format!(
                "tensor {i}: param {:?}, grad {:?}, accumulator {:?}",
                p.shape(),
                g.shape(),
                acc.shape()
            )));
        }
    }
    let rho = T::from_f64(state.config.rho);
    let one_minus_rho = T::from_f64(1.0 - state.config.rho);
    let lr = T::from_f64(state.config.learning_rate);
    let eps = T::from_f64(state.config.eps);
    for ((p, g), acc) in params
        .iter_mut()
        .zip(grads)
        .zip(state.mean_square.iter_mut())
    {
        for ((w, &gi), a) in p.data_mut().iter_mut().zip(g.data()).zip(acc.data_mut()) {
            *a = rho * *a + one_minus_rho * gi * gi;
            *w = *w - lr * gi / (*a + eps).sqrt();
        }
    }
    Ok(())
}

/// Mean squared error between `targets` and the Q-values of the taken
/// actions, plus its gradient with respect to every Q-value.
///
/// Non-chosen entries receive zero gradient.
pub fn q_loss_grad<T: Scalar>(
    q_values: &Tensor<T>,
    actions: &[usize],
    targets: &[T],
) -> Result<(f64, Tensor<T>)> {
    let [batch, n_actions] = match q_values.shape() {
        [b, a] => [*b, *a],
        other => {
            return Err(Error::Shape(format!(
                "q-values must be [batch, actions], got {other:?}"
            )))
        }
    };
    if actions.len() != batch || targets.len() != batch {
        return Err(Error::Shape(format!(
            "batch {batch} but {} actions and {} targets",
            actions.len(),
            targets.len()
        )));
    }
    let mut grad = Tensor::zeros(&[batch, n_actions]);
    let scale = T::from_f64(-2.0 / batch as f64);
    let mut loss = 0.0;
    for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        if a >= n_actions {
            return Err(Error::ActionOutOfRange {
                action: a,
                actions: n_actions,
            });
        }
        let diff = y - q_values.data()[i * n_actions + a];
        loss += diff.to_f64() * diff.to_f64();
        grad.data_mut()[i * n_actions + a] = scale * diff;
    }
    Ok((loss / batch as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> RmsPropConfig {
        RmsPropConfig::with_learning_rate(0.0002)
    }

    #[test]
    fn zero_gradient_decays_accumulator_only() {
        let mut p = Tensor::<f64>::vector(vec![1.0, -2.0]);
        let mut state = RmsPropState::new(&[&p], cfg());
        state.mean_square[0] = Tensor::vector(vec![0.5, 2.0]);
        rmsprop_step(&mut [&mut p], &[Tensor::zeros(&[2])], &mut state).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(state.mean_square[0].data(), &[0.5 * 0.95, 2.0 * 0.95]);
    }

    #[test]
    fn first_step_magnitude() {
        let mut p = Tensor::<f64>::vector(vec![0.0]);
        let mut state = RmsPropState::new(&[&p], cfg());
        rmsprop_step(&mut [&mut p], &[Tensor::vector(vec![1.0])], &mut state).unwrap();
        let expected = 0.0002 / (0.05f64 + 1e-6).sqrt();
        assert!((p.data()[0] + expected).abs() < 1e-15);
        assert!((expected - 8.94e-4).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::<f64>::vector(vec![0.0, 1.0]);
        let mut state = RmsPropState::new(&[&p], cfg());
        let err = rmsprop_step(&mut [&mut p], &[Tensor::vector(vec![1.0])], &mut state);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let q = Tensor::from_f64_slice(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let (loss, g) = q_loss_grad(&q, &[1, 0], &[2.0, 3.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_differentiated_loss() {
        let q = Tensor::<f64>::zeros(&[1, 2]);
        let (loss, g) = q_loss_grad(&q, &[0], &[2.0]).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(g.data(), &[-4.0, 0.0]);
    }

    #[test]
    fn action_out_of_range() {
        let q = Tensor::<f64>::zeros(&[1, 2]);
        assert!(matches!(
            q_loss_grad(&q, &[2], &[0.0]),
            Err(Error::ActionOutOfRange { .. })
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let q = Tensor::from_f64_slice(&[3, 3], &[0.1, -0.4, 2.0, 1.5, 0.3, -0.7, 0.0, 0.9, 0.2])
            .unwrap();
        let actions = [2, 0, 1];
        let targets = [1.0, -0.5, 0.25];
        let (_, g) = q_loss_grad(&q, &actions, &targets).unwrap();
        let h = 1e-6;
        for k in 0..q.len() {
            let mut up = q.clone();
            up.data_mut()[k] += h;
            let mut down = q.clone();
            down.data_mut()[k] -= h;
            let fd = (q_loss_grad(&up, &actions, &targets).unwrap().0
                - q_loss_grad(&down, &actions, &targets).unwrap().0)
                / (2.0 * h);
            let a = g.data()[k];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
            assert!(
                a == 0.0 && fd.abs() < 1e-9 || err < 1e-8,
                "entry {k}: {a} vs {fd}"
            );
        }
    }

    proptest! {
        #[test]
        fn step_opposes_gradient(g in prop::collection::vec(-10.0f64..10.0, 1..16), acc0 in 0.0f64..4.0) {
            let n = g.len();
            let mut p = Tensor::<f64>::zeros(&[n]);
            let mut state = RmsPropState::new(&[&p], cfg());
            state.mean_square[0].fill(acc0);
            rmsprop_step(&mut [&mut p], &[Tensor::vector(g.clone())], &mut state).unwrap();
            for (w, gi) in p.data().iter().zip(&g) {
                prop_assert!(*gi == 0.0 && *w == 0.0 || w.signum() == -gi.signum());
            }
            prop_assert!(state.mean_square[0].data().iter().all(|&a| a >= 0.0));
        }

        #[test]
        fn loss_nonnegative(q in prop::collection::vec(-5.0f64..5.0, 4), t in prop::collection::vec(-5.0f64..5.0, 2)) {
            let q = Tensor::from_f64_slice(&[2, 2], &q).unwrap();
            let (loss, _) = q_loss_grad(&q, &[0, 1], &t).unwrap();
            prop_assert!(loss >= 0.0);
        }
    }
}
