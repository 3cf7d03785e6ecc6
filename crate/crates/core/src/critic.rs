//! Twin omega-conditioned critics with target networks: clipped double-Q
//! targets with smoothing noise on both the target action and omega.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{soft_update, AdamState, Mlp, OutputActivation};
use crate::replay::Batch;
use crate::types::UncertaintyBox;

/// Clipped Gaussian smoothing for target actions and omegas. Deviations
/// and clip radii are per dimension, in environment units.
#[derive(Debug, Clone, PartialEq)]
pub struct Smoothing {
    pub action_std: Vec<f64>,
    pub action_clip: Vec<f64>,
    pub omega_std: Vec<f64>,
    pub omega_clip: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticLoss {
    pub q1: f64,
    pub q2: Option<f64>,
}

impl CriticLoss {
    pub fn mean(&self) -> f64 {
        match self.q2 {
            Some(q2) => 0.5 * (self.q1 + q2),
            None => self.q1,
        }
    }
}

/// Row-wise concatenation `[s | a | omega]` (omega omitted when `None`).
pub fn critic_input(
    states: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
    omegas: Option<ArrayView2<'_, f64>>,
) -> Array2<f64> {
    match omegas {
        Some(w) => concatenate(Axis(1), &[states.view(), actions.view(), w.view()]),
        None => concatenate(Axis(1), &[states.view(), actions.view()]),
    }
    .expect("batch rows agree")
}

/// Mean squared TD error of `q` on `input` against constant targets `y`,
/// with its parameter gradient.
pub fn mse_loss_and_grad(q: &Mlp, input: ArrayView2<'_, f64>, y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if input.nrows() != y.len() {
        return Err(Error::contract(format!(
            "{} critic inputs but {} targets",
            input.nrows(),
            y.len()
        )));
    }
    let (out, tape) = q.forward_batch(input)?;
    let m = y.len() as f64;
    let diff: Vec<f64> = out.column(0).iter().zip(y).map(|(q, y)| q - y).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / m;
    let grad_out = Array2::from_shape_fn((y.len(), 1), |(i, _)| 2.0 * diff[i] / m);
    let (grads, _) = q.backward(&tape, grad_out.view())?;
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct CriticEnsemble {
    pub q1: Mlp,
    pub q1_target: Mlp,
    /// Second critic; absent in single-critic (DDPG-style) mode.
    pub q2: Option<Mlp>,
    pub q2_target: Option<Mlp>,
    opt1: AdamState,
    opt2: Option<AdamState>,
    sees_omega: bool,
    action_box: UncertaintyBox,
    omega_box: UncertaintyBox,
}

impl CriticEnsemble {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_box: UncertaintyBox,
        omega_box: UncertaintyBox,
        hidden: &[usize],
        twin: bool,
        sees_omega: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let in_dim = state_dim + action_box.dim() + if sees_omega { omega_box.dim() } else { 0 };
        let mut widths = vec![in_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let q1 = Mlp::init(widths.clone(), OutputActivation::Identity, 1.0, rng)?;
        let q2 = if twin {
            Some(Mlp::init(widths, OutputActivation::Identity, 1.0, rng)?)
        } else {
            None
        };
        Self::from_networks(q1, q2, action_box, omega_box, sees_omega)
    }

    /// Assembles an ensemble from given online critics; targets start as
    /// copies.
    pub fn from_networks(
        q1: Mlp,
        q2: Option<Mlp>,
        action_box: UncertaintyBox,
        omega_box: UncertaintyBox,
        sees_omega: bool,
    ) -> Result<Self> {
        if let Some(q2) = &q2 {
            if !q1.same_shape(q2) {
                return Err(Error::contract("twin critics must share an architecture"));
            }
        }
        if q1.output_dim() != 1 {
            return Err(Error::contract("critic must have a single output"));
        }
        Ok(Self {
            opt1: AdamState::new(q1.n_params()),
            opt2: q2.as_ref().map(|q| AdamState::new(q.n_params())),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            sees_omega,
            action_box,
            omega_box,
        })
    }

    pub fn sees_omega(&self) -> bool {
        self.sees_omega
    }

    pub fn is_twin(&self) -> bool {
        self.q2.is_some()
    }

    pub fn input_dim(&self) -> usize {
        self.q1.input_dim()
    }

    fn omega_view<'a>(&self, omegas: ArrayView2<'a, f64>) -> Option<ArrayView2<'a, f64>> {
        self.sees_omega.then_some(omegas)
    }

    /// TD targets `y_i = r_i + gamma (1 - h_i) min_j Q'_j(s'_i, a~_i, omega~_i)`.
    /// Without `smoothing` the target action is the plain target-policy
    /// action and omega is used as stored.
    pub fn compute_targets<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        actor_target: &Mlp,
        gamma: f64,
        smoothing: Option<&Smoothing>,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if let Some(i) = batch
            .omegas
            .rows()
            .into_iter()
            .position(|w| !self.omega_box.contains(w.as_slice().expect("contiguous")))
        {
            return Err(Error::contract(format!("batch omega at index {i} outside the uncertainty set")));
        }
        let mut next_actions = actor_target.predict_batch(batch.next_states.view())?;
        let mut omegas = batch.omegas.clone();
        if let Some(sm) = smoothing {
            perturb(&mut next_actions, &sm.action_std, &sm.action_clip, &self.action_box, rng);
            if self.sees_omega {
                perturb(&mut omegas, &sm.omega_std, &sm.omega_clip, &self.omega_box, rng);
            }
        }
        let input = critic_input(
            batch.next_states.view(),
            next_actions.view(),
            self.omega_view(omegas.view()),
        );
        let q1 = self.q1_target.predict_batch(input.view())?;
        let q2 = match &self.q2_target {
            Some(q) => Some(q.predict_batch(input.view())?),
            None => None,
        };
        let mut y = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let q = match &q2 {
                Some(q2) => q1[[i, 0]].min(q2[[i, 0]]),
                None => q1[[i, 0]],
            };
            let target = if batch.dones[i] != 0.0 {
                batch.rewards[i]
            } else {
                batch.rewards[i] + gamma * q
            };
            if !target.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("TD target at batch index {i}"),
                });
            }
            y.push(target);
        }
        Ok(y)
    }

    /// One Adam step per critic on the mean squared error against `y`.
    pub fn update(&mut self, batch: &Batch, y: &[f64], lr: f64) -> Result<CriticLoss> {
        let input = critic_input(
            batch.states.view(),
            batch.actions.view(),
            self.omega_view(batch.omegas.view()),
        );
        let l1 = step_critic(&mut self.q1, &mut self.opt1, input.view(), y, lr)?;
        let l2 = match (&mut self.q2, &mut self.opt2) {
            (Some(q), Some(opt)) => Some(step_critic(q, opt, input.view(), y, lr)?),
            _ => None,
        };
        Ok(CriticLoss { q1: l1, q2: l2 })
    }

    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        soft_update(&mut self.q1_target, &self.q1, tau)?;
        if let (Some(t), Some(q)) = (&mut self.q2_target, &self.q2) {
            soft_update(t, q, tau)?;
        }
        Ok(())
    }
}

fn step_critic(q: &mut Mlp, opt: &mut AdamState, input: ArrayView2<'_, f64>, y: &[f64], lr: f64) -> Result<f64> {
    let (loss, grads) = mse_loss_and_grad(q, input, y)?;
    if !loss.is_finite() {
        return Err(Error::UpdateSkipped {
            what: "critic loss".into(),
        });
    }
    opt.step(q.params_mut(), &grads, lr)?;
    Ok(loss)
}

/// Adds `clamp(N(0, std^2), -clip, clip)` to every entry and projects each
/// row back into `bounds`.
pub fn perturb<R: Rng + ?Sized>(values: &mut Array2<f64>, std: &[f64], clip: &[f64], bounds: &UncertaintyBox, rng: &mut R) {
    let (lo, hi) = (bounds.lower(), bounds.upper());
    for mut row in values.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            let noise = (std[j] * rng.sample::<f64, _>(StandardNormal)).clamp(-clip[j], clip[j]);
            *v = (*v + noise).clamp(lo[j], hi[j]);
        }
    }
}
