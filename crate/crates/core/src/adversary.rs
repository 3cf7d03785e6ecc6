//! Worst-case candidates and the simultaneous ascent-descent update of the
//! policy and the candidate omegas.
//!
//! The policy objective for a candidate `w` is the batch mean
//! `J(theta, w) = 1/M sum_i Q(s_i, mu_theta(s_i), w)`. The policy ascends
//! `J` at the worst candidate (or a frequency-weighted mixture in the soft
//! variant) while that candidate descends `J`, both from the same point.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::critic::critic_input;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Mlp};
use crate::types::UncertaintyBox;

/// How gradient steps are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    Adam,
    /// Plain `x +/- lr * grad`; used by the oracle tests.
    Plain,
}

/// Which side of the max-min game moves in a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Movers {
    Both,
    PolicyOnly,
    AdversaryOnly,
}

#[derive(Debug, Clone)]
pub struct AdversaryState {
    omegas: Vec<Vec<f64>>,
    p: Vec<f64>,
    pub d_thre: f64,
    pub p_thre: f64,
    t_last: u64,
    opts: Vec<AdamState>,
    omega_box: UncertaintyBox,
}

impl AdversaryState {
    /// `n` candidates drawn uniformly from the box with equal frequencies.
    pub fn new<R: Rng + ?Sized>(
        n: usize,
        omega_box: UncertaintyBox,
        d_thre: f64,
        p_thre: f64,
        t_last: u64,
        rng: &mut R,
    ) -> Result<Self> {
        let omegas = (0..n).map(|_| omega_box.sample_uniform(rng)).collect();
        Self::from_parts(omegas, vec![1.0 / n as f64; n], omega_box, d_thre, p_thre, t_last)
    }

    pub fn from_parts(
        omegas: Vec<Vec<f64>>,
        p: Vec<f64>,
        omega_box: UncertaintyBox,
        d_thre: f64,
        p_thre: f64,
        t_last: u64,
    ) -> Result<Self> {
        if omegas.is_empty() || omegas.len() != p.len() {
            return Err(Error::contract(format!(
                "need >= 1 candidate and one frequency each, got {} and {}",
                omegas.len(),
                p.len()
            )));
        }
        if let Some(w) = omegas.iter().find(|w| !omega_box.contains(w)) {
            return Err(Error::contract(format!("candidate {w:?} outside the uncertainty set")));
        }
        let sum: f64 = p.iter().sum();
        if p.iter().any(|v| *v < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("frequencies {p:?} are not on the simplex")));
        }
        if t_last == 0 {
            return Err(Error::contract("t_last must be >= 1"));
        }
        let dim = omega_box.dim();
        Ok(Self {
            opts: vec![AdamState::new(dim); omegas.len()],
            omegas,
            p,
            d_thre,
            p_thre,
            t_last,
            omega_box,
        })
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn omegas(&self) -> &[Vec<f64>] {
        &self.omegas
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.p
    }

    pub fn t_last(&self) -> u64 {
        self.t_last
    }

    /// Records the length of the episode that just ended.
    pub fn set_t_last(&mut self, steps: u64) {
        self.t_last = steps.max(1);
    }

    pub fn omega_box(&self) -> &UncertaintyBox {
        &self.omega_box
    }

    /// Resamples candidate `k` if it lies within `d_thre` (l1) of a lower
    /// index candidate kept in this pass, or if `p_k <= p_thre`. Resampled
    /// candidates get fresh optimizer moments. Returns the refreshed mask.
    pub fn refresh_candidates<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<bool> {
        let n = self.omegas.len();
        let mut refreshed = vec![false; n];
        for k in 0..n {
            let crowded = (0..k).any(|l| !refreshed[l] && l1(&self.omegas[k], &self.omegas[l]) <= self.d_thre);
            let rare = self.p[k] <= self.p_thre;
            if crowded || rare {
                self.omegas[k] = self.omega_box.sample_uniform(rng);
                self.opts[k].reset();
                refreshed[k] = true;
            }
        }
        refreshed
    }

    /// Exponential moving average of "was the worst" with momentum
    /// `1 / t_last`; refreshed entries restart at `1 / N`; then renormalize.
    pub fn update_frequencies(&mut self, worst: usize, refreshed: &[bool]) -> Result<()> {
        let n = self.p.len();
        if worst >= n || refreshed.len() != n {
            return Err(Error::contract(format!(
                "worst index {worst} / mask length {} invalid for {n} candidates",
                refreshed.len()
            )));
        }
        let rate = 1.0 / self.t_last as f64;
        for k in 0..n {
            self.p[k] = if refreshed[k] {
                1.0 / n as f64
            } else {
                let hit = if k == worst { 1.0 } else { 0.0 };
                (1.0 - rate) * self.p[k] + rate * hit
            };
        }
        let sum: f64 = self.p.iter().sum();
        self.p.iter_mut().for_each(|v| *v /= sum);
        Ok(())
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Value and input gradients of `1/M sum_i Q(s_i, a_i, w)` for a fixed
/// action batch; `omega = None` for an omega-blind critic.
pub struct CriticProbe {
    pub value: f64,
    /// dJ/da, one row per sample.
    pub action_grad: Array2<f64>,
    /// dJ/dw (empty for omega-blind critics).
    pub omega_grad: Vec<f64>,
}

pub fn probe_critic(
    states: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
    critic: &Mlp,
    omega: Option<&[f64]>,
) -> Result<CriticProbe> {
    let m = states.nrows();
    let (sd, ad) = (states.ncols(), actions.ncols());
    let omegas = omega.map(|w| broadcast_rows(w, m));
    let input = critic_input(states, actions, omegas.as_ref().map(|w| w.view()));
    let (q, tape) = critic.forward_batch(input.view())?;
    let value = q.sum() / m as f64;
    let seed = Array2::from_elem((m, 1), 1.0 / m as f64);
    let (_, input_grad) = critic.backward(&tape, seed.view())?;
    let action_grad = input_grad.slice(ndarray::s![.., sd..sd + ad]).to_owned();
    let omega_grad = if omega.is_some() {
        input_grad
            .slice(ndarray::s![.., sd + ad..])
            .sum_axis(Axis(0))
            .to_vec()
    } else {
        Vec::new()
    };
    Ok(CriticProbe {
        value,
        action_grad,
        omega_grad,
    })
}

fn broadcast_rows(w: &[f64], m: usize) -> Array2<f64> {
    Array2::from_shape_fn((m, w.len()), |(_, j)| w[j])
}

/// Batch-mean critic values of every candidate under the current policy.
pub fn candidate_values(states: ArrayView2<'_, f64>, actor: &Mlp, critic: &Mlp, adv: &AdversaryState) -> Result<Vec<f64>> {
    let actions = actor.predict_batch(states)?;
    adv.omegas
        .iter()
        .map(|w| {
            let input = critic_input(states, actions.view(), Some(broadcast_rows(w, states.nrows()).view()));
            Ok(critic.predict_batch(input.view())?.mean().unwrap_or(f64::NAN))
        })
        .collect()
}

/// Index of the candidate with the smallest batch-mean value; ties go to
/// the lowest index.
pub fn select_worst(states: ArrayView2<'_, f64>, actor: &Mlp, critic: &Mlp, adv: &AdversaryState) -> Result<usize> {
    if states.nrows() == 0 {
        return Err(Error::contract("select_worst needs a nonempty batch"));
    }
    let values = candidate_values(states, actor, critic, adv)?;
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: format!("critic value of candidate {k}"),
            });
        }
        if *v < values[best] {
            best = k;
        }
    }
    Ok(best)
}

/// Gradients of one max-min step, evaluated at the current point.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGrads {
    /// Candidate that descends.
    pub worst: usize,
    /// d(policy objective)/d(theta).
    pub policy: Vec<f64>,
    /// dJ(theta, w_worst)/d(w_worst).
    pub omega: Vec<f64>,
    /// Policy objective value.
    pub value: f64,
}

/// Hard max-min gradients: the policy objective is `J(theta, w_worst)`.
pub fn maximin_grads(
    states: ArrayView2<'_, f64>,
    actor: &Mlp,
    critic: &Mlp,
    adv: &AdversaryState,
    worst: usize,
) -> Result<StepGrads> {
    check_worst(adv, worst)?;
    let (actions, tape) = actor.forward_batch(states)?;
    let probe = probe_critic(states, actions.view(), critic, Some(&adv.omegas[worst]))?;
    let (policy, _) = actor.backward(&tape, probe.action_grad.view())?;
    Ok(StepGrads {
        worst,
        policy,
        omega: probe.omega_grad,
        value: probe.value,
    })
}

/// Soft-min gradients: the policy objective is `sum_k p_k J(theta, w_k)`;
/// the worst candidate still descends its own `J`.
pub fn soft_grads(
    states: ArrayView2<'_, f64>,
    actor: &Mlp,
    critic: &Mlp,
    adv: &AdversaryState,
    worst: usize,
) -> Result<StepGrads> {
    check_worst(adv, worst)?;
    let (actions, tape) = actor.forward_batch(states)?;
    let mut mixed: Option<Array2<f64>> = None;
    let mut value = 0.0;
    let mut omega = Vec::new();
    for (k, (w, pk)) in adv.omegas.iter().zip(&adv.p).enumerate() {
        if *pk == 0.0 && k != worst {
            continue;
        }
        let probe = probe_critic(states, actions.view(), critic, Some(w))?;
        if k == worst {
            omega = probe.omega_grad;
        }
        if *pk == 0.0 {
            continue;
        }
        value += pk * probe.value;
        match &mut mixed {
            None => mixed = Some(probe.action_grad * *pk),
            Some(acc) => acc.scaled_add(*pk, &probe.action_grad),
        }
    }
    let mixed = mixed.ok_or_else(|| Error::contract("all mixture weights are zero"))?;
    let (policy, _) = actor.backward(&tape, mixed.view())?;
    Ok(StepGrads {
        worst,
        policy,
        omega,
        value,
    })
}

/// Omega-blind policy gradient of `1/M sum_i Q(s_i, mu_theta(s_i))`.
pub fn blind_policy_grads(states: ArrayView2<'_, f64>, actor: &Mlp, critic: &Mlp) -> Result<(f64, Vec<f64>)> {
    let (actions, tape) = actor.forward_batch(states)?;
    let probe = probe_critic(states, actions.view(), critic, None)?;
    let (policy, _) = actor.backward(&tape, probe.action_grad.view())?;
    Ok((probe.value, policy))
}

fn check_worst(adv: &AdversaryState, worst: usize) -> Result<()> {
    if worst >= adv.len() {
        return Err(Error::contract(format!(
            "candidate index {worst} out of range for {} candidates",
            adv.len()
        )));
    }
    Ok(())
}

/// Applies a policy ascent step and/or a projected descent step of the
/// worst candidate. Nothing moves if any used gradient is non-finite.
#[allow(clippy::too_many_arguments)]
pub fn apply_step(
    grads: &StepGrads,
    actor: &mut Mlp,
    actor_opt: &mut AdamState,
    adv: &mut AdversaryState,
    lr_policy: f64,
    lr_omega: f64,
    movers: Movers,
    rule: StepRule,
) -> Result<()> {
    let move_policy = movers != Movers::AdversaryOnly;
    let move_omega = movers != Movers::PolicyOnly;
    if move_policy && grads.policy.iter().any(|g| !g.is_finite()) {
        return Err(Error::UpdateSkipped {
            what: "policy gradient".into(),
        });
    }
    if move_omega && grads.omega.iter().any(|g| !g.is_finite()) {
        return Err(Error::UpdateSkipped {
            what: format!("gradient of candidate {}", grads.worst),
        });
    }
    if move_policy {
        ascend(actor.params_mut(), &grads.policy, actor_opt, lr_policy, rule)?;
    }
    if move_omega {
        let k = grads.worst;
        let omega = &mut adv.omegas[k];
        match rule {
            StepRule::Adam => adv.opts[k].step(omega, &grads.omega, lr_omega)?,
            StepRule::Plain => omega
                .iter_mut()
                .zip(&grads.omega)
                .for_each(|(w, g)| *w -= lr_omega * g),
        }
        adv.omega_box.project_in_place(omega)?;
    }
    Ok(())
}

/// Gradient ascent on `params`.
pub fn ascend(params: &mut [f64], grads: &[f64], opt: &mut AdamState, lr: f64, rule: StepRule) -> Result<()> {
    match rule {
        StepRule::Adam => {
            let neg: Vec<f64> = grads.iter().map(|g| -g).collect();
            opt.step(params, &neg, lr)
        }
        StepRule::Plain => {
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::UpdateSkipped {
                    what: "policy gradient".into(),
                });
            }
            params.iter_mut().zip(grads).for_each(|(p, g)| *p += lr * g);
            Ok(())
        }
    }
}

/// Worst-candidate selection followed by one hard max-min step.
#[allow(clippy::too_many_arguments)]
pub fn maximin_step(
    states: ArrayView2<'_, f64>,
    actor: &mut Mlp,
    actor_opt: &mut AdamState,
    critic: &Mlp,
    adv: &mut AdversaryState,
    lr_policy: f64,
    lr_omega: f64,
    rule: StepRule,
) -> Result<usize> {
    let worst = select_worst(states, actor, critic, adv)?;
    let grads = maximin_grads(states, actor, critic, adv, worst)?;
    apply_step(&grads, actor, actor_opt, adv, lr_policy, lr_omega, Movers::Both, rule)?;
    Ok(worst)
}

/// Worst-candidate selection followed by one soft-min step.
#[allow(clippy::too_many_arguments)]
pub fn soft_actor_step(
    states: ArrayView2<'_, f64>,
    actor: &mut Mlp,
    actor_opt: &mut AdamState,
    critic: &Mlp,
    adv: &mut AdversaryState,
    lr_policy: f64,
    lr_omega: f64,
    rule: StepRule,
) -> Result<usize> {
    let worst = select_worst(states, actor, critic, adv)?;
    let grads = soft_grads(states, actor, critic, adv, worst)?;
    apply_step(&grads, actor, actor_opt, adv, lr_policy, lr_omega, Movers::Both, rule)?;
    Ok(worst)
}
