//! Exploration distributions: the omega sampler used at episode starts and
//! the behavior policy used at every step.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::types::UncertaintyBox;

/// Omega deviation schedule: `start_factor * L` at `t = 0`, decaying
/// linearly to `end_factor * L` at `t = t_max / 2`, then constant.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSchedule {
    pub t_rand: u64,
    pub t_max: u64,
    pub start_factor: f64,
    pub end_factor: f64,
}

impl SamplerSchedule {
    pub fn new(t_rand: u64, t_max: u64) -> Self {
        Self {
            t_rand,
            t_max,
            start_factor: 0.5,
            end_factor: 0.05,
        }
    }

    /// Fraction of the interval length used as the deviation at step `t`.
    pub fn factor_at(&self, t: u64) -> f64 {
        let half = self.t_max as f64 / 2.0;
        let t = t as f64;
        if t >= half {
            self.end_factor
        } else {
            self.start_factor + (self.end_factor - self.start_factor) * (t / half)
        }
    }

    pub fn sigma_at(&self, t: u64, interval_lengths: &[f64]) -> Vec<f64> {
        let f = self.factor_at(t);
        interval_lengths.iter().map(|l| f * l).collect()
    }

    pub fn is_random_phase(&self, t: u64) -> bool {
        t <= self.t_rand
    }
}

/// Uniform on the box while `t <= t_rand`; afterwards a projected Gaussian
/// mixture with weights `weights` centred at `candidates`.
pub fn sample_omega<R: Rng + ?Sized>(
    t: u64,
    candidates: &[Vec<f64>],
    weights: &[f64],
    schedule: &SamplerSchedule,
    omega_box: &UncertaintyBox,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if schedule.is_random_phase(t) {
        return Ok(omega_box.sample_uniform(rng));
    }
    if candidates.is_empty() || candidates.len() != weights.len() {
        return Err(Error::contract(format!(
            "mixture needs matching candidates and weights, got {} and {}",
            candidates.len(),
            weights.len()
        )));
    }
    let component = WeightedIndex::new(weights)
        .map_err(|e| Error::contract(format!("invalid mixture weights {weights:?}: {e}")))?
        .sample(rng);
    let sigma = schedule.sigma_at(t, &omega_box.lengths());
    let mut omega: Vec<f64> = candidates[component]
        .iter()
        .zip(&sigma)
        .map(|(c, s)| c + s * rng.sample::<f64, _>(StandardNormal))
        .collect();
    omega_box.project_in_place(&mut omega)?;
    Ok(omega)
}

/// Uniform on the action box while `t <= t_rand`; afterwards the policy
/// action plus Gaussian noise of deviation `exploration_scale * L`, clipped.
pub fn behavior_action<R: Rng + ?Sized>(
    t: u64,
    state: &[f64],
    actor: &Mlp,
    schedule: &SamplerSchedule,
    action_box: &UncertaintyBox,
    exploration_scale: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if schedule.is_random_phase(t) {
        return Ok(action_box.sample_uniform(rng));
    }
    let mut a = actor.predict(state)?;
    if exploration_scale > 0.0 {
        for (v, l) in a.iter_mut().zip(action_box.lengths()) {
            *v += exploration_scale * l * rng.sample::<f64, _>(StandardNormal);
        }
    }
    action_box.project_in_place(&mut a)?;
    Ok(a)
}
