use rand::{Rng, RngCore};

use super::{EnvSpec, Environment, Episode, StepOutcome};
use crate::error::Result;
use crate::types::UncertaintyBox;

#[derive(Debug, Clone, PartialEq)]
pub struct MassDamperParams {
    pub mass: f64,
    pub damping: f64,
    pub dt: f64,
    pub setpoint: f64,
    pub action_cost: f64,
}

impl Default for MassDamperParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            damping: 1.0,
            dt: 0.05,
            setpoint: 1.0,
            action_cost: 0.01,
        }
    }
}

const MASS_RANGE: (f64, f64) = (0.1, 3.0);
const DAMPING_RANGE: (f64, f64) = (0.1, 4.0);
const INIT_NOISE: f64 = 0.1;

/// Setpoint reaching on a damped point mass: `m x'' = a - c x'`.
/// State `(x, x_dot)`, force in `[-1, 1]`, reward `-(x' - 1)^2 - 0.01 |a|^2`,
/// 200 steps and no failure termination. omega is the mass (`massdamper1`)
/// or `(mass, damping)` (`massdamper2`).
#[derive(Debug, Clone)]
pub struct MassDamper {
    spec: EnvSpec,
    params: MassDamperParams,
    state: [f64; 2],
    episode: Episode,
}

impl MassDamper {
    pub fn new(omega_dim: usize) -> Self {
        assert!(omega_dim == 1 || omega_dim == 2, "mass-damper supports 1 or 2 omega dims");
        let (lower, upper, omega_ref) = if omega_dim == 1 {
            (vec![MASS_RANGE.0], vec![MASS_RANGE.1], vec![1.0])
        } else {
            (
                vec![MASS_RANGE.0, DAMPING_RANGE.0],
                vec![MASS_RANGE.1, DAMPING_RANGE.1],
                vec![1.0, 1.0],
            )
        };
        Self {
            spec: EnvSpec {
                name: format!("massdamper{omega_dim}"),
                state_dim: 2,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                omega_box: UncertaintyBox::new(lower, upper).expect("static bounds"),
                omega_ref,
                max_steps: 200,
            },
            params: MassDamperParams::default(),
            state: [0.0; 2],
            episode: Episode::default(),
        }
    }

    pub fn params(&self) -> &MassDamperParams {
        &self.params
    }

    pub fn set_state(&mut self, omega: &[f64], state: [f64; 2]) -> Result<()> {
        self.episode.start(&self.spec, omega)?;
        self.apply_omega();
        self.state = state;
        Ok(())
    }

    fn apply_omega(&mut self) {
        self.params.mass = self.episode.omega[0];
        self.params.damping = self
            .episode
            .omega
            .get(1)
            .copied()
            .unwrap_or(MassDamperParams::default().damping);
    }
}

impl Environment for MassDamper {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, omega: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.episode.start(&self.spec, omega)?;
        self.apply_omega();
        self.state = [rng.gen_range(-INIT_NOISE..=INIT_NOISE), 0.0];
        Ok(self.state.to_vec())
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        self.episode.check_step(&self.spec, action)?;
        let p = &self.params;
        let force = action[0];
        let [x, v] = self.state;
        let v = v + p.dt * (force - p.damping * v) / p.mass;
        let x = x + p.dt * v;
        self.state = [x, v];
        self.episode.steps += 1;
        let done = self.episode.steps >= self.spec.max_steps;
        if done {
            self.episode.active = false;
        }
        let reward = -(x - p.setpoint).powi(2) - p.action_cost * force * force;
        Ok(StepOutcome {
            next_state: self.state.to_vec(),
            reward,
            done,
        })
    }
}
