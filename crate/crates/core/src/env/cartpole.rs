use rand::{Rng, RngCore};

use super::{EnvSpec, Environment, Episode, StepOutcome};
use crate::error::Result;
use crate::types::UncertaintyBox;

/// Physical constants of the cart-pole. Pole and cart mass are overwritten
/// by omega at every reset.
#[derive(Debug, Clone, PartialEq)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub pole_mass: f64,
    pub cart_mass: f64,
    /// Distance from the pivot to the pole's center of mass.
    pub half_length: f64,
    pub dt: f64,
    pub angle_limit: f64,
    pub position_limit: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            pole_mass: 0.1,
            cart_mass: 1.0,
            half_length: 0.5,
            dt: 0.02,
            angle_limit: 0.2,
            position_limit: 2.4,
        }
    }
}

const POLE_MASS_RANGE: (f64, f64) = (0.05, 1.0);
const CART_MASS_RANGE: (f64, f64) = (0.5, 2.0);
const FORCE_LIMIT: f64 = 10.0;
const INIT_NOISE: f64 = 0.05;

/// Balance task. State `(x, x_dot, angle, angle_dot)`, one force action in
/// `[-10, 10]`, reward 1 per step. omega is the pole mass (`cartpole1`) or
/// `(pole mass, cart mass)` (`cartpole2`).
#[derive(Debug, Clone)]
pub struct CartPole {
    spec: EnvSpec,
    params: CartPoleParams,
    state: [f64; 4],
    episode: Episode,
}

impl CartPole {
    pub fn new(omega_dim: usize) -> Self {
        Self::with_params(omega_dim, CartPoleParams::default())
    }

    pub fn with_params(omega_dim: usize, params: CartPoleParams) -> Self {
        assert!(omega_dim == 1 || omega_dim == 2, "cart-pole supports 1 or 2 omega dims");
        let (lower, upper, omega_ref) = if omega_dim == 1 {
            (vec![POLE_MASS_RANGE.0], vec![POLE_MASS_RANGE.1], vec![0.1])
        } else {
            (
                vec![POLE_MASS_RANGE.0, CART_MASS_RANGE.0],
                vec![POLE_MASS_RANGE.1, CART_MASS_RANGE.1],
                vec![0.1, 1.0],
            )
        };
        let spec = EnvSpec {
            name: format!("cartpole{omega_dim}"),
            state_dim: 4,
            action_low: vec![-FORCE_LIMIT],
            action_high: vec![FORCE_LIMIT],
            omega_box: UncertaintyBox::new(lower, upper).expect("static bounds"),
            omega_ref,
            max_steps: 500,
        };
        Self {
            spec,
            params,
            state: [0.0; 4],
            episode: Episode::default(),
        }
    }

    pub fn params(&self) -> &CartPoleParams {
        &self.params
    }

    /// Places the system in an arbitrary state under `omega` without noise.
    pub fn set_state(&mut self, omega: &[f64], state: [f64; 4]) -> Result<()> {
        self.episode.start(&self.spec, omega)?;
        self.apply_omega();
        self.state = state;
        Ok(())
    }

    fn apply_omega(&mut self) {
        self.params.pole_mass = self.episode.omega[0];
        if let Some(cart) = self.episode.omega.get(1) {
            self.params.cart_mass = *cart;
        } else {
            self.params.cart_mass = CartPoleParams::default().cart_mass;
        }
    }

    fn integrate(&self, force: f64) -> [f64; 4] {
        let p = &self.params;
        let [x, x_dot, theta, theta_dot] = self.state;
        let total_mass = p.pole_mass + p.cart_mass;
        let pole_moment = p.pole_mass * p.half_length;
        let (sin, cos) = theta.sin_cos();

        let temp = (force + pole_moment * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (p.gravity * sin - cos * temp)
            / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pole_moment * theta_acc * cos / total_mass;

        // semi-implicit Euler: velocities first, positions from new velocities
        let x_dot = x_dot + p.dt * x_acc;
        let theta_dot = theta_dot + p.dt * theta_acc;
        [x + p.dt * x_dot, x_dot, theta + p.dt * theta_dot, theta_dot]
    }
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, omega: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.episode.start(&self.spec, omega)?;
        self.apply_omega();
        for v in self.state.iter_mut() {
            *v = rng.gen_range(-INIT_NOISE..=INIT_NOISE);
        }
        Ok(self.state.to_vec())
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        self.episode.check_step(&self.spec, action)?;
        self.state = self.integrate(action[0]);
        self.episode.steps += 1;
        let [x, _, theta, _] = self.state;
        let failed = theta.abs() > self.params.angle_limit || x.abs() > self.params.position_limit;
        let done = failed || self.episode.steps >= self.spec.max_steps;
        if done {
            self.episode.active = false;
        }
        Ok(StepOutcome {
            next_state: self.state.to_vec(),
            reward: 1.0,
            done,
        })
    }
}
