//! Parameterized continuous-control environments. The uncertainty
//! parameter is fixed at `reset` and held for the whole episode.

mod cartpole;
mod mass_damper;

pub use cartpole::{CartPole, CartPoleParams};
pub use mass_damper::{MassDamper, MassDamperParams};

use rand::RngCore;

use crate::error::{Error, Result};
use crate::types::UncertaintyBox;

/// Names accepted by [`make_env`]; the digit is the omega dimension.
pub const ENV_NAMES: [&str; 4] = ["cartpole1", "cartpole2", "massdamper1", "massdamper2"];

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub omega_box: UncertaintyBox,
    /// Nominal parameter, always inside `omega_box`.
    pub omega_ref: Vec<f64>,
    /// Episode horizon; the step that reaches it reports `done`.
    pub max_steps: usize,
}

impl EnvSpec {
    pub fn action_dim(&self) -> usize {
        self.action_low.len()
    }

    pub fn omega_dim(&self) -> usize {
        self.omega_box.dim()
    }

    pub fn action_box(&self) -> UncertaintyBox {
        UncertaintyBox::new(self.action_low.clone(), self.action_high.clone())
            .expect("environment action bounds are valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts an episode under `omega` and returns the initial state.
    fn reset(&mut self, omega: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>>;

    /// Advances one control period. Stepping a finished episode is an error.
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
}

pub fn make_env(name: &str) -> Result<Box<dyn Environment>> {
    match name {
        "cartpole1" => Ok(Box::new(CartPole::new(1))),
        "cartpole2" => Ok(Box::new(CartPole::new(2))),
        "massdamper1" => Ok(Box::new(MassDamper::new(1))),
        "massdamper2" => Ok(Box::new(MassDamper::new(2))),
        other => Err(Error::Config(format!(
            "unknown environment `{other}` (expected one of {})",
            ENV_NAMES.join(", ")
        ))),
    }
}

/// Episode bookkeeping shared by the concrete environments.
#[derive(Debug, Clone, Default)]
struct Episode {
    omega: Vec<f64>,
    steps: usize,
    active: bool,
}

impl Episode {
    fn start(&mut self, spec: &EnvSpec, omega: &[f64]) -> Result<()> {
        if !spec.omega_box.contains(omega) {
            return Err(Error::contract(format!(
                "{}: omega {omega:?} outside the uncertainty set [{:?}, {:?}]",
                spec.name,
                spec.omega_box.lower(),
                spec.omega_box.upper()
            )));
        }
        self.omega = omega.to_vec();
        self.steps = 0;
        self.active = true;
        Ok(())
    }

    fn check_step(&self, spec: &EnvSpec, action: &[f64]) -> Result<()> {
        if !self.active {
            return Err(Error::contract(format!(
                "{}: step called without an active episode (reset first)",
                spec.name
            )));
        }
        if action.len() != spec.action_dim() {
            return Err(Error::contract(format!(
                "{}: expected {} action components, got {}",
                spec.name,
                spec.action_dim(),
                action.len()
            )));
        }
        let inside = action
            .iter()
            .zip(spec.action_low.iter().zip(&spec.action_high))
            .all(|(a, (lo, hi))| *lo <= *a && *a <= *hi);
        if !inside {
            return Err(Error::contract(format!(
                "{}: action {action:?} outside the action box",
                spec.name
            )));
        }
        Ok(())
    }
}
