//! Run configuration: a flat `key = value` file (TOML syntax), with
//! optional environment-variable overrides.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prefix for environment-variable overrides, e.g. `M2TD3_T_MAX=20000`.
pub const ENV_PREFIX: &str = "M2TD3_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Hard max-min over N candidates with twin critics.
    #[serde(rename = "M2TD3")]
    M2td3,
    /// Actor ascends the frequency-weighted mixture over candidates.
    #[serde(rename = "SoftM2TD3")]
    SoftM2td3,
    /// Single critic, no target smoothing, actor updated every step.
    #[serde(rename = "M2DDPG")]
    M2ddpg,
    /// Domain randomization: omega-blind critic, uniform omega sampling.
    #[serde(rename = "DR")]
    Dr,
    /// Alternating best-response phases against a single adversary.
    #[serde(rename = "RARL_ALT")]
    RarlAlt,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::M2td3,
        Variant::SoftM2td3,
        Variant::M2ddpg,
        Variant::Dr,
        Variant::RarlAlt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::M2td3 => "M2TD3",
            Variant::SoftM2td3 => "SoftM2TD3",
            Variant::M2ddpg => "M2DDPG",
            Variant::Dr => "DR",
            Variant::RarlAlt => "RARL_ALT",
        }
    }

    /// Whether the critic takes omega as an input.
    pub fn critic_sees_omega(self) -> bool {
        self != Variant::Dr
    }

    pub fn has_adversary(self) -> bool {
        self != Variant::Dr
    }

    pub fn twin_critics(self) -> bool {
        self != Variant::M2ddpg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected one of M2TD3, SoftM2TD3, M2DDPG, DR, RARL_ALT)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Environment name: cartpole1, cartpole2, massdamper1, massdamper2.
    pub env: String,
    pub variant: Variant,
    pub seed: u64,

    pub gamma: f64,
    /// Total environment steps.
    pub t_max: u64,
    /// Steps of uniform omega / uniform action exploration.
    pub t_rand: u64,
    /// Actor, adversary and target update period.
    pub t_freq: u64,
    /// Mini-batch size M.
    pub batch_size: usize,
    /// Number of worst-case candidates N.
    pub n_candidates: usize,
    pub lr_actor: f64,
    pub lr_omega: f64,
    pub lr_critic: f64,
    /// l1 distance below which a candidate is resampled.
    pub d_thre: f64,
    /// Selection frequency at or below which a candidate is resampled.
    pub p_thre: f64,
    /// Target soft-update rate.
    pub tau: f64,

    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub buffer_capacity: usize,

    /// Behavior noise deviation as a fraction of the action interval length.
    pub exploration_scale: f64,
    /// Multiplier on the target smoothing deviations.
    pub smoothing_scale: f64,
    /// Smoothing noise clip as a fraction of the interval length.
    pub smoothing_clip: f64,
    /// Omega sampler deviation at t = 0, as a fraction of the interval length.
    pub sigma_omega_start: f64,
    /// Omega sampler deviation from t = t_max / 2 on.
    pub sigma_omega_end: f64,
    /// Momentum denominator used before the first episode finishes.
    pub t_last_init: u64,
    /// Phase length of the alternating baseline.
    pub rarl_phase_len: u64,

    /// Checkpoint period in steps (0 disables intermediate checkpoints).
    pub checkpoint_every: u64,
    /// In-training evaluation period in steps (0 disables).
    pub eval_every: u64,
    pub eval_grid: usize,
    pub eval_episodes: usize,
    /// Log candidates every this many actor updates.
    pub candidate_log_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "cartpole1".into(),
            variant: Variant::M2td3,
            seed: 0,
            gamma: 0.99,
            t_max: 150_000,
            t_rand: 5_000,
            t_freq: 2,
            batch_size: 100,
            n_candidates: 5,
            lr_actor: 3e-4,
            lr_omega: 3e-4,
            lr_critic: 3e-4,
            d_thre: 0.1,
            p_thre: 0.05,
            tau: 0.005,
            hidden_width: 64,
            hidden_layers: 2,
            buffer_capacity: 1_000_000,
            exploration_scale: 0.1,
            smoothing_scale: 1.0,
            smoothing_clip: 0.25,
            sigma_omega_start: 0.5,
            sigma_omega_end: 0.05,
            t_last_init: 1000,
            rarl_phase_len: 2000,
            checkpoint_every: 10_000,
            eval_every: 10_000,
            eval_grid: 10,
            eval_episodes: 5,
            candidate_log_every: 1,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, std::iter::empty())
    }

    /// Parses `text` and then applies `PREFIX_KEY=value` overrides taken
    /// from `vars`. Variables without the prefix are ignored; prefixed
    /// variables naming an unknown key are rejected like unknown file keys.
    pub fn from_toml_with_overrides<I>(text: &str, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        for (name, raw) in vars {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = key.to_ascii_lowercase();
            table.insert(key, parse_override(&raw));
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with_overrides(&text, std::env::vars())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        for (key, lr) in [
            ("lr_actor", self.lr_actor),
            ("lr_omega", self.lr_omega),
            ("lr_critic", self.lr_critic),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{key} must be positive, got {lr}"));
            }
        }
        if self.t_max > 0 && self.t_rand >= self.t_max {
            return bad(format!(
                "t_rand ({}) must be smaller than t_max ({})",
                self.t_rand, self.t_max
            ));
        }
        if self.t_freq == 0 {
            return bad("t_freq must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.n_candidates == 0 {
            return bad("n_candidates must be >= 1".into());
        }
        if !(self.tau >= 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if self.hidden_width == 0 {
            return bad("hidden_width must be >= 1".into());
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be >= 1".into());
        }
        if self.t_last_init == 0 {
            return bad("t_last_init must be >= 1".into());
        }
        if self.rarl_phase_len == 0 {
            return bad("rarl_phase_len must be >= 1".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be >= 1".into());
        }
        if self.eval_grid == 0 {
            return bad("eval_grid must be >= 1".into());
        }
        if self.candidate_log_every == 0 {
            return bad("candidate_log_every must be >= 1".into());
        }
        for (key, v) in [
            ("exploration_scale", self.exploration_scale),
            ("smoothing_scale", self.smoothing_scale),
            ("smoothing_clip", self.smoothing_clip),
            ("sigma_omega_start", self.sigma_omega_start),
            ("sigma_omega_end", self.sigma_omega_end),
            ("d_thre", self.d_thre),
            ("p_thre", self.p_thre),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{key} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }

    /// Actor update period after variant rules (M2DDPG updates every step).
    pub fn effective_t_freq(&self) -> u64 {
        match self.variant {
            Variant::M2ddpg => 1,
            _ => self.t_freq,
        }
    }

    /// Candidate count after variant rules (the alternating baseline keeps one).
    pub fn effective_n_candidates(&self) -> usize {
        match self.variant {
            Variant::RarlAlt => 1,
            _ => self.n_candidates,
        }
    }
}

/// Interprets an override as a TOML value when it parses as one, else as
/// a bare string (so `M2TD3_ENV=cartpole2` needs no quoting).
fn parse_override(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}
