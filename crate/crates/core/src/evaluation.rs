//! Worst-case and average return of a deterministic policy over a grid on
//! the uncertainty set.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{make_env, Environment};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::types::{indexed_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env: String,
    pub seed: u64,
    pub n_per_dim: usize,
    pub n_episodes: usize,
    pub grid: Vec<Vec<f64>>,
    /// Mean undiscounted return per grid point.
    pub returns: Vec<f64>,
    /// Standard error of each mean (0 for a single episode).
    pub stderr: Vec<f64>,
    pub worst: f64,
    pub worst_index: usize,
    pub average: f64,
}

impl EvalReport {
    /// Aggregates per-point episode returns.
    pub fn from_returns(env: &str, seed: u64, n_per_dim: usize, grid: Vec<Vec<f64>>, episodes: &[Vec<f64>]) -> Result<Self> {
        if grid.is_empty() || grid.len() != episodes.len() || episodes.iter().any(|e| e.is_empty()) {
            return Err(Error::contract("every grid point needs at least one episode"));
        }
        let returns: Vec<f64> = episodes.iter().map(|e| mean(e)).collect();
        let stderr = episodes.iter().map(|e| std_error(e)).collect();
        let mut worst_index = 0;
        for (k, r) in returns.iter().enumerate() {
            if *r < returns[worst_index] {
                worst_index = k;
            }
        }
        Ok(Self {
            env: env.to_string(),
            seed,
            n_per_dim,
            n_episodes: episodes[0].len(),
            worst: returns[worst_index],
            worst_index,
            average: mean(&returns),
            grid,
            returns,
            stderr,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed evaluation report: {e}")))
    }

    /// Header `omega_0,..,omega_{d-1},return,stderr`, one row per grid point.
    pub fn to_csv(&self) -> String {
        let dim = self.grid.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = (0..dim).map(|j| format!("omega_{j}")).collect();
        header.extend(["return".into(), "stderr".into()]);
        w.write_record(&header).expect("in-memory write");
        for ((omega, r), se) in self.grid.iter().zip(&self.returns).zip(&self.stderr) {
            let row: Vec<String> = omega.iter().chain([r, se]).map(f64::to_string).collect();
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (ext, body) in [("json", self.to_json()), ("csv", self.to_csv())] {
            let path = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_error(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

/// Evaluation grid: `n_per_dim` points per axis, or the nominal parameter
/// alone when `n_per_dim == 1`.
pub fn eval_grid(env_name: &str, n_per_dim: usize) -> Result<Vec<Vec<f64>>> {
    let env = make_env(env_name)?;
    match n_per_dim {
        0 => Err(Error::contract("evaluation grid needs at least one point per dimension")),
        1 => Ok(vec![env.spec().omega_ref.clone()]),
        n => env.spec().omega_box.grid_points(n),
    }
}

/// Undiscounted return of one episode of `actor` under `omega`.
pub fn rollout(actor: &Mlp, env: &mut dyn Environment, omega: &[f64], rng: &mut dyn rand::RngCore) -> Result<f64> {
    let action_box = env.spec().action_box();
    let mut state = env.reset(omega, rng)?;
    let mut total = 0.0;
    loop {
        let mut action = actor.predict(&state)?;
        action_box.project_in_place(&mut action)?;
        let out = env.step(&action)?;
        total += out.reward;
        if out.done {
            return Ok(total);
        }
        state = out.next_state;
    }
}

/// Runs `n_episodes` deterministic-policy episodes at every grid point.
/// Grid points are evaluated in parallel, each with its own environment
/// and random stream, so the result does not depend on scheduling.
pub fn evaluate_grid(actor: &Mlp, env_name: &str, n_per_dim: usize, n_episodes: usize, seed: u64) -> Result<EvalReport> {
    if n_episodes == 0 {
        return Err(Error::contract("evaluation needs at least one episode per point"));
    }
    let grid = eval_grid(env_name, n_per_dim)?;
    let probe = make_env(env_name)?;
    let spec = probe.spec();
    if actor.input_dim() != spec.state_dim || actor.output_dim() != spec.action_dim() {
        return Err(Error::Checkpoint(format!(
            "policy maps {} -> {} but {env_name} expects state dim {} and action dim {}",
            actor.input_dim(),
            actor.output_dim(),
            spec.state_dim,
            spec.action_dim()
        )));
    }
    let episodes: Vec<Vec<f64>> = grid
        .par_iter()
        .enumerate()
        .map(|(k, omega)| {
            let mut env = make_env(env_name)?;
            let mut rng = indexed_rng(seed, Stream::Eval as u64, k as u64);
            (0..n_episodes)
                .map(|_| rollout(actor, env.as_mut(), omega, &mut rng))
                .collect::<Result<Vec<f64>>>()
                .map_err(|e| Error::Evaluation {
                    omega: omega.clone(),
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    EvalReport::from_returns(env_name, seed, n_per_dim, grid, &episodes)
}
