//! The episodic training loop and its per-variant actor updates.
//!
//! Every step: behavior action, environment step, store the transition,
//! and (once the buffer holds a full mini-batch) one critic update. Every
//! `t_freq` steps the actor and the candidates move, candidates are
//! refreshed, frequencies are updated and targets are soft-updated. The
//! episode parameter is redrawn only when an episode ends.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use rand_chacha::ChaCha8Rng;

use crate::adversary::{
    apply_step, ascend, blind_policy_grads, maximin_grads, maximin_step, select_worst, soft_actor_step, AdversaryState,
    Movers, StepRule,
};
use crate::checkpoint::{AdversarySnapshot, Checkpoint};
use crate::config::{RunConfig, Variant};
use crate::critic::{CriticEnsemble, Smoothing};
use crate::env::{make_env, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_grid, EvalReport};
use crate::nn::{soft_update, AdamState, Mlp, OutputActivation};
use crate::replay::ReplayBuffer;
use crate::sampler::{behavior_action, sample_omega, SamplerSchedule};
use crate::types::{stream_rng, Stream, Transition, UncertaintyBox};

struct Rngs {
    env: ChaCha8Rng,
    sampler: ChaCha8Rng,
    refresh: ChaCha8Rng,
    replay: ChaCha8Rng,
    smoothing: ChaCha8Rng,
    behavior: ChaCha8Rng,
}

impl Rngs {
    fn new(seed: u64) -> Self {
        Self {
            env: stream_rng(seed, Stream::Env),
            sampler: stream_rng(seed, Stream::Sampler),
            refresh: stream_rng(seed, Stream::Refresh),
            replay: stream_rng(seed, Stream::Replay),
            smoothing: stream_rng(seed, Stream::Smoothing),
            behavior: stream_rng(seed, Stream::Behavior),
        }
    }
}

/// A finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub index: u64,
    pub t_end: u64,
    pub steps: u64,
    pub omega: Vec<f64>,
    pub ret: f64,
}

/// What happened during one call to [`Trainer::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: u64,
    pub episode: u64,
    /// Parameter of the episode the transition belongs to.
    pub omega: Vec<f64>,
    /// Return of the current episode up to and including this step.
    pub ret: f64,
    pub critic_loss: Option<f64>,
    /// Worst candidate of this step's actor update, if one ran.
    pub worst: Option<usize>,
    pub actor_updated: bool,
    /// Frequencies after this step (empty without candidates).
    pub p: Vec<f64>,
    pub episode_end: Option<EpisodeRecord>,
}

/// Which side moves at step `t` in the alternating baseline: the policy
/// for the first `phase_len` steps, then the adversary, and so on.
pub fn alternating_movers(t: u64, phase_len: u64) -> Movers {
    if ((t.saturating_sub(1)) / phase_len.max(1)) % 2 == 0 {
        Movers::PolicyOnly
    } else {
        Movers::AdversaryOnly
    }
}

pub struct Trainer {
    cfg: RunConfig,
    spec: EnvSpec,
    env: Box<dyn Environment>,
    action_box: UncertaintyBox,
    schedule: SamplerSchedule,
    actor: Mlp,
    actor_target: Mlp,
    actor_opt: AdamState,
    critic: CriticEnsemble,
    adversary: Option<AdversaryState>,
    buffer: ReplayBuffer,
    rngs: Rngs,
    t: u64,
    episode: u64,
    omega: Vec<f64>,
    state: Vec<f64>,
    episode_return: f64,
    episode_steps: u64,
    critic_updates: u64,
    actor_updates: u64,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut env = make_env(&cfg.env)?;
        let spec = env.spec().clone();
        let action_box = spec.action_box();
        let omega_box = spec.omega_box.clone();
        let variant = cfg.variant;
        let hidden = vec![cfg.hidden_width; cfg.hidden_layers];

        let mut init = stream_rng(cfg.seed, Stream::Init);
        let mut widths = vec![spec.state_dim];
        widths.extend(&hidden);
        widths.push(spec.action_dim());
        let actor = Mlp::init(
            widths,
            OutputActivation::ScaledTanh {
                low: spec.action_low.clone(),
                high: spec.action_high.clone(),
            },
            1.0,
            &mut init,
        )?;
        let critic = CriticEnsemble::new(
            spec.state_dim,
            action_box.clone(),
            omega_box.clone(),
            &hidden,
            variant.twin_critics(),
            variant.critic_sees_omega(),
            &mut init,
        )?;
        let adversary = if variant.has_adversary() {
            Some(AdversaryState::new(
                cfg.effective_n_candidates(),
                omega_box.clone(),
                cfg.d_thre,
                cfg.p_thre,
                cfg.t_last_init,
                &mut init,
            )?)
        } else {
            None
        };

        let mut schedule = SamplerSchedule::new(cfg.t_rand, cfg.t_max);
        schedule.start_factor = cfg.sigma_omega_start;
        schedule.end_factor = cfg.sigma_omega_end;

        let mut rngs = Rngs::new(cfg.seed);
        let omega = omega_box.sample_uniform(&mut rngs.sampler);
        let state = env.reset(&omega, &mut rngs.env)?;

        Ok(Self {
            actor_opt: AdamState::new(actor.n_params()),
            actor_target: actor.clone(),
            actor,
            critic,
            adversary,
            buffer: ReplayBuffer::new(cfg.buffer_capacity, omega_box),
            action_box,
            schedule,
            spec,
            env,
            rngs,
            t: 0,
            episode: 0,
            omega,
            state,
            episode_return: 0.0,
            episode_steps: 0,
            critic_updates: 0,
            actor_updates: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_target(&self) -> &Mlp {
        &self.actor_target
    }

    pub fn critic(&self) -> &CriticEnsemble {
        &self.critic
    }

    pub fn adversary(&self) -> Option<&AdversaryState> {
        self.adversary.as_ref()
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    /// Target smoothing at step `t`: deviations are `sqrt(2)` times the
    /// behavior and sampler deviations, clipped at a fraction of the
    /// interval length.
    pub fn smoothing_at(&self, t: u64) -> Smoothing {
        let cfg = &self.cfg;
        let la = self.action_box.lengths();
        let lw = self.spec.omega_box.lengths();
        let k = std::f64::consts::SQRT_2 * cfg.smoothing_scale;
        Smoothing {
            action_std: la.iter().map(|l| k * cfg.exploration_scale * l).collect(),
            action_clip: la.iter().map(|l| cfg.smoothing_clip * l).collect(),
            omega_std: self.schedule.sigma_at(t, &lw).iter().map(|s| k * s).collect(),
            omega_clip: lw.iter().map(|l| cfg.smoothing_clip * l).collect(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            env: self.cfg.env.clone(),
            variant: self.cfg.variant,
            step: self.t,
            actor: self.actor.clone(),
            actor_target: self.actor_target.clone(),
            q1: self.critic.q1.clone(),
            q1_target: self.critic.q1_target.clone(),
            q2: self.critic.q2.clone(),
            q2_target: self.critic.q2_target.clone(),
            adversary: self.adversary.as_ref().map(|a| AdversarySnapshot {
                omegas: a.omegas().to_vec(),
                p: a.frequencies().to_vec(),
                t_last: a.t_last(),
            }),
        }
    }

    /// One environment step followed by the learning updates due at it.
    pub fn step(&mut self) -> Result<StepRecord> {
        let t = self.t + 1;
        self.step_inner(t).map_err(|e| Error::Training {
            step: t,
            variant: self.cfg.variant.name().to_string(),
            source: Box::new(e),
        })
    }

    fn step_inner(&mut self, t: u64) -> Result<StepRecord> {
        self.t = t;
        let action = behavior_action(
            t,
            &self.state,
            &self.actor,
            &self.schedule,
            &self.action_box,
            self.cfg.exploration_scale,
            &mut self.rngs.behavior,
        )?;
        let out = self.env.step(&action)?;
        self.episode_return += out.reward;
        self.episode_steps += 1;
        let omega = self.omega.clone();
        self.buffer.push(Transition {
            state: std::mem::take(&mut self.state),
            action,
            reward: out.reward,
            next_state: out.next_state.clone(),
            done: out.done,
            omega: omega.clone(),
        })?;
        let (episode, ret) = (self.episode, self.episode_return);

        let mut episode_end = None;
        if out.done {
            episode_end = Some(EpisodeRecord {
                index: self.episode,
                t_end: t,
                steps: self.episode_steps,
                omega: omega.clone(),
                ret,
            });
            if let Some(adv) = &mut self.adversary {
                adv.set_t_last(self.episode_steps);
            }
            self.omega = self.draw_omega(t)?;
            self.state = self.env.reset(&self.omega, &mut self.rngs.env)?;
            self.episode += 1;
            self.episode_return = 0.0;
            self.episode_steps = 0;
        } else {
            self.state = out.next_state;
        }

        let mut critic_loss = None;
        let mut worst = None;
        let mut actor_updated = false;
        if self.buffer.len() >= self.cfg.batch_size {
            let batch = self.buffer.sample_batch(self.cfg.batch_size, &mut self.rngs.replay)?;
            let smoothing = (self.cfg.variant != Variant::M2ddpg).then(|| self.smoothing_at(t));
            let y = self.critic.compute_targets(
                &batch,
                &self.actor_target,
                self.cfg.gamma,
                smoothing.as_ref(),
                &mut self.rngs.smoothing,
            )?;
            critic_loss = Some(self.critic.update(&batch, &y, self.cfg.lr_critic)?.mean());
            self.critic_updates += 1;
            if t % self.cfg.effective_t_freq() == 0 {
                worst = self.actor_update(t, batch.states.view())?;
                self.critic.soft_update_targets(self.cfg.tau)?;
                soft_update(&mut self.actor_target, &self.actor, self.cfg.tau)?;
                self.actor_updates += 1;
                actor_updated = true;
            }
        }

        Ok(StepRecord {
            t,
            episode,
            omega,
            ret,
            critic_loss,
            worst,
            actor_updated,
            p: self
                .adversary
                .as_ref()
                .map_or_else(Vec::new, |a| a.frequencies().to_vec()),
            episode_end,
        })
    }

    fn draw_omega(&mut self, t: u64) -> Result<Vec<f64>> {
        match &self.adversary {
            None => Ok(self.spec.omega_box.sample_uniform(&mut self.rngs.sampler)),
            Some(adv) => sample_omega(
                t,
                adv.omegas(),
                adv.frequencies(),
                &self.schedule,
                &self.spec.omega_box,
                &mut self.rngs.sampler,
            ),
        }
    }

    fn actor_update(&mut self, t: u64, states: ArrayView2<'_, f64>) -> Result<Option<usize>> {
        let cfg = &self.cfg;
        let (lr_a, lr_w) = (cfg.lr_actor, cfg.lr_omega);
        let q1 = &self.critic.q1;
        let Some(adv) = self.adversary.as_mut() else {
            let (_, grads) = blind_policy_grads(states, &self.actor, q1)?;
            ascend(self.actor.params_mut(), &grads, &mut self.actor_opt, lr_a, StepRule::Adam)?;
            return Ok(None);
        };
        let worst = match cfg.variant {
            Variant::SoftM2td3 => soft_actor_step(states, &mut self.actor, &mut self.actor_opt, q1, adv, lr_a, lr_w, StepRule::Adam)?,
            Variant::RarlAlt => {
                let k = select_worst(states, &self.actor, q1, adv)?;
                let grads = maximin_grads(states, &self.actor, q1, adv, k)?;
                let movers = alternating_movers(t, cfg.rarl_phase_len);
                apply_step(&grads, &mut self.actor, &mut self.actor_opt, adv, lr_a, lr_w, movers, StepRule::Adam)?;
                k
            }
            _ => maximin_step(states, &mut self.actor, &mut self.actor_opt, q1, adv, lr_a, lr_w, StepRule::Adam)?,
        };
        let refreshed = adv.refresh_candidates(&mut self.rngs.refresh);
        adv.update_frequencies(worst, &refreshed)?;
        Ok(Some(worst))
    }
}

/// Files produced by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub report: EvalReport,
    pub steps: u64,
    pub episodes: u64,
}

/// Run directory layout.
pub mod layout {
    pub const CONFIG: &str = "config.toml";
    pub const STEPS: &str = "steps.csv";
    pub const EPISODES: &str = "episodes.csv";
    pub const CANDIDATES: &str = "candidates.csv";
    pub const CHECKPOINTS: &str = "checkpoints";
    pub const EVAL_DIR: &str = "eval";
    pub const FINAL_EVAL: &str = "eval_final";

    pub fn checkpoint_name(t: u64) -> String {
        format!("step_{t:08}.ckpt")
    }
}

type CsvOut = csv::Writer<BufWriter<File>>;

fn csv_writer(path: &Path, header: &[String]) -> Result<CsvOut> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    write_row(&mut w, path, header)?;
    Ok(w)
}

fn write_row(w: &mut CsvOut, path: &Path, row: &[String]) -> Result<()> {
    w.write_record(row)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}_{i}"))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Trains for `cfg.t_max` steps and writes the run directory:
/// the config copy, `steps.csv` (one row per step), `episodes.csv`,
/// `candidates.csv` (variants with candidates), checkpoints at step 0,
/// every `checkpoint_every` steps and at the end, periodic evaluations,
/// and the final evaluation report.
pub fn train(cfg: &RunConfig, run_dir: &Path) -> Result<TrainOutcome> {
    let mut tr = Trainer::new(cfg.clone())?;
    let ck_dir = run_dir.join(layout::CHECKPOINTS);
    std::fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;
    let cfg_path = run_dir.join(layout::CONFIG);
    std::fs::write(&cfg_path, cfg.to_toml_string()).map_err(|e| Error::io(&cfg_path, e))?;

    let wdim = tr.spec().omega_dim();
    let n_cand = tr.adversary().map_or(0, AdversaryState::len);

    let steps_path = run_dir.join(layout::STEPS);
    let mut header: Vec<String> = vec!["t".into(), "episode".into()];
    header.extend(numbered("omega", wdim));
    header.extend(["return", "critic_loss", "worst"].map(String::from));
    header.extend(numbered("p", n_cand));
    let mut steps_csv = csv_writer(&steps_path, &header)?;

    let ep_path = run_dir.join(layout::EPISODES);
    let mut header: Vec<String> = vec!["episode".into(), "t_end".into(), "steps".into()];
    header.extend(numbered("omega", wdim));
    header.push("return".into());
    let mut ep_csv = csv_writer(&ep_path, &header)?;

    let cand_path = run_dir.join(layout::CANDIDATES);
    let mut cand_csv = if n_cand > 0 {
        let mut header: Vec<String> = vec!["t".into(), "candidate".into()];
        header.extend(numbered("omega", wdim));
        header.extend(["p", "worst"].map(String::from));
        Some(csv_writer(&cand_path, &header)?)
    } else {
        None
    };

    let mut last_ck = ck_dir.join(layout::checkpoint_name(0));
    tr.checkpoint().save(&last_ck)?;
    let mut episodes = 0;
    for _ in 0..cfg.t_max {
        let rec = tr.step()?;
        let t = rec.t;
        let mut row = vec![t.to_string(), rec.episode.to_string()];
        row.extend(rec.omega.iter().map(f64::to_string));
        row.extend([rec.ret.to_string(), opt(rec.critic_loss), opt(rec.worst)]);
        row.extend(rec.p.iter().map(f64::to_string));
        write_row(&mut steps_csv, &steps_path, &row)?;

        if let Some(ep) = &rec.episode_end {
            let mut row = vec![ep.index.to_string(), ep.t_end.to_string(), ep.steps.to_string()];
            row.extend(ep.omega.iter().map(f64::to_string));
            row.push(ep.ret.to_string());
            write_row(&mut ep_csv, &ep_path, &row)?;
            episodes += 1;
        }

        if let (Some(w), Some(adv), Some(k)) = (&mut cand_csv, tr.adversary(), rec.worst) {
            if tr.actor_updates() % cfg.candidate_log_every.max(1) == 0 {
                for (j, (omega, p)) in adv.omegas().iter().zip(adv.frequencies()).enumerate() {
                    let mut row = vec![t.to_string(), j.to_string()];
                    row.extend(omega.iter().map(f64::to_string));
                    row.extend([p.to_string(), u8::from(j == k).to_string()]);
                    write_row(w, &cand_path, &row)?;
                }
            }
        }

        if (cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0) || t == cfg.t_max {
            last_ck = ck_dir.join(layout::checkpoint_name(t));
            tr.checkpoint().save(&last_ck)?;
        }
        if cfg.eval_every > 0 && t % cfg.eval_every == 0 && t != cfg.t_max {
            let report = evaluate_grid(tr.actor(), &cfg.env, cfg.eval_grid, cfg.eval_episodes, cfg.seed)?;
            report.write(&run_dir.join(layout::EVAL_DIR), &format!("step_{t:08}"))?;
        }
    }
    for (w, path) in [(&mut steps_csv, &steps_path), (&mut ep_csv, &ep_path)] {
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    if let Some(w) = &mut cand_csv {
        w.flush().map_err(|e| Error::io(&cand_path, e))?;
    }

    let report = evaluate_grid(tr.actor(), &cfg.env, cfg.eval_grid, cfg.eval_episodes, cfg.seed)?;
    report.write(run_dir, layout::FINAL_EVAL)?;
    Ok(TrainOutcome {
        run_dir: run_dir.to_path_buf(),
        final_checkpoint: last_ck,
        report,
        steps: tr.t(),
        episodes,
    })
}
