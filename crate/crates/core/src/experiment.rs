//! Experiment harness: wires the world, the schedulers, the association
//! search, the agent, and the trainer into seeded episode runs with CSV and
//! JSON outputs.
//!
//! One episode is one full training task: `cloud_rounds * edge_rounds`
//! scheduling rounds over a fixed topology with batteries reset at the start.
//! Every random draw comes from a stream labeled by purpose and episode
//! index, so identical specs produce byte-identical outputs and different
//! schedulers can share world randomness.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{decide_ho, decide_rs, decode_full, phase2, BaselineError, SchedulerKind};
use crate::config::{ConfigError, SystemConfig};
use crate::cost::{
    check_feasibility, evaluate_round, utility, ConstraintId, CostError, RoundAction, RoundPlan,
    Violation,
};
use crate::ddpg::{
    actor_update, apply_exploration, critic_update, decode_action, exploration_sigma, reward,
    AgentBundle, Experience, ReplayBuffer, StateNormalizer,
};
use crate::env::{
    apply_round_transition, assemble_state, draw_channels, harvest_energy, init_world, EnvError,
    World,
};
use crate::fl::FlState;
use crate::rng::spawn_stream;
use crate::scaba::ScabaError;

/// Number of channel realizations sampled when calibrating the state
/// normalizer.
const CALIBRATION_DRAWS: usize = 256;

/// Checkpoint format revision.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Scaba(#[from] ScabaError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which config knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    /// Total system bandwidth (Hz).
    Bandwidth,
    /// Mean energy arrival rate (J/s); the per-client range scales so its
    /// midpoint equals the swept value.
    EnergyRate,
    /// Number of clients.
    NClients,
    /// Selection count for the schedulers that take one.
    NSelect,
}

impl SweepVar {
    pub fn parse(name: &str) -> Result<SweepVar, ExperimentError> {
        match name {
            "bandwidth" => Ok(SweepVar::Bandwidth),
            "energy_rate" => Ok(SweepVar::EnergyRate),
            "n_clients" => Ok(SweepVar::NClients),
            "n_select" => Ok(SweepVar::NSelect),
            other => Err(ExperimentError::Invalid(format!(
                "unknown sweep variable `{other}` (expected bandwidth, energy_rate, n_clients, n_select)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepVar::Bandwidth => "bandwidth",
            SweepVar::EnergyRate => "energy_rate",
            SweepVar::NClients => "n_clients",
            SweepVar::NSelect => "n_select",
        }
    }

    /// Applies one sweep value to a config.
    pub fn apply(self, cfg: &mut SystemConfig, value: f64) -> Result<(), ExperimentError> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(ExperimentError::Invalid(format!(
                "sweep value {value} must be positive and finite"
            )));
        }
        match self {
            SweepVar::Bandwidth => cfg.bandwidth_hz = value,
            SweepVar::EnergyRate => {
                // Keep the range proportional to its default shape
                // ([1/3, 5/3] of the mean) so per-client draws scale linearly
                // with the swept mean under a shared stream.
                cfg.harvest_min_jps = value / 3.0;
                cfg.harvest_max_jps = 5.0 * value / 3.0;
            }
            SweepVar::NClients => {
                if value.fract() != 0.0 {
                    return Err(ExperimentError::Invalid(format!(
                        "n_clients sweep value {value} must be an integer"
                    )));
                }
                cfg.clients = value as usize;
            }
            SweepVar::NSelect => {
                if value.fract() != 0.0 {
                    return Err(ExperimentError::Invalid(format!(
                        "n_select sweep value {value} must be an integer"
                    )));
                }
                cfg.n_select = Some(value as usize);
            }
        }
        Ok(())
    }
}

/// Everything one run needs: resolved config, scheduler, episode budget,
/// output location, and optional sweep/freeze/checkpoint behavior.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub cfg: SystemConfig,
    pub scheduler: SchedulerKind,
    pub episodes: usize,
    pub out_dir: PathBuf,
    pub sweep: Option<(SweepVar, Vec<f64>)>,
    /// Evaluation mode: no exploration noise, no learning updates.
    pub freeze: bool,
    /// Load from this file when present; save updated state there after the
    /// run.
    pub checkpoint: Option<PathBuf>,
    /// Write the generated topology to `world.json` before running.
    pub dump_world: bool,
}

impl ExperimentSpec {
    pub fn new(
        cfg: SystemConfig,
        scheduler: SchedulerKind,
        episodes: usize,
        out_dir: impl Into<PathBuf>,
    ) -> ExperimentSpec {
        ExperimentSpec {
            cfg,
            scheduler,
            episodes,
            out_dir: out_dir.into(),
            sweep: None,
            freeze: false,
            checkpoint: None,
            dump_world: false,
        }
    }
}

/// One scheduling round's metrics.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    /// Clients that actually executed (post energy gate).
    pub selected: usize,
    pub delay_s: f64,
    pub objective: f64,
    pub reward: f64,
    /// Flagged constraint breaches this round.
    pub violations: usize,
    /// Battery extremes across clients after the round's transition.
    pub min_battery_j: f64,
    pub max_battery_j: f64,
}

/// One episode's metrics.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub utility: f64,
    pub mean_selected: f64,
    /// Wall-clock span of the whole task: round delays plus cloud overheads.
    pub total_delay_s: f64,
    pub violations: usize,
    /// Mean critic loss over this episode's updates; zero when none ran.
    pub critic_loss: f64,
    /// Mean actor objective over this episode's updates; zero when none ran.
    pub actor_objective: f64,
    pub rounds: Vec<RoundRecord>,
    /// (cloud round, global loss, accuracy) rows when training is enabled.
    pub accuracy: Vec<(usize, f64, f64)>,
}

/// Aggregate of a finished run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub episodes: Vec<EpisodeRecord>,
    /// Mean utility over the final fifth of episodes (at least one).
    pub mean_utility_tail: f64,
}

/// Serialized training state: networks, optimizers, and the normalizer. The
/// replay buffer is rebuilt from scratch on resume (updates restart once it
/// refills), and the episode counter doubles as the stream cursor since all
/// per-episode streams derive from (seed, episode index).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub scheduler: String,
    pub episodes_done: usize,
    pub normalizer: StateNormalizer,
    pub agent: Option<AgentBundle>,
}

/// The selection count used by the schedulers that take one: the configured
/// value, or half the clients (rounded up) by default.
pub fn effective_n_select(cfg: &SystemConfig) -> usize {
    cfg.n_select.unwrap_or(cfg.clients.div_ceil(2))
}

/// Owns the mutable state of one run: world, agent, replay buffer, trainer.
///
/// Fields are public for inspection in tests; mutating them mid-run forfeits
/// reproducibility.
pub struct Runner {
    pub cfg: SystemConfig,
    pub kind: SchedulerKind,
    pub freeze: bool,
    /// Horizon for the exploration schedule.
    pub total_episodes: usize,
    pub world: World,
    pub normalizer: StateNormalizer,
    pub agent: Option<AgentBundle>,
    pub buffer: ReplayBuffer,
    pub fl: Option<FlState>,
    pub episodes_done: usize,
}

impl Runner {
    pub fn new(
        cfg: &SystemConfig,
        kind: SchedulerKind,
        freeze: bool,
        total_episodes: usize,
    ) -> Runner {
        let seed = cfg.seed;
        let mut world_rng = spawn_stream(seed, "world");
        let world = init_world(cfg, &mut world_rng);
        let mut calib_rng = spawn_stream(seed, "calib");
        let normalizer = StateNormalizer::calibrate(&world, cfg, CALIBRATION_DRAWS, &mut calib_rng);
        let agent = if kind.uses_agent() {
            let state_dim = cfg.clients * (cfg.edge_servers + 3);
            let action_dim = kind.action_dim(cfg.clients, cfg.edge_servers);
            let mut actor_rng = spawn_stream(seed, "actor-init");
            let mut critic_rng = spawn_stream(seed, "critic-init");
            Some(AgentBundle::new(
                state_dim,
                action_dim,
                cfg,
                &mut actor_rng,
                &mut critic_rng,
            ))
        } else {
            None
        };
        let fl = if cfg.fl_enabled {
            let mut fl_rng = spawn_stream(seed, "fl-data");
            Some(FlState::new(cfg, &mut fl_rng))
        } else {
            None
        };
        Runner {
            cfg: cfg.clone(),
            kind,
            freeze,
            total_episodes,
            world,
            normalizer,
            agent,
            buffer: ReplayBuffer::new(cfg.replay_capacity),
            fl,
            episodes_done: 0,
        }
    }

    /// Runs one episode and returns its metrics. `episode` is the absolute
    /// index used to derive this episode's streams.
    pub fn run_episode(&mut self, episode: usize) -> Result<EpisodeRecord, ExperimentError> {
        let cfg = self.cfg.clone();
        let seed = cfg.seed;
        let n = cfg.clients;
        let rounds_total = cfg.cloud_rounds * cfg.edge_rounds;
        let n_select = effective_n_select(&cfg);
        let sigma = exploration_sigma(episode, self.total_episodes, &cfg);

        let mut channel_rng = spawn_stream(seed, &format!("channel.e{episode}"));
        let mut energy_rng = spawn_stream(seed, &format!("energy.e{episode}"));
        let mut explore_rng = spawn_stream(seed, &format!("explore.e{episode}"));
        let mut select_rng = spawn_stream(seed, &format!("select.e{episode}"));
        let mut scaba_rng = spawn_stream(seed, &format!("scaba.e{episode}"));
        let mut replay_rng = spawn_stream(seed, &format!("replay.e{episode}"));
        let mut fl_rng = spawn_stream(seed, &format!("fl.e{episode}"));

        self.world.reset_episode(&cfg);
        if let Some(fl) = &mut self.fl {
            fl.reset();
        }
        let mut channels = draw_channels(&self.world, &mut channel_rng);

        let mut objectives = Vec::with_capacity(rounds_total);
        let mut rounds = Vec::with_capacity(rounds_total);
        let mut accuracy = Vec::new();
        let mut total_delay = 0.0;
        let mut total_selected = 0usize;
        let mut total_violations = 0usize;
        let mut critic_losses = Vec::new();
        let mut actor_objectives = Vec::new();
        let mut ns_cache: Option<(Vec<f64>, RoundAction, RoundPlan)> = None;

        for t in 1..=rounds_total {
            let raw_state = assemble_state(&self.world.clients, &channels, t, &cfg);
            let state = self.normalizer.normalize(&raw_state);
            let mut violations: Vec<Violation> = Vec::new();
            let mut precommitted: Option<RoundPlan> = None;
            let mut replay_action: Option<Vec<f64>> = None;

            // Phase 1: pick participants, frequencies, powers.
            let mut action = match self.kind {
                SchedulerKind::Rs => {
                    decide_rs(&self.world.clients, &channels, n_select, &cfg, &mut select_rng)?
                }
                SchedulerKind::Ho => {
                    let decision = decide_ho(&self.world.clients, &channels, n_select, &cfg)?;
                    precommitted = Some(decision.plan);
                    decision.action
                }
                SchedulerKind::DdpgOnly => {
                    let agent = self.agent.as_ref().expect("agent-driven kind");
                    let mut raw = agent.actor.forward(&state);
                    if !self.freeze {
                        apply_exploration(&mut raw, sigma, &mut explore_rng);
                    }
                    let (action, plan) =
                        decode_full(&raw, &self.world.clients, cfg.edge_servers, t, &cfg);
                    precommitted = Some(plan);
                    replay_action = Some(raw);
                    action
                }
                SchedulerKind::Ns => {
                    // Decisions refresh only when a cloud round begins; the
                    // rounds in between reuse the cached tuple, including its
                    // association and bandwidth.
                    if (t - 1) % cfg.edge_rounds == 0 || ns_cache.is_none() {
                        let agent = self.agent.as_ref().expect("agent-driven kind");
                        let mut raw = agent.actor.forward(&state);
                        if !self.freeze {
                            apply_exploration(&mut raw, sigma, &mut explore_rng);
                        }
                        let mut action = decode_action(&raw, &self.world.clients, t, &cfg);
                        pre_gate(&mut action, &mut violations);
                        let plan = resolve_plan(
                            self.kind,
                            &mut action,
                            &mut violations,
                            &channels,
                            &self.world.clients,
                            &cfg,
                            &mut scaba_rng,
                        )?;
                        ns_cache = Some((raw, action, plan));
                    }
                    let (raw, action, plan) = ns_cache.clone().expect("cache just filled");
                    precommitted = Some(plan);
                    replay_action = Some(raw);
                    action
                }
                SchedulerKind::Tpddpg | SchedulerKind::Ga | SchedulerKind::Eba => {
                    let agent = self.agent.as_ref().expect("agent-driven kind");
                    let mut raw = agent.actor.forward(&state);
                    if !self.freeze {
                        apply_exploration(&mut raw, sigma, &mut explore_rng);
                    }
                    let action = decode_action(&raw, &self.world.clients, t, &cfg);
                    replay_action = Some(raw);
                    action
                }
            };

            // Phase 2: association and bandwidth, unless already decided.
            pre_gate(&mut action, &mut violations);
            let plan = match precommitted {
                Some(plan) => plan,
                None => resolve_plan(
                    self.kind,
                    &mut action,
                    &mut violations,
                    &channels,
                    &self.world.clients,
                    &cfg,
                    &mut scaba_rng,
                )?,
            };

            // Cost evaluation and the executed energy gate: harvest draws
            // happen once, feasibility is checked against those exact draws,
            // and violators are pulled from the round before it executes.
            let mut outcome = evaluate_round(&action, &plan, &channels, &self.world.clients, &cfg)?;
            let mut harvested_on = vec![0.0; n];
            for i in 0..n {
                if action.selected[i] {
                    let t_on = outcome.t_cmp_s[i] + outcome.t_com_s[i];
                    harvested_on[i] =
                        harvest_energy(self.world.clients[i].harvest_mean_jps, t_on, &mut energy_rng);
                }
            }
            let flagged = check_feasibility(
                &action,
                &self.world.clients,
                &harvested_on,
                &outcome.e_cmp_j,
                &outcome.e_com_j,
                t,
                &cfg,
            );
            let violators: Vec<usize> = flagged
                .iter()
                .filter(|v| v.constraint == ConstraintId::EnergyCausality)
                .map(|v| v.client)
                .collect();
            violations.extend(flagged);
            if !violators.is_empty() {
                for &i in &violators {
                    action.deselect(i);
                }
                outcome = evaluate_round(&action, &plan, &channels, &self.world.clients, &cfg)?;
            }
            outcome.violations = violations.clone();
            let violated = !violations.is_empty();
            let round_reward = reward(outcome.objective, violated, &cfg);

            // Model training over the executed participants.
            let is_cloud_end = t % cfg.edge_rounds == 0;
            if let Some(fl) = &mut self.fl {
                let participation: Vec<Option<usize>> = (0..n)
                    .map(|i| {
                        if action.selected[i] {
                            plan.assignment[i]
                        } else {
                            None
                        }
                    })
                    .collect();
                fl.edge_round(&participation, &cfg, &mut fl_rng);
                if is_cloud_end {
                    let (loss, acc) = fl.cloud_round();
                    accuracy.push((t / cfg.edge_rounds, loss, acc));
                }
            }

            // Battery transitions; participants also refresh their staleness.
            for i in 0..n {
                let (h_on, e_cmp, e_com, t_on) = if action.selected[i] {
                    (
                        harvested_on[i],
                        outcome.e_cmp_j[i],
                        outcome.e_com_j[i],
                        outcome.t_cmp_s[i] + outcome.t_com_s[i],
                    )
                } else {
                    (0.0, 0.0, 0.0, 0.0)
                };
                apply_round_transition(
                    &mut self.world.clients[i],
                    h_on,
                    e_cmp,
                    e_com,
                    t_on,
                    outcome.round_delay_s,
                    is_cloud_end,
                    &cfg,
                    &mut energy_rng,
                )?;
                if action.selected[i] {
                    self.world.clients[i].last_selected_round = t;
                }
            }

            // Next observation, experience, and (buffer permitting) updates.
            channels = draw_channels(&self.world, &mut channel_rng);
            let next_raw = assemble_state(&self.world.clients, &channels, t + 1, &cfg);
            let next_state = self.normalizer.normalize(&next_raw);
            if !self.freeze {
                if let (Some(agent), Some(raw)) = (self.agent.as_mut(), replay_action) {
                    self.buffer.push(Experience {
                        state: state.clone(),
                        action: raw,
                        reward: round_reward,
                        next_state,
                    });
                    if self.buffer.is_full() {
                        let batch = self.buffer.sample(cfg.minibatch, &mut replay_rng);
                        critic_losses.push(critic_update(agent, &batch, &cfg));
                        actor_objectives.push(actor_update(agent, &batch, &cfg));
                        agent.soft_update_targets(cfg.soft_update);
                    }
                }
            }

            objectives.push(outcome.objective);
            total_delay += outcome.round_delay_s;
            if is_cloud_end {
                total_delay += cfg.cloud_overhead_s;
            }
            total_selected += outcome.n_selected;
            total_violations += violations.len();
            let (mut b_min, mut b_max) = (f64::INFINITY, f64::NEG_INFINITY);
            for c in &self.world.clients {
                b_min = b_min.min(c.battery_j).min(c.battery_end_on_j);
                b_max = b_max.max(c.battery_j).max(c.battery_end_on_j);
            }
            rounds.push(RoundRecord {
                round: t,
                selected: outcome.n_selected,
                delay_s: outcome.round_delay_s,
                objective: outcome.objective,
                reward: round_reward,
                violations: violations.len(),
                min_battery_j: b_min,
                max_battery_j: b_max,
            });
        }

        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        Ok(EpisodeRecord {
            episode,
            utility: utility(&objectives, &cfg)?,
            mean_selected: total_selected as f64 / rounds_total as f64,
            total_delay_s: total_delay,
            violations: total_violations,
            critic_loss: mean(&critic_losses),
            actor_objective: mean(&actor_objectives),
            rounds,
            accuracy,
        })
    }
}

/// Deselects clients decoded with unusable frequency or power, flagging each.
fn pre_gate(action: &mut RoundAction, violations: &mut Vec<Violation>) {
    for i in 0..action.selected.len() {
        if action.selected[i] && (action.cpu_freq_hz[i] <= 0.0 || action.tx_power_w[i] <= 0.0) {
            action.deselect(i);
            violations.push(Violation {
                client: i,
                constraint: ConstraintId::InvalidAction,
            });
        }
    }
}

/// Runs the scheduler's association/bandwidth step, deselecting (and
/// flagging) any client the search reports as unreachable.
fn resolve_plan(
    kind: SchedulerKind,
    action: &mut RoundAction,
    violations: &mut Vec<Violation>,
    channels: &crate::env::ChannelMatrix,
    clients: &[crate::env::ClientState],
    cfg: &SystemConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<RoundPlan, ExperimentError> {
    loop {
        if action.n_selected() == 0 {
            return Ok(RoundPlan::empty(clients.len()));
        }
        match phase2(kind, action, channels, clients, cfg, rng) {
            Ok(result) => return Ok(result.plan),
            Err(ScabaError::NoFeasibleClient { client }) => {
                action.deselect(client);
                violations.push(Violation {
                    client,
                    constraint: ConstraintId::InvalidAction,
                });
            }
            Err(other) => return Err(other.into()),
        }
    }
}

fn tail_mean(records: &[EpisodeRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let tail = (records.len() / 5).max(1);
    let slice = &records[records.len() - tail..];
    slice.iter().map(|r| r.utility).sum::<f64>() / tail as f64
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    scheduler: &'a str,
    episodes: usize,
    first_episode: usize,
    seed: u64,
    freeze: bool,
    config: &'a SystemConfig,
}

fn write_outputs(
    spec: &ExperimentSpec,
    records: &[EpisodeRecord],
    first_episode: usize,
) -> Result<(), ExperimentError> {
    let mut episodes = BufWriter::new(fs::File::create(spec.out_dir.join("episodes.csv"))?);
    writeln!(
        episodes,
        "episode,utility,mean_selected,total_delay,violations,critic_loss,actor_objective"
    )?;
    for r in records {
        writeln!(
            episodes,
            "{},{:.8e},{:.8e},{:.8e},{},{:.8e},{:.8e}",
            r.episode,
            r.utility,
            r.mean_selected,
            r.total_delay_s,
            r.violations,
            r.critic_loss,
            r.actor_objective
        )?;
    }
    episodes.flush()?;

    let mut rounds = BufWriter::new(fs::File::create(spec.out_dir.join("rounds.csv"))?);
    writeln!(rounds, "episode,round,selected,delay_s,objective,reward,violations")?;
    for r in records {
        for round in &r.rounds {
            writeln!(
                rounds,
                "{},{},{},{:.8e},{:.8e},{:.8e},{}",
                r.episode,
                round.round,
                round.selected,
                round.delay_s,
                round.objective,
                round.reward,
                round.violations
            )?;
        }
    }
    rounds.flush()?;

    if spec.cfg.fl_enabled {
        let mut acc = BufWriter::new(fs::File::create(spec.out_dir.join("accuracy.csv"))?);
        writeln!(acc, "episode,cloud_round,global_loss,accuracy")?;
        for r in records {
            for (cloud_round, loss, accuracy) in &r.accuracy {
                writeln!(
                    acc,
                    "{},{},{:.8e},{:.8e}",
                    r.episode, cloud_round, loss, accuracy
                )?;
            }
        }
        acc.flush()?;
    }

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        scheduler: spec.scheduler.name(),
        episodes: spec.episodes,
        first_episode,
        seed: spec.cfg.seed,
        freeze: spec.freeze,
        config: &spec.cfg,
    };
    fs::write(
        spec.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Runs one experiment to completion: builds (or restores) the runner, runs
/// the requested number of episodes, and writes `episodes.csv`,
/// `rounds.csv`, `accuracy.csv` (when training is enabled), and
/// `manifest.json` into the output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunSummary, ExperimentError> {
    spec.cfg.validate()?;
    if spec.episodes == 0 {
        return Err(ExperimentError::Invalid("episodes must be >= 1".into()));
    }
    fs::create_dir_all(&spec.out_dir)?;

    let mut runner = Runner::new(&spec.cfg, spec.scheduler, spec.freeze, spec.episodes);
    if let Some(path) = &spec.checkpoint {
        if path.exists() {
            let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
            restore(&mut runner, ck, spec)?;
        }
    }
    if spec.dump_world {
        fs::write(
            spec.out_dir.join("world.json"),
            serde_json::to_string_pretty(&runner.world)?,
        )?;
    }

    let first_episode = runner.episodes_done;
    let mut records = Vec::with_capacity(spec.episodes);
    for episode in first_episode..first_episode + spec.episodes {
        let record = runner.run_episode(episode)?;
        log::info!(
            "{} episode {episode}: utility {:.3}, mean selected {:.2}, violations {}",
            spec.scheduler.name(),
            record.utility,
            record.mean_selected,
            record.violations
        );
        records.push(record);
        runner.episodes_done = episode + 1;
    }

    write_outputs(spec, &records, first_episode)?;
    if let Some(path) = &spec.checkpoint {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            scheduler: spec.scheduler.name().to_string(),
            episodes_done: runner.episodes_done,
            normalizer: runner.normalizer.clone(),
            agent: runner.agent.clone(),
        };
        fs::write(path, serde_json::to_string(&ck)?)?;
    }
    Ok(RunSummary {
        mean_utility_tail: tail_mean(&records),
        episodes: records,
    })
}

/// Applies a loaded checkpoint to a fresh runner, validating compatibility.
fn restore(
    runner: &mut Runner,
    ck: Checkpoint,
    spec: &ExperimentSpec,
) -> Result<(), ExperimentError> {
    if ck.version != CHECKPOINT_VERSION {
        return Err(ExperimentError::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            ck.version
        )));
    }
    if ck.scheduler != spec.scheduler.name() {
        return Err(ExperimentError::Checkpoint(format!(
            "checkpoint is for scheduler `{}`, run requested `{}`",
            ck.scheduler,
            spec.scheduler.name()
        )));
    }
    let expected_dims = (spec.cfg.clients, spec.cfg.edge_servers);
    if ck.normalizer.dims() != expected_dims {
        return Err(ExperimentError::Checkpoint(format!(
            "checkpoint world is {:?} (clients, servers), config wants {:?}",
            ck.normalizer.dims(),
            expected_dims
        )));
    }
    match (&ck.agent, runner.agent.is_some()) {
        (Some(agent), true) => {
            let expected_action = spec.scheduler.action_dim(spec.cfg.clients, spec.cfg.edge_servers);
            let expected_state = spec.cfg.clients * (spec.cfg.edge_servers + 3);
            if agent.state_dim != expected_state || agent.action_dim != expected_action {
                return Err(ExperimentError::Checkpoint(format!(
                    "checkpoint network dims ({}, {}) do not match config ({expected_state}, {expected_action})",
                    agent.state_dim, agent.action_dim
                )));
            }
        }
        (None, false) => {}
        _ => {
            return Err(ExperimentError::Checkpoint(
                "checkpoint and scheduler disagree about having an agent".into(),
            ));
        }
    }
    runner.normalizer = ck.normalizer;
    runner.agent = ck.agent;
    runner.episodes_done = ck.episodes_done;
    runner.total_episodes = ck.episodes_done + spec.episodes;
    Ok(())
}

/// Runs the experiment once per sweep value, each into its own subdirectory,
/// and writes `sweep.csv` (variable, value, tail-mean utility) at the root.
///
/// Every point reuses the same master seed so worlds and per-episode streams
/// are shared across values (common random numbers); differences in the
/// summary reflect the swept knob. Checkpoints are disabled inside sweeps.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<Vec<(f64, f64)>, ExperimentError> {
    let (var, values) = spec
        .sweep
        .as_ref()
        .ok_or_else(|| ExperimentError::Invalid("sweep requested without a variable".into()))?;
    if values.is_empty() {
        return Err(ExperimentError::Invalid("empty sweep value list".into()));
    }
    fs::create_dir_all(&spec.out_dir)?;
    let mut table = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = spec.cfg.clone();
        var.apply(&mut cfg, value)?;
        let sub = ExperimentSpec {
            cfg,
            scheduler: spec.scheduler,
            episodes: spec.episodes,
            out_dir: spec.out_dir.join(format!("sweep_{}_{}", var.name(), value)),
            sweep: None,
            freeze: spec.freeze,
            checkpoint: None,
            dump_world: false,
        };
        let summary = run_experiment(&sub)?;
        log::info!(
            "sweep {} = {value}: tail mean utility {:.3}",
            var.name(),
            summary.mean_utility_tail
        );
        table.push((value, summary.mean_utility_tail));
    }
    let mut out = BufWriter::new(fs::File::create(spec.out_dir.join("sweep.csv"))?);
    writeln!(out, "variable,value,mean_utility")?;
    for (value, mean_utility) in &table {
        writeln!(out, "{},{:.8e},{:.8e}", var.name(), value, mean_utility)?;
    }
    out.flush()?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> SystemConfig {
        let mut cfg = SystemConfig::default();
        cfg.clients = 4;
        cfg.edge_servers = 2;
        cfg.cloud_rounds = 2;
        cfg.edge_rounds = 3;
        cfg.hidden_units = 16;
        cfg.replay_capacity = 8;
        cfg.minibatch = 4;
        cfg.seed = 123;
        cfg
    }

    fn read(path: &std::path::Path) -> String {
        fs::read_to_string(path).unwrap()
    }

    #[test]
    fn utility_matches_round_sums() {
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec::new(cfg.clone(), SchedulerKind::Rs, 2, dir.path());
        let summary = run_experiment(&spec).unwrap();
        for episode in &summary.episodes {
            let sum: f64 = episode.rounds.iter().map(|r| r.objective).sum();
            let expect = sum - cfg.cloud_rounds as f64 * cfg.cloud_overhead_s;
            assert!((episode.utility - expect).abs() < 1e-9);
            let delays: f64 = episode.rounds.iter().map(|r| r.delay_s).sum();
            let expect_total = delays + cfg.cloud_rounds as f64 * cfg.cloud_overhead_s;
            assert!((episode.total_delay_s - expect_total).abs() < 1e-9);
            for r in &episode.rounds {
                let expect_obj = cfg.selection_weight * r.selected as f64 - r.delay_s;
                assert!((r.objective - expect_obj).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_specs_produce_identical_files() {
        let cfg = tiny_cfg();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let spec_a = ExperimentSpec::new(cfg.clone(), SchedulerKind::Tpddpg, 2, dir_a.path());
        let spec_b = ExperimentSpec::new(cfg, SchedulerKind::Tpddpg, 2, dir_b.path());
        run_experiment(&spec_a).unwrap();
        run_experiment(&spec_b).unwrap();
        for file in ["episodes.csv", "rounds.csv", "manifest.json"] {
            assert_eq!(
                read(&dir_a.path().join(file)),
                read(&dir_b.path().join(file)),
                "{file} differs"
            );
        }
    }

    #[test]
    fn csv_shapes_and_headers() {
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec::new(cfg.clone(), SchedulerKind::Rs, 1, dir.path());
        run_experiment(&spec).unwrap();
        let episodes = read(&dir.path().join("episodes.csv"));
        let lines: Vec<&str> = episodes.lines().collect();
        assert_eq!(
            lines[0],
            "episode,utility,mean_selected,total_delay,violations,critic_loss,actor_objective"
        );
        assert_eq!(lines.len(), 2);
        let rounds = read(&dir.path().join("rounds.csv"));
        assert_eq!(
            rounds.lines().count(),
            1 + cfg.cloud_rounds * cfg.edge_rounds
        );
        assert!(!dir.path().join("accuracy.csv").exists());
    }

    #[test]
    fn trainer_rows_appear_when_enabled() {
        let mut cfg = tiny_cfg();
        cfg.fl_enabled = true;
        cfg.fl_samples_per_client = 40;
        cfg.local_iters = 5;
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec::new(cfg.clone(), SchedulerKind::Rs, 1, dir.path());
        let summary = run_experiment(&spec).unwrap();
        assert_eq!(summary.episodes[0].accuracy.len(), cfg.cloud_rounds);
        let acc = read(&dir.path().join("accuracy.csv"));
        assert_eq!(acc.lines().count(), 1 + cfg.cloud_rounds);
        assert_eq!(acc.lines().next().unwrap(), "episode,cloud_round,global_loss,accuracy");
    }

    #[test]
    fn freeze_stops_learning_and_noise() {
        let cfg = tiny_cfg();
        let mut frozen = Runner::new(&cfg, SchedulerKind::Tpddpg, true, 1);
        let before = frozen.agent.as_ref().unwrap().actor.flat_params();
        frozen.run_episode(0).unwrap();
        let after = frozen.agent.as_ref().unwrap().actor.flat_params();
        assert_eq!(before, after);
        assert!(frozen.buffer.is_empty());

        let mut cfg = cfg;
        // Small enough to fill during the 6-round episode so updates run.
        cfg.replay_capacity = 4;
        let mut learning = Runner::new(&cfg, SchedulerKind::Tpddpg, false, 1);
        let before = learning.agent.as_ref().unwrap().actor.flat_params();
        let record = learning.run_episode(0).unwrap();
        let after = learning.agent.as_ref().unwrap().actor.flat_params();
        assert_ne!(before, after, "tiny buffer should trigger updates");
        assert!(record.critic_loss != 0.0);
    }

    #[test]
    fn cadence_limited_scheduler_freezes_within_cloud_rounds() {
        let mut cfg = tiny_cfg();
        // Plenty of energy so the executed gate never trims the cached
        // selection mid-block.
        cfg.battery_capacity_j = 500.0;
        cfg.harvest_min_jps = 5.0;
        cfg.harvest_max_jps = 10.0;
        cfg.cloud_rounds = 3;
        cfg.edge_rounds = 4;
        let mut runner = Runner::new(&cfg, SchedulerKind::Ns, false, 1);
        let record = runner.run_episode(0).unwrap();
        for block in record.rounds.chunks(cfg.edge_rounds) {
            for r in block {
                assert_eq!(
                    r.selected, block[0].selected,
                    "selection changed inside a cloud round"
                );
            }
        }
    }

    #[test]
    fn sweep_single_value_matches_plain_run() {
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let mut spec = ExperimentSpec::new(cfg.clone(), SchedulerKind::Rs, 2, dir.path());
        spec.sweep = Some((SweepVar::Bandwidth, vec![cfg.bandwidth_hz]));
        let table = run_sweep(&spec).unwrap();
        let plain_dir = tempfile::tempdir().unwrap();
        let plain = ExperimentSpec::new(cfg, SchedulerKind::Rs, 2, plain_dir.path());
        let summary = run_experiment(&plain).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table[0].1, summary.mean_utility_tail);
        assert!(dir.path().join("sweep.csv").exists());
    }

    #[test]
    fn sweep_validation() {
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let mut spec = ExperimentSpec::new(cfg, SchedulerKind::Rs, 1, dir.path());
        assert!(run_sweep(&spec).is_err(), "missing variable");
        spec.sweep = Some((SweepVar::Bandwidth, vec![]));
        assert!(run_sweep(&spec).is_err(), "empty list");
        spec.sweep = Some((SweepVar::Bandwidth, vec![-1.0]));
        assert!(run_sweep(&spec).is_err(), "negative value");
        spec.sweep = Some((SweepVar::NClients, vec![2.5]));
        assert!(run_sweep(&spec).is_err(), "fractional client count");
    }

    #[test]
    fn energy_rate_sweep_scales_harvest_range() {
        let mut cfg = SystemConfig::default();
        SweepVar::EnergyRate.apply(&mut cfg, 0.9).unwrap();
        assert!((cfg.harvest_min_jps - 0.3).abs() < 1e-12);
        assert!((cfg.harvest_max_jps - 1.5).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_resumes_at_the_next_episode() {
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let ck_path = dir.path().join("agent.ck");
        let mut spec = ExperimentSpec::new(cfg.clone(), SchedulerKind::Tpddpg, 2, dir.path().join("a"));
        spec.checkpoint = Some(ck_path.clone());
        run_experiment(&spec).unwrap();
        assert!(ck_path.exists());
        let saved: Checkpoint = serde_json::from_str(&read(&ck_path)).unwrap();
        assert_eq!(saved.episodes_done, 2);

        let mut resume = ExperimentSpec::new(cfg.clone(), SchedulerKind::Tpddpg, 1, dir.path().join("b"));
        resume.checkpoint = Some(ck_path.clone());
        let summary = run_experiment(&resume).unwrap();
        assert_eq!(summary.episodes[0].episode, 2);
        let saved: Checkpoint = serde_json::from_str(&read(&ck_path)).unwrap();
        assert_eq!(saved.episodes_done, 3);

        let mut wrong = ExperimentSpec::new(cfg, SchedulerKind::Rs, 1, dir.path().join("c"));
        wrong.checkpoint = Some(ck_path);
        assert!(matches!(
            run_experiment(&wrong),
            Err(ExperimentError::Checkpoint(_))
        ));
    }

    #[test]
    fn world_dump_round_trips() {
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let mut spec = ExperimentSpec::new(cfg, SchedulerKind::Rs, 1, dir.path());
        spec.dump_world = true;
        run_experiment(&spec).unwrap();
        let world: World = serde_json::from_str(&read(&dir.path().join("world.json"))).unwrap();
        assert_eq!(world.clients.len(), 4);
        assert_eq!(world.servers.len(), 2);
    }

    #[test]
    fn all_schedulers_complete_an_episode() {
        let cfg = tiny_cfg();
        for kind in SchedulerKind::ALL {
            let mut runner = Runner::new(&cfg, kind, false, 1);
            let record = runner.run_episode(0).unwrap();
            assert_eq!(record.rounds.len(), cfg.cloud_rounds * cfg.edge_rounds);
            for r in &record.rounds {
                assert!(r.min_battery_j >= 0.0, "{}: battery negative", kind.name());
                assert!(
                    r.max_battery_j <= cfg.battery_capacity_j + 1e-12,
                    "{}: battery above capacity",
                    kind.name()
                );
            }
        }
    }
}
