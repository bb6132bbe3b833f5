//! The learning scheduler's machinery: replay buffer, actor and critic
//! networks with their targets, action decoding, reward shaping, state
//! normalization, and the two gradient updates.
//!
//! The actor maps the observed state to a raw vector in [-1, 1] holding a
//! selection score, a CPU frequency fraction, and a transmit power fraction
//! per client. The critic scores (state, raw action) pairs. Updates follow
//! the standard deterministic policy gradient recipe: mean squared temporal
//! difference error for the critic, mean critic score ascent for the actor,
//! and slow blending of the online networks into their targets.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::cost::RoundAction;
use crate::env::{draw_channels, ClientState, World};
use crate::nn::{Activation, Adam, Grads, Mlp};

/// One stored transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: Vec<f64>,
    /// Raw actor output after exploration noise, still in [-1, 1].
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Fixed-capacity ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity),
            next: 0,
        }
    }

    /// Appends a transition, evicting the oldest once at capacity.
    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Updates begin only once the buffer has filled.
    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    /// Uniform sample of `m` distinct transitions.
    pub fn sample(&self, m: usize, rng: &mut ChaCha8Rng) -> Vec<Experience> {
        assert!(m <= self.items.len(), "sample larger than buffer");
        rand::seq::index::sample(rng, self.items.len(), m)
            .iter()
            .map(|i| self.items[i].clone())
            .collect()
    }
}

/// Online and target networks plus optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBundle {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic: Mlp,
    pub critic_target: Mlp,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl AgentBundle {
    /// Fresh agent: two hidden layers per network, bounded actor output,
    /// linear critic output, targets starting as exact copies. The actor's
    /// last layer starts near zero so initial actions sit near the middle of
    /// every range.
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        cfg: &SystemConfig,
        actor_rng: &mut ChaCha8Rng,
        critic_rng: &mut ChaCha8Rng,
    ) -> AgentBundle {
        let h = cfg.hidden_units;
        let mut actor = Mlp::new(
            &[state_dim, h, h, action_dim],
            Activation::Relu,
            Activation::Tanh,
            actor_rng,
        );
        actor.scale_last_layer(0.01);
        let critic = Mlp::new(
            &[state_dim + action_dim, h, h, 1],
            Activation::Relu,
            Activation::Identity,
            critic_rng,
        );
        let actor_opt = Adam::new(cfg.actor_lr, actor.param_count());
        let critic_opt = Adam::new(cfg.critic_lr, critic.param_count());
        AgentBundle {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
            state_dim,
            action_dim,
        }
    }

    /// Blends both online networks into their targets.
    pub fn soft_update_targets(&mut self, rate: f64) {
        self.actor_target.soft_update_from(&self.actor, rate);
        self.critic_target.soft_update_from(&self.critic, rate);
    }
}

/// Scales raw observations into network-friendly ranges: batteries relative
/// to capacity, gains log-compressed and min-max scaled over a calibration
/// sample, staleness relative to its limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateNormalizer {
    clients: usize,
    servers: usize,
    battery_scale: f64,
    gain_log_min: f64,
    gain_log_max: f64,
    staleness_scale: f64,
}

impl StateNormalizer {
    /// Measures the gain range over `draws` fresh channel realizations of
    /// this world, widened 5% on both sides.
    pub fn calibrate(world: &World, cfg: &SystemConfig, draws: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for _ in 0..draws {
            let ch = draw_channels(world, rng);
            for n in 0..world.clients.len() {
                for k in 0..world.servers.len() {
                    let lg = ch.gain(n, k).log10();
                    lo = lo.min(lg);
                    hi = hi.max(lg);
                }
            }
        }
        let span = (hi - lo).max(1e-12);
        StateNormalizer {
            clients: world.clients.len(),
            servers: world.servers.len(),
            battery_scale: cfg.battery_capacity_j,
            gain_log_min: lo - 0.05 * span,
            gain_log_max: hi + 0.05 * span,
            staleness_scale: cfg.max_stale_rounds as f64,
        }
    }

    /// The (clients, servers) shape this normalizer was calibrated for.
    pub fn dims(&self) -> (usize, usize) {
        (self.clients, self.servers)
    }

    /// Maps a raw observation vector into normalized coordinates.
    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        let n = self.clients;
        let nk = n * self.servers;
        assert_eq!(raw.len(), 2 * n + nk + n);
        let mut out = Vec::with_capacity(raw.len());
        for &b in &raw[..2 * n] {
            out.push(b / self.battery_scale);
        }
        let span = self.gain_log_max - self.gain_log_min;
        for &g in &raw[2 * n..2 * n + nk] {
            let scaled = (g.log10() - self.gain_log_min) / span;
            out.push(scaled.clamp(0.0, 1.0));
        }
        for &s in &raw[2 * n + nk..] {
            out.push(s / self.staleness_scale);
        }
        out
    }
}

/// Length of the raw action vector for the standard two-stage agent.
pub fn action_dim(clients: usize) -> usize {
    3 * clients
}

/// Fraction of each cap that the lowest raw level maps to.
///
/// A strictly positive floor keeps saturated outputs executable: a client
/// run at 5% frequency is slow and earns a poor reward, which the critic
/// can learn from, whereas a zero level would drop the client before
/// execution and erase every trace of that coordinate from the reward.
pub const LEVEL_FLOOR: f64 = 0.05;

/// Turns a raw actor output into a round action.
///
/// Client `n` is selected when its score is positive or its staleness has
/// reached the forced-selection limit. Frequencies and powers map affinely
/// from [-1, 1] onto [`LEVEL_FLOOR`, 1] times their caps; deselected
/// clients get zeros.
pub fn decode_action(
    raw: &[f64],
    clients: &[ClientState],
    round: usize,
    cfg: &SystemConfig,
) -> RoundAction {
    let n = clients.len();
    assert_eq!(raw.len(), action_dim(n));
    let level = |r: f64| LEVEL_FLOOR + (1.0 - LEVEL_FLOOR) * (r + 1.0) / 2.0;
    let mut action = RoundAction::idle(n);
    for (i, client) in clients.iter().enumerate() {
        let forced = round.saturating_sub(client.last_selected_round) >= cfg.max_stale_rounds;
        if raw[i] > 0.0 || forced {
            action.selected[i] = true;
            action.cpu_freq_hz[i] = client.f_max_hz * level(raw[n + i]);
            action.tx_power_w[i] = client.p_max_w * level(raw[2 * n + i]);
        }
    }
    action
}

/// Exponential reward in the round objective, minus the penalty when the
/// round had violations.
pub fn reward(objective: f64, violated: bool, cfg: &SystemConfig) -> f64 {
    (cfg.reward_offset + objective).exp() - if violated { cfg.penalty } else { 0.0 }
}

/// Exploration noise scale for a 0-based episode index: linear decay from
/// the start value to the end value over the first half of training, then
/// flat.
pub fn exploration_sigma(episode: usize, total_episodes: usize, cfg: &SystemConfig) -> f64 {
    let half = (total_episodes as f64 / 2.0).max(1.0);
    let frac = episode as f64 / half;
    if frac >= 1.0 {
        return cfg.noise_sigma_end;
    }
    cfg.noise_sigma_start + frac * (cfg.noise_sigma_end - cfg.noise_sigma_start)
}

/// Adds Gaussian noise to each coordinate and clips back into [-1, 1].
pub fn apply_exploration(raw: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma <= 0.0 {
        return;
    }
    let noise = Normal::new(0.0, sigma).expect("valid sigma");
    for x in raw.iter_mut() {
        *x = (*x + noise.sample(rng)).clamp(-1.0, 1.0);
    }
}

fn concat(state: &[f64], action: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(state.len() + action.len());
    v.extend_from_slice(state);
    v.extend_from_slice(action);
    v
}

/// Mean squared temporal-difference loss over a batch and its gradients with
/// respect to the online critic.
///
/// Targets come from the target networks: y = r + discount * Q'(s', a'(s')).
/// The critic is evaluated at the stored action, or at the online actor's
/// action when the config asks for that variant.
pub fn critic_loss_grads(
    bundle: &AgentBundle,
    batch: &[Experience],
    cfg: &SystemConfig,
) -> (f64, Grads) {
    assert!(!batch.is_empty(), "empty batch");
    let m = batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = Grads::zeros_like(&bundle.critic);
    for e in batch {
        let next_action = bundle.actor_target.forward(&e.next_state);
        let q_next = bundle.critic_target.forward(&concat(&e.next_state, &next_action))[0];
        let y = e.reward + cfg.discount * q_next;
        let action_ref;
        let action: &[f64] = if cfg.critic_uses_actor_action {
            action_ref = bundle.actor.forward(&e.state);
            &action_ref
        } else {
            &e.action
        };
        let cache = bundle.critic.forward_cached(&concat(&e.state, action));
        let q = cache.output()[0];
        loss += (q - y).powi(2);
        let (g, _) = bundle.critic.backward(&cache, &[2.0 * (q - y) / m]);
        grads.add(&g);
    }
    (loss / m, grads)
}

/// One critic descent step; returns the batch loss.
pub fn critic_update(bundle: &mut AgentBundle, batch: &[Experience], cfg: &SystemConfig) -> f64 {
    let (loss, grads) = critic_loss_grads(bundle, batch, cfg);
    let mut params = bundle.critic.flat_params();
    bundle.critic_opt.step(&mut params, &grads.to_flat());
    bundle.critic.set_flat_params(&params);
    loss
}

/// Mean critic score of the online actor's actions over a batch, and its
/// gradients with respect to the actor (the ascent direction).
pub fn actor_objective_grads(bundle: &AgentBundle, batch: &[Experience]) -> (f64, Grads) {
    assert!(!batch.is_empty(), "empty batch");
    let m = batch.len() as f64;
    let mut objective = 0.0;
    let mut grads = Grads::zeros_like(&bundle.actor);
    for e in batch {
        let actor_cache = bundle.actor.forward_cached(&e.state);
        let action = actor_cache.output().to_vec();
        let critic_cache = bundle.critic.forward_cached(&concat(&e.state, &action));
        objective += critic_cache.output()[0];
        // d(mean Q)/d(action), via the critic's input gradient.
        let (_, d_input) = bundle.critic.backward(&critic_cache, &[1.0 / m]);
        let d_action = &d_input[e.state.len()..];
        let (g, _) = bundle.actor.backward(&actor_cache, d_action);
        grads.add(&g);
    }
    (objective / m, grads)
}

/// One actor ascent step; returns the batch objective before the step.
pub fn actor_update(bundle: &mut AgentBundle, batch: &[Experience], cfg: &SystemConfig) -> f64 {
    let _ = cfg;
    let (objective, grads) = actor_objective_grads(bundle, batch);
    let descent: Vec<f64> = grads.to_flat().iter().map(|g| -g).collect();
    let mut params = bundle.actor.flat_params();
    bundle.actor_opt.step(&mut params, &descent);
    bundle.actor.set_flat_params(&params);
    objective
}
