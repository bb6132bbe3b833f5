//! System configuration: physical constants, round structure, energy model,
//! reward shaping, agent hyperparameters, and run options.
//!
//! Configs load from a flat `key = value` text format with `[section]`
//! headers. Every key has a default; a config file only lists what it
//! overrides. Unknown sections or keys are rejected with the offending line
//! number so typos never silently fall back to defaults.

use serde::{Deserialize, Serialize};

/// All tunables for a simulation run. Immutable once validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    // [system]
    /// Number of clients.
    pub clients: usize,
    /// Number of edge servers.
    pub edge_servers: usize,
    /// Radius of the circular deployment area (m).
    pub area_radius_m: f64,
    /// Uplink bandwidth per edge server (Hz).
    pub bandwidth_hz: f64,
    /// Per-client transmit power cap (W).
    pub p_max_w: f64,
    /// Per-client CPU frequency cap (Hz).
    pub f_max_hz: f64,
    /// Lower bound of the per-client CPU cycles-per-bit draw.
    pub cycles_per_bit_min: f64,
    /// Upper bound of the per-client CPU cycles-per-bit draw.
    pub cycles_per_bit_max: f64,
    /// Receiver noise power (W).
    pub noise_w: f64,
    /// Size of one uploaded model (bits).
    pub model_bits: f64,
    /// Local SGD batch size (samples).
    pub batch_size: usize,
    /// Size of one training sample (bits).
    pub sample_bits: f64,
    /// Effective switched capacitance of client CPUs (J·s²/cycle, times f³
    /// gives power).
    pub capacitance: f64,

    // [rounds]
    /// Cloud aggregation rounds per episode.
    pub cloud_rounds: usize,
    /// Edge aggregation rounds per cloud round.
    pub edge_rounds: usize,
    /// Local SGD iterations per edge round.
    pub local_iters: usize,
    /// A client idle for this many rounds must be selected.
    pub max_stale_rounds: usize,
    /// Cap on association adjustment attempts per round.
    pub adjust_attempts: usize,

    // [energy]
    /// Battery capacity per client (J).
    pub battery_capacity_j: f64,
    /// Lower bound of the per-client mean harvest rate draw (J/s).
    pub harvest_min_jps: f64,
    /// Upper bound of the per-client mean harvest rate draw (J/s).
    pub harvest_max_jps: f64,
    /// Fixed edge aggregation overhead added to each participant (s).
    pub edge_overhead_s: f64,
    /// Fixed cloud aggregation overhead per cloud round (s).
    pub cloud_overhead_s: f64,

    // [reward]
    /// Weight on the participant count in the round objective.
    pub selection_weight: f64,
    /// Additive constant inside the exponential reward.
    pub reward_offset: f64,
    /// Reward penalty applied when a round has constraint violations.
    pub penalty: f64,

    // [ddpg]
    /// Discount factor for future rewards.
    pub discount: f64,
    /// Mini-batch size for network updates.
    pub minibatch: usize,
    /// Replay buffer capacity (transitions).
    pub replay_capacity: usize,
    /// Actor learning rate.
    pub actor_lr: f64,
    /// Critic learning rate.
    pub critic_lr: f64,
    /// Target network blend rate per update.
    pub soft_update: f64,
    /// Width of each hidden layer in both networks.
    pub hidden_units: usize,
    /// Exploration noise std at the start of training.
    pub noise_sigma_start: f64,
    /// Exploration noise std floor reached halfway through training.
    pub noise_sigma_end: f64,
    /// Evaluate the critic loss at the actor's current action instead of the
    /// stored one.
    pub critic_uses_actor_action: bool,

    // [run]
    /// Master RNG seed.
    pub seed: u64,
    /// Fixed selection count for the random and battery-greedy schedulers;
    /// `none` means all clients.
    pub n_select: Option<usize>,
    /// Run the synthetic federated learning task alongside the simulation.
    pub fl_enabled: bool,
    /// SGD learning rate for the synthetic task.
    pub fl_learning_rate: f64,
    /// Samples held by each client in the synthetic task.
    pub fl_samples_per_client: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            clients: 10,
            edge_servers: 3,
            area_radius_m: 250.0,
            bandwidth_hz: 1.0e6,
            p_max_w: 1.0,
            f_max_hz: 3.0e9,
            cycles_per_bit_min: 30.0,
            cycles_per_bit_max: 100.0,
            noise_w: 1.0e-9,
            model_bits: 1.6e6,
            batch_size: 32,
            sample_bits: 6272.0,
            capacitance: 2.0e-28,
            cloud_rounds: 150,
            edge_rounds: 5,
            local_iters: 100,
            max_stale_rounds: 3,
            adjust_attempts: 5,
            battery_capacity_j: 5.0,
            harvest_min_jps: 0.2,
            harvest_max_jps: 1.0,
            edge_overhead_s: 0.1,
            cloud_overhead_s: 1.0,
            selection_weight: 0.35,
            reward_offset: 5.0,
            penalty: 5000.0,
            discount: 0.99,
            minibatch: 32,
            replay_capacity: 40000,
            actor_lr: 1.0e-4,
            critic_lr: 2.0e-4,
            soft_update: 0.005,
            hidden_units: 128,
            noise_sigma_start: 0.3,
            noise_sigma_end: 0.05,
            critic_uses_actor_action: false,
            seed: 42,
            n_select: None,
            fl_enabled: false,
            fl_learning_rate: 0.05,
            fl_samples_per_client: 200,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{key}: {msg}")]
    Invariant { key: String, msg: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("override {entry:?}: {msg}")]
    Override { entry: String, msg: String },
}

/// (section, key) pairs in file order; drives parsing, overrides, and
/// serialization so the three stay in sync.
const KEYS: &[(&str, &str)] = &[
    ("system", "clients"),
    ("system", "edge_servers"),
    ("system", "area_radius_m"),
    ("system", "bandwidth_hz"),
    ("system", "p_max_w"),
    ("system", "f_max_hz"),
    ("system", "cycles_per_bit_min"),
    ("system", "cycles_per_bit_max"),
    ("system", "noise_w"),
    ("system", "model_bits"),
    ("system", "batch_size"),
    ("system", "sample_bits"),
    ("system", "capacitance"),
    ("rounds", "cloud_rounds"),
    ("rounds", "edge_rounds"),
    ("rounds", "local_iters"),
    ("rounds", "max_stale_rounds"),
    ("rounds", "adjust_attempts"),
    ("energy", "battery_capacity_j"),
    ("energy", "harvest_min_jps"),
    ("energy", "harvest_max_jps"),
    ("energy", "edge_overhead_s"),
    ("energy", "cloud_overhead_s"),
    ("reward", "selection_weight"),
    ("reward", "reward_offset"),
    ("reward", "penalty"),
    ("ddpg", "discount"),
    ("ddpg", "minibatch"),
    ("ddpg", "replay_capacity"),
    ("ddpg", "actor_lr"),
    ("ddpg", "critic_lr"),
    ("ddpg", "soft_update"),
    ("ddpg", "hidden_units"),
    ("ddpg", "noise_sigma_start"),
    ("ddpg", "noise_sigma_end"),
    ("ddpg", "critic_uses_actor_action"),
    ("run", "seed"),
    ("run", "n_select"),
    ("run", "fl_enabled"),
    ("run", "fl_learning_rate"),
    ("run", "fl_samples_per_client"),
];

fn parse_f64(v: &str) -> Result<f64, String> {
    v.parse::<f64>().map_err(|_| format!("expected a number, got {v:?}"))
}

fn parse_usize(v: &str) -> Result<usize, String> {
    v.parse::<usize>()
        .map_err(|_| format!("expected a non-negative integer, got {v:?}"))
}

fn parse_u64(v: &str) -> Result<u64, String> {
    v.parse::<u64>()
        .map_err(|_| format!("expected a non-negative integer, got {v:?}"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn parse_opt_usize(v: &str) -> Result<Option<usize>, String> {
    if v == "none" {
        Ok(None)
    } else {
        parse_usize(v).map(Some)
    }
}

impl SystemConfig {
    /// Sets one key from its text value. `section` must be the key's section.
    fn set_key(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        match (section, key) {
            ("system", "clients") => self.clients = parse_usize(value)?,
            ("system", "edge_servers") => self.edge_servers = parse_usize(value)?,
            ("system", "area_radius_m") => self.area_radius_m = parse_f64(value)?,
            ("system", "bandwidth_hz") => self.bandwidth_hz = parse_f64(value)?,
            ("system", "p_max_w") => self.p_max_w = parse_f64(value)?,
            ("system", "f_max_hz") => self.f_max_hz = parse_f64(value)?,
            ("system", "cycles_per_bit_min") => self.cycles_per_bit_min = parse_f64(value)?,
            ("system", "cycles_per_bit_max") => self.cycles_per_bit_max = parse_f64(value)?,
            ("system", "noise_w") => self.noise_w = parse_f64(value)?,
            ("system", "model_bits") => self.model_bits = parse_f64(value)?,
            ("system", "batch_size") => self.batch_size = parse_usize(value)?,
            ("system", "sample_bits") => self.sample_bits = parse_f64(value)?,
            ("system", "capacitance") => self.capacitance = parse_f64(value)?,
            ("rounds", "cloud_rounds") => self.cloud_rounds = parse_usize(value)?,
            ("rounds", "edge_rounds") => self.edge_rounds = parse_usize(value)?,
            ("rounds", "local_iters") => self.local_iters = parse_usize(value)?,
            ("rounds", "max_stale_rounds") => self.max_stale_rounds = parse_usize(value)?,
            ("rounds", "adjust_attempts") => self.adjust_attempts = parse_usize(value)?,
            ("energy", "battery_capacity_j") => self.battery_capacity_j = parse_f64(value)?,
            ("energy", "harvest_min_jps") => self.harvest_min_jps = parse_f64(value)?,
            ("energy", "harvest_max_jps") => self.harvest_max_jps = parse_f64(value)?,
            ("energy", "edge_overhead_s") => self.edge_overhead_s = parse_f64(value)?,
            ("energy", "cloud_overhead_s") => self.cloud_overhead_s = parse_f64(value)?,
            ("reward", "selection_weight") => self.selection_weight = parse_f64(value)?,
            ("reward", "reward_offset") => self.reward_offset = parse_f64(value)?,
            ("reward", "penalty") => self.penalty = parse_f64(value)?,
            ("ddpg", "discount") => self.discount = parse_f64(value)?,
            ("ddpg", "minibatch") => self.minibatch = parse_usize(value)?,
            ("ddpg", "replay_capacity") => self.replay_capacity = parse_usize(value)?,
            ("ddpg", "actor_lr") => self.actor_lr = parse_f64(value)?,
            ("ddpg", "critic_lr") => self.critic_lr = parse_f64(value)?,
            ("ddpg", "soft_update") => self.soft_update = parse_f64(value)?,
            ("ddpg", "hidden_units") => self.hidden_units = parse_usize(value)?,
            ("ddpg", "noise_sigma_start") => self.noise_sigma_start = parse_f64(value)?,
            ("ddpg", "noise_sigma_end") => self.noise_sigma_end = parse_f64(value)?,
            ("ddpg", "critic_uses_actor_action") => {
                self.critic_uses_actor_action = parse_bool(value)?
            }
            ("run", "seed") => self.seed = parse_u64(value)?,
            ("run", "n_select") => self.n_select = parse_opt_usize(value)?,
            ("run", "fl_enabled") => self.fl_enabled = parse_bool(value)?,
            ("run", "fl_learning_rate") => self.fl_learning_rate = parse_f64(value)?,
            ("run", "fl_samples_per_client") => {
                self.fl_samples_per_client = parse_usize(value)?
            }
            _ => return Err(format!("unknown key {key:?} in section [{section}]")),
        }
        Ok(())
    }

    fn get_key(&self, section: &str, key: &str) -> String {
        match (section, key) {
            ("system", "clients") => self.clients.to_string(),
            ("system", "edge_servers") => self.edge_servers.to_string(),
            ("system", "area_radius_m") => fmt_f64(self.area_radius_m),
            ("system", "bandwidth_hz") => fmt_f64(self.bandwidth_hz),
            ("system", "p_max_w") => fmt_f64(self.p_max_w),
            ("system", "f_max_hz") => fmt_f64(self.f_max_hz),
            ("system", "cycles_per_bit_min") => fmt_f64(self.cycles_per_bit_min),
            ("system", "cycles_per_bit_max") => fmt_f64(self.cycles_per_bit_max),
            ("system", "noise_w") => fmt_f64(self.noise_w),
            ("system", "model_bits") => fmt_f64(self.model_bits),
            ("system", "batch_size") => self.batch_size.to_string(),
            ("system", "sample_bits") => fmt_f64(self.sample_bits),
            ("system", "capacitance") => fmt_f64(self.capacitance),
            ("rounds", "cloud_rounds") => self.cloud_rounds.to_string(),
            ("rounds", "edge_rounds") => self.edge_rounds.to_string(),
            ("rounds", "local_iters") => self.local_iters.to_string(),
            ("rounds", "max_stale_rounds") => self.max_stale_rounds.to_string(),
            ("rounds", "adjust_attempts") => self.adjust_attempts.to_string(),
            ("energy", "battery_capacity_j") => fmt_f64(self.battery_capacity_j),
            ("energy", "harvest_min_jps") => fmt_f64(self.harvest_min_jps),
            ("energy", "harvest_max_jps") => fmt_f64(self.harvest_max_jps),
            ("energy", "edge_overhead_s") => fmt_f64(self.edge_overhead_s),
            ("energy", "cloud_overhead_s") => fmt_f64(self.cloud_overhead_s),
            ("reward", "selection_weight") => fmt_f64(self.selection_weight),
            ("reward", "reward_offset") => fmt_f64(self.reward_offset),
            ("reward", "penalty") => fmt_f64(self.penalty),
            ("ddpg", "discount") => fmt_f64(self.discount),
            ("ddpg", "minibatch") => self.minibatch.to_string(),
            ("ddpg", "replay_capacity") => self.replay_capacity.to_string(),
            ("ddpg", "actor_lr") => fmt_f64(self.actor_lr),
            ("ddpg", "critic_lr") => fmt_f64(self.critic_lr),
            ("ddpg", "soft_update") => fmt_f64(self.soft_update),
            ("ddpg", "hidden_units") => self.hidden_units.to_string(),
            ("ddpg", "noise_sigma_start") => fmt_f64(self.noise_sigma_start),
            ("ddpg", "noise_sigma_end") => fmt_f64(self.noise_sigma_end),
            ("ddpg", "critic_uses_actor_action") => self.critic_uses_actor_action.to_string(),
            ("run", "seed") => self.seed.to_string(),
            ("run", "n_select") => match self.n_select {
                Some(n) => n.to_string(),
                None => "none".to_string(),
            },
            ("run", "fl_enabled") => self.fl_enabled.to_string(),
            ("run", "fl_learning_rate") => fmt_f64(self.fl_learning_rate),
            ("run", "fl_samples_per_client") => self.fl_samples_per_client.to_string(),
            _ => unreachable!("get_key called with a key missing from KEYS"),
        }
    }

    /// Applies a `key=value` or `section.key=value` override, as given on the
    /// command line. Does not re-validate; call [`SystemConfig::validate`]
    /// after the last override.
    pub fn apply_override(&mut self, entry: &str) -> Result<(), ConfigError> {
        let err = |msg: String| ConfigError::Override {
            entry: entry.to_string(),
            msg,
        };
        let (key_part, value) = entry
            .split_once('=')
            .ok_or_else(|| err("expected key=value".to_string()))?;
        let key_part = key_part.trim();
        let value = value.trim();
        let (section, key) = match key_part.split_once('.') {
            Some((s, k)) => {
                if !KEYS.contains(&(s, k)) {
                    return Err(err(format!("unknown key {key_part:?}")));
                }
                (s, k)
            }
            None => *KEYS
                .iter()
                .find(|(_, k)| *k == key_part)
                .ok_or_else(|| err(format!("unknown key {key_part:?}")))?,
        };
        self.set_key(section, key, value).map_err(err)
    }

    /// Serializes to the config file format. Reparsing the result gives back
    /// an equal config.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for &(section, key) in KEYS {
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{section}]\n"));
                current = section;
            }
            out.push_str(&format!("{key} = {}\n", self.get_key(section, key)));
        }
        out
    }

    /// Checks cross-field invariants, naming the first offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| {
            Err(ConfigError::Invariant {
                key: key.to_string(),
                msg: msg.to_string(),
            })
        };
        if self.edge_servers < 1 {
            return bad("edge_servers", "must be at least 1");
        }
        if self.clients < self.edge_servers {
            return bad("clients", "must be at least edge_servers");
        }
        for (key, v) in [
            ("bandwidth_hz", self.bandwidth_hz),
            ("p_max_w", self.p_max_w),
            ("f_max_hz", self.f_max_hz),
            ("cycles_per_bit_min", self.cycles_per_bit_min),
            ("noise_w", self.noise_w),
            ("model_bits", self.model_bits),
            ("sample_bits", self.sample_bits),
            ("capacitance", self.capacitance),
            ("battery_capacity_j", self.battery_capacity_j),
            ("harvest_min_jps", self.harvest_min_jps),
            ("edge_overhead_s", self.edge_overhead_s),
            ("cloud_overhead_s", self.cloud_overhead_s),
            ("penalty", self.penalty),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("fl_learning_rate", self.fl_learning_rate),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(key, "must be strictly positive and finite");
            }
        }
        if !(self.area_radius_m >= 0.0) || !self.area_radius_m.is_finite() {
            return bad("area_radius_m", "must be non-negative and finite");
        }
        if self.cycles_per_bit_max < self.cycles_per_bit_min {
            return bad("cycles_per_bit_max", "must be at least cycles_per_bit_min");
        }
        if self.harvest_max_jps < self.harvest_min_jps {
            return bad("harvest_max_jps", "must be at least harvest_min_jps");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount", "must be in (0, 1]");
        }
        if !(self.soft_update > 0.0 && self.soft_update <= 1.0) {
            return bad("soft_update", "must be in (0, 1]");
        }
        if self.max_stale_rounds < 1 {
            return bad("max_stale_rounds", "must be at least 1");
        }
        if self.adjust_attempts < 1 {
            return bad("adjust_attempts", "must be at least 1");
        }
        for (key, v) in [
            ("batch_size", self.batch_size),
            ("cloud_rounds", self.cloud_rounds),
            ("edge_rounds", self.edge_rounds),
            ("local_iters", self.local_iters),
            ("minibatch", self.minibatch),
            ("hidden_units", self.hidden_units),
            ("fl_samples_per_client", self.fl_samples_per_client),
        ] {
            if v < 1 {
                return bad(key, "must be at least 1");
            }
        }
        if self.replay_capacity < self.minibatch {
            return bad("replay_capacity", "must be at least minibatch");
        }
        for (key, v) in [
            ("noise_sigma_start", self.noise_sigma_start),
            ("noise_sigma_end", self.noise_sigma_end),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(key, "must be non-negative and finite");
            }
        }
        if !(self.selection_weight.is_finite() && self.reward_offset.is_finite()) {
            return bad("selection_weight", "must be finite");
        }
        if let Some(n) = self.n_select {
            if n > self.clients {
                return bad("n_select", "must be at most clients");
            }
        }
        Ok(())
    }
}

/// Shortest float form that round-trips, so serialize/parse is lossless.
fn fmt_f64(v: f64) -> String {
    let s = format!("{v}");
    debug_assert_eq!(s.parse::<f64>().unwrap(), v);
    s
}

/// Parses config text, applying it over defaults. Does not validate.
pub fn parse_config(text: &str) -> Result<SystemConfig, ConfigError> {
    let mut cfg = SystemConfig::default();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find(['#', ';']) {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| ConfigError::Parse {
                line: line_no,
                msg: format!("malformed section header {line:?}"),
            })?;
            if !KEYS.iter().any(|(s, _)| *s == name) {
                return Err(ConfigError::Parse {
                    line: line_no,
                    msg: format!("unknown section [{name}]"),
                });
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
            line: line_no,
            msg: format!("expected key = value, got {line:?}"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let section = section.as_deref().ok_or_else(|| ConfigError::Parse {
            line: line_no,
            msg: format!("key {key:?} appears before any [section] header"),
        })?;
        cfg.set_key(section, key, value)
            .map_err(|msg| ConfigError::Parse { line: line_no, msg })?;
    }
    Ok(cfg)
}

/// Loads and validates a config file.
pub fn load_config(path: &std::path::Path) -> Result<SystemConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cfg = parse_config(&text)?;
    cfg.validate()?;
    Ok(cfg)
}
