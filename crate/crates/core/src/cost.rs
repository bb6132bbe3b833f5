//! Latency and energy accounting for one communication round, the per-round
//! objective, and the episode utility.
//!
//! Everything here is a pure function of its inputs; state transitions and
//! randomness live in [`crate::env`].

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::env::{ChannelMatrix, ClientState};

/// Per-round decisions made by the first stage: who participates and with
/// what CPU frequency and transmit power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAction {
    pub selected: Vec<bool>,
    /// CPU frequency per client (Hz); zero for deselected clients.
    pub cpu_freq_hz: Vec<f64>,
    /// Transmit power per client (W); zero for deselected clients.
    pub tx_power_w: Vec<f64>,
}

impl RoundAction {
    /// All-deselected action for `n` clients.
    pub fn idle(n: usize) -> Self {
        RoundAction {
            selected: vec![false; n],
            cpu_freq_hz: vec![0.0; n],
            tx_power_w: vec![0.0; n],
        }
    }

    pub fn n_selected(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    /// Removes a client from the round, zeroing its resources.
    pub fn deselect(&mut self, client: usize) {
        self.selected[client] = false;
        self.cpu_freq_hz[client] = 0.0;
        self.tx_power_w[client] = 0.0;
    }
}

/// Per-round decisions made by the second stage: the server each participant
/// uploads to and its share of that server's bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    /// Server id per client; `None` for clients sitting the round out.
    pub assignment: Vec<Option<usize>>,
    /// Bandwidth fraction of the assigned server; zero when unassigned.
    pub bandwidth: Vec<f64>,
}

impl RoundPlan {
    pub fn empty(n: usize) -> Self {
        RoundPlan {
            assignment: vec![None; n],
            bandwidth: vec![0.0; n],
        }
    }

    /// Clients assigned to one server, in client order.
    pub fn server_clients(&self, server: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == Some(server))
            .map(|(n, _)| n)
            .collect()
    }
}

/// Constraints a round can violate. Violations are penalized through the
/// reward, never silently executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintId {
    /// A client was asked to spend more energy than stored plus harvested.
    EnergyCausality,
    /// A client at the staleness limit was left unselected.
    ForcedSelection,
    /// A client was selected with zero frequency or zero power.
    InvalidAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub client: usize,
    pub constraint: ConstraintId,
}

/// Everything measured about one executed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub t_cmp_s: Vec<f64>,
    pub t_com_s: Vec<f64>,
    pub e_cmp_j: Vec<f64>,
    pub e_com_j: Vec<f64>,
    /// Synchronization delay per server; zero for idle servers.
    pub server_delays_s: Vec<f64>,
    /// Slowest server's delay, the round's wall-clock length.
    pub round_delay_s: f64,
    /// Participation-minus-delay objective for the round.
    pub objective: f64,
    pub n_selected: usize,
    pub violations: Vec<Violation>,
}

#[derive(Debug, thiserror::Error)]
pub enum CostError {
    #[error("client {client}: selected with non-positive CPU frequency")]
    InvalidFrequency { client: usize },
    #[error("client {client}: selected with zero upload rate")]
    ZeroRate { client: usize },
    #[error("client {client}: selected but not assigned to any server")]
    Unassigned { client: usize },
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Time for one client's local training: iterations times cycles per batch,
/// divided by clock frequency. Deselected clients take no time.
pub fn cmp_latency(
    selected: bool,
    cfg: &SystemConfig,
    cycles_per_bit: f64,
    f_hz: f64,
) -> Result<f64, CostError> {
    if !selected {
        return Ok(0.0);
    }
    if f_hz <= 0.0 {
        return Err(CostError::InvalidFrequency { client: usize::MAX });
    }
    let cycles = cfg.local_iters as f64 * cycles_per_bit * cfg.batch_size as f64 * cfg.sample_bits;
    Ok(cycles / f_hz)
}

/// Energy for local training: switched-capacitance power (u f^3) times time.
pub fn cmp_energy(t_cmp_s: f64, capacitance: f64, f_hz: f64) -> f64 {
    capacitance * f_hz.powi(3) * t_cmp_s
}

/// Achievable upload rate over a bandwidth share (bits/s).
pub fn tx_rate(bw_fraction: f64, bandwidth_hz: f64, p_w: f64, gain: f64, noise_w: f64) -> f64 {
    bw_fraction * bandwidth_hz * (1.0 + p_w * gain / noise_w).log2()
}

/// Time to upload one model update. Deselected clients take no time.
pub fn com_latency(selected: bool, model_bits: f64, rate_bps: f64) -> Result<f64, CostError> {
    if !selected {
        return Ok(0.0);
    }
    if rate_bps <= 0.0 {
        return Err(CostError::ZeroRate { client: usize::MAX });
    }
    Ok(model_bits / rate_bps)
}

/// Evaluates every latency and energy for one round, the per-server
/// synchronization delays, and the round objective. Violations are not
/// checked here; see [`check_feasibility`].
pub fn evaluate_round(
    action: &RoundAction,
    plan: &RoundPlan,
    channels: &ChannelMatrix,
    clients: &[ClientState],
    cfg: &SystemConfig,
) -> Result<RoundOutcome, CostError> {
    let n = clients.len();
    let k = channels.servers();
    let mut t_cmp = vec![0.0; n];
    let mut t_com = vec![0.0; n];
    let mut e_cmp = vec![0.0; n];
    let mut e_com = vec![0.0; n];
    let mut server_delays = vec![0.0; k];
    for (idx, client) in clients.iter().enumerate() {
        if !action.selected[idx] {
            continue;
        }
        let tag = |e| match e {
            CostError::InvalidFrequency { .. } => CostError::InvalidFrequency { client: idx },
            CostError::ZeroRate { .. } => CostError::ZeroRate { client: idx },
            other => other,
        };
        let server = plan.assignment[idx].ok_or(CostError::Unassigned { client: idx })?;
        let f = action.cpu_freq_hz[idx];
        let p = action.tx_power_w[idx];
        t_cmp[idx] = cmp_latency(true, cfg, client.cycles_per_bit, f).map_err(tag)?;
        e_cmp[idx] = cmp_energy(t_cmp[idx], client.capacitance, f);
        let rate = tx_rate(
            plan.bandwidth[idx],
            cfg.bandwidth_hz,
            p,
            channels.gain(idx, server),
            cfg.noise_w,
        );
        t_com[idx] = com_latency(true, cfg.model_bits, rate).map_err(tag)?;
        e_com[idx] = p * t_com[idx];
        let completion = t_cmp[idx] + t_com[idx] + cfg.edge_overhead_s;
        if completion > server_delays[server] {
            server_delays[server] = completion;
        }
    }
    let round_delay = server_delays.iter().cloned().fold(0.0, f64::max);
    let n_selected = action.n_selected();
    Ok(RoundOutcome {
        t_cmp_s: t_cmp,
        t_com_s: t_com,
        e_cmp_j: e_cmp,
        e_com_j: e_com,
        server_delays_s: server_delays,
        round_delay_s: round_delay,
        objective: cfg.selection_weight * n_selected as f64 - round_delay,
        n_selected,
        violations: Vec::new(),
    })
}

/// Flags energy-causality breaches for participants and missed forced
/// selections for clients at the staleness limit.
pub fn check_feasibility(
    action: &RoundAction,
    clients: &[ClientState],
    harvested_on_j: &[f64],
    e_cmp_j: &[f64],
    e_com_j: &[f64],
    round: usize,
    cfg: &SystemConfig,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    for (idx, client) in clients.iter().enumerate() {
        if action.selected[idx] {
            if client.battery_j + harvested_on_j[idx] < e_cmp_j[idx] + e_com_j[idx] {
                violations.push(Violation {
                    client: idx,
                    constraint: ConstraintId::EnergyCausality,
                });
            }
        } else if round.saturating_sub(client.last_selected_round) >= cfg.max_stale_rounds {
            violations.push(Violation {
                client: idx,
                constraint: ConstraintId::ForcedSelection,
            });
        }
    }
    violations
}

/// Wall-clock length of one cloud round: its edge rounds plus the cloud
/// aggregation overhead.
pub fn cloud_delay(round_delays_s: &[f64], cfg: &SystemConfig) -> Result<f64, CostError> {
    if round_delays_s.len() != cfg.edge_rounds {
        return Err(CostError::LengthMismatch {
            expected: cfg.edge_rounds,
            got: round_delays_s.len(),
        });
    }
    Ok(round_delays_s.iter().sum::<f64>() + cfg.cloud_overhead_s)
}

/// Episode utility: summed round objectives minus the total cloud overhead.
pub fn utility(objectives: &[f64], cfg: &SystemConfig) -> Result<f64, CostError> {
    let expected = cfg.cloud_rounds * cfg.edge_rounds;
    if objectives.len() != expected {
        return Err(CostError::LengthMismatch {
            expected,
            got: objectives.len(),
        });
    }
    Ok(objectives.iter().sum::<f64>() - cfg.cloud_rounds as f64 * cfg.cloud_overhead_s)
}
