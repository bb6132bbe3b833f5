//! Comparison schedulers that share one per-round decision interface.
//!
//! The reference scheduler pairs a learned phase-1 policy (selection, CPU
//! frequency, transmit power) with the association search. Each baseline
//! swaps out exactly one part: the association rule, the bandwidth rule, the
//! selection rule, the decision cadence, or the division of labor between the
//! learned policy and the search. All draw from caller-provided streams so
//! cross-scheduler comparisons share world randomness.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bandwidth::{solve_bandwidth, BwInstance, DEFAULT_TOL};
use crate::config::SystemConfig;
use crate::cost::{cmp_energy, cmp_latency, tx_rate, RoundAction, RoundPlan};
use crate::ddpg::decode_action;
use crate::env::{ChannelMatrix, ClientState};
use crate::scaba::{run_scaba, BwPolicy, ScabaError, ScabaResult};

/// Which scheduler drives the per-round decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerKind {
    /// Learned phase 1 plus the full association search.
    Tpddpg,
    /// Learned phase 1; association fixed to the strongest gain (no search).
    Ga,
    /// Learned phase 1; association searched under even bandwidth shares.
    Eba,
    /// Uniform random selection with maximal feasible frequency and power.
    Rs,
    /// Learned decisions refreshed only at cloud-round boundaries.
    Ns,
    /// A single learned policy emits every decision, including association
    /// and bandwidth; the search is bypassed.
    DdpgOnly,
    /// Battery-greedy selection with block-coordinate refinement of
    /// frequency, power, and bandwidth.
    Ho,
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("unknown scheduler `{0}` (expected one of tpddpg, ga, eba, rs, ns, ddpg-only, ho)")]
    UnknownKind(String),
    #[error("cannot select {requested} of {available} clients")]
    SelectionTooLarge { requested: usize, available: usize },
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 7] = [
        SchedulerKind::Tpddpg,
        SchedulerKind::Ga,
        SchedulerKind::Eba,
        SchedulerKind::Rs,
        SchedulerKind::Ns,
        SchedulerKind::DdpgOnly,
        SchedulerKind::Ho,
    ];

    pub fn parse(name: &str) -> Result<SchedulerKind, BaselineError> {
        match name {
            "tpddpg" => Ok(SchedulerKind::Tpddpg),
            "ga" => Ok(SchedulerKind::Ga),
            "eba" => Ok(SchedulerKind::Eba),
            "rs" => Ok(SchedulerKind::Rs),
            "ns" => Ok(SchedulerKind::Ns),
            "ddpg-only" => Ok(SchedulerKind::DdpgOnly),
            "ho" => Ok(SchedulerKind::Ho),
            other => Err(BaselineError::UnknownKind(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Tpddpg => "tpddpg",
            SchedulerKind::Ga => "ga",
            SchedulerKind::Eba => "eba",
            SchedulerKind::Rs => "rs",
            SchedulerKind::Ns => "ns",
            SchedulerKind::DdpgOnly => "ddpg-only",
            SchedulerKind::Ho => "ho",
        }
    }

    /// Whether this scheduler trains an agent.
    pub fn uses_agent(self) -> bool {
        !matches!(self, SchedulerKind::Rs | SchedulerKind::Ho)
    }

    /// Actor output width for a world of `clients` and `servers`. Only
    /// meaningful for agent-driven kinds.
    pub fn action_dim(self, clients: usize, servers: usize) -> usize {
        match self {
            SchedulerKind::DdpgOnly => clients * (servers + 4),
            _ => 3 * clients,
        }
    }
}

/// Resolves association and bandwidth for a phase-1 action.
///
/// The reference scheduler, random selection, and cadence-limited variants
/// all use the full search; the greedy-association variant stops at the
/// strongest-gain initialization; the even-bandwidth variant searches under
/// equal shares.
///
/// # Panics
/// For kinds that emit their own complete plan (`DdpgOnly`, `Ho`).
pub fn phase2(
    kind: SchedulerKind,
    action: &RoundAction,
    channels: &ChannelMatrix,
    clients: &[ClientState],
    cfg: &SystemConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ScabaResult, ScabaError> {
    match kind {
        SchedulerKind::Tpddpg | SchedulerKind::Rs | SchedulerKind::Ns => {
            run_scaba(action, channels, clients, cfg, BwPolicy::Optimal, rng)
        }
        SchedulerKind::Ga => {
            let mut greedy = cfg.clone();
            greedy.adjust_attempts = 0;
            run_scaba(action, channels, clients, &greedy, BwPolicy::Optimal, rng)
        }
        SchedulerKind::Eba => run_scaba(action, channels, clients, cfg, BwPolicy::Even, rng),
        SchedulerKind::DdpgOnly | SchedulerKind::Ho => {
            panic!("{} carries its own plan; phase2 does not apply", kind.name())
        }
    }
}

/// Whether (f, p) fits the client's energy budget at an assumed bandwidth
/// share, crediting the mean harvest rate over the resulting on-time.
fn energy_ok(
    client: &ClientState,
    gain: f64,
    share: f64,
    f_hz: f64,
    p_w: f64,
    cfg: &SystemConfig,
) -> bool {
    let t_cmp = match cmp_latency(true, cfg, client.cycles_per_bit, f_hz) {
        Ok(t) => t,
        Err(_) => return false,
    };
    let e_cmp = cmp_energy(t_cmp, client.capacitance, f_hz);
    let rate = tx_rate(share, cfg.bandwidth_hz, p_w, gain, cfg.noise_w);
    if rate <= 0.0 {
        return false;
    }
    let t_com = cfg.model_bits / rate;
    let e_com = p_w * t_com;
    e_cmp + e_com <= client.battery_j + client.harvest_mean_jps * (t_cmp + t_com)
}

/// The fastest (f, p) the energy budget admits at an assumed bandwidth share.
///
/// Tries full power with the largest feasible frequency (found by bisection;
/// the budget slack is strictly decreasing in f). If even the lowest
/// frequency fails at full power, the upload dominates, so power is bisected
/// down at that frequency. Returns None when nothing fits.
pub fn max_feasible_power_freq(
    client: &ClientState,
    gain: f64,
    share: f64,
    cfg: &SystemConfig,
) -> Option<(f64, f64)> {
    let f_max = client.f_max_hz;
    let p_max = client.p_max_w;
    if energy_ok(client, gain, share, f_max, p_max, cfg) {
        return Some((f_max, p_max));
    }
    let f_floor = 1e-3 * f_max;
    if energy_ok(client, gain, share, f_floor, p_max, cfg) {
        let (mut lo, mut hi) = (f_floor, f_max);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if energy_ok(client, gain, share, mid, p_max, cfg) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Some((lo, p_max));
    }
    let p_floor = 1e-3 * p_max;
    if energy_ok(client, gain, share, f_floor, p_floor, cfg) {
        let (mut lo, mut hi) = (p_floor, p_max);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if energy_ok(client, gain, share, f_floor, mid, cfg) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Some((f_floor, lo));
    }
    None
}

/// Random scheduling: a uniform subset of `n_select` clients, each at its
/// maximal feasible frequency and power. Clients whose budget admits nothing
/// are dropped from the selection.
///
/// The feasibility estimate assumes the client reaches its strongest-gain
/// server with a 1/n_select band share; the executed energy gate downstream
/// still has the final say.
pub fn decide_rs(
    clients: &[ClientState],
    channels: &ChannelMatrix,
    n_select: usize,
    cfg: &SystemConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RoundAction, BaselineError> {
    if n_select > clients.len() {
        return Err(BaselineError::SelectionTooLarge {
            requested: n_select,
            available: clients.len(),
        });
    }
    let mut action = RoundAction::idle(clients.len());
    let share = 1.0 / n_select.max(1) as f64;
    for idx in rand::seq::index::sample(rng, clients.len(), n_select) {
        let gain = channels.gain(idx, channels.best_server(idx));
        if let Some((f, p)) = max_feasible_power_freq(&clients[idx], gain, share, cfg) {
            action.selected[idx] = true;
            action.cpu_freq_hz[idx] = f;
            action.tx_power_w[idx] = p;
        }
    }
    Ok(action)
}

/// Full decision of the battery-greedy scheduler.
#[derive(Debug, Clone)]
pub struct HoDecision {
    pub action: RoundAction,
    pub plan: RoundPlan,
    /// Round delay of the initial plan and after every refinement sweep;
    /// non-increasing by construction.
    pub sweep_delays_s: Vec<f64>,
}

/// Battery-greedy scheduling with block-coordinate refinement.
///
/// Selects the `n_select` clients with the most stored energy, associates
/// each with its strongest-gain server, and starts from even shares with
/// maximal feasible (f, p). Each sweep then revisits every server: members'
/// (f, p) are re-maximized at their current shares and the server's band is
/// re-split optimally; the server keeps the new configuration only if its
/// delay strictly improved, so recorded delays never increase. Stops at a
/// fixed point or after `adjust_attempts` capped at 20 sweeps.
pub fn decide_ho(
    clients: &[ClientState],
    channels: &ChannelMatrix,
    n_select: usize,
    cfg: &SystemConfig,
) -> Result<HoDecision, BaselineError> {
    if n_select > clients.len() {
        return Err(BaselineError::SelectionTooLarge {
            requested: n_select,
            available: clients.len(),
        });
    }
    let n = clients.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        clients[b]
            .battery_j
            .partial_cmp(&clients[a].battery_j)
            .expect("finite batteries")
            .then(a.cmp(&b))
    });
    let mut chosen: Vec<usize> = order.into_iter().take(n_select).collect();
    chosen.sort_unstable();

    let mut action = RoundAction::idle(n);
    let mut plan = RoundPlan::empty(n);
    let servers = channels.servers();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); servers];
    for &idx in &chosen {
        members[channels.best_server(idx)].push(idx);
    }
    // Initial maximal (f, p) at even shares; infeasible clients drop out.
    for member_list in members.iter_mut() {
        let share = 1.0 / member_list.len().max(1) as f64;
        member_list.retain(|&idx| {
            let k = channels.best_server(idx);
            let gain = channels.gain(idx, k);
            match max_feasible_power_freq(&clients[idx], gain, share, cfg) {
                Some((f, p)) => {
                    action.selected[idx] = true;
                    action.cpu_freq_hz[idx] = f;
                    action.tx_power_w[idx] = p;
                    plan.assignment[idx] = Some(k);
                    plan.bandwidth[idx] = share;
                    true
                }
                None => false,
            }
        });
        let share = 1.0 / member_list.len().max(1) as f64;
        for &idx in member_list.iter() {
            plan.bandwidth[idx] = share;
        }
    }

    let server_delay = |action: &RoundAction, plan: &RoundPlan, list: &[usize], k: usize| {
        list.iter()
            .map(|&idx| {
                let t_cmp = cmp_latency(true, cfg, clients[idx].cycles_per_bit, action.cpu_freq_hz[idx])
                    .expect("positive frequency");
                let rate = tx_rate(
                    plan.bandwidth[idx],
                    cfg.bandwidth_hz,
                    action.tx_power_w[idx],
                    channels.gain(idx, k),
                    cfg.noise_w,
                );
                t_cmp + cfg.edge_overhead_s + cfg.model_bits / rate
            })
            .fold(0.0, f64::max)
    };

    let mut delays: Vec<f64> = (0..servers)
        .map(|k| server_delay(&action, &plan, &members[k], k))
        .collect();
    let mut sweep_delays = vec![delays.iter().cloned().fold(0.0, f64::max)];

    let max_sweeps = cfg.adjust_attempts.min(20);
    for _ in 0..max_sweeps {
        let mut improved = false;
        for k in 0..servers {
            if members[k].is_empty() {
                continue;
            }
            // Candidate: re-maximize (f, p) at current shares, then re-split
            // the band optimally for the new timings.
            let mut cand_action = action.clone();
            for &idx in &members[k] {
                let gain = channels.gain(idx, k);
                if let Some((f, p)) =
                    max_feasible_power_freq(&clients[idx], gain, plan.bandwidth[idx], cfg)
                {
                    cand_action.cpu_freq_hz[idx] = f;
                    cand_action.tx_power_w[idx] = p;
                }
            }
            let inst = BwInstance {
                fixed_delay_s: members[k]
                    .iter()
                    .map(|&idx| {
                        cmp_latency(true, cfg, clients[idx].cycles_per_bit, cand_action.cpu_freq_hz[idx])
                            .expect("positive frequency")
                            + cfg.edge_overhead_s
                    })
                    .collect(),
                full_band_upload_s: members[k]
                    .iter()
                    .map(|&idx| {
                        let per_hz = (1.0
                            + cand_action.tx_power_w[idx] * channels.gain(idx, k) / cfg.noise_w)
                            .log2();
                        cfg.model_bits / (cfg.bandwidth_hz * per_hz)
                    })
                    .collect(),
            };
            let (shares, t_new) = solve_bandwidth(&inst, DEFAULT_TOL).expect("feasible members");
            if t_new < delays[k] - 1e-12 {
                for (pos, &idx) in members[k].iter().enumerate() {
                    action.cpu_freq_hz[idx] = cand_action.cpu_freq_hz[idx];
                    action.tx_power_w[idx] = cand_action.tx_power_w[idx];
                    plan.bandwidth[idx] = shares[pos];
                }
                delays[k] = t_new;
                improved = true;
            }
        }
        sweep_delays.push(delays.iter().cloned().fold(0.0, f64::max));
        if !improved {
            break;
        }
    }

    Ok(HoDecision {
        action,
        plan,
        sweep_delays_s: sweep_delays,
    })
}

/// Decodes the extended actor output that carries every decision.
///
/// Layout: selection scores (N), frequencies (N), powers (N), association
/// scores (N x K), bandwidth weights (N). The first three blocks decode like
/// the phase-1 action; each selected client joins the server with its highest
/// association score (ties to the lowest id) and receives its weight's share
/// of that server's band, renormalized over the server's members.
pub fn decode_full(
    raw: &[f64],
    clients: &[ClientState],
    servers: usize,
    round: usize,
    cfg: &SystemConfig,
) -> (RoundAction, RoundPlan) {
    let n = clients.len();
    assert_eq!(raw.len(), n * (servers + 4), "extended action length");
    let action = decode_action(&raw[..3 * n], clients, round, cfg);
    let logits = &raw[3 * n..3 * n + n * servers];
    let weights = &raw[3 * n + n * servers..];
    let mut plan = RoundPlan::empty(n);
    let mut sums = vec![0.0; servers];
    for i in 0..n {
        if !action.selected[i] {
            continue;
        }
        let row = &logits[i * servers..(i + 1) * servers];
        let mut best = 0;
        for k in 1..servers {
            if row[k] > row[best] {
                best = k;
            }
        }
        plan.assignment[i] = Some(best);
        // Weights shift to [0, 1] with a floor so every member gets a
        // nonzero share.
        plan.bandwidth[i] = ((weights[i] + 1.0) / 2.0).clamp(1e-6, 1.0);
        sums[best] += plan.bandwidth[i];
    }
    for i in 0..n {
        if let Some(k) = plan.assignment[i] {
            plan.bandwidth[i] /= sums[k];
        }
    }
    (action, plan)
}
