//! Client-to-server association and bandwidth for one round.
//!
//! Starting from the strongest-gain association, the search repeatedly finds
//! the straggler server (the one gating the round) and tries to shed its load
//! by moving one of its clients to another server, or swapping one of its
//! clients with another server's. Candidate configurations whose changed
//! server/client sets were already seen as stragglers are skipped. Only
//! strictly shorter round delays are accepted; the search stops when a full
//! pass yields no improvement or after a configured number of passes.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::bandwidth::{solve_bandwidth, BwInstance, DEFAULT_TOL};
use crate::config::SystemConfig;
use crate::cost::{cmp_latency, RoundAction, RoundPlan};
use crate::env::{ChannelMatrix, ClientState};

/// How each server's band is split among its clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BwPolicy {
    /// Minimize the server's straggler delay.
    Optimal,
    /// Equal share per client.
    Even,
}

/// Association search output.
#[derive(Debug, Clone, PartialEq)]
pub struct ScabaResult {
    pub plan: RoundPlan,
    pub server_delays_s: Vec<f64>,
    pub round_delay_s: f64,
    /// Incumbent delay after initialization and after every accepted
    /// improvement; non-increasing.
    pub incumbent_delays_s: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScabaError {
    #[error("no clients selected")]
    NoneSelected,
    #[error("client {client}: cannot reach any server (zero rate or zero frequency)")]
    NoFeasibleClient { client: usize },
    #[error("exhaustive search supports at most {max_clients} clients and {max_servers} servers")]
    TooLarge {
        max_clients: usize,
        max_servers: usize,
    },
}

/// Bandwidth-independent delay and per-server full-band upload time for the
/// participants of one round, indexed by position in the participant list.
struct CostTables {
    /// Participant client ids, ascending.
    members: Vec<usize>,
    /// Compute time plus edge overhead per participant (s).
    fixed_delay_s: Vec<f64>,
    /// Full-band upload time per (participant, server); infinite when the
    /// link supports no rate.
    upload_s: Vec<Vec<f64>>,
}

impl CostTables {
    fn build(
        action: &RoundAction,
        channels: &ChannelMatrix,
        clients: &[ClientState],
        cfg: &SystemConfig,
    ) -> Result<CostTables, ScabaError> {
        let members: Vec<usize> = (0..clients.len())
            .filter(|&n| action.selected[n])
            .collect();
        if members.is_empty() {
            return Err(ScabaError::NoneSelected);
        }
        let mut fixed = Vec::with_capacity(members.len());
        let mut upload = Vec::with_capacity(members.len());
        for &n in &members {
            let f = action.cpu_freq_hz[n];
            let p = action.tx_power_w[n];
            let t_cmp = cmp_latency(true, cfg, clients[n].cycles_per_bit, f)
                .map_err(|_| ScabaError::NoFeasibleClient { client: n })?;
            fixed.push(t_cmp + cfg.edge_overhead_s);
            let row: Vec<f64> = (0..channels.servers())
                .map(|k| {
                    let per_hz = (1.0 + p * channels.gain(n, k) / cfg.noise_w).log2();
                    if per_hz > 0.0 {
                        cfg.model_bits / (cfg.bandwidth_hz * per_hz)
                    } else {
                        f64::INFINITY
                    }
                })
                .collect();
            if row.iter().all(|c| !c.is_finite()) {
                return Err(ScabaError::NoFeasibleClient { client: n });
            }
            upload.push(row);
        }
        Ok(CostTables {
            members,
            fixed_delay_s: fixed,
            upload_s: upload,
        })
    }
}

/// Per-server delays, per-participant shares, and the round delay for one
/// association (`assoc[i]` is the server of participant `i`).
fn evaluate(
    tables: &CostTables,
    assoc: &[usize],
    servers: usize,
    policy: BwPolicy,
) -> (Vec<f64>, Vec<f64>, f64) {
    let mut server_delays = vec![0.0; servers];
    let mut shares = vec![0.0; assoc.len()];
    for k in 0..servers {
        let members: Vec<usize> = (0..assoc.len()).filter(|&i| assoc[i] == k).collect();
        if members.is_empty() {
            continue;
        }
        if members.iter().any(|&i| !tables.upload_s[i][k].is_finite()) {
            server_delays[k] = f64::INFINITY;
            for &i in &members {
                shares[i] = 1.0 / members.len() as f64;
            }
            continue;
        }
        let inst = BwInstance {
            fixed_delay_s: members.iter().map(|&i| tables.fixed_delay_s[i]).collect(),
            full_band_upload_s: members.iter().map(|&i| tables.upload_s[i][k]).collect(),
        };
        match policy {
            BwPolicy::Optimal => {
                let (b, t) = solve_bandwidth(&inst, DEFAULT_TOL)
                    .expect("validated instance is solvable");
                for (pos, &i) in members.iter().enumerate() {
                    shares[i] = b[pos];
                }
                server_delays[k] = t;
            }
            BwPolicy::Even => {
                let m = members.len() as f64;
                let mut worst: f64 = 0.0;
                for &i in &members {
                    shares[i] = 1.0 / m;
                    worst = worst.max(tables.fixed_delay_s[i] + tables.upload_s[i][k] * m);
                }
                server_delays[k] = worst;
            }
        }
    }
    let round = server_delays.iter().cloned().fold(0.0, f64::max);
    (server_delays, shares, round)
}

/// Slowest server; ties go to the lowest id.
fn straggler(server_delays: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..server_delays.len() {
        if server_delays[k] > server_delays[best] {
            best = k;
        }
    }
    best
}

/// Strongest-gain association: participant `i` goes to its best server.
pub fn init_association(members: &[usize], channels: &ChannelMatrix) -> Vec<usize> {
    members.iter().map(|&n| channels.best_server(n)).collect()
}

fn server_set(assoc: &[usize], tables: &CostTables, server: usize) -> Vec<usize> {
    (0..assoc.len())
        .filter(|&i| assoc[i] == server)
        .map(|i| tables.members[i])
        .collect()
}

fn to_plan(tables: &CostTables, assoc: &[usize], shares: &[f64], n_clients: usize) -> RoundPlan {
    let mut plan = RoundPlan::empty(n_clients);
    for (i, &client) in tables.members.iter().enumerate() {
        plan.assignment[client] = Some(assoc[i]);
        plan.bandwidth[client] = shares[i];
    }
    plan
}

/// Runs the association search for the clients selected in `action`.
///
/// Participants and their frequencies/powers come from the action; random
/// move/swap candidates come from `rng`, so results are reproducible per
/// stream.
pub fn run_scaba(
    action: &RoundAction,
    channels: &ChannelMatrix,
    clients: &[ClientState],
    cfg: &SystemConfig,
    policy: BwPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<ScabaResult, ScabaError> {
    let tables = CostTables::build(action, channels, clients, cfg)?;
    let servers = channels.servers();
    let mut assoc = init_association(&tables.members, channels);
    let (mut server_delays, mut shares, mut incumbent) =
        evaluate(&tables, &assoc, servers, policy);
    let mut incumbents = vec![incumbent];
    let mut history: HashSet<(usize, Vec<usize>)> = HashSet::new();

    let accept = |candidate: &[usize],
                      history: &mut HashSet<(usize, Vec<usize>)>,
                      changed: [usize; 2],
                      incumbent: f64|
     -> Option<(Vec<f64>, Vec<f64>, f64)> {
        for &k in &changed {
            if history.contains(&(k, server_set(candidate, &tables, k))) {
                return None;
            }
        }
        let (delays, new_shares, t) = evaluate(&tables, candidate, servers, policy);
        let v_new = straggler(&delays);
        history.insert((v_new, server_set(candidate, &tables, v_new)));
        if t < incumbent {
            Some((delays, new_shares, t))
        } else {
            None
        }
    };

    'passes: for pass in 0..cfg.adjust_attempts {
        let v_star = straggler(&server_delays);
        let straggler_members: Vec<usize> =
            (0..assoc.len()).filter(|&i| assoc[i] == v_star).collect();
        if straggler_members.is_empty() {
            break;
        }
        // Move sweep: shift one random straggler client to each other server.
        for l in 0..servers {
            if l == v_star {
                continue;
            }
            let i = straggler_members[rng.random_range(0..straggler_members.len())];
            let mut candidate = assoc.clone();
            candidate[i] = l;
            if let Some((delays, new_shares, t)) =
                accept(&candidate, &mut history, [v_star, l], incumbent)
            {
                log::debug!(
                    "pass {pass}: move client {} to server {l}: {incumbent:.6} -> {t:.6}",
                    tables.members[i]
                );
                assoc = candidate;
                server_delays = delays;
                shares = new_shares;
                incumbent = t;
                incumbents.push(t);
                continue 'passes;
            }
        }
        // Swap sweep: exchange a random straggler client with a random client
        // of each other server.
        for l in 0..servers {
            if l == v_star {
                continue;
            }
            let other_members: Vec<usize> =
                (0..assoc.len()).filter(|&i| assoc[i] == l).collect();
            if other_members.is_empty() {
                continue;
            }
            let i = straggler_members[rng.random_range(0..straggler_members.len())];
            let j = other_members[rng.random_range(0..other_members.len())];
            let mut candidate = assoc.clone();
            candidate[i] = l;
            candidate[j] = v_star;
            if let Some((delays, new_shares, t)) =
                accept(&candidate, &mut history, [v_star, l], incumbent)
            {
                log::debug!(
                    "pass {pass}: swap clients {} and {}: {incumbent:.6} -> {t:.6}",
                    tables.members[i],
                    tables.members[j]
                );
                assoc = candidate;
                server_delays = delays;
                shares = new_shares;
                incumbent = t;
                incumbents.push(t);
                continue 'passes;
            }
        }
        // Neither sweep improved the incumbent.
        break;
    }

    Ok(ScabaResult {
        plan: to_plan(&tables, &assoc, &shares, clients.len()),
        server_delays_s: server_delays,
        round_delay_s: incumbent,
        incumbent_delays_s: incumbents,
    })
}

/// Exact optimum by enumerating every association, for verification at small
/// sizes. Bandwidth per server is solved the same way as the search's
/// optimal policy.
pub fn enumerate_oracle(
    action: &RoundAction,
    channels: &ChannelMatrix,
    clients: &[ClientState],
    cfg: &SystemConfig,
) -> Result<(RoundPlan, f64), ScabaError> {
    let tables = CostTables::build(action, channels, clients, cfg)?;
    let servers = channels.servers();
    let m = tables.members.len();
    if m > 8 || servers > 3 {
        return Err(ScabaError::TooLarge {
            max_clients: 8,
            max_servers: 3,
        });
    }
    let mut best: Option<(Vec<usize>, Vec<f64>, f64)> = None;
    let total = servers.pow(m as u32);
    let mut assoc = vec![0usize; m];
    for idx in 0..total {
        let mut rem = idx;
        for slot in assoc.iter_mut() {
            *slot = rem % servers;
            rem /= servers;
        }
        let (_, shares, t) = evaluate(&tables, &assoc, servers, BwPolicy::Optimal);
        if best.as_ref().is_none_or(|(_, _, b)| t < *b) {
            best = Some((assoc.clone(), shares, t));
        }
    }
    let (assoc, shares, t) = best.expect("at least one association exists");
    Ok((to_plan(&tables, &assoc, &shares, clients.len()), t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::spawn_stream;

    fn cfg() -> SystemConfig {
        SystemConfig::default()
    }

    fn client(id: usize, cycles: f64) -> ClientState {
        ClientState {
            id,
            position: (0.0, 0.0),
            battery_j: 2.5,
            battery_end_on_j: 2.5,
            harvest_mean_jps: 0.5,
            cycles_per_bit: cycles,
            capacitance: 2.0e-28,
            f_max_hz: 3.0e9,
            p_max_w: 1.0,
            last_selected_round: 0,
        }
    }

    fn all_selected(n: usize, f: f64, p: f64) -> RoundAction {
        RoundAction {
            selected: vec![true; n],
            cpu_freq_hz: vec![f; n],
            tx_power_w: vec![p; n],
        }
    }

    #[test]
    fn init_association_prefers_strongest_gain() {
        let ch = ChannelMatrix::from_gains(1, 3, vec![1e-6, 1e-8, 1e-9]);
        assert_eq!(init_association(&[0], &ch), vec![0]);
        let tie = ChannelMatrix::from_gains(1, 3, vec![1e-8, 2e-8, 2e-8]);
        assert_eq!(init_association(&[0], &tie), vec![1]);
        let single = ChannelMatrix::from_gains(3, 1, vec![1e-7, 2e-7, 3e-7]);
        assert_eq!(init_association(&[0, 1, 2], &single), vec![0, 0, 0]);
    }

    #[test]
    fn single_server_reduces_to_one_bandwidth_solve() {
        let c = cfg();
        let clients = vec![client(0, 40.0), client(1, 80.0)];
        let action = all_selected(2, 2.0e9, 0.5);
        let ch = ChannelMatrix::from_gains(2, 1, vec![2e-7, 1e-7]);
        let mut rng = spawn_stream(1, "scaba.e0");
        let res = run_scaba(&action, &ch, &clients, &c, BwPolicy::Optimal, &mut rng).unwrap();
        assert_eq!(res.plan.assignment, vec![Some(0), Some(0)]);
        assert_eq!(res.incumbent_delays_s.len(), 1);
        // Cross-check against a direct solve of the same instance.
        let t0 = cmp_latency(true, &c, 40.0, 2.0e9).unwrap() + c.edge_overhead_s;
        let t1 = cmp_latency(true, &c, 80.0, 2.0e9).unwrap() + c.edge_overhead_s;
        let up = |g: f64| c.model_bits / (c.bandwidth_hz * (1.0 + 0.5 * g / c.noise_w).log2());
        let inst = BwInstance {
            fixed_delay_s: vec![t0, t1],
            full_band_upload_s: vec![up(2e-7), up(1e-7)],
        };
        let (_, t) = solve_bandwidth(&inst, DEFAULT_TOL).unwrap();
        assert_eq!(res.round_delay_s, t);
    }

    #[test]
    fn balanced_pair_keeps_initial_association() {
        let c = cfg();
        let clients = vec![client(0, 50.0), client(1, 50.0)];
        let action = all_selected(2, 2.0e9, 0.5);
        // Each client strictly best at its own server, identical loads.
        let ch = ChannelMatrix::from_gains(2, 2, vec![3e-7, 1e-8, 1e-8, 3e-7]);
        let mut rng = spawn_stream(2, "scaba.e0");
        let res = run_scaba(&action, &ch, &clients, &c, BwPolicy::Optimal, &mut rng).unwrap();
        assert_eq!(res.plan.assignment, vec![Some(0), Some(1)]);
        assert_eq!(res.plan.bandwidth, vec![1.0, 1.0]);
    }

    #[test]
    fn incumbents_never_increase_and_beat_enumeration_sometimes() {
        let c = cfg();
        let mut worse_than_oracle = 0u32;
        for seed in 0..40u64 {
            let mut world_rng = spawn_stream(seed, "world");
            let n = 4;
            let clients: Vec<ClientState> = (0..n)
                .map(|i| {
                    client(
                        i,
                        30.0 + 70.0 * rand::Rng::random_range(&mut world_rng, 0.0..1.0),
                    )
                })
                .collect();
            let gains: Vec<f64> = (0..n * 2)
                .map(|_| 1e-8 * 10f64.powf(rand::Rng::random_range(&mut world_rng, 0.0..2.0)))
                .collect();
            let ch = ChannelMatrix::from_gains(n, 2, gains);
            let action = all_selected(n, 1.5e9, 0.6);
            let mut rng = spawn_stream(seed, "scaba.e0");
            let res = run_scaba(&action, &ch, &clients, &c, BwPolicy::Optimal, &mut rng).unwrap();
            for w in res.incumbent_delays_s.windows(2) {
                assert!(w[1] < w[0]);
            }
            assert!(res.round_delay_s <= res.incumbent_delays_s[0]);
            let (_, t_opt) = enumerate_oracle(&action, &ch, &clients, &c).unwrap();
            assert!(res.round_delay_s >= t_opt - 1e-9);
            if res.round_delay_s > t_opt + 1e-6 {
                worse_than_oracle += 1;
            }
        }
        // The search is a heuristic; it should at least usually match the
        // oracle at this size.
        assert!(worse_than_oracle <= 20, "gap in {worse_than_oracle}/40 runs");
    }

    #[test]
    fn single_server_matches_oracle_exactly() {
        let c = cfg();
        for seed in 0..20u64 {
            let mut wr = spawn_stream(seed, "world");
            let clients: Vec<ClientState> = (0..3)
                .map(|i| client(i, 30.0 + (seed as f64 * 7.0 + i as f64 * 13.0) % 70.0))
                .collect();
            let gains: Vec<f64> = (0..3)
                .map(|_| 1e-8 * 10f64.powf(rand::Rng::random_range(&mut wr, 0.0..2.0)))
                .collect();
            let ch = ChannelMatrix::from_gains(3, 1, gains);
            let action = all_selected(3, 2.0e9, 0.7);
            let mut rng = spawn_stream(seed, "scaba.e0");
            let res = run_scaba(&action, &ch, &clients, &c, BwPolicy::Optimal, &mut rng).unwrap();
            let (plan, t) = enumerate_oracle(&action, &ch, &clients, &c).unwrap();
            assert_eq!(res.plan, plan);
            assert_eq!(res.round_delay_s, t);
        }
    }

    #[test]
    fn even_policy_splits_equally() {
        let c = cfg();
        let clients = vec![client(0, 40.0), client(1, 60.0), client(2, 80.0)];
        let action = all_selected(3, 2.0e9, 0.5);
        let ch = ChannelMatrix::from_gains(3, 1, vec![2e-7, 1e-7, 3e-7]);
        let mut rng = spawn_stream(3, "scaba.e0");
        let res = run_scaba(&action, &ch, &clients, &c, BwPolicy::Even, &mut rng).unwrap();
        for n in 0..3 {
            assert!((res.plan.bandwidth[n] - 1.0 / 3.0).abs() < 1e-12);
        }
        // Round delay equals the slowest even-share completion.
        let up = |g: f64| c.model_bits / (c.bandwidth_hz * (1.0 + 0.5 * g / c.noise_w).log2());
        let worst = (0..3)
            .map(|n| {
                cmp_latency(true, &c, clients[n].cycles_per_bit, 2.0e9).unwrap()
                    + c.edge_overhead_s
                    + up(ch.gain(n, 0)) * 3.0
            })
            .fold(f64::MIN, f64::max);
        assert!((res.round_delay_s - worst).abs() < 1e-12);
    }

    #[test]
    fn zero_power_client_is_infeasible() {
        let c = cfg();
        let clients = vec![client(0, 40.0)];
        let mut action = all_selected(1, 2.0e9, 0.5);
        action.tx_power_w[0] = 0.0;
        let ch = ChannelMatrix::from_gains(1, 2, vec![1e-7, 2e-7]);
        let mut rng = spawn_stream(4, "scaba.e0");
        let err = run_scaba(&action, &ch, &clients, &c, BwPolicy::Optimal, &mut rng).unwrap_err();
        assert!(matches!(err, ScabaError::NoFeasibleClient { client: 0 }));
    }

    #[test]
    fn nothing_selected_is_an_error() {
        let c = cfg();
        let clients = vec![client(0, 40.0)];
        let action = RoundAction::idle(1);
        let ch = ChannelMatrix::from_gains(1, 1, vec![1e-7]);
        let mut rng = spawn_stream(5, "scaba.e0");
        assert!(matches!(
            run_scaba(&action, &ch, &clients, &c, BwPolicy::Optimal, &mut rng),
            Err(ScabaError::NoneSelected)
        ));
    }

    #[test]
    fn oracle_rejects_large_instances() {
        let c = cfg();
        let clients: Vec<ClientState> = (0..9).map(|i| client(i, 40.0)).collect();
        let action = all_selected(9, 2.0e9, 0.5);
        let ch = ChannelMatrix::from_gains(9, 1, vec![1e-7; 9]);
        assert!(matches!(
            enumerate_oracle(&action, &ch, &clients, &c),
            Err(ScabaError::TooLarge { .. })
        ));
    }

    #[test]
    fn search_is_deterministic_per_stream() {
        let c = cfg();
        let clients: Vec<ClientState> = (0..5).map(|i| client(i, 35.0 + 10.0 * i as f64)).collect();
        let action = all_selected(5, 1.8e9, 0.4);
        let gains: Vec<f64> = (0..10).map(|i| 1e-8 * (1.0 + i as f64)).collect();
        let ch = ChannelMatrix::from_gains(5, 2, gains);
        let a = run_scaba(
            &action,
            &ch,
            &clients,
            &c,
            BwPolicy::Optimal,
            &mut spawn_stream(7, "scaba.e3"),
        )
        .unwrap();
        let b = run_scaba(
            &action,
            &ch,
            &clients,
            &c,
            BwPolicy::Optimal,
            &mut spawn_stream(7, "scaba.e3"),
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
