//! The stochastic world: client placement, wireless channels, energy
//! arrivals, and battery dynamics, plus assembly of the observation vector
//! fed to learning schedulers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;

/// One battery-powered client device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    pub id: usize,
    /// Position in meters, relative to the area center.
    pub position: (f64, f64),
    /// Stored energy at the start of the current round (J).
    pub battery_j: f64,
    /// Stored energy at the end of the previous round's active interval (J).
    pub battery_end_on_j: f64,
    /// Mean energy harvest rate (J/s).
    pub harvest_mean_jps: f64,
    /// CPU cycles needed per bit of training data.
    pub cycles_per_bit: f64,
    /// Effective switched capacitance of the CPU.
    pub capacitance: f64,
    /// CPU frequency cap (Hz).
    pub f_max_hz: f64,
    /// Transmit power cap (W).
    pub p_max_w: f64,
    /// Round in which this client last participated; 0 before any selection.
    pub last_selected_round: usize,
}

impl ClientState {
    /// Rounds since last participation, clipped to `cap`.
    pub fn staleness(&self, round: usize, cap: usize) -> usize {
        round.saturating_sub(self.last_selected_round).min(cap)
    }
}

/// Fixed per-run topology: clients plus edge server positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub clients: Vec<ClientState>,
    /// Edge server positions in meters.
    pub servers: Vec<(f64, f64)>,
}

impl World {
    /// Returns the world to its episode-start condition: batteries at half
    /// capacity, no participation history. Topology is untouched so repeated
    /// episodes share the same scenario.
    pub fn reset_episode(&mut self, cfg: &SystemConfig) {
        for c in &mut self.clients {
            c.battery_j = cfg.battery_capacity_j / 2.0;
            c.battery_end_on_j = c.battery_j;
            c.last_selected_round = 0;
        }
    }
}

/// Linear power gains for every client-server link, fixed within one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    clients: usize,
    servers: usize,
    /// Row-major by client: entry `n * servers + k`.
    gains: Vec<f64>,
}

impl ChannelMatrix {
    pub fn from_gains(clients: usize, servers: usize, gains: Vec<f64>) -> Self {
        assert_eq!(gains.len(), clients * servers);
        ChannelMatrix {
            clients,
            servers,
            gains,
        }
    }

    pub fn gain(&self, client: usize, server: usize) -> f64 {
        self.gains[client * self.servers + server]
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    /// The server with the strongest gain for a client; ties go to the lowest
    /// server id.
    pub fn best_server(&self, client: usize) -> usize {
        let mut best = 0;
        for k in 1..self.servers {
            if self.gain(client, k) > self.gain(client, best) {
                best = k;
            }
        }
        best
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("client {client}: energy spend exceeds stored plus harvested energy")]
    EnergyCausality { client: usize },
}

/// Builds the per-run topology. Clients are placed uniformly in the disk,
/// servers on a ring at half the radius; per-client hardware constants are
/// drawn from their configured ranges.
pub fn init_world(cfg: &SystemConfig, rng: &mut ChaCha8Rng) -> World {
    let mut clients = Vec::with_capacity(cfg.clients);
    for id in 0..cfg.clients {
        let r = cfg.area_radius_m * rng.random_range(0.0..1.0f64).sqrt();
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let cycles_per_bit = rng.random_range(cfg.cycles_per_bit_min..=cfg.cycles_per_bit_max);
        let harvest_mean_jps = rng.random_range(cfg.harvest_min_jps..=cfg.harvest_max_jps);
        clients.push(ClientState {
            id,
            position: (r * theta.cos(), r * theta.sin()),
            battery_j: cfg.battery_capacity_j / 2.0,
            battery_end_on_j: cfg.battery_capacity_j / 2.0,
            harvest_mean_jps,
            cycles_per_bit,
            capacitance: cfg.capacitance,
            f_max_hz: cfg.f_max_hz,
            p_max_w: cfg.p_max_w,
            last_selected_round: 0,
        });
    }
    let ring = cfg.area_radius_m / 2.0;
    let servers = (0..cfg.edge_servers)
        .map(|k| {
            let theta = std::f64::consts::TAU * k as f64 / cfg.edge_servers as f64;
            (ring * theta.cos(), ring * theta.sin())
        })
        .collect();
    World { clients, servers }
}

/// Deterministic part of the link gain: 10^(-PL/10) for the distance-based
/// path loss PL = 30 log10(d_km) + 72.4 dB. Distances below 1 m are clamped
/// to keep the model bounded.
pub fn path_gain(distance_m: f64) -> f64 {
    let d_km = distance_m.max(1.0) / 1000.0;
    let pl_db = 30.0 * d_km.log10() + 72.4;
    10f64.powf(-pl_db / 10.0)
}

/// Draws fresh fading for every link: path gain times a unit-mean exponential
/// power coefficient.
pub fn draw_channels(world: &World, rng: &mut ChaCha8Rng) -> ChannelMatrix {
    let fading = Exp::new(1.0).expect("unit-rate exponential");
    let n = world.clients.len();
    let k = world.servers.len();
    let mut gains = Vec::with_capacity(n * k);
    for client in &world.clients {
        for server in &world.servers {
            let dx = client.position.0 - server.0;
            let dy = client.position.1 - server.1;
            let d = (dx * dx + dy * dy).sqrt();
            gains.push(path_gain(d) * fading.sample(rng));
        }
    }
    ChannelMatrix::from_gains(n, k, gains)
}

/// Energy harvested over `duration` seconds at the given mean rate.
///
/// Arrivals are Poisson counts of millijoule packets: one draw per whole
/// second at the full rate, plus one draw for the fractional remainder at a
/// proportionally reduced rate.
pub fn harvest_energy(mean_jps: f64, duration_s: f64, rng: &mut ChaCha8Rng) -> f64 {
    assert!(duration_s >= 0.0, "negative harvest duration");
    let rate_mj = mean_jps * 1000.0;
    if rate_mj <= 0.0 {
        return 0.0;
    }
    let mut total_mj = 0.0;
    let whole = duration_s.floor();
    if whole >= 1.0 {
        let per_second = Poisson::new(rate_mj).expect("positive rate");
        for _ in 0..whole as u64 {
            total_mj += per_second.sample(rng);
        }
    }
    let tail = duration_s - whole;
    if tail > 0.0 && rate_mj * tail > 0.0 {
        total_mj += Poisson::new(rate_mj * tail)
            .expect("positive rate")
            .sample(rng);
    }
    total_mj / 1000.0
}

/// Advances one client's battery across a round.
///
/// `harvested_on_j` is the energy collected during the client's active
/// interval; it is drawn by the caller so the feasibility gate and this
/// transition see the same realization. Idle-time harvest over
/// `t_round - t_on` and, on cloud rounds, harvest over the cloud overhead
/// window are drawn here. The battery clamps to capacity at both stages.
#[allow(clippy::too_many_arguments)]
pub fn apply_round_transition(
    client: &mut ClientState,
    harvested_on_j: f64,
    e_cmp_j: f64,
    e_com_j: f64,
    t_on_s: f64,
    t_round_s: f64,
    cloud_round: bool,
    cfg: &SystemConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(), EnvError> {
    if client.battery_j + harvested_on_j < e_cmp_j + e_com_j {
        return Err(EnvError::EnergyCausality { client: client.id });
    }
    let cap = cfg.battery_capacity_j;
    let end_on = (client.battery_j + harvested_on_j - e_cmp_j - e_com_j).min(cap);
    let idle = (t_round_s - t_on_s).max(0.0);
    let mut refill = harvest_energy(client.harvest_mean_jps, idle, rng);
    if cloud_round {
        refill += harvest_energy(client.harvest_mean_jps, cfg.cloud_overhead_s, rng);
    }
    client.battery_end_on_j = end_on;
    client.battery_j = (end_on + refill).min(cap);
    Ok(())
}

/// Flattens the observable world into the scheduler input vector.
///
/// Layout, all lengths in client order: previous-round end-of-activity
/// batteries (N), current batteries (N), link gains row-major by client
/// (N*K), then staleness counts clipped at the forced-selection limit (N).
pub fn assemble_state(
    clients: &[ClientState],
    channels: &ChannelMatrix,
    round: usize,
    cfg: &SystemConfig,
) -> Vec<f64> {
    let n = clients.len();
    let k = channels.servers();
    let mut s = Vec::with_capacity(n * (k + 3));
    s.extend(clients.iter().map(|c| c.battery_end_on_j));
    s.extend(clients.iter().map(|c| c.battery_j));
    for c in 0..n {
        for srv in 0..k {
            s.push(channels.gain(c, srv));
        }
    }
    s.extend(
        clients
            .iter()
            .map(|c| c.staleness(round, cfg.max_stale_rounds) as f64),
    );
    s
}
