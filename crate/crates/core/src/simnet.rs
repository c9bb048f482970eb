//! Discrete-event TTFT model for Serial, TSP and KVR execution.
//!
//! Per layer, rank `i` spends `proj_coeff·c_i` projecting, then
//! `alpha·dots_i + softmax_coeff·c_i` on attention, then `fixed_overhead`.
//! Transfers take `latency + pairs·kv_scale/bandwidth`, where `kv_scale` is
//! `n_kv_heads / n_heads` so grouped and multi-query attention ship smaller
//! caches.
//!
//! * KVR: the incoming cache is awaited behind the projection, and the
//!   outgoing send (issued right after concatenation) runs under the
//!   attention phase; whichever side is longer sets the pace. Each link
//!   carries one message at a time.
//! * TSP: a layer's all-gather starts once every rank has projected and takes
//!   `ceil(log2 p)·latency + slowdown·max_i(C − c_i)·kv_scale/bandwidth`,
//!   i.e. it runs at the pace of its slowest link. Nobody attends before the
//!   gather completes.
//!
//! Events are processed from one priority queue ordered by
//! `(time, rank, layer, kind)`, so timelines are fully deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Strategy;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::partition::{even_partition, hierarchical_grid_search, ContextPartition, SearchConfig};

/// Compute-time coefficients, all in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    /// Per QKᵀ row product, per layer.
    pub alpha: f64,
    /// Per token per layer for the QKV, output and feed-forward projections.
    pub proj_coeff: f64,
    /// Per attention row per layer.
    pub softmax_coeff: f64,
    /// Per layer.
    pub fixed_overhead: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            alpha: 5e-10,
            proj_coeff: 3e-6,
            softmax_coeff: 2e-7,
            fixed_overhead: 1e-4,
        }
    }
}

impl CostModel {
    pub fn attention_only(alpha: f64) -> Self {
        Self {
            alpha,
            proj_coeff: 0.0,
            softmax_coeff: 0.0,
            fixed_overhead: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.proj_coeff, self.softmax_coeff, self.fixed_overhead];
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || fields.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config(format!("invalid cost model {self:?}")));
        }
        Ok(())
    }
}

/// Linear chain of ranks; every adjacent pair shares one link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkModel {
    /// Full-width (MHA) KV pairs per second per link. `null` in JSON means unlimited.
    #[serde(with = "unlimited")]
    pub bandwidth: f64,
    /// Seconds per message.
    pub latency: f64,
}

mod unlimited {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        v.is_finite().then_some(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Bytes in one fp16 K+V row pair of a 4096-wide model.
const PAIR_BYTES: f64 = 2.0 * 4096.0 * 2.0;

impl Default for NetworkModel {
    fn default() -> Self {
        Self::from_bytes_per_second(300e9, 1e-5)
    }
}

impl NetworkModel {
    pub fn from_bytes_per_second(bytes: f64, latency: f64) -> Self {
        Self {
            bandwidth: bytes / PAIR_BYTES,
            latency,
        }
    }

    /// 10 GB/s links.
    pub fn low_bandwidth() -> Self {
        Self::from_bytes_per_second(10e9, 1e-5)
    }

    /// Infinite bandwidth, zero latency.
    pub fn zero_comm() -> Self {
        Self {
            bandwidth: f64::INFINITY,
            latency: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || !(self.latency >= 0.0) {
            return Err(Error::Config(format!("invalid network model {self:?}")));
        }
        Ok(())
    }
}

/// Background traffic that slows one random adjacent link per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSidecar {
    pub seed: u64,
    /// Multiplier (>= 1) on the transfer time of the degraded link.
    pub slowdown_factor: f64,
}

impl NoiseSidecar {
    /// Degraded link per layer; link `k` joins ranks `k` and `k + 1`.
    pub fn degraded_links(&self, ranks: usize, layers: usize) -> Vec<Option<usize>> {
        if ranks < 2 {
            return vec![None; layers];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..layers).map(|_| Some(rng.gen_range(0..ranks - 1))).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerEvents {
    pub compute_start: f64,
    pub compute_end: f64,
    /// KVR: when the outgoing cache hit the link. TSP: when this rank joined the gather.
    pub send_start: Option<f64>,
    /// KVR: arrival of the incoming cache. TSP: gather completion.
    pub recv_ready: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub strategy: Strategy,
    /// Indexed `[rank][layer]`.
    pub events: Vec<Vec<LayerEvents>>,
    /// Completion of the final layer on the last rank to finish.
    pub ttft: f64,
    /// Wire time of every transfer at nominal bandwidth, excluding latency.
    pub transfer_seconds: f64,
}

impl Timeline {
    /// One JSON object per line: `{"rank", "layer", "event", "time"}`.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for (rank, layers) in self.events.iter().enumerate() {
            for (layer, ev) in layers.iter().enumerate() {
                let mut points = vec![("compute_start", ev.compute_start)];
                if let Some(t) = ev.recv_ready {
                    points.push(("recv_ready", t));
                }
                if let Some(t) = ev.send_start {
                    points.push(("send_start", t));
                }
                points.push(("compute_end", ev.compute_end));
                for (event, time) in points {
                    let line = serde_json::json!({
                        "rank": rank,
                        "layer": layer,
                        "event": event,
                        "time": time,
                    });
                    out.push_str(&line.to_string());
                    out.push('\n');
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    LayerStart,
    ProjDone,
    KvArrive,
    GatherDone,
    LayerDone,
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    rank: usize,
    layer: usize,
    kind: EventKind,
}

impl Event {
    fn key(&self) -> (usize, usize, EventKind) {
        (self.rank, self.layer, self.kind)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.key().cmp(&self.key()))
    }
}

struct Simulation<'a> {
    strategy: Strategy,
    sizes: Vec<usize>,
    boundaries: &'a [usize],
    context: usize,
    layers: usize,
    cost: &'a CostModel,
    net: &'a NetworkModel,
    kv_scale: f64,
    degraded: Vec<Option<usize>>,
    slowdown: f64,
    queue: BinaryHeap<Event>,
    events: Vec<Vec<LayerEvents>>,
    projected: Vec<Vec<bool>>,
    arrived: Vec<Vec<bool>>,
    gather_joined: Vec<usize>,
    link_free: Vec<f64>,
    transfer_seconds: f64,
}

impl Simulation<'_> {
    fn push(&mut self, time: f64, rank: usize, layer: usize, kind: EventKind) {
        self.queue.push(Event { time, rank, layer, kind });
    }

    fn wire_time(&self, pairs: usize) -> f64 {
        pairs as f64 * self.kv_scale / self.net.bandwidth
    }

    fn link_factor(&self, link: usize, layer: usize) -> f64 {
        if self.degraded[layer] == Some(link) {
            self.slowdown
        } else {
            1.0
        }
    }

    fn attention_time(&self, rank: usize, dots: u64) -> f64 {
        self.cost.alpha * dots as f64 + self.cost.softmax_coeff * self.sizes[rank] as f64
    }

    fn start_attention(&mut self, rank: usize, layer: usize, now: f64) {
        let ranks = self.sizes.len();
        let prefix = self.boundaries[rank + 1];
        let compute_end = now + self.attention_time(rank, (self.sizes[rank] * prefix) as u64);
        let mut end = compute_end;
        if rank + 1 < ranks {
            let start = now.max(self.link_free[rank]);
            let nominal = self.wire_time(prefix);
            let busy = nominal * self.link_factor(rank, layer);
            self.link_free[rank] = start + busy;
            self.transfer_seconds += nominal;
            self.events[rank][layer].send_start = Some(start);
            self.push(start + busy + self.net.latency, rank + 1, layer, EventKind::KvArrive);
            end = end.max(start + busy);
        }
        self.push(end + self.cost.fixed_overhead, rank, layer, EventKind::LayerDone);
    }

    fn gather_time(&self, layer: usize) -> f64 {
        let ranks = self.sizes.len();
        let rounds = (ranks as f64).log2().ceil();
        let volume = self.sizes.iter().map(|c| self.context - c).max().unwrap_or(0);
        let slowdown = if self.degraded[layer].is_some() { self.slowdown } else { 1.0 };
        rounds * self.net.latency + slowdown * self.wire_time(volume)
    }

    fn handle(&mut self, ev: Event) {
        let Event { time, rank, layer, kind } = ev;
        let ranks = self.sizes.len();
        match kind {
            EventKind::LayerStart => {
                self.events[rank][layer].compute_start = time;
                let proj = self.cost.proj_coeff * self.sizes[rank] as f64;
                self.push(time + proj, rank, layer, EventKind::ProjDone);
            }
            EventKind::ProjDone => match self.strategy {
                Strategy::Tsp if ranks > 1 => {
                    self.events[rank][layer].send_start = Some(time);
                    self.gather_joined[layer] += 1;
                    if self.gather_joined[layer] == ranks {
                        for c in &self.sizes {
                            self.transfer_seconds += self.wire_time((ranks - 1) * c);
                        }
                        let done = time + self.gather_time(layer);
                        self.push(done, 0, layer, EventKind::GatherDone);
                    }
                }
                _ => {
                    self.projected[rank][layer] = true;
                    if rank == 0 || self.arrived[rank][layer] {
                        self.start_attention(rank, layer, time);
                    }
                }
            },
            EventKind::KvArrive => {
                self.arrived[rank][layer] = true;
                self.events[rank][layer].recv_ready = Some(time);
                if self.projected[rank][layer] {
                    self.start_attention(rank, layer, time);
                }
            }
            EventKind::GatherDone => {
                for r in 0..ranks {
                    self.events[r][layer].recv_ready = Some(time);
                    let dots = (self.sizes[r] * self.context) as u64;
                    let end = time + self.attention_time(r, dots) + self.cost.fixed_overhead;
                    self.push(end, r, layer, EventKind::LayerDone);
                }
            }
            EventKind::LayerDone => {
                self.events[rank][layer].compute_end = time;
                if layer + 1 < self.layers {
                    self.push(time, rank, layer + 1, EventKind::LayerStart);
                }
            }
        }
    }
}

/// Simulated timeline of one prompt phase.
///
/// `Serial` ignores the partition and runs the whole context on one rank.
pub fn simulate_ttft(
    strategy: Strategy,
    partition: &ContextPartition,
    model: &ModelConfig,
    cost: &CostModel,
    net: &NetworkModel,
    noise: Option<&NoiseSidecar>,
) -> Timeline {
    let serial;
    let partition = if strategy == Strategy::Serial && partition.process_count() != 1 {
        serial = even_partition(partition.context_length(), 1).expect("non-empty context");
        &serial
    } else {
        partition
    };
    let ranks = partition.process_count();
    let layers = model.n_layers;
    let degraded = match noise {
        Some(n) => n.degraded_links(ranks, layers),
        None => vec![None; layers],
    };
    let mut sim = Simulation {
        strategy,
        sizes: partition.sizes(),
        boundaries: partition.boundaries(),
        context: partition.context_length(),
        layers,
        cost,
        net,
        kv_scale: model.n_kv_heads as f64 / model.n_heads as f64,
        degraded,
        slowdown: noise.map_or(1.0, |n| n.slowdown_factor),
        queue: BinaryHeap::new(),
        events: vec![vec![LayerEvents::default(); layers]; ranks],
        projected: vec![vec![false; layers]; ranks],
        arrived: vec![vec![false; layers]; ranks],
        gather_joined: vec![0; layers],
        link_free: vec![0.0; ranks],
        transfer_seconds: 0.0,
    };
    if layers > 0 {
        for rank in 0..ranks {
            sim.push(0.0, rank, 0, EventKind::LayerStart);
        }
    }
    while let Some(ev) = sim.queue.pop() {
        sim.handle(ev);
    }
    let ttft = sim
        .events
        .iter()
        .filter_map(|l| l.last().map(|e| e.compute_end))
        .fold(0.0, f64::max);
    Timeline {
        strategy,
        events: sim.events,
        ttft,
        transfer_seconds: sim.transfer_seconds,
    }
}

/// `(alpha·C²/2)·(1/p + 1/p²)`: attention-only TTFT with a perfectly balanced
/// chain and free communication, where `alpha·C²` is the one-rank TTFT.
pub fn ttft_star(context_length: usize, processes: usize, alpha: f64) -> f64 {
    let c = context_length as f64;
    let p = processes as f64;
    alpha * c * c / 2.0 * (1.0 / p + 1.0 / (p * p))
}

/// KVR with a searched partition and free communication.
pub fn ttft_practical_lower(
    context_length: usize,
    processes: usize,
    model: &ModelConfig,
    cost: &CostModel,
    search: &SearchConfig,
) -> Result<f64> {
    let net = NetworkModel::zero_comm();
    if processes == 1 {
        let part = even_partition(context_length, 1)?;
        return Ok(simulate_ttft(Strategy::Kvr, &part, model, cost, &net, None).ttft);
    }
    let eval = |p: &ContextPartition| Ok(simulate_ttft(Strategy::Kvr, p, model, cost, &net, None).ttft);
    Ok(hierarchical_grid_search(context_length, processes, search, eval)?.ttft)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseStudy {
    pub quiet_ttft: f64,
    pub trials: usize,
    /// Mean of `(noisy − quiet) / quiet`, in percent.
    pub mean_pct: f64,
    pub max_pct: f64,
}

/// Repeats the simulation with a noisy sidecar seeded `seed, seed + 1, ..`.
pub fn noise_study(
    strategy: Strategy,
    partition: &ContextPartition,
    model: &ModelConfig,
    cost: &CostModel,
    net: &NetworkModel,
    slowdown_factor: f64,
    seed: u64,
    trials: usize,
) -> Result<NoiseStudy> {
    if trials == 0 {
        return Err(Error::Input("noise study needs at least one trial".into()));
    }
    if !(slowdown_factor >= 1.0) {
        return Err(Error::Config(format!("slowdown factor {slowdown_factor} is below 1")));
    }
    let quiet = simulate_ttft(strategy, partition, model, cost, net, None).ttft;
    let degradations: Vec<f64> = (0..trials as u64)
        .map(|t| {
            let noise = NoiseSidecar {
                seed: seed.wrapping_add(t),
                slowdown_factor,
            };
            let noisy = simulate_ttft(strategy, partition, model, cost, net, Some(&noise)).ttft;
            100.0 * (noisy - quiet) / quiet
        })
        .collect();
    Ok(NoiseStudy {
        quiet_ttft: quiet,
        trials,
        mean_pct: degradations.iter().sum::<f64>() / trials as f64,
        max_pct: degradations.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Least-squares `alpha` for `t ≈ alpha·C²`.
pub fn calibrate_alpha(measurements: &[(usize, f64)]) -> Result<f64> {
    let (num, den) = measurements.iter().fold((0.0, 0.0), |(n, d), (c, t)| {
        let c2 = (*c as f64).powi(2);
        (n + t * c2, d + c2 * c2)
    });
    if den == 0.0 {
        return Err(Error::Calibration(
            "need at least one measurement with a non-empty context".into(),
        ));
    }
    Ok(num / den)
}
