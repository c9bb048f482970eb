//! Prompt-phase execution across in-process ranks.
//!
//! Every rank runs on its own thread and talks to its peers only through
//! typed, layer-tagged messages over dedicated point-to-point channels.
//!
//! * TSP: per layer, each rank projects its rows, shares its K/V segment with
//!   every other rank, and attends its queries over the full gathered K/V.
//!   Completing the gather is the layer's global synchronization point.
//! * KVR: per layer, rank `i > 0` waits for the cache of positions
//!   `0..b_i` from rank `i - 1`, appends its own rows, forwards the result
//!   to rank `i + 1` and attends with mask offset `b_i`.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    causal_attention_counted, post_attention, project_layer, CausalMask, KVCacheSegment, Matrix,
    Scalar, WeightSet,
};
use crate::partition::ContextPartition;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    Serial,
    #[serde(rename = "TSP")]
    Tsp,
    #[serde(rename = "KVR")]
    Kvr,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Serial => "Serial",
            Strategy::Tsp => "TSP",
            Strategy::Kvr => "KVR",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageKind {
    /// Chained cache from rank `i` to rank `i + 1`.
    KvHandoff,
    /// One rank's local K/V rows, sent to every other rank.
    GatherShare,
}

#[derive(Clone, Debug)]
pub struct WorkerMessage<T = f64> {
    pub kind: MessageKind,
    pub from: usize,
    pub layer: usize,
    pub payload: KVCacheSegment<T>,
}

/// Instrumented counts, indexed `[rank][layer]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionMetrics {
    pub n_layers: usize,
    /// QKᵀ row products formed by each rank.
    pub dot_products: Vec<Vec<u64>>,
    /// (K, V) row pairs each rank put on the wire, counted once per recipient.
    pub kv_pairs_sent: Vec<Vec<u64>>,
    pub kv_pairs_received: Vec<Vec<u64>>,
    /// Global synchronization points across the whole run.
    pub barrier_count: usize,
    /// Blocking receives performed by each rank.
    pub wait_events: Vec<usize>,
}

impl ExecutionMetrics {
    fn for_ranks(ranks: usize, n_layers: usize) -> Self {
        Self {
            n_layers,
            dot_products: vec![vec![0; n_layers]; ranks],
            kv_pairs_sent: vec![vec![0; n_layers]; ranks],
            kv_pairs_received: vec![vec![0; n_layers]; ranks],
            barrier_count: 0,
            wait_events: vec![0; ranks],
        }
    }

    /// Dot products per rank for a single layer (all layers do identical work).
    pub fn dot_products_per_layer(&self) -> Vec<u64> {
        self.dot_products
            .iter()
            .map(|l| l.iter().sum::<u64>() / self.n_layers as u64)
            .collect()
    }

    pub fn max_dot_products_per_layer(&self) -> u64 {
        self.dot_products_per_layer().into_iter().max().unwrap_or(0)
    }

    /// Total pairs put on the wire in one layer.
    pub fn kv_pairs_sent_per_layer(&self) -> u64 {
        self.total_kv_pairs_sent() / self.n_layers as u64
    }

    pub fn kv_rows_sent_per_layer(&self) -> u64 {
        2 * self.kv_pairs_sent_per_layer()
    }

    pub fn total_kv_pairs_sent(&self) -> u64 {
        self.kv_pairs_sent.iter().flatten().sum()
    }

    /// K rows plus V rows; always twice the pair count.
    pub fn kv_rows_sent(&self) -> u64 {
        2 * self.total_kv_pairs_sent()
    }

    /// Rows (K and V) received by each rank in one layer.
    pub fn kv_rows_received_per_layer(&self) -> Vec<u64> {
        self.kv_pairs_received
            .iter()
            .map(|l| 2 * l.iter().sum::<u64>() / self.n_layers as u64)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ExecutionResult<T = f64> {
    /// All `C` output rows, assembled in rank order.
    pub hidden_out: Matrix<T>,
    /// Row `C - 1` of `hidden_out`.
    pub first_token_hidden: Vec<T>,
    /// Full per-layer cache as held by the last rank.
    pub cache: Vec<KVCacheSegment<T>>,
    pub metrics: ExecutionMetrics,
}

/// Deliberate protocol faults for negative testing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultKind {
    /// The message is never sent.
    Drop,
    /// The message is sent twice.
    Duplicate,
    /// The message carries the wrong layer tag.
    Mislabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fault {
    pub rank: usize,
    pub layer: usize,
    pub kind: FaultKind,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub fault: Option<Fault>,
}

/// Executes the prompt phase and returns assembled outputs plus metrics.
pub fn run<T: Scalar>(
    strategy: Strategy,
    context: &Matrix<T>,
    partition: &ContextPartition,
    weights: &WeightSet<T>,
) -> Result<ExecutionResult<T>> {
    run_with(strategy, context, partition, weights, &RunOptions::default())
}

pub fn run_with<T: Scalar>(
    strategy: Strategy,
    context: &Matrix<T>,
    partition: &ContextPartition,
    weights: &WeightSet<T>,
    options: &RunOptions,
) -> Result<ExecutionResult<T>> {
    if partition.context_length() != context.rows() {
        return Err(Error::Input(format!(
            "partition covers {} tokens but the context has {}",
            partition.context_length(),
            context.rows()
        )));
    }
    if strategy == Strategy::Serial && partition.process_count() != 1 {
        return Err(Error::Input(format!(
            "serial execution needs one process, got {}",
            partition.process_count()
        )));
    }
    let ranks = partition.process_count();
    let n_layers = weights.layers.len();

    // senders[src][dst] and receivers[dst][src] are the two ends of one link.
    let mut senders: Vec<Vec<Option<Sender<WorkerMessage<T>>>>> = (0..ranks).map(|_| Vec::new()).collect();
    let mut receivers: Vec<Vec<Option<Receiver<WorkerMessage<T>>>>> = (0..ranks).map(|_| Vec::new()).collect();
    for src in 0..ranks {
        for dst in 0..ranks {
            let wanted = match strategy {
                Strategy::Serial => false,
                Strategy::Tsp => src != dst,
                Strategy::Kvr => dst == src + 1,
            };
            if wanted {
                let (tx, rx) = channel();
                senders[src].push(Some(tx));
                receivers[dst].push(Some(rx));
            } else {
                senders[src].push(None);
                receivers[dst].push(None);
            }
        }
    }

    let outcomes: Vec<(Result<RankOutput<T>>, bool)> = thread::scope(|scope| {
        let handles: Vec<_> = senders
            .into_iter()
            .zip(receivers)
            .enumerate()
            .map(|(rank, (outbox, inbox))| {
                let peer_lost = Arc::new(AtomicBool::new(false));
                let worker = Worker {
                    rank,
                    strategy,
                    partition,
                    weights,
                    fault: options.fault.filter(|f| f.rank == rank),
                    outbox,
                    inbox,
                    peer_lost: Arc::clone(&peer_lost),
                };
                let local = context.slice_rows(partition.range(rank).start, partition.range(rank).end);
                let handle = scope.spawn(move || worker.run(local?));
                (handle, peer_lost)
            })
            .collect();
        handles
            .into_iter()
            .map(|(h, peer_lost)| {
                let outcome = h.join().unwrap_or_else(|_| {
                    Err(Error::Protocol {
                        rank: usize::MAX,
                        detail: "worker panicked".into(),
                    })
                });
                (outcome, peer_lost.load(Ordering::Relaxed))
            })
            .collect()
    });

    let mut metrics = ExecutionMetrics::for_ranks(ranks, n_layers);
    let mut hidden = Vec::with_capacity(ranks);
    let mut cache = Vec::new();
    // A rank that failed only because a peer vanished is reported last.
    let mut first_error: Option<(bool, Error)> = None;
    for (rank, (outcome, peer_lost)) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(out) => {
                metrics.dot_products[rank] = out.dot_products;
                metrics.kv_pairs_sent[rank] = out.pairs_sent;
                metrics.kv_pairs_received[rank] = out.pairs_received;
                metrics.wait_events[rank] = out.wait_events;
                hidden.push(out.hidden);
                cache = out.cache;
            }
            Err(e) => {
                if first_error.as_ref().map_or(true, |(lost, _)| *lost && !peer_lost) {
                    first_error = Some((peer_lost, e));
                }
            }
        }
    }
    if let Some((_, e)) = first_error {
        return Err(e);
    }
    // One all-gather per layer; a lone rank has nothing to gather.
    if strategy == Strategy::Tsp && ranks > 1 {
        metrics.barrier_count = n_layers;
    }
    let hidden_out = assemble_output(&hidden, partition)?;
    let first_token_hidden = hidden_out.row(hidden_out.rows() - 1).to_vec();
    Ok(ExecutionResult {
        hidden_out,
        first_token_hidden,
        cache,
        metrics,
    })
}

struct RankOutput<T> {
    hidden: Matrix<T>,
    cache: Vec<KVCacheSegment<T>>,
    dot_products: Vec<u64>,
    pairs_sent: Vec<u64>,
    pairs_received: Vec<u64>,
    wait_events: usize,
}

struct Worker<'a, T> {
    rank: usize,
    strategy: Strategy,
    partition: &'a ContextPartition,
    weights: &'a WeightSet<T>,
    fault: Option<Fault>,
    outbox: Vec<Option<Sender<WorkerMessage<T>>>>,
    inbox: Vec<Option<Receiver<WorkerMessage<T>>>>,
    /// Set when a send or receive failed because the other end was dropped.
    peer_lost: Arc<AtomicBool>,
}

impl<T: Scalar> Worker<'_, T> {
    fn protocol(&self, detail: String) -> Error {
        Error::Protocol {
            rank: self.rank,
            detail,
        }
    }

    fn send(&self, dst: usize, kind: MessageKind, segment: &KVCacheSegment<T>) -> Result<()> {
        let tx = self.outbox[dst]
            .as_ref()
            .ok_or_else(|| self.protocol(format!("no link to rank {dst}")))?;
        let mut msg = WorkerMessage {
            kind,
            from: self.rank,
            layer: segment.layer,
            payload: segment.clone(),
        };
        let copies = match self.fault {
            Some(f) if f.layer == segment.layer => match f.kind {
                FaultKind::Drop => 0,
                FaultKind::Duplicate => 2,
                FaultKind::Mislabel => {
                    msg.layer += 1;
                    1
                }
            },
            _ => 1,
        };
        for _ in 0..copies {
            if tx.send(msg.clone()).is_err() {
                self.peer_lost.store(true, Ordering::Relaxed);
                return Err(self.protocol(format!("rank {dst} hung up")));
            }
        }
        Ok(())
    }

    fn recv(&self, src: usize, kind: MessageKind, layer: usize) -> Result<WorkerMessage<T>> {
        let rx = self.inbox[src]
            .as_ref()
            .ok_or_else(|| self.protocol(format!("no link from rank {src}")))?;
        let msg = rx.recv().map_err(|_| {
            self.peer_lost.store(true, Ordering::Relaxed);
            self.protocol(format!("missing {kind:?} for layer {layer} from rank {src}"))
        })?;
        if msg.kind != kind || msg.layer != layer || msg.from != src || msg.payload.layer != layer {
            return Err(self.protocol(format!(
                "expected {kind:?} for layer {layer} from rank {src}, got {:?} for layer {} from rank {}",
                msg.kind, msg.layer, msg.from
            )));
        }
        Ok(msg)
    }

    fn run(mut self, mut hidden: Matrix<T>) -> Result<RankOutput<T>> {
        let n_layers = self.weights.layers.len();
        let layout = self.weights.config.layout();
        let ranks = self.partition.process_count();
        let range = self.partition.range(self.rank);
        let mut out = RankOutput {
            hidden: Matrix::zeros(0, 0),
            cache: Vec::with_capacity(n_layers),
            dot_products: vec![0; n_layers],
            pairs_sent: vec![0; n_layers],
            pairs_received: vec![0; n_layers],
            wait_events: 0,
        };
        for layer in 0..n_layers {
            let (q, k, v) = project_layer(&hidden, self.weights, layer)?;
            let local = KVCacheSegment::new(layer, range.start, k, v)?;
            let full = match self.strategy {
                Strategy::Serial => local,
                Strategy::Kvr => {
                    let cache = if self.rank == 0 {
                        local
                    } else {
                        let msg = self.recv(self.rank - 1, MessageKind::KvHandoff, layer)?;
                        out.wait_events += 1;
                        if msg.payload.start_pos != 0 || msg.payload.end_pos != range.start {
                            return Err(self.protocol(format!(
                                "handoff covers {}..{}, expected 0..{}",
                                msg.payload.start_pos, msg.payload.end_pos, range.start
                            )));
                        }
                        out.pairs_received[layer] += msg.payload.len() as u64;
                        msg.payload.concat(&local)?
                    };
                    if self.rank + 1 < ranks {
                        self.send(self.rank + 1, MessageKind::KvHandoff, &cache)?;
                        out.pairs_sent[layer] += cache.len() as u64;
                    }
                    cache
                }
                Strategy::Tsp => {
                    for dst in (0..ranks).filter(|d| *d != self.rank) {
                        self.send(dst, MessageKind::GatherShare, &local)?;
                        out.pairs_sent[layer] += local.len() as u64;
                    }
                    let mut gathered = None::<KVCacheSegment<T>>;
                    for src in 0..ranks {
                        let part = if src == self.rank {
                            local.clone()
                        } else {
                            let msg = self.recv(src, MessageKind::GatherShare, layer)?;
                            out.wait_events += 1;
                            let expected = self.partition.range(src);
                            if msg.payload.start_pos != expected.start || msg.payload.end_pos != expected.end {
                                return Err(self.protocol(format!(
                                    "share from rank {src} covers {}..{}, expected {:?}",
                                    msg.payload.start_pos, msg.payload.end_pos, expected
                                )));
                            }
                            out.pairs_received[layer] += msg.payload.len() as u64;
                            msg.payload
                        };
                        gathered = Some(match gathered {
                            None => part,
                            Some(g) => g.concat(&part)?,
                        });
                    }
                    gathered.expect("at least one rank")
                }
            };
            let mask = CausalMask {
                offset: range.start,
                rows: range.len(),
            };
            let attn = causal_attention_counted(&q, &full.k, &full.v, &mask, &layout)?;
            out.dot_products[layer] = attn.dot_products;
            hidden = post_attention(&hidden, &attn.attn, self.weights, layer)?;
            out.cache.push(full);
        }

        // Hang up first so peers draining their inboxes can finish, then make
        // sure nothing unexpected is still queued for us.
        self.outbox.clear();
        for (src, rx) in self.inbox.iter().enumerate() {
            if let Some(rx) = rx {
                if let Ok(msg) = rx.recv() {
                    return Err(self.protocol(format!(
                        "unexpected {:?} for layer {} from rank {src}",
                        msg.kind, msg.layer
                    )));
                }
            }
        }
        out.hidden = hidden;
        Ok(out)
    }
}

/// Analytic QKᵀ row products per rank for one layer.
///
/// KVR rank `i` scores `c_i · b_{i+1}`; TSP rank `i` scores `c_i · C`.
pub fn dot_product_counts(strategy: Strategy, partition: &ContextPartition) -> Vec<u64> {
    let c = partition.context_length() as u64;
    let b = partition.boundaries();
    match strategy {
        Strategy::Serial => vec![c * c],
        Strategy::Tsp => partition.sizes().iter().map(|s| *s as u64 * c).collect(),
        Strategy::Kvr => partition
            .sizes()
            .iter()
            .zip(&b[1..])
            .map(|(s, end)| (*s * *end) as u64)
            .collect(),
    }
}

/// Total (K, V) pairs put on the wire in one layer.
///
/// TSP: every rank shares its `c_i` rows with `p − 1` peers, `(p − 1)·C`.
/// KVR: rank `i < p − 1` forwards its whole cache, `Σ b_{i+1}`.
pub fn traffic_pairs(strategy: Strategy, partition: &ContextPartition) -> u64 {
    let p = partition.process_count() as u64;
    match strategy {
        Strategy::Serial => 0,
        Strategy::Tsp => (p - 1) * partition.context_length() as u64,
        Strategy::Kvr => partition.boundaries()[1..partition.process_count()]
            .iter()
            .map(|b| *b as u64)
            .sum(),
    }
}

/// Stacks per-rank outputs in rank order.
pub fn assemble_output<T: Scalar>(blocks: &[Matrix<T>], partition: &ContextPartition) -> Result<Matrix<T>> {
    let sizes = partition.sizes();
    if blocks.len() != sizes.len() {
        return Err(Error::Assembly(format!(
            "{} blocks for {} ranks",
            blocks.len(),
            sizes.len()
        )));
    }
    for (rank, (block, size)) in blocks.iter().zip(&sizes).enumerate() {
        if block.rows() != *size {
            return Err(Error::Assembly(format!(
                "rank {rank} produced {} rows, expected {size}",
                block.rows()
            )));
        }
    }
    let refs: Vec<&Matrix<T>> = blocks.iter().collect();
    Matrix::vstack(&refs).map_err(|e| Error::Assembly(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward_serial, init_weights, synthetic_context, ModelConfig};
    use crate::partition::even_partition;

    fn weights(layers: usize) -> WeightSet<f64> {
        init_weights(&ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_kv_heads: 1,
            n_layers: layers,
            seed: 3,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn analytic_counts_match_figures() {
        let kvr = ContextPartition::from_sizes(&[4, 3, 2]).unwrap();
        assert_eq!(dot_product_counts(Strategy::Kvr, &kvr), vec![16, 21, 18]);
        let tsp = even_partition(9, 3).unwrap();
        assert_eq!(dot_product_counts(Strategy::Tsp, &tsp), vec![27, 27, 27]);
        let one = even_partition(7, 1).unwrap();
        assert_eq!(dot_product_counts(Strategy::Kvr, &one), vec![49]);
        assert_eq!(dot_product_counts(Strategy::Tsp, &one), vec![49]);
        assert_eq!(dot_product_counts(Strategy::Serial, &one), vec![49]);
    }

    #[test]
    fn traffic_closed_forms() {
        let even = even_partition(12, 3).unwrap();
        assert_eq!(traffic_pairs(Strategy::Tsp, &even), 24);
        assert_eq!(traffic_pairs(Strategy::Kvr, &even), 12);
        let kvr = ContextPartition::from_sizes(&[4, 3, 2]).unwrap();
        assert_eq!(traffic_pairs(Strategy::Kvr, &kvr), 11);
        assert_eq!(traffic_pairs(Strategy::Kvr, &even_partition(5, 1).unwrap()), 0);
    }

    #[test]
    fn kvr_run_reports_figure_counts() {
        let w = weights(2);
        let x = synthetic_context::<f64>(9, 8, 1);
        let part = ContextPartition::from_sizes(&[4, 3, 2]).unwrap();
        let res = run(Strategy::Kvr, &x, &part, &w).unwrap();
        assert_eq!(res.metrics.dot_products_per_layer(), vec![16, 21, 18]);
        assert_eq!(res.metrics.kv_pairs_sent_per_layer(), 11);
        assert_eq!(res.metrics.kv_rows_sent_per_layer(), 22);
        assert_eq!(res.metrics.barrier_count, 0);
        assert_eq!(res.metrics.wait_events, vec![0, 2, 2]);
    }

    #[test]
    fn tsp_run_reports_figure_counts() {
        let w = weights(2);
        let x = synthetic_context::<f64>(9, 8, 1);
        let part = even_partition(9, 3).unwrap();
        let res = run(Strategy::Tsp, &x, &part, &w).unwrap();
        assert_eq!(res.metrics.dot_products_per_layer(), vec![27, 27, 27]);
        assert_eq!(res.metrics.kv_rows_sent_per_layer(), 36);
        assert_eq!(res.metrics.kv_rows_received_per_layer(), vec![12, 12, 12]);
        assert_eq!(res.metrics.barrier_count, 2);
    }

    #[test]
    fn strategies_match_serial_and_share_the_full_cache() {
        let w = weights(3);
        let x = synthetic_context::<f64>(13, 8, 5);
        let (serial, serial_cache) = forward_serial(&x, &w).unwrap();
        let part = ContextPartition::from_sizes(&[6, 4, 2, 1]).unwrap();
        for strategy in [Strategy::Tsp, Strategy::Kvr] {
            let res = run(strategy, &x, &part, &w).unwrap();
            assert!(res.hidden_out.max_rel_deviation(&serial) < 1e-12);
            assert_eq!(res.first_token_hidden, serial.row(12).to_vec());
            assert_eq!(res.cache.len(), 3);
            for (a, b) in res.cache.iter().zip(&serial_cache) {
                assert!(a.k.max_rel_deviation(&b.k) < 1e-12);
            }
        }
        let one = even_partition(13, 1).unwrap();
        let res = run(Strategy::Serial, &x, &one, &w).unwrap();
        assert_eq!(res.hidden_out, serial);
        assert_eq!(res.metrics.total_kv_pairs_sent(), 0);
        assert_eq!(res.metrics.barrier_count, 0);
    }

    #[test]
    fn input_errors() {
        let w = weights(1);
        let x = synthetic_context::<f64>(9, 8, 1);
        let part = even_partition(8, 2).unwrap();
        assert!(matches!(run(Strategy::Kvr, &x, &part, &w), Err(Error::Input(_))));
        let part = even_partition(9, 3).unwrap();
        assert!(matches!(run(Strategy::Serial, &x, &part, &w), Err(Error::Input(_))));
    }

    #[test]
    fn protocol_faults_surface() {
        let w = weights(3);
        let x = synthetic_context::<f64>(9, 8, 1);
        let part = ContextPartition::from_sizes(&[4, 3, 2]).unwrap();
        for strategy in [Strategy::Kvr, Strategy::Tsp] {
            for kind in [FaultKind::Drop, FaultKind::Duplicate, FaultKind::Mislabel] {
                for layer in [0, 2] {
                    let opts = RunOptions {
                        fault: Some(Fault { rank: 1, layer, kind }),
                    };
                    let res = run_with(strategy, &x, &part, &w, &opts);
                    assert!(
                        matches!(res, Err(Error::Protocol { .. })),
                        "{strategy} {kind:?} layer {layer}: {res:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn assembly_checks_row_counts() {
        let part = ContextPartition::from_sizes(&[2, 3]).unwrap();
        let a = Matrix::<f64>::from_fn(2, 2, |r, _| r as f64);
        let b = Matrix::<f64>::from_fn(3, 2, |r, _| 10.0 + r as f64);
        let m = assemble_output(&[a.clone(), b.clone()], &part).unwrap();
        assert_eq!(m.rows(), 5);
        assert_eq!(m.get(2, 0), 10.0);
        assert!(matches!(assemble_output(&[b, a.clone()], &part), Err(Error::Assembly(_))));
        let single = ContextPartition::from_sizes(&[2]).unwrap();
        assert_eq!(assemble_output(&[a.clone()], &single).unwrap(), a);
    }
}
