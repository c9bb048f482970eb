//! Brute-force references for verification.
//!
//! Nothing here reuses the attention, masking or search code under test;
//! only weight generation is shared.

use serde::{Deserialize, Serialize};

use crate::engine::{run, run_with, ExecutionMetrics, RunOptions, Strategy};
use crate::error::{Error, Result};
use crate::model::{
    forward_serial, init_weights, synthetic_context, Matrix, ModelConfig, Precision, Scalar, WeightSet,
};
use crate::partition::{even_partition, ContextPartition};

pub const DEFAULT_SEARCH_BUDGET: u128 = 1_000_000;

/// Outcome of comparing an implementation against a reference.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub case: String,
    pub checks: usize,
    /// One line per failed check, `expected` vs `actual`.
    pub mismatches: Vec<String>,
    pub max_abs_deviation: f64,
    pub max_rel_deviation: f64,
}

impl OracleReport {
    pub fn new(case: impl Into<String>) -> Self {
        Self {
            case: case.into(),
            ..Self::default()
        }
    }

    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    /// Records one scalar comparison; a mismatch is `|e − a| > tol·max(1, |e|)`.
    pub fn compare(&mut self, what: &str, expected: f64, actual: f64, tol: f64) {
        self.checks += 1;
        let abs = (expected - actual).abs();
        let rel = abs / expected.abs().max(1.0);
        self.max_abs_deviation = self.max_abs_deviation.max(abs);
        self.max_rel_deviation = self.max_rel_deviation.max(rel);
        if !(rel <= tol) {
            self.mismatches.push(format!("{what}: expected {expected}, got {actual}"));
        }
    }

    /// Element-wise [`compare`](Self::compare) of two matrices.
    pub fn compare_matrices(&mut self, what: &str, expected: &Matrix<f64>, actual: &Matrix<f64>, tol: f64) {
        if expected.shape() != actual.shape() {
            self.checks += 1;
            self.mismatches.push(format!(
                "{what}: expected shape {:?}, got {:?}",
                expected.shape(),
                actual.shape()
            ));
            return;
        }
        // Keep one line per matrix; the deviations still accumulate.
        let before = self.mismatches.len();
        for (e, a) in expected.as_slice().iter().zip(actual.as_slice()) {
            self.compare(what, *e, *a, tol);
            self.mismatches.truncate(before + 1);
        }
    }

    pub fn merge(&mut self, other: OracleReport) {
        self.checks += other.checks;
        self.mismatches.extend(other.mismatches);
        self.max_abs_deviation = self.max_abs_deviation.max(other.max_abs_deviation);
        self.max_rel_deviation = self.max_rel_deviation.max(other.max_rel_deviation);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `rows x in` times the `in x out` weight stored row-major in `w`.
fn project(x: &[Vec<f64>], w: &Matrix<f64>) -> Vec<Vec<f64>> {
    let (n_in, n_out) = w.shape();
    let w = w.as_slice();
    x.iter()
        .map(|row| {
            let mut out = vec![0.0; n_out];
            for (o, slot) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in 0..n_in {
                    acc += row[i] * w[i * n_out + o];
                }
                *slot = acc;
            }
            out
        })
        .collect()
}

fn rms(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
            let inv = 1.0 / (ms + 1e-6).sqrt();
            row.iter().map(|v| v * inv).collect()
        })
        .collect()
}

/// Full causal forward pass with explicit loops.
///
/// Each query only ever looks at keys `0..=i`, so no mask constant is
/// involved.
pub fn naive_causal_forward(context: &Matrix<f64>, weights: &WeightSet<f64>) -> Result<Matrix<f64>> {
    let cfg = &weights.config;
    cfg.validate()?;
    if context.rows() == 0 {
        return Err(Error::Input("context must hold at least one token".into()));
    }
    if context.cols() != cfg.d_model {
        return Err(Error::Dimension(format!(
            "context has {} columns, model width is {}",
            context.cols(),
            cfg.d_model
        )));
    }
    let hd = cfg.d_model / cfg.n_heads;
    let group = cfg.n_heads / cfg.n_kv_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let n = context.rows();
    let mut h: Vec<Vec<f64>> = (0..n).map(|r| context.row(r).to_vec()).collect();

    for lw in &weights.layers {
        let x = if cfg.rms_norm { rms(&h) } else { h.clone() };
        let q = project(&x, &lw.q_proj);
        let k = project(&x, &lw.k_proj);
        let v = project(&x, &lw.v_proj);
        let mut attn = vec![vec![0.0; cfg.d_model]; n];
        for i in 0..n {
            for head in 0..cfg.n_heads {
                let kvh = head / group;
                let qs = &q[i][head * hd..(head + 1) * hd];
                let scores: Vec<f64> = (0..=i)
                    .map(|j| dot(qs, &k[j][kvh * hd..(kvh + 1) * hd]) * scale)
                    .collect();
                let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
                let total: f64 = exps.iter().sum();
                for d in 0..hd {
                    attn[i][head * hd + d] = (0..=i).map(|j| exps[j] / total * v[j][kvh * hd + d]).sum();
                }
            }
        }
        let o = project(&attn, &lw.o_proj);
        let h1: Vec<Vec<f64>> = h
            .iter()
            .zip(&o)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        let ff_x = if cfg.rms_norm { rms(&h1) } else { h1.clone() };
        let inner: Vec<Vec<f64>> = project(&ff_x, &lw.ff_in)
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
        let ff = project(&inner, &lw.ff_out);
        h = h1
            .iter()
            .zip(&ff)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
    }
    Matrix::new(n, cfg.d_model, h.into_iter().flatten().collect())
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Number of ways to split `C` tokens into `p` non-empty contiguous parts.
pub fn feasible_partition_count(context_length: usize, processes: usize) -> u128 {
    if processes == 0 || context_length < processes {
        return 0;
    }
    binomial(context_length as u128 - 1, processes as u128 - 1)
}

/// Scores every boundary placement and returns the global optimum.
///
/// Ties go to the placement closest to the even split (sum of absolute
/// boundary shifts), then to the lexicographically smallest shifts.
pub fn exhaustive_partition_search<F>(
    context_length: usize,
    processes: usize,
    budget: u128,
    evaluator: F,
) -> Result<(ContextPartition, f64)>
where
    F: Fn(&ContextPartition) -> Result<f64>,
{
    let even = even_partition(context_length, processes)?;
    let candidates = feasible_partition_count(context_length, processes);
    if candidates > budget {
        return Err(Error::Budget { candidates, budget });
    }
    let reference: Vec<i64> = even.boundaries()[1..processes].iter().map(|b| *b as i64).collect();
    let cuts = processes - 1;
    // Interior boundaries, strictly increasing within 1..C.
    let mut inner: Vec<usize> = (1..=cuts).collect();
    let mut best: Option<(f64, u64, Vec<i64>, ContextPartition)> = None;
    loop {
        let mut bounds = Vec::with_capacity(processes + 1);
        bounds.push(0);
        bounds.extend_from_slice(&inner);
        bounds.push(context_length);
        let part = ContextPartition::from_boundaries(bounds)?;
        let score = evaluator(&part)?;
        let shifts: Vec<i64> = inner.iter().zip(&reference).map(|(b, r)| *b as i64 - r).collect();
        let dist: u64 = shifts.iter().map(|s| s.unsigned_abs()).sum();
        let wins = match &best {
            None => true,
            Some((bs, bd, bsh, _)) => {
                score < *bs || (score == *bs && (dist, &shifts) < (*bd, bsh))
            }
        };
        if wins {
            best = Some((score, dist, shifts, part));
        }

        // Next combination in lexicographic order.
        let mut i = cuts;
        loop {
            if i == 0 {
                let (score, _, _, part) = best.expect("at least one placement");
                return Ok((part, score));
            }
            i -= 1;
            if inner[i] < context_length - (cuts - i) {
                inner[i] += 1;
                for j in i + 1..cuts {
                    inner[j] = inner[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Runs the engine for every `(C, p)` with `p | C` and checks the
/// instrumented traffic against the closed forms
/// `(p − 1)·C` (TSP) and `(p − 1)·C / 2` (KVR) pairs per layer.
pub fn formula_enumeration_check(max_context: usize, max_processes: usize) -> Result<OracleReport> {
    let cfg = ModelConfig {
        d_model: 4,
        n_heads: 2,
        n_kv_heads: 2,
        n_layers: 1,
        seed: 11,
        ffn_mult: 1,
        ..ModelConfig::default()
    };
    let weights = init_weights::<f64>(&cfg)?;
    let mut report = OracleReport::new(format!(
        "traffic closed forms, C <= {max_context}, p <= {max_processes}"
    ));
    for c in 1..=max_context {
        let context = synthetic_context::<f64>(c, cfg.d_model, c as u64);
        for p in (1..=max_processes.min(c)).filter(|p| c % p == 0) {
            let part = even_partition(c, p)?;
            let tsp = run(Strategy::Tsp, &context, &part, &weights)?.metrics;
            let kvr = run(Strategy::Kvr, &context, &part, &weights)?.metrics;
            let tsp_pairs = tsp.kv_pairs_sent_per_layer();
            let kvr_pairs = kvr.kv_pairs_sent_per_layer();
            let expect_tsp = ((p - 1) * c) as f64;
            let expect_kvr = expect_tsp / 2.0;
            report.compare(&format!("TSP C={c} p={p}"), expect_tsp, tsp_pairs as f64, 0.0);
            report.compare(&format!("KVR C={c} p={p}"), expect_kvr, kvr_pairs as f64, 0.0);
            report.compare(&format!("KVR*2 vs TSP C={c} p={p}"), tsp_pairs as f64, 2.0 * kvr_pairs as f64, 0.0);
            for (name, m) in [("TSP", &tsp), ("KVR", &kvr)] {
                let received: u64 = m.kv_pairs_received.iter().flatten().sum();
                report.compare(
                    &format!("{name} sent vs received C={c} p={p}"),
                    m.total_kv_pairs_sent() as f64,
                    received as f64,
                    0.0,
                );
            }
        }
    }
    Ok(report)
}

/// Tolerance on `|a − b| / max(1, |b|)` for parallel-vs-serial checks.
pub fn equivalence_tolerance(precision: Precision) -> f64 {
    match precision {
        Precision::F32 => 1e-4,
        Precision::F64 => 1e-10,
    }
}

/// Runs `strategy` on a seeded synthetic context and compares hidden states
/// and the final cache with the serial pass. At f64 the output is also
/// checked against [`naive_causal_forward`]. Also returns the run's metrics.
pub fn equivalence_report(
    strategy: Strategy,
    model: &ModelConfig,
    partition: &ContextPartition,
    context_seed: u64,
    options: &RunOptions,
) -> Result<(OracleReport, ExecutionMetrics)> {
    match model.precision {
        Precision::F32 => equivalence_at::<f32>(strategy, model, partition, context_seed, options),
        Precision::F64 => equivalence_at::<f64>(strategy, model, partition, context_seed, options),
    }
}

fn equivalence_at<T: Scalar>(
    strategy: Strategy,
    model: &ModelConfig,
    partition: &ContextPartition,
    context_seed: u64,
    options: &RunOptions,
) -> Result<(OracleReport, ExecutionMetrics)> {
    let tol = equivalence_tolerance(model.precision);
    let weights = init_weights::<T>(model)?;
    let context = synthetic_context::<T>(partition.context_length(), model.d_model, context_seed);
    let result = run_with(strategy, &context, partition, &weights, options)?;
    let (serial, serial_cache) = forward_serial(&context, &weights)?;
    let mut report = OracleReport::new(format!(
        "{strategy} C={} p={} [{partition}] {:?}",
        partition.context_length(),
        partition.process_count(),
        model.precision
    ));
    report.compare_matrices("hidden vs serial", &serial.to_f64(), &result.hidden_out.to_f64(), tol);
    for (layer, (want, got)) in serial_cache.iter().zip(&result.cache).enumerate() {
        report.compare_matrices(&format!("K layer {layer}"), &want.k.to_f64(), &got.k.to_f64(), tol);
        report.compare_matrices(&format!("V layer {layer}"), &want.v.to_f64(), &got.v.to_f64(), tol);
    }
    if model.precision == Precision::F64 {
        let naive = naive_causal_forward(&context.to_f64(), &init_weights::<f64>(model)?)?;
        report.compare_matrices("hidden vs naive", &naive, &result.hidden_out.to_f64(), tol);
    }
    Ok((report, result.metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::dot_product_counts;
    use crate::model::forward_serial;

    fn cfg(seed: u64) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 4,
            n_kv_heads: 2,
            n_layers: 2,
            seed,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn naive_matches_serial() {
        for (c, rms_norm) in [(1, false), (16, false), (16, true), (64, false)] {
            let cfg = ModelConfig { rms_norm, ..cfg(3) };
            let w = init_weights::<f64>(&cfg).unwrap();
            let x = synthetic_context::<f64>(c, 8, 5);
            let (serial, _) = forward_serial(&x, &w).unwrap();
            let naive = naive_causal_forward(&x, &w).unwrap();
            assert!(naive.max_rel_deviation(&serial) <= 1e-10, "C={c}");
        }
    }

    #[test]
    fn naive_detects_other_weights() {
        let x = synthetic_context::<f64>(8, 8, 5);
        let (serial, _) = forward_serial(&x, &init_weights::<f64>(&cfg(3)).unwrap()).unwrap();
        let other = naive_causal_forward(&x, &init_weights::<f64>(&cfg(4)).unwrap()).unwrap();
        let mut report = OracleReport::new("seed swap");
        report.compare_matrices("hidden", &serial, &other, 1e-10);
        assert!(!report.passed());
        assert_eq!(report.mismatches.len(), 1);
    }

    #[test]
    fn exhaustive_on_figure_case() {
        let eval = |p: &ContextPartition| Ok(*dot_product_counts(Strategy::Kvr, p).iter().max().unwrap() as f64);
        let (part, best) = exhaustive_partition_search(9, 3, DEFAULT_SEARCH_BUDGET, eval).unwrap();
        assert!(best <= 21.0);
        assert_eq!(eval(&part).unwrap(), best);
        let witness = ContextPartition::from_sizes(&[4, 3, 2]).unwrap();
        assert!(best <= eval(&witness).unwrap());
    }

    #[test]
    fn exhaustive_single_placement_and_budget() {
        let (part, _) = exhaustive_partition_search(4, 4, 10, |_| Ok(1.0)).unwrap();
        assert_eq!(part.sizes(), vec![1, 1, 1, 1]);
        assert_eq!(feasible_partition_count(96, 4), 95 * 94 * 93 / 6);
        let err = exhaustive_partition_search(1000, 5, DEFAULT_SEARCH_BUDGET, |_| Ok(0.0)).unwrap_err();
        assert!(matches!(err, Error::Budget { .. }));
    }

    #[test]
    fn exhaustive_prefers_even_on_ties() {
        let (part, _) = exhaustive_partition_search(12, 3, DEFAULT_SEARCH_BUDGET, |_| Ok(0.0)).unwrap();
        assert_eq!(part.sizes(), vec![4, 4, 4]);
    }

    #[test]
    fn formulas_hold_on_small_grid() {
        let report = formula_enumeration_check(12, 4).unwrap();
        assert!(report.passed(), "{:?}", report.mismatches);
        assert!(report.checks > 0);
        assert_eq!(report.max_abs_deviation, 0.0);
    }
}
