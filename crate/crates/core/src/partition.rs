//! Splitting a context across ranks and searching for TTFT-minimizing splits.
//!
//! A partition is described by its boundaries `[0, b1, .., C]`. Searches work
//! on signed offsets `δ_k` applied to the interior boundaries of the even
//! split, and take the TTFT evaluator as a closure so the same code drives the
//! cost simulator or a wall-clock measurement.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered boundaries of a context split over `p` ranks.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextPartition {
    boundaries: Vec<usize>,
}

impl ContextPartition {
    /// Builds a partition from `[0, b1, .., C]`; every part must hold a token.
    pub fn from_boundaries(boundaries: Vec<usize>) -> Result<Self> {
        if boundaries.len() < 2 || boundaries[0] != 0 {
            return Err(Error::InfeasiblePartition(format!(
                "boundaries must start at 0 and name at least one part: {boundaries:?}"
            )));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InfeasiblePartition(format!(
                "boundaries must be strictly increasing: {boundaries:?}"
            )));
        }
        Ok(Self { boundaries })
    }

    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut boundaries = Vec::with_capacity(sizes.len() + 1);
        boundaries.push(0);
        let mut acc = 0;
        for s in sizes {
            acc += s;
            boundaries.push(acc);
        }
        Self::from_boundaries(boundaries)
    }

    pub fn context_length(&self) -> usize {
        *self.boundaries.last().expect("non-empty")
    }

    pub fn process_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.boundaries.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Token range owned by `rank`.
    pub fn range(&self, rank: usize) -> std::ops::Range<usize> {
        self.boundaries[rank]..self.boundaries[rank + 1]
    }

    /// Share of the context held by each rank.
    pub fn ratios(&self) -> Vec<f64> {
        let c = self.context_length() as f64;
        self.sizes().iter().map(|s| *s as f64 / c).collect()
    }
}

impl std::fmt::Display for ContextPartition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sizes: Vec<String> = self.sizes().iter().map(ToString::to_string).collect();
        write!(f, "{}", sizes.join(";"))
    }
}

/// Even split; the first `C mod p` parts get one extra token.
pub fn even_partition(context_length: usize, processes: usize) -> Result<ContextPartition> {
    if processes == 0 || context_length < processes {
        return Err(Error::InfeasiblePartition(format!(
            "cannot split {context_length} tokens over {processes} processes"
        )));
    }
    let base = context_length / processes;
    let extra = context_length % processes;
    let sizes: Vec<usize> = (0..processes).map(|i| base + usize::from(i < extra)).collect();
    ContextPartition::from_sizes(&sizes)
}

/// Materializes ratios as integer token counts.
///
/// Each part gets `floor(C * r_i)`, computed exactly on the binary value of
/// `r_i`; leftover tokens go one each to the largest fractional remainders
/// (lower index wins ties). Empty parts then take a token from the current
/// largest part.
pub fn partition_from_ratios(
    context_length: usize,
    processes: usize,
    ratios: &[f64],
) -> Result<ContextPartition> {
    if ratios.len() != processes {
        return Err(Error::Arity {
            expected: processes,
            actual: ratios.len(),
        });
    }
    if processes == 0 || context_length < processes {
        return Err(Error::InfeasiblePartition(format!(
            "cannot split {context_length} tokens over {processes} processes"
        )));
    }
    if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(Error::Input(format!("ratios must be positive: {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Input(format!("ratios sum to {total}, not 1")));
    }

    let c = BigRational::from_integer(BigInt::from(context_length));
    let mut sizes = Vec::with_capacity(processes);
    let mut fracs = Vec::with_capacity(processes);
    for r in ratios {
        let exact = BigRational::from_float(*r).expect("finite ratio") * &c;
        let floor = exact.floor();
        fracs.push(&exact - &floor);
        sizes.push(floor.to_integer().to_usize().expect("bounded by C"));
    }
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..processes).collect();
    // Stable sort keeps lower indices first among equal remainders.
    order.sort_by(|a, b| fracs[*b].cmp(&fracs[*a]));
    for &i in order.iter().take(context_length.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    while let Some(empty) = sizes.iter().position(|s| *s == 0) {
        let largest = (0..processes)
            .max_by(|a, b| sizes[*a].cmp(&sizes[*b]).then(b.cmp(a)))
            .expect("non-empty");
        sizes[largest] -= 1;
        sizes[empty] += 1;
    }
    ContextPartition::from_sizes(&sizes)
}

/// Grid-search parameters. The evaluator is passed separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Values per axis per level.
    pub grid_width: usize,
    /// First-level stride in tokens; `None` derives `max(1, round(C / 3p))`.
    pub initial_stride: Option<usize>,
    pub min_stride: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            grid_width: 5,
            initial_stride: None,
            min_stride: 1,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_width < 3 {
            return Err(Error::Config(format!(
                "grid_width must be at least 3, got {}",
                self.grid_width
            )));
        }
        if self.min_stride == 0 {
            return Err(Error::Config("min_stride must be at least 1".into()));
        }
        if let Some(s) = self.initial_stride {
            if s < self.min_stride {
                return Err(Error::Config(format!(
                    "initial_stride {s} is below min_stride {}",
                    self.min_stride
                )));
            }
        }
        Ok(())
    }

    /// Stride of the first level for a given context length and rank count.
    pub fn first_stride(&self, context_length: usize, processes: usize) -> usize {
        self.initial_stride
            .unwrap_or_else(|| {
                let s = (context_length as f64 / (3 * processes) as f64).round() as usize;
                s.max(1)
            })
            .max(self.min_stride)
    }
}

/// Applies offsets to the interior boundaries of the even split.
pub fn apply_offsets(
    context_length: usize,
    processes: usize,
    offsets: &[i64],
) -> Result<ContextPartition> {
    let even = even_partition(context_length, processes)?;
    if offsets.len() + 1 != processes {
        return Err(Error::Arity {
            expected: processes - 1,
            actual: offsets.len(),
        });
    }
    let mut boundaries = even.boundaries().to_vec();
    for (b, d) in boundaries[1..processes].iter_mut().zip(offsets) {
        let moved = *b as i64 + d;
        if moved <= 0 || moved >= context_length as i64 {
            return Err(Error::InfeasiblePartition(format!(
                "offset {d} moves a boundary out of the context"
            )));
        }
        *b = moved as usize;
    }
    ContextPartition::from_boundaries(boundaries)
}

/// Orders candidates: lower TTFT, then smaller total offset from even, then
/// lexicographically smaller offsets.
fn better(a: (f64, &[i64]), b: (f64, &[i64])) -> bool {
    let dist = |o: &[i64]| o.iter().map(|d| d.unsigned_abs()).sum::<u64>();
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => (dist(a.1), a.1) < (dist(b.1), b.1),
    }
}

/// Result of a partition search.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub partition: ContextPartition,
    pub ttft: f64,
    /// Offsets from the even split, one per interior boundary.
    pub offsets: Vec<i64>,
    pub evaluations: usize,
}

/// Two-rank search over `δ1`, assuming TTFT is unimodal in it.
///
/// Narrows the feasible range by ternary comparisons on the `min_stride`
/// lattice through `δ1 = 0`, then scans what is left.
pub fn binary_search_two<F>(
    context_length: usize,
    min_stride: usize,
    evaluator: F,
) -> Result<SearchOutcome>
where
    F: Fn(&ContextPartition) -> Result<f64>,
{
    let even = even_partition(context_length, 2)?;
    let step = min_stride.max(1) as i64;
    let b1 = even.boundaries()[1] as i64;
    // Feasible δ keeps both parts non-empty; work in lattice units of `step`.
    let lo_unit = (1 - b1).div_euclid(step) + i64::from((1 - b1).rem_euclid(step) != 0);
    let hi_unit = (context_length as i64 - 1 - b1).div_euclid(step);
    let mut cache: HashMap<i64, f64> = HashMap::new();
    let mut eval = |unit: i64| -> Result<f64> {
        if let Some(v) = cache.get(&unit) {
            return Ok(*v);
        }
        let part = apply_offsets(context_length, 2, &[unit * step])?;
        let v = evaluator(&part)?;
        cache.insert(unit, v);
        Ok(v)
    };

    let (mut lo, mut hi) = (lo_unit, hi_unit);
    while hi - lo > 3 {
        let m1 = lo + (hi - lo) / 3;
        let m2 = hi - (hi - lo) / 3;
        let (f1, f2) = (eval(m1)?, eval(m2)?);
        if f1 < f2 {
            hi = m2 - 1;
        } else if f1 > f2 {
            lo = m1 + 1;
        } else {
            lo = m1;
            hi = m2;
        }
    }
    let mut best: Option<(f64, i64)> = None;
    for unit in lo..=hi {
        let v = eval(unit)?;
        let d = unit * step;
        if best.map_or(true, |(bv, bd)| better((v, &[d]), (bv, &[bd]))) {
            best = Some((v, d));
        }
    }
    let (ttft, delta) = best.ok_or_else(|| Error::Search("no feasible split".into()))?;
    Ok(SearchOutcome {
        partition: apply_offsets(context_length, 2, &[delta])?,
        ttft,
        offsets: vec![delta],
        evaluations: cache.len(),
    })
}

/// Upper bound on `grid_width^(p-1)`.
pub const MAX_GRID_POINTS: usize = 10_000_000;

/// Multi-level grid search over the `p - 1` interior boundary offsets.
///
/// Each level scores the full `grid_width^(p-1)` grid centred on the
/// incumbent, then halves the stride, until a level at `min_stride` has run.
/// The first level is centred on the even split, so the result is never
/// worse than it. Infeasible grid points are skipped.
pub fn hierarchical_grid_search<F>(
    context_length: usize,
    processes: usize,
    config: &SearchConfig,
    evaluator: F,
) -> Result<SearchOutcome>
where
    F: Fn(&ContextPartition) -> Result<f64> + Sync,
{
    config.validate()?;
    if processes < 2 {
        return Err(Error::Search("grid search needs at least two processes".into()));
    }
    even_partition(context_length, processes)?;
    let axes = processes - 1;
    let half = (config.grid_width / 2) as i64;
    let steps: Vec<i64> = (0..config.grid_width as i64).map(|j| j - half).collect();

    let total = steps
        .len()
        .checked_pow(axes as u32)
        .filter(|n| *n <= MAX_GRID_POINTS)
        .ok_or_else(|| {
            Error::Search(format!(
                "a {}-wide grid over {axes} boundaries exceeds {MAX_GRID_POINTS} points per level",
                config.grid_width
            ))
        })?;

    let mut seen: HashMap<Vec<i64>, f64> = HashMap::new();
    let mut incumbent: Option<(f64, Vec<i64>)> = None;
    let mut stride = config.first_stride(context_length, processes);
    loop {
        let center = incumbent.as_ref().map_or_else(|| vec![0; axes], |(_, o)| o.clone());
        let mut points = Vec::new();
        for flat in 0..total {
            // Base-`grid_width` digits of `flat`, last axis fastest.
            let mut rest = flat;
            let mut offsets = vec![0i64; axes];
            for axis in (0..axes).rev() {
                offsets[axis] = center[axis] + steps[rest % steps.len()] * stride as i64;
                rest /= steps.len();
            }
            if seen.contains_key(&offsets) {
                continue;
            }
            if let Ok(part) = apply_offsets(context_length, processes, &offsets) {
                points.push((offsets, part));
            }
        }
        let scored: Vec<Result<f64>> = points.par_iter().map(|(_, part)| evaluator(part)).collect();
        for ((offsets, _), score) in points.into_iter().zip(scored) {
            seen.insert(offsets, score?);
        }
        for (offsets, score) in &seen {
            if incumbent
                .as_ref()
                .map_or(true, |(bv, bo)| better((*score, offsets), (*bv, bo)))
            {
                incumbent = Some((*score, offsets.clone()));
            }
        }
        if incumbent.is_none() {
            return Err(Error::Search(format!(
                "every grid point is infeasible for C={context_length}, p={processes}"
            )));
        }
        if stride <= config.min_stride {
            break;
        }
        stride = (stride / 2).max(config.min_stride);
    }
    let (ttft, offsets) = incumbent.expect("checked above");
    Ok(SearchOutcome {
        partition: apply_offsets(context_length, processes, &offsets)?,
        ttft,
        offsets,
        evaluations: seen.len(),
    })
}

/// Best-known partition ratios keyed by context length, for one rank count.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionLookupTable {
    processes: usize,
    entries: BTreeMap<usize, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    p: usize,
    entries: Vec<TableEntry>,
}

#[derive(Serialize, Deserialize)]
struct TableEntry {
    context_length: usize,
    ratios: Vec<f64>,
}

impl PartitionLookupTable {
    pub fn new(processes: usize) -> Self {
        Self {
            processes,
            entries: BTreeMap::new(),
        }
    }

    pub fn processes(&self) -> usize {
        self.processes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.entries.iter().map(|(c, r)| (*c, r.as_slice()))
    }

    pub fn get(&self, context_length: usize) -> Option<&[f64]> {
        self.entries.get(&context_length).map(Vec::as_slice)
    }

    /// Inserts or replaces an entry. Ratios must be non-negative and sum to 1 within 1e-9.
    pub fn insert(&mut self, context_length: usize, ratios: Vec<f64>) -> Result<()> {
        if ratios.len() != self.processes {
            return Err(Error::Arity {
                expected: self.processes,
                actual: ratios.len(),
            });
        }
        let sum: f64 = ratios.iter().sum();
        if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Lookup(format!(
                "entry for {context_length} has invalid ratios {ratios:?}"
            )));
        }
        self.entries.insert(context_length, ratios);
        Ok(())
    }

    pub fn insert_partition(&mut self, partition: &ContextPartition) -> Result<()> {
        self.insert(partition.context_length(), partition.ratios())
    }

    /// Whether `context_length` lies within the stored range (no clamping needed).
    pub fn covers(&self, context_length: usize) -> bool {
        match (self.entries.keys().next(), self.entries.keys().next_back()) {
            (Some(lo), Some(hi)) => (*lo..=*hi).contains(&context_length),
            _ => false,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TableFile {
            p: self.processes,
            entries: self
                .entries
                .iter()
                .map(|(c, r)| TableEntry {
                    context_length: *c,
                    ratios: r.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TableFile = serde_json::from_str(text)?;
        let mut table = Self::new(file.p);
        for e in file.entries {
            table.insert(e.context_length, e.ratios)?;
        }
        Ok(table)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// Ratios for `context_length`, linearly interpolated between the two nearest
/// entries and renormalized. Lengths outside the table clamp to the nearest
/// entry instead of extrapolating.
pub fn interpolate_partition(table: &PartitionLookupTable, context_length: usize) -> Result<Vec<f64>> {
    if table.is_empty() {
        return Err(Error::Lookup("lookup table has no entries".into()));
    }
    if let Some(exact) = table.entries.get(&context_length) {
        return Ok(exact.clone());
    }
    let below = table.entries.range(..context_length).next_back();
    let above = table.entries.range(context_length..).next();
    let (lo, hi) = match (below, above) {
        (Some(lo), Some(hi)) => (lo, hi),
        (Some((_, r)), None) | (None, Some((_, r))) => return Ok(r.clone()),
        (None, None) => unreachable!("table is non-empty"),
    };
    let t = (context_length - lo.0) as f64 / (hi.0 - lo.0) as f64;
    let mixed: Vec<f64> = lo.1.iter().zip(hi.1).map(|(a, b)| a + t * (b - a)).collect();
    let sum: f64 = mixed.iter().sum();
    Ok(mixed.into_iter().map(|r| r / sum).collect())
}

/// Estimated time to search one lookup-table entry:
/// `T · (N−1)^w · log_{w−1}(C)`.
pub fn table_build_cost(
    seconds_per_forward: f64,
    processes: usize,
    context_length: usize,
    grid_width: usize,
) -> f64 {
    let combos = ((processes - 1) as f64).powi(grid_width as i32);
    let levels = (context_length as f64).log2() / ((grid_width - 1) as f64).log2();
    seconds_per_forward * combos * levels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oversized_grids_are_refused() {
        let err = hierarchical_grid_search(4096, 128, &SearchConfig::default(), |_| Ok(0.0)).unwrap_err();
        assert!(matches!(err, Error::Search(_)));
    }

    #[test]
    fn even_split_puts_remainder_in_front() {
        assert_eq!(even_partition(9, 3).unwrap().sizes(), vec![3, 3, 3]);
        assert_eq!(even_partition(9, 1).unwrap().sizes(), vec![9]);
        assert_eq!(even_partition(10, 4).unwrap().sizes(), vec![3, 3, 2, 2]);
        assert!(matches!(even_partition(3, 4), Err(Error::InfeasiblePartition(_))));
    }

    #[test]
    fn ratios_round_by_exact_remainders() {
        let part = partition_from_ratios(10240, 4, &[0.350, 0.255, 0.210, 0.185]).unwrap();
        assert_eq!(part.sizes(), vec![3584, 2611, 2150, 1895]);
        assert_eq!(
            partition_from_ratios(4, 4, &[0.25; 4]).unwrap().sizes(),
            vec![1, 1, 1, 1]
        );
        assert_eq!(
            partition_from_ratios(3, 3, &[0.9, 0.05, 0.05]).unwrap().sizes(),
            vec![1, 1, 1]
        );
        assert!(matches!(
            partition_from_ratios(10, 3, &[0.5, 0.5]),
            Err(Error::Arity { expected: 3, actual: 2 })
        ));
        assert!(matches!(
            partition_from_ratios(10, 2, &[0.7, 0.5]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn offsets_must_keep_parts_non_empty() {
        assert_eq!(apply_offsets(96, 4, &[-4, 6, 0]).unwrap().boundaries(), &[0, 20, 54, 72, 96]);
        assert!(apply_offsets(96, 4, &[0, -40, 0]).is_err());
        assert!(apply_offsets(96, 2, &[48]).is_err());
    }

    #[test]
    fn binary_search_finds_quadratic_minimum() {
        let c = 200;
        let f = |p: &ContextPartition| Ok(((p.boundaries()[1] as f64) - 112.0).powi(2));
        let exhaustive = (1..c)
            .min_by(|a, b| ((*a as f64) - 112.0).powi(2).total_cmp(&((*b as f64) - 112.0).powi(2)))
            .unwrap();
        let out = binary_search_two(c, 1, f).unwrap();
        assert_eq!(out.partition.boundaries()[1], exhaustive);
        assert_eq!(out.offsets, vec![12]);
    }

    #[test]
    fn binary_search_prefers_even_on_ties() {
        let balanced = |p: &ContextPartition| Ok(*p.sizes().iter().max().unwrap() as f64);
        assert_eq!(binary_search_two(64, 1, balanced).unwrap().offsets, vec![0]);
        assert_eq!(binary_search_two(65, 1, |_: &ContextPartition| Ok(1.0)).unwrap().offsets, vec![0]);
        assert_eq!(binary_search_two(64, 4, |_: &ContextPartition| Ok(1.0)).unwrap().offsets, vec![0]);
    }

    #[test]
    fn grid_search_on_balance_returns_even() {
        let balanced = |p: &ContextPartition| Ok(*p.sizes().iter().max().unwrap() as f64);
        let out = hierarchical_grid_search(96, 4, &SearchConfig::default(), balanced).unwrap();
        assert_eq!(out.partition, even_partition(96, 4).unwrap());
    }

    #[test]
    fn first_stride_reproduces_eight_four_two_at_96() {
        let cfg = SearchConfig::default();
        assert_eq!(cfg.first_stride(96, 4), 8);
    }

    #[test]
    fn grid_search_rejects_bad_config() {
        let f = |_: &ContextPartition| Ok(0.0);
        let cfg = SearchConfig {
            grid_width: 2,
            ..SearchConfig::default()
        };
        assert!(matches!(hierarchical_grid_search(96, 4, &cfg, f), Err(Error::Config(_))));
        assert!(matches!(
            hierarchical_grid_search(96, 1, &SearchConfig::default(), f),
            Err(Error::Search(_))
        ));
    }

    #[test]
    fn interpolation_midpoint_and_clamping() {
        let mut t = PartitionLookupTable::new(2);
        t.insert(8192, vec![0.6, 0.4]).unwrap();
        t.insert(12288, vec![0.7, 0.3]).unwrap();
        let mid = interpolate_partition(&t, 10240).unwrap();
        assert!((mid[0] - 0.65).abs() < 1e-12 && (mid[1] - 0.35).abs() < 1e-12);
        assert_eq!(interpolate_partition(&t, 8192).unwrap(), vec![0.6, 0.4]);
        assert_eq!(interpolate_partition(&t, 100).unwrap(), vec![0.6, 0.4]);
        assert_eq!(interpolate_partition(&t, 20000).unwrap(), vec![0.7, 0.3]);
        assert!(!t.covers(100) && t.covers(9000));
        assert!(matches!(
            interpolate_partition(&PartitionLookupTable::new(2), 10),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn identical_entries_interpolate_to_themselves() {
        let mut t = PartitionLookupTable::new(3);
        t.insert(100, vec![0.5, 0.3, 0.2]).unwrap();
        t.insert(300, vec![0.5, 0.3, 0.2]).unwrap();
        for c in [150, 200, 299] {
            let r = interpolate_partition(&t, c).unwrap();
            for (a, b) in r.iter().zip([0.5, 0.3, 0.2]) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn table_json_round_trip() {
        let mut t = PartitionLookupTable::new(2);
        t.insert(8, vec![0.625, 0.375]).unwrap();
        let back = PartitionLookupTable::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        assert!(t.insert(9, vec![0.5, 0.6]).is_err());
        assert!(t.insert(9, vec![1.0]).is_err());
    }

    #[test]
    fn build_cost_formula() {
        assert_eq!(table_build_cost(1.0, 8, 16384, 5), 117649.0);
        assert_eq!(table_build_cost(1.0, 2, 16, 5), 2.0);
        assert_eq!(table_build_cost(2.0, 8, 16384, 5), 235298.0);
    }
}
