//! Batch experiment runner behind the `kvr` binary.
//!
//! Every command is a function of the [`ExperimentConfig`] plus flags, and
//! writes its data to `--out` (or stdout) as CSV or JSON. Exit codes: 0 on
//! success, 1 when a check fails, 2 on usage or configuration errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{dot_product_counts, run_with, traffic_pairs, Fault, FaultKind, RunOptions, Strategy};
use crate::error::{Error, Result};
use crate::model::{init_weights, synthetic_context, ModelConfig};
use crate::oracle::{equivalence_report, formula_enumeration_check};
use crate::partition::{
    even_partition, hierarchical_grid_search, interpolate_partition, partition_from_ratios, ContextPartition,
    PartitionLookupTable, SearchConfig,
};
use crate::simnet::{noise_study, simulate_ttft, ttft_practical_lower, ttft_star, CostModel, NetworkModel};

/// Strategy column of an experiment. The `kvr-*` variants pin the partition
/// source; plain `kvr` follows [`ExperimentConfig::partition`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategySpec {
    Serial,
    Tsp,
    Kvr,
    /// Even split.
    KvrE,
    /// Searched split.
    KvrS,
    /// Split interpolated from the lookup table.
    KvrP,
}

impl StrategySpec {
    pub fn strategy(self) -> Strategy {
        match self {
            StrategySpec::Serial => Strategy::Serial,
            StrategySpec::Tsp => Strategy::Tsp,
            _ => Strategy::Kvr,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StrategySpec::Serial => "Serial",
            StrategySpec::Tsp => "TSP",
            StrategySpec::Kvr => "KVR",
            StrategySpec::KvrE => "KVR-E",
            StrategySpec::KvrS => "KVR-S",
            StrategySpec::KvrP => "KVR-P",
        }
    }
}

/// Where the plain `kvr` strategy takes its partition from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum PartitionSource {
    Even,
    Ratios {
        ratios: Vec<f64>,
    },
    #[default]
    Search,
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub slowdown_factor: f64,
    pub trials: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            slowdown_factor: 4.0,
            trials: 20,
        }
    }
}

/// One experiment, loaded from a JSON document. Every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub strategies: Vec<StrategySpec>,
    pub context_lengths: Vec<usize>,
    pub process_counts: Vec<usize>,
    pub partition: PartitionSource,
    pub cost: CostModel,
    pub network: NetworkModel,
    pub noise: NoiseConfig,
    pub search: SearchConfig,
    /// Rank count of the lookup table built by `search` and read by `predict`.
    pub table_processes: usize,
    /// Context lengths checked numerically by `verify`.
    pub verify_context_lengths: Vec<usize>,
    /// `sweep` fills `max_dev` by running the engine up to this length.
    pub numeric_check_max_context: usize,
    pub table: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Seeds synthetic contexts and noise trials.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            strategies: vec![
                StrategySpec::Serial,
                StrategySpec::Tsp,
                StrategySpec::KvrE,
                StrategySpec::KvrS,
            ],
            context_lengths: vec![1024, 4096],
            process_counts: vec![1, 2, 4],
            partition: PartitionSource::default(),
            cost: CostModel::default(),
            network: NetworkModel::default(),
            noise: NoiseConfig::default(),
            search: SearchConfig::default(),
            table_processes: 4,
            verify_context_lengths: vec![9, 16, 33, 64],
            numeric_check_max_context: 128,
            table: None,
            out: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.cost.validate()?;
        self.network.validate()?;
        self.search.validate()?;
        if self.context_lengths.contains(&0) || self.verify_context_lengths.contains(&0) {
            return Err(Error::Config("context lengths must be positive".into()));
        }
        if self.process_counts.contains(&0) || self.table_processes == 0 {
            return Err(Error::Config("process counts must be positive".into()));
        }
        if !(self.noise.slowdown_factor >= 1.0) || self.noise.trials == 0 {
            return Err(Error::Config(format!("invalid noise settings {:?}", self.noise)));
        }
        Ok(())
    }

    fn uses_table(&self) -> bool {
        self.strategies.contains(&StrategySpec::KvrP)
            || (self.partition == PartitionSource::Table && self.strategies.contains(&StrategySpec::Kvr))
    }

    fn table_path(&self) -> Result<&Path> {
        self.table
            .as_deref()
            .ok_or_else(|| Error::Config("no lookup table path (set `table` or pass --table)".into()))
    }

    fn load_table(&self) -> Result<PartitionLookupTable> {
        let path = self.table_path()?;
        if !path.exists() {
            return Err(Error::Config(format!("lookup table {} does not exist", path.display())));
        }
        PartitionLookupTable::load(path)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "kvr", version, about = "Parallel prompt-phase experiments: TSP vs KV-Runahead")]
pub struct Cli {
    /// Experiment config (JSON). Defaults apply to every missing field.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Lookup table file.
    #[arg(long, global = true)]
    pub table: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FaultFlag {
    Drop,
    Duplicate,
    Mislabel,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Strategy equivalence and count checks.
    Verify {
        /// Corrupt one message of the protocol.
        #[arg(long, value_enum)]
        inject_fault: Option<FaultFlag>,
        #[arg(long, default_value_t = 0)]
        fault_rank: usize,
        #[arg(long, default_value_t = 0)]
        fault_layer: usize,
    },
    /// Simulated TTFT table over context lengths, process counts and strategies.
    Sweep,
    /// Builds or updates the partition lookup table.
    Search,
    /// Partition for one context length from the lookup table.
    Predict {
        #[arg(long)]
        context: usize,
    },
    /// TTFT degradation under a noisy network.
    Noise,
}

/// What a command produced: text for stdout and an exit code.
#[derive(Clone, Debug, PartialEq)]
pub struct CommandOutput {
    pub stdout: String,
    pub exit_code: i32,
}

impl CommandOutput {
    fn ok(stdout: String) -> Self {
        Self { stdout, exit_code: 0 }
    }
}

/// Exit code for an error that escaped a command.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Json(_) | Error::Io(_) | Error::Lookup(_) | Error::Input(_) | Error::Arity { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name), runs the command and writes
/// to the given streams. Returns the process exit code.
pub fn main_with_args<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli) {
        Ok(out) => {
            let _ = stdout.write_all(out.stdout.as_bytes());
            out.exit_code
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code_for(&e)
        }
    }
}

/// Resolves the config with flag overrides and dispatches.
pub fn execute(cli: &Cli) -> Result<CommandOutput> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.out.is_some() {
        config.out = cli.out.clone();
    }
    if cli.table.is_some() {
        config.table = cli.table.clone();
    }
    let fmt = cli.format;
    match &cli.command {
        Command::Verify {
            inject_fault,
            fault_rank,
            fault_layer,
        } => {
            let fault = inject_fault.map(|kind| Fault {
                rank: *fault_rank,
                layer: *fault_layer,
                kind: match kind {
                    FaultFlag::Drop => FaultKind::Drop,
                    FaultFlag::Duplicate => FaultKind::Duplicate,
                    FaultFlag::Mislabel => FaultKind::Mislabel,
                },
            });
            let report = cmd_verify(&config, fault)?;
            let summary = serde_json::to_string(&report.summary())?;
            if let Some(path) = &config.out {
                std::fs::write(path, format!("{summary}\n"))?;
            }
            let mut text = match fmt {
                OutputFormat::Csv => report.render(),
                OutputFormat::Json => serde_json::to_string_pretty(&report)? + "\n",
            };
            if fmt == OutputFormat::Csv {
                text.push_str(&summary);
                text.push('\n');
            }
            Ok(CommandOutput {
                stdout: text,
                exit_code: if report.passed { 0 } else { 1 },
            })
        }
        Command::Sweep => {
            let rows = cmd_sweep(&config)?;
            emit(&config, fmt, &rows).map(CommandOutput::ok)
        }
        Command::Search => {
            let report = cmd_search(&config)?;
            let mut text = String::new();
            for entry in &report.entries {
                text.push_str(&entry.render());
                text.push('\n');
            }
            let failed = report.entries.iter().any(|e| e.error.is_some());
            Ok(CommandOutput {
                stdout: text,
                exit_code: i32::from(failed),
            })
        }
        Command::Predict { context } => {
            let report = cmd_predict(&config, *context)?;
            let text = match fmt {
                OutputFormat::Csv => report.render(),
                OutputFormat::Json => serde_json::to_string_pretty(&report)? + "\n",
            };
            if let Some(path) = &config.out {
                std::fs::write(path, &text)?;
            }
            Ok(CommandOutput::ok(text))
        }
        Command::Noise => {
            let rows = cmd_noise(&config)?;
            emit(&config, fmt, &rows).map(CommandOutput::ok)
        }
    }
}

/// Serializes rows as CSV or JSON, to `config.out` when set.
fn emit<R: Serialize>(config: &ExperimentConfig, fmt: OutputFormat, rows: &[R]) -> Result<String> {
    let text = match fmt {
        OutputFormat::Csv => to_csv(rows)?,
        OutputFormat::Json => serde_json::to_string_pretty(rows)? + "\n",
    };
    match &config.out {
        Some(path) => {
            std::fs::write(path, &text)?;
            Ok(format!("wrote {} rows to {}\n", rows.len(), path.display()))
        }
        None => Ok(text),
    }
}

pub fn to_csv<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn searched_partition(config: &ExperimentConfig, c: usize, p: usize) -> Result<ContextPartition> {
    if p == 1 {
        return even_partition(c, 1);
    }
    let eval = |part: &ContextPartition| {
        Ok(simulate_ttft(Strategy::Kvr, part, &config.model, &config.cost, &config.network, None).ttft)
    };
    Ok(hierarchical_grid_search(c, p, &config.search, eval)?.partition)
}

fn predicted_partition(table: &PartitionLookupTable, c: usize, p: usize) -> Result<ContextPartition> {
    if table.processes() != p {
        return Err(Error::Lookup(format!(
            "table holds {}-rank partitions, asked for p={p}",
            table.processes()
        )));
    }
    partition_from_ratios(c, p, &interpolate_partition(table, c)?)
}

fn resolve_partition(
    config: &ExperimentConfig,
    table: Option<&PartitionLookupTable>,
    spec: StrategySpec,
    c: usize,
    p: usize,
) -> Result<ContextPartition> {
    let need_table = || table.ok_or_else(|| Error::Config("strategy needs a lookup table".into()));
    match spec {
        StrategySpec::Serial => even_partition(c, 1),
        StrategySpec::Tsp | StrategySpec::KvrE => even_partition(c, p),
        StrategySpec::KvrS => searched_partition(config, c, p),
        StrategySpec::KvrP => predicted_partition(need_table()?, c, p),
        StrategySpec::Kvr => match &config.partition {
            PartitionSource::Even => even_partition(c, p),
            PartitionSource::Ratios { ratios } => partition_from_ratios(c, p, ratios),
            PartitionSource::Search => searched_partition(config, c, p),
            PartitionSource::Table => predicted_partition(need_table()?, c, p),
        },
    }
}

/// One line of the verify report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckLine>,
    pub passed: bool,
}

#[derive(Serialize)]
struct VerifySummary {
    checks: usize,
    failures: usize,
    passed: bool,
}

impl VerifyReport {
    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.passed &= passed;
        self.checks.push(CheckLine {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    fn summary(&self) -> VerifySummary {
        VerifySummary {
            checks: self.checks.len(),
            failures: self.checks.iter().filter(|c| !c.passed).count(),
            passed: self.passed,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{tag} {}: {}\n", c.name, c.detail));
        }
        out
    }
}

/// Equivalence and accounting checks; failures are reported, not raised.
pub fn cmd_verify(config: &ExperimentConfig, fault: Option<Fault>) -> Result<VerifyReport> {
    let options = RunOptions { fault };
    let mut report = VerifyReport {
        checks: Vec::new(),
        passed: true,
    };

    // The C=9, p=3 accounting fixture.
    let weights = init_weights::<f64>(&config.model)?;
    let context = synthetic_context::<f64>(9, config.model.d_model, config.seed);
    let fixtures = [
        (Strategy::Kvr, ContextPartition::from_sizes(&[4, 3, 2])?),
        (Strategy::Tsp, ContextPartition::from_sizes(&[3, 3, 3])?),
    ];
    for (strategy, part) in &fixtures {
        let name = format!("accounting {strategy} C=9 [{part}]");
        match run_with(*strategy, &context, part, &weights, &options) {
            Ok(res) => {
                let dots = res.metrics.dot_products_per_layer();
                let rows = res.metrics.kv_rows_sent_per_layer();
                let (want_dots, want_rows) = match strategy {
                    Strategy::Kvr => (vec![16, 21, 18], 22),
                    _ => (vec![27, 27, 27], 36),
                };
                let received = res.metrics.kv_rows_received_per_layer();
                let received_ok = *strategy == Strategy::Kvr || received.iter().all(|r| *r == 12);
                report.push(
                    name,
                    dots == want_dots && rows == want_rows && received_ok,
                    format!(
                        "dot products per layer {dots:?} (max {}), KV rows on the wire {rows}, received {received:?}",
                        res.metrics.max_dot_products_per_layer()
                    ),
                );
            }
            Err(e) => report.push(name, false, e.to_string()),
        }
    }

    let formulas = formula_enumeration_check(64, 8)?;
    report.push(
        "traffic closed forms",
        formulas.passed(),
        format!(
            "{} comparisons over p | C <= 64, p <= 8; {} mismatches",
            formulas.checks,
            formulas.mismatches.len()
        ),
    );

    let mut cases: Vec<(usize, usize)> = Vec::new();
    for &c in &config.verify_context_lengths {
        for &p in &config.process_counts {
            if p <= c {
                cases.push((c, p));
            }
        }
    }
    for (c, p) in cases {
        let skewed = skewed_partition(c, p)?;
        let mut partitions = vec![(Strategy::Tsp, even_partition(c, p)?), (Strategy::Kvr, even_partition(c, p)?)];
        if skewed != partitions[1].1 {
            partitions.push((Strategy::Kvr, skewed));
        }
        for (strategy, part) in partitions {
            let name = format!("equivalence {strategy} C={c} p={p} [{part}]");
            let seed = config.seed.wrapping_add(c as u64);
            match equivalence_report(strategy, &config.model, &part, seed, &options) {
                Ok((eq, metrics)) => {
                    let dots_ok = metrics.dot_products_per_layer() == dot_product_counts(strategy, &part);
                    let traffic_ok = metrics.kv_pairs_sent_per_layer() == traffic_pairs(strategy, &part);
                    let barriers_ok = metrics.barrier_count
                        == if strategy == Strategy::Tsp && p > 1 { config.model.n_layers } else { 0 };
                    report.push(
                        name,
                        eq.passed() && dots_ok && traffic_ok && barriers_ok,
                        format!(
                            "max rel dev {:.3e} over {} values; counts {}",
                            eq.max_rel_deviation,
                            eq.checks,
                            if dots_ok && traffic_ok && barriers_ok { "match" } else { "MISMATCH" }
                        ),
                    );
                }
                Err(e) => report.push(name, false, e.to_string()),
            }
        }
    }
    Ok(report)
}

/// Front-loaded split, roughly what the search finds for KVR.
fn skewed_partition(c: usize, p: usize) -> Result<ContextPartition> {
    let weights: Vec<f64> = (0..p).map(|i| (p + 1 - i) as f64).collect();
    let total: f64 = weights.iter().sum();
    let ratios: Vec<f64> = weights.iter().map(|w| w / total).collect();
    partition_from_ratios(c, p, &ratios)
}

/// One CSV row of `sweep`. Empty numeric fields mark a skipped cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: String,
    #[serde(rename = "C")]
    pub context_length: usize,
    pub p: usize,
    /// Sizes joined by `;`, or a warning.
    pub partition: String,
    pub ttft_sim: Option<f64>,
    pub speedup: Option<f64>,
    pub ttft_star: Option<f64>,
    pub ttft_lower: Option<f64>,
    pub dot_max: Option<u64>,
    pub pairs: Option<u64>,
    pub rows: Option<u64>,
    pub barriers: Option<usize>,
    pub max_dev: Option<f64>,
}

impl ResultRow {
    fn warning(spec: StrategySpec, c: usize, p: usize, message: String) -> Self {
        log::warn!("{} C={c} p={p}: {message}", spec.label());
        Self {
            strategy: spec.label().into(),
            context_length: c,
            p,
            partition: format!("skipped: {message}"),
            ttft_sim: None,
            speedup: None,
            ttft_star: None,
            ttft_lower: None,
            dot_max: None,
            pairs: None,
            rows: None,
            barriers: None,
            max_dev: None,
        }
    }
}

fn sweep_cell(
    config: &ExperimentConfig,
    table: Option<&PartitionLookupTable>,
    c: usize,
    p: usize,
) -> Result<Vec<ResultRow>> {
    let mut specs = config.strategies.clone();
    specs.sort();
    specs.dedup();
    if p > c {
        return Ok(specs
            .into_iter()
            .map(|s| ResultRow::warning(s, c, p, format!("p={p} exceeds C={c}")))
            .collect());
    }
    let model = &config.model;
    let sim = |strategy, part: &ContextPartition| {
        simulate_ttft(strategy, part, model, &config.cost, &config.network, None).ttft
    };
    let serial_ttft = sim(Strategy::Serial, &even_partition(c, 1)?);
    let alpha_eff = config.cost.alpha * model.n_layers as f64;
    let star = ttft_star(c, p, alpha_eff);
    let lower = match ttft_practical_lower(c, p, model, &config.cost, &config.search) {
        Ok(t) => Some(t),
        Err(e) => {
            log::warn!("C={c} p={p}: no practical lower bound: {e}");
            None
        }
    };
    let mut rows = Vec::new();
    for spec in specs {
        let part = match resolve_partition(config, table, spec, c, p) {
            Ok(part) => part,
            Err(e) => {
                rows.push(ResultRow::warning(spec, c, p, e.to_string()));
                continue;
            }
        };
        let strategy = spec.strategy();
        let ttft = sim(strategy, &part);
        let pairs = traffic_pairs(strategy, &part);
        let max_dev = if c <= config.numeric_check_max_context {
            let seed = config.seed.wrapping_add(c as u64);
            let (eq, _) = equivalence_report(strategy, model, &part, seed, &RunOptions::default())?;
            Some(eq.max_rel_deviation)
        } else {
            None
        };
        rows.push(ResultRow {
            strategy: spec.label().into(),
            context_length: c,
            p,
            partition: part.to_string(),
            ttft_sim: Some(ttft),
            speedup: Some(serial_ttft / ttft),
            ttft_star: Some(star),
            ttft_lower: lower,
            dot_max: dot_product_counts(strategy, &part).into_iter().max(),
            pairs: Some(pairs),
            rows: Some(2 * pairs),
            barriers: Some(if strategy == Strategy::Tsp && part.process_count() > 1 {
                model.n_layers
            } else {
                0
            }),
            max_dev,
        });
    }
    Ok(rows)
}

/// Simulated TTFT and accounting for every (C, p, strategy), sorted by C, p
/// and strategy. Cells run in parallel.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let table = if config.uses_table() {
        Some(config.load_table()?)
    } else {
        None
    };
    let mut cells: Vec<(usize, usize)> = config
        .context_lengths
        .iter()
        .flat_map(|c| config.process_counts.iter().map(move |p| (*c, *p)))
        .collect();
    cells.sort();
    cells.dedup();
    let results: Vec<Result<Vec<ResultRow>>> = cells
        .par_iter()
        .map(|(c, p)| sweep_cell(config, table.as_ref(), *c, *p))
        .collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

/// One searched table entry.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchEntry {
    pub context_length: usize,
    pub partition: Option<String>,
    pub ratios: Option<Vec<f64>>,
    pub ttft: Option<f64>,
    pub even_ttft: Option<f64>,
    pub evaluations: usize,
    pub error: Option<String>,
}

impl SearchEntry {
    fn render(&self) -> String {
        match (&self.error, &self.partition, self.ttft, self.even_ttft) {
            (Some(e), ..) => format!("C={} error: {e}", self.context_length),
            (None, Some(part), Some(t), Some(even)) => format!(
                "C={} partition [{part}] ttft {t:.6e} s (even {even:.6e} s, {:.2}% faster, {} evaluations)",
                self.context_length,
                100.0 * (even - t) / even,
                self.evaluations
            ),
            _ => format!("C={} incomplete", self.context_length),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchReport {
    pub entries: Vec<SearchEntry>,
    pub table: PartitionLookupTable,
}

/// Searches a KVR partition per context length and merges the results into
/// the lookup table file (created if missing). A failed entry is reported
/// and the batch continues.
pub fn cmd_search(config: &ExperimentConfig) -> Result<SearchReport> {
    let path = config.table_path()?.to_path_buf();
    let p = config.table_processes;
    let mut table = if path.exists() {
        let t = PartitionLookupTable::load(&path)?;
        if t.processes() != p {
            return Err(Error::Config(format!(
                "{} holds {}-rank entries, config asks for {p}",
                path.display(),
                t.processes()
            )));
        }
        t
    } else {
        PartitionLookupTable::new(p)
    };
    let mut lengths = config.context_lengths.clone();
    lengths.sort();
    lengths.dedup();
    let mut entries = Vec::new();
    for c in lengths {
        let outcome = (|| {
            let eval = |part: &ContextPartition| {
                Ok(simulate_ttft(Strategy::Kvr, part, &config.model, &config.cost, &config.network, None).ttft)
            };
            let found = hierarchical_grid_search(c, p, &config.search, eval)?;
            let even = eval(&even_partition(c, p)?)?;
            table.insert_partition(&found.partition)?;
            Ok::<_, Error>((found, even))
        })();
        entries.push(match outcome {
            Ok((found, even)) => SearchEntry {
                context_length: c,
                partition: Some(found.partition.to_string()),
                ratios: Some(found.partition.ratios()),
                ttft: Some(found.ttft),
                even_ttft: Some(even),
                evaluations: found.evaluations,
                error: None,
            },
            Err(e) => SearchEntry {
                context_length: c,
                partition: None,
                ratios: None,
                ttft: None,
                even_ttft: None,
                evaluations: 0,
                error: Some(e.to_string()),
            },
        });
    }
    table.save(&path)?;
    Ok(SearchReport { entries, table })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictReport {
    pub context_length: usize,
    pub ratios: Vec<f64>,
    pub partition: String,
    pub ttft: f64,
    pub fresh_partition: String,
    pub fresh_ttft: f64,
    /// `(ttft − fresh_ttft) / fresh_ttft`, in percent.
    pub gap_pct: f64,
    /// C lies outside the table range and the nearest entry was used.
    pub clamped: bool,
}

impl PredictReport {
    pub fn render(&self) -> String {
        format!(
            "C={} predicted [{}]{} ttft {:.6e} s; fresh search [{}] ttft {:.6e} s; gap {:.3}%\n",
            self.context_length,
            self.partition,
            if self.clamped { " (clamped)" } else { "" },
            self.ttft,
            self.fresh_partition,
            self.fresh_ttft,
            self.gap_pct
        )
    }
}

/// Interpolated partition for `C`, its simulated TTFT, and the gap to a
/// fresh search at the same length.
pub fn cmd_predict(config: &ExperimentConfig, context_length: usize) -> Result<PredictReport> {
    let table = config.load_table()?;
    let p = table.processes();
    let ratios = interpolate_partition(&table, context_length)?;
    let part = partition_from_ratios(context_length, p, &ratios)?;
    let clamped = !table.covers(context_length);
    if clamped {
        log::warn!("C={context_length} is outside the lookup table range, nearest entry used");
    }
    let sim = |part: &ContextPartition| {
        simulate_ttft(Strategy::Kvr, part, &config.model, &config.cost, &config.network, None).ttft
    };
    let ttft = sim(&part);
    let fresh = searched_partition(config, context_length, p)?;
    let fresh_ttft = sim(&fresh);
    Ok(PredictReport {
        context_length,
        ratios,
        partition: part.to_string(),
        ttft,
        fresh_partition: fresh.to_string(),
        fresh_ttft,
        gap_pct: 100.0 * (ttft - fresh_ttft) / fresh_ttft,
        clamped,
    })
}

/// One CSV row of `noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub strategy: String,
    #[serde(rename = "C")]
    pub context_length: usize,
    pub p: usize,
    pub partition: String,
    pub slowdown_factor: f64,
    pub trials: usize,
    pub quiet_ttft: f64,
    pub mean_pct: f64,
    pub max_pct: f64,
    /// Same for both rows of a (C, p) cell.
    pub verdict: String,
}

/// TSP and KVR degradation under the noisy sidecar for every (C, p) with
/// `1 < p <= C`.
pub fn cmd_noise(config: &ExperimentConfig) -> Result<Vec<NoiseRow>> {
    let table = if config.uses_table() {
        Some(config.load_table()?)
    } else {
        None
    };
    let mut cells: Vec<(usize, usize)> = config
        .context_lengths
        .iter()
        .flat_map(|c| config.process_counts.iter().map(move |p| (*c, *p)))
        .filter(|(c, p)| *p > 1 && p <= c)
        .collect();
    cells.sort();
    cells.dedup();
    let results: Vec<Result<Vec<NoiseRow>>> = cells
        .par_iter()
        .map(|&(c, p)| {
            let mut pair = Vec::new();
            for spec in [StrategySpec::Tsp, StrategySpec::Kvr] {
                let part = resolve_partition(config, table.as_ref(), spec, c, p)?;
                let study = noise_study(
                    spec.strategy(),
                    &part,
                    &config.model,
                    &config.cost,
                    &config.network,
                    config.noise.slowdown_factor,
                    config.seed,
                    config.noise.trials,
                )?;
                pair.push(NoiseRow {
                    strategy: spec.label().into(),
                    context_length: c,
                    p,
                    partition: part.to_string(),
                    slowdown_factor: config.noise.slowdown_factor,
                    trials: study.trials,
                    quiet_ttft: study.quiet_ttft,
                    mean_pct: study.mean_pct,
                    max_pct: study.max_pct,
                    verdict: String::new(),
                });
            }
            let verdict = match pair[1].mean_pct.total_cmp(&pair[0].mean_pct) {
                std::cmp::Ordering::Less => "KVR more robust",
                std::cmp::Ordering::Greater => "TSP more robust",
                std::cmp::Ordering::Equal => "no difference",
            };
            for row in &mut pair {
                row.verdict = verdict.into();
            }
            Ok(pair)
        })
        .collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}
