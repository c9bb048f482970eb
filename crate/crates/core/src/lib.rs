//! Parallel prompt-phase (prefill) execution for causal transformers.
//!
//! Two parallel strategies are implemented on top of a small, deterministic
//! transformer:
//!
//! * **TSP** (tensor/sequence parallel): an even context split where every
//!   rank all-gathers K and V each layer.
//! * **KVR** (KV-Runahead): an uneven context split where rank `i` receives
//!   the KV-cache of ranks `0..i`, appends its own rows and hands the result
//!   to rank `i + 1`.
//!
//! Around the engine sit a discrete-event cost simulator ([`simnet`]), the
//! context-partition search and lookup table ([`partition`]), brute-force
//! reference implementations ([`oracle`]) and the batch experiment runner
//! behind the `kvr` binary ([`cli`]).

pub mod cli;
pub mod engine;
mod error;
pub mod model;
pub mod oracle;
pub mod partition;
pub mod simnet;

pub use engine::{run, ExecutionMetrics, ExecutionResult, Strategy};
pub use error::{Error, Result};
pub use model::{init_weights, forward_serial, Matrix, ModelConfig, Precision, WeightSet};
pub use partition::{even_partition, ContextPartition, PartitionLookupTable, SearchConfig};
pub use simnet::{simulate_ttft, CostModel, NetworkModel, NoiseSidecar, Timeline};
