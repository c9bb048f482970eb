//! Per-rank event timeline as JSON lines, for external plotting.

use kv_runahead::{simulate_ttft, ContextPartition, CostModel, ModelConfig, NetworkModel, Strategy};

fn main() -> kv_runahead::Result<()> {
    let model = ModelConfig {
        n_layers: 2,
        ..ModelConfig::default()
    };
    let part = ContextPartition::from_sizes(&[1400, 1100, 900, 696])?;
    for strategy in [Strategy::Tsp, Strategy::Kvr] {
        let tl = simulate_ttft(
            strategy,
            &part,
            &model,
            &CostModel::default(),
            &NetworkModel::low_bandwidth(),
            None,
        );
        eprintln!("{strategy}: ttft {:.4e} s, wire time {:.4e} s", tl.ttft, tl.transfer_seconds);
        print!("{}", tl.to_json_lines());
    }
    Ok(())
}
