//! KV traffic per layer for multi-head, grouped-query and multi-query attention.

use kv_runahead::engine::traffic_pairs;
use kv_runahead::{even_partition, simulate_ttft, CostModel, ModelConfig, NetworkModel, Strategy};

fn main() -> kv_runahead::Result<()> {
    let part = even_partition(8192, 4)?;
    let net = NetworkModel::low_bandwidth();
    println!("kv heads   TSP wire (s)   KVR wire (s)   pairs TSP/KVR per layer");
    for n_kv_heads in [32, 8, 1] {
        let model = ModelConfig {
            d_model: 4096,
            n_heads: 32,
            n_kv_heads,
            ..ModelConfig::default()
        };
        let wire = |s| simulate_ttft(s, &part, &model, &CostModel::default(), &net, None).transfer_seconds;
        println!(
            "{n_kv_heads:>8}   {:>12.4e}   {:>12.4e}   {}/{}",
            wire(Strategy::Tsp),
            wire(Strategy::Kvr),
            traffic_pairs(Strategy::Tsp, &part),
            traffic_pairs(Strategy::Kvr, &part)
        );
    }
    Ok(())
}
