//! Dot-product and KV-traffic accounting for the nine-token, three-rank case.

use kv_runahead::model::synthetic_context;
use kv_runahead::{init_weights, run, ContextPartition, ModelConfig, Strategy};

fn main() -> kv_runahead::Result<()> {
    let cfg = ModelConfig::default();
    let weights = init_weights::<f64>(&cfg)?;
    let context = synthetic_context::<f64>(9, cfg.d_model, 0);

    for (strategy, sizes) in [(Strategy::Tsp, [3, 3, 3]), (Strategy::Kvr, [4, 3, 2])] {
        let part = ContextPartition::from_sizes(&sizes)?;
        let m = run(strategy, &context, &part, &weights)?.metrics;
        println!("{strategy} [{part}]");
        println!("  dot products per rank per layer: {:?}", m.dot_products_per_layer());
        println!("  KV rows sent per layer:          {}", m.kv_rows_sent_per_layer());
        println!("  KV rows received per rank:       {:?}", m.kv_rows_received_per_layer());
        println!("  barriers:                        {}", m.barrier_count);
    }
    Ok(())
}
