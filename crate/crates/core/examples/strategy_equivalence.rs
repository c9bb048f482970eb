//! Serial, TSP and KVR produce the same hidden states and KV-cache.

use kv_runahead::engine::dot_product_counts;
use kv_runahead::model::synthetic_context;
use kv_runahead::oracle::naive_causal_forward;
use kv_runahead::partition::partition_from_ratios;
use kv_runahead::{even_partition, forward_serial, init_weights, run, ModelConfig, Strategy};

fn main() -> kv_runahead::Result<()> {
    // Grouped-query attention: 8 query heads share 2 KV heads.
    let cfg = ModelConfig {
        d_model: 64,
        n_heads: 8,
        n_kv_heads: 2,
        n_layers: 3,
        seed: 42,
        ..ModelConfig::default()
    };
    let weights = init_weights::<f64>(&cfg)?;
    let context = synthetic_context::<f64>(200, cfg.d_model, 7);
    let (serial, serial_cache) = forward_serial(&context, &weights)?;
    let naive = naive_causal_forward(&context, &weights)?;
    println!("serial vs naive loops: max rel dev {:.2e}", serial.max_rel_deviation(&naive));

    let runs = [
        (Strategy::Tsp, even_partition(200, 4)?),
        (Strategy::Kvr, even_partition(200, 4)?),
        (Strategy::Kvr, partition_from_ratios(200, 4, &[0.34, 0.26, 0.22, 0.18])?),
    ];
    for (strategy, part) in runs {
        let res = run(strategy, &context, &part, &weights)?;
        let cache_dev = serial_cache
            .iter()
            .zip(&res.cache)
            .map(|(a, b)| a.k.max_rel_deviation(&b.k).max(a.v.max_rel_deviation(&b.v)))
            .fold(0.0, f64::max);
        println!(
            "{strategy} [{part}]: hidden dev {:.2e}, cache dev {:.2e}, max dots/layer {} (analytic {:?})",
            res.hidden_out.max_rel_deviation(&serial),
            cache_dev,
            res.metrics.max_dot_products_per_layer(),
            dot_product_counts(strategy, &part),
        );
    }
    Ok(())
}
