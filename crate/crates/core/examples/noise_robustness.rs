//! TTFT degradation when one random link per layer is slowed down.

use kv_runahead::partition::hierarchical_grid_search;
use kv_runahead::simnet::noise_study;
use kv_runahead::{
    even_partition, simulate_ttft, ContextPartition, CostModel, ModelConfig, NetworkModel, SearchConfig, Strategy,
};

fn main() -> kv_runahead::Result<()> {
    let model = ModelConfig::default();
    let (cost, net) = (CostModel::default(), NetworkModel::default());
    let (c, p) = (8192, 4);
    let ttft = |part: &ContextPartition| Ok(simulate_ttft(Strategy::Kvr, part, &model, &cost, &net, None).ttft);
    let kvr_part = hierarchical_grid_search(c, p, &SearchConfig::default(), ttft)?.partition;
    let tsp_part = even_partition(c, p)?;

    println!("slowdown   TSP mean/max (%)    KVR mean/max (%)");
    for factor in [1.0, 2.0, 4.0, 8.0] {
        let tsp = noise_study(Strategy::Tsp, &tsp_part, &model, &cost, &net, factor, 0, 20)?;
        let kvr = noise_study(Strategy::Kvr, &kvr_part, &model, &cost, &net, factor, 0, 20)?;
        println!(
            "{factor:>5.1}x   {:>7.2} / {:>7.2}     {:>7.2} / {:>7.2}",
            tsp.mean_pct, tsp.max_pct, kvr.mean_pct, kvr.max_pct
        );
    }
    Ok(())
}
