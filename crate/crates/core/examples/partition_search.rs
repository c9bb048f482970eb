//! Context-partition search against the cost model, checked by enumeration.

use kv_runahead::oracle::{exhaustive_partition_search, DEFAULT_SEARCH_BUDGET};
use kv_runahead::partition::{binary_search_two, hierarchical_grid_search};
use kv_runahead::{
    even_partition, simulate_ttft, ContextPartition, CostModel, ModelConfig, NetworkModel, SearchConfig, Strategy,
};

fn main() -> kv_runahead::Result<()> {
    let model = ModelConfig::default();
    let cost = CostModel::default();
    let net = NetworkModel::default();
    let ttft = |part: &ContextPartition| Ok(simulate_ttft(Strategy::Kvr, part, &model, &cost, &net, None).ttft);

    let two = binary_search_two(4096, 1, ttft)?;
    println!("p=2, C=4096: [{}] ttft {:.4e} s ({} evaluations)", two.partition, two.ttft, two.evaluations);

    let search = SearchConfig::default();
    for (c, p) in [(96, 4), (4096, 4), (8192, 8)] {
        let found = hierarchical_grid_search(c, p, &search, ttft)?;
        let even = ttft(&even_partition(c, p)?)?;
        println!(
            "p={p}, C={c}: [{}] ttft {:.4e} s, {:.1}% below even, first stride {}, {} evaluations",
            found.partition,
            found.ttft,
            100.0 * (even - found.ttft) / even,
            search.first_stride(c, p),
            found.evaluations
        );
    }

    let (best, best_ttft) = exhaustive_partition_search(96, 4, DEFAULT_SEARCH_BUDGET, ttft)?;
    println!("exhaustive p=4, C=96: [{best}] ttft {best_ttft:.4e} s");
    Ok(())
}
