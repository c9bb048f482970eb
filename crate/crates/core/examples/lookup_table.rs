//! Build a partition lookup table, save it, and interpolate unseen lengths.

use kv_runahead::partition::{hierarchical_grid_search, interpolate_partition, partition_from_ratios};
use kv_runahead::{
    simulate_ttft, ContextPartition, CostModel, ModelConfig, NetworkModel, PartitionLookupTable, SearchConfig,
    Strategy,
};

fn main() -> kv_runahead::Result<()> {
    let model = ModelConfig::default();
    let (cost, net) = (CostModel::default(), NetworkModel::default());
    let ttft = |part: &ContextPartition| Ok(simulate_ttft(Strategy::Kvr, part, &model, &cost, &net, None).ttft);
    let p = 4;

    let mut table = PartitionLookupTable::new(p);
    for c in [4096, 8192, 12288, 16384] {
        let found = hierarchical_grid_search(c, p, &SearchConfig::default(), ttft)?;
        println!("entry C={c}: [{}]", found.partition);
        table.insert_partition(&found.partition)?;
    }
    let path = std::env::temp_dir().join("kvr_lookup_table.json");
    table.save(&path)?;
    let table = PartitionLookupTable::load(&path)?;
    println!("saved to {}", path.display());

    for c in [6144, 10240, 14336, 20000] {
        let ratios = interpolate_partition(&table, c)?;
        let predicted = partition_from_ratios(c, p, &ratios)?;
        let fresh = hierarchical_grid_search(c, p, &SearchConfig::default(), ttft)?;
        let gap = 100.0 * (ttft(&predicted)? - fresh.ttft) / fresh.ttft;
        let note = if table.covers(c) { "" } else { " (clamped)" };
        println!("C={c}: predicted [{predicted}]{note}, searched [{}], gap {gap:.3}%", fresh.partition);
    }
    Ok(())
}
