//! Prints the experiment config with every default filled in.

fn main() -> kv_runahead::Result<()> {
    let config = kv_runahead::cli::ExperimentConfig::default();
    println!("{}", serde_json::to_string_pretty(&config)?);
    Ok(())
}
