//! Ideal and practical TTFT bounds with free communication.

use kv_runahead::simnet::{calibrate_alpha, ttft_practical_lower, ttft_star};
use kv_runahead::{CostModel, ModelConfig, SearchConfig};

fn main() -> kv_runahead::Result<()> {
    // Fit alpha from (C, seconds) measurements of one-rank prompts.
    let measured = [(1024, 0.0021), (2048, 0.0083), (4096, 0.0337), (8192, 0.1339)];
    let alpha = calibrate_alpha(&measured)?;
    println!("calibrated alpha = {alpha:.4e} s");

    let model = ModelConfig {
        n_layers: 1,
        ..ModelConfig::default()
    };
    let cost = CostModel::attention_only(alpha);
    let c = 8192;
    let one = ttft_star(c, 1, alpha);
    println!(" p   ideal (s)    practical (s)  ideal speedup  practical speedup");
    for p in 1..=8 {
        let ideal = ttft_star(c, p, alpha);
        let practical = ttft_practical_lower(c, p, &model, &cost, &SearchConfig::default())?;
        println!(
            "{p:>2}  {ideal:.5e}  {practical:.5e}    {:>6.3}x        {:>6.3}x",
            one / ideal,
            one / practical
        );
    }
    Ok(())
}
