//! Train briefly, save a checkpoint, reload it and confirm the scores match.

use hie_kge::cli::{load_checkpoint, train_on, RunConfig};
use hie_kge::model::KgeModel;
use hie_kge::synthetic::relational_ring;

fn main() -> hie_kge::Result<()> {
    let kg = relational_ring(40, 0.1, 1)?;
    let out = std::env::temp_dir().join("hie_checkpoint_example");
    let cfg = RunConfig { dim: 16, steps: 200, batch_size: 32, out: out.clone(), ..RunConfig::default() };
    let summary = train_on(&kg, &cfg)?;
    let loaded = load_checkpoint(&summary.checkpoint)?;
    println!("step {} with {} tensors", loaded.meta.step, loaded.tensors.len());
    let model = loaded.into_model()?;
    let t = kg.test[0];
    assert_eq!(model.score(&t), summary.model.score(&t));
    println!("reloaded score {:.6} matches; files in {}", model.score(&t), out.display());
    Ok(())
}
