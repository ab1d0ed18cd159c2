//! Train the full model and each ablated variant on the same graph.

use hie_kge::cli::{ablate_on, RunConfig};
use hie_kge::kg_data::Split;
use hie_kge::synthetic::relational_ring;

fn main() -> hie_kge::Result<()> {
    let kg = relational_ring(60, 0.05, 3)?;
    let base = RunConfig {
        dim: 16,
        steps: 600,
        batch_size: 64,
        negatives: 16,
        lr: 0.03,
        gamma: 6.0,
        split: Split::Test,
        out: std::env::temp_dir().join("hie_ablation_example"),
        ..RunConfig::default()
    };
    for row in ablate_on(&kg, &base)? {
        println!("{:<18} MRR {:.3}  Hits@10 {:.3}", row.variant, row.mrr, row.hits10);
    }
    Ok(())
}
