//! A small hyperparameter sweep over hierarchy depth and first-level weight.

use hie_kge::cli::{sweep_on, RunConfig, SweepGrid};
use hie_kge::synthetic::relational_ring;

fn main() -> hie_kge::Result<()> {
    let kg = relational_ring(40, 0.1, 2)?;
    let base = RunConfig {
        dim: 16,
        steps: 300,
        batch_size: 32,
        negatives: 8,
        lr: 0.03,
        gamma: 6.0,
        out: std::env::temp_dir().join("hie_sweep_example"),
        ..RunConfig::default()
    };
    let grid = SweepGrid { levels: vec![1, 2, 3], lambda1: vec![0.3, 0.7], ..SweepGrid::default() };
    for row in sweep_on(&kg, &base, &grid)? {
        println!("levels {} lambda {:<24} MRR {:.3}", row.levels, row.lambda, row.mrr.unwrap_or(f64::NAN));
    }
    println!("table: {}", base.out.join("sweep.csv").display());
    Ok(())
}
