//! Train HIE on a small synthetic graph and report filtered test metrics.
//!
//! cargo run --release --example train_synthetic

use hie_kge::evaluator::{aggregate_metrics, evaluate, EvalOptions};
use hie_kge::hie::HieConfig;
use hie_kge::kg_data::Split;
use hie_kge::model::ModelKind;
use hie_kge::synthetic::relational_ring;
use hie_kge::trainer::{train, TrainConfig};

fn main() -> hie_kge::Result<()> {
    let kg = relational_ring(100, 0.05, 0)?;
    let config = TrainConfig {
        steps: 2000,
        learning_rate: 0.03,
        gamma: 6.0,
        batch_size: 128,
        num_negatives: 32,
        alpha_temp: 1.0,
        log_every: 500,
        ..TrainConfig::default()
    };
    let outcome = train(&kg, ModelKind::Hie, &HieConfig::new(32, 2), &config)?;
    for rec in &outcome.log {
        println!("step {:>5}  loss {:.4}", rec.step, rec.mean_loss);
    }
    let ranks = evaluate(&outcome.model, &kg, Split::Test, EvalOptions::default())?;
    let m = aggregate_metrics(&ranks)?;
    println!("test: MRR {:.3}  Hits@1 {:.3}  Hits@10 {:.3}", m.mrr, m.hits1, m.hits10);
    Ok(())
}
