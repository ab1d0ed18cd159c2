//! TransE, DistMult and RotatE trained with the same loop as HIE.

use hie_kge::evaluator::{aggregate_metrics, evaluate, EvalOptions};
use hie_kge::hie::HieConfig;
use hie_kge::kg_data::Split;
use hie_kge::model::ModelKind;
use hie_kge::synthetic::relational_ring;
use hie_kge::trainer::{train, TrainConfig};

fn main() -> hie_kge::Result<()> {
    let kg = relational_ring(60, 0.05, 4)?;
    let config = TrainConfig {
        steps: 800,
        learning_rate: 0.03,
        gamma: 6.0,
        batch_size: 64,
        num_negatives: 16,
        ..TrainConfig::default()
    };
    let hie = HieConfig::new(16, 2);
    for kind in [ModelKind::Hie, ModelKind::TransE, ModelKind::DistMult, ModelKind::RotatE] {
        let model = train(&kg, kind, &hie, &config)?.model;
        let m = aggregate_metrics(&evaluate(&model, &kg, Split::Test, EvalOptions::default())?)?;
        println!("{:<9} MRR {:.3}  Hits@10 {:.3}", kind.to_string(), m.mrr, m.hits10);
    }
    Ok(())
}
