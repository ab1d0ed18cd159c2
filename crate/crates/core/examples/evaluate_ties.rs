//! Filtered versus raw ranks, and the two tie-breaking rules, on a model that
//! scores every triple the same.

use hie_kge::evaluator::{aggregate_metrics, evaluate, EvalOptions, TieBreak};
use hie_kge::hie::HieConfig;
use hie_kge::kg_data::Split;
use hie_kge::model::{KgeModel, Model, ModelKind};
use hie_kge::synthetic::relational_ring;

fn main() -> hie_kge::Result<()> {
    let kg = relational_ring(20, 0.1, 0)?;
    let mut model = Model::init(ModelKind::Hie, kg.num_entities(), kg.num_relations(), &HieConfig::new(8, 2), 0)?;
    for t in model.tensors_mut() {
        t.fill(0.0);
    }
    for filtered in [true, false] {
        for tie_break in [TieBreak::Pessimistic, TieBreak::Strict] {
            let ranks = evaluate(&model, &kg, Split::Test, EvalOptions { filtered, tie_break })?;
            let m = aggregate_metrics(&ranks)?;
            println!("filtered {filtered:<5} {tie_break:?}: MR {:.2}", m.mr);
        }
    }
    Ok(())
}
