//! Inspect the per-level distance and semantic terms of a single score.
//!
//! Extraction matrices start at zero, so every level repeats the first one
//! until the parameters move. The model is perturbed here to show distinct
//! levels.

use hie_kge::hie::{HieConfig, HieModel, TransformKind};
use hie_kge::kg_data::Triple;
use hie_kge::model::jitter_parameters;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hie_kge::Result<()> {
    let mut config = HieConfig::new(8, 3);
    config.transform = TransformKind::Rank1;
    let mut model = HieModel::init(4, 2, config, 7)?;
    jitter_parameters(&mut model, &mut ChaCha8Rng::seed_from_u64(7), 0.3);
    let triple = Triple::new(0, 1, 3);
    let b = model.score_breakdown(&triple);
    println!("alpha = {:.4}", model.params.alpha());
    for (l, (dp, ds)) in b.d_p.iter().zip(&b.d_s).enumerate() {
        println!("level {}: distance {dp:.4}  semantic {ds:.4}", l + 1);
    }
    println!("total {:.4}", b.total);
    Ok(())
}
