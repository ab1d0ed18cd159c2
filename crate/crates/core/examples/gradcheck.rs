//! Compare analytic gradients against central finite differences.

use hie_kge::hie::{HieConfig, Norm, TransformKind};
use hie_kge::kg_data::Triple;
use hie_kge::model::{jitter_parameters, Model, ModelKind};
use hie_kge::trainer::{grad_check, TrainConfig, TrainingBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hie_kge::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let train: Vec<Triple> = (0..40)
        .map(|_| Triple::new(rng.gen_range(0..20), rng.gen_range(0..5), rng.gen_range(0..20)))
        .collect();
    let config = TrainConfig { batch_size: 4, num_negatives: 4, ..TrainConfig::default() };
    for transform in [TransformKind::Diagonal, TransformKind::Rank1] {
        for norm in [Norm::L1, Norm::L2] {
            let mut hie = HieConfig::new(8, 2);
            hie.transform = transform;
            hie.norm = norm;
            let mut model = Model::init(ModelKind::Hie, 20, 5, &hie, 1)?;
            jitter_parameters(&mut model, &mut rng, 0.5);
            let batch = TrainingBatch::sample(&train, 4, 4, 20, &mut rng)?;
            let report = grad_check(&mut model, &batch, &config, 1e-6, None, &mut rng)?;
            println!(
                "{:>8} {norm}: max rel error {:.2e} over {} coordinates",
                transform.to_string(),
                report.max_rel_error,
                report.coords_checked
            );
        }
    }
    Ok(())
}
