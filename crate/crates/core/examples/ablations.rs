//! Train the aggregation-input ablations side by side on the same data and
//! compare held-out accuracy: feature map + activity map, feature map only,
//! activity map only, and pooling the final map instead of the classifier.
//! The schedule is a short demo; the numbers only separate with longer runs.
//!
//! cargo run --release --example ablations

use crm::data::{generate_synthetic, split_dataset, SyntheticConfig};
use crm::model::{AggregationInput, CrmParams, ModelConfig};
use crm::training::{evaluate, train_two_step, GroupDecoder, LossWeights, LrStep, PhaseConfig, TrainConfig};

fn main() -> crm::Result<()> {
    let data = generate_synthetic(&SyntheticConfig {
        image_height: 48,
        image_width: 80,
        grid_height: 12,
        grid_width: 20,
        scenes: 120,
        ..SyntheticConfig::default()
    })?;
    let (train, heldout) = split_dataset(&data, 0.75, 0)?;
    let base = ModelConfig {
        image_height: 48,
        image_width: 80,
        grid_height: 12,
        grid_width: 20,
        backbone_widths: vec![8, 12, 12, 12],
        stages: 2,
        ..ModelConfig::default()
    }
    .with_uniform_width(8);
    let schedule = TrainConfig {
        phase1: PhaseConfig { schedule: vec![LrStep { epochs: 8, lr: 1e-3 }], weights: LossWeights::PHASE1 },
        phase2: PhaseConfig { schedule: vec![LrStep { epochs: 6, lr: 1e-3 }], weights: LossWeights::PHASE2 },
        ..TrainConfig::default()
    };

    // Phase one never touches the classifier, so the variants share it.
    let maps_only = TrainConfig { phase2: PhaseConfig { schedule: vec![], ..schedule.phase2.clone() }, ..schedule.clone() };
    let (shared, _, _) = train_two_step(CrmParams::init(base)?, &train, None, &maps_only, None, |_, _, _| Ok(()))?;
    let phase2 = TrainConfig { phase1: PhaseConfig { schedule: vec![], ..schedule.phase1.clone() }, ..schedule };

    for input in [AggregationInput::FeatureAndMap, AggregationInput::FeatureOnly, AggregationInput::MapOnly] {
        let model = shared.with_aggregation_input(input)?;
        let (model, _, _) = train_two_step(model, &train, None, &phase2, None, |_, _, _| Ok(()))?;
        let head = evaluate(&model, &heldout, 0, GroupDecoder::Head, None)?;
        println!("{input:?}: held-out MCA {:.3}, MPCA {:.3}", head.mca, head.mpca);
        if input == AggregationInput::FeatureAndMap {
            let pooled = evaluate(&model, &heldout, 0, GroupDecoder::Pooling, None)?;
            println!("pooling decoder on the final map: held-out MCA {:.3}", pooled.mca);
        }
    }
    Ok(())
}
