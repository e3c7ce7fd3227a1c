//! Two input streams: one network sees the appearance frames, another the
//! motion frames; their class probabilities are averaged.
//!
//! cargo run --release --example two_stream

use crm::data::{generate_synthetic, split_dataset, SyntheticConfig, MODALITY_CHANNELS};
use crm::model::{CrmParams, ModelConfig};
use crm::training::{
    fuse_predictions, predict, train_two_step, EvalReport, LossWeights, LrStep, PhaseConfig, TrainConfig,
};

fn main() -> crm::Result<()> {
    let data = generate_synthetic(&SyntheticConfig {
        image_height: 48,
        image_width: 80,
        grid_height: 12,
        grid_width: 20,
        frames: 3,
        modalities: 2,
        scenes: 120,
        ..SyntheticConfig::default()
    })?;
    let (train, heldout) = split_dataset(&data, 0.75, 0)?;
    let truth: Vec<usize> = heldout.scenes.iter().map(|s| s.group).collect();

    let mut streams = Vec::new();
    for (modality, &channels) in MODALITY_CHANNELS.iter().enumerate() {
        let model = CrmParams::init(
            ModelConfig {
                in_channels: channels,
                image_height: 48,
                image_width: 80,
                grid_height: 12,
                grid_width: 20,
                backbone_widths: vec![8, 12, 12, 12],
                stages: 2,
                ..ModelConfig::default()
            }
            .with_uniform_width(8),
        )?;
        let schedule = TrainConfig {
            phase1: PhaseConfig { schedule: vec![LrStep { epochs: 8, lr: 1e-3 }], weights: LossWeights::PHASE1 },
            phase2: PhaseConfig { schedule: vec![LrStep { epochs: 6, lr: 1e-3 }], weights: LossWeights::PHASE2 },
            modality,
            ..TrainConfig::default()
        };
        let (model, _, _) = train_two_step(model, &train, None, &schedule, None, |_, _, _| Ok(()))?;
        let preds = predict(&model, &heldout, modality, 1)?;
        let guess: Vec<usize> = preds.iter().map(|p| p.group()).collect();
        println!("stream {modality}: held-out MCA {:.3}", EvalReport::from_labels(&truth, &guess, 4, None)?.mca);
        streams.push(preds);
    }

    let mut fused = Vec::new();
    for (a, b) in streams[0].iter().zip(&streams[1]) {
        let p = fuse_predictions(&a.probs, &b.probs)?;
        fused.push(crm::activity::argmax_first(&p));
    }
    print!("{}", EvalReport::from_labels(&truth, &fused, 4, None)?.render());
    Ok(())
}
