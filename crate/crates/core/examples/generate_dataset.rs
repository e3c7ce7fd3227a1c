//! Generate a synthetic dataset, save it, load it back and split it.
//!
//! cargo run --release --example generate_dataset -- [path.json]

use crm::data::{generate_synthetic, load_dataset, save_dataset, split_dataset, LabelRule, SyntheticConfig};

fn main() -> crm::Result<()> {
    let path = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scenes.json".into()));
    let config = SyntheticConfig { scenes: 120, frames: 3, modalities: 2, rule: LabelRule::KeyactorSide, ..Default::default() };
    let data = generate_synthetic(&config)?;
    println!("{} scenes, class counts {:?}", data.len(), data.class_counts());

    let s = &data.scenes[0];
    let key = s.key_actor.expect("keyactor-side scenes name a key actor");
    println!(
        "scene 0: {} persons, key actor {} doing action {} at x = {:.0}, group {}",
        s.persons.len(),
        key,
        s.persons[key].action,
        s.persons[key].bbox.center().0,
        s.group
    );

    save_dataset(&data, &path)?;
    let back = load_dataset(&path)?;
    assert_eq!(back.scenes, data.scenes);
    assert_eq!(back.frames, data.frames);
    println!("round trip through {} ok", path.display());

    let (train, test) = split_dataset(&back, 0.75, 1)?;
    println!("split: {} train / {} test", train.len(), test.len());
    let clip = train.clip(0, 1)?;
    println!("motion clip: {} frames of {:?}", clip.frames.len(), clip.frames[0].shape());
    Ok(())
}
