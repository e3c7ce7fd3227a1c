//! Encode a hand-made scene as an activity map, decode it back by pooling
//! and write the fields as images.
//!
//! cargo run --release --example activity_maps -- [out_dir]

use crm::activity::image::{composite_image, field_image};
use crm::activity::{
    build_activity_map, decode_group_by_pooling, decode_individual_by_pooling, BBox, LabelSpace, MapGeometry,
    Person, Scene,
};

fn main() -> crm::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "activity_maps_out".into()));
    std::fs::create_dir_all(&out).expect("create output directory");

    // Image coordinates of a 96x160 frame, mapped onto a 24x40 grid.
    let geometry = MapGeometry { image_height: 96, image_width: 160, ..MapGeometry::grid(24, 40) };
    let labels = LabelSpace::new(4, 4);
    let scene = Scene {
        id: 0,
        persons: vec![
            Person { bbox: BBox::new(12.0, 30.0, 26.0, 58.0), action: 0 },
            Person { bbox: BBox::new(60.0, 20.0, 72.0, 50.0), action: 1 },
            Person { bbox: BBox::new(118.0, 40.0, 132.0, 70.0), action: 3 },
        ],
        group: 3,
        key_actor: Some(2),
    };

    let map = build_activity_map(&scene, &geometry, labels)?;
    for f in 0..labels.fields() {
        println!("field {f}: max {:.3}", map.field_max(f));
        field_image(&map, f).save(&out.join(format!("field{f:02}.pgm")))?;
    }
    composite_image(&map, 0..4).save(&out.join("individual.ppm"))?;
    composite_image(&map, 4..8).save(&out.join("group.ppm"))?;

    let boxes: Vec<BBox> = scene.boxes().iter().map(|b| geometry.to_grid(b)).collect();
    let (group, scores) = decode_group_by_pooling(&map, &boxes)?;
    println!("group decoded {group} (true {}), scores {scores:.2?}", scene.group);
    for (p, b) in scene.persons.iter().zip(&boxes) {
        println!("person action decoded {} (true {})", decode_individual_by_pooling(&map, b)?, p.action);
    }
    println!("images written to {}", out.display());
    Ok(())
}
