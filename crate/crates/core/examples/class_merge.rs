//! Score predictions, then score them again with two classes merged into one.
//!
//! cargo run --example class_merge

use crm::training::{ClassMerge, EvalReport};

fn main() -> crm::Result<()> {
    // Five classes; the last two are often confused with each other.
    let truth = [0, 0, 1, 1, 2, 3, 3, 4, 4, 4];
    let pred = [0, 1, 1, 1, 2, 4, 3, 3, 4, 4];
    let plain = EvalReport::from_labels(&truth, &pred, 5, None)?;
    print!("{}", plain.render());

    let merge = ClassMerge::parse("4,5->4", 5)?;
    let merged = EvalReport::from_labels(&truth, &pred, 5, Some(&merge))?;
    println!("after merging classes 4 and 5:");
    print!("{}", merged.render());
    Ok(())
}
