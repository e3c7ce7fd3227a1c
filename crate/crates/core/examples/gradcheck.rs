//! Finite-difference check of every parameter group of a small network,
//! once as is and once with a deliberately broken gradient.
//!
//! cargo run --release --example gradcheck

use crm::cli::{cmd_gradcheck, GradcheckConfig};

fn main() -> crm::Result<()> {
    let cfg = GradcheckConfig { per_group: 20, ..GradcheckConfig::default() };
    for corrupt in [false, true] {
        let report = cmd_gradcheck(&cfg, corrupt)?;
        println!("corrupted gradient: {corrupt}");
        for g in &report.groups {
            println!("  {:<9} {:>6} params, max relative error {:.2e}", g.group, g.params, g.max_rel_error);
        }
        println!("  {}", if report.passed { "pass" } else { "fail" });
    }
    Ok(())
}
