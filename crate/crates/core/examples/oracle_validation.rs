// SPDX-License-Identifier: Apache-2.0

//! Check the variance estimators against worlds whose answers are known in
//! closed form.
//!
//! ```text
//! cargo run --release --example oracle_validation
//! ```

use runvar::oracle::{validate_theorems, ValidationConfig, WorldSpec};

const WORLDS: [&str; 3] = [
    "kind = calibrated_binary\nuniverse = 1000000\np_law = uniform(0, 1)\n",
    "kind = calibrated_kway\nuniverse = 100000\nclasses = 10\ndirichlet_alpha = 1\n",
    "kind = skill_world\nuniverse = 10000\ndifficulty_law = uniform(-0.5, 0.5)\nskills = -1:0.5, 1:0.5\n",
];

fn main() -> runvar::Result<()> {
    let cfg = ValidationConfig {
        n: 1000,
        runs: 256,
        replicates: 100,
        batches: 2,
        seed: 1,
    };
    for text in WORLDS {
        let world = WorldSpec::parse(text)?.build()?;
        let report = validate_theorems(&world, &cfg)?;
        println!("{} (U = {})", world.kind().name(), world.universe());
        for c in &report.checks {
            println!(
                "  {} {:<28} observed {:.4e}  target {:.4e}  se {:.1e}",
                c.status.label(),
                c.name,
                c.observed,
                c.target,
                c.standard_error
            );
        }
        for note in &report.notes {
            println!("  note: {note}");
        }
    }
    Ok(())
}
