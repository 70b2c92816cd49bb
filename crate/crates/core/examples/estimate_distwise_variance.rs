// SPDX-License-Identifier: Apache-2.0

//! Split observed test-set variance into the part that comes from the finite
//! test set and the part that would survive on an infinite one.
//!
//! ```text
//! cargo run --release --example estimate_distwise_variance
//! ```

use runvar::estimators::variance_report;
use runvar::oracle::{gen_skill_world, ParamLaw};

fn main() -> runvar::Result<()> {
    // Runs differ in a shared "skill", so accuracy really does vary between
    // runs even on an infinite test set.
    let difficulties = ParamLaw::Uniform(-0.5, 0.5).draw(20_000, 1)?;
    let world = gen_skill_world(difficulties, &[(-0.3, 0.5), (0.3, 0.5)])?;
    let test_set = world.draw_test_set(2_000, 2);
    let c = world.sample_subset(&test_set, 400, 3)?;

    let r = variance_report(&c)?;
    println!("runs = {}, examples = {}", r.n_runs, r.n_examples);
    println!("mean accuracy            {:.4}", r.mean_accuracy);
    println!("test-set std             {:.4}%", 100.0 * r.testset_std);
    println!("independent-example std  {:.4}%", 100.0 * r.hyp1_std);
    println!("distribution-wise std    {:.4}%  (estimate)", 100.0 * r.distwise_std);
    println!(
        "distribution-wise std    {:.4}%  (ground truth)",
        100.0 * world.analytic().distwise_variance.sqrt()
    );
    println!("binomial std             {:.4}%", 100.0 * r.binomial_std);
    Ok(())
}
