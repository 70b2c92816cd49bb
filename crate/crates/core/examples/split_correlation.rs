// SPDX-License-Identifier: Apache-2.0

//! Do runs that score well on one half of the test set also score well on
//! the other half? With independent examples they should not.

use runvar::corr::{random_halves, split_correlation};
use runvar::oracle::{gen_calibrated_binary, gen_skill_world, ParamLaw};

fn main() -> runvar::Result<()> {
    let halves = random_halves(4_000, 9);

    let calibrated = gen_calibrated_binary(&ParamLaw::Uniform(0.0, 1.0), 100_000, 1)?;
    let c = calibrated.sample_subset(&calibrated.draw_test_set(4_000, 1), 500, 2)?;
    let rep = split_correlation(&c, &halves, 0.25)?;
    println!("independent examples: r = {:+.3}, p = {:.3}, uplift = {:+.4}%", rep.r, rep.p_value, 100.0 * rep.uplift);

    let d = ParamLaw::Normal(0.0, 1.0).draw(100_000, 3)?;
    let skill = gen_skill_world(d, &[(-0.2, 0.5), (0.2, 0.5)])?;
    let c = skill.sample_subset(&skill.draw_test_set(4_000, 1), 500, 2)?;
    let rep = split_correlation(&c, &halves, 0.25)?;
    println!("shared run skill:     r = {:+.3}, p = {:.1e}, uplift = {:+.4}%", rep.r, rep.p_value, 100.0 * rep.uplift);
    Ok(())
}
