// SPDX-License-Identifier: Apache-2.0

//! Compare an observed accuracy distribution with two models of it: runs as
//! independent coin flips per example with the observed per-example rates,
//! and the binomial model with one shared rate.

use runvar::oracle::{gen_calibrated_binary, ParamLaw};
use runvar::simulate::{distribution_summary, simulate_binomial, simulate_hyp1, std_standard_error};
use runvar::{example_means, per_run_accuracy};

fn main() -> runvar::Result<()> {
    // Mean error near 5.6%, concentrated on a few hard examples.
    let world = gen_calibrated_binary(&ParamLaw::Beta(0.063, 0.063), 10_000, 1)?;
    let all: Vec<usize> = (0..world.universe()).collect();
    let c = world.sample_subset(&all, 1_000, 2)?;
    let acc = per_run_accuracy(&c);

    let observed = distribution_summary(&acc.values, 20)?;
    let hyp1 = simulate_hyp1(&example_means(&c), 20_000, 3)?;
    let binomial = simulate_binomial(acc.mean(), c.examples(), 20_000, 4)?;
    let h = distribution_summary(&hyp1.samples, 20)?;
    let b = distribution_summary(&binomial.samples, 20)?;

    println!("mean accuracy {:.4}", observed.mean);
    println!("observed std      {:.4}%", 100.0 * observed.std);
    println!(
        "independent std   {:.4}% (± {:.4}%)",
        100.0 * h.std,
        100.0 * std_standard_error(&hyp1.samples)
    );
    println!("binomial std      {:.4}%", 100.0 * b.std);
    println!("binomial / independent variance: {:.2}", (b.std / h.std).powi(2));
    Ok(())
}
