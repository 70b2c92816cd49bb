// SPDX-License-Identifier: Apache-2.0

//! Test-set variance of a calibrated binary ensemble against the closed-form
//! value err/2n, the ECE lower bound, and the binomial baseline.

use runvar::estimators::{calibration_bounds, ece_binary, testset_variance, binomial_variance};
use runvar::oracle::{gen_calibrated_binary, ParamLaw};
use runvar::per_run_accuracy;

fn main() -> runvar::Result<()> {
    let world = gen_calibrated_binary(&ParamLaw::Beta(0.5, 0.5), 200_000, 7)?;
    let n = 5_000;
    let test_set = world.draw_test_set(n, 1);
    let m = world.sample_predictions(&test_set, 1_000, 2)?;
    let c = runvar::correctness_from_predictions(&m);

    let acc = per_run_accuracy(&c);
    let err = 1.0 - acc.mean();
    let ece = ece_binary(&m)?;
    let b = calibration_bounds(err, ece, n, 2)?;

    println!("err = {err:.4}, ece = {ece:.4}");
    println!("observed variance    {:.3e}", testset_variance(&acc)?);
    println!("err/2n               {:.3e}", b.calibrated_variance);
    println!("(err - ece)/2n       {:.3e}", b.ece_lower_bound);
    println!("err/(n k^2)          {:.3e}", b.kway_lower_bound);
    println!("binomial             {:.3e}", binomial_variance(err, n)?);
    Ok(())
}
