// SPDX-License-Identifier: Apache-2.0

//! Turn a 10-class run matrix into the 126 balanced "five classes vs the
//! other five" tasks and compare each task's variance with err/2n.

use runvar::estimators::enumerate_binary_tasks;
use runvar::oracle::gen_calibrated_kway;

fn main() -> runvar::Result<()> {
    let world = gen_calibrated_kway(10, 0.3, 50_000, 4)?;
    let test_set = world.draw_test_set(2_000, 1);
    let m = world.sample_predictions(&test_set, 300, 2)?;

    let tasks = enumerate_binary_tasks(&m, None)?;
    println!("{} tasks", tasks.len());
    println!("{:<12} {:>7} {:>7} {:>11} {:>11} {:>11}", "positive", "err", "ece", "observed", "err/2n", "binomial");
    for t in tasks.iter().take(10) {
        let classes: Vec<String> = t.positive_classes.iter().map(|c| c.to_string()).collect();
        println!(
            "{:<12} {:>7.4} {:>7.4} {:>11.3e} {:>11.3e} {:>11.3e}",
            classes.join(""),
            t.err,
            t.ece,
            t.observed_variance,
            t.calibrated_variance,
            t.binomial_variance
        );
    }
    let below = tasks.iter().filter(|t| t.observed_variance < t.ece_lower_bound).count();
    println!("tasks below the ECE bound: {below}");
    Ok(())
}
