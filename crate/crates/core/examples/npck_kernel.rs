// SPDX-License-Identifier: Apache-2.0

//! Posterior correlation kernel over synthetic logits: each example is a
//! mix of a few shared latent directions plus noise, and two examples are
//! planted duplicates.

use rand_distr::{Distribution, StandardNormal};
use runvar::npck::{effective_dimension, npck_matrix, npck_top_pairs};
use runvar::rng::CounterRng;
use runvar::LogitTensor;

fn main() -> runvar::Result<()> {
    let (runs, n, classes, latents) = (64, 300, 10, 8);
    let mut rng = CounterRng::new(3);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let loadings: Vec<f64> = (0..n * latents).map(|_| normal()).collect();
    let mut values = Vec::with_capacity(runs * n * classes);
    for _ in 0..runs {
        let z: Vec<f64> = (0..latents * classes).map(|_| normal()).collect();
        for i in 0..n {
            let src = if i == 299 { 5 } else { i };
            for k in 0..classes {
                let shared: f64 = (0..latents).map(|l| loadings[src * latents + l] * z[l * classes + k]).sum();
                values.push((shared + 0.5 * normal()) as f32);
            }
        }
    }
    let t = LogitTensor::new(runs, n, classes, values)?;

    let k = npck_matrix(&t)?;
    for th in [0.75, 0.5, 0.25] {
        println!("pairs with kappa >= {th}: {}", npck_top_pairs(&k, th).len());
    }
    let top = &npck_top_pairs(&k, 0.75)[..3];
    println!("top pairs: {top:?}");
    let ve = effective_dimension(&k, 20)?;
    println!("variance explained by 8 components: {:.1}%", 100.0 * ve.cumulative[7]);
    println!("variance explained by 20 components: {:.1}%", 100.0 * ve.cumulative[19]);
    Ok(())
}
