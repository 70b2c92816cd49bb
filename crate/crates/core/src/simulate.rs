// SPDX-License-Identifier: Apache-2.0

//! Monte-Carlo accuracy distributions under examplewise independence and
//! under the binomial baseline.
//!
//! Trial `t` draws from the sub-stream `derive_key(seed, t)`, so samples are
//! identical for any thread count.

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ExampleMeans;
use crate::rng::{derive_key, uniform_at, CounterRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SimulationSource {
    Hyp1,
    Binomial,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulatedAccuracyDistribution {
    pub samples: Vec<f64>,
    pub source: SimulationSource,
    pub n_examples: usize,
    pub seed: u64,
}

/// Accuracy of `trials` simulated runs whose examples are independent coin
/// flips with success probabilities `e.means`.
pub fn simulate_hyp1(e: &ExampleMeans, trials: usize, seed: u64) -> Result<SimulatedAccuracyDistribution> {
    if trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    let n = e.means.len();
    if n == 0 {
        return Err(Error::NotEnoughExamples { needed: 1, got: 0 });
    }
    let samples = (0..trials)
        .into_par_iter()
        .map(|t| {
            let key = derive_key(seed, t as u64);
            let correct = e
                .means
                .iter()
                .enumerate()
                .filter(|&(i, &p)| uniform_at(key, i as u64) < p)
                .count();
            correct as f64 / n as f64
        })
        .collect();
    Ok(SimulatedAccuracyDistribution {
        samples,
        source: SimulationSource::Hyp1,
        n_examples: n,
        seed,
    })
}

/// `trials` draws of `Binomial(n, mean_acc) / n`.
pub fn simulate_binomial(
    mean_acc: f64,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<SimulatedAccuracyDistribution> {
    if !(0.0..=1.0).contains(&mean_acc) {
        return Err(Error::OutOfRange(format!("accuracy {mean_acc} outside [0, 1]")));
    }
    if n == 0 {
        return Err(Error::NotEnoughExamples { needed: 1, got: 0 });
    }
    if trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    let dist = Binomial::new(n as u64, mean_acc)
        .map_err(|e| Error::InvalidInput(format!("binomial: {e}")))?;
    let samples = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = CounterRng::substream(seed, t as u64);
            dist.sample(&mut rng) as f64 / n as f64
        })
        .collect();
    Ok(SimulatedAccuracyDistribution {
        samples,
        source: SimulationSource::Binomial,
        n_examples: n,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges; bin `b` is `[edges[b], edges[b+1])`, the last bin
    /// also holds its right edge.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Histogram of `samples` over `[lo, hi]`. Values outside are clamped
    /// into the first or last bin. A zero-width range puts everything in
    /// bin 0.
    pub fn over_range(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let bins = bins.max(1);
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|b| lo + width * b as f64).collect();
        let mut counts = vec![0u64; bins];
        for &x in samples {
            let idx = if width > 0.0 {
                (((x - lo) / width).floor().max(0.0) as usize).min(bins - 1)
            } else {
                0
            };
            counts[idx] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionSummary {
    pub mean: f64,
    /// Bessel-corrected.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Histogram,
}

pub fn distribution_summary(samples: &[f64], bins: usize) -> Result<DistributionSummary> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need ≥2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DistributionSummary {
        mean,
        std: (ss / (n - 1.0)).sqrt(),
        min,
        max,
        histogram: Histogram::over_range(samples, min, max, bins),
    })
}

/// Approximate standard error of the sample standard deviation,
/// `sqrt((m₄ − s⁴)/T) / (2s)` from the delta method.
pub fn std_standard_error(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let m2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    if m2 == 0.0 {
        return 0.0;
    }
    ((m4 - m2 * m2).max(0.0) / n).sqrt() / (2.0 * m2.sqrt())
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Large-sample critical value of the two-sample KS statistic at level `alpha`.
pub fn ks_critical_value(na: usize, nb: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((na + nb) as f64 / (na as f64 * nb as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::hyp1_variance;

    #[test]
    fn certain_examples_give_exact_accuracy() {
        let e = ExampleMeans::new(vec![1.0; 50], 10).unwrap();
        let sim = simulate_hyp1(&e, 100, 3).unwrap();
        assert!(sim.samples.iter().all(|&s| s == 1.0));
        let e = ExampleMeans::new(vec![0.0; 50], 10).unwrap();
        assert!(simulate_hyp1(&e, 10, 3).unwrap().samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn fair_coins_match_closed_form() {
        let n = 10_000;
        let e = ExampleMeans::new(vec![0.5; n], 0).unwrap();
        let sim = simulate_hyp1(&e, 10_000, 17).unwrap();
        let s = distribution_summary(&sim.samples, 10).unwrap();
        let se = std_standard_error(&sim.samples);
        let expected = (0.25 / n as f64).sqrt();
        assert!((s.std - expected).abs() < 3.0 * se, "{} vs {expected} (se {se})", s.std);
        let mean_se = expected / (sim.samples.len() as f64).sqrt();
        assert!((s.mean - 0.5).abs() < 4.0 * mean_se);
    }

    #[test]
    fn random_means_match_hyp1_variance() {
        let means: Vec<f64> = (0..500).map(|i| uniform_at(99, i)).collect();
        let e = ExampleMeans::new(means, 0).unwrap();
        let sim = simulate_hyp1(&e, 5_000, 1).unwrap();
        let s = distribution_summary(&sim.samples, 10).unwrap();
        let predicted = hyp1_variance(&e).unwrap().sqrt();
        assert!((s.std - predicted).abs() < 3.0 * std_standard_error(&sim.samples));
        assert!((s.mean - e.mean()).abs() < 4.0 * predicted / (5_000f64).sqrt());
    }

    #[test]
    fn binomial_edge_and_reference_inputs() {
        let sim = simulate_binomial(1.0, 100, 50, 0).unwrap();
        assert!(sim.samples.iter().all(|&s| s == 1.0));

        let sim = simulate_binomial(0.9441, 10_000, 20_000, 5).unwrap();
        let s = distribution_summary(&sim.samples, 20).unwrap();
        let expected = (0.9441f64 * 0.0559 / 10_000.0).sqrt(); // ≈ 0.23%
        assert!((expected - 0.0023).abs() < 1e-4);
        assert!((s.std - expected).abs() < 3.0 * std_standard_error(&sim.samples));
        assert!((s.mean - 0.9441).abs() < 4.0 * expected / (20_000f64).sqrt());
        assert!(simulate_binomial(1.2, 10, 10, 0).is_err());
    }

    #[test]
    fn seeds_reproduce_and_differ() {
        let e = ExampleMeans::new((0..300).map(|i| (i % 10) as f64 / 10.0).collect(), 0).unwrap();
        let a = simulate_hyp1(&e, 10_000, 1).unwrap();
        let b = simulate_hyp1(&e, 10_000, 1).unwrap();
        assert_eq!(a, b);
        let c = simulate_hyp1(&e, 10_000, 2).unwrap();
        assert_ne!(a.samples, c.samples);
        let d = ks_statistic(&a.samples, &c.samples);
        assert!(d < ks_critical_value(10_000, 10_000, 0.01), "KS {d}");
    }

    #[test]
    fn thread_count_does_not_matter() {
        let e = ExampleMeans::new((0..100).map(|i| i as f64 / 100.0).collect(), 0).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(5).build().unwrap();
        assert_eq!(
            one.install(|| simulate_hyp1(&e, 777, 4).unwrap()),
            many.install(|| simulate_hyp1(&e, 777, 4).unwrap())
        );
        assert_eq!(
            one.install(|| simulate_binomial(0.7, 1000, 333, 4).unwrap()),
            many.install(|| simulate_binomial(0.7, 1000, 333, 4).unwrap())
        );
    }

    #[test]
    fn summary_examples() {
        let s = distribution_summary(&[0.0, 1.0], 2).unwrap();
        assert_eq!(s.mean, 0.5);
        assert!((s.std - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.histogram.counts, vec![1, 1]);

        let s = distribution_summary(&[0.3; 7], 5).unwrap();
        assert_eq!(s.std, 0.0);
        assert_eq!(s.histogram.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(s.histogram.counts[0], 7);

        assert!(distribution_summary(&[1.0], 3).is_err());
    }

    #[test]
    fn histogram_bins_are_left_closed() {
        let h = Histogram::over_range(&[0.0, 0.25, 0.5, 0.75, 1.0], 0.0, 1.0, 4);
        assert_eq!(h.counts, vec![1, 1, 1, 2]);
        assert_eq!(h.edges, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn ks_detects_shift() {
        let a: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..1000).map(|i| i as f64 + 500.0).collect();
        assert!((ks_statistic(&a, &b) - 0.5).abs() < 1e-12);
        assert_eq!(ks_statistic(&a, &a), 0.0);
    }
}
