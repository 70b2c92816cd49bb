// SPDX-License-Identifier: Apache-2.0

//! Split decorrelation and cross-dataset accuracy correlations.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::model::{AccuracySeries, CorrectnessMatrix, WORD_BITS};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Split {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    pub r: f64,
    pub r_squared: f64,
    pub p_value: f64,
    /// Mean split-B accuracy of the top-`q` runs on split A, minus the mean
    /// split-B accuracy of all runs.
    pub uplift: f64,
    pub q: f64,
    pub top_runs: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub runs: usize,
}

/// Pearson correlation with population moments.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "series of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::NotEnoughRuns(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance(
            "correlation is undefined for a constant series".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `r` over `n` pairs under the null of zero
/// correlation, from Student's t with `n − 2` degrees of freedom.
///
/// With `t² = r²(n−2)/(1−r²)` the two-sided tail is the regularized
/// incomplete beta `I_{1−r²}((n−2)/2, 1/2)`. Returns 0 for `|r| = 1`.
pub fn pearson_p_value(r: f64, n: usize) -> f64 {
    debug_assert!(n >= 3);
    let df = (n - 2) as f64;
    let x = 1.0 - r * r;
    if x <= 0.0 {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, x.min(1.0))
}

/// Deterministic pseudo-random half/half assignment of `n` examples.
pub fn random_halves(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut CounterRng::new(seed));
    let mut out = vec![Split::B; n];
    for &i in &order[..n / 2] {
        out[i] = Split::A;
    }
    out
}

/// Per-run accuracies restricted to split A and to split B.
pub fn split_accuracies(
    c: &CorrectnessMatrix,
    assignment: &[Split],
) -> Result<(AccuracySeries, AccuracySeries)> {
    if assignment.len() != c.examples() {
        return Err(Error::DimensionMismatch(format!(
            "assignment covers {} examples, matrix has {}",
            assignment.len(),
            c.examples()
        )));
    }
    let words = c.words_per_row();
    let mut mask_a = vec![0u64; words];
    for (i, s) in assignment.iter().enumerate() {
        if *s == Split::A {
            mask_a[i / WORD_BITS] |= 1 << (i % WORD_BITS);
        }
    }
    let n_a = assignment.iter().filter(|s| **s == Split::A).count();
    let n_b = assignment.len() - n_a;
    if n_a == 0 || n_b == 0 {
        return Err(Error::InvalidInput(format!(
            "both splits must be non-empty (A={n_a}, B={n_b})"
        )));
    }
    let mut acc_a = Vec::with_capacity(c.runs());
    let mut acc_b = Vec::with_capacity(c.runs());
    for r in 0..c.runs() {
        let (mut hits_a, mut hits_b) = (0u64, 0u64);
        for (w, m) in c.row_words(r).iter().zip(&mask_a) {
            hits_a += (w & m).count_ones() as u64;
            hits_b += (w & !m).count_ones() as u64;
        }
        acc_a.push(hits_a as f64 / n_a as f64);
        acc_b.push(hits_b as f64 / n_b as f64);
    }
    Ok((
        AccuracySeries {
            values: acc_a,
            n_examples: n_a,
        },
        AccuracySeries {
            values: acc_b,
            n_examples: n_b,
        },
    ))
}

/// Do runs that do well on split A also do well on split B?
pub fn split_correlation(c: &CorrectnessMatrix, assignment: &[Split], q: f64) -> Result<SplitReport> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::OutOfRange(format!("quantile {q} outside (0, 1]")));
    }
    let runs = c.runs();
    if runs < 3 {
        return Err(Error::InvalidInput(format!(
            "split correlation needs ≥3 runs, got {runs}"
        )));
    }
    let (a, b) = split_accuracies(c, assignment)?;
    let r = pearson(&a.values, &b.values)?;

    let top = ((q * runs as f64).ceil() as usize).clamp(1, runs);
    let mut order: Vec<usize> = (0..runs).collect();
    order.sort_by(|&x, &y| a.values[y].total_cmp(&a.values[x]).then(x.cmp(&y)));
    let top_mean = order[..top].iter().map(|&i| b.values[i]).sum::<f64>() / top as f64;
    let uplift = top_mean - b.mean();

    Ok(SplitReport {
        r,
        r_squared: r * r,
        p_value: pearson_p_value(r, runs),
        uplift,
        q,
        top_runs: top,
        n_a: a.n_examples,
        n_b: b.n_examples,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub r: Vec<Vec<f64>>,
    pub r_squared: Vec<Vec<f64>>,
    pub p_value: Vec<Vec<f64>>,
}

/// Pairwise Pearson correlations between named accuracy series over the
/// same runs.
pub fn cross_series_correlation(series: &[(String, AccuracySeries)]) -> Result<CorrelationMatrix> {
    let m = series.len();
    let Some((_, first)) = series.first() else {
        return Err(Error::InvalidInput("no series".into()));
    };
    let runs = first.values.len();
    if let Some((name, s)) = series.iter().find(|(_, s)| s.values.len() != runs) {
        return Err(Error::DimensionMismatch(format!(
            "series {name:?} has {} runs, expected {runs}",
            s.values.len()
        )));
    }
    if runs < 3 {
        return Err(Error::InvalidInput(format!(
            "cross correlation needs ≥3 runs, got {runs}"
        )));
    }

    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| pearson(&series[i].1.values, &series[j].1.values))
        .collect::<Result<Vec<f64>>>()?;

    let mut r = vec![vec![1.0; m]; m];
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        r[i][j] = v;
        r[j][i] = v;
    }
    let r_squared = r.iter().map(|row| row.iter().map(|v| v * v).collect()).collect();
    let p_value = r
        .iter()
        .map(|row| row.iter().map(|&v| pearson_p_value(v, runs)).collect())
        .collect();
    Ok(CorrelationMatrix {
        names: series.iter().map(|(n, _)| n.clone()).collect(),
        r,
        r_squared,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::uniform_at;
    use proptest::prelude::*;

    fn named(name: &str, values: &[f64]) -> (String, AccuracySeries) {
        (
            name.to_string(),
            AccuracySeries {
                values: values.to_vec(),
                n_examples: 1,
            },
        )
    }

    #[test]
    fn reversed_series() {
        let m = cross_series_correlation(&[named("a", &[0.0, 1.0, 2.0]), named("b", &[2.0, 1.0, 0.0])]).unwrap();
        assert_eq!(m.r[0][1], -1.0);
        assert_eq!(m.r_squared[0][1], 1.0);
        assert_eq!(m.p_value[0][1], 0.0);
        assert_eq!(m.r_squared[0][0], 1.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            cross_series_correlation(&[named("a", &[0.0, 1.0, 2.0]), named("b", &[2.0, 1.0])]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn p_value_reference_points() {
        // r = 0 gives p = 1.
        assert!((pearson_p_value(0.0, 50) - 1.0).abs() < 1e-12);
        // n = 4, r = 0.5: t = 0.5·sqrt(2/0.75) = 0.8165 on 2 df, two-sided p = 0.5.
        assert!((pearson_p_value(0.5, 4) - 0.5).abs() < 1e-9);
        // Large-sample check against the normal tail: n = 10002, r = 0.02 gives
        // t ≈ 2.0004, p ≈ 0.04546.
        assert!((pearson_p_value(0.02, 10_002) - 0.04546).abs() < 2e-4);
    }

    #[test]
    fn duplicate_split_is_perfectly_correlated() {
        // Columns 0..8 duplicated as 8..16; split A is the first copy.
        let runs = 40;
        let base = CorrectnessMatrix::from_fn(runs, 8, |r, i| uniform_at(8, (r * 8 + i) as u64) < 0.6).unwrap();
        let c = CorrectnessMatrix::from_fn(runs, 16, |r, i| base.get(r, i % 8)).unwrap();
        let assignment: Vec<Split> = (0..16).map(|i| if i < 8 { Split::A } else { Split::B }).collect();
        let rep = split_correlation(&c, &assignment, 0.25).unwrap();
        assert!((rep.r - 1.0).abs() < 1e-12);
        assert!(rep.uplift > 0.0);
        assert_eq!(rep.top_runs, 10);
    }

    #[test]
    fn independent_world_is_uncorrelated() {
        let (runs, n) = (2000, 400);
        let c = CorrectnessMatrix::from_fn(runs, n, |r, i| uniform_at(31, (r * n + i) as u64) < 0.8).unwrap();
        let assignment = random_halves(n, 7);
        let rep = split_correlation(&c, &assignment, 0.25).unwrap();
        // se(r) ≈ 1/sqrt(R)
        assert!(rep.r.abs() < 4.0 / (runs as f64).sqrt(), "r = {}", rep.r);
    }

    #[test]
    fn split_errors() {
        let c = CorrectnessMatrix::from_bit_strings(&["10", "01", "11"]).unwrap();
        assert!(split_correlation(&c, &[Split::A, Split::A], 0.5).is_err());
        assert!(split_correlation(&c, &[Split::A], 0.5).is_err());
        let two = CorrectnessMatrix::from_bit_strings(&["10", "01"]).unwrap();
        assert!(split_correlation(&two, &[Split::A, Split::B], 0.5).is_err());
        assert!(split_correlation(&c, &[Split::A, Split::B], 0.0).is_err());
    }

    #[test]
    fn halves_are_balanced_and_seeded() {
        let h = random_halves(101, 3);
        assert_eq!(h.iter().filter(|s| **s == Split::A).count(), 50);
        assert_eq!(h, random_halves(101, 3));
        assert_ne!(h, random_halves(101, 4));
    }

    #[test]
    fn top_quantile_ties_break_by_run_index() {
        // Every run has the same split-A accuracy; the first ⌈qR⌉ runs win.
        let c = CorrectnessMatrix::from_bit_strings(&["10", "11", "10", "10"]).unwrap();
        let rep = split_correlation(&c, &[Split::A, Split::B], 0.25);
        // Split A is constant, so r is undefined.
        assert!(matches!(rep, Err(Error::ZeroVariance(_))));
        let c = CorrectnessMatrix::from_bit_strings(&["101", "111", "100", "000"]).unwrap();
        let rep = split_correlation(&c, &[Split::A, Split::B, Split::A], 0.5).unwrap();
        // A accuracies: [1, 1, 0.5, 0]; top 2 are runs 0 and 1, B = [0, 1].
        assert_eq!(rep.top_runs, 2);
        assert!((rep.uplift - (0.5 - 0.25)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn affine_invariance(xs in proptest::collection::vec(-1.0f64..1.0, 5..40), scale in 0.01f64..100.0, shift in -5.0f64..5.0, seed in 0u64..1000) {
            let ys: Vec<f64> = (0..xs.len()).map(|i| uniform_at(seed, i as u64)).collect();
            let r = pearson(&xs, &ys);
            prop_assume!(r.is_ok());
            let zs: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
            prop_assert!((r.unwrap() - pearson(&zs, &ys).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn p_value_in_range_and_monotone(a in 0.0f64..0.999, b in 0.0f64..0.999, n in 3usize..500) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let p_lo = pearson_p_value(lo, n);
            let p_hi = pearson_p_value(hi, n);
            prop_assert!(p_lo > 0.0 && p_lo <= 1.0 + 1e-12);
            prop_assert!(p_hi <= p_lo + 1e-12);
            prop_assert_eq!(pearson_p_value(-hi, n), p_hi);
        }

        #[test]
        fn swapping_splits_keeps_r(seed in 0u64..500) {
            let (runs, n) = (30, 20);
            let c = CorrectnessMatrix::from_fn(runs, n, |r, i| uniform_at(seed, (r * n + i) as u64) < 0.5).unwrap();
            let assignment = random_halves(n, seed);
            let swapped: Vec<Split> = assignment.iter().map(|s| if *s == Split::A { Split::B } else { Split::A }).collect();
            let a = split_correlation(&c, &assignment, 0.25);
            let b = split_correlation(&c, &swapped, 0.25);
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert!((a.r - b.r).abs() < 1e-12);
            }
        }
    }
}
