// SPDX-License-Identifier: Apache-2.0

//! Variance statistics, calibration bounds and the binary-task sweep.
//!
//! Everything that can be computed from integer counts is: the
//! distribution-wise estimate and the ECE are single divisions of exact
//! integer numerators, so a task and its complement agree bit for bit.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    per_run_accuracy, AccuracySeries, CorrectnessMatrix, ExampleMeans, RunMatrix, VarianceReport,
};

/// Upper bound on the number of tasks [`enumerate_binary_tasks`] will build.
pub const MAX_BINARY_TASKS: usize = 100_000;

/// Bessel-corrected variance of the per-run accuracies.
pub fn testset_variance(a: &AccuracySeries) -> Result<f64> {
    let r = a.values.len();
    if r < 2 {
        return Err(Error::NotEnoughRuns(r));
    }
    let mean = a.mean();
    let ss: f64 = a.values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(ss / (r - 1) as f64)
}

/// Test-set variance predicted by examplewise independence:
/// `(1/n²) Σ C̄ᵢ(1 − C̄ᵢ)`.
pub fn hyp1_variance(e: &ExampleMeans) -> Result<f64> {
    let n = e.means.len();
    if n == 0 {
        return Err(Error::NotEnoughExamples { needed: 1, got: 0 });
    }
    let sum: f64 = e.means.iter().map(|c| c * (1.0 - c)).sum();
    Ok(sum / (n as f64 * n as f64))
}

fn check_variance_shape(c: &CorrectnessMatrix) -> Result<()> {
    if c.runs() < 2 {
        return Err(Error::NotEnoughRuns(c.runs()));
    }
    if c.examples() < 2 {
        return Err(Error::NotEnoughExamples {
            needed: 2,
            got: c.examples(),
        });
    }
    Ok(())
}

/// `R·Σk² − (Σk)²` over per-run correct counts; `Var = this / (R(R−1)N²)`.
fn run_count_scatter(row_counts: &[u64]) -> i128 {
    let r = row_counts.len() as i128;
    let sum: i128 = row_counts.iter().map(|&k| k as i128).sum();
    let sumsq: i128 = row_counts.iter().map(|&k| (k as i128) * (k as i128)).sum();
    r * sumsq - sum * sum
}

/// Unbiased estimate of distribution-wise variance.
///
/// `(n/(n−1)) · (Var_runs A_S − (1/n²) Σᵢ v̂ᵢ)` with
/// `v̂ᵢ = C̄ᵢ(1 − C̄ᵢ)·R/(R−1)`. Evaluated as one exact integer numerator over
/// `(n−1)·n·R·(R−1)`. The result may be negative.
pub fn distwise_variance_estimate(c: &CorrectnessMatrix) -> Result<f64> {
    check_variance_shape(c)?;
    Ok(distwise_from_counts(&c.row_counts(), &c.column_counts()))
}

fn distwise_from_counts(row_counts: &[u64], column_counts: &[u64]) -> f64 {
    let r = row_counts.len() as i128;
    let n = column_counts.len() as i128;
    let scatter = run_count_scatter(row_counts);
    let bernoulli: i128 = column_counts
        .iter()
        .map(|&c| (c as i128) * (r - c as i128))
        .sum();
    let denom = (n - 1) * n * r * (r - 1);
    (scatter - bernoulli) as f64 / denom as f64
}

/// Variance of a binomial proportion: `err(1 − err)/n`.
pub fn binomial_variance(err: f64, n: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&err) {
        return Err(Error::OutOfRange(format!("err {err} outside [0, 1]")));
    }
    if n == 0 {
        return Err(Error::NotEnoughExamples { needed: 1, got: 0 });
    }
    Ok(err * (1.0 - err) / n as f64)
}

/// ECE from per-example counts of runs predicting the positive class.
///
/// Examples are grouped by their exact count `c` (so `p̂ = c/R`); a group of
/// `m` examples with `l` positive labels contributes `|l·R − c·m| / (R·N)`.
fn ece_from_counts(positive_counts: &[u64], positive_labels: &[bool], runs: usize) -> f64 {
    let r = runs as i128;
    let mut members = vec![0i128; runs + 1];
    let mut label_ones = vec![0i128; runs + 1];
    for (&c, &y) in positive_counts.iter().zip(positive_labels) {
        members[c as usize] += 1;
        label_ones[c as usize] += y as i128;
    }
    let numerator: i128 = (0..=runs)
        .map(|c| (label_ones[c] * r - c as i128 * members[c]).abs())
        .sum();
    numerator as f64 / (r * positive_counts.len() as i128) as f64
}

/// Expected calibration error of the run ensemble on a two-class matrix.
pub fn ece_binary(m: &RunMatrix) -> Result<f64> {
    if m.classes() != 2 {
        return Err(Error::InvalidInput(format!(
            "ECE is defined for binary tasks, got K={}",
            m.classes()
        )));
    }
    let mut counts = vec![0u64; m.examples()];
    for r in 0..m.runs() {
        for (count, &p) in counts.iter_mut().zip(m.row(r)) {
            *count += (p == 1) as u64;
        }
    }
    let labels: Vec<bool> = m.labels().iter().map(|&l| l == 1).collect();
    Ok(ece_from_counts(&counts, &labels, m.runs()))
}

/// ECE when only correctness bits and the binary labels are known.
///
/// A run predicts the positive class iff it is correct on a positive example
/// or wrong on a negative one.
pub fn ece_binary_from_correctness(c: &CorrectnessMatrix, positive_labels: &[bool]) -> Result<f64> {
    if positive_labels.len() != c.examples() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} examples",
            positive_labels.len(),
            c.examples()
        )));
    }
    let r = c.runs() as u64;
    let counts: Vec<u64> = c
        .column_counts()
        .into_iter()
        .zip(positive_labels)
        .map(|(correct, &y)| if y { correct } else { r - correct })
        .collect();
    Ok(ece_from_counts(&counts, positive_labels, c.runs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationInputs {
    pub err: f64,
    pub ece: f64,
    pub n: usize,
    pub k: usize,
}

/// Lower bounds (and the calibrated, zero-variance value) for test-set
/// variance implied by ensemble calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationBounds {
    /// `max(0, (err − ece) / 2n)`, binary tasks.
    pub ece_lower_bound: f64,
    /// `err / 2n`, exact for calibrated binary tasks without distribution-wise variance.
    pub calibrated_variance: f64,
    /// `err / (n k²)`, any number of classes. Loose.
    pub kway_lower_bound: f64,
    pub inputs: CalibrationInputs,
}

pub fn calibration_bounds(err: f64, ece: f64, n: usize, k: usize) -> Result<CalibrationBounds> {
    if !(0.0..=1.0).contains(&err) {
        return Err(Error::OutOfRange(format!("err {err} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&ece) {
        return Err(Error::OutOfRange(format!("ece {ece} outside [0, 1]")));
    }
    if n == 0 {
        return Err(Error::OutOfRange("n must be ≥ 1".into()));
    }
    if k < 2 {
        return Err(Error::OutOfRange(format!("k must be ≥ 2, got {k}")));
    }
    let n_f = n as f64;
    Ok(CalibrationBounds {
        ece_lower_bound: ((err - ece) / (2.0 * n_f)).max(0.0),
        calibrated_variance: err / (2.0 * n_f),
        kway_lower_bound: err / (n_f * (k * k) as f64),
        inputs: CalibrationInputs { err, ece, n, k },
    })
}

/// One "subset of classes versus the rest" task derived from a K-way matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinaryTask {
    /// Classes mapped to the positive side, sorted ascending.
    pub positive_classes: Vec<u16>,
    pub err: f64,
    pub ece: f64,
    pub observed_variance: f64,
    pub ece_lower_bound: f64,
    pub calibrated_variance: f64,
    pub binomial_variance: f64,
    pub n_examples: usize,
}

/// Count tables from which any binary task's statistics follow without
/// revisiting the prediction grid.
struct TaskTables {
    runs: usize,
    examples: usize,
    classes: usize,
    /// `confusion[r][pred][label]`, flattened.
    confusion: Vec<u64>,
    /// `votes[i][class]`: runs predicting `class` on example `i`, flattened.
    votes: Vec<u64>,
    labels: Vec<u16>,
}

impl TaskTables {
    fn build(m: &RunMatrix) -> Self {
        let k = m.classes() as usize;
        let (runs, examples) = (m.runs(), m.examples());
        let mut confusion = vec![0u64; runs * k * k];
        let mut votes = vec![0u64; examples * k];
        for r in 0..runs {
            let conf = &mut confusion[r * k * k..(r + 1) * k * k];
            for (i, (&p, &y)) in m.row(r).iter().zip(m.labels()).enumerate() {
                conf[p as usize * k + y as usize] += 1;
                votes[i * k + p as usize] += 1;
            }
        }
        Self {
            runs,
            examples,
            classes: k,
            confusion,
            votes,
            labels: m.labels().to_vec(),
        }
    }

    fn task(&self, positive: &[u16]) -> Result<BinaryTask> {
        let k = self.classes;
        let mut in_set = vec![false; k];
        for &c in positive {
            if c as usize >= k {
                return Err(Error::OutOfRange(format!("class {c} ≥ K={k}")));
            }
            in_set[c as usize] = true;
        }

        let row_counts: Vec<u64> = (0..self.runs)
            .map(|r| {
                let conf = &self.confusion[r * k * k..(r + 1) * k * k];
                let mut correct = 0;
                for p in 0..k {
                    for y in 0..k {
                        if in_set[p] == in_set[y] {
                            correct += conf[p * k + y];
                        }
                    }
                }
                correct
            })
            .collect();

        let positive_counts: Vec<u64> = (0..self.examples)
            .map(|i| {
                self.votes[i * k..(i + 1) * k]
                    .iter()
                    .zip(&in_set)
                    .filter(|(_, &s)| s)
                    .map(|(&v, _)| v)
                    .sum()
            })
            .collect();
        let positive_labels: Vec<bool> =
            self.labels.iter().map(|&y| in_set[y as usize]).collect();

        let n = self.examples;
        let total_cells = (self.runs * n) as u64;
        let total_correct: u64 = row_counts.iter().sum();
        let err = (total_cells - total_correct) as f64 / total_cells as f64;
        let ece = ece_from_counts(&positive_counts, &positive_labels, self.runs);
        let scatter = run_count_scatter(&row_counts);
        let r = self.runs as i128;
        let observed_variance = scatter as f64 / (r * (r - 1) * (n as i128) * (n as i128)) as f64;
        let bounds = calibration_bounds(err, ece.min(1.0), n, 2)?;

        let mut positive_classes = positive.to_vec();
        positive_classes.sort_unstable();
        positive_classes.dedup();
        Ok(BinaryTask {
            positive_classes,
            err,
            ece,
            observed_variance,
            ece_lower_bound: bounds.ece_lower_bound,
            calibrated_variance: bounds.calibrated_variance,
            binomial_variance: binomial_variance(err, n)?,
            n_examples: n,
        })
    }
}

/// Statistics of the binary task "classes in `positive` versus the rest".
///
/// `positive` need not be canonical; passing a subset or its complement
/// yields identical statistics.
pub fn binary_task(m: &RunMatrix, positive: &[u16]) -> Result<BinaryTask> {
    if m.runs() < 2 {
        return Err(Error::NotEnoughRuns(m.runs()));
    }
    TaskTables::build(m).task(positive)
}

fn n_choose_k(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Canonical (class-0-containing) representatives of all size-`subset_size`
/// subsets of `0..classes` and their complements, in lexicographic order.
pub fn canonical_subsets(classes: usize, subset_size: usize) -> Result<Vec<Vec<u16>>> {
    if classes < 2 {
        return Err(Error::InvalidInput(format!("need K ≥ 2, got {classes}")));
    }
    if subset_size == 0 || subset_size >= classes {
        return Err(Error::OutOfRange(format!(
            "subset size must be in [1, K−1], got {subset_size} for K={classes}"
        )));
    }
    if n_choose_k(classes, subset_size) > MAX_BINARY_TASKS as u128 * 2 {
        return Err(Error::InvalidInput(format!(
            "C({classes}, {subset_size}) tasks exceed the limit of {MAX_BINARY_TASKS}"
        )));
    }
    let mut out = BTreeSet::new();
    let mut combo: Vec<usize> = (0..subset_size).collect();
    loop {
        let subset: Vec<u16> = if combo[0] == 0 {
            combo.iter().map(|&c| c as u16).collect()
        } else {
            (0..classes)
                .filter(|c| !combo.contains(c))
                .map(|c| c as u16)
                .collect()
        };
        out.insert(subset);

        // Advance to the next combination in lexicographic order.
        let mut i = subset_size;
        loop {
            if i == 0 {
                return Ok(out.into_iter().collect());
            }
            i -= 1;
            if combo[i] < classes - subset_size + i {
                break;
            }
        }
        combo[i] += 1;
        for j in i + 1..subset_size {
            combo[j] = combo[j - 1] + 1;
        }
    }
}

/// Every "subset versus complement" task of a K-way matrix.
///
/// `subset_size` defaults to `K/2`. Tasks are evaluated in parallel and
/// returned in lexicographic order of their canonical subsets.
pub fn enumerate_binary_tasks(m: &RunMatrix, subset_size: Option<usize>) -> Result<Vec<BinaryTask>> {
    let k = m.classes() as usize;
    if k < 2 {
        return Err(Error::InvalidInput(format!("need K ≥ 2, got {k}")));
    }
    if m.runs() < 2 {
        return Err(Error::NotEnoughRuns(m.runs()));
    }
    let subsets = canonical_subsets(k, subset_size.unwrap_or(k / 2))?;
    let tables = TaskTables::build(m);
    subsets.par_iter().map(|s| tables.task(s)).collect()
}

/// All headline variance statistics for one correctness matrix.
pub fn variance_report(c: &CorrectnessMatrix) -> Result<VarianceReport> {
    check_variance_shape(c)?;
    let row_counts = c.row_counts();
    let column_counts = c.column_counts();
    let (r, n) = (c.runs(), c.examples());

    let accuracies = per_run_accuracy(c);
    let total: u64 = row_counts.iter().sum();
    let mean_accuracy = total as f64 / (r * n) as f64;
    let testset = testset_variance(&accuracies)?;
    let means = ExampleMeans {
        means: column_counts.iter().map(|&k| k as f64 / r as f64).collect(),
        runs_used: r,
    };
    let hyp1 = hyp1_variance(&means)?;
    let distwise = distwise_from_counts(&row_counts, &column_counts);
    let clamped = distwise.max(0.0);
    let err = ((r * n) as u64 - total) as f64 / (r * n) as f64;
    let binomial = binomial_variance(err, n)?;

    Ok(VarianceReport {
        mean_accuracy,
        testset_variance: testset,
        hyp1_variance: hyp1,
        distwise_estimate: distwise,
        distwise_estimate_clamped: clamped,
        binomial_variance: binomial,
        testset_std: testset.sqrt(),
        hyp1_std: hyp1.sqrt(),
        distwise_std: clamped.sqrt(),
        binomial_std: binomial.sqrt(),
        n_examples: n,
        n_runs: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{correctness_from_predictions, example_means};
    use proptest::prelude::*;

    fn series(values: &[f64]) -> AccuracySeries {
        AccuracySeries {
            values: values.to_vec(),
            n_examples: 1,
        }
    }

    #[test]
    fn testset_variance_examples() {
        assert_eq!(testset_variance(&series(&[0.5, 0.5])).unwrap(), 0.0);
        assert_eq!(testset_variance(&series(&[1.0, 0.0])).unwrap(), 0.5);
        assert!(matches!(
            testset_variance(&series(&[0.3])),
            Err(Error::NotEnoughRuns(1))
        ));
    }

    #[test]
    fn hyp1_examples() {
        let ones = ExampleMeans::new(vec![1.0; 5], 3).unwrap();
        assert_eq!(hyp1_variance(&ones).unwrap(), 0.0);
        let halves = ExampleMeans::new(vec![0.5; 4], 2).unwrap();
        assert_eq!(hyp1_variance(&halves).unwrap(), 0.0625);
    }

    #[test]
    fn distwise_examples() {
        let ones = CorrectnessMatrix::from_fn(3, 4, |_, _| true).unwrap();
        assert_eq!(distwise_variance_estimate(&ones).unwrap(), 0.0);
        let anti = CorrectnessMatrix::from_bit_strings(&["10", "01"]).unwrap();
        assert_eq!(distwise_variance_estimate(&anti).unwrap(), -0.5);
        let split = CorrectnessMatrix::from_bit_strings(&["11", "00"]).unwrap();
        assert_eq!(distwise_variance_estimate(&split).unwrap(), 0.5);
        let one_run = CorrectnessMatrix::from_bit_strings(&["11"]).unwrap();
        assert!(matches!(
            distwise_variance_estimate(&one_run),
            Err(Error::NotEnoughRuns(1))
        ));
        let one_example = CorrectnessMatrix::from_bit_strings(&["1", "0"]).unwrap();
        assert!(matches!(
            distwise_variance_estimate(&one_example),
            Err(Error::NotEnoughExamples { .. })
        ));
    }

    /// Direct float evaluation of the estimator formula, independent of the
    /// integer route.
    fn distwise_by_formula(c: &CorrectnessMatrix) -> f64 {
        let (r, n) = (c.runs() as f64, c.examples() as f64);
        let var = testset_variance(&per_run_accuracy(c)).unwrap();
        let vhat: f64 = example_means(c)
            .means
            .iter()
            .map(|m| m * (1.0 - m) * r / (r - 1.0))
            .sum();
        n / (n - 1.0) * (var - vhat / (n * n))
    }

    #[test]
    fn binomial_examples() {
        assert_eq!(binomial_variance(0.0, 10).unwrap(), 0.0);
        assert_eq!(binomial_variance(0.5, 2).unwrap(), 0.125);
        let v = binomial_variance(0.0559, 10_000).unwrap();
        assert!((v - 5.27751e-6).abs() < 1e-10);
        assert!((v.sqrt() - 0.002297).abs() < 1e-6);
        assert!(binomial_variance(1.5, 10).is_err());
    }

    fn binary(rows: &[Vec<u16>], labels: Vec<u16>) -> RunMatrix {
        RunMatrix::from_rows(rows, labels, 2).unwrap()
    }

    #[test]
    fn ece_examples() {
        let confident = binary(&[vec![1, 0, 1], vec![1, 0, 1]], vec![1, 0, 1]);
        assert_eq!(ece_binary(&confident).unwrap(), 0.0);
        // p̂ = [1, 0, 0.5, 0.5]
        let rows = [vec![1, 0, 1, 0], vec![1, 0, 0, 1]];
        assert_eq!(ece_binary(&binary(&rows, vec![1, 0, 1, 0])).unwrap(), 0.0);
        assert_eq!(ece_binary(&binary(&rows, vec![1, 0, 1, 1])).unwrap(), 0.25);
        let three = RunMatrix::from_rows(&[vec![0, 1, 2]], vec![0, 1, 2], 3).unwrap();
        assert!(ece_binary(&three).is_err());
    }

    #[test]
    fn ece_from_correctness_matches() {
        let rows = [vec![1, 0, 1, 0], vec![1, 0, 0, 1]];
        let m = binary(&rows, vec![1, 0, 1, 1]);
        let c = correctness_from_predictions(&m);
        let labels: Vec<bool> = m.labels().iter().map(|&l| l == 1).collect();
        assert_eq!(ece_binary_from_correctness(&c, &labels).unwrap(), 0.25);
    }

    #[test]
    fn bounds_examples() {
        let b = calibration_bounds(0.06, 0.01, 1000, 2).unwrap();
        assert!((b.ece_lower_bound - 2.5e-5).abs() < 1e-18);
        assert!((b.calibrated_variance - 3.0e-5).abs() < 1e-18);
        assert!((b.kway_lower_bound - 1.5e-5).abs() < 1e-18);
        assert_eq!(calibration_bounds(0.01, 0.06, 1000, 2).unwrap().ece_lower_bound, 0.0);
        assert!(calibration_bounds(0.1, 1.1, 10, 2).is_err());
        assert!(calibration_bounds(0.1, 0.0, 10, 1).is_err());
        assert!(calibration_bounds(0.1, 0.0, 0, 2).is_err());
    }

    #[test]
    fn subset_counts() {
        assert_eq!(canonical_subsets(10, 5).unwrap().len(), 126);
        assert_eq!(canonical_subsets(2, 1).unwrap(), vec![vec![0]]);
        // Unbalanced sizes: every subset is its own task.
        assert_eq!(canonical_subsets(5, 2).unwrap().len(), 10);
        let subsets = canonical_subsets(10, 5).unwrap();
        assert!(subsets.iter().all(|s| s[0] == 0 && s.len() == 5));
        assert!(subsets.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn two_class_task_is_the_original_problem() {
        let m = binary(&[vec![1, 0, 1, 0], vec![1, 0, 0, 1], vec![0, 0, 1, 1]], vec![1, 0, 1, 1]);
        let tasks = enumerate_binary_tasks(&m, None).unwrap();
        assert_eq!(tasks.len(), 1);
        let c = correctness_from_predictions(&m);
        let t = &tasks[0];
        assert_eq!(t.observed_variance, testset_variance(&per_run_accuracy(&c)).unwrap());
        assert_eq!(t.ece, ece_binary(&m).unwrap());
        let acc = per_run_accuracy(&c).mean();
        assert!((t.err - (1.0 - acc)).abs() < 1e-15);
    }

    #[test]
    fn side_of_partition_decides_correctness() {
        // True 3, predicted 7 is wrong under K-way but also wrong when
        // {0..4} is positive: 3 is in, 7 is out.
        let m = RunMatrix::from_rows(&[vec![7, 1], vec![3, 1]], vec![3, 1], 10).unwrap();
        let t = binary_task(&m, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(t.err, 0.25);
        // Predicted 4 for true 3 would be binary-correct.
        let m = RunMatrix::from_rows(&[vec![4, 1], vec![3, 1]], vec![3, 1], 10).unwrap();
        assert_eq!(binary_task(&m, &[0, 1, 2, 3, 4]).unwrap().err, 0.0);
    }

    #[test]
    fn variance_report_examples() {
        let ones = CorrectnessMatrix::from_fn(3, 5, |_, _| true).unwrap();
        let rep = variance_report(&ones).unwrap();
        assert_eq!(rep.mean_accuracy, 1.0);
        assert_eq!(rep.testset_variance, 0.0);
        assert_eq!(rep.hyp1_variance, 0.0);
        assert_eq!(rep.distwise_estimate, 0.0);
        assert_eq!(rep.binomial_variance, 0.0);

        let split = CorrectnessMatrix::from_bit_strings(&["11", "00"]).unwrap();
        let rep = variance_report(&split).unwrap();
        assert_eq!(rep.testset_variance, 0.5);
        assert_eq!(rep.hyp1_variance, 0.125);
        assert_eq!(rep.distwise_estimate, 0.5);
        assert_eq!(rep.distwise_std, 0.5f64.sqrt());

        let anti = CorrectnessMatrix::from_bit_strings(&["10", "01"]).unwrap();
        let rep = variance_report(&anti).unwrap();
        assert_eq!(rep.distwise_estimate, -0.5);
        assert_eq!(rep.distwise_estimate_clamped, 0.0);
        assert_eq!(rep.distwise_std, 0.0);
    }

    fn matrix_strategy() -> impl Strategy<Value = CorrectnessMatrix> {
        (2usize..40, 2usize..90).prop_flat_map(|(r, n)| {
            proptest::collection::vec(any::<bool>(), r * n)
                .prop_map(move |bits| CorrectnessMatrix::from_fn(r, n, |a, b| bits[a * n + b]).unwrap())
        })
    }

    fn k_way_strategy() -> impl Strategy<Value = RunMatrix> {
        (2usize..12, 1usize..40, 2u32..7).prop_flat_map(|(r, n, k)| {
            (
                proptest::collection::vec(0..k as u16, r * n),
                proptest::collection::vec(0..k as u16, n),
            )
                .prop_map(move |(p, l)| RunMatrix::new(r, n, k, p, l).unwrap())
        })
    }

    proptest! {
        #[test]
        fn integer_route_matches_formula(c in matrix_strategy()) {
            let exact = distwise_variance_estimate(&c).unwrap();
            let float = distwise_by_formula(&c);
            prop_assert!((exact - float).abs() <= 1e-12, "{} vs {}", exact, float);
        }

        #[test]
        fn distwise_below_scaled_testset_variance(c in matrix_strategy()) {
            let n = c.examples() as f64;
            let var = testset_variance(&per_run_accuracy(&c)).unwrap();
            let est = distwise_variance_estimate(&c).unwrap();
            prop_assert!(est <= n / (n - 1.0) * var * (1.0 + 1e-12) + 1e-18);
        }

        #[test]
        fn complement_tasks_agree(m in k_way_strategy(), mask in 1u32..63) {
            let k = m.classes() as u16;
            let subset: Vec<u16> = (0..k).filter(|c| mask & (1 << c) != 0).collect();
            prop_assume!(!subset.is_empty() && subset.len() < k as usize);
            let complement: Vec<u16> = (0..k).filter(|c| !subset.contains(c)).collect();
            let a = binary_task(&m, &subset).unwrap();
            let b = binary_task(&m, &complement).unwrap();
            prop_assert_eq!(a.err, b.err);
            prop_assert_eq!(a.ece, b.ece);
            prop_assert_eq!(a.observed_variance, b.observed_variance);
        }

        #[test]
        fn bounds_monotone_and_scaling(err in 0.0f64..1.0, e1 in 0.0f64..1.0, e2 in 0.0f64..1.0, n in 1usize..10_000, k in 2usize..20) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let a = calibration_bounds(err, lo, n, k).unwrap();
            let b = calibration_bounds(err, hi, n, k).unwrap();
            prop_assert!(b.ece_lower_bound <= a.ece_lower_bound);
            prop_assert!(a.ece_lower_bound <= a.calibrated_variance);
            let d = calibration_bounds(err, lo, 2 * n, k).unwrap();
            prop_assert!((d.calibrated_variance * 2.0 - a.calibrated_variance).abs() <= 1e-15 * a.calibrated_variance.max(1e-300));
            prop_assert!((d.kway_lower_bound * 2.0 - a.kway_lower_bound).abs() <= 1e-15 * a.kway_lower_bound.max(1e-300));
            prop_assert!((d.ece_lower_bound * 2.0 - a.ece_lower_bound).abs() <= 1e-15 * a.ece_lower_bound.max(1e-300));
        }

        #[test]
        fn ece_zero_when_groups_calibrated(groups in proptest::collection::vec((0usize..=4, 1usize..5), 1..6)) {
            // R = 4. A group with count c gets 4·m examples, c·m of them positive,
            // so each group's label mean is exactly c/4.
            let runs = 4;
            let mut rows = vec![Vec::new(); runs];
            let mut labels = Vec::new();
            for &(c, m) in &groups {
                for e in 0..4 * m {
                    for (r, row) in rows.iter_mut().enumerate() {
                        row.push((r < c) as u16);
                    }
                    labels.push((e < c * m) as u16);
                }
            }
            let mat = RunMatrix::from_rows(&rows, labels, 2).unwrap();
            prop_assert_eq!(ece_binary(&mat).unwrap(), 0.0);
        }
    }
}
