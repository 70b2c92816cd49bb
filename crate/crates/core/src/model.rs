// SPDX-License-Identifier: Apache-2.0

//! Domain types shared by every analysis, and the per-run / per-example
//! statistics they all start from.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

pub const WORD_BITS: usize = 64;

/// Number of 64-bit words needed for `bits` bits.
#[inline]
pub fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

/// Mask of the valid bits in the last word of a row of `bits` bits.
#[inline]
pub(crate) fn tail_mask(bits: usize) -> u64 {
    match bits % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// Predicted class ids of `R` runs on `N` examples, plus the true labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunMatrix {
    runs: usize,
    examples: usize,
    classes: u32,
    /// Run-major: `predictions[r * examples + i]`.
    predictions: Vec<u16>,
    labels: Vec<u16>,
    meta: BTreeMap<String, String>,
}

impl RunMatrix {
    /// Builds a matrix from a run-major prediction grid.
    pub fn new(
        runs: usize,
        examples: usize,
        classes: u32,
        predictions: Vec<u16>,
        labels: Vec<u16>,
    ) -> Result<Self> {
        if runs == 0 || examples == 0 {
            return Err(Error::InvalidInput(format!(
                "run matrix needs R ≥ 1 and N ≥ 1, got R={runs}, N={examples}"
            )));
        }
        if !(2..=u16::MAX as u32).contains(&classes) {
            return Err(Error::InvalidInput(format!(
                "class count must be in [2, 65535], got {classes}"
            )));
        }
        if predictions.len() != runs * examples {
            return Err(Error::DimensionMismatch(format!(
                "predictions hold {} cells, expected R×N = {}",
                predictions.len(),
                runs * examples
            )));
        }
        if labels.len() != examples {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} examples",
                labels.len(),
                examples
            )));
        }
        if let Some(pos) = predictions.iter().position(|&p| p as u32 >= classes) {
            return Err(Error::InvariantViolation(format!(
                "prediction {} at run {}, example {} is not < K={classes}",
                predictions[pos],
                pos / examples,
                pos % examples
            )));
        }
        if let Some(pos) = labels.iter().position(|&l| l as u32 >= classes) {
            return Err(Error::InvariantViolation(format!(
                "label {} at example {pos} is not < K={classes}",
                labels[pos]
            )));
        }
        Ok(Self {
            runs,
            examples,
            classes,
            predictions,
            labels,
            meta: BTreeMap::new(),
        })
    }

    /// Builds a matrix from one prediction row per run.
    pub fn from_rows(rows: &[Vec<u16>], labels: Vec<u16>, classes: u32) -> Result<Self> {
        let examples = labels.len();
        if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != examples) {
            return Err(Error::DimensionMismatch(format!(
                "run {r} has {} predictions, expected {examples}",
                row.len()
            )));
        }
        let flat = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), examples, classes, flat, labels)
    }

    pub fn with_meta(mut self, meta: BTreeMap<String, String>) -> Self {
        self.meta = meta;
        self
    }

    pub fn runs(&self) -> usize {
        self.runs
    }

    pub fn examples(&self) -> usize {
        self.examples
    }

    pub fn classes(&self) -> u32 {
        self.classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn predictions(&self) -> &[u16] {
        &self.predictions
    }

    pub fn row(&self, run: usize) -> &[u16] {
        &self.predictions[run * self.examples..(run + 1) * self.examples]
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }
}

/// Bit-packed `R × N` correctness grid.
///
/// Rows are runs; each row is `ceil(N/64)` words, bit `i % 64` of word
/// `i / 64` is example `i` (least-significant bit first). Padding bits past
/// `N` are always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectnessMatrix {
    runs: usize,
    examples: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl CorrectnessMatrix {
    /// Wraps pre-packed words, rejecting non-zero padding.
    pub fn from_words(runs: usize, examples: usize, bits: Vec<u64>) -> Result<Self> {
        if runs == 0 || examples == 0 {
            return Err(Error::InvalidInput(format!(
                "correctness matrix needs R ≥ 1 and N ≥ 1, got R={runs}, N={examples}"
            )));
        }
        let words_per_row = words_for(examples);
        if bits.len() != runs * words_per_row {
            return Err(Error::DimensionMismatch(format!(
                "{} words, expected {} rows × {} words",
                bits.len(),
                runs,
                words_per_row
            )));
        }
        let mask = tail_mask(examples);
        for r in 0..runs {
            let last = bits[(r + 1) * words_per_row - 1];
            if last & !mask != 0 {
                return Err(Error::InvariantViolation(format!(
                    "padding bits set in row {r}"
                )));
            }
        }
        Ok(Self {
            runs,
            examples,
            words_per_row,
            bits,
        })
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let examples = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|row| row.len() != examples) {
            return Err(Error::DimensionMismatch(format!(
                "row {r} has {} entries, expected {examples}",
                rows[r].len()
            )));
        }
        Self::from_fn(rows.len(), examples, |r, i| rows[r][i])
    }

    /// Parses rows written as strings of `0`/`1`, e.g. `["110", "010"]`.
    pub fn from_bit_strings(rows: &[&str]) -> Result<Self> {
        let parsed = rows
            .iter()
            .map(|s| {
                s.chars()
                    .map(|c| match c {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        other => Err(Error::InvalidInput(format!("bad bit character {other:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&parsed)
    }

    pub fn from_fn(
        runs: usize,
        examples: usize,
        mut bit: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let words_per_row = words_for(examples);
        let mut bits = vec![0u64; runs * words_per_row];
        for r in 0..runs {
            let row = &mut bits[r * words_per_row..(r + 1) * words_per_row];
            for i in 0..examples {
                if bit(r, i) {
                    row[i / WORD_BITS] |= 1u64 << (i % WORD_BITS);
                }
            }
        }
        Self::from_words(runs, examples, bits)
    }

    pub fn runs(&self) -> usize {
        self.runs
    }

    pub fn examples(&self) -> usize {
        self.examples
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn words(&self) -> &[u64] {
        &self.bits
    }

    pub fn row_words(&self, run: usize) -> &[u64] {
        &self.bits[run * self.words_per_row..(run + 1) * self.words_per_row]
    }

    #[inline]
    pub fn get(&self, run: usize, example: usize) -> bool {
        let w = self.bits[run * self.words_per_row + example / WORD_BITS];
        (w >> (example % WORD_BITS)) & 1 == 1
    }

    /// Number of correct examples in each run.
    pub fn row_counts(&self) -> Vec<u64> {
        (0..self.runs)
            .map(|r| {
                self.row_words(r)
                    .iter()
                    .map(|w| w.count_ones() as u64)
                    .sum()
            })
            .collect()
    }

    /// Number of runs that got each example right.
    pub fn column_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.examples];
        for r in 0..self.runs {
            for (w_idx, &word) in self.row_words(r).iter().enumerate() {
                let mut w = word;
                while w != 0 {
                    let bit = w.trailing_zeros() as usize;
                    counts[w_idx * WORD_BITS + bit] += 1;
                    w &= w - 1;
                }
            }
        }
        counts
    }

    /// Keeps only the given columns, in the given order (repeats allowed).
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.examples) {
            return Err(Error::OutOfRange(format!(
                "column {bad} ≥ N={}",
                self.examples
            )));
        }
        Self::from_fn(self.runs, columns.len(), |r, i| self.get(r, columns[i]))
    }
}

/// Raw logits, `R × N × K`, run-major then example-major then class.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTensor {
    runs: usize,
    examples: usize,
    classes: usize,
    values: Vec<f32>,
}

impl LogitTensor {
    pub fn new(runs: usize, examples: usize, classes: usize, values: Vec<f32>) -> Result<Self> {
        if runs == 0 || examples == 0 || classes == 0 {
            return Err(Error::InvalidInput(format!(
                "logit tensor needs positive dimensions, got {runs}×{examples}×{classes}"
            )));
        }
        if values.len() != runs * examples * classes {
            return Err(Error::DimensionMismatch(format!(
                "{} logits, expected {}×{}×{}",
                values.len(),
                runs,
                examples,
                classes
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation(format!(
                "non-finite logit at flat index {pos}"
            )));
        }
        Ok(Self {
            runs,
            examples,
            classes,
            values,
        })
    }

    pub fn runs(&self) -> usize {
        self.runs
    }

    pub fn examples(&self) -> usize {
        self.examples
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, run: usize, example: usize, class: usize) -> f32 {
        self.values[(run * self.examples + example) * self.classes + class]
    }

    /// Arg-max class per (run, example); ties go to the lower class id.
    pub fn argmax_predictions(&self) -> Vec<u16> {
        self.values
            .chunks_exact(self.classes)
            .map(|row| {
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best as u16
            })
            .collect()
    }
}

/// Per-example fraction of runs that were correct.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleMeans {
    pub means: Vec<f64>,
    pub runs_used: usize,
}

impl ExampleMeans {
    /// Wraps arbitrary probabilities, e.g. for simulation inputs.
    pub fn new(means: Vec<f64>, runs_used: usize) -> Result<Self> {
        if let Some(bad) = means.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(Error::OutOfRange(format!("mean {bad} outside [0, 1]")));
        }
        Ok(Self { means, runs_used })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.means.iter().sum::<f64>() / self.means.len() as f64
    }
}

/// Test-set accuracy of each run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracySeries {
    pub values: Vec<f64>,
    pub n_examples: usize,
}

impl AccuracySeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Summary of the variance statistics for one correctness matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub mean_accuracy: f64,
    pub testset_variance: f64,
    pub hyp1_variance: f64,
    /// Unbiased estimate of distribution-wise variance; may be negative.
    pub distwise_estimate: f64,
    pub distwise_estimate_clamped: f64,
    pub binomial_variance: f64,
    pub testset_std: f64,
    pub hyp1_std: f64,
    pub distwise_std: f64,
    pub binomial_std: f64,
    pub n_examples: usize,
    pub n_runs: usize,
}

pub fn correctness_from_predictions(m: &RunMatrix) -> CorrectnessMatrix {
    let labels = m.labels();
    CorrectnessMatrix::from_fn(m.runs(), m.examples(), |r, i| m.row(r)[i] == labels[i])
        .expect("dimensions validated by RunMatrix")
}

pub fn per_run_accuracy(c: &CorrectnessMatrix) -> AccuracySeries {
    let n = c.examples();
    AccuracySeries {
        values: c
            .row_counts()
            .into_iter()
            .map(|k| k as f64 / n as f64)
            .collect(),
        n_examples: n,
    }
}

pub fn example_means(c: &CorrectnessMatrix) -> ExampleMeans {
    let r = c.runs();
    ExampleMeans {
        means: c
            .column_counts()
            .into_iter()
            .map(|k| k as f64 / r as f64)
            .collect(),
        runs_used: r,
    }
}

/// Fraction of positions where two prediction rows differ (churn).
pub fn disagreement_rate(a: &[u16], b: &[u16]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction rows of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty prediction rows".into()));
    }
    let differ = a.iter().zip(b).filter(|(x, y)| x != y).count();
    Ok(differ as f64 / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits_of(c: &CorrectnessMatrix) -> Vec<String> {
        (0..c.runs())
            .map(|r| {
                (0..c.examples())
                    .map(|i| if c.get(r, i) { '1' } else { '0' })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_cell_correctness() {
        let m = RunMatrix::new(1, 1, 4, vec![3], vec![3]).unwrap();
        assert!(correctness_from_predictions(&m).get(0, 0));
        let m = RunMatrix::new(1, 1, 4, vec![2], vec![3]).unwrap();
        assert!(!correctness_from_predictions(&m).get(0, 0));
    }

    #[test]
    fn small_grid_correctness() {
        let m = RunMatrix::from_rows(&[vec![0, 1, 2], vec![1, 1, 2]], vec![0, 1, 0], 3).unwrap();
        let c = correctness_from_predictions(&m);
        assert_eq!(bits_of(&c), vec!["110", "010"]);
    }

    #[test]
    fn rejects_bad_class_ids_and_shapes() {
        assert!(matches!(
            RunMatrix::new(1, 2, 3, vec![0, 3], vec![0, 0]),
            Err(Error::InvariantViolation(_))
        ));
        assert!(matches!(
            RunMatrix::new(1, 2, 3, vec![0, 1], vec![0, 5]),
            Err(Error::InvariantViolation(_))
        ));
        assert!(matches!(
            RunMatrix::new(2, 2, 3, vec![0, 1, 2], vec![0, 0]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            RunMatrix::from_rows(&[vec![0, 1], vec![0]], vec![0, 0], 2),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn padding_must_be_zero() {
        assert!(matches!(
            CorrectnessMatrix::from_words(1, 3, vec![0b1000]),
            Err(Error::InvariantViolation(_))
        ));
        assert!(CorrectnessMatrix::from_words(1, 3, vec![0b111]).is_ok());
        assert!(CorrectnessMatrix::from_words(1, 64, vec![u64::MAX]).is_ok());
    }

    #[test]
    fn accuracy_examples() {
        let ones = CorrectnessMatrix::from_fn(3, 4, |_, _| true).unwrap();
        assert_eq!(per_run_accuracy(&ones).values, vec![1.0; 3]);
        let c = CorrectnessMatrix::from_bit_strings(&["110", "010"]).unwrap();
        assert_eq!(per_run_accuracy(&c).values, vec![2.0 / 3.0, 1.0 / 3.0]);
        let zeros = CorrectnessMatrix::from_fn(2, 5, |_, _| false).unwrap();
        assert_eq!(per_run_accuracy(&zeros).values, vec![0.0, 0.0]);
    }

    #[test]
    fn example_mean_examples() {
        let c = CorrectnessMatrix::from_bit_strings(&["110", "010"]).unwrap();
        assert_eq!(example_means(&c).means, vec![0.5, 1.0, 0.0]);
        let c = CorrectnessMatrix::from_bit_strings(&["101"]).unwrap();
        assert_eq!(example_means(&c).means, vec![1.0, 0.0, 1.0]);
        let ones = CorrectnessMatrix::from_fn(4, 70, |_, _| true).unwrap();
        assert!(example_means(&ones).means.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn disagreement_examples() {
        assert_eq!(disagreement_rate(&[0, 1, 2], &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(disagreement_rate(&[0, 1, 2, 3], &[0, 1, 2, 0]).unwrap(), 0.25);
        assert!(matches!(
            disagreement_rate(&[0, 1], &[0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn select_columns_repeats() {
        let c = CorrectnessMatrix::from_bit_strings(&["110", "010"]).unwrap();
        let s = c.select_columns(&[2, 0, 0]).unwrap();
        assert_eq!(bits_of(&s), vec!["011", "000"]);
        assert!(c.select_columns(&[3]).is_err());
    }

    fn run_matrix_strategy() -> impl Strategy<Value = RunMatrix> {
        (1usize..6, 1usize..150, 2u32..7).prop_flat_map(|(r, n, k)| {
            (
                proptest::collection::vec(0..k as u16, r * n),
                proptest::collection::vec(0..k as u16, n),
            )
                .prop_map(move |(p, l)| RunMatrix::new(r, n, k, p, l).unwrap())
        })
    }

    proptest! {
        #[test]
        fn double_counting_identity(m in run_matrix_strategy()) {
            let c = correctness_from_predictions(&m);
            let total: u64 = c.row_counts().iter().sum();
            prop_assert_eq!(total, c.column_counts().iter().sum::<u64>());
            let a = per_run_accuracy(&c).mean();
            let e = example_means(&c).mean();
            prop_assert!((a - e).abs() <= 1e-12);
        }

        #[test]
        fn relabeling_preserves_correctness(m in run_matrix_strategy(), shift in 1u16..6) {
            let k = m.classes() as u16;
            let perm = |x: u16| (x + shift) % k;
            let relabeled = RunMatrix::new(
                m.runs(), m.examples(), m.classes(),
                m.predictions().iter().map(|&p| perm(p)).collect(),
                m.labels().iter().map(|&l| perm(l)).collect(),
            ).unwrap();
            prop_assert_eq!(correctness_from_predictions(&m), correctness_from_predictions(&relabeled));
        }

        #[test]
        fn disagreement_is_pseudometric(
            rows in proptest::collection::vec(proptest::collection::vec(0u16..3, 12), 3)
        ) {
            let (a, b, c) = (&rows[0], &rows[1], &rows[2]);
            let ab = disagreement_rate(a, b).unwrap();
            prop_assert_eq!(ab, disagreement_rate(b, a).unwrap());
            prop_assert_eq!(disagreement_rate(a, a).unwrap(), 0.0);
            let ac = disagreement_rate(a, c).unwrap();
            let cb = disagreement_rate(c, b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-15);
        }
    }
}
