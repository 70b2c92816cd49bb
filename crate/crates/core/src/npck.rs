// SPDX-License-Identifier: Apache-2.0

//! Neural posterior correlation kernel.
//!
//! κ(x, x′) is the mean over logit coordinates of the across-runs Pearson
//! correlation between the two examples' logits. With `G` the per-(example,
//! coordinate) standardized logits, κ(x, x′) = ⟨G(x), G(x′)⟩ / (K·R), which
//! is how [`npck_matrix`] computes it.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::LogitTensor;

const TILE: usize = 32;

/// Symmetric kernel over `n` examples, stored as dense f32.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    n: usize,
    runs_used: usize,
    classes_used: usize,
    valid: Vec<bool>,
    values: Vec<f32>,
}

impl KernelMatrix {
    /// Builds a kernel from a dense row-major grid. Rows that are entirely
    /// NaN mark invalid examples; everything else must be finite and
    /// symmetric.
    pub fn from_stored(n: usize, runs_used: usize, classes_used: usize, values: &[f32]) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "kernel of {} values is not {n}×{n}",
                values.len()
            )));
        }
        let valid: Vec<bool> = (0..n).map(|i| !values[i * n + i].is_nan()).collect();
        for i in 0..n {
            for j in 0..n {
                let v = values[i * n + j];
                if valid[i] && valid[j] {
                    if !v.is_finite() {
                        return Err(Error::InvariantViolation(format!(
                            "kernel entry ({i}, {j}) is not finite"
                        )));
                    }
                    if v != values[j * n + i] {
                        return Err(Error::InvariantViolation(format!(
                            "kernel is not symmetric at ({i}, {j})"
                        )));
                    }
                } else if !v.is_nan() {
                    return Err(Error::InvariantViolation(format!(
                        "kernel entry ({i}, {j}) touches an invalid example but is not NaN"
                    )));
                }
            }
        }
        Ok(KernelMatrix {
            n,
            runs_used,
            classes_used,
            valid,
            values: values.to_vec(),
        })
    }

    /// Dense symmetric matrix with every example valid.
    pub fn from_dense(n: usize, values: &[f64]) -> Result<Self> {
        let stored: Vec<f32> = values.iter().map(|&v| v as f32).collect();
        if stored.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("kernel entries must be finite".into()));
        }
        Self::from_stored(n, 0, 0, &stored)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn runs_used(&self) -> usize {
        self.runs_used
    }

    pub fn classes_used(&self) -> usize {
        self.classes_used
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// NaN when either example is invalid.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j] as f64
    }
}

/// Population mean and standard deviation of one (example, coordinate)
/// logit series across runs.
fn series_moments(t: &LogitTensor, i: usize, k: usize) -> (f64, f64) {
    let r = t.runs() as f64;
    let mean = (0..t.runs()).map(|run| t.get(run, i, k) as f64).sum::<f64>() / r;
    let var = (0..t.runs())
        .map(|run| {
            let d = t.get(run, i, k) as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / r;
    (mean, var.sqrt())
}

fn first_constant_coordinate(t: &LogitTensor, i: usize) -> Option<usize> {
    (0..t.classes()).find(|&k| series_moments(t, i, k).1 == 0.0)
}

fn check_tensor(t: &LogitTensor) -> Result<()> {
    if t.runs() < 2 {
        return Err(Error::NotEnoughRuns(t.runs()));
    }
    Ok(())
}

/// κ for one pair by direct per-coordinate Pearson correlation.
pub fn npck_pair(t: &LogitTensor, i: usize, j: usize) -> Result<f64> {
    check_tensor(t)?;
    for &x in &[i, j] {
        if x >= t.examples() {
            return Err(Error::OutOfRange(format!(
                "example {x} of {}",
                t.examples()
            )));
        }
        if let Some(coordinate) = first_constant_coordinate(t, x) {
            return Err(Error::ZeroVarianceLogit { example: x, coordinate });
        }
    }
    let r = t.runs() as f64;
    let mut total = 0.0;
    for k in 0..t.classes() {
        let (mi, si) = series_moments(t, i, k);
        let (mj, sj) = series_moments(t, j, k);
        let cov = (0..t.runs())
            .map(|run| (t.get(run, i, k) as f64 - mi) * (t.get(run, j, k) as f64 - mj))
            .sum::<f64>()
            / r;
        total += cov / (si * sj);
    }
    Ok(total / t.classes() as f64)
}

/// Standardized logits, one contiguous `K·R` vector per example
/// (coordinate-major). `None` for examples with a constant coordinate.
fn standardize(t: &LogitTensor) -> Vec<Option<Vec<f64>>> {
    let (runs, classes) = (t.runs(), t.classes());
    (0..t.examples())
        .into_par_iter()
        .map(|i| {
            let mut g = Vec::with_capacity(runs * classes);
            for k in 0..classes {
                let (mean, sd) = series_moments(t, i, k);
                if sd == 0.0 {
                    return None;
                }
                g.extend((0..runs).map(|run| (t.get(run, i, k) as f64 - mean) / sd));
            }
            Some(g)
        })
        .collect()
}

/// Full kernel via one pass of inner products over standardized logits.
/// Examples with a zero-variance coordinate are masked (NaN rows).
pub fn npck_matrix(t: &LogitTensor) -> Result<KernelMatrix> {
    check_tensor(t)?;
    let n = t.examples();
    let g = standardize(t);
    let scale = 1.0 / (t.classes() * t.runs()) as f64;
    let tiles = n.div_ceil(TILE);
    let tile_pairs: Vec<(usize, usize)> = (0..tiles).flat_map(|a| (a..tiles).map(move |b| (a, b))).collect();

    let blocks: Vec<Vec<(usize, usize, f32)>> = tile_pairs
        .par_iter()
        .map(|&(a, b)| {
            let mut out = Vec::new();
            for i in a * TILE..((a + 1) * TILE).min(n) {
                let Some(gi) = &g[i] else { continue };
                let j_start = if a == b { i } else { b * TILE };
                for j in j_start..((b + 1) * TILE).min(n) {
                    let Some(gj) = &g[j] else { continue };
                    let v = if i == j {
                        1.0
                    } else {
                        let dot: f64 = gi.iter().zip(gj).map(|(x, y)| x * y).sum();
                        (dot * scale).clamp(-1.0, 1.0)
                    };
                    out.push((i, j, v as f32));
                }
            }
            out
        })
        .collect();

    let mut values = vec![f32::NAN; n * n];
    for (i, j, v) in blocks.into_iter().flatten() {
        values[i * n + j] = v;
        values[j * n + i] = v;
    }
    Ok(KernelMatrix {
        n,
        runs_used: t.runs(),
        classes_used: t.classes(),
        valid: g.iter().map(Option::is_some).collect(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelPair {
    pub i: usize,
    pub j: usize,
    pub kappa: f64,
}

fn sorted_pairs(k: &KernelMatrix, keep: impl Fn(f64) -> bool) -> Vec<KernelPair> {
    let mut pairs = Vec::new();
    for i in 0..k.n {
        if !k.valid[i] {
            continue;
        }
        for j in i + 1..k.n {
            if k.valid[j] {
                let kappa = k.get(i, j);
                if keep(kappa) {
                    pairs.push(KernelPair { i, j, kappa });
                }
            }
        }
    }
    pairs.sort_by(|a, b| b.kappa.total_cmp(&a.kappa).then((a.i, a.j).cmp(&(b.i, b.j))));
    pairs
}

/// Off-diagonal valid pairs with κ ≥ `threshold`, highest first, ties by
/// `(i, j)`.
pub fn npck_top_pairs(k: &KernelMatrix, threshold: f64) -> Vec<KernelPair> {
    sorted_pairs(k, |kappa| kappa >= threshold)
}

/// The `count` highest off-diagonal pairs.
pub fn npck_top_k(k: &KernelMatrix, count: usize) -> Vec<KernelPair> {
    let mut pairs = sorted_pairs(k, |_| true);
    pairs.truncate(count);
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceExplained {
    /// Leading eigenvalues, descending, as computed (may be negative).
    pub eigenvalues: Vec<f64>,
    /// Fraction of total (floored at zero) eigenvalue mass in the first
    /// `m` components, for `m = 1..=components`.
    pub cumulative: Vec<f64>,
}

/// Variance explained by the leading eigen-components of the kernel,
/// restricted to valid examples.
pub fn effective_dimension(k: &KernelMatrix, components: usize) -> Result<VarianceExplained> {
    let idx: Vec<usize> = (0..k.n).filter(|&i| k.valid[i]).collect();
    let m = idx.len();
    if components == 0 || components > m {
        return Err(Error::OutOfRange(format!(
            "components {components} outside 1..={m}"
        )));
    }
    let dense = DMatrix::from_fn(m, m, |a, b| k.get(idx[a], idx[b]));
    if dense.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("kernel has non-finite entries".into()));
    }
    let mut eig: Vec<f64> = SymmetricEigen::new(dense).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return Err(Error::ZeroVariance("kernel has no positive eigenvalues".into()));
    }
    let mut acc = 0.0;
    let cumulative = eig[..components]
        .iter()
        .map(|v| {
            acc += v.max(0.0);
            (acc / total).min(1.0)
        })
        .collect();
    eig.truncate(components);
    Ok(VarianceExplained {
        eigenvalues: eig,
        cumulative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{uniform_at, CounterRng};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    /// Logits from `rows[r][i][k]`.
    fn tensor(rows: &[Vec<Vec<f32>>]) -> LogitTensor {
        let (r, n, k) = (rows.len(), rows[0].len(), rows[0][0].len());
        let values = rows.iter().flatten().flatten().copied().collect();
        LogitTensor::new(r, n, k, values).unwrap()
    }

    fn noise(runs: usize, n: usize, k: usize, seed: u64) -> LogitTensor {
        let mut rng = CounterRng::new(seed);
        let values = (0..runs * n * k)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z as f32
            })
            .collect();
        LogitTensor::new(runs, n, k, values).unwrap()
    }

    #[test]
    fn two_run_examples() {
        let t = tensor(&[
            vec![vec![1.0, 0.0], vec![2.0, 1.0], vec![1.0, 3.0]],
            vec![vec![0.0, 1.0], vec![1.0, 3.0], vec![2.0, 1.0]],
        ]);
        assert!((npck_pair(&t, 0, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!((npck_pair(&t, 0, 2).unwrap() + 1.0).abs() < 1e-12);
        assert!((npck_pair(&t, 0, 0).unwrap() - 1.0).abs() < 1e-12);
        let k = npck_matrix(&t).unwrap();
        assert!((k.get(0, 1) - 1.0).abs() < 1e-6);
        assert!((k.get(0, 2) + 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_variance_is_reported_and_masked() {
        let t = tensor(&[
            vec![vec![1.0, 5.0], vec![2.0, 1.0]],
            vec![vec![0.0, 5.0], vec![1.0, 3.0]],
        ]);
        assert!(matches!(
            npck_pair(&t, 0, 1),
            Err(Error::ZeroVarianceLogit { example: 0, coordinate: 1 })
        ));
        let k = npck_matrix(&t).unwrap();
        assert!(!k.is_valid(0));
        assert!(k.is_valid(1));
        assert!(k.get(0, 1).is_nan());
        assert_eq!(k.get(1, 1), 1.0);
        assert!(npck_top_pairs(&k, -1.0).is_empty());
    }

    #[test]
    fn single_run_rejected() {
        let t = tensor(&[vec![vec![1.0, 0.0]]]);
        assert!(matches!(npck_matrix(&t), Err(Error::NotEnoughRuns(1))));
    }

    #[test]
    fn matrix_matches_direct_path() {
        let t = noise(64, 50, 10, 5);
        let k = npck_matrix(&t).unwrap();
        for i in 0..50 {
            assert_eq!(k.get(i, i), 1.0);
            for j in 0..50 {
                assert_eq!(k.get(i, j), k.get(j, i));
                let direct = npck_pair(&t, i, j).unwrap();
                assert!((k.get(i, j) - direct).abs() < 1e-6, "({i},{j})");
            }
        }
    }

    #[test]
    fn planted_duplicate_tops_the_list() {
        let (runs, n, classes) = (32, 20, 3);
        let base = noise(runs, n, classes, 9);
        let values = (0..runs)
            .flat_map(|r| (0..n).flat_map(move |i| (0..classes).map(move |k| (r, i, k))))
            .map(|(r, i, k)| base.get(r, if i == 13 { 4 } else { i }, k))
            .collect();
        let t = LogitTensor::new(runs, n, classes, values).unwrap();
        let k = npck_matrix(&t).unwrap();
        assert!((k.get(4, 13) - 1.0).abs() < 1e-6);
        let top = npck_top_pairs(&k, 0.75);
        assert_eq!((top[0].i, top[0].j), (4, 13));
        assert_eq!(npck_top_k(&k, 1), top[..1].to_vec());
        assert!(npck_top_pairs(&k, 1.0 + 1e-6).is_empty());
    }

    #[test]
    fn independent_noise_is_near_zero() {
        let runs = 100;
        let k = npck_matrix(&noise(runs, 40, 4, 11)).unwrap();
        let mut sq = 0.0;
        let mut count = 0;
        for i in 0..40 {
            for j in i + 1..40 {
                sq += k.get(i, j).powi(2);
                count += 1;
            }
        }
        let rms = (sq / count as f64).sqrt();
        assert!(rms < 4.0 / (runs as f64).sqrt(), "rms {rms}");
    }

    #[test]
    fn tie_break_by_index() {
        let k = KernelMatrix::from_dense(3, &[1.0, 0.5, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5, 1.0]).unwrap();
        let pairs: Vec<(usize, usize)> = npck_top_pairs(&k, 0.5).iter().map(|p| (p.i, p.j)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn rank_one_kernel() {
        let v = [0.6, 0.0, 0.8];
        let values: Vec<f64> = (0..9).map(|x| v[x / 3] * v[x % 3]).collect();
        let k = KernelMatrix::from_dense(3, &values).unwrap();
        let ve = effective_dimension(&k, 3).unwrap();
        assert!((ve.cumulative[0] - 1.0).abs() < 1e-6);
        assert!((ve.eigenvalues[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identity_kernel() {
        let n = 8;
        let values: Vec<f64> = (0..n * n).map(|x| if x / n == x % n { 1.0 } else { 0.0 }).collect();
        let k = KernelMatrix::from_dense(n, &values).unwrap();
        let ve = effective_dimension(&k, n).unwrap();
        for (m, c) in ve.cumulative.iter().enumerate() {
            assert!((c - (m + 1) as f64 / n as f64).abs() < 1e-12);
        }
        assert!(effective_dimension(&k, n + 1).is_err());
        assert!(effective_dimension(&k, 0).is_err());
    }

    #[test]
    fn negative_eigenvalues_are_floored() {
        // Eigenvalues 1.5 and −0.5.
        let k = KernelMatrix::from_dense(2, &[0.5, 1.0, 1.0, 0.5]).unwrap();
        let ve = effective_dimension(&k, 2).unwrap();
        assert!((ve.eigenvalues[1] + 0.5).abs() < 1e-9);
        assert_eq!(ve.cumulative, vec![1.0, 1.0]);
    }

    #[test]
    fn stored_kernel_validation() {
        assert!(KernelMatrix::from_stored(2, 1, 1, &[1.0, 0.5, 0.4, 1.0]).is_err());
        assert!(KernelMatrix::from_stored(2, 1, 1, &[1.0, 0.5, 0.5]).is_err());
        assert!(KernelMatrix::from_stored(2, 1, 1, &[f32::NAN, 0.5, 0.5, 1.0]).is_err());
        let k = KernelMatrix::from_stored(2, 1, 1, &[f32::NAN, f32::NAN, f32::NAN, 1.0]).unwrap();
        assert_eq!(k.valid_mask(), &[false, true]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn positive_affine_maps_preserve_kappa(seed in 0u64..10_000) {
            let (runs, n, classes) = (16, 6, 3);
            let t = noise(runs, n, classes, seed);
            let mut values = t.values().to_vec();
            for r in 0..runs {
                for i in 0..n {
                    for k in 0..classes {
                        let c = (i * classes + k) as u64;
                        let scale = 0.1 + 10.0 * uniform_at(seed ^ 0xA5, c);
                        let shift = 20.0 * uniform_at(seed ^ 0x5A, c) - 10.0;
                        let idx = (r * n + i) * classes + k;
                        values[idx] = (scale * values[idx] as f64 + shift) as f32;
                    }
                }
            }
            let mapped = LogitTensor::new(runs, n, classes, values).unwrap();
            let a = npck_matrix(&t).unwrap();
            let b = npck_matrix(&mapped).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((a.get(i, j) - b.get(i, j)).abs() < 1e-4);
                }
            }
        }

        #[test]
        fn bounded_and_symmetric(seed in 0u64..10_000) {
            let k = npck_matrix(&noise(3, 12, 2, seed)).unwrap();
            for i in 0..12 {
                for j in 0..12 {
                    if k.is_valid(i) && k.is_valid(j) {
                        prop_assert!(k.get(i, j).abs() <= 1.0 + 1e-9);
                        prop_assert_eq!(k.get(i, j), k.get(j, i));
                    }
                }
            }
        }
    }
}
