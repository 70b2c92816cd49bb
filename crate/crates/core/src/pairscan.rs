// SPDX-License-Identifier: Apache-2.0

//! All-pairs scan for examples whose correctness is not independent across
//! runs: `δᵢⱼ = |P̂(CᵢCⱼ) − P̂(Cᵢ)P̂(Cⱼ)|`.
//!
//! The correctness matrix is transposed once into column-major bit rows so
//! that each pair costs `ceil(R/64)` AND+popcount operations. Pairs are
//! processed in square tiles of columns, tiles run in parallel, and the
//! merged result is sorted, so the output does not depend on thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{words_for, CorrectnessMatrix, WORD_BITS};

/// Columns per tile side. 64 columns × 4096 runs is 32 KiB per tile side.
pub const TILE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairDeviation {
    pub i: usize,
    pub j: usize,
    pub p_i: f64,
    pub p_j: f64,
    pub p_ij: f64,
    pub delta: f64,
}

impl PairDeviation {
    /// Builds the record from exact counts over `runs` runs.
    ///
    /// `delta` is `|c_ij·R − c_i·c_j| / R²`, one rounding from the exact
    /// rational value.
    pub fn from_counts(i: usize, j: usize, c_i: u64, c_j: u64, c_ij: u64, runs: usize) -> Self {
        let r = runs as f64;
        let rr = runs as i128;
        let num = (c_ij as i128 * rr - c_i as i128 * c_j as i128).abs();
        Self {
            i,
            j,
            p_i: c_i as f64 / r,
            p_j: c_j as f64 / r,
            p_ij: c_ij as f64 / r,
            delta: num as f64 / (rr * rr) as f64,
        }
    }
}

/// Correctness bits transposed to one packed row of runs per example.
#[derive(Debug, Clone)]
pub struct ColumnBits {
    runs: usize,
    examples: usize,
    words_per_column: usize,
    bits: Vec<u64>,
    counts: Vec<u64>,
}

impl ColumnBits {
    pub fn from_correctness(c: &CorrectnessMatrix) -> Self {
        let (runs, examples) = (c.runs(), c.examples());
        let words_per_column = words_for(runs);
        let mut bits = vec![0u64; examples * words_per_column];
        for r in 0..runs {
            let (rw, rb) = (r / WORD_BITS, r % WORD_BITS);
            for (w_idx, &word) in c.row_words(r).iter().enumerate() {
                let mut w = word;
                while w != 0 {
                    let i = w_idx * WORD_BITS + w.trailing_zeros() as usize;
                    bits[i * words_per_column + rw] |= 1u64 << rb;
                    w &= w - 1;
                }
            }
        }
        let counts = bits
            .chunks_exact(words_per_column)
            .map(|col| col.iter().map(|w| w.count_ones() as u64).sum())
            .collect();
        Self {
            runs,
            examples,
            words_per_column,
            bits,
            counts,
        }
    }

    pub fn runs(&self) -> usize {
        self.runs
    }

    pub fn examples(&self) -> usize {
        self.examples
    }

    pub fn column(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words_per_column..(i + 1) * self.words_per_column]
    }

    pub fn count(&self, i: usize) -> u64 {
        self.counts[i]
    }

    #[inline]
    pub fn joint_count(&self, i: usize, j: usize) -> u64 {
        self.column(i)
            .iter()
            .zip(self.column(j))
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum()
    }

    pub fn deviation(&self, i: usize, j: usize) -> PairDeviation {
        PairDeviation::from_counts(
            i,
            j,
            self.count(i),
            self.count(j),
            self.joint_count(i, j),
            self.runs,
        )
    }
}

/// Joint statistics of examples `i` and `j`.
pub fn pair_joint_stats(c: &CorrectnessMatrix, i: usize, j: usize) -> Result<PairDeviation> {
    let n = c.examples();
    if i >= n || j >= n {
        return Err(Error::OutOfRange(format!(
            "pair ({i}, {j}) outside N={n}"
        )));
    }
    if i == j {
        return Err(Error::InvalidInput(format!("pair indices must differ, got ({i}, {i})")));
    }
    let (lo, hi) = (i.min(j), i.max(j));
    let words = words_for(c.runs());
    let mut col_lo = vec![0u64; words];
    let mut col_hi = vec![0u64; words];
    for r in 0..c.runs() {
        if c.get(r, lo) {
            col_lo[r / WORD_BITS] |= 1 << (r % WORD_BITS);
        }
        if c.get(r, hi) {
            col_hi[r / WORD_BITS] |= 1 << (r % WORD_BITS);
        }
    }
    let pop = |ws: &[u64]| ws.iter().map(|w| w.count_ones() as u64).sum::<u64>();
    let joint = col_lo
        .iter()
        .zip(&col_hi)
        .map(|(a, b)| (a & b).count_ones() as u64)
        .sum();
    Ok(PairDeviation::from_counts(
        lo,
        hi,
        pop(&col_lo),
        pop(&col_hi),
        joint,
        c.runs(),
    ))
}

fn sort_deviations(pairs: &mut [PairDeviation]) {
    pairs.sort_by(|a, b| {
        b.delta
            .total_cmp(&a.delta)
            .then(a.i.cmp(&b.i))
            .then(a.j.cmp(&b.j))
    });
}

/// Every pair with `delta ≥ threshold`, sorted by delta descending, then
/// by `(i, j)`.
pub fn scan_pairs(c: &CorrectnessMatrix, delta_threshold: f64) -> Vec<PairDeviation> {
    scan_columns(&ColumnBits::from_correctness(c), delta_threshold)
}

pub fn scan_columns(cols: &ColumnBits, delta_threshold: f64) -> Vec<PairDeviation> {
    let n = cols.examples();
    let tiles = n.div_ceil(TILE);
    let tile_pairs: Vec<(usize, usize)> = (0..tiles)
        .flat_map(|a| (a..tiles).map(move |b| (a, b)))
        .collect();

    let mut out: Vec<PairDeviation> = tile_pairs
        .par_iter()
        .flat_map_iter(|&(a, b)| {
            let mut found = Vec::new();
            let (a0, a1) = (a * TILE, ((a + 1) * TILE).min(n));
            let (b0, b1) = (b * TILE, ((b + 1) * TILE).min(n));
            for i in a0..a1 {
                let start = if a == b { i + 1 } else { b0 };
                for j in start..b1 {
                    let d = cols.deviation(i, j);
                    if d.delta >= delta_threshold {
                        found.push(d);
                    }
                }
            }
            found
        })
        .collect();
    sort_deviations(&mut out);
    out
}

/// Reference scan: a scalar loop over every pair and every run.
pub fn scan_pairs_naive(c: &CorrectnessMatrix, delta_threshold: f64) -> Vec<PairDeviation> {
    let (runs, n) = (c.runs(), c.examples());
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (mut ci, mut cj, mut cij) = (0u64, 0u64, 0u64);
            for r in 0..runs {
                let (a, b) = (c.get(r, i), c.get(r, j));
                ci += a as u64;
                cj += b as u64;
                cij += (a && b) as u64;
            }
            let d = PairDeviation::from_counts(i, j, ci, cj, cij, runs);
            if d.delta >= delta_threshold {
                out.push(d);
            }
        }
    }
    sort_deviations(&mut out);
    out
}
