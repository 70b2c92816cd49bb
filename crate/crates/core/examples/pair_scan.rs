// SPDX-License-Identifier: Apache-2.0

//! Find example pairs whose correctness co-varies across runs. Two pairs are
//! planted: a near-duplicate and an "either-or" pair.

use runvar::pairscan::{scan_pairs, scan_pairs_naive};
use runvar::rng::uniform_at;
use runvar::CorrectnessMatrix;

fn main() -> runvar::Result<()> {
    let (runs, n) = (2_000, 600);
    let c = CorrectnessMatrix::from_fn(runs, n, |r, i| {
        let u = |col: usize| uniform_at(5, (r * n + col) as u64);
        match i {
            // Mostly agrees with example 10.
            11 => if uniform_at(6, r as u64) < 0.9 { u(10) < 0.6 } else { u(11) < 0.6 },
            // Right exactly when example 20 is wrong.
            21 => u(20) >= 0.5,
            _ => u(i) < 0.6 + 0.3 * (i % 3) as f64 / 3.0,
        }
    })?;

    let pairs = scan_pairs(&c, 0.05);
    assert_eq!(pairs, scan_pairs_naive(&c, 0.05));
    for p in &pairs {
        println!(
            "({:>3}, {:>3})  p_i={:.3} p_j={:.3} p_ij={:.3}  delta={:.4}",
            p.i, p.j, p.p_i, p.p_j, p.p_ij, p.delta
        );
    }
    Ok(())
}
