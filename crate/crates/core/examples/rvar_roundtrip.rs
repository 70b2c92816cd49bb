// SPDX-License-Identifier: Apache-2.0

//! Write a small run matrix with logits to RVAR, read it back, and leave a
//! copy in a directory for the `runvar` binary to chew on.
//!
//! ```text
//! cargo run --example rvar_roundtrip -- /tmp/runvar-demo
//! runvar stats /tmp/runvar-demo/demo.rvar --out /tmp/runvar-demo/stats
//! ```

use std::path::PathBuf;

use runvar::rng::uniform_at;
use runvar::rvar::{read_rvar, write_rvar, Outcomes};
use runvar::{LogitTensor, RunMatrix};

fn main() -> runvar::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&dir).map_err(|e| runvar::Error::InvalidInput(e.to_string()))?;
    let (runs, n, classes) = (32, 200, 10);

    let labels: Vec<u16> = (0..n).map(|i| (i % classes) as u16).collect();
    let values: Vec<f32> = (0..runs * n * classes)
        .map(|x| {
            let (i, k) = ((x / classes) % n, x % classes);
            let boost = if labels[i] as usize == k { 1.5 } else { 0.0 };
            (boost + 2.0 * uniform_at(1, x as u64)) as f32
        })
        .collect();
    let logits = LogitTensor::new(runs, n, classes, values)?;
    let m = RunMatrix::new(runs, n, classes as u32, logits.argmax_predictions(), labels)?;

    let path = dir.join("demo.rvar");
    write_rvar(Outcomes::Predictions(&m), Some(&logits), &path)?;
    let back = read_rvar(&path)?;
    assert_eq!(back.run_matrix.as_ref(), Some(&m));
    assert_eq!(back.logits.as_ref(), Some(&logits));
    println!(
        "wrote {} ({} bytes): {runs} runs x {n} examples x {classes} classes, round trip ok",
        path.display(),
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0)
    );
    Ok(())
}
