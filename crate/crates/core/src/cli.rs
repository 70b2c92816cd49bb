// SPDX-License-Identifier: Apache-2.0

//! The `runvar` command line.
//!
//! Every subcommand reads its inputs, writes a bundle of CSV/SVG/RVAR files
//! plus `report.json` into `--out`, and exits with
//!
//! | code | meaning                                   |
//! |------|-------------------------------------------|
//! | 0    | success                                   |
//! | 2    | usage error                               |
//! | 3    | unreadable or invalid input               |
//! | 4    | an oracle check failed                    |

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corr::{cross_series_correlation, random_halves, split_accuracies, split_correlation, Split};
use crate::error::{Error, Result};
use crate::estimators::{enumerate_binary_tasks, variance_report};
use crate::model::{example_means, per_run_accuracy};
use crate::npck::{effective_dimension, npck_matrix, npck_top_k, npck_top_pairs};
use crate::oracle::{validate_theorems, ValidationConfig, WorldSpec};
use crate::pairscan::scan_pairs;
use crate::rvar::{read_csv_predictions, read_rvar, write_rvar_contents, RvarContents};
use crate::simulate::{
    distribution_summary, ks_critical_value, ks_statistic, simulate_binomial, simulate_hyp1, std_standard_error,
    Histogram,
};
use crate::svg::{histogram_svg, Series};

pub const SCHEMA_VERSION: u32 = 1;
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

const HISTOGRAM_BINS: usize = 30;
const KERNEL_BANDS: [f64; 3] = [0.75, 0.5, 0.25];

#[derive(Debug, Parser)]
#[command(name = "runvar", version, about = "Run-to-run variance analytics for repeated training runs")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runvar-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimulationMode {
    Hyp1,
    Binomial,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Variance summary of a run matrix.
    Stats { input: PathBuf },
    /// Simulated accuracy distribution vs the observed one.
    Simulate {
        input: PathBuf,
        /// Number of simulated runs (default: the number of observed runs).
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_enum, default_value_t = SimulationMode::Hyp1)]
        mode: SimulationMode,
    },
    /// Example pairs whose correctness is not independent across runs.
    ScanPairs {
        input: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
    },
    /// Posterior correlation kernel over logits.
    Npck {
        input: PathBuf,
        /// Keep pairs with kernel value at or above this (default 0.5).
        #[arg(long, conflicts_with = "topk")]
        threshold: Option<f64>,
        /// Keep the k highest pairs instead.
        #[arg(long)]
        topk: Option<usize>,
        /// Leading eigen-components to report (default min(valid examples, 500); 0 skips).
        #[arg(long)]
        components: Option<usize>,
    },
    /// Correlation of per-run accuracy between two halves of the examples.
    Splits {
        input: PathBuf,
        /// File with one `A` or `B` per example, in example order.
        #[arg(long, conflicts_with = "halves", required_unless_present = "halves")]
        assignment: Option<PathBuf>,
        /// Random half/half assignment from this seed.
        #[arg(long)]
        halves: Option<u64>,
        /// Fraction of best split-A runs used for the uplift.
        #[arg(long, default_value_t = 0.25)]
        quantile: f64,
    },
    /// Every balanced "subset of classes vs the rest" task.
    BinaryTasks {
        input: PathBuf,
        /// Size of the positive class subset (default: half the classes).
        #[arg(long)]
        size: Option<usize>,
    },
    /// Correlations of per-run accuracy across several evaluation sets.
    Xcorr {
        #[arg(required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
    },
    /// Monte-Carlo check of the variance results on a synthetic world.
    Oracle {
        worldspec: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        runs: usize,
        #[arg(long, default_value_t = 200)]
        replicates: usize,
        #[arg(long, default_value_t = 1)]
        batches: usize,
    },
}

/// Files written by one invocation, in write order.
struct Bundle {
    dir: PathBuf,
    files: Vec<String>,
}

impl Bundle {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Bundle {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    fn csv<R: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = R>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row).map_err(|e| Error::InvalidInput(format!("{name}: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("{name}: {e}")))?;
        self.write(name, &bytes)
    }

    fn finish(mut self, command: &str, inputs: &[Input], seed: u64, result: Value) -> Result<()> {
        self.files.push("report.json".into());
        let report = json!({
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "inputs": inputs.iter().map(|i| json!({"path": i.display, "sha256": i.digest})).collect::<Vec<_>>(),
            "files": self.files,
            "result": result,
        });
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        let path = self.dir.join("report.json");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

struct Input {
    display: String,
    digest: String,
    contents: RvarContents,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads an RVAR file, or a prediction CSV when the extension is `.csv`.
fn load(path: &Path) -> Result<Input> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let contents = if is_csv {
        let m = read_csv_predictions(path, None)?;
        RvarContents {
            meta: m.meta().clone(),
            run_matrix: Some(m),
            ..RvarContents::default()
        }
    } else {
        read_rvar(path)?
    };
    Ok(Input {
        display: path.display().to_string(),
        digest: sha256_hex(&bytes),
        contents,
    })
}

fn shared_range(a: &[f64], b: &[f64]) -> (f64, f64) {
    let all = a.iter().chain(b);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

#[derive(Serialize)]
struct IndexedValue {
    example: usize,
    mean_correct: f64,
}

#[derive(Serialize)]
struct RunValue {
    run: usize,
    accuracy: f64,
}

fn cmd_stats(g: &GlobalArgs, input: &Path) -> Result<()> {
    let inp = load(input)?;
    let c = inp.contents.correctness_matrix()?;
    let report = variance_report(&c)?;
    let acc = per_run_accuracy(&c);
    let means = example_means(&c);

    let mut b = Bundle::new(&g.out)?;
    let summary = distribution_summary(&acc.values, HISTOGRAM_BINS)?;
    let svg = histogram_svg(
        "Per-run test-set accuracy",
        "accuracy",
        &[Series {
            label: "runs",
            histogram: &summary.histogram,
            color: "steelblue",
        }],
    );
    b.write("accuracy_histogram.svg", svg.as_bytes())?;
    b.csv(
        "example_means.csv",
        means.means.iter().enumerate().map(|(example, &m)| IndexedValue { example, mean_correct: m }),
    )?;
    b.csv(
        "run_accuracy.csv",
        acc.values.iter().enumerate().map(|(run, &a)| RunValue { run, accuracy: a }),
    )?;
    b.finish("stats", &[inp], g.seed, serde_json::to_value(report)?)
}

#[derive(Serialize)]
struct TrialValue {
    trial: usize,
    accuracy: f64,
}

fn cmd_simulate(g: &GlobalArgs, input: &Path, trials: Option<usize>, mode: SimulationMode) -> Result<()> {
    let inp = load(input)?;
    let c = inp.contents.correctness_matrix()?;
    let report = variance_report(&c)?;
    let acc = per_run_accuracy(&c);
    let trials = trials.unwrap_or(c.runs());
    let (sim, predicted_std, label) = match mode {
        SimulationMode::Hyp1 => (
            simulate_hyp1(&example_means(&c), trials, g.seed)?,
            report.hyp1_std,
            "independent examples",
        ),
        SimulationMode::Binomial => (
            simulate_binomial(report.mean_accuracy, c.examples(), trials, g.seed)?,
            report.binomial_std,
            "binomial",
        ),
    };
    let observed = distribution_summary(&acc.values, HISTOGRAM_BINS)?;
    let simulated = distribution_summary(&sim.samples, HISTOGRAM_BINS)?;
    let ks = ks_statistic(&acc.values, &sim.samples);

    let mut b = Bundle::new(&g.out)?;
    b.csv(
        "simulated.csv",
        sim.samples.iter().enumerate().map(|(trial, &a)| TrialValue { trial, accuracy: a }),
    )?;
    let (lo, hi) = shared_range(&acc.values, &sim.samples);
    let h_obs = Histogram::over_range(&acc.values, lo, hi, HISTOGRAM_BINS);
    let h_sim = Histogram::over_range(&sim.samples, lo, hi, HISTOGRAM_BINS);
    let svg = histogram_svg(
        "Observed vs simulated accuracy",
        "accuracy",
        &[
            Series {
                label: "observed",
                histogram: &h_obs,
                color: "steelblue",
            },
            Series {
                label,
                histogram: &h_sim,
                color: "darkorange",
            },
        ],
    );
    b.write("overlay_histogram.svg", svg.as_bytes())?;
    let result = json!({
        "mode": match mode { SimulationMode::Hyp1 => "hyp1", SimulationMode::Binomial => "binomial" },
        "trials": trials,
        "n_examples": c.examples(),
        "n_runs": c.runs(),
        "observed": { "mean": observed.mean, "std": observed.std },
        "simulated": {
            "mean": simulated.mean,
            "std": simulated.std,
            "std_standard_error": std_standard_error(&sim.samples),
        },
        "predicted_std": predicted_std,
        "ks_statistic": ks,
        "ks_critical_value_0_05": ks_critical_value(acc.values.len(), sim.samples.len(), 0.05),
    });
    b.finish("simulate", &[inp], g.seed, result)
}

fn cmd_scan_pairs(g: &GlobalArgs, input: &Path, threshold: f64) -> Result<()> {
    if !(0.0..=0.25).contains(&threshold) {
        return Err(Error::OutOfRange(format!("threshold {threshold} outside [0, 0.25]")));
    }
    let inp = load(input)?;
    let c = inp.contents.correctness_matrix()?;
    let pairs = scan_pairs(&c, threshold);
    let mut b = Bundle::new(&g.out)?;
    b.csv("pairs.csv", &pairs)?;
    let result = json!({
        "threshold": threshold,
        "n_examples": c.examples(),
        "n_runs": c.runs(),
        "pair_count": pairs.len(),
        "top_pairs": &pairs[..pairs.len().min(20)],
    });
    b.finish("scan-pairs", &[inp], g.seed, result)
}

#[derive(Serialize)]
struct ComponentRow {
    component: usize,
    eigenvalue: f64,
    cumulative_explained: f64,
}

fn cmd_npck(
    g: &GlobalArgs,
    input: &Path,
    threshold: Option<f64>,
    topk: Option<usize>,
    components: Option<usize>,
) -> Result<()> {
    let inp = load(input)?;
    let t = inp.contents.require_logits()?;
    let k = npck_matrix(t)?;
    let (selection, pairs) = match topk {
        Some(count) => (json!({ "topk": count }), npck_top_k(&k, count)),
        None => {
            let th = threshold.unwrap_or(0.5);
            (json!({ "threshold": th }), npck_top_pairs(&k, th))
        }
    };
    let masked: Vec<usize> = (0..k.n()).filter(|&i| !k.is_valid(i)).collect();
    let bands: Vec<Value> = KERNEL_BANDS
        .iter()
        .map(|&th| json!({ "threshold": th, "pairs": npck_top_pairs(&k, th).len() }))
        .collect();

    let mut b = Bundle::new(&g.out)?;
    b.csv("top_pairs.csv", &pairs)?;

    let valid = k.valid_count();
    let m = components.unwrap_or(valid.min(500));
    let explained = if m > 0 && valid > 0 {
        let ve = effective_dimension(&k, m.min(valid))?;
        b.csv(
            "effective_dimension.csv",
            ve.eigenvalues
                .iter()
                .zip(&ve.cumulative)
                .enumerate()
                .map(|(i, (&e, &c))| ComponentRow {
                    component: i + 1,
                    eigenvalue: e,
                    cumulative_explained: c,
                }),
        )?;
        Some(ve)
    } else {
        None
    };

    let mut meta = std::collections::BTreeMap::new();
    meta.insert("kernel".to_string(), "npck".to_string());
    meta.insert("source_sha256".to_string(), inp.digest.clone());
    meta.insert("masked_examples".to_string(), masked.len().to_string());
    let kern = RvarContents {
        kernel: Some(k.clone()),
        meta,
        ..RvarContents::default()
    };
    let path = b.path("kernel.rvar");
    write_rvar_contents(&kern, &path)?;

    let result = json!({
        "n_examples": k.n(),
        "n_runs": k.runs_used(),
        "n_classes": k.classes_used(),
        "valid_examples": valid,
        "masked_examples": masked,
        "selection": selection,
        "pair_count": pairs.len(),
        "band_counts": bands,
        "components": explained.as_ref().map(|v| v.cumulative.len()),
        "variance_explained": explained.as_ref().and_then(|v| v.cumulative.last().copied()),
    });
    b.finish("npck", &[inp], g.seed, result)
}

fn read_assignment(path: &Path) -> Result<Vec<Split>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        match line {
            "" => continue,
            "A" | "a" => out.push(Split::A),
            "B" | "b" => out.push(Split::B),
            other => {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    msg: format!("expected A or B, got {other:?}"),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct SplitRow {
    run: usize,
    accuracy_a: f64,
    accuracy_b: f64,
}

fn cmd_splits(
    g: &GlobalArgs,
    input: &Path,
    assignment: Option<&Path>,
    halves: Option<u64>,
    quantile: f64,
) -> Result<()> {
    let inp = load(input)?;
    let c = inp.contents.correctness_matrix()?;
    let (split, source) = match (assignment, halves) {
        (Some(path), _) => (read_assignment(path)?, json!({ "assignment": path.display().to_string() })),
        (None, Some(seed)) => (random_halves(c.examples(), seed), json!({ "halves": seed })),
        (None, None) => return Err(Error::InvalidInput("need --assignment or --halves".into())),
    };
    let report = split_correlation(&c, &split, quantile)?;
    let (a, bb) = split_accuracies(&c, &split)?;
    let mut b = Bundle::new(&g.out)?;
    b.csv(
        "split_accuracy.csv",
        a.values.iter().zip(&bb.values).enumerate().map(|(run, (&x, &y))| SplitRow {
            run,
            accuracy_a: x,
            accuracy_b: y,
        }),
    )?;
    let mut result = serde_json::to_value(report)?;
    result["split"] = source;
    b.finish("splits", &[inp], g.seed, result)
}

#[derive(Serialize)]
struct TaskRow {
    positive_classes: String,
    err: f64,
    ece: f64,
    observed_variance: f64,
    ece_lower_bound: f64,
    calibrated_variance: f64,
    binomial_variance: f64,
}

/// Coefficient of determination of `predicted` as a forecast of `observed`.
fn fit_r_squared(observed: &[f64], predicted: &[f64]) -> Option<f64> {
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let ss_tot: f64 = observed.iter().map(|o| (o - mean).powi(2)).sum();
    let ss_res: f64 = observed.iter().zip(predicted).map(|(o, p)| (o - p).powi(2)).sum();
    (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot)
}

fn cmd_binary_tasks(g: &GlobalArgs, input: &Path, size: Option<usize>) -> Result<()> {
    let inp = load(input)?;
    let m = inp.contents.require_run_matrix()?;
    let tasks = enumerate_binary_tasks(m, size)?;
    let mut b = Bundle::new(&g.out)?;
    b.csv(
        "tasks.csv",
        tasks.iter().map(|t| TaskRow {
            positive_classes: t.positive_classes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "),
            err: t.err,
            ece: t.ece,
            observed_variance: t.observed_variance,
            ece_lower_bound: t.ece_lower_bound,
            calibrated_variance: t.calibrated_variance,
            binomial_variance: t.binomial_variance,
        }),
    )?;
    let observed: Vec<f64> = tasks.iter().map(|t| t.observed_variance).collect();
    let calibrated: Vec<f64> = tasks.iter().map(|t| t.calibrated_variance).collect();
    let binomial: Vec<f64> = tasks.iter().map(|t| t.binomial_variance).collect();
    let violations = tasks.iter().filter(|t| t.observed_variance < t.ece_lower_bound).count();
    let result = json!({
        "n_classes": m.classes(),
        "n_examples": m.examples(),
        "n_runs": m.runs(),
        "task_count": tasks.len(),
        "calibrated_fit_r_squared": fit_r_squared(&observed, &calibrated),
        "binomial_fit_r_squared": fit_r_squared(&observed, &binomial),
        "ece_bound_violations": violations,
    });
    b.finish("binary-tasks", &[inp], g.seed, result)
}

#[derive(Serialize)]
struct CorrRow<'a> {
    a: &'a str,
    b: &'a str,
    r: f64,
    r_squared: f64,
    p_value: f64,
}

fn cmd_xcorr(g: &GlobalArgs, inputs: &[PathBuf]) -> Result<()> {
    let loaded = inputs.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
    let series = loaded
        .iter()
        .zip(inputs)
        .map(|(inp, path)| {
            let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok((name, per_run_accuracy(&inp.contents.correctness_matrix()?)))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = cross_series_correlation(&series)?;
    let mut rows = Vec::new();
    for i in 0..m.names.len() {
        for j in i + 1..m.names.len() {
            rows.push(CorrRow {
                a: &m.names[i],
                b: &m.names[j],
                r: m.r[i][j],
                r_squared: m.r_squared[i][j],
                p_value: m.p_value[i][j],
            });
        }
    }
    let mut b = Bundle::new(&g.out)?;
    b.csv("correlations.csv", rows)?;
    b.finish("xcorr", &loaded, g.seed, serde_json::to_value(&m)?)
}

/// Returns whether every check passed.
fn cmd_oracle(g: &GlobalArgs, worldspec: &Path, cfg: ValidationConfig) -> Result<bool> {
    let bytes = fs::read(worldspec).map_err(|e| Error::io(worldspec, e))?;
    let spec = WorldSpec::read(worldspec)?;
    let world = spec.build()?;
    let report = validate_theorems(&world, &cfg)?;
    for c in &report.checks {
        println!(
            "{} {} observed={:.6e} target={:.6e} se={:.3e}",
            c.status.label(),
            c.name,
            c.observed,
            c.target,
            c.standard_error
        );
    }
    let passed = report.passed();
    let b = Bundle::new(&g.out)?;
    let mut result = serde_json::to_value(&report)?;
    result["world"] = serde_json::to_value(&spec)?;
    let input = Input {
        display: worldspec.display().to_string(),
        digest: sha256_hex(&bytes),
        contents: RvarContents::default(),
    };
    b.finish("oracle", &[input], g.seed, result)?;
    Ok(passed)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let g = &cli.global;
    match &cli.command {
        Command::Stats { input } => cmd_stats(g, input)?,
        Command::Simulate { input, trials, mode } => cmd_simulate(g, input, *trials, *mode)?,
        Command::ScanPairs { input, threshold } => cmd_scan_pairs(g, input, *threshold)?,
        Command::Npck {
            input,
            threshold,
            topk,
            components,
        } => cmd_npck(g, input, *threshold, *topk, *components)?,
        Command::Splits {
            input,
            assignment,
            halves,
            quantile,
        } => cmd_splits(g, input, assignment.as_deref(), *halves, *quantile)?,
        Command::BinaryTasks { input, size } => cmd_binary_tasks(g, input, *size)?,
        Command::Xcorr { inputs } => cmd_xcorr(g, inputs)?,
        Command::Oracle {
            worldspec,
            n,
            runs,
            replicates,
            batches,
        } => {
            let cfg = ValidationConfig {
                n: *n,
                runs: *runs,
                replicates: *replicates,
                batches: *batches,
                seed: g.seed,
            };
            if !cmd_oracle(g, worldspec, cfg)? {
                return Ok(EXIT_VALIDATION);
            }
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.global.threads {
        if t == 0 {
            eprintln!("error (usage): --threads must be at least 1");
            return EXIT_USAGE;
        }
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error (usage): {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error ({}): {e}", e.kind());
            EXIT_INPUT
        }
    }
}
