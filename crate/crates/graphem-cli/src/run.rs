//! Command implementations: dataset generation, fitting across seeded
//! realizations, prior-weight grid search, and the benchmark table.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use graphem::em::{
    default_gamma_grid, gamma_max, graphem_fit, mlem_fit, FitTrace, GraphemConfig, Initializer,
    KnownParams, MlemConfig,
};
use graphem::estep::compute_estep_stats;
use graphem::io::{format_float, read_matrix_csv, read_trajectory_csv, write_matrix_csv, write_trace_csv, write_trajectory_csv};
use graphem::kalman::{kalman_filter, rts_smoother};
use graphem::metrics::{aggregate, count_edges, edge_scores, rmse, EvalRecord};
use graphem::model::{make_dataset, DatasetSpec, Preset};

use crate::config::{DatasetSource, Experiment, Manifest, Method, read_manifest_spec};

/// A dataset realization ready to fit: ground truth, fixed model parameters,
/// and the observation sequence.
pub struct LoadedDataset {
    pub spec: DatasetSpec,
    pub a_true: DMatrix<f64>,
    pub known: KnownParams,
    pub observations: Vec<DVector<f64>>,
}

/// Materializes realization `r` of the experiment's dataset. Synthetic
/// sources reseed as `seed + r`; file sources carry exactly one realization.
pub fn load_realization(experiment: &Experiment, r: u64) -> Result<LoadedDataset> {
    match &experiment.dataset {
        DatasetSource::Files(dir) => {
            if r != 0 {
                bail!("a generated dataset directory holds a single realization");
            }
            let spec = read_manifest_spec(&dir.join("manifest.toml"))?;
            let a_true = read_matrix_csv(&dir.join("true_a.csv"))?;
            let trajectory = read_trajectory_csv(&dir.join("trajectory.csv"))?;
            let known = known_from_spec(&spec);
            Ok(LoadedDataset { spec, a_true, known, observations: trajectory.observations })
        }
        source => {
            let spec = source.spec(experiment.seed + r)?;
            let ds = make_dataset(&spec)?;
            Ok(LoadedDataset {
                spec,
                a_true: ds.a_true,
                known: KnownParams::from_model(&ds.model),
                observations: ds.trajectory.observations,
            })
        }
    }
}

fn known_from_spec(spec: &DatasetSpec) -> KnownParams {
    let n = spec.dim();
    KnownParams {
        h: DMatrix::identity(n, n),
        q: DMatrix::identity(n, n) * spec.sigma_q.powi(2),
        r: DMatrix::identity(n, n) * spec.sigma_r.powi(2),
        x0_mean: DVector::zeros(n),
        p0: DMatrix::identity(n, n) * spec.sigma_p.powi(2),
    }
}

fn graphem_config(experiment: &Experiment, gamma: f64) -> GraphemConfig {
    GraphemConfig {
        gamma,
        em_tolerance: experiment.em_tolerance,
        em_max_iters: experiment.em_max_iters,
        dr: experiment.dr.clone(),
        init: Initializer::Ar1 { alpha: experiment.init_alpha },
    }
}

fn mlem_config(experiment: &Experiment) -> MlemConfig {
    MlemConfig {
        em_tolerance: experiment.em_tolerance,
        em_max_iters: experiment.em_max_iters,
        init: Initializer::Ar1 { alpha: experiment.init_alpha },
    }
}

/// Runs one fit and scores it against the ground truth.
pub fn fit_and_score(
    experiment: &Experiment,
    data: &LoadedDataset,
    method: Method,
    gamma: f64,
) -> Result<ScoredFit> {
    let (a_hat, trace) = match method {
        Method::Graphem => graphem_fit(&data.observations, &data.known, &graphem_config(experiment, gamma))?,
        Method::Mlem => mlem_fit(&data.observations, &data.known, &mlem_config(experiment))?,
    };
    let record = EvalRecord {
        rmse: rmse(&a_hat, &data.a_true)?,
        edges: edge_scores(&a_hat, &data.a_true, experiment.threshold)?,
    };
    let nnz = count_edges(&a_hat, experiment.threshold);
    Ok(ScoredFit { a_hat, trace, record, nnz })
}

pub struct ScoredFit {
    pub a_hat: DMatrix<f64>,
    pub trace: FitTrace,
    pub record: EvalRecord,
    pub nnz: usize,
}

fn with_pool<T: Send>(jobs: usize, work: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building worker pool")?;
    Ok(pool.install(work))
}

/// `generate`: one synthetic dataset written as trajectory, ground truth,
/// and manifest.
pub fn run_generate(experiment: &Experiment) -> Result<()> {
    let spec = experiment.dataset.spec(experiment.seed)?;
    let ds = make_dataset(&spec)?;
    fs::create_dir_all(&experiment.out)
        .with_context(|| format!("creating {}", experiment.out.display()))?;

    write_trajectory_csv(&experiment.out.join("trajectory.csv"), &ds.trajectory)?;
    write_matrix_csv(&experiment.out.join("true_a.csv"), &ds.a_true)?;
    Manifest::new("generate", experiment, &spec).write(&experiment.out.join("manifest.toml"))?;

    println!(
        "generated dataset {} (n_x = {}, K = {}) into {}",
        experiment.dataset.label(),
        spec.dim(),
        spec.seq_length,
        experiment.out.display()
    );
    Ok(())
}

enum RealizationOutcome {
    Ok(Box<ScoredFit>),
    Failed(String),
}

/// `fit`: the chosen method on every realization, per-realization outputs
/// plus a scores table with aggregate rows. Exits nonzero only when every
/// realization fails.
pub fn run_fit(experiment: &Experiment) -> Result<()> {
    let gamma = match experiment.method {
        Method::Graphem => experiment.gamma.context("fit with method graphem needs --gamma")?,
        Method::Mlem => 0.0,
    };
    if matches!(experiment.dataset, DatasetSource::Files(_)) && experiment.realizations != 1 {
        bail!("--data-dir holds one realization; use --realizations 1");
    }

    fs::create_dir_all(&experiment.out)?;
    let realizations: Vec<u64> = (0..experiment.realizations).collect();
    let outcomes: Vec<RealizationOutcome> = with_pool(experiment.jobs, || {
        realizations
            .par_iter()
            .map(|&r| {
                let run = || -> Result<ScoredFit> {
                    let data = load_realization(experiment, r)?;
                    fit_and_score(experiment, &data, experiment.method, gamma)
                };
                match run() {
                    Ok(fit) => RealizationOutcome::Ok(Box::new(fit)),
                    Err(e) => RealizationOutcome::Failed(format!("{e:#}")),
                }
            })
            .collect()
    })?;

    // Per-realization artifacts.
    for (r, outcome) in outcomes.iter().enumerate() {
        if let RealizationOutcome::Ok(fit) = outcome {
            let dir = experiment.out.join(format!("r{r:03}"));
            fs::create_dir_all(&dir)?;
            write_matrix_csv(&dir.join("a_hat.csv"), &fit.a_hat)?;
            write_trace_csv(&dir.join("trace.csv"), &fit.trace)?;
        }
    }

    let label = experiment.dataset.label();
    let mut writer = csv::Writer::from_path(experiment.out.join("scores.csv"))?;
    write_score_header(&mut writer)?;
    let mut records = Vec::new();
    for (r, outcome) in outcomes.iter().enumerate() {
        match outcome {
            RealizationOutcome::Ok(fit) => {
                write_score_row(&mut writer, &label, experiment.method, gamma, &r.to_string(), "ok", Some(fit))?;
                records.push(fit.record);
            }
            RealizationOutcome::Failed(msg) => {
                eprintln!("realization {r} failed: {msg}");
                write_score_row(&mut writer, &label, experiment.method, gamma, &r.to_string(), &format!("failed: {msg}"), None)?;
            }
        }
    }
    if !records.is_empty() {
        let agg = aggregate(&records)?;
        write_aggregate_rows(&mut writer, &label, experiment.method, gamma, &agg)?;
    }
    writer.flush()?;

    let spec_for_manifest = match &experiment.dataset {
        DatasetSource::Files(dir) => read_manifest_spec(&dir.join("manifest.toml"))?,
        source => source.spec(experiment.seed)?,
    };
    Manifest::new("fit", experiment, &spec_for_manifest)
        .write(&experiment.out.join("manifest.toml"))?;

    if records.is_empty() {
        bail!("all {} realizations failed", experiment.realizations);
    }
    let agg = aggregate(&records)?;
    let method_desc = match experiment.method {
        Method::Graphem => format!("graphem (gamma {gamma:.4})"),
        Method::Mlem => "mlem".to_string(),
    };
    println!(
        "{method_desc} on {label}: mean rmse {:.4}, accuracy {:.4}, f1 {:.4} over {} realization(s)",
        agg.rmse.mean,
        agg.accuracy.mean,
        agg.f1.mean,
        records.len()
    );
    Ok(())
}

fn write_score_header(writer: &mut csv::Writer<fs::File>) -> Result<()> {
    writer.write_record([
        "dataset", "method", "gamma", "realization", "status", "rmse", "accuracy", "precision",
        "recall", "specificity", "f1", "nnz", "em_iters", "converged",
    ])?;
    Ok(())
}

fn write_score_row(
    writer: &mut csv::Writer<fs::File>,
    dataset: &str,
    method: Method,
    gamma: f64,
    realization: &str,
    status: &str,
    fit: Option<&ScoredFit>,
) -> Result<()> {
    let mut row = vec![
        dataset.to_string(),
        method.name().to_string(),
        format_float(gamma),
        realization.to_string(),
        status.to_string(),
    ];
    match fit {
        Some(fit) => {
            let e = &fit.record.edges;
            row.extend([
                format_float(fit.record.rmse),
                format_float(e.accuracy),
                format_float(e.precision),
                format_float(e.recall),
                format_float(e.specificity),
                format_float(e.f1),
                fit.nnz.to_string(),
                (fit.trace.len() - 1).to_string(),
                fit.trace.converged.to_string(),
            ]);
        }
        None => row.extend(std::iter::repeat_n(String::new(), 9)),
    }
    writer.write_record(&row)?;
    Ok(())
}

fn write_aggregate_rows(
    writer: &mut csv::Writer<fs::File>,
    dataset: &str,
    method: Method,
    gamma: f64,
    agg: &graphem::metrics::AggregateReport,
) -> Result<()> {
    let picks: [(&str, fn(&graphem::metrics::MetricSummary) -> f64); 2] =
        [("mean", |s| s.mean), ("std", |s| s.std)];
    for (tag, pick) in picks {
        writer.write_record(&[
            dataset.to_string(),
            method.name().to_string(),
            format_float(gamma),
            tag.to_string(),
            "aggregate".to_string(),
            format_float(pick(&agg.rmse)),
            format_float(pick(&agg.accuracy)),
            format_float(pick(&agg.precision)),
            format_float(pick(&agg.recall)),
            format_float(pick(&agg.specificity)),
            format_float(pick(&agg.f1)),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    Ok(())
}

/// One row of the grid-search table.
pub struct GammaRow {
    pub gamma: f64,
    pub record: EvalRecord,
    pub nnz: usize,
    pub em_iters: usize,
    pub converged: bool,
}

/// Resolves the grid: explicit from config, or fractions of `gamma_max`
/// computed from the first E-step at the default initializer.
pub fn resolve_gamma_grid(experiment: &Experiment, data: &LoadedDataset) -> Result<Vec<f64>> {
    let mut grid = match &experiment.gamma_grid {
        Some(grid) => grid.clone(),
        None => {
            let a0 = Initializer::Ar1 { alpha: experiment.init_alpha }.build(data.known.n_x())?;
            let model = data.known.with_transition(a0);
            let pass = kalman_filter(&model, &data.observations)?;
            let smoothed = rts_smoother(&model, &pass)?;
            let stats = compute_estep_stats(&smoothed, data.observations.len())?;
            default_gamma_grid(gamma_max(&stats, &data.known.q)?)
        }
    };
    if grid.is_empty() {
        bail!("gamma grid is empty");
    }
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite gamma values"));
    grid.dedup();
    Ok(grid)
}

/// `gamma-search`: fits every grid point on one realization and returns the
/// accuracy-maximizing weight (ties broken toward the smallest).
pub fn run_gamma_search(experiment: &Experiment, quiet: bool) -> Result<(f64, Vec<GammaRow>)> {
    if experiment.method == Method::Mlem {
        bail!("gamma-search applies to method graphem (mlem has no prior weight)");
    }
    let data = load_realization(experiment, 0)?;
    let grid = resolve_gamma_grid(experiment, &data)?;

    let rows: Vec<GammaRow> = with_pool(experiment.jobs, || {
        grid.par_iter()
            .map(|&gamma| {
                let fit = fit_and_score(experiment, &data, Method::Graphem, gamma)?;
                Ok(GammaRow {
                    gamma,
                    record: fit.record,
                    nnz: fit.nnz,
                    em_iters: fit.trace.len() - 1,
                    converged: fit.trace.converged,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut best = &rows[0];
    for row in &rows[1..] {
        if row.record.edges.accuracy > best.record.edges.accuracy {
            best = row;
        }
    }
    let best_gamma = best.gamma;

    if !quiet {
        fs::create_dir_all(&experiment.out)?;
        let mut writer = csv::Writer::from_path(experiment.out.join("gamma_search.csv"))?;
        writer.write_record([
            "gamma", "accuracy", "precision", "recall", "specificity", "f1", "rmse", "nnz",
            "em_iters", "converged",
        ])?;
        for row in &rows {
            let e = &row.record.edges;
            writer.write_record(&[
                format_float(row.gamma),
                format_float(e.accuracy),
                format_float(e.precision),
                format_float(e.recall),
                format_float(e.specificity),
                format_float(e.f1),
                format_float(row.record.rmse),
                row.nnz.to_string(),
                row.em_iters.to_string(),
                row.converged.to_string(),
            ])?;
        }
        writer.flush()?;
        Manifest::new("gamma-search", experiment, &data.spec)
            .write(&experiment.out.join("manifest.toml"))?;
        println!("best gamma: {best_gamma} (accuracy {:.4})", best.record.edges.accuracy);
    }
    Ok((best_gamma, rows))
}

/// One line of the benchmark report.
pub struct BenchRow {
    pub dataset: String,
    pub method: Method,
    pub gamma: f64,
    pub agg: graphem::metrics::AggregateReport,
}

/// `bench`: for each requested preset, tune gamma (unless given), run both
/// methods over all realizations, and emit the aggregate table as CSV and
/// aligned text.
pub fn run_bench(experiment: &Experiment, presets: &[Preset]) -> Result<Vec<BenchRow>> {
    fs::create_dir_all(&experiment.out)?;
    let mut rows = Vec::new();

    for &preset in presets {
        let per_dataset = Experiment {
            dataset: DatasetSource::Preset(preset),
            ..experiment.clone()
        };
        let gamma = match experiment.gamma {
            Some(g) => g,
            None => run_gamma_search(&per_dataset, true)?.0,
        };

        let realizations: Vec<u64> = (0..per_dataset.realizations).collect();
        for method in [Method::Graphem, Method::Mlem] {
            let records: Vec<EvalRecord> = with_pool(per_dataset.jobs, || {
                realizations
                    .par_iter()
                    .map(|&r| {
                        let data = load_realization(&per_dataset, r)?;
                        let fit = fit_and_score(&per_dataset, &data, method, gamma)?;
                        Ok(fit.record)
                    })
                    .collect::<Result<Vec<_>>>()
            })??;
            rows.push(BenchRow {
                dataset: preset.name().to_string(),
                method,
                gamma: if method == Method::Graphem { gamma } else { 0.0 },
                agg: aggregate(&records)?,
            });
        }
    }

    write_bench_csv(&experiment.out.join("bench.csv"), &rows)?;
    let table = render_bench_table(&rows);
    fs::write(experiment.out.join("bench.txt"), &table)?;
    print!("{table}");

    let bench_manifest = BenchManifest::new(experiment, presets);
    let text = toml::to_string_pretty(&bench_manifest)?;
    fs::write(experiment.out.join("manifest.toml"), text)?;
    Ok(rows)
}

#[derive(serde::Serialize)]
struct BenchManifest {
    command: String,
    presets: Vec<String>,
    realizations: u64,
    seed: u64,
    jobs: usize,
    threshold: f64,
    gamma: Option<f64>,
    gamma_grid: Option<Vec<f64>>,
    em: crate::config::ManifestEm,
    dr: crate::config::ManifestDr,
}

impl BenchManifest {
    fn new(experiment: &Experiment, presets: &[Preset]) -> Self {
        BenchManifest {
            command: "bench".into(),
            presets: presets.iter().map(|p| p.name().to_string()).collect(),
            realizations: experiment.realizations,
            seed: experiment.seed,
            jobs: experiment.jobs,
            threshold: experiment.threshold,
            gamma: experiment.gamma,
            gamma_grid: experiment.gamma_grid.clone(),
            em: crate::config::ManifestEm {
                tolerance: experiment.em_tolerance,
                max_iters: experiment.em_max_iters,
                init_alpha: experiment.init_alpha,
            },
            dr: crate::config::ManifestDr {
                theta: experiment.dr.theta,
                tolerance: experiment.dr.tolerance,
                max_iters: experiment.dr.max_iters,
            },
        }
    }
}

fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["dataset".to_string(), "method".to_string(), "gamma".to_string()];
    for metric in ["rmse", "accuracy", "precision", "recall", "specificity", "f1"] {
        header.push(format!("{metric}_mean"));
        header.push(format!("{metric}_std"));
    }
    writer.write_record(&header)?;
    for row in rows {
        let mut record = vec![
            row.dataset.clone(),
            row.method.name().to_string(),
            format_float(row.gamma),
        ];
        for summary in [
            row.agg.rmse,
            row.agg.accuracy,
            row.agg.precision,
            row.agg.recall,
            row.agg.specificity,
            row.agg.f1,
        ] {
            record.push(format_float(summary.mean));
            record.push(format_float(summary.std));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

fn render_bench_table(rows: &[BenchRow]) -> String {
    let mut out = String::new();
    let mut push = |line: String| {
        out.push_str(&line);
        out.push('\n');
    };
    push(format!(
        "{:<8} {:<8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "dataset", "method", "RMSE", "accur.", "prec.", "recall", "spec.", "F1"
    ));
    for row in rows {
        push(format!(
            "{:<8} {:<8} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            row.dataset,
            row.method.name(),
            row.agg.rmse.mean,
            row.agg.accuracy.mean,
            row.agg.precision.mean,
            row.agg.recall.mean,
            row.agg.specificity.mean,
            row.agg.f1.mean,
        ));
    }
    out
}

/// `export-graph`: matrix CSV to DOT.
pub fn run_export_graph(input: &Path, output: &Path, threshold: f64) -> Result<()> {
    let matrix = read_matrix_csv(input)?;
    let dot = crate::dot::matrix_to_dot(&matrix, threshold)?;
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(output)?;
    file.write_all(dot.as_bytes())?;
    println!("wrote {}", output.display());
    Ok(())
}
