//! Sweep execution.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{error, info};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gmm::weight_entropy;
use crate::metrics::{density_grid, precision_mc_with_floor, recall_mc_with_floor, DensityGrid};
use crate::pipeline::{distill_stage, fit_teacher_stage, PipelineConfig, TeacherStage};
use crate::rng::derive_seed;
use crate::token::{
    fit_lowrank_em, fit_markov, make_ground_truth, mean_row_entropy, sample_sequences,
    temper_markov, token_precision, token_recall,
};

use super::config::{ExperimentConfig, ExperimentKind};
use super::output::{emit_csv, sort_rows, SweepResultRow, NO_DIFFICULTY};

const DOMAIN_MIXTURE: u64 = 1;
const DOMAIN_TOKEN: u64 = 2;
const CELL_STREAM: u64 = 0xce11;

// Streams under a seed root (shared by every knob of that seed).
const ROOT_RECALL_EVAL: u64 = 11;
const ROOT_DIRECT_PRECISION_EVAL: u64 = 12;
const ROOT_TOKEN_TRUTH: u64 = 21;
const ROOT_TOKEN_TRAIN: u64 = 22;
const ROOT_TOKEN_STUDENT_INIT: u64 = 23;

// Streams under a cell seed.
const CELL_PRECISION_EVAL: u64 = 10;
const CELL_TOKEN_DISTILL: u64 = 20;

fn domain(kind: ExperimentKind) -> u64 {
    match kind {
        ExperimentKind::TokenSweep => DOMAIN_TOKEN,
        _ => DOMAIN_MIXTURE,
    }
}

/// Seed shared by every knob value of one replicate. Drives the ground truth,
/// the teacher, the direct student and the recall evaluation sample.
pub fn seed_root(master_seed: u64, kind: ExperimentKind, seed_index: usize) -> u64 {
    derive_seed(derive_seed(master_seed, domain(kind)), seed_index as u64)
}

/// Seed for the knob-dependent stages of one `(seed, knob)` cell.
pub fn cell_seed(root: u64, knob_index: usize) -> u64 {
    derive_seed(derive_seed(root, CELL_STREAM), knob_index as u64)
}

/// Everything a run produced before it is written out.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub rows: Vec<SweepResultRow>,
    /// Named density tables (`density-export` only).
    pub grids: Vec<(String, DensityGrid)>,
    pub failures: Vec<String>,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

type CellResult = std::result::Result<SweepResultRow, (SweepResultRow, String)>;

fn cell_or_error(name: &str, seed: usize, knob: f64, result: Result<SweepResultRow>) -> CellResult {
    result.map_err(|e| {
        let msg = format!("{name} seed {seed} knob {knob}: {e}");
        error!("{msg}");
        (SweepResultRow::failed(name, seed, knob), msg)
    })
}

/// Runs every cell of `cfg` on a pool of `jobs` threads (0 picks the core
/// count). Cell failures become error rows; only setup problems return `Err`.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<RunOutcome> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start thread pool: {e}")))?;
    info!(
        "running {} with {} seed(s) on {} thread(s)",
        cfg.kind,
        cfg.seeds,
        pool.current_num_threads()
    );
    pool.install(|| match cfg.kind {
        ExperimentKind::GmmRepro => mixture_sweep(cfg, &[cfg.pipeline.beta], true),
        ExperimentKind::BetaSweep => mixture_sweep(cfg, &cfg.beta_list, false),
        ExperimentKind::TokenSweep => token_sweep(cfg),
        ExperimentKind::DensityExport => density_export(cfg),
    })
}

fn collect(cells: Vec<CellResult>) -> RunOutcome {
    let mut out = RunOutcome::default();
    for cell in cells {
        match cell {
            Ok(row) => out.rows.push(row),
            Err((row, msg)) => {
                out.rows.push(row);
                out.failures.push(msg);
            }
        }
    }
    sort_rows(&mut out.rows);
    out
}

fn mixture_sweep(cfg: &ExperimentConfig, knobs: &[f64], with_direct: bool) -> Result<RunOutcome> {
    let pipe = cfg.pipeline.to_pipeline_config()?;
    let name = cfg.kind.name();
    let direct_name = format!("{name}/direct");
    let distilled_name = if with_direct {
        format!("{name}/distilled")
    } else {
        name.to_string()
    };
    let cells: Vec<CellResult> = (0..cfg.seeds)
        .into_par_iter()
        .flat_map_iter(|s| {
            let root = seed_root(cfg.master_seed, cfg.kind, s);
            let stage = fit_teacher_stage(&pipe, root);
            let mut cells: Vec<CellResult> = knobs
                .par_iter()
                .enumerate()
                .map(|(k, &beta)| {
                    let result = stage
                        .as_ref()
                        .map_err(|e| Error::invalid(e.to_string()))
                        .and_then(|st| distilled_row(cfg, &pipe, st, &distilled_name, s, k, beta));
                    cell_or_error(&distilled_name, s, beta, result)
                })
                .collect();
            if with_direct {
                let result = stage
                    .as_ref()
                    .map_err(|e| Error::invalid(e.to_string()))
                    .and_then(|st| direct_row(cfg, &pipe, st, &direct_name, s, knobs[0]));
                cells.push(cell_or_error(&direct_name, s, knobs[0], result));
            }
            cells
        })
        .collect();
    Ok(collect(cells))
}

fn distilled_row(
    cfg: &ExperimentConfig,
    pipe: &PipelineConfig,
    stage: &TeacherStage,
    name: &str,
    s: usize,
    k: usize,
    beta: f64,
) -> Result<SweepResultRow> {
    let root = seed_root(cfg.master_seed, cfg.kind, s);
    let cell = cell_seed(root, k);
    let distilled = distill_stage(pipe, stage, beta, cell)?;
    let (n, floor) = (cfg.metrics.n_samples, cfg.metrics.log_floor);
    let student = &distilled.student_distilled;
    let precision = precision_mc_with_floor(
        student,
        &pipe.ground_truth,
        n,
        derive_seed(cell, CELL_PRECISION_EVAL),
        floor,
    )?;
    let recall = recall_mc_with_floor(
        student,
        &pipe.ground_truth,
        n,
        derive_seed(root, ROOT_RECALL_EVAL),
        floor,
    )?;
    Ok(SweepResultRow {
        experiment: name.to_string(),
        seed: s,
        knob: beta,
        precision_mean: precision.mean,
        precision_se: precision.std_error,
        recall_mean: recall.mean,
        recall_se: recall.std_error,
        teacher_weight_entropy: weight_entropy(&distilled.tempered.tempered),
        difficulty: distilled.difficulty,
        clamp_count: precision.clamped + recall.clamped,
    })
}

fn direct_row(
    cfg: &ExperimentConfig,
    pipe: &PipelineConfig,
    stage: &TeacherStage,
    name: &str,
    s: usize,
    knob: f64,
) -> Result<SweepResultRow> {
    let root = seed_root(cfg.master_seed, cfg.kind, s);
    let (n, floor) = (cfg.metrics.n_samples, cfg.metrics.log_floor);
    let student = &stage.student_direct;
    let precision = precision_mc_with_floor(
        student,
        &pipe.ground_truth,
        n,
        derive_seed(root, ROOT_DIRECT_PRECISION_EVAL),
        floor,
    )?;
    let recall = recall_mc_with_floor(
        student,
        &pipe.ground_truth,
        n,
        derive_seed(root, ROOT_RECALL_EVAL),
        floor,
    )?;
    Ok(SweepResultRow {
        experiment: name.to_string(),
        seed: s,
        knob,
        precision_mean: precision.mean,
        precision_se: precision.std_error,
        recall_mean: recall.mean,
        recall_se: recall.std_error,
        teacher_weight_entropy: weight_entropy(stage.teacher.weights()),
        difficulty: NO_DIFFICULTY,
        clamp_count: precision.clamped + recall.clamped,
    })
}

fn token_sweep(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let name = cfg.kind.name();
    let t = &cfg.token;
    let cells: Vec<CellResult> = (0..cfg.seeds)
        .into_par_iter()
        .flat_map_iter(|s| {
            let root = seed_root(cfg.master_seed, cfg.kind, s);
            let setup = make_ground_truth(
                t.vocab_size,
                t.concentration,
                derive_seed(root, ROOT_TOKEN_TRUTH),
            )
            .map_err(Error::in_stage("ground truth"))
            .and_then(|truth| {
                let data = sample_sequences(
                    &truth,
                    t.n_train,
                    t.seq_len,
                    derive_seed(root, ROOT_TOKEN_TRAIN),
                )
                .map_err(Error::in_stage("ground-truth sampling"))?;
                let teacher = fit_markov(&data, t.vocab_size, t.fit.smoothing_delta)
                    .map_err(Error::in_stage("teacher fit"))?;
                Ok((truth, teacher))
            });
            // Every temperature starts the student from the same factors.
            let fit_cfg = t
                .fit
                .clone()
                .with_seed(derive_seed(root, ROOT_TOKEN_STUDENT_INIT));
            cfg.tau_list
                .par_iter()
                .enumerate()
                .map(|(k, &tau)| {
                    let result = setup
                        .as_ref()
                        .map_err(|e| Error::invalid(e.to_string()))
                        .and_then(|(truth, teacher)| {
                            let cell = cell_seed(root, k);
                            let tempered = temper_markov(teacher, tau)
                                .map_err(Error::in_stage("tempering"))?;
                            let distill_data = sample_sequences(
                                &tempered,
                                t.n_train,
                                t.seq_len,
                                derive_seed(cell, CELL_TOKEN_DISTILL),
                            )
                            .map_err(Error::in_stage("teacher sampling"))?;
                            let student = fit_lowrank_em(&distill_data, t.vocab_size, &fit_cfg)
                                .map_err(Error::in_stage("student fit"))?;
                            let precision = token_precision(
                                &student,
                                truth,
                                t.n_eval,
                                t.seq_len,
                                derive_seed(cell, CELL_PRECISION_EVAL),
                            )?;
                            let recall = token_recall(
                                &student,
                                truth,
                                t.n_eval,
                                t.seq_len,
                                derive_seed(root, ROOT_RECALL_EVAL),
                            )?;
                            Ok(SweepResultRow {
                                experiment: name.to_string(),
                                seed: s,
                                knob: tau,
                                precision_mean: precision.mean,
                                precision_se: precision.std_error,
                                recall_mean: recall.mean,
                                recall_se: recall.std_error,
                                teacher_weight_entropy: mean_row_entropy(&tempered),
                                difficulty: NO_DIFFICULTY,
                                clamp_count: precision.clamped + recall.clamped,
                            })
                        });
                    cell_or_error(name, s, tau, result)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(collect(cells))
}

fn density_export(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let pipe = cfg.pipeline.to_pipeline_config()?;
    let (xr, yr) = (cfg.density.x_range, cfg.density.y_range);
    let mut out = RunOutcome::default();
    out.grids.push((
        "ground_truth".into(),
        density_grid(&pipe.ground_truth, xr, yr)?,
    ));
    let per_seed: Vec<Result<Vec<(String, DensityGrid)>>> = (0..cfg.seeds)
        .into_par_iter()
        .map(|s| {
            let root = seed_root(cfg.master_seed, cfg.kind, s);
            let stage = fit_teacher_stage(&pipe, root)?;
            let distilled = distill_stage(&pipe, &stage, pipe.beta, cell_seed(root, 0))?;
            let models = [
                ("teacher", &stage.teacher),
                ("tempered_teacher", &distilled.tempered_teacher),
                ("student_direct", &stage.student_direct),
                ("student_distilled", &distilled.student_distilled),
            ];
            models
                .into_iter()
                .map(|(model, m)| Ok((format!("seed{s}_{model}"), density_grid(m, xr, yr)?)))
                .collect()
        })
        .collect();
    for (s, grids) in per_seed.into_iter().enumerate() {
        match grids {
            Ok(g) => out.grids.extend(g),
            Err(e) => {
                let msg = format!("density-export seed {s}: {e}");
                error!("{msg}");
                out.failures.push(msg);
            }
        }
    }
    Ok(out)
}

/// Writes the outcome into `dir` (`<kind>.csv` plus any density tables) and
/// returns the paths written.
pub fn write_outputs(
    cfg: &ExperimentConfig,
    outcome: &RunOutcome,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut written = Vec::new();
    if !outcome.rows.is_empty() {
        let path = dir.join(format!("{}.csv", cfg.kind.name()));
        emit_csv(&outcome.rows, &path)?;
        written.push(path);
    }
    for (name, grid) in &outcome.grids {
        let path = dir.join(format!("{name}.txt"));
        grid.write_table(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// Seed-averaged metrics for one `(experiment, knob)` group.
#[derive(Debug, Clone, PartialEq)]
pub struct KnobSummary {
    pub experiment: String,
    pub knob: f64,
    pub n_seeds: usize,
    pub precision_mean: f64,
    /// `sqrt(Σ se²) / n`: Monte-Carlo error of the seed average.
    pub precision_se: f64,
    /// Sample standard deviation over seeds divided by `sqrt(n)`; NaN for a
    /// single seed.
    pub precision_seed_se: f64,
    pub recall_mean: f64,
    pub recall_se: f64,
    pub recall_seed_se: f64,
}

/// Averages successful rows over seeds, ordered by experiment then knob.
pub fn summarize(rows: &[SweepResultRow]) -> Vec<KnobSummary> {
    let mut keys: Vec<(&str, f64)> = rows
        .iter()
        .filter(|r| !r.is_failed())
        .map(|r| (r.experiment.as_str(), r.knob))
        .collect();
    keys.sort_by(|a, b| a.0.cmp(b.0).then(a.1.total_cmp(&b.1)));
    keys.dedup();
    keys.into_iter()
        .map(|(experiment, knob)| {
            let group: Vec<&SweepResultRow> = rows
                .iter()
                .filter(|r| !r.is_failed() && r.experiment == experiment && r.knob == knob)
                .collect();
            let n = group.len() as f64;
            let mean = |f: fn(&SweepResultRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
            let se = |f: fn(&SweepResultRow) -> f64| {
                group.iter().map(|r| f(r).powi(2)).sum::<f64>().sqrt() / n
            };
            let seed_se = |f: fn(&SweepResultRow) -> f64| {
                let m = mean(f);
                (group.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            };
            KnobSummary {
                experiment: experiment.to_string(),
                knob,
                n_seeds: group.len(),
                precision_mean: mean(|r| r.precision_mean),
                precision_se: se(|r| r.precision_se),
                precision_seed_se: if group.len() > 1 {
                    seed_se(|r| r.precision_mean)
                } else {
                    f64::NAN
                },
                recall_mean: mean(|r| r.recall_mean),
                recall_se: se(|r| r.recall_se),
                recall_seed_se: if group.len() > 1 {
                    seed_se(|r| r.recall_mean)
                } else {
                    f64::NAN
                },
            }
        })
        .collect()
}

/// Human-readable table of [`summarize`].
pub fn summary_table(rows: &[SweepResultRow]) -> String {
    let mut out = format!(
        "{:<22} {:>10} {:>6} {:>22} {:>22}\n",
        "experiment", "knob", "seeds", "precision (se)", "recall (se)"
    );
    for s in summarize(rows) {
        writeln!(
            out,
            "{:<22} {:>10.4} {:>6} {:>12.4} ({:>7.4}) {:>12.4} ({:>7.4})",
            s.experiment,
            s.knob,
            s.n_seeds,
            s.precision_mean,
            s.precision_se,
            s.recall_mean,
            s.recall_se
        )
        .unwrap();
    }
    out
}
