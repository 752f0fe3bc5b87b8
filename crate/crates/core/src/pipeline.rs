//! Ground truth → teacher → tempered teacher → student chain on Gaussian
//! mixtures, plus the component mapping and difficulty measure.

use std::collections::BTreeSet;

use log::warn;

use crate::error::{Error, Result};
use crate::gmm::{
    default_ground_truth, fit_em, temper_weights, Dataset, FitConfig, GaussianMixture,
    TemperedWeights,
};
use crate::math::argmax;
use crate::rng::derive_seed;

const STAGE_SAMPLE_TRUTH: u64 = 1;
const STAGE_FIT_TEACHER: u64 = 2;
const STAGE_SAMPLE_TEACHER: u64 = 3;
const STAGE_FIT_DISTILLED: u64 = 4;
const STAGE_FIT_DIRECT: u64 = 5;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub ground_truth: GaussianMixture,
    pub n_teacher_train: usize,
    pub k_teacher: usize,
    pub n_student_train: usize,
    pub k_student: usize,
    pub beta: f64,
    /// EM settings shared by every fit; `fit.seed` is the pipeline's master seed.
    pub fit: FitConfig,
    /// A teacher component is active when its tempered weight is ≥ 1 − epsilon.
    pub epsilon: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            ground_truth: default_ground_truth(),
            n_teacher_train: 10_000,
            k_teacher: 4,
            n_student_train: 10_000,
            k_student: 1,
            beta: 100.0,
            fit: FitConfig::default(),
            epsilon: 0.1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        if self.n_teacher_train < 1 || self.n_student_train < 1 {
            return Err(Error::invalid("sample counts must be ≥ 1"));
        }
        if self.k_teacher < 1 || self.k_student < 1 {
            return Err(Error::invalid("component counts must be ≥ 1"));
        }
        if !(self.beta >= 1.0) {
            return Err(Error::invalid(format!(
                "beta must be ≥ 1, got {}",
                self.beta
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        let k_truth = self.ground_truth.n_components();
        if self.k_student > self.k_teacher || self.k_teacher > k_truth {
            warn!(
                "expected k_student ≤ k_teacher ≤ ground-truth components, got {} / {} / {k_truth}",
                self.k_student, self.k_teacher
            );
        }
        Ok(())
    }
}

/// Assignment of each ground-truth component to one teacher component,
/// stored as the preimage of every teacher component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentMapping {
    pub assignment: Vec<BTreeSet<usize>>,
}

impl ComponentMapping {
    /// Ground-truth indices covered by teacher component `k`.
    pub fn covered_by(&self, k: usize) -> &BTreeSet<usize> {
        &self.assignment[k]
    }

    pub fn n_teacher(&self) -> usize {
        self.assignment.len()
    }
}

/// Assigns ground-truth component `k` to
/// `argmax_{k'} α'_{k'} N(μ_k; μ'_{k'}, Σ'_{k'})` (lowest index on ties).
pub fn component_mapping(
    ground: &GaussianMixture,
    teacher: &GaussianMixture,
) -> Result<ComponentMapping> {
    if ground.dim() != teacher.dim() {
        return Err(Error::DimensionMismatch {
            expected: ground.dim(),
            found: teacher.dim(),
        });
    }
    let mut assignment = vec![BTreeSet::new(); teacher.n_components()];
    let mut joint = vec![0.0; teacher.n_components()];
    for (k, comp) in ground.components().iter().enumerate() {
        teacher.component_log_joint(comp.mean().as_slice(), &mut joint);
        assignment[argmax(&joint)].insert(k);
    }
    Ok(ComponentMapping { assignment })
}

/// `{ k : w[k] ≥ 1 − epsilon }`.
pub fn active_components(w: &[f64], epsilon: f64) -> Vec<usize> {
    w.iter()
        .enumerate()
        .filter(|(_, &v)| v >= 1.0 - epsilon)
        .map(|(k, _)| k)
        .collect()
}

/// `k_student − |⋃_{active k'} σ(k')|`. Negative when the active teacher
/// components cover more ground-truth modes than the student has components.
pub fn difficulty(
    k_student: usize,
    w_tempered: &[f64],
    sigma: &ComponentMapping,
    epsilon: f64,
) -> i64 {
    let covered: BTreeSet<usize> = active_components(w_tempered, epsilon)
        .into_iter()
        .flat_map(|k| sigma.covered_by(k).iter().copied())
        .collect();
    k_student as i64 - covered.len() as i64
}

/// Stages that do not depend on `beta`: ground-truth sample, teacher fit,
/// direct student fit and the component mapping.
#[derive(Debug, Clone)]
pub struct TeacherStage {
    pub data: Dataset,
    pub teacher: GaussianMixture,
    pub student_direct: GaussianMixture,
    pub sigma: ComponentMapping,
}

pub fn fit_teacher_stage(cfg: &PipelineConfig, seed: u64) -> Result<TeacherStage> {
    cfg.validate()?;
    let data = cfg
        .ground_truth
        .sample(cfg.n_teacher_train, derive_seed(seed, STAGE_SAMPLE_TRUTH))
        .map_err(Error::in_stage("ground-truth sampling"))?;
    let teacher = fit_em(
        &data,
        cfg.k_teacher,
        &cfg.fit.with_seed(derive_seed(seed, STAGE_FIT_TEACHER)),
    )
    .map_err(Error::in_stage("teacher fit"))?;
    let student_direct = fit_em(
        &data,
        cfg.k_student,
        &cfg.fit.with_seed(derive_seed(seed, STAGE_FIT_DIRECT)),
    )
    .map_err(Error::in_stage("direct student fit"))?;
    let sigma = component_mapping(&cfg.ground_truth, &teacher)
        .map_err(Error::in_stage("component mapping"))?;
    Ok(TeacherStage {
        data,
        teacher,
        student_direct,
        sigma,
    })
}

/// Stages that depend on `beta`.
#[derive(Debug, Clone)]
pub struct DistillStage {
    pub tempered: TemperedWeights,
    pub tempered_teacher: GaussianMixture,
    pub student_distilled: GaussianMixture,
    pub difficulty: i64,
}

pub fn distill_stage(
    cfg: &PipelineConfig,
    stage: &TeacherStage,
    beta: f64,
    seed: u64,
) -> Result<DistillStage> {
    let tempered =
        temper_weights(stage.teacher.weights(), beta).map_err(Error::in_stage("tempering"))?;
    let tempered_teacher = stage
        .teacher
        .with_weights(tempered.tempered.clone())
        .map_err(Error::in_stage("tempering"))?;
    let distill_data = tempered_teacher
        .sample(cfg.n_student_train, derive_seed(seed, STAGE_SAMPLE_TEACHER))
        .map_err(Error::in_stage("teacher sampling"))?;
    let student_distilled = fit_em(
        &distill_data,
        cfg.k_student,
        &cfg.fit.with_seed(derive_seed(seed, STAGE_FIT_DISTILLED)),
    )
    .map_err(Error::in_stage("distilled student fit"))?;
    let difficulty = difficulty(cfg.k_student, &tempered.tempered, &stage.sigma, cfg.epsilon);
    Ok(DistillStage {
        tempered,
        tempered_teacher,
        student_distilled,
        difficulty,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub teacher: GaussianMixture,
    pub tempered_teacher: GaussianMixture,
    pub student_distilled: GaussianMixture,
    pub student_direct: GaussianMixture,
    pub sigma: ComponentMapping,
    pub difficulty: i64,
}

/// Runs the whole chain with every stage seeded from `cfg.fit.seed`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineResult> {
    let seed = cfg.fit.seed;
    let teacher = fit_teacher_stage(cfg, seed)?;
    let distilled = distill_stage(cfg, &teacher, cfg.beta, seed)?;
    Ok(PipelineResult {
        teacher: teacher.teacher,
        tempered_teacher: distilled.tempered_teacher,
        student_distilled: distilled.student_distilled,
        student_direct: teacher.student_direct,
        sigma: teacher.sigma,
        difficulty: distilled.difficulty,
    })
}
