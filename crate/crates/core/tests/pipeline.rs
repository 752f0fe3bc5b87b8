mod common;

use common::*;
use distill_lab::gmm::{default_ground_truth, FitConfig};
use distill_lab::metrics::{precision_mc, recall_mc};
use distill_lab::pipeline::{component_mapping, run_pipeline, PipelineConfig};
use proptest::prelude::*;

fn config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        fit: FitConfig::default().with_seed(seed),
        ..PipelineConfig::default()
    }
}

#[test]
fn tempering_changes_only_the_weights() {
    let r = run_pipeline(&config(1)).unwrap();
    for (a, b) in r
        .teacher
        .components()
        .iter()
        .zip(r.tempered_teacher.components())
    {
        assert_eq!(a, b);
    }
    assert_ne!(r.teacher.weights(), r.tempered_teacher.weights());
}

#[test]
fn pipeline_is_deterministic() {
    let (a, b) = (
        run_pipeline(&config(9)).unwrap(),
        run_pipeline(&config(9)).unwrap(),
    );
    assert_eq!(a.student_distilled, b.student_distilled);
    assert_eq!(a.student_direct, b.student_direct);
    assert_eq!(a.sigma, b.sigma);
    assert_ne!(a.teacher, run_pipeline(&config(10)).unwrap().teacher);
}

#[test]
fn direct_single_gaussian_sits_near_the_global_mean() {
    let truth = default_ground_truth();
    let global: Vec<f64> = (0..2)
        .map(|i| {
            truth
                .components()
                .iter()
                .zip(truth.weights())
                .map(|(c, w)| w * c.mean()[i])
                .sum()
        })
        .collect();
    let r = run_pipeline(&config(2)).unwrap();
    let mean = r.student_direct.components()[0].mean();
    assert!(
        (mean[0] - global[0]).abs() < 0.15 && (mean[1] - global[1]).abs() < 0.1,
        "{mean:?} vs {global:?}"
    );
}

#[test]
fn single_component_teacher_is_the_sample_mean() {
    let cfg = PipelineConfig {
        k_teacher: 1,
        ..config(3)
    };
    let r = run_pipeline(&cfg).unwrap();
    // the ground-truth sample is the first stage, so redraw it the same way
    let data = cfg
        .ground_truth
        .sample(cfg.n_teacher_train, distill_lab::rng::derive_seed(3, 1))
        .unwrap();
    let mean = data.mean();
    let got = r.teacher.components()[0].mean();
    assert!((got - &mean).amax() < 1e-10, "{got:?} vs {mean:?}");
    assert_eq!(r.sigma.covered_by(0).len(), 8);
}

#[test]
fn untempered_full_capacity_students_agree() {
    let cfg = PipelineConfig {
        k_teacher: 8,
        k_student: 8,
        beta: 1.0,
        n_teacher_train: 50_000,
        n_student_train: 50_000,
        ..config(4)
    };
    let r = run_pipeline(&cfg).unwrap();
    let truth = &cfg.ground_truth;
    let n = 100_000;
    let pd = precision_mc(&r.student_distilled, truth, n, 11).unwrap();
    let pr = precision_mc(&r.student_direct, truth, n, 12).unwrap();
    let rd = recall_mc(&r.student_distilled, truth, n, 13).unwrap();
    let rr = recall_mc(&r.student_direct, truth, n, 13).unwrap();
    assert!(
        (pd.mean - pr.mean).abs() <= 3.0 * pd.combined_std_error(&pr),
        "{pd:?} {pr:?}"
    );
    assert!(
        (rd.mean - rr.mean).abs() <= 3.0 * rd.combined_std_error(&rr),
        "{rd:?} {rr:?}"
    );
}

#[test]
fn estimates_are_consistent_across_sample_sizes() {
    let truth = default_ground_truth();
    let r = run_pipeline(&config(5)).unwrap();
    let student = &r.student_direct;
    let small = precision_mc(student, &truth, 50_000, 1).unwrap();
    let large = precision_mc(student, &truth, 200_000, 2).unwrap();
    assert!((small.mean - large.mean).abs() <= 3.0 * small.combined_std_error(&large));
    let ratio = small.std_error / large.std_error;
    assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
    let small = recall_mc(student, &truth, 50_000, 3).unwrap();
    let large = recall_mc(student, &truth, 200_000, 4).unwrap();
    assert!((small.mean - large.mean).abs() <= 3.0 * small.combined_std_error(&large));
    let ratio = small.std_error / large.std_error;
    assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mapping_partitions_the_ground_truth(seed in 0u64..10_000, k_truth in 1usize..8, k_teacher in 1usize..6, d in 1usize..4) {
        let mut r = rng(seed);
        let truth = random_mixture(&mut r, d, k_truth);
        let teacher = random_mixture(&mut r, d, k_teacher);
        let sigma = component_mapping(&truth, &teacher).unwrap();
        prop_assert_eq!(sigma.n_teacher(), k_teacher);
        let mut seen = vec![0; k_truth];
        for k in 0..k_teacher {
            for &g in sigma.covered_by(k) {
                seen[g] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1), "{:?}", seen);
    }
}
