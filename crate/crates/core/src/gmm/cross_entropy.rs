use crate::error::{Error, Result};

use super::{GaussianComponent, GaussianMixture, LN_2PI};

/// `∫ N(x; μ_a, Σ_a) ln N(x; μ_b, Σ_b) dx` in closed form:
/// `−½ [d ln 2π + ln|Σ_b| + tr(Σ_b⁻¹ Σ_a) + (μ_a − μ_b)ᵀ Σ_b⁻¹ (μ_a − μ_b)]`.
///
/// `tr(Σ_b⁻¹ Σ_a)` is `‖L_b⁻¹ L_a‖_F²`, computed by triangular solves against
/// the cached Cholesky factors.
pub fn gaussian_cross_entropy(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: b.dim(),
        });
    }
    let lb = b.cholesky_lower();
    let whitened = lb
        .solve_lower_triangular(a.cholesky_lower())
        .ok_or(Error::NotPositiveDefinite { component: 1 })?;
    let trace = whitened.norm_squared();
    let maha = b.mahalanobis_sq(a.mean().as_slice());
    Ok(-0.5 * (d as f64 * LN_2PI + b.log_det() + trace + maha))
}

/// The Jensen lower bound on `∫ p_teacher ln p_student`:
/// `Σ_{k'} Σ_{k''} α'_{k'} α''_{k''} ∫ N_{k'} ln N_{k''}`.
pub fn mixture_cross_entropy_bound(
    teacher: &GaussianMixture,
    student: &GaussianMixture,
) -> Result<f64> {
    if teacher.dim() != student.dim() {
        return Err(Error::DimensionMismatch {
            expected: teacher.dim(),
            found: student.dim(),
        });
    }
    let mut total = 0.0;
    for (ct, wt) in teacher.components().iter().zip(teacher.weights()) {
        if *wt == 0.0 {
            continue;
        }
        for (cs, ws) in student.components().iter().zip(student.weights()) {
            if *ws == 0.0 {
                continue;
            }
            total += wt * ws * gaussian_cross_entropy(ct, cs)?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    const NEG_ENTROPY_STD2: f64 = -2.837_877_066_409_345;

    #[test]
    fn standard_normal_against_itself_is_negative_entropy() {
        let a = GaussianComponent::standard(2);
        let ce = gaussian_cross_entropy(&a, &a).unwrap();
        assert!((ce - NEG_ENTROPY_STD2).abs() < 1e-12);
        assert!((ce + a.entropy()).abs() < 1e-12);
    }

    #[test]
    fn shifted_mean_subtracts_half_squared_distance() {
        let a = GaussianComponent::standard(2);
        let b = GaussianComponent::isotropic(&[1.0, 0.0], 1.0).unwrap();
        let ce = gaussian_cross_entropy(&a, &b).unwrap();
        assert!((ce - (NEG_ENTROPY_STD2 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn trace_term_matches_explicit_inverse() {
        let a = GaussianComponent::new(
            DVector::from_column_slice(&[0.3, -0.2]),
            DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.8]),
        )
        .unwrap();
        let b = GaussianComponent::new(
            DVector::from_column_slice(&[-0.1, 0.5]),
            DMatrix::from_row_slice(2, 2, &[0.7, -0.2, -0.2, 2.0]),
        )
        .unwrap();
        let inv = b.covariance().clone().try_inverse().unwrap();
        let diff = a.mean() - b.mean();
        let expected = -0.5
            * (2.0 * LN_2PI
                + b.covariance().determinant().ln()
                + (&inv * a.covariance()).trace()
                + (diff.transpose() * &inv * &diff)[(0, 0)]);
        assert!((gaussian_cross_entropy(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = GaussianComponent::standard(2);
        let b = GaussianComponent::standard(3);
        assert!(gaussian_cross_entropy(&a, &b).is_err());
    }

    #[test]
    fn bound_is_tight_for_single_components() {
        let m = GaussianMixture::new(vec![GaussianComponent::standard(2)], vec![1.0]).unwrap();
        let bound = mixture_cross_entropy_bound(&m, &m).unwrap();
        assert!((bound - NEG_ENTROPY_STD2).abs() < 1e-12);
    }

    #[test]
    fn bound_for_duplicated_student_equals_single_term() {
        // Jensen is exact: every student term is N(0, I).
        let t = GaussianMixture::new(vec![GaussianComponent::standard(2)], vec![1.0]).unwrap();
        let s =
            GaussianMixture::new(vec![GaussianComponent::standard(2); 2], vec![0.5, 0.5]).unwrap();
        let bound = mixture_cross_entropy_bound(&t, &s).unwrap();
        assert!((bound - NEG_ENTROPY_STD2).abs() < 1e-12);
    }
}
