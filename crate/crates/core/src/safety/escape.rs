use nalgebra::{DMatrix, DVector};

use crate::detection::chi2_quantile;
use crate::dynamics::AgentModel;
use crate::estimation::{propagate_covariance, StackedModel};
use crate::linalg::mahalanobis_sq;
use crate::{Error, Result};

/// Upper bound on propagated ticks before the divergence assumption is
/// declared broken.
pub const ESCAPE_ITERATION_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeQuery {
    /// Tolerable error per state. A shorter vector covers the leading states
    /// only (e.g. position).
    pub zeta: DVector<f64>,
    pub alpha: f64,
    pub p_at_attack: DMatrix<f64>,
    pub k_a: u64,
}

/// Ticks from attack onset until `ζᵀ P⁻¹ ζ < χ²_df(α)` under GPS-denied
/// covariance propagation, with `df = dim(ζ)`.
pub fn escape_time(model: &AgentModel, stacked: &StackedModel, query: &EscapeQuery) -> Result<usize> {
    let m = query.zeta.len();
    let n = model.state_dim();
    if m == 0 || m > n {
        return Err(Error::config("escape.zeta", format!("length {m} must be between 1 and {n}")));
    }
    if !query.zeta.iter().all(|z| z.is_finite() && *z > 0.0) {
        return Err(Error::config("escape.zeta", "tolerances must be strictly positive"));
    }
    if query.p_at_attack.shape() != (n, n) {
        return Err(Error::dim("covariance at attack", format!("{n}x{n}"), format!("{:?}", query.p_at_attack.shape())));
    }
    let threshold = chi2_quantile(query.alpha, m)?;
    let mut p = query.p_at_attack.clone();
    for k in 0..=ESCAPE_ITERATION_CAP {
        let block = p.view((0, 0), (m, m)).into_owned();
        if mahalanobis_sq(&query.zeta, &block, "escape-time covariance")? < threshold {
            return Ok(k);
        }
        p = propagate_covariance(model, stacked, &p)?;
    }
    Err(Error::EscapeDiverged { cap: ESCAPE_ITERATION_CAP })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn query(zeta: &[f64]) -> EscapeQuery {
        EscapeQuery {
            zeta: DVector::from_row_slice(zeta),
            alpha: 0.01,
            p_at_attack: DMatrix::identity(4, 4),
            k_a: 0,
        }
    }

    #[test]
    fn monotone_in_tolerance_scale() {
        let model = AgentModel::default();
        let st = StackedModel::imu_only(&model);
        for base in [[5.0, 5.0, 1.0, 1.0], [2.0, 3.0, 0.5, 0.5]] {
            let mut prev = 0;
            for c in [1.0, 2.0, 4.0] {
                let z: Vec<f64> = base.iter().map(|v| v * c).collect();
                let k = escape_time(&model, &st, &query(&z)).unwrap();
                assert!(k >= prev);
                prev = k;
            }
        }
    }

    #[test]
    fn already_violated_is_zero() {
        let model = AgentModel::default();
        let st = StackedModel::imu_only(&model);
        assert_eq!(escape_time(&model, &st, &query(&[0.1, 0.1, 0.1, 0.1])).unwrap(), 0);
    }

    #[test]
    fn independent_of_tick_label() {
        let model = AgentModel::default();
        let st = StackedModel::imu_only(&model);
        let mut q = query(&[5.0, 5.0, 1.0, 1.0]);
        let a = escape_time(&model, &st, &q).unwrap();
        q.k_a = 12_345;
        assert_eq!(escape_time(&model, &st, &q).unwrap(), a);
    }

    #[test]
    fn rejects_bad_tolerance() {
        let model = AgentModel::default();
        let st = StackedModel::imu_only(&model);
        assert!(escape_time(&model, &st, &query(&[5.0, 0.0, 1.0, 1.0])).is_err());
        assert!(escape_time(&model, &st, &query(&[])).is_err());
        assert!(escape_time(&model, &st, &query(&[1.0; 5])).is_err());
    }

    #[test]
    fn bounded_covariance_hits_cap() {
        // With GPS fused the covariance settles, so a generous tolerance is
        // never violated.
        let model = AgentModel::default();
        let st = StackedModel::fused(&model);
        let err = escape_time(&model, &st, &query(&[50.0, 50.0, 50.0, 50.0])).unwrap_err();
        assert!(matches!(err, Error::EscapeDiverged { .. }));
    }
}
