use nalgebra::{DMatrix, DVector};

use super::SolverError;
use crate::game::{golden_section, max_abs};

/// Condition-number ceiling above which a Jacobian is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Solves `jac · Δ = -theta` by LU with partial pivoting.
pub fn newton_direction(theta: &[f64], jac: &DMatrix<f64>) -> Result<Vec<f64>, SolverError> {
    let sv = jac.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(SolverError::SingularJacobian { condition });
    }
    let rhs = -DVector::from_column_slice(theta);
    jac.clone()
        .lu()
        .solve(&rhs)
        .map(|d| d.iter().copied().collect())
        .ok_or(SolverError::SingularJacobian { condition })
}

/// Central-difference Jacobian; row `i` differentiates `map(x)[i]`, column `j` uses
/// step `step(j, x_j)`.
pub fn fd_jacobian(
    map: &dyn Fn(&[f64]) -> Vec<f64>,
    x: &[f64],
    step: &dyn Fn(usize, f64) -> f64,
) -> DMatrix<f64> {
    let m = x.len();
    let mut jac = DMatrix::zeros(m, m);
    let mut probe = x.to_vec();
    for j in 0..m {
        let h = step(j, x[j]);
        probe[j] = x[j] + h;
        let plus = map(&probe);
        probe[j] = x[j] - h;
        let minus = map(&probe);
        probe[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// Step `t ∈ [0, 2]` minimizing `|map(x + t·dir)|_∞`.
///
/// The full step is taken at once when its residual is below `accept` and below the
/// current residual. A return of 0 means no step improves on the current point.
pub fn line_search_residual(
    map: &dyn Fn(&[f64]) -> Vec<f64>,
    x: &[f64],
    dir: &[f64],
    tol: f64,
    accept: f64,
) -> f64 {
    let at = |t: f64| -> f64 {
        let y: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + t * d).collect();
        let r = max_abs(&map(&y));
        if r.is_finite() {
            r
        } else {
            f64::INFINITY
        }
    };
    let (f0, full) = (at(0.0), at(1.0));
    if full < accept && full < f0 {
        return 1.0;
    }
    let t = golden_section(&mut |t| at(t), 0.0, 2.0, tol);
    let ft = at(t);
    let (best_t, best_f) = if full <= ft { (1.0, full) } else { (t, ft) };
    if best_f < f0 {
        best_t
    } else {
        0.0
    }
}

/// Scales `jac` down uniformly so its spectral norm does not exceed `bound`.
/// Returns whether clipping happened.
pub fn clip_spectral_norm(jac: &DMatrix<f64>, bound: f64) -> (DMatrix<f64>, bool) {
    let norm = jac.singular_values().max();
    if norm > bound {
        (jac * (bound / norm), true)
    } else {
        (jac.clone(), false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_solve() {
        let d = newton_direction(&[3.0, -2.0], &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(d, vec![-3.0, 2.0]);
    }

    #[test]
    fn diverge2_step_hits_equilibrium() {
        let jac = DMatrix::from_row_slice(2, 2, &[2.0, -6.0, -1.0, 2.0]);
        let d = newton_direction(&[-4.0, 1.0], &jac).unwrap();
        assert!((d[0] + 1.0).abs() < 1e-14 && (d[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn singular_rejected() {
        let jac = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            newton_direction(&[1.0, 0.0], &jac),
            Err(SolverError::SingularJacobian { .. })
        ));
        assert!(newton_direction(&[1.0], &DMatrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn line_search_cases() {
        let id = |y: &[f64]| y.to_vec();
        assert_eq!(line_search_residual(&id, &[2.0], &[-2.0], 1e-10, 1e-12), 1.0);
        // Uphill direction for a monotone map.
        assert_eq!(line_search_residual(&id, &[2.0], &[1.0], 1e-10, 1e-12), 0.0);
        // Minimum at t = 0.5 is found by golden section.
        let t = line_search_residual(&id, &[2.0], &[-4.0], 1e-10, 1e-12);
        assert!((t - 0.5).abs() < 1e-8);
    }

    #[test]
    fn fd_jacobian_of_linear_map() {
        let map = |y: &[f64]| vec![2.0 * y[0] - 6.0 * y[1], -y[0] + 2.0 * y[1]];
        let j = fd_jacobian(&map, &[1.0, 1.0], &|_, v| 1e-3 * (1.0 + v.abs()));
        let want = [2.0, -6.0, -1.0, 2.0];
        for (got, w) in j.transpose().iter().zip(want) {
            assert!((got - w).abs() < 1e-10);
        }
    }

    #[test]
    fn clipping() {
        let j = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let (c, clipped) = clip_spectral_norm(&j, 1.5);
        assert!(clipped);
        assert!((c.singular_values().max() - 1.5).abs() < 1e-12);
        let (c, clipped) = clip_spectral_norm(&j, 5.0);
        assert!(!clipped && c == j);
    }
}
