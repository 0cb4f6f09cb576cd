//! Pathology detectors for coordinate methods, iterate averaging, coordinate
//! permutation, and equilibrium certificates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{distance, Bound, Game, Point};
use crate::steklov::{AveragingSet, QuadratureRule, SetKind};

/// Grid size of the brute-force best-response cross-check in certificates.
pub const CERTIFY_GRID: usize = 2001;

/// Divergence window used by the solvers when none is configured.
pub const DEFAULT_DIVERGENCE_WINDOW: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("cannot average an empty set of points")]
    Empty,
    #[error("points have inconsistent dimensions")]
    DimensionMismatch,
    #[error("weights must be nonnegative, one per point, and sum to 1")]
    BadWeights,
    #[error("not a permutation of 0..{0}")]
    BadPermutation(usize),
}

/// Default cycle tolerance `1e-9 * (1 + |x|)` at the newest history entry.
pub fn default_cycle_tol(history: &[Point]) -> f64 {
    1e-9 * (1.0 + history.last().map_or(0.0, |x| crate::game::norm(x)))
}

/// Default longest period searched: `2m + 2`.
pub fn default_max_period(m: usize) -> usize {
    2 * m + 2
}

/// Smallest `p <= max_period` such that each of the last `p` points lies within `tol`
/// of the point `p` entries before it.
pub fn detect_cycle(history: &[Point], tol: f64, max_period: usize) -> Option<usize> {
    let n = history.len();
    (1..=max_period).find(|&p| {
        2 * p <= n && (n - p..n).all(|k| history[k].distance(&history[k - p]) <= tol)
    })
}

/// Divergence test on step lengths `d_k = |x_k - x_{k-1}|`.
///
/// Coordinate methods move one coordinate per step, so steps are compared with the
/// step one full sweep earlier (`lag` = point dimension): the history diverges when
/// `d_k > d_{k-lag}` for each of the last `window` steps, or when any point has
/// left the box.
pub fn detect_divergence(history: &[Point], window: usize, bounds: &[Bound]) -> bool {
    let lag = history.first().map_or(1, |p| p.dim().max(1));
    detect_divergence_lagged(history, window, lag, bounds)
}

pub(crate) fn detect_divergence_lagged(
    history: &[Point],
    window: usize,
    lag: usize,
    bounds: &[Bound],
) -> bool {
    let outside = |x: &Point| x.iter().zip(bounds).any(|(v, b)| !b.contains(*v));
    if history.iter().any(outside) {
        return true;
    }
    let steps: Vec<f64> = history.windows(2).map(|w| w[1].distance(&w[0])).collect();
    if window == 0 || steps.len() < window + lag {
        return false;
    }
    let n = steps.len();
    (n - window..n).all(|k| steps[k] > steps[k - lag])
}

/// Convex combination of `points`; equal weights when `weights` is `None`.
pub fn average_points(points: &[Point], weights: Option<&[f64]>) -> Result<Point, DiagnosticsError> {
    let first = points.first().ok_or(DiagnosticsError::Empty)?;
    let m = first.dim();
    if points.iter().any(|p| p.dim() != m) {
        return Err(DiagnosticsError::DimensionMismatch);
    }
    let equal;
    let w = match weights {
        Some(w) => {
            let total: f64 = w.iter().sum();
            if w.len() != points.len() || w.iter().any(|v| *v < 0.0) || (total - 1.0).abs() > 1e-12 {
                return Err(DiagnosticsError::BadWeights);
            }
            w
        }
        None => {
            equal = vec![1.0 / points.len() as f64; points.len()];
            &equal
        }
    };
    let mut out = vec![0.0; m];
    for (p, wk) in points.iter().zip(w) {
        for (o, v) in out.iter_mut().zip(p.iter()) {
            *o += wk * v;
        }
    }
    Ok(Point::new(out))
}

/// Relabels coordinates so that `y[k] = x[perm[k]]`; player `k` of the result owns
/// coordinate `k`, i.e. original coordinate `perm[k]`. Returns the inverse
/// permutation, `x[j] = y[inverse[j]]`.
pub fn permute_game(game: &Game, perm: &[usize]) -> Result<(Game, Vec<usize>), DiagnosticsError> {
    let inverse = invert_permutation(perm)?;
    if perm.len() != game.players() {
        return Err(DiagnosticsError::BadPermutation(game.players()));
    }
    Ok((game.permuted(perm), inverse))
}

pub fn invert_permutation(perm: &[usize]) -> Result<Vec<usize>, DiagnosticsError> {
    let m = perm.len();
    let mut inv = vec![usize::MAX; m];
    for (k, &p) in perm.iter().enumerate() {
        if p >= m || inv[p] != usize::MAX {
            return Err(DiagnosticsError::BadPermutation(m));
        }
        inv[p] = k;
    }
    Ok(inv)
}

/// `y[k] = x[perm[k]]`
pub fn apply_permutation(perm: &[usize], x: &[f64]) -> Point {
    Point::new(perm.iter().map(|&p| x[p]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsDCertificate {
    pub set: AveragingSet,
    /// Offset `y` in `D` with an equilibrium at `x + y`.
    pub offset: Point,
    pub witness: Point,
    pub witness_residual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub point: Point,
    pub per_player_residual: Vec<f64>,
    pub is_equilibrium: bool,
    pub tol: f64,
    /// `|x_i - BR_i(x)|` from the brute-force best-response oracle.
    pub best_response_gap: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_d_certificate: Option<EpsDCertificate>,
}

impl EquilibriumReport {
    pub fn max_residual(&self) -> f64 {
        self.per_player_residual.iter().copied().fold(0.0, f64::max)
    }
}

fn max_residual(game: &Game, x: &[f64]) -> f64 {
    game.stationarity_residuals(x).into_iter().fold(0.0, f64::max)
}

/// Residual `dist(0, ∂_{x_i} f_i(x))` per player, cross-checked against brute-force
/// best responses.
pub fn certify_equilibrium(game: &Game, x: &[f64], tol: f64) -> EquilibriumReport {
    let residual = game.stationarity_residuals(x);
    let gap = (0..game.players())
        .map(|i| (x[i] - game.best_response_oracle(i, x, CERTIFY_GRID)).abs())
        .collect();
    EquilibriumReport {
        point: Point::from(x),
        is_equilibrium: residual.iter().all(|r| *r <= tol),
        per_player_residual: residual,
        tol,
        best_response_gap: gap,
        eps_d_certificate: None,
    }
}

/// Searches `x + D` for an equilibrium: the center, then every quadrature node, then
/// exact best-response sweeps started from the best node and kept inside `x + D`.
#[allow(non_snake_case)]
pub fn certify_epsD(
    game: &Game,
    x: &[f64],
    set: &AveragingSet,
    rule: &QuadratureRule,
    tol: f64,
) -> EquilibriumReport {
    let mut report = certify_equilibrium(game, x, tol);
    let m = x.len();
    let candidate = |y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(a, b)| a + b).collect() };

    let mut best = (vec![0.0; m], max_residual(game, x));
    if best.1 > tol {
        for y in rule.nodes() {
            let r = max_residual(game, &candidate(y));
            if r < best.1 {
                best = (y.to_vec(), r);
                if r <= tol {
                    break;
                }
            }
        }
    }
    if best.1 > tol {
        if let Some(y) = refine_in_set(game, x, set, &best.0, tol) {
            best.1 = max_residual(game, &candidate(&y));
            best.0 = y;
        }
    }
    if best.1 <= tol && set.contains(&best.0) {
        let witness = candidate(&best.0);
        // Independent recomputation from the game, not the search bookkeeping.
        let witness_residual = game.stationarity_residuals(&witness);
        if witness_residual.iter().all(|r| *r <= tol) {
            report.eps_d_certificate = Some(EpsDCertificate {
                set: *set,
                offset: Point::new(best.0),
                witness: Point::new(witness),
                witness_residual,
            });
        }
    }
    report
}

const REFINE_SWEEPS: usize = 200;

fn refine_in_set(game: &Game, x: &[f64], set: &AveragingSet, start: &[f64], tol: f64) -> Option<Vec<f64>> {
    let m = x.len();
    let mut z: Vec<f64> = x.iter().zip(start).map(|(a, b)| a + b).collect();
    for _ in 0..REFINE_SWEEPS {
        for i in 0..m {
            let (lo, hi) = match set.kind {
                SetKind::Cube => (x[i] - set.radius, x[i] + set.radius),
                SetKind::Ball => {
                    let others: f64 = (0..m)
                        .filter(|&k| k != i)
                        .map(|k| (z[k] - x[k]).powi(2))
                        .sum();
                    let half = (set.radius * set.radius - others).max(0.0).sqrt();
                    (x[i] - half, x[i] + half)
                }
            };
            let b = game.bounds()[i];
            z[i] = game.exact_argmin_in(i, i, &z, lo.max(b.lo), hi.min(b.hi));
        }
        if max_residual(game, &z) <= tol {
            break;
        }
    }
    let y: Vec<f64> = z.iter().zip(x).map(|(a, b)| a - b).collect();
    (set.contains(&y) && distance(&z, x).is_finite()).then_some(y)
}
