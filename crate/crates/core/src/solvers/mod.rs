//! Equilibrium solvers.
//!
//! | algorithm    | works on                    | step                                   |
//! |--------------|-----------------------------|----------------------------------------|
//! | `alg1`       | smooth games                | Newton on the residual map `Θ`         |
//! | `exact_cd`   | any                         | exact best responses, no safeguards    |
//! | `alg2`       | any                         | constant-step coordinate walks         |
//! | `alg3`       | nonsmooth                   | `alg2` on `phi`, outer shrinking of `D` |
//! | `alg4`       | nonsmooth                   | interleaved walks and shrinking        |
//! | `alg5`       | nonsmooth                   | Newton on the doubly smoothed `Θ`      |
//! | `reg_newton` | nonsmooth                   | Newton on the regularized map          |

mod coordinate;
mod linalg;
mod newton;
mod smoothed_newton;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use clap::ValueEnum;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{Bound, Game, GameError, LossOracle, Point, SubgradientInterval};
use crate::steklov::{AveragingSet, SetKind, SteklovError};

pub use coordinate::{algorithm2, algorithm3, algorithm4, exact_coordinate_descent};
pub use linalg::{clip_spectral_norm, fd_jacobian, line_search_residual, newton_direction};
pub use newton::{algorithm1, merit_xi};
pub use smoothed_newton::{algorithm5, reg_newton, regularized_map};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("singular Jacobian (condition estimate {condition:.3e})")]
    SingularJacobian { condition: f64 },
    #[error("singular Jacobian at iteration {k}, x = {x}")]
    SingularAt { k: usize, x: Point },
    #[error("start point {0} lies outside the box")]
    StartOutsideBox(Point),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Steklov(#[from] SteklovError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Algorithm {
    Alg1,
    ExactCd,
    Alg2,
    Alg3,
    Alg4,
    Alg5,
    RegNewton,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Alg1,
        Algorithm::ExactCd,
        Algorithm::Alg2,
        Algorithm::Alg3,
        Algorithm::Alg4,
        Algorithm::Alg5,
        Algorithm::RegNewton,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Alg1 => "alg1",
            Algorithm::ExactCd => "exact_cd",
            Algorithm::Alg2 => "alg2",
            Algorithm::Alg3 => "alg3",
            Algorithm::Alg4 => "alg4",
            Algorithm::Alg5 => "alg5",
            Algorithm::RegNewton => "reg_newton",
        }
    }

    /// Coordination rule used when the configuration does not force one.
    pub fn default_order(self) -> Order {
        match self {
            Algorithm::Alg5 | Algorithm::RegNewton => Order::Second,
            _ => Order::First,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which step/diameter rule triggers shrinking: `λ/d ≤ ε_k` or `λ/d² < ε_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    First,
    Second,
}

impl Order {
    pub fn from_int(v: u8) -> Option<Order> {
        match v {
            1 => Some(Order::First),
            2 => Some(Order::Second),
            _ => None,
        }
    }
}

/// `true` when the averaging set should shrink: `λ/d ≤ ε_k` for the first-order
/// rule, `λ/d² < ε_k` (strict) for the second-order rule.
pub fn check_step_diameter(lambda: f64, d: f64, eps_k: f64, order: Order) -> bool {
    match order {
        Order::First => lambda / d <= eps_k,
        Order::Second => lambda / (d * d) < eps_k,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Target residual.
    pub eps: f64,
    pub lambda0: f64,
    pub max_iters: usize,
    pub shrink_rho: f64,
    pub eps0: f64,
    pub eps_gamma: f64,
    /// Overrides the algorithm's default coordination rule.
    pub order: Option<Order>,
    pub set_kind: SetKind,
    /// Radius of the initial averaging set.
    pub radius: f64,
    pub quadrature_level: usize,
    pub seed: u64,
    pub fd_step_factor: f64,
    /// Diameter floor for stopping; defaults to `eps`.
    pub d_min: Option<f64>,
    /// Step floor for coordinate walks; defaults to `eps`.
    pub lambda_min: Option<f64>,
    pub cycle_tol: f64,
    /// Defaults to `2m + 2`.
    pub max_period: Option<usize>,
    pub divergence_window: usize,
    /// Defaults to `m`.
    pub max_swaps: Option<usize>,
    pub walk_step_cap: usize,
    pub inner_max_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            algorithm: Algorithm::Alg2,
            eps: 1e-6,
            lambda0: 1.0,
            max_iters: 1000,
            shrink_rho: 0.5,
            eps0: 0.1,
            eps_gamma: 0.9,
            order: None,
            set_kind: SetKind::Ball,
            radius: 0.5,
            quadrature_level: 8,
            seed: 0,
            fd_step_factor: crate::steklov::DEFAULT_FD_STEP_FACTOR,
            d_min: None,
            lambda_min: None,
            cycle_tol: 1e-9,
            max_period: None,
            divergence_window: crate::diagnostics::DEFAULT_DIVERGENCE_WINDOW,
            max_swaps: None,
            walk_step_cap: 100_000,
            inner_max_sweeps: 200,
        }
    }
}

impl SolverConfig {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        SolverConfig {
            algorithm,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |s: &str| Err(SolverError::Config(s.into()));
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.lambda0 > 0.0) {
            return bad("lambda0 must be positive");
        }
        if !(self.shrink_rho > 0.0 && self.shrink_rho < 1.0) {
            return bad("shrink_rho must lie in (0, 1)");
        }
        if !(self.eps0 > 0.0 && self.eps_gamma > 0.0 && self.eps_gamma < 1.0) {
            return bad("eps schedule needs eps0 > 0 and gamma in (0, 1)");
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad("radius must be positive");
        }
        if self.quadrature_level == 0 {
            return bad("quadrature level must be at least 1");
        }
        if !(self.fd_step_factor > 0.0 && self.fd_step_factor < 0.5) {
            return bad("fd_step_factor must lie in (0, 0.5)");
        }
        if self.d_min.is_some_and(|d| !(d > 0.0)) {
            return bad("d_min must be positive");
        }
        Ok(())
    }

    pub fn order(&self) -> Order {
        self.order.unwrap_or(self.algorithm.default_order())
    }

    /// `ε_k = eps0 * gamma^k`
    pub fn eps_k(&self, k: usize) -> f64 {
        self.eps0 * self.eps_gamma.powi(k as i32)
    }

    pub fn d_min(&self) -> f64 {
        self.d_min.unwrap_or(self.eps)
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min.unwrap_or(self.eps)
    }

    pub fn initial_set(&self, m: usize) -> Result<AveragingSet, SteklovError> {
        AveragingSet::new(self.set_kind, self.radius, m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Halve,
    Average,
    Swap,
    Shrink,
    CycleDetected,
    DivergenceDetected,
    /// Newton step replaced by a regularized-map step.
    Regularized,
}

impl Event {
    pub fn name(self) -> &'static str {
        match self {
            Event::Halve => "halve",
            Event::Average => "average",
            Event::Swap => "swap",
            Event::Shrink => "shrink",
            Event::CycleDetected => "cycle_detected",
            Event::DivergenceDetected => "divergence_detected",
            Event::Regularized => "regularized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    Converged,
    MaxIters,
    Diverged,
    CycleDetected,
    /// The line search found no decrease along the Newton direction.
    Stalled,
}

impl TerminalStatus {
    pub fn name(self) -> &'static str {
        match self {
            TerminalStatus::Converged => "converged",
            TerminalStatus::MaxIters => "max_iters",
            TerminalStatus::Diverged => "diverged",
            TerminalStatus::CycleDetected => "cycle_detected",
            TerminalStatus::Stalled => "stalled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub x: Point,
    /// Residual map the method works on: exact for the unsmoothed methods, the
    /// smoothed `Θ` for the smoothing methods.
    pub residual: Vec<f64>,
    /// Max-norm of `residual`.
    pub residual_norm: f64,
    /// Max over players of `dist(0, ∂_{x_i} f_i(x))` for the base game.
    pub base_residual: f64,
    pub lambda: f64,
    /// Diameter of the current averaging set, 0 for unsmoothed methods.
    pub diameter: f64,
    /// `ε_k` in force when the record was taken.
    pub eps_k: f64,
    pub events: Vec<Event>,
    /// Regularization constant `L_s` of the step (regularized steps only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_s: Option<f64>,
    /// Matrix the Newton step inverted (regularized steps only).
    #[serde(skip)]
    pub step_matrix: Option<DMatrix<f64>>,
}

impl IterationRecord {
    pub fn has(&self, e: Event) -> bool {
        self.events.contains(&e)
    }

    pub fn event_label(&self) -> String {
        if self.events.is_empty() {
            "none".into()
        } else {
            self.events.iter().map(|e| e.name()).collect::<Vec<_>>().join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub algorithm: Algorithm,
    pub records: Vec<IterationRecord>,
    pub terminal_status: TerminalStatus,
    pub final_point: Point,
    /// Base-loss evaluations, counting one per quadrature node for smoothed oracles.
    pub oracle_calls: u64,
}

impl Trace {
    pub fn converged(&self) -> bool {
        self.terminal_status == TerminalStatus::Converged
    }

    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("traces hold at least the start record")
    }

    pub fn iterations(&self) -> usize {
        self.last().k
    }
}

/// Counts oracle calls, weighting each by the oracle's cost.
pub(crate) struct Metered<'a, O: LossOracle> {
    inner: &'a O,
    calls: &'a AtomicU64,
}

impl<'a, O: LossOracle> Metered<'a, O> {
    pub(crate) fn new(inner: &'a O, calls: &'a AtomicU64) -> Self {
        Metered { inner, calls }
    }

    fn tick(&self) {
        self.calls.fetch_add(self.inner.cost(), Ordering::Relaxed);
    }
}

impl<O: LossOracle> LossOracle for Metered<'_, O> {
    fn players(&self) -> usize {
        self.inner.players()
    }

    fn bounds(&self) -> &[Bound] {
        self.inner.bounds()
    }

    fn value(&self, player: usize, x: &[f64]) -> f64 {
        self.tick();
        self.inner.value(player, x)
    }

    fn partial(&self, player: usize, coord: usize, x: &[f64]) -> SubgradientInterval {
        self.tick();
        self.inner.partial(player, coord, x)
    }

    fn cost(&self) -> u64 {
        self.inner.cost()
    }
}

pub(crate) fn base_residual(game: &Game, x: &[f64]) -> f64 {
    game.stationarity_residuals(x).into_iter().fold(0.0, f64::max)
}

pub(crate) fn prepare(game: &Game, x0: &[f64], cfg: &SolverConfig) -> Result<Point, SolverError> {
    cfg.validate()?;
    game.check_point(x0)?;
    if !game.in_box(x0) {
        return Err(SolverError::StartOutsideBox(Point::from(x0)));
    }
    Ok(Point::from(x0))
}

pub(crate) fn clamp_to_box(x: &mut [f64], bounds: &[Bound]) -> bool {
    let mut clamped = false;
    for (v, b) in x.iter_mut().zip(bounds) {
        let c = v.clamp(b.lo, b.hi);
        clamped |= c != *v;
        *v = c;
    }
    clamped
}

/// Runs `cfg.algorithm` from `x0`.
pub fn solve(game: &Game, x0: &[f64], cfg: &SolverConfig) -> Result<Trace, SolverError> {
    match cfg.algorithm {
        Algorithm::Alg1 => algorithm1(game, x0, cfg),
        Algorithm::ExactCd => exact_coordinate_descent(game, x0, cfg),
        Algorithm::Alg2 => algorithm2(game, x0, cfg),
        Algorithm::Alg3 => algorithm3(game, x0, cfg),
        Algorithm::Alg4 => algorithm4(game, x0, cfg),
        Algorithm::Alg5 => algorithm5(game, x0, cfg),
        Algorithm::RegNewton => reg_newton(game, x0, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_diameter_rules() {
        assert!(check_step_diameter(1e-3, 0.1, 0.05, Order::First));
        assert!(!check_step_diameter(1e-3, 0.1, 0.05, Order::Second));
        // Ratio exactly at the threshold: inclusive for order 1, strict for order 2.
        assert!(check_step_diameter(0.5, 2.0, 0.25, Order::First));
        assert!(!check_step_diameter(1.0, 2.0, 0.25, Order::Second));
    }

    #[test]
    fn eps_schedule_decreases() {
        let cfg = SolverConfig::default();
        assert_eq!(cfg.eps_k(0), 0.1);
        for k in 0..50 {
            assert!(cfg.eps_k(k + 1) < cfg.eps_k(k));
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = [
            SolverConfig { eps: 0.0, ..Default::default() },
            SolverConfig { shrink_rho: 1.0, ..Default::default() },
            SolverConfig { eps_gamma: 1.0, ..Default::default() },
            SolverConfig { fd_step_factor: 0.5, ..Default::default() },
            SolverConfig { quadrature_level: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn event_labels() {
        let mut r = IterationRecord {
            k: 0,
            x: Point::zeros(1),
            residual: vec![0.0],
            residual_norm: 0.0,
            base_residual: 0.0,
            lambda: 1.0,
            diameter: 0.0,
            eps_k: 0.1,
            events: vec![],
            l_s: None,
            step_matrix: None,
        };
        assert_eq!(r.event_label(), "none");
        r.events = vec![Event::Halve, Event::Shrink];
        assert_eq!(r.event_label(), "halve+shrink");
    }
}
