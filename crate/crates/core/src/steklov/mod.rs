//! Steklov averaging: smoothed losses `phi_i(x) = mean over D of f_i(x + y)` and the
//! doubly smoothed `Phi_i`, computed by deterministic quadrature.

mod quadrature;
mod smoothed;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use quadrature::{make_quadrature, make_quadrature_capped, QuadratureRule, DEFAULT_NODE_CAP};
pub use smoothed::{PhiOracle, SmoothedGame, DEFAULT_FD_STEP_FACTOR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteklovError {
    #[error("averaging set radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("averaging set dimension must be at least 1")]
    ZeroDimension,
    #[error("quadrature level must be at least 1")]
    ZeroLevel,
    #[error("quadrature needs {nodes:.0} nodes, above the cap of {cap}; reduce the level or the number of players")]
    NodeBudget { nodes: f64, cap: usize },
    #[error("averaging set has dimension {set}, game has {game} players")]
    DimensionMismatch { set: usize, game: usize },
    #[error("finite-difference step factor must lie in (0, 0.5), got {0}")]
    InvalidStepFactor(f64),
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SetKind {
    Ball,
    Cube,
}

/// Centered averaging set `D`: a Euclidean ball of the given radius, or the cube
/// `[-radius, radius]^m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragingSet {
    pub kind: SetKind,
    pub radius: f64,
    pub m: usize,
}

impl AveragingSet {
    pub fn new(kind: SetKind, radius: f64, m: usize) -> Result<Self, SteklovError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(SteklovError::InvalidRadius(radius));
        }
        if m == 0 {
            return Err(SteklovError::ZeroDimension);
        }
        Ok(AveragingSet { kind, radius, m })
    }

    pub fn ball(radius: f64, m: usize) -> Result<Self, SteklovError> {
        Self::new(SetKind::Ball, radius, m)
    }

    pub fn cube(radius: f64, m: usize) -> Result<Self, SteklovError> {
        Self::new(SetKind::Cube, radius, m)
    }

    pub fn diameter(&self) -> f64 {
        match self.kind {
            SetKind::Ball => 2.0 * self.radius,
            SetKind::Cube => 2.0 * self.radius * (self.m as f64).sqrt(),
        }
    }

    pub fn measure(&self) -> f64 {
        match self.kind {
            SetKind::Ball => unit_ball_volume(self.m) * self.radius.powi(self.m as i32),
            SetKind::Cube => (2.0 * self.radius).powi(self.m as i32),
        }
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        match self.kind {
            SetKind::Ball => y.iter().map(|v| v * v).sum::<f64>() <= self.radius * self.radius,
            SetKind::Cube => y.iter().all(|v| v.abs() <= self.radius),
        }
    }

    /// Same shape with the radius scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, SteklovError> {
        Self::new(self.kind, self.radius * factor, self.m)
    }

    /// Same shape with a given diameter.
    pub fn with_diameter(&self, d: f64) -> Result<Self, SteklovError> {
        self.scaled(d / self.diameter())
    }
}

pub(crate) fn unit_ball_volume(m: usize) -> f64 {
    match m {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / m as f64 * unit_ball_volume(m - 2),
    }
}

/// Lipschitz constant of the smoothed own derivative: `L_i / d(D)`.
pub fn lipschitz_phi_grad(l_i: f64, set: &AveragingSet) -> f64 {
    l_i / set.diameter()
}

/// Lipschitz constant of the doubly smoothed Jacobian: `2 L_i / d(D)^2`.
#[allow(non_snake_case)]
pub fn lipschitz_Phi_hess(l_i: f64, set: &AveragingSet) -> f64 {
    let d = set.diameter();
    2.0 * l_i / (d * d)
}
