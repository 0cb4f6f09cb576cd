//! Games with losses that are convex in each player's own coordinate.
//!
//! Every player loss belongs to the closed family
//!
//! ```text
//! f_i(x) = max_j (a_j . x + b_j) + 1/2 x^T Q x + c . x + constant
//! ```
//!
//! which is convex in `x_i` whenever `Q_ii >= 0`. The family keeps per-coordinate
//! subgradient intervals exact, so equilibrium residuals can be certified without
//! finite differences.

mod builtin;
mod spec;

use std::fmt;
use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builtin::{builtin, builtin_names, builtin_quad_m, KnownEquilibria};
pub use spec::{parse_game_spec, GameSpec, PieceSpec, PlayerSpec};

/// Default half-width of the working box standing in for the compact strategy set.
pub const DEFAULT_BOX_HALF_WIDTH: f64 = 100.0;

/// Relative tolerance used to decide whether an affine piece is active.
pub const DEFAULT_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("point has dimension {got}, game expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("player index {index} out of range for a {m}-player game")]
    PlayerOutOfRange { index: usize, m: usize },
    #[error("point contains a non-finite coordinate at index {0}")]
    NonFinite(usize),
    #[error("player {player}: quadratic coefficient Q[{coord}][{coord}] = {value} is negative, loss is not convex in its own coordinate")]
    NotConvex {
        player: usize,
        coord: usize,
        value: f64,
    },
    #[error("player {player}: quadratic matrix is not symmetric at ({row}, {col})")]
    NotSymmetric {
        player: usize,
        row: usize,
        col: usize,
    },
    #[error("player {player}: {what}")]
    Inconsistent { player: usize, what: String },
    #[error("invalid game: {0}")]
    Invalid(String),
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown builtin game `{0}`")]
    UnknownBuiltin(String),
}

/// A multistrategy: one real coordinate per player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn zeros(m: usize) -> Self {
        Point(vec![0.0; m])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        distance(&self.0, other)
    }
}

impl Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Point {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

impl From<&[f64]> for Point {
    fn from(v: &[f64]) -> Self {
        Point(v.to_vec())
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, v) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Closed interval of per-coordinate subgradients `{w_i}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgradientInterval {
    pub lo: f64,
    pub hi: f64,
}

impl SubgradientInterval {
    pub fn point(v: f64) -> Self {
        SubgradientInterval { lo: v, hi: v }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// Distance from zero to the interval; zero iff the coordinate is stationary.
    pub fn distance_to_zero(&self) -> f64 {
        if self.lo > 0.0 {
            self.lo
        } else if self.hi < 0.0 {
            -self.hi
        } else {
            0.0
        }
    }
}

/// One affine piece `a . x + b` of a max-affine term.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePiece {
    pub a: Vec<f64>,
    pub b: f64,
}

impl AffinePiece {
    pub fn new(a: Vec<f64>, b: f64) -> Self {
        AffinePiece { a, b }
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.b
    }
}

/// Loss of a single player.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerLoss {
    pub pieces: Vec<AffinePiece>,
    /// Row-major `m x m` symmetric matrix, `None` when the quadratic part vanishes.
    pub quad: Option<Vec<f64>>,
    pub linear: Vec<f64>,
    pub constant: f64,
}

impl PlayerLoss {
    pub fn new(m: usize) -> Self {
        PlayerLoss {
            pieces: Vec::new(),
            quad: None,
            linear: vec![0.0; m],
            constant: 0.0,
        }
    }

    pub fn with_piece(mut self, a: Vec<f64>, b: f64) -> Self {
        self.pieces.push(AffinePiece::new(a, b));
        self
    }

    pub fn with_quad(mut self, rows: &[&[f64]]) -> Self {
        self.quad = Some(rows.iter().flat_map(|r| r.iter().copied()).collect());
        self
    }

    pub fn with_linear(mut self, c: Vec<f64>) -> Self {
        self.linear = c;
        self
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }

    fn dim(&self) -> usize {
        self.linear.len()
    }

    #[inline]
    fn quad_entry(q: &[f64], m: usize, r: usize, c: usize) -> f64 {
        q[r * m + c]
    }

    /// `(Q x)_row`
    #[inline]
    fn quad_row_dot(&self, row: usize, x: &[f64]) -> f64 {
        match &self.quad {
            Some(q) => {
                let m = self.dim();
                q[row * m..(row + 1) * m]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            }
            None => 0.0,
        }
    }

    fn max_piece(&self, x: &[f64]) -> Option<f64> {
        self.pieces
            .iter()
            .map(|p| p.value(x))
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }

    /// Loss value at `x`.
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.max_piece(x).unwrap_or(0.0);
        if let Some(q) = &self.quad {
            let m = self.dim();
            let mut s = 0.0;
            for r in 0..m {
                let mut row = 0.0;
                for c in 0..m {
                    row += Self::quad_entry(q, m, r, c) * x[c];
                }
                s += x[r] * row;
            }
            v += 0.5 * s;
        }
        v + self.linear.iter().zip(x).map(|(c, x)| c * x).sum::<f64>() + self.constant
    }

    /// Interval of partial subgradients along coordinate `coord`.
    pub fn partial_interval(&self, coord: usize, x: &[f64], tie_tol: f64) -> SubgradientInterval {
        let smooth = self.quad_row_dot(coord, x) + self.linear[coord];
        match self.max_piece(x) {
            None => SubgradientInterval::point(smooth),
            Some(top) => {
                let tol = tie_tol * (1.0 + top.abs());
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for p in &self.pieces {
                    if top - p.value(x) <= tol {
                        lo = lo.min(p.a[coord]);
                        hi = hi.max(p.a[coord]);
                    }
                }
                SubgradientInterval {
                    lo: lo + smooth,
                    hi: hi + smooth,
                }
            }
        }
    }

    /// Restriction `t -> f(x with x_coord = t)` as a one-dimensional convex function.
    fn restrict(&self, coord: usize, x: &[f64]) -> Restriction {
        let xc = x[coord];
        let lines = self
            .pieces
            .iter()
            .map(|p| {
                let slope = p.a[coord];
                (slope, p.value(x) - slope * xc)
            })
            .collect();
        let (curv, cross) = match &self.quad {
            Some(q) => {
                let m = self.dim();
                let qcc = Self::quad_entry(q, m, coord, coord);
                let cross = self.quad_row_dot(coord, x) - qcc * xc;
                (qcc, cross)
            }
            None => (0.0, 0.0),
        };
        Restriction {
            lines,
            curv,
            slope: cross + self.linear[coord],
        }
    }

    fn spectral_bound(&self) -> f64 {
        // Frobenius norm bounds the spectral norm from above.
        self.quad
            .as_ref()
            .map(|q| q.iter().map(|v| v * v).sum::<f64>().sqrt())
            .unwrap_or(0.0)
    }

    /// Exchanges coordinates according to `perm`: the new loss evaluated at `y`
    /// equals the old loss at `x` with `y[k] = x[perm[k]]`.
    pub(crate) fn permuted(&self, perm: &[usize]) -> PlayerLoss {
        let m = self.dim();
        let remap = |v: &[f64]| perm.iter().map(|&src| v[src]).collect::<Vec<_>>();
        PlayerLoss {
            pieces: self
                .pieces
                .iter()
                .map(|p| AffinePiece::new(remap(&p.a), p.b))
                .collect(),
            quad: self.quad.as_ref().map(|q| {
                let mut out = vec![0.0; m * m];
                for r in 0..m {
                    for c in 0..m {
                        out[r * m + c] = q[perm[r] * m + perm[c]];
                    }
                }
                out
            }),
            linear: remap(&self.linear),
            constant: self.constant,
        }
    }
}

/// One-dimensional restriction `g(t) = max_k(s_k t + i_k) + 1/2 curv t^2 + slope t` (up to a constant).
struct Restriction {
    lines: Vec<(f64, f64)>,
    curv: f64,
    slope: f64,
}

impl Restriction {
    /// Left and right derivatives of `g` at `t`.
    fn derivatives(&self, t: f64) -> (f64, f64) {
        let smooth = self.curv * t + self.slope;
        if self.lines.is_empty() {
            return (smooth, smooth);
        }
        let top = self
            .lines
            .iter()
            .map(|(s, i)| s * t + i)
            .fold(f64::NEG_INFINITY, f64::max);
        let tol = DEFAULT_TIE_TOL * (1.0 + top.abs());
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (s, i) in &self.lines {
            if top - (s * t + i) <= tol {
                lo = lo.min(*s);
                hi = hi.max(*s);
            }
        }
        (lo + smooth, hi + smooth)
    }

    fn stationary(&self, t: f64) -> bool {
        let (l, r) = self.derivatives(t);
        l <= 0.0 && 0.0 <= r
    }

    /// Minimizer over `[lo, hi]` closest to `start` when the argmin is a segment.
    fn argmin(&self, start: f64, lo: f64, hi: f64) -> f64 {
        let start = start.clamp(lo, hi);
        if self.stationary(start) {
            return start;
        }
        // Bracket [a, b] with right derivative at a < 0 and left derivative at b > 0.
        let (mut a, mut b) = if self.derivatives(start).1 < 0.0 {
            if self.derivatives(hi).0 <= 0.0 {
                return hi;
            }
            (start, hi)
        } else {
            if self.derivatives(lo).1 >= 0.0 {
                return lo;
            }
            (lo, start)
        };
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let (l, r) = self.derivatives(mid);
            if r < 0.0 {
                a = mid;
            } else if l > 0.0 {
                b = mid;
            } else {
                a = mid;
                b = mid;
                break;
            }
        }
        let t = 0.5 * (a + b);
        // Snap to an exact kink when the minimizer sits where two pieces cross.
        let width = 1e-9 * (1.0 + t.abs());
        let mut best: Option<f64> = None;
        for (k, (s1, i1)) in self.lines.iter().enumerate() {
            for (s2, i2) in &self.lines[k + 1..] {
                if s1 == s2 {
                    continue;
                }
                let cand = (i2 - i1) / (s1 - s2);
                if (cand - t).abs() <= width
                    && cand >= lo
                    && cand <= hi
                    && self.stationary(cand)
                    && best.is_none_or(|b| (cand - t).abs() < (b - t).abs())
                {
                    best = Some(cand);
                }
            }
        }
        if let Some(cand) = best {
            return cand;
        }
        // Snap to the analytic stationary point of the active smooth piece.
        if self.curv > 0.0 {
            let active = if self.lines.is_empty() {
                Some(0.0)
            } else {
                let top = self
                    .lines
                    .iter()
                    .map(|(s, i)| s * t + i)
                    .fold(f64::NEG_INFINITY, f64::max);
                self.lines
                    .iter()
                    .find(|(s, i)| s * t + i == top)
                    .map(|(s, _)| *s)
            };
            if let Some(s) = active {
                let cand = -(s + self.slope) / self.curv;
                if cand >= lo && cand <= hi && self.stationary(cand) {
                    return cand;
                }
            }
        }
        t
    }
}

/// Per-coordinate bounds of the working box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Self {
        Bound { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// An m-player game with one loss per player and a finite working box.
#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    name: String,
    losses: Vec<PlayerLoss>,
    bounds: Vec<Bound>,
    lipschitz: Vec<f64>,
    tie_tol: f64,
    known: KnownEquilibria,
}

impl Game {
    /// Validates the losses and estimates the Lipschitz constants over `bounds`.
    pub fn new(
        name: impl Into<String>,
        losses: Vec<PlayerLoss>,
        bounds: Vec<Bound>,
    ) -> Result<Self, GameError> {
        let m = losses.len();
        if m == 0 {
            return Err(GameError::Invalid("a game needs at least one player".into()));
        }
        if bounds.len() != m {
            return Err(GameError::Invalid(format!(
                "box has {} intervals, expected {m}",
                bounds.len()
            )));
        }
        for (k, b) in bounds.iter().enumerate() {
            if !(b.lo.is_finite() && b.hi.is_finite() && b.lo < b.hi) {
                return Err(GameError::Invalid(format!(
                    "box interval {} is empty or not finite: [{}, {}]",
                    k + 1,
                    b.lo,
                    b.hi
                )));
            }
        }
        for (i, loss) in losses.iter().enumerate() {
            validate_loss(i, loss, m)?;
        }
        let mut game = Game {
            name: name.into(),
            losses,
            bounds,
            lipschitz: Vec::new(),
            tie_tol: DEFAULT_TIE_TOL,
            known: KnownEquilibria::Unknown,
        };
        game.lipschitz = game.estimate_lipschitz();
        Ok(game)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn players(&self) -> usize {
        self.losses.len()
    }

    pub fn losses(&self) -> &[PlayerLoss] {
        &self.losses
    }

    pub fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    pub fn lipschitz(&self) -> &[f64] {
        &self.lipschitz
    }

    /// Largest per-player Lipschitz constant.
    pub fn max_lipschitz(&self) -> f64 {
        self.lipschitz.iter().copied().fold(0.0, f64::max)
    }

    pub fn tie_tol(&self) -> f64 {
        self.tie_tol
    }

    pub fn with_tie_tol(mut self, tol: f64) -> Self {
        self.tie_tol = tol;
        self
    }

    pub fn known_equilibria(&self) -> &KnownEquilibria {
        &self.known
    }

    pub fn with_known_equilibria(mut self, known: KnownEquilibria) -> Self {
        self.known = known;
        self
    }

    /// Replaces the working box; Lipschitz constants are re-estimated.
    pub fn with_box(mut self, bounds: Vec<Bound>) -> Result<Self, GameError> {
        let rebuilt = Game::new(self.name.clone(), std::mem::take(&mut self.losses), bounds)?;
        Ok(rebuilt
            .with_tie_tol(self.tie_tol)
            .with_known_equilibria(std::mem::take(&mut self.known)))
    }

    pub fn in_box(&self, x: &[f64]) -> bool {
        self.bounds.iter().zip(x).all(|(b, v)| b.contains(*v))
    }

    fn estimate_lipschitz(&self) -> Vec<f64> {
        let box_radius = self
            .bounds
            .iter()
            .map(|b| {
                let r = b.lo.abs().max(b.hi.abs());
                r * r
            })
            .sum::<f64>()
            .sqrt();
        self.losses
            .iter()
            .map(|loss| {
                let pieces = loss
                    .pieces
                    .iter()
                    .map(|p| norm(&p.a))
                    .fold(0.0, f64::max);
                let l = pieces + loss.spectral_bound() * box_radius + norm(&loss.linear);
                // Constant losses would give zero; keep the constant strictly positive.
                l.max(f64::MIN_POSITIVE)
            })
            .collect()
    }

    pub fn check_point(&self, x: &[f64]) -> Result<(), GameError> {
        if x.len() != self.players() {
            return Err(GameError::DimensionMismatch {
                expected: self.players(),
                got: x.len(),
            });
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(GameError::NonFinite(k));
        }
        Ok(())
    }

    fn check_player(&self, i: usize) -> Result<(), GameError> {
        if i >= self.players() {
            return Err(GameError::PlayerOutOfRange {
                index: i,
                m: self.players(),
            });
        }
        Ok(())
    }

    /// Loss of player `i` (zero-based) at `x`.
    pub fn evaluate(&self, i: usize, x: &[f64]) -> Result<f64, GameError> {
        self.check_player(i)?;
        self.check_point(x)?;
        Ok(self.losses[i].value(x))
    }

    /// Exact interval `∂_{x_i} f_i(x)`.
    pub fn subgradient_interval(
        &self,
        i: usize,
        x: &[f64],
    ) -> Result<SubgradientInterval, GameError> {
        self.check_player(i)?;
        self.check_point(x)?;
        Ok(self.losses[i].partial_interval(i, x, self.tie_tol))
    }

    /// Vector of own partial derivatives; nonsmooth entries use the interval midpoint
    /// and are flagged in the returned list of player indices.
    pub fn residual_theta(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<usize>), GameError> {
        self.check_point(x)?;
        let mut flagged = Vec::new();
        let theta = (0..self.players())
            .map(|i| {
                let iv = self.losses[i].partial_interval(i, x, self.tie_tol);
                if !iv.is_degenerate() {
                    flagged.push(i);
                }
                iv.midpoint()
            })
            .collect();
        Ok((theta, flagged))
    }

    /// Per-player distance from zero to the own subgradient interval.
    pub fn stationarity_residuals(&self, x: &[f64]) -> Vec<f64> {
        (0..self.players())
            .map(|i| {
                self.losses[i]
                    .partial_interval(i, x, self.tie_tol)
                    .distance_to_zero()
            })
            .collect()
    }

    /// Brute-force best response: grid search over the box refined by golden section.
    pub fn best_response_oracle(&self, i: usize, x: &[f64], grid_n: usize) -> f64 {
        assert!(grid_n >= 3, "grid_n must be at least 3");
        let b = self.bounds[i];
        let mut probe = x.to_vec();
        let mut eval = |t: f64| {
            probe[i] = t;
            self.losses[i].value(&probe)
        };
        let step = (b.hi - b.lo) / (grid_n - 1) as f64;
        let (mut best_k, mut best_v) = (0, f64::INFINITY);
        for k in 0..grid_n {
            let v = eval(b.lo + step * k as f64);
            if v < best_v {
                best_v = v;
                best_k = k;
            }
        }
        let lo = (b.lo + step * best_k.saturating_sub(1) as f64).max(b.lo);
        let hi = (b.lo + step * (best_k + 1) as f64).min(b.hi);
        golden_section(&mut eval, lo, hi, 1e-14 * (1.0 + b.hi.abs().max(b.lo.abs())))
    }

    /// Exact minimizer of player `i`'s loss along coordinate `coord` over the box,
    /// choosing the point nearest to the current value when the argmin is a segment.
    pub fn exact_argmin(&self, i: usize, coord: usize, x: &[f64]) -> f64 {
        let b = self.bounds[coord];
        self.exact_argmin_in(i, coord, x, b.lo, b.hi)
    }

    /// As [`Game::exact_argmin`] over the interval `[lo, hi]` instead of the box.
    pub fn exact_argmin_in(&self, i: usize, coord: usize, x: &[f64], lo: f64, hi: f64) -> f64 {
        self.losses[i].restrict(coord, x).argmin(x[coord], lo, hi)
    }

    /// Relabels players together with the coordinates they own: player `k` of the
    /// result is player `perm[k]` of `self`, playing `y[k] = x[perm[k]]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Game, GameError> {
        let m = self.players();
        let mut seen = vec![false; m];
        if perm.len() != m || !perm.iter().all(|&p| p < m && !std::mem::replace(&mut seen[p], true)) {
            return Err(GameError::Invalid(format!("{perm:?} is not a permutation of 0..{m}")));
        }
        let remap = |v: &[f64]| Point::new(perm.iter().map(|&src| v[src]).collect());
        let coords = self.permuted(perm);
        Ok(Game {
            name: format!("{}[relabeled]", self.name),
            losses: perm.iter().map(|&src| coords.losses[src].clone()).collect(),
            lipschitz: perm.iter().map(|&src| self.lipschitz[src]).collect(),
            known: match &self.known {
                KnownEquilibria::Unknown => KnownEquilibria::Unknown,
                KnownEquilibria::Points(ps) => KnownEquilibria::Points(ps.iter().map(|p| remap(p)).collect()),
                KnownEquilibria::Line { through, direction } => KnownEquilibria::Line {
                    through: remap(through),
                    direction: remap(direction).into_inner(),
                },
            },
            ..coords
        })
    }

    /// Relabels coordinates: the returned game's losses satisfy
    /// `f'_i(y) = f_i(x)` where `y[k] = x[perm[k]]`.
    pub(crate) fn permuted(&self, perm: &[usize]) -> Game {
        Game {
            name: format!("{}[perm]", self.name),
            losses: self.losses.iter().map(|l| l.permuted(perm)).collect(),
            bounds: perm.iter().map(|&src| self.bounds[src]).collect(),
            lipschitz: self.lipschitz.clone(),
            tie_tol: self.tie_tol,
            known: KnownEquilibria::Unknown,
        }
    }
}

fn validate_loss(i: usize, loss: &PlayerLoss, m: usize) -> Result<(), GameError> {
    let bad = |what: String| GameError::Inconsistent { player: i, what };
    if loss.linear.len() != m {
        return Err(bad(format!(
            "linear term has {} entries, expected {m}",
            loss.linear.len()
        )));
    }
    for (k, p) in loss.pieces.iter().enumerate() {
        if p.a.len() != m {
            return Err(bad(format!(
                "affine piece {} has {} coefficients, expected {m}",
                k + 1,
                p.a.len()
            )));
        }
        if !p.a.iter().chain([&p.b]).all(|v| v.is_finite()) {
            return Err(bad(format!("affine piece {} is not finite", k + 1)));
        }
    }
    if let Some(q) = &loss.quad {
        if q.len() != m * m {
            return Err(bad(format!("quadratic matrix must be {m}x{m}")));
        }
        if !q.iter().all(|v| v.is_finite()) {
            return Err(bad("quadratic matrix is not finite".into()));
        }
        for r in 0..m {
            for c in (r + 1)..m {
                let (a, b) = (q[r * m + c], q[c * m + r]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(GameError::NotSymmetric {
                        player: i,
                        row: r,
                        col: c,
                    });
                }
            }
        }
        if q[i * m + i] < 0.0 {
            return Err(GameError::NotConvex {
                player: i,
                coord: i,
                value: q[i * m + i],
            });
        }
    }
    let has_linear = loss.linear.iter().any(|v| *v != 0.0);
    let has_quad = loss.quad.as_ref().is_some_and(|q| q.iter().any(|v| *v != 0.0));
    if loss.pieces.is_empty() && !has_linear && !has_quad {
        return Err(bad(
            "loss needs at least one affine piece, quadratic or linear term".into(),
        ));
    }
    if !loss.linear.iter().chain([&loss.constant]).all(|v| v.is_finite()) {
        return Err(bad("linear term or constant is not finite".into()));
    }
    Ok(())
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_section(f: &mut impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut guard = 0;
    while (b - a) > tol && guard < 400 {
        guard += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // Endpoints win when the minimum sits on the boundary.
    let candidates = [(lo, f(lo)), (hi, f(hi)), (mid, f(mid))];
    candidates
        .iter()
        .copied()
        .fold((mid, f64::INFINITY), |best, cand| {
            if cand.1 < best.1 {
                cand
            } else {
                best
            }
        })
        .0
}

/// Uniform read access to player losses for solvers; implemented by the exact game
/// and by its smoothed counterparts.
pub trait LossOracle: Sync {
    fn players(&self) -> usize;
    fn bounds(&self) -> &[Bound];
    fn value(&self, player: usize, x: &[f64]) -> f64;
    /// Subgradient interval of `player`'s loss along `coord`.
    fn partial(&self, player: usize, coord: usize, x: &[f64]) -> SubgradientInterval;
    /// Number of base-loss evaluations one call costs.
    fn cost(&self) -> u64 {
        1
    }
}

impl LossOracle for Game {
    fn players(&self) -> usize {
        self.losses.len()
    }

    fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    fn value(&self, player: usize, x: &[f64]) -> f64 {
        self.losses[player].value(x)
    }

    fn partial(&self, player: usize, coord: usize, x: &[f64]) -> SubgradientInterval {
        self.losses[player].partial_interval(coord, x, self.tie_tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diverge2() -> Game {
        builtin("diverge2").unwrap()
    }

    #[test]
    fn relabeling_moves_players_with_coordinates() {
        let g = builtin("stall2").unwrap();
        let r = g.relabeled(&[1, 0]).unwrap();
        let x = [0.7, -1.3];
        let y = [-1.3, 0.7];
        for k in 0..2 {
            assert_eq!(r.evaluate(k, &y).unwrap(), g.evaluate(1 - k, &x).unwrap());
            assert_eq!(r.stationarity_residuals(&y)[k], g.stationarity_residuals(&x)[1 - k]);
        }
        match r.known_equilibria() {
            KnownEquilibria::Line { direction, .. } => assert_eq!(direction, &vec![-1.5, 1.0]),
            other => panic!("{other:?}"),
        }
        assert!(g.relabeled(&[0, 0]).is_err());
        assert!(g.relabeled(&[0]).is_err());
    }

    #[test]
    fn evaluates_max_function() {
        let g = builtin("dm-maxfun").unwrap();
        assert_eq!(g.evaluate(0, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(g.evaluate(1, &[-0.5, 0.5]).unwrap(), -0.5);
    }

    #[test]
    fn evaluates_quadratic_builtin() {
        assert_eq!(diverge2().evaluate(0, &[3.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_rejects_bad_input() {
        let g = diverge2();
        assert!(matches!(
            g.evaluate(0, &[1.0]),
            Err(GameError::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(matches!(
            g.evaluate(2, &[1.0, 1.0]),
            Err(GameError::PlayerOutOfRange { index: 2, m: 2 })
        ));
        assert!(matches!(
            g.evaluate(0, &[f64::NAN, 1.0]),
            Err(GameError::NonFinite(0))
        ));
    }

    #[test]
    fn subgradient_interval_at_kink() {
        let g = builtin("stall2").unwrap();
        let iv = g.subgradient_interval(0, &[0.0, 0.0]).unwrap();
        assert_eq!((iv.lo, iv.hi), (-1.0, 2.0));
        let iv = g.subgradient_interval(1, &[0.0, 0.0]).unwrap();
        assert_eq!((iv.lo, iv.hi), (-1.0, 1.0));
    }

    #[test]
    fn subgradient_interval_smooth() {
        let iv = diverge2().subgradient_interval(0, &[1.0, 1.0]).unwrap();
        assert_eq!((iv.lo, iv.hi), (-4.0, -4.0));
        // own-coordinate minimizer x1 = 3 x2
        let iv = diverge2().subgradient_interval(0, &[6.0, 2.0]).unwrap();
        assert_eq!((iv.lo, iv.hi), (0.0, 0.0));
    }

    #[test]
    fn residual_theta_values() {
        let (t, flagged) = diverge2().residual_theta(&[1.0, 1.0]).unwrap();
        assert_eq!(t, vec![-4.0, 1.0]);
        assert!(flagged.is_empty());
        let (t, _) = diverge2().residual_theta(&[0.0, 0.0]).unwrap();
        assert_eq!(t, vec![0.0, 0.0]);
        let (t, _) = builtin("cycle2").unwrap().residual_theta(&[1.0, 1.0]).unwrap();
        assert_eq!(t, vec![0.0, 4.0]);
    }

    #[test]
    fn residual_theta_flags_kinks() {
        let (t, flagged) = builtin("stall2").unwrap().residual_theta(&[0.0, 0.0]).unwrap();
        assert_eq!(flagged, vec![0, 1]);
        assert_eq!(t, vec![0.5, 0.0]);
    }

    #[test]
    fn best_response_oracle_examples() {
        let g = diverge2()
            .with_box(vec![Bound::new(-10.0, 10.0); 2])
            .unwrap();
        let br = g.best_response_oracle(0, &[0.0, 1.0], 10001);
        assert!((br - 3.0).abs() < 2e-3, "{br}");
        let br = builtin("cycle2").unwrap().best_response_oracle(1, &[1.0, 0.0], 2001);
        assert!((br + 1.0).abs() < 2e-3, "{br}");
        let br = builtin("abs-contract")
            .unwrap()
            .best_response_oracle(0, &[0.0, 2.0], 2001);
        assert!((br - 1.0).abs() < 2e-3, "{br}");
    }

    #[test]
    fn exact_argmin_matches_closed_forms() {
        assert_eq!(diverge2().exact_argmin(0, 0, &[0.0, 1.0]), 3.0);
        assert_eq!(builtin("cycle2").unwrap().exact_argmin(1, 1, &[1.0, 5.0]), -1.0);
        let a = builtin("abs-contract").unwrap().exact_argmin(0, 0, &[7.0, 2.0]);
        assert!((a - 1.0).abs() < 1e-15);
        // Coordinate already optimal on a flat segment stays put.
        let g = builtin("stall2").unwrap();
        assert_eq!(g.exact_argmin(0, 0, &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn exact_argmin_clamps_to_box() {
        // f = max(2x1 + x2, -x1 + x2 - 3) decreases without bound in x2.
        let g = builtin("dm-maxfun").unwrap();
        assert_eq!(g.exact_argmin(1, 1, &[0.0, 0.0]), -DEFAULT_BOX_HALF_WIDTH);
    }

    #[test]
    fn permuted_game_swaps_coordinates() {
        let g = diverge2();
        let p = g.permuted(&[1, 0]);
        for x in [[1.0, 2.0], [-3.0, 0.5]] {
            let y = [x[1], x[0]];
            for i in 0..2 {
                assert_eq!(g.evaluate(i, &x).unwrap(), p.evaluate(i, &y).unwrap());
            }
        }
    }

    #[test]
    fn lipschitz_estimate_is_positive() {
        for name in builtin_names() {
            let g = builtin(name).unwrap();
            assert!(g.lipschitz().iter().all(|l| *l > 0.0));
        }
        let g = builtin("abs-contract").unwrap();
        assert!((g.lipschitz()[0] - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonconvex_and_degenerate_losses() {
        let loss = PlayerLoss::new(1).with_quad(&[&[-1.0]]);
        assert!(matches!(
            Game::new("bad", vec![loss], vec![Bound::new(-1.0, 1.0)]),
            Err(GameError::NotConvex { player: 0, coord: 0, .. })
        ));
        let loss = PlayerLoss::new(1).with_constant(3.0);
        assert!(matches!(
            Game::new("bad", vec![loss], vec![Bound::new(-1.0, 1.0)]),
            Err(GameError::Inconsistent { .. })
        ));
        let loss = PlayerLoss::new(1).with_linear(vec![1.0]);
        assert!(Game::new("bad", vec![loss], vec![Bound::new(1.0, 1.0)]).is_err());
    }

    #[test]
    fn interval_distance_to_zero() {
        assert_eq!(SubgradientInterval { lo: -1.0, hi: 2.0 }.distance_to_zero(), 0.0);
        assert_eq!(SubgradientInterval { lo: 0.5, hi: 2.0 }.distance_to_zero(), 0.5);
        assert_eq!(SubgradientInterval::point(-3.0).distance_to_zero(), 3.0);
    }
}
