use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{
    lipschitz_Phi_hess, lipschitz_phi_grad, make_quadrature, AveragingSet, QuadratureRule,
    SetKind, SteklovError,
};
use crate::game::{Bound, Game, LossOracle, SubgradientInterval};

pub const DEFAULT_FD_STEP_FACTOR: f64 = 1e-2;

// Fixed chunking keeps the summation order independent of the worker count.
const CHUNK: usize = 512;

fn ordered_sum(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let chunk_sum = |c: usize| (c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f).sum::<f64>();
    let chunks = n.div_ceil(CHUNK);
    if chunks <= 1 {
        return chunk_sum(0);
    }
    let partial: Vec<f64> = (0..chunks).into_par_iter().map(chunk_sum).collect();
    partial.iter().sum()
}

fn ordered_sum_vec(n: usize, m: usize, f: impl Fn(usize, &mut [f64]) + Sync) -> Vec<f64> {
    let chunk_sum = |c: usize| {
        let mut acc = vec![0.0; m];
        for j in c * CHUNK..((c + 1) * CHUNK).min(n) {
            f(j, &mut acc);
        }
        acc
    };
    let chunks = n.div_ceil(CHUNK);
    if chunks <= 1 {
        return chunk_sum(0);
    }
    let partial: Vec<Vec<f64>> = (0..chunks).into_par_iter().map(chunk_sum).collect();
    let mut out = vec![0.0; m];
    for p in partial {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

fn shifted(x: &[f64], y: &[f64], buf: &mut [f64]) {
    for ((b, x), y) in buf.iter_mut().zip(x).zip(y) {
        *b = x + y;
    }
}

/// A game together with an averaging set and the quadrature rules that realize
/// `phi_i` (one layer) and `Phi_i` (two layers).
#[derive(Debug, Clone)]
pub struct SmoothedGame {
    base: Game,
    set: AveragingSet,
    rule: QuadratureRule,
    outer: QuadratureRule,
    fd_step_factor: f64,
}

#[allow(non_snake_case)]
impl SmoothedGame {
    /// The outer layer of `Phi` uses the same grid for cubes and a rule seeded with
    /// `seed + 1` for balls.
    pub fn new(base: Game, set: AveragingSet, level: usize, seed: u64) -> Result<Self, SteklovError> {
        if set.m != base.players() {
            return Err(SteklovError::DimensionMismatch {
                set: set.m,
                game: base.players(),
            });
        }
        let rule = make_quadrature(&set, level, seed)?;
        let outer = match set.kind {
            SetKind::Cube => rule.clone(),
            SetKind::Ball => make_quadrature(&set, level, seed.wrapping_add(1))?,
        };
        Ok(SmoothedGame {
            base,
            set,
            rule,
            outer,
            fd_step_factor: DEFAULT_FD_STEP_FACTOR,
        })
    }

    pub fn with_fd_step_factor(mut self, factor: f64) -> Result<Self, SteklovError> {
        if !(factor > 0.0 && factor < 0.5) {
            return Err(SteklovError::InvalidStepFactor(factor));
        }
        self.fd_step_factor = factor;
        Ok(self)
    }

    pub fn base(&self) -> &Game {
        &self.base
    }

    pub fn set(&self) -> &AveragingSet {
        &self.set
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    /// Base-loss evaluations per player in one doubly smoothed sum.
    pub fn double_rule_size(&self) -> usize {
        self.rule.len() * self.outer.len()
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step_factor * self.set.diameter()
    }

    pub fn lipschitz_grad(&self, i: usize) -> f64 {
        lipschitz_phi_grad(self.base.lipschitz()[i], &self.set)
    }

    pub fn lipschitz_hess(&self, i: usize) -> f64 {
        lipschitz_Phi_hess(self.base.lipschitz()[i], &self.set)
    }

    // Rules carry equal weights; summing raw values first keeps sums of
    // integer-valued subgradients exact, so symmetric rules cancel to exactly zero.
    fn inner_weight(&self) -> f64 {
        self.rule.weights()[0]
    }

    fn outer_weight(&self) -> f64 {
        self.outer.weights()[0]
    }

    fn check(&self, x: &[f64]) {
        assert_eq!(x.len(), self.base.players(), "point dimension mismatch");
    }

    /// `phi_i(x) = sum_j w_j f_i(x + y_j)`.
    pub fn phi(&self, i: usize, x: &[f64]) -> f64 {
        self.check(x);
        let loss = &self.base.losses()[i];
        self.inner_weight()
            * ordered_sum(self.rule.len(), |j| {
                let mut buf = vec![0.0; x.len()];
                shifted(x, self.rule.node(j), &mut buf);
                loss.value(&buf)
            })
    }

    fn partial_mid(&self, i: usize, coord: usize, z: &[f64]) -> f64 {
        self.base.losses()[i]
            .partial_interval(coord, z, self.base.tie_tol())
            .midpoint()
    }

    /// Smoothed partial derivative of player `i`'s loss along `coord`; kinks inside
    /// the averaging set contribute the midpoint of their subgradient interval.
    pub fn phi_partial(&self, i: usize, coord: usize, x: &[f64]) -> f64 {
        self.check(x);
        self.inner_weight()
            * ordered_sum(self.rule.len(), |j| {
                let mut buf = vec![0.0; x.len()];
                shifted(x, self.rule.node(j), &mut buf);
                self.partial_mid(i, coord, &buf)
            })
    }

    pub fn phi_grad_own(&self, i: usize, x: &[f64]) -> f64 {
        self.phi_partial(i, i, x)
    }

    fn accumulate_grad(&self, z: &[f64], buf: &mut [f64], acc: &mut [f64]) {
        for j in 0..self.rule.len() {
            shifted(z, self.rule.node(j), buf);
            for (i, a) in acc.iter_mut().enumerate() {
                *a += self.partial_mid(i, i, buf);
            }
        }
    }

    /// Smoothed residual vector `(d phi_i / d x_i)_i`.
    pub fn phi_grad_vector(&self, x: &[f64]) -> Vec<f64> {
        self.check(x);
        let m = x.len();
        let mut out = ordered_sum_vec(self.rule.len(), m, |j, acc| {
            let mut buf = vec![0.0; m];
            shifted(x, self.rule.node(j), &mut buf);
            for (i, a) in acc.iter_mut().enumerate() {
                *a += self.partial_mid(i, i, &buf);
            }
        });
        out.iter_mut().for_each(|v| *v *= self.inner_weight());
        out
    }

    /// `Phi_i(x) = sum_k v_k phi_i(x + z_k)`.
    pub fn Phi(&self, i: usize, x: &[f64]) -> f64 {
        self.check(x);
        let loss = &self.base.losses()[i];
        let total = ordered_sum(self.outer.len(), |k| {
            let m = x.len();
            let (mut z, mut buf) = (vec![0.0; m], vec![0.0; m]);
            shifted(x, self.outer.node(k), &mut z);
            (0..self.rule.len())
                .map(|j| {
                    shifted(&z, self.rule.node(j), &mut buf);
                    loss.value(&buf)
                })
                .sum::<f64>()
        });
        total * self.inner_weight() * self.outer_weight()
    }

    /// Doubly smoothed residual vector `(d Phi_i / d x_i)_i`.
    pub fn Phi_grad_vector(&self, x: &[f64]) -> Vec<f64> {
        self.check(x);
        let m = x.len();
        let mut out = ordered_sum_vec(self.outer.len(), m, |k, acc| {
            let (mut z, mut buf) = (vec![0.0; m], vec![0.0; m]);
            shifted(x, self.outer.node(k), &mut z);
            self.accumulate_grad(&z, &mut buf, acc);
        });
        let w = self.inner_weight() * self.outer_weight();
        out.iter_mut().for_each(|v| *v *= w);
        out
    }

    pub fn Phi_grad_own(&self, i: usize, x: &[f64]) -> f64 {
        self.Phi_grad_vector(x)[i]
    }

    /// Central-difference Jacobian of `Phi_grad_vector` with the default step
    /// `fd_step_factor * d(D)`. Row `i` differentiates player `i`'s residual, so the
    /// matrix is not symmetric in general.
    pub fn Phi_hessian(&self, x: &[f64]) -> Result<DMatrix<f64>, SteklovError> {
        self.Phi_hessian_with_step(x, self.fd_step())
    }

    pub fn Phi_hessian_with_step(&self, x: &[f64], h: f64) -> Result<DMatrix<f64>, SteklovError> {
        self.check(x);
        let m = x.len();
        let mut jac = DMatrix::zeros(m, m);
        let mut probe = x.to_vec();
        for j in 0..m {
            probe[j] = x[j] + h;
            let plus = self.Phi_grad_vector(&probe);
            probe[j] = x[j] - h;
            let minus = self.Phi_grad_vector(&probe);
            probe[j] = x[j];
            for i in 0..m {
                jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(SteklovError::NonFinite {
                context: format!("Phi Jacobian at {x:?} with step {h}"),
            });
        }
        Ok(jac)
    }

    /// Loss-oracle view of the singly smoothed game.
    pub fn phi_oracle(&self) -> PhiOracle<'_> {
        PhiOracle { sg: self }
    }
}

/// Exposes `phi_i` and its partial derivatives through [`LossOracle`].
#[derive(Debug, Clone, Copy)]
pub struct PhiOracle<'a> {
    sg: &'a SmoothedGame,
}

impl LossOracle for PhiOracle<'_> {
    fn players(&self) -> usize {
        self.sg.base.players()
    }

    fn bounds(&self) -> &[Bound] {
        self.sg.base.bounds()
    }

    fn value(&self, player: usize, x: &[f64]) -> f64 {
        self.sg.phi(player, x)
    }

    fn partial(&self, player: usize, coord: usize, x: &[f64]) -> SubgradientInterval {
        SubgradientInterval::point(self.sg.phi_partial(player, coord, x))
    }

    fn cost(&self) -> u64 {
        self.sg.rule.len() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{builtin, PlayerLoss};

    fn abs_x1() -> Game {
        Game::new(
            "abs-x1",
            vec![
                PlayerLoss::new(2)
                    .with_piece(vec![1.0, 0.0], 0.0)
                    .with_piece(vec![-1.0, 0.0], 0.0),
                PlayerLoss::new(2).with_quad(&[&[0.0, 0.0], &[0.0, 1.0]]),
            ],
            vec![Bound::new(-10.0, 10.0); 2],
        )
        .unwrap()
    }

    fn square_1d() -> Game {
        Game::new(
            "square",
            vec![PlayerLoss::new(1).with_quad(&[&[2.0]])],
            vec![Bound::new(-10.0, 10.0)],
        )
        .unwrap()
    }

    #[test]
    fn abs_value_moments() {
        let sg = SmoothedGame::new(abs_x1(), AveragingSet::cube(0.5, 2).unwrap(), 64, 0).unwrap();
        assert!((sg.phi(0, &[0.0, 0.0]) - 0.25).abs() < 1e-12);
        assert!((sg.phi(0, &[1.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!(sg.phi_grad_own(0, &[0.0, 0.0]).abs() < 1e-12);
        assert!((sg.phi_grad_own(0, &[1.0, 0.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_moments() {
        // phi = x^2 + r^2/3 and Phi = x^2 + 2 r^2 / 3, up to the midpoint rule's
        // r^2/(3 n^2) deficit per layer.
        let (r, n) = (0.3, 200);
        let sg = SmoothedGame::new(square_1d(), AveragingSet::cube(r, 1).unwrap(), n, 0).unwrap();
        let deficit = r * r / (3.0 * (n * n) as f64);
        let x = 0.7;
        assert!((sg.phi(0, &[x]) - (x * x + r * r / 3.0 - deficit)).abs() < 1e-12);
        assert!((sg.Phi(0, &[x]) - (x * x + 2.0 * r * r / 3.0 - 2.0 * deficit)).abs() < 1e-12);
        assert!((sg.Phi_grad_own(0, &[x]) - 2.0 * x).abs() < 1e-12);
    }

    #[test]
    fn diverge2_gradients_and_jacobian() {
        let g = builtin("diverge2").unwrap();
        let sg = SmoothedGame::new(g, AveragingSet::ball(0.2, 2).unwrap(), 12, 5).unwrap();
        let gz = sg.phi_grad_vector(&[0.0, 0.0]);
        assert!(gz.iter().all(|v| v.abs() < 1e-12));
        let g1 = sg.phi_grad_vector(&[1.0, 1.0]);
        assert!((g1[0] + 4.0).abs() < 1e-12 && (g1[1] - 1.0).abs() < 1e-12);
        let jac = sg.Phi_hessian(&[0.3, -0.2]).unwrap();
        let expect = [[2.0, -6.0], [-1.0, 2.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((jac[(i, j)] - expect[i][j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn stall2_smoothed_residual_is_positive() {
        // Oracle: on the cube [-.5,.5]^2 the first piece is active where
        // 3 y1 + 2 y2 > 0, which by symmetry is half the cube, so the mean of the
        // own derivative is (2 + (-1)) / 2.
        let sg = SmoothedGame::new(
            builtin("stall2").unwrap(),
            AveragingSet::cube(0.5, 2).unwrap(),
            101,
            0,
        )
        .unwrap();
        let v = sg.phi_grad_vector(&[0.0, 0.0]);
        assert!(v[0] > 0.0);
        assert!((v[0] - 0.5).abs() < 1e-2, "{v:?}");
    }

    #[test]
    fn separable_jacobian_is_diagonal() {
        let g = builtin("quad-m-diag:3").unwrap();
        let sg = SmoothedGame::new(g, AveragingSet::cube(0.1, 3).unwrap(), 3, 0).unwrap();
        let jac = sg.Phi_hessian(&[0.1, 0.2, 0.3]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 2.0 } else { 0.0 };
                assert!((jac[(i, j)] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn parallel_sums_are_deterministic() {
        let sg = SmoothedGame::new(
            builtin("abs-contract").unwrap(),
            AveragingSet::ball(0.3, 2).unwrap(),
            80,
            9,
        )
        .unwrap();
        assert!(sg.rule().len() > CHUNK);
        let a = sg.phi_grad_vector(&[0.1, 0.05]);
        let b = sg.phi_grad_vector(&[0.1, 0.05]);
        assert_eq!(a, b);
        let seq: f64 = sg
            .rule()
            .nodes()
            .zip(sg.rule().weights())
            .map(|(y, w)| w * sg.base().losses()[0].value(&[0.1 + y[0], 0.05 + y[1]]))
            .sum();
        assert!((sg.phi(0, &[0.1, 0.05]) - seq).abs() < 1e-14);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let g = builtin("quad-m").unwrap();
        assert!(matches!(
            SmoothedGame::new(g.clone(), AveragingSet::cube(0.1, 2).unwrap(), 2, 0),
            Err(SteklovError::DimensionMismatch { .. })
        ));
        let sg = SmoothedGame::new(g, AveragingSet::cube(0.1, 5).unwrap(), 2, 0).unwrap();
        assert!(sg.clone().with_fd_step_factor(0.5).is_err());
        assert!(sg.with_fd_step_factor(0.1).is_ok());
    }
}
