use std::sync::atomic::{AtomicU64, Ordering};

use super::linalg::{fd_jacobian, line_search_residual, newton_direction};
use super::{
    base_residual, prepare, IterationRecord, SolverConfig, SolverError, TerminalStatus, Trace,
};
use crate::game::{max_abs, norm, Game, GameError};

/// `Ξ(x) = Σ_i Θ_i(x)²`
pub fn merit_xi(game: &Game, x: &[f64]) -> Result<f64, GameError> {
    let (theta, _) = game.residual_theta(x)?;
    Ok(theta.iter().map(|t| t * t).sum())
}

const LINE_SEARCH_TOL: f64 = 1e-10;

fn fd_step(_j: usize, xj: f64) -> f64 {
    1e-3 * (1.0 + xj.abs())
}

/// Damped Newton iteration on `Θ(x) = 0` with a finite-difference Jacobian.
pub fn algorithm1(game: &Game, x0: &[f64], cfg: &SolverConfig) -> Result<Trace, SolverError> {
    let mut x = prepare(game, x0, cfg)?;
    let calls = AtomicU64::new(0);
    let theta = |y: &[f64]| -> Vec<f64> {
        calls.fetch_add(game.players() as u64, Ordering::Relaxed);
        game.residual_theta(y).map(|(t, _)| t).unwrap_or_else(|_| vec![f64::NAN; y.len()])
    };
    let record = |k: usize, x: &[f64], r: Vec<f64>, lambda: f64| IterationRecord {
        k,
        x: x.into(),
        residual_norm: max_abs(&r),
        residual: r,
        base_residual: base_residual(game, x),
        lambda,
        diameter: 0.0,
        eps_k: cfg.eps_k(k),
        events: vec![],
        l_s: None,
        step_matrix: None,
    };

    let mut r = theta(&x);
    let mut records = vec![record(0, &x, r.clone(), 0.0)];
    let mut status = TerminalStatus::MaxIters;
    for k in 0..cfg.max_iters {
        if max_abs(&r) <= cfg.eps {
            status = TerminalStatus::Converged;
            break;
        }
        let jac = fd_jacobian(&theta, &x, &fd_step);
        let dir = newton_direction(&r, &jac).map_err(|_| SolverError::SingularAt {
            k,
            x: x.clone(),
        })?;
        let t = line_search_residual(&theta, &x, &dir, LINE_SEARCH_TOL, cfg.eps_k(k));
        if t == 0.0 {
            status = TerminalStatus::Stalled;
            break;
        }
        for (v, d) in x.iter_mut().zip(&dir) {
            *v += t * d;
        }
        r = theta(&x);
        let step = t * norm(&dir);
        records.push(record(k + 1, &x, r.clone(), step));
        if !game.in_box(&x) {
            status = TerminalStatus::Diverged;
            break;
        }
    }
    if status == TerminalStatus::MaxIters && max_abs(&r) <= cfg.eps {
        status = TerminalStatus::Converged;
    }
    Ok(Trace {
        algorithm: cfg.algorithm,
        final_point: x,
        records,
        terminal_status: status,
        oracle_calls: calls.load(Ordering::Relaxed),
    })
}
