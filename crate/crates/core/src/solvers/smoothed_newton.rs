use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;

use super::linalg::{clip_spectral_norm, line_search_residual, newton_direction};
use super::{
    base_residual, check_step_diameter, clamp_to_box, prepare, Event, IterationRecord,
    SolverConfig, SolverError, TerminalStatus, Trace,
};
use crate::game::{distance, max_abs, Game};
use crate::steklov::SmoothedGame;

const LINE_SEARCH_TOL: f64 = 1e-9;

/// `y ↦ Θ(y) + 2 L_s (y - anchor)`: the proximal regularization of a residual map.
/// Its Jacobian `Θ' + 2 L_s I` has `L_s |z|² ≤ zᵀ J z ≤ 3 L_s |z|²` whenever
/// `|Θ'| ≤ L_s`.
pub fn regularized_map<'a>(
    theta_at: impl Fn(&[f64]) -> Vec<f64> + 'a,
    l_s: f64,
    anchor: &'a [f64],
) -> impl Fn(&[f64]) -> Vec<f64> + 'a {
    move |y: &[f64]| {
        let mut t = theta_at(y);
        for ((v, y), a) in t.iter_mut().zip(y).zip(anchor) {
            *v += 2.0 * l_s * (y - a);
        }
        t
    }
}

/// Newton on the doubly smoothed residual `Φ'`, falling back to a regularized step
/// when the Jacobian is singular or the Newton step makes no progress.
pub fn algorithm5(game: &Game, x0: &[f64], cfg: &SolverConfig) -> Result<Trace, SolverError> {
    smoothed_newton(game, x0, cfg, false)
}

/// Newton on the regularized map `Θ̃(y) = Θ_s(y) + 2 L_s (y - x_k)` with
/// `L_s = max_i L_i / d(D_s)`; the measured Jacobian is clipped to spectral norm
/// `L_s`, so every step matrix is invertible.
pub fn reg_newton(game: &Game, x0: &[f64], cfg: &SolverConfig) -> Result<Trace, SolverError> {
    smoothed_newton(game, x0, cfg, true)
}

fn smoothed_newton(
    game: &Game,
    x0: &[f64],
    cfg: &SolverConfig,
    always_regularized: bool,
) -> Result<Trace, SolverError> {
    let mut x = prepare(game, x0, cfg)?;
    let m = game.players();
    let order = cfg.order();
    let l_max = game.max_lipschitz();
    let calls = AtomicU64::new(0);
    let build = |set| -> Result<SmoothedGame, SolverError> {
        Ok(SmoothedGame::new(game.clone(), set, cfg.quadrature_level, cfg.seed)?
            .with_fd_step_factor(cfg.fd_step_factor)?)
    };
    let mut set = cfg.initial_set(m)?;
    let mut sg = build(set)?;
    let mut shrinks = 0;

    let mut records = Vec::new();
    let mut status = TerminalStatus::MaxIters;
    let theta0 = sg.Phi_grad_vector(&x);
    calls.fetch_add(sg.double_rule_size() as u64, Ordering::Relaxed);
    records.push(IterationRecord {
        k: 0,
        x: x.clone(),
        residual_norm: max_abs(&theta0),
        residual: theta0,
        base_residual: base_residual(game, &x),
        lambda: 0.0,
        diameter: set.diameter(),
        eps_k: cfg.eps_k(0),
        events: vec![],
        l_s: None,
        step_matrix: None,
    });

    for k in 0..cfg.max_iters {
        let d = set.diameter();
        let eps_k = cfg.eps_k(shrinks);
        let theta_map = |y: &[f64]| {
            calls.fetch_add(sg.double_rule_size() as u64, Ordering::Relaxed);
            sg.Phi_grad_vector(y)
        };
        let theta = theta_map(&x);
        // The smoothed residual alone can vanish by symmetry well away from a kink.
        if max_abs(&theta) <= cfg.eps && d <= cfg.d_min() && base_residual(game, &x) <= cfg.eps {
            status = TerminalStatus::Converged;
            break;
        }
        let jac = sg.Phi_hessian(&x)?;
        calls.fetch_add(2 * m as u64 * sg.double_rule_size() as u64, Ordering::Relaxed);

        let mut events = vec![];
        let mut newton = None;
        if !always_regularized {
            if let Ok(dir) = newton_direction(&theta, &jac) {
                let t = line_search_residual(&theta_map, &x, &dir, LINE_SEARCH_TOL, eps_k);
                if t > 0.0 {
                    newton = Some((dir, t));
                }
            }
        }
        let (dir, t, l_s, step_matrix) = match newton {
            Some((dir, t)) => (dir, t, None, None),
            None => {
                let l_s = l_max / d;
                let (clipped, _) = clip_spectral_norm(&jac, l_s);
                let jt = clipped + DMatrix::identity(m, m) * (2.0 * l_s);
                let dir = newton_direction(&theta, &jt)
                    .map_err(|_| SolverError::SingularAt { k, x: x.clone() })?;
                let reg = regularized_map(&theta_map, l_s, &x);
                let t = line_search_residual(&reg, &x, &dir, LINE_SEARCH_TOL, eps_k);
                if !always_regularized {
                    events.push(Event::Regularized);
                }
                (dir, t, Some(l_s), Some(jt))
            }
        };

        let before = x.clone();
        for (v, dv) in x.iter_mut().zip(&dir) {
            *v += t * dv;
        }
        clamp_to_box(&mut x, game.bounds());
        let lambda = distance(&x, &before);
        let shrink = check_step_diameter(lambda, d, eps_k, order);
        if shrink {
            events.push(Event::Shrink);
        }
        let r = theta_map(&x);
        records.push(IterationRecord {
            k: k + 1,
            x: x.clone(),
            residual_norm: max_abs(&r),
            residual: r,
            base_residual: base_residual(game, &x),
            lambda,
            diameter: d,
            eps_k,
            events,
            l_s,
            step_matrix,
        });
        if shrink {
            set = set.scaled(cfg.shrink_rho)?;
            sg = build(set)?;
            shrinks += 1;
        }
    }
    Ok(Trace {
        algorithm: cfg.algorithm,
        records,
        terminal_status: status,
        final_point: x,
        oracle_calls: calls.load(Ordering::Relaxed),
    })
}
