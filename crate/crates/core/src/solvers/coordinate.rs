use std::sync::atomic::{AtomicU64, Ordering};

use super::{
    base_residual, check_step_diameter, prepare, Event, IterationRecord, Metered, SolverConfig,
    SolverError, TerminalStatus, Trace,
};
use crate::diagnostics::{
    average_points, default_max_period, detect_cycle, detect_divergence_lagged,
};
use crate::game::{max_abs, norm, Game, LossOracle, Point};
use crate::steklov::SmoothedGame;

fn cycle_tol(cfg: &SolverConfig, x: &[f64]) -> f64 {
    cfg.cycle_tol * (1.0 + norm(x))
}

/// Plain coordinate descent with exact best responses and no safeguards.
///
/// One record per coordinate update. A cycle of period ≥ 2 ends the run; detected
/// divergence is recorded and the run continues until a best response is pinned to
/// the box boundary.
pub fn exact_coordinate_descent(
    game: &Game,
    x0: &[f64],
    cfg: &SolverConfig,
) -> Result<Trace, SolverError> {
    let mut x = prepare(game, x0, cfg)?;
    let m = game.players();
    let max_period = cfg.max_period.unwrap_or(default_max_period(m));
    let residual = |x: &[f64]| game.stationarity_residuals(x);
    let make = |k: usize, x: &Point, step: f64, events: Vec<Event>| {
        let r = residual(x);
        IterationRecord {
            k,
            x: x.clone(),
            residual_norm: max_abs(&r),
            base_residual: max_abs(&r),
            residual: r,
            lambda: step,
            diameter: 0.0,
            eps_k: cfg.eps_k(0),
            events,
            l_s: None,
            step_matrix: None,
        }
    };

    let mut records = vec![make(0, &x, 0.0, vec![])];
    let mut history = vec![x.clone()];
    let mut status = TerminalStatus::MaxIters;
    let mut flagged_divergence = false;
    let mut k = 0;
    'outer: for _ in 0..cfg.max_iters {
        for i in 0..m {
            let old = x[i];
            let new = game.exact_argmin(i, i, &x);
            x[i] = new;
            k += 1;
            let b = game.bounds()[i];
            let pinned = (new == b.lo || new == b.hi)
                && game.losses()[i]
                    .partial_interval(i, &x, game.tie_tol())
                    .distance_to_zero()
                    > 0.0;
            history.push(x.clone());
            let mut events = vec![];
            let cycle = detect_cycle(&history, cycle_tol(cfg, &x), max_period);
            if cycle.is_some_and(|p| p >= 2) {
                events.push(Event::CycleDetected);
                status = TerminalStatus::CycleDetected;
            }
            if !flagged_divergence
                && detect_divergence_lagged(&history, cfg.divergence_window, m, game.bounds())
            {
                flagged_divergence = true;
                events.push(Event::DivergenceDetected);
            }
            records.push(make(k, &x, (new - old).abs(), events));
            if pinned {
                status = TerminalStatus::Diverged;
            }
            if status != TerminalStatus::MaxIters {
                break 'outer;
            }
        }
        if base_residual(game, &x) <= cfg.eps {
            status = TerminalStatus::Converged;
            break;
        }
    }
    Ok(Trace {
        algorithm: cfg.algorithm,
        records,
        terminal_status: status,
        final_point: x,
        oracle_calls: k as u64,
    })
}

/// Constant-step coordinate walks with halving, cycle averaging and coordinate
/// swaps. Player `i` moves coordinate `perm[i]`.
struct Walker {
    m: usize,
    perm: Vec<usize>,
    lambda: f64,
    /// Stall points `u`, one per walk.
    history: Vec<Point>,
    swaps: usize,
    max_swaps: usize,
    max_period: usize,
    cycle_tol: f64,
    window: usize,
    step_cap: usize,
}

enum SweepEnd {
    Done,
    /// Divergence persisted after all permitted swaps.
    Diverged,
}

impl Walker {
    fn new(m: usize, lambda: f64, cfg: &SolverConfig) -> Self {
        Walker {
            m,
            perm: (0..m).collect(),
            lambda,
            history: Vec::new(),
            swaps: 0,
            max_swaps: cfg.max_swaps.unwrap_or(m),
            max_period: cfg.max_period.unwrap_or(default_max_period(m)),
            cycle_tol: cfg.cycle_tol,
            window: cfg.divergence_window,
            step_cap: cfg.walk_step_cap,
        }
    }

    /// Walks player `i` along its coordinate while its loss strictly decreases.
    /// Returns `false` when neither direction improves and the step was halved.
    fn walk<O: LossOracle>(&mut self, oracle: &O, i: usize, x: &mut [f64]) -> bool {
        let c = self.perm[i];
        let b = oracle.bounds()[c];
        let start = x[c];
        let f0 = oracle.value(i, x);
        let mut found = None;
        for s in [1.0, -1.0] {
            let t = start + s * self.lambda;
            if t == start || !b.contains(t) {
                continue;
            }
            x[c] = t;
            let v = oracle.value(i, x);
            if v < f0 {
                found = Some((s, v));
                break;
            }
        }
        let Some((s, mut f)) = found else {
            x[c] = start;
            self.lambda *= 0.5;
            return false;
        };
        for _ in 0..self.step_cap {
            let cur = x[c];
            let t = cur + s * self.lambda;
            if !b.contains(t) {
                break;
            }
            x[c] = t;
            let v = oracle.value(i, x);
            if v < f {
                f = v;
            } else {
                x[c] = cur;
                break;
            }
        }
        true
    }

    fn sweep<O: LossOracle>(&mut self, oracle: &O, x: &mut Point, events: &mut Vec<Event>) -> SweepEnd {
        let push = |events: &mut Vec<Event>, e: Event| {
            if !events.contains(&e) {
                events.push(e);
            }
        };
        for i in 0..self.m {
            if !self.walk(oracle, i, x) {
                push(events, Event::Halve);
            }
            self.history.push(x.clone());
            // Capped by the step so oscillations finer than the tolerance still register.
            let tol = (self.cycle_tol * (1.0 + norm(x))).min(1e-3 * self.lambda);
            let cycle = detect_cycle(&self.history, tol, self.max_period);
            // Period 1 is a stall, not a cycle.
            if cycle.is_some_and(|p| p >= 2) && self.history.len() >= 2 * self.m {
                let tail = &self.history[self.history.len() - 2 * self.m..];
                *x = average_points(tail, None).expect("nonempty tail");
                self.history.clear();
                push(events, Event::Average);
            } else if detect_divergence_lagged(&self.history, self.window, self.m, oracle.bounds()) {
                push(events, Event::DivergenceDetected);
                if self.swaps >= self.max_swaps {
                    return SweepEnd::Diverged;
                }
                self.swap_fastest();
                self.history.clear();
                push(events, Event::Swap);
            }
        }
        SweepEnd::Done
    }

    /// Exchanges the two coordinates whose movement grew fastest over the last two
    /// sweeps.
    fn swap_fastest(&mut self) {
        let m = self.m;
        let n = self.history.len();
        let moved = |from: usize, to: usize, c: usize| -> f64 {
            (from.max(1)..to)
                .map(|k| (self.history[k][c] - self.history[k - 1][c]).abs())
                .sum()
        };
        let mut growth: Vec<(f64, usize)> = (0..m)
            .map(|c| {
                let recent = moved(n.saturating_sub(m), n, c);
                let before = moved(n.saturating_sub(2 * m), n.saturating_sub(m), c);
                (recent / (before + f64::MIN_POSITIVE), c)
            })
            .collect();
        growth.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let (a, b) = (growth[0].1, growth.get(1).map_or(growth[0].1, |g| g.1));
        let pa = self.perm.iter().position(|&c| c == a).expect("perm covers coords");
        let pb = self.perm.iter().position(|&c| c == b).expect("perm covers coords");
        self.perm.swap(pa, pb);
        self.swaps += 1;
    }

    fn working_residual<O: LossOracle>(&self, oracle: &O, x: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|i| oracle.partial(i, self.perm[i], x).distance_to_zero())
            .collect()
    }
}

struct Recorder<'a> {
    game: &'a Game,
    cfg: &'a SolverConfig,
    records: Vec<IterationRecord>,
}

impl Recorder<'_> {
    fn push(&mut self, x: &Point, residual: Vec<f64>, lambda: f64, diameter: f64, eps_k: f64, events: Vec<Event>) {
        let k = self.records.len();
        self.records.push(IterationRecord {
            k,
            x: x.clone(),
            residual_norm: max_abs(&residual),
            residual,
            base_residual: base_residual(self.game, x),
            lambda,
            diameter,
            eps_k,
            events,
            l_s: None,
            step_matrix: None,
        });
    }

    fn sweeps(&self) -> usize {
        self.records.len() - 1
    }

    fn finish(self, status: TerminalStatus, x: Point, calls: &AtomicU64) -> Trace {
        Trace {
            algorithm: self.cfg.algorithm,
            records: self.records,
            terminal_status: status,
            final_point: x,
            oracle_calls: calls.load(Ordering::Relaxed),
        }
    }
}

/// Coordinate descent with constant step: one record per sweep. Stops once every
/// player's subgradient interval is within `eps` of zero and the step has been
/// halved below `lambda_min`.
pub fn algorithm2(game: &Game, x0: &[f64], cfg: &SolverConfig) -> Result<Trace, SolverError> {
    let mut x = prepare(game, x0, cfg)?;
    let calls = AtomicU64::new(0);
    let oracle = Metered::new(game, &calls);
    let mut walker = Walker::new(game.players(), cfg.lambda0, cfg);
    let mut rec = Recorder { game, cfg, records: vec![] };
    let eps_k = cfg.eps_k(0);
    rec.push(&x, walker.working_residual(&oracle, &x), walker.lambda, 0.0, eps_k, vec![]);
    let mut status = TerminalStatus::MaxIters;
    while rec.sweeps() < cfg.max_iters {
        let mut events = vec![];
        let end = walker.sweep(&oracle, &mut x, &mut events);
        rec.push(&x, walker.working_residual(&oracle, &x), walker.lambda, 0.0, eps_k, events);
        if let SweepEnd::Diverged = end {
            status = TerminalStatus::Diverged;
            break;
        }
        if base_residual(game, &x) <= cfg.eps && walker.lambda <= cfg.lambda_min() {
            status = TerminalStatus::Converged;
            break;
        }
    }
    Ok(rec.finish(status, x, &calls))
}

fn smoothed(game: &Game, cfg: &SolverConfig, set: crate::steklov::AveragingSet) -> Result<SmoothedGame, SolverError> {
    Ok(SmoothedGame::new(game.clone(), set, cfg.quadrature_level, cfg.seed)?
        .with_fd_step_factor(cfg.fd_step_factor)?)
}

/// Outer loop over shrinking averaging sets; each round runs the constant-step
/// walker on the smoothed losses `phi_i` with the step reset to half the diameter.
pub fn algorithm3(game: &Game, x0: &[f64], cfg: &SolverConfig) -> Result<Trace, SolverError> {
    let mut x = prepare(game, x0, cfg)?;
    let m = game.players();
    let calls = AtomicU64::new(0);
    let mut set = cfg.initial_set(m)?;
    let mut walker = Walker::new(m, cfg.lambda0, cfg);
    let mut rec = Recorder { game, cfg, records: vec![] };
    let mut shrinks = 0;
    let mut status = TerminalStatus::MaxIters;
    {
        let sg = smoothed(game, cfg, set)?;
        let phi = sg.phi_oracle();
        let oracle = Metered::new(&phi, &calls);
        let r = walker.working_residual(&oracle, &x);
        rec.push(&x, r, walker.lambda, set.diameter(), cfg.eps_k(0), vec![]);
    }
    'rounds: while rec.sweeps() < cfg.max_iters {
        let d = set.diameter();
        let sg = smoothed(game, cfg, set)?;
        let phi = sg.phi_oracle();
        let oracle = Metered::new(&phi, &calls);
        walker.lambda = 0.5 * d;
        walker.history.clear();
        for _ in 0..cfg.inner_max_sweeps {
            let mut events = vec![];
            let end = walker.sweep(&oracle, &mut x, &mut events);
            let r = walker.working_residual(&oracle, &x);
            rec.push(&x, r, walker.lambda, d, cfg.eps_k(shrinks), events);
            if let SweepEnd::Diverged = end {
                status = TerminalStatus::Diverged;
                break 'rounds;
            }
            if walker.lambda <= 1e-3 * d || rec.sweeps() >= cfg.max_iters {
                break;
            }
        }
        if d <= cfg.d_min() && base_residual(game, &x) <= cfg.eps {
            status = TerminalStatus::Converged;
            break;
        }
        set = set.scaled(cfg.shrink_rho)?;
        shrinks += 1;
        rec.records.last_mut().expect("record").events.push(Event::Shrink);
    }
    Ok(rec.finish(status, x, &calls))
}

/// Walker on `phi_i` interleaved with shrinking: after each sweep the set shrinks
/// whenever the step/diameter rule holds for the current `ε_k`.
pub fn algorithm4(game: &Game, x0: &[f64], cfg: &SolverConfig) -> Result<Trace, SolverError> {
    let mut x = prepare(game, x0, cfg)?;
    let m = game.players();
    let calls = AtomicU64::new(0);
    let order = cfg.order();
    let mut set = cfg.initial_set(m)?;
    let mut sg = smoothed(game, cfg, set)?;
    let mut walker = Walker::new(m, cfg.lambda0, cfg);
    let mut rec = Recorder { game, cfg, records: vec![] };
    let mut shrinks = 0;
    {
        let phi = sg.phi_oracle();
        let oracle = Metered::new(&phi, &calls);
        let r = walker.working_residual(&oracle, &x);
        rec.push(&x, r, walker.lambda, set.diameter(), cfg.eps_k(0), vec![]);
    }
    let mut status = TerminalStatus::MaxIters;
    while rec.sweeps() < cfg.max_iters {
        let d = set.diameter();
        let eps_k = cfg.eps_k(shrinks);
        let mut events = vec![];
        let end = {
            let phi = sg.phi_oracle();
            let oracle = Metered::new(&phi, &calls);
            let end = walker.sweep(&oracle, &mut x, &mut events);
            let r = walker.working_residual(&oracle, &x);
            if check_step_diameter(walker.lambda, d, eps_k, order) {
                events.push(Event::Shrink);
            }
            rec.push(&x, r, walker.lambda, d, eps_k, events);
            end
        };
        if let SweepEnd::Diverged = end {
            status = TerminalStatus::Diverged;
            break;
        }
        if rec.records.last().expect("record").has(Event::Shrink) {
            set = set.scaled(cfg.shrink_rho)?;
            sg = smoothed(game, cfg, set)?;
            shrinks += 1;
            walker.history.clear();
        }
        if set.diameter() <= cfg.d_min() && base_residual(game, &x) <= cfg.eps {
            status = TerminalStatus::Converged;
            break;
        }
    }
    Ok(rec.finish(status, x, &calls))
}
