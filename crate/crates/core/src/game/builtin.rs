use super::{distance, Bound, Game, GameError, PlayerLoss, Point, DEFAULT_BOX_HALF_WIDTH};

/// Player count of the plain `quad-m` builtin.
pub const QUAD_M_DEFAULT_PLAYERS: usize = 5;

const NAMES: &[&str] = &[
    "cycle2",
    "diverge2",
    "dm-maxfun",
    "stall2",
    "abs-contract",
    "quad-m",
];

/// Equilibrium set of a builtin, when it is known in closed form.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum KnownEquilibria {
    #[default]
    Unknown,
    Points(Vec<Point>),
    /// Every point of the line `through + s * direction` inside the box.
    Line {
        through: Point,
        direction: Vec<f64>,
    },
}

impl KnownEquilibria {
    /// Distance from `x` to the nearest known equilibrium.
    pub fn distance(&self, x: &[f64]) -> Option<f64> {
        match self {
            KnownEquilibria::Unknown => None,
            KnownEquilibria::Points(ps) => ps.iter().map(|p| p.distance(x)).reduce(f64::min),
            KnownEquilibria::Line { through, direction } => {
                let dd: f64 = direction.iter().map(|v| v * v).sum();
                let s = x
                    .iter()
                    .zip(through.iter())
                    .zip(direction)
                    .map(|((x, p), d)| (x - p) * d)
                    .sum::<f64>()
                    / dd;
                let foot: Vec<f64> = through
                    .iter()
                    .zip(direction)
                    .map(|(p, d)| p + s * d)
                    .collect();
                Some(distance(x, &foot))
            }
        }
    }

    /// A representative equilibrium, if any is known.
    pub fn representative(&self) -> Option<&Point> {
        match self {
            KnownEquilibria::Unknown => None,
            KnownEquilibria::Points(ps) => ps.first(),
            KnownEquilibria::Line { through, .. } => Some(through),
        }
    }
}

pub fn builtin_names() -> &'static [&'static str] {
    NAMES
}

fn default_box(m: usize) -> Vec<Bound> {
    vec![Bound::new(-DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH); m]
}

fn origin(m: usize) -> KnownEquilibria {
    KnownEquilibria::Points(vec![Point::zeros(m)])
}

/// Looks up a builtin game by name.
///
/// Besides the fixed names, `quad-m:N` selects the coupled quadratic game with `N`
/// players and `quad-m-diag[:N]` its separable variant.
pub fn builtin(name: &str) -> Result<Game, GameError> {
    let two = |losses: Vec<PlayerLoss>| Game::new(name, losses, default_box(2));
    let game = match name {
        "cycle2" => two(vec![
            PlayerLoss::new(2).with_quad(&[&[2.0, -2.0], &[-2.0, 2.0]]),
            PlayerLoss::new(2).with_quad(&[&[2.0, 2.0], &[2.0, 2.0]]),
        ])?
        .with_known_equilibria(origin(2)),
        "diverge2" => two(vec![
            PlayerLoss::new(2).with_quad(&[&[2.0, -6.0], &[-6.0, 18.0]]),
            PlayerLoss::new(2).with_quad(&[&[0.5, -1.0], &[-1.0, 2.0]]),
        ])?
        .with_known_equilibria(origin(2)),
        "dm-maxfun" => {
            let f = PlayerLoss::new(2)
                .with_piece(vec![2.0, 1.0], 0.0)
                .with_piece(vec![-1.0, 1.0], -3.0);
            two(vec![f.clone(), f])?
        }
        "stall2" => {
            let f = PlayerLoss::new(2)
                .with_piece(vec![2.0, 1.0], 0.0)
                .with_piece(vec![-1.0, -1.0], 0.0);
            two(vec![f.clone(), f])?.with_known_equilibria(KnownEquilibria::Line {
                through: Point::zeros(2),
                direction: vec![1.0, -1.5],
            })
        }
        "abs-contract" => two(vec![
            PlayerLoss::new(2)
                .with_piece(vec![1.0, -0.5], 0.0)
                .with_piece(vec![-1.0, 0.5], 0.0),
            PlayerLoss::new(2)
                .with_piece(vec![0.5, 1.0], 0.0)
                .with_piece(vec![-0.5, -1.0], 0.0),
        ])?
        .with_known_equilibria(origin(2)),
        "quad-m" => builtin_quad_m(QUAD_M_DEFAULT_PLAYERS, true)?,
        "quad-m-diag" => builtin_quad_m(QUAD_M_DEFAULT_PLAYERS, false)?,
        other => {
            let parse = |rest: &str| {
                rest.parse::<usize>()
                    .ok()
                    .filter(|m| *m >= 1)
                    .ok_or_else(|| GameError::UnknownBuiltin(other.to_string()))
            };
            if let Some(rest) = other.strip_prefix("quad-m-diag:") {
                builtin_quad_m(parse(rest)?, false)?
            } else if let Some(rest) = other.strip_prefix("quad-m:") {
                builtin_quad_m(parse(rest)?, true)?
            } else {
                return Err(GameError::UnknownBuiltin(other.to_string()));
            }
        }
    };
    Ok(game)
}

/// Target equilibrium of the quadratic family: `1, -1.5, 2, -2.5, ...`.
pub(crate) fn quad_m_target(m: usize) -> Vec<f64> {
    (0..m)
        .map(|i| {
            let mag = 1.0 + 0.5 * i as f64;
            if i % 2 == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Coupling between players `i` and `j`, in `[-1, 1]`.
fn coupling_sign(i: usize, j: usize) -> f64 {
    let (a, b) = (i.min(j), i.max(j));
    (((3 * a + 5 * b) % 5) as f64 - 2.0) / 2.0
}

/// Strongly convex m-player quadratic game `f_i = 1/2 (x - t)^T Q_i (x - t)` with
/// unique equilibrium `t`.
///
/// `Q_i` has `2` on its own diagonal and couplings only in row and column `i`,
/// scaled so the cross-derivative matrix stays strictly diagonally dominant.
pub fn builtin_quad_m(m: usize, coupled: bool) -> Result<Game, GameError> {
    if m == 0 {
        return Err(GameError::Invalid("quad-m needs at least one player".into()));
    }
    let t = quad_m_target(m);
    let scale = if m > 1 { 0.6 / (m - 1) as f64 } else { 0.0 };
    let losses = (0..m)
        .map(|i| {
            let mut q = vec![0.0; m * m];
            q[i * m + i] = 2.0;
            if coupled {
                for j in (0..m).filter(|&j| j != i) {
                    let c = scale * coupling_sign(i, j);
                    q[i * m + j] = c;
                    q[j * m + i] = c;
                }
            }
            // Same summation order as the loss oracle so the residual at t is exactly 0.
            let linear: Vec<f64> = (0..m)
                .map(|r| -q[r * m..(r + 1) * m].iter().zip(&t).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let qt_t: f64 = linear.iter().zip(&t).map(|(l, t)| -l * t).sum();
            PlayerLoss {
                pieces: Vec::new(),
                quad: Some(q),
                linear,
                constant: 0.5 * qt_t,
            }
        })
        .collect();
    let name = match (coupled, m == QUAD_M_DEFAULT_PLAYERS) {
        (true, true) => "quad-m".to_string(),
        (false, true) => "quad-m-diag".to_string(),
        (true, false) => format!("quad-m:{m}"),
        (false, false) => format!("quad-m-diag:{m}"),
    };
    Ok(Game::new(name, losses, default_box(m))?
        .with_known_equilibria(KnownEquilibria::Points(vec![Point::new(t)])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_names_resolve() {
        for name in builtin_names() {
            let g = builtin(name).unwrap();
            assert_eq!(g.name(), *name);
        }
        assert_eq!(builtin("quad-m").unwrap().players(), 5);
        assert_eq!(builtin("quad-m:3").unwrap().players(), 3);
        assert_eq!(builtin("quad-m-diag:7").unwrap().players(), 7);
    }

    #[test]
    fn unknown_names_fail() {
        for bad in ["nope", "quad-m:0", "quad-m:x", "cycle3"] {
            assert!(matches!(builtin(bad), Err(GameError::UnknownBuiltin(_))), "{bad}");
        }
    }

    #[test]
    fn best_response_loci() {
        // cycle2 player 1 responds on x1 = x2, player 2 on x2 = -x1.
        let g = builtin("cycle2").unwrap();
        assert_eq!(g.exact_argmin(0, 0, &[0.0, 0.7]), 0.7);
        assert_eq!(g.exact_argmin(1, 1, &[0.7, 0.0]), -0.7);
        // diverge2 lines x2 = x1/3 and x2 = x1/2.
        let g = builtin("diverge2").unwrap();
        assert_eq!(g.exact_argmin(0, 0, &[0.0, 0.5]), 1.5);
        assert_eq!(g.exact_argmin(1, 1, &[3.0, 0.0]), 1.5);
    }

    #[test]
    fn known_equilibria_have_zero_residual() {
        for name in builtin_names() {
            let g = builtin(name).unwrap();
            if let Some(p) = g.known_equilibria().representative() {
                assert!(g.stationarity_residuals(p).iter().all(|r| *r == 0.0), "{name}");
            }
        }
        let g = builtin("stall2").unwrap();
        assert_eq!(g.stationarity_residuals(&[2.0, -3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn quad_m_equilibrium_solves_linear_system() {
        // Independent oracle: Gauss-Seidel on the stacked first-order conditions.
        let g = builtin("quad-m").unwrap();
        let m = g.players();
        let mut x = vec![0.0; m];
        for _ in 0..200 {
            for i in 0..m {
                x[i] = g.exact_argmin(i, i, &x);
            }
        }
        let t = quad_m_target(m);
        assert!(distance(&x, &t) < 1e-12);
    }

    #[test]
    fn line_distance() {
        let k = KnownEquilibria::Line {
            through: Point::zeros(2),
            direction: vec![1.0, -1.5],
        };
        assert!(k.distance(&[2.0, -3.0]).unwrap() < 1e-15);
        assert!((k.distance(&[1.5, 1.0]).unwrap() - 3.25f64.sqrt()).abs() < 1e-12);
        assert_eq!(KnownEquilibria::Unknown.distance(&[0.0]), None);
    }
}
