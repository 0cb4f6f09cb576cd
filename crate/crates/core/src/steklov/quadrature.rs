use super::{unit_ball_volume, AveragingSet, SetKind, SteklovError};

pub const DEFAULT_NODE_CAP: usize = 1_000_000;

/// Equal-weight quadrature rule over an averaging set. Nodes are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    m: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.m..(j + 1) * self.m]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.nodes.chunks_exact(self.m)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn equal_weights(m: usize, nodes: Vec<f64>) -> Self {
        let n = nodes.len() / m;
        QuadratureRule {
            m,
            nodes,
            weights: vec![1.0 / n as f64; n],
        }
    }
}

pub fn make_quadrature(
    set: &AveragingSet,
    level: usize,
    seed: u64,
) -> Result<QuadratureRule, SteklovError> {
    make_quadrature_capped(set, level, seed, DEFAULT_NODE_CAP)
}

/// Builds a deterministic rule: a midpoint tensor grid with `level^m` cells for the
/// cube, and Halton points rejected into the ball for the ball. Ball nodes come in
/// antipodal pairs (the count is rounded up to even) so odd integrands average to
/// zero. The center is never a node, which keeps a flat zero region in the smoothed
/// subgradient of a kinked loss around a symmetric kink.
pub fn make_quadrature_capped(
    set: &AveragingSet,
    level: usize,
    seed: u64,
    cap: usize,
) -> Result<QuadratureRule, SteklovError> {
    if level == 0 {
        return Err(SteklovError::ZeroLevel);
    }
    let m = set.m;
    let grid = (level as f64).powi(m as i32);
    if grid > cap as f64 {
        return Err(SteklovError::NodeBudget { nodes: grid, cap });
    }
    let r = set.radius;
    match set.kind {
        SetKind::Cube => {
            let n = grid as usize;
            let coord = |k: usize| r * (-1.0 + (2 * k + 1) as f64 / level as f64);
            let mut nodes = Vec::with_capacity(n * m);
            for flat in 0..n {
                let mut rem = flat;
                // Last coordinate varies fastest.
                let mut idx = vec![0; m];
                for slot in idx.iter_mut().rev() {
                    *slot = rem % level;
                    rem /= level;
                }
                nodes.extend(idx.into_iter().map(coord));
            }
            Ok(QuadratureRule::equal_weights(m, nodes))
        }
        SetKind::Ball => {
            let ratio = unit_ball_volume(m) / 2f64.powi(m as i32);
            let n = ((grid * ratio).ceil() as usize).max(1).next_multiple_of(2);
            let primes = first_primes(m);
            let mut index = 1 + (seed % (1 << 40)) * 104_729;
            let mut half = Vec::with_capacity((n / 2) * m);
            let mut y = vec![0.0; m];
            while half.len() < (n / 2) * m {
                for (slot, p) in y.iter_mut().zip(&primes) {
                    *slot = r * (2.0 * radical_inverse(index, *p) - 1.0);
                }
                index += 1;
                if set.contains(&y) {
                    half.extend_from_slice(&y);
                }
            }
            let mut nodes = Vec::with_capacity(n * m);
            for p in half.chunks_exact(m) {
                nodes.extend_from_slice(p);
                nodes.extend(p.iter().map(|v| -v));
            }
            Ok(QuadratureRule::equal_weights(m, nodes))
        }
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let (mut f, mut out) = (inv, 0.0);
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

fn first_primes(k: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(k);
    let mut c = 2u64;
    while primes.len() < k {
        if primes.iter().take_while(|p| *p * *p <= c).all(|p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_level_two() {
        let set = AveragingSet::cube(0.5, 2).unwrap();
        let q = make_quadrature(&set, 2, 0).unwrap();
        assert_eq!(q.len(), 4);
        let nodes: Vec<_> = q.nodes().map(|n| n.to_vec()).collect();
        assert_eq!(
            nodes,
            vec![
                vec![-0.25, -0.25],
                vec![-0.25, 0.25],
                vec![0.25, -0.25],
                vec![0.25, 0.25]
            ]
        );
        assert!(q.weights().iter().all(|w| *w == 0.25));
    }

    #[test]
    fn weights_sum_to_one_and_nodes_inside() {
        for (set, level) in [
            (AveragingSet::cube(0.3, 3).unwrap(), 5),
            (AveragingSet::ball(0.7, 2).unwrap(), 9),
            (AveragingSet::ball(1.0, 5).unwrap(), 3),
        ] {
            let q = make_quadrature(&set, level, 7).unwrap();
            let s: f64 = q.weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
            assert!(q.nodes().all(|y| set.contains(y)));
        }
    }

    #[test]
    fn ball_one_dimensional() {
        let set = AveragingSet::ball(0.4, 1).unwrap();
        let q = make_quadrature(&set, 7, 3).unwrap();
        assert_eq!(q.len(), 8);
        assert!(q.weights().iter().all(|w| *w == 1.0 / 8.0));
        assert!(q.nodes().all(|y| y[0].abs() <= 0.4));
    }

    #[test]
    fn ball_rule_is_symmetric_and_seeded() {
        let set = AveragingSet::ball(1.0, 2).unwrap();
        let a = make_quadrature(&set, 10, 1).unwrap();
        let b = make_quadrature(&set, 10, 1).unwrap();
        let c = make_quadrature(&set, 10, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 80);
        let mean: Vec<f64> = (0..2)
            .map(|k| a.nodes().map(|y| y[k]).sum::<f64>())
            .collect();
        assert!(mean.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn node_budget() {
        let set = AveragingSet::cube(1.0, 5).unwrap();
        assert!(matches!(
            make_quadrature(&set, 20, 0),
            Err(SteklovError::NodeBudget { .. })
        ));
        assert!(matches!(make_quadrature(&set, 0, 0), Err(SteklovError::ZeroLevel)));
    }
}
