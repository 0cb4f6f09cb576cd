use std::io::Write;

use serde::Serialize;

use crate::diagnostics::{average_points, EquilibriumReport};
use crate::game::Point;
use crate::solvers::{Algorithm, Trace};

/// Writes `k,x1..xm,res_norm,lambda,diameter,event`, one row per record.
pub fn write_trace_csv<W: Write>(out: W, trace: &Trace) -> Result<(), csv::Error> {
    let m = trace.final_point.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_string()];
    header.extend((1..=m).map(|i| format!("x{i}")));
    header.extend(["res_norm", "lambda", "diameter", "event"].map(String::from));
    w.write_record(&header)?;
    for r in &trace.records {
        let mut row = vec![r.k.to_string()];
        row.extend(r.x.iter().map(|v| format!("{v:e}")));
        row.push(format!("{:e}", r.residual_norm));
        row.push(format!("{:e}", r.lambda));
        row.push(format!("{:e}", r.diameter));
        row.push(r.event_label());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of one (algorithm, start) run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub start_label: String,
    pub start: Point,
    /// Terminal status name, or `error`.
    pub status: String,
    pub converged: bool,
    pub iterations: usize,
    pub oracle_calls: u64,
    pub final_point: Option<Point>,
    /// Largest per-coordinate subgradient residual at the final point.
    pub final_residual: Option<f64>,
    pub distance_to_known: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<EquilibriumReport>,
}

/// Terminal points of converged runs that lie within `cluster_tol` of each other,
/// chained.
#[derive(Debug, Clone, Serialize)]
pub struct Cluster {
    pub center: Point,
    /// Indices into `Report::runs`.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub game: String,
    pub players: usize,
    pub seed: u64,
    pub eps: f64,
    pub cluster_tol: f64,
    pub all_converged: bool,
    pub runs: Vec<RunSummary>,
    pub clusters: Vec<Cluster>,
}

/// Single-linkage clustering; groups are ordered by their first member.
pub fn cluster_points(points: &[Point], tol: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if points[i].distance(&points[j]) <= tol {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = root(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(vec![]);
        }
        groups[slot[r]].push(i);
    }
    groups
}

impl Report {
    pub fn new(game: &str, players: usize, seed: u64, eps: f64, cluster_tol: f64, runs: Vec<RunSummary>) -> Self {
        let candidates: Vec<(usize, Point)> = runs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.converged)
            .filter_map(|(i, r)| r.final_point.clone().map(|p| (i, p)))
            .collect();
        let points: Vec<Point> = candidates.iter().map(|(_, p)| p.clone()).collect();
        let clusters = cluster_points(&points, cluster_tol)
            .into_iter()
            .map(|g| {
                let members: Vec<Point> = g.iter().map(|&k| points[k].clone()).collect();
                Cluster {
                    center: average_points(&members, None).expect("nonempty cluster"),
                    members: g.iter().map(|&k| candidates[k].0).collect(),
                }
            })
            .collect();
        Report {
            game: game.to_string(),
            players,
            seed,
            eps,
            cluster_tol,
            all_converged: runs.iter().all(|r| r.converged),
            runs,
            clusters,
        }
    }

    /// Fixed-width comparison table, one row per run, then the clusters.
    pub fn table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3e}"));
        let mut s = format!(
            "{:<11} {:<6} {:>6} {:>12} {:>10} {:>10}  {}\n",
            "algorithm", "start", "iters", "oracle_calls", "residual", "dist_known", "status"
        );
        for r in &self.runs {
            s += &format!(
                "{:<11} {:<6} {:>6} {:>12} {:>10} {:>10}  {}\n",
                r.algorithm.name(),
                r.start_label,
                r.iterations,
                r.oracle_calls,
                opt(r.final_residual),
                opt(r.distance_to_known),
                r.status
            );
        }
        s += &format!("clusters ({}):\n", self.clusters.len());
        for c in &self.clusters {
            s += &format!("  {} <- runs {:?}\n", c.center, c.members);
        }
        s
    }
}
