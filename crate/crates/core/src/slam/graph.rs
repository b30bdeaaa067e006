//! SE(2) pose graph and its Gauss-Newton optimizer.
//!
//! The residual of an edge `i → j` with measurement `z` is
//!
//! ```text
//! e_xy = R_zᵀ (R_iᵀ (t_j - t_i) - t_z)
//! e_θ  = wrap(θ_j - θ_i - θ_z)
//! ```

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{wrap_angle, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Odometry,
    Loop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    /// Pose of `to` in the frame of `from`.
    pub measurement: Pose2,
    pub information: Matrix3<f64>,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub rel_tol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            grad_tol: 1e-10,
            rel_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

fn rot(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

pub fn edge_residual(xi: &Pose2, xj: &Pose2, z: &Pose2) -> Vector3<f64> {
    let dt = Vector2::new(xj.x - xi.x, xj.y - xi.y);
    let e = rot(z.heading).transpose() * (rot(xi.heading).transpose() * dt - Vector2::new(z.x, z.y));
    Vector3::new(e.x, e.y, wrap_angle(xj.heading - xi.heading - z.heading))
}

/// Jacobians of [`edge_residual`] with respect to `(x, y, θ)` of `xi` and `xj`.
pub fn edge_jacobians(xi: &Pose2, xj: &Pose2, z: &Pose2) -> (Matrix3<f64>, Matrix3<f64>) {
    let rzt = rot(z.heading).transpose();
    let rit = rot(xi.heading).transpose();
    let (s, c) = xi.heading.sin_cos();
    let drit = Matrix2::new(-s, c, -c, -s);
    let dt = Vector2::new(xj.x - xi.x, xj.y - xi.y);
    let m = rzt * rit;
    let dtheta = rzt * drit * dt;
    let a = Matrix3::new(
        -m[(0, 0)],
        -m[(0, 1)],
        dtheta.x,
        -m[(1, 0)],
        -m[(1, 1)],
        dtheta.y,
        0.0,
        0.0,
        -1.0,
    );
    let b = Matrix3::new(m[(0, 0)], m[(0, 1)], 0.0, m[(1, 0)], m[(1, 1)], 0.0, 0.0, 0.0, 1.0);
    (a, b)
}

fn is_spd(m: &Matrix3<f64>) -> bool {
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    (m - m.transpose()).abs().max() <= 1e-9 * scale && m.iter().all(|v| v.is_finite()) && m.cholesky().is_some()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoseGraph {
    pub nodes: Vec<Pose2>,
    edges: Vec<Edge>,
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, pose: Pose2) -> usize {
        self.nodes.push(pose);
        self.nodes.len() - 1
    }

    pub fn add_edge(&mut self, edge: Edge) -> Result<usize> {
        let n = self.nodes.len();
        if edge.from >= n || edge.to >= n {
            return invalid(format!(
                "edge {} -> {} references a missing node ({n} nodes)",
                edge.from, edge.to
            ));
        }
        if edge.from == edge.to {
            return invalid("self-loop edge");
        }
        if !is_spd(&edge.information) {
            return Err(Error::NotPositiveDefinite { edge: self.edges.len() });
        }
        self.edges.push(edge);
        Ok(self.edges.len() - 1)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    pub fn edge_cost(&self, nodes: &[Pose2], e: &Edge) -> f64 {
        let r = edge_residual(&nodes[e.from], &nodes[e.to], &e.measurement);
        (r.transpose() * e.information * r)[(0, 0)]
    }

    /// `Σ eᵀ Ω e` over all edges.
    pub fn total_cost(&self) -> f64 {
        self.cost_of(&self.nodes)
    }

    fn cost_of(&self, nodes: &[Pose2]) -> f64 {
        self.edges.iter().map(|e| self.edge_cost(nodes, e)).sum()
    }

    /// Number of nodes reachable from `start` ignoring edge direction.
    pub fn reachable_from(&self, start: usize) -> usize {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            adj[e.from].push(e.to);
            adj[e.to].push(e.from);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count
    }

    fn normal_equations(&self, fixed: usize) -> (DMatrix<f64>, DVector<f64>) {
        let dim = 3 * self.nodes.len();
        let mut h = DMatrix::zeros(dim, dim);
        let mut b = DVector::zeros(dim);
        for e in &self.edges {
            let (xi, xj) = (&self.nodes[e.from], &self.nodes[e.to]);
            let r = edge_residual(xi, xj, &e.measurement);
            let (ja, jb) = edge_jacobians(xi, xj, &e.measurement);
            let blocks = [(e.from, ja), (e.to, jb)];
            for (u, ju) in &blocks {
                let g = ju.transpose() * e.information * r;
                for k in 0..3 {
                    b[3 * u + k] += g[k];
                }
                for (v, jv) in &blocks {
                    let blk = ju.transpose() * e.information * jv;
                    let mut view = h.view_mut((3 * u, 3 * v), (3, 3));
                    view += blk;
                }
            }
        }
        // gauge: pin the anchor
        for k in 0..3 {
            let i = 3 * fixed + k;
            h.row_mut(i).fill(0.0);
            h.column_mut(i).fill(0.0);
            h[(i, i)] = 1.0;
            b[i] = 0.0;
        }
        (h, b)
    }

    fn apply(&self, dx: &DVector<f64>) -> Vec<Pose2> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, p)| Pose2::new(p.x + dx[3 * i], p.y + dx[3 * i + 1], p.heading + dx[3 * i + 2]))
            .collect()
    }

    /// Gauss-Newton with Levenberg damping on rejected steps. Node `fixed`
    /// stays put.
    pub fn optimize(&mut self, fixed: usize, opts: &OptimizeOptions) -> Result<OptimizeReport> {
        let n = self.nodes.len();
        if fixed >= n {
            return invalid(format!("anchor node {fixed} does not exist ({n} nodes)"));
        }
        let reached = self.reachable_from(fixed);
        if reached != n {
            return Err(Error::DisconnectedGraph { reached, total: n });
        }
        for (k, e) in self.edges.iter().enumerate() {
            if !is_spd(&e.information) {
                return Err(Error::NotPositiveDefinite { edge: k });
            }
        }
        let mut cost = self.total_cost();
        let initial_cost = cost;
        let mut history = vec![cost];
        let mut iterations = 0;
        while iterations < opts.max_iter {
            let (h, b) = self.normal_equations(fixed);
            if b.norm() < opts.grad_tol {
                break;
            }
            iterations += 1;
            let max_diag = (0..h.nrows()).map(|i| h[(i, i)]).fold(0.0, f64::max);
            let mut lambda = 0.0;
            let mut accepted = None;
            for _ in 0..12 {
                let mut damped = h.clone();
                for i in 0..damped.nrows() {
                    damped[(i, i)] += lambda * h[(i, i)].max(1e-12 * max_diag);
                }
                if let Some(ch) = damped.cholesky() {
                    let dx = ch.solve(&(-&b));
                    let cand = self.apply(&dx);
                    let c = self.cost_of(&cand);
                    if c <= cost {
                        accepted = Some((cand, c));
                        break;
                    }
                }
                lambda = if lambda == 0.0 { 1e-4 } else { lambda * 10.0 };
            }
            let Some((cand, c)) = accepted else { break };
            let decrease = cost - c;
            self.nodes = cand;
            cost = c;
            history.push(cost);
            if decrease <= opts.rel_tol * cost.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        Ok(OptimizeReport {
            iterations,
            initial_cost,
            final_cost: cost,
            cost_history: history,
        })
    }

    /// g2o-style text: `VERTEX_SE2 id x y θ`, then
    /// `EDGE_SE2 from to dx dy dθ i11 i12 i13 i22 i23 i33`; loop edges are
    /// preceded by a `# loop` comment.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(w, "VERTEX_SE2 {i} {:.9} {:.9} {:.9}", p.x, p.y, p.heading)?;
        }
        for e in &self.edges {
            if e.kind == EdgeKind::Loop {
                writeln!(w, "# loop")?;
            }
            let m = &e.information;
            let z = &e.measurement;
            writeln!(
                w,
                "EDGE_SE2 {} {} {:.9} {:.9} {:.9} {:.6e} {:.6e} {:.6e} {:.6e} {:.6e} {:.6e}",
                e.from,
                e.to,
                z.x,
                z.y,
                z.heading,
                m[(0, 0)],
                m[(0, 1)],
                m[(0, 2)],
                m[(1, 1)],
                m[(1, 2)],
                m[(2, 2)]
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn edge(from: usize, to: usize, z: Pose2, kind: EdgeKind) -> Edge {
        Edge {
            from,
            to,
            measurement: z,
            information: Matrix3::from_diagonal(&Vector3::new(100.0, 100.0, 400.0)),
            kind,
        }
    }

    #[test]
    fn consistent_chain_is_a_fixed_point() {
        let steps = [
            Pose2::new(1.0, 0.0, 0.3),
            Pose2::new(0.5, 0.2, -0.1),
            Pose2::new(0.8, -0.4, 1.2),
        ];
        let mut g = PoseGraph::new();
        let mut p = Pose2::identity();
        g.add_node(p);
        for (k, s) in steps.iter().enumerate() {
            p = p.compose(s);
            g.add_node(p);
            g.add_edge(edge(k, k + 1, *s, EdgeKind::Odometry)).unwrap();
        }
        let before = g.nodes.clone();
        assert!(g.total_cost() < 1e-20);
        let rep = g.optimize(0, &OptimizeOptions::default()).unwrap();
        assert!(rep.final_cost < 1e-20);
        for (a, b) in before.iter().zip(&g.nodes) {
            assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12 && (a.heading - b.heading).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_measurement_has_zero_residual() {
        let a = Pose2::new(1.0, 2.0, 2.9);
        let b = Pose2::new(-3.0, 0.5, -2.8);
        assert!(edge_residual(&a, &b, &a.between(&b)).norm() < 1e-12);
    }

    #[test]
    fn triangle_cost_decreases() {
        let mut g = PoseGraph::new();
        g.add_node(Pose2::identity());
        g.add_node(Pose2::new(1.0, 0.0, 0.0));
        g.add_node(Pose2::new(1.0, 1.0, 1.5));
        g.add_edge(edge(0, 1, Pose2::new(1.0, 0.0, 0.0), EdgeKind::Odometry))
            .unwrap();
        g.add_edge(edge(1, 2, Pose2::new(0.0, 1.0, 1.5), EdgeKind::Odometry))
            .unwrap();
        g.add_edge(edge(0, 2, Pose2::new(1.2, 0.9, 1.4), EdgeKind::Loop))
            .unwrap();
        let rep = g.optimize(0, &OptimizeOptions::default()).unwrap();
        assert!(rep.final_cost < rep.initial_cost);
        for w in rep.cost_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert_eq!(g.nodes[0], Pose2::identity());
        assert_eq!(g.count(EdgeKind::Loop), 1);
    }

    #[test]
    fn errors() {
        let mut g = PoseGraph::new();
        g.add_node(Pose2::identity());
        g.add_node(Pose2::identity());
        g.add_node(Pose2::identity());
        g.add_edge(edge(0, 1, Pose2::identity(), EdgeKind::Odometry)).unwrap();
        assert!(matches!(
            g.optimize(0, &OptimizeOptions::default()),
            Err(Error::DisconnectedGraph { reached: 2, total: 3 })
        ));
        let mut bad = edge(1, 2, Pose2::identity(), EdgeKind::Odometry);
        bad.information[(2, 2)] = -1.0;
        assert!(matches!(g.add_edge(bad), Err(Error::NotPositiveDefinite { .. })));
        let mut asym = edge(1, 2, Pose2::identity(), EdgeKind::Odometry);
        asym.information[(0, 1)] = 5.0;
        assert!(g.add_edge(asym).is_err());
        assert!(g.add_edge(edge(1, 7, Pose2::identity(), EdgeKind::Odometry)).is_err());
        assert!(g.optimize(9, &OptimizeOptions::default()).is_err());
    }

    #[test]
    fn dump_format() {
        let mut g = PoseGraph::new();
        g.add_node(Pose2::identity());
        g.add_node(Pose2::new(1.0, 0.0, 0.0));
        g.add_edge(edge(0, 1, Pose2::new(1.0, 0.0, 0.0), EdgeKind::Loop))
            .unwrap();
        let mut buf = Vec::new();
        g.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("VERTEX_SE2 0 "));
        assert_eq!(lines[2], "# loop");
        assert!(lines[3].starts_with("EDGE_SE2 0 1 1.000000000 "));
    }

    fn random_pose(rng: &mut impl Rng) -> Pose2 {
        Pose2::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-3.0..3.0),
        )
    }

    #[test]
    fn jacobians_match_central_differences() {
        let mut rng = stream_rng(21, &[]);
        let h = 1e-6;
        for _ in 0..100 {
            let (xi, xj, z) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
            // keep the angular residual away from the wrap discontinuity
            if wrap_angle(xj.heading - xi.heading - z.heading).abs() > 3.0 {
                continue;
            }
            let (ja, jb) = edge_jacobians(&xi, &xj, &z);
            for (which, jac) in [(0, ja), (1, jb)] {
                for k in 0..3 {
                    let perturb = |p: &Pose2, d: f64| {
                        let mut v = [p.x, p.y, p.heading];
                        v[k] += d;
                        Pose2 {
                            x: v[0],
                            y: v[1],
                            heading: v[2],
                        }
                    };
                    let (plus, minus) = if which == 0 {
                        (
                            edge_residual(&perturb(&xi, h), &xj, &z),
                            edge_residual(&perturb(&xi, -h), &xj, &z),
                        )
                    } else {
                        (
                            edge_residual(&xi, &perturb(&xj, h), &z),
                            edge_residual(&xi, &perturb(&xj, -h), &z),
                        )
                    };
                    let num = (plus - minus) / (2.0 * h);
                    let col = jac.column(k);
                    let err = (num - col).norm();
                    assert!(err <= 1e-6 * col.norm().max(1.0), "err {err}");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn gauge_invariance(seed in any::<u64>(), gx in -3.0f64..3.0, gy in -3.0f64..3.0, gt in -3.0f64..3.0) {
            let mut rng = stream_rng(seed, &[]);
            let mut g = PoseGraph::new();
            let mut truth = vec![Pose2::identity()];
            for k in 1..6 {
                let step = Pose2::new(1.0, rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
                truth.push(truth[k - 1].compose(&step));
            }
            for (k, t) in truth.iter().enumerate() {
                g.add_node(Pose2::new(t.x + rng.random_range(-0.2..0.2), t.y + rng.random_range(-0.2..0.2), t.heading + rng.random_range(-0.05..0.05)));
                if k > 0 {
                    let z = truth[k - 1].between(t);
                    let noisy = Pose2::new(z.x + rng.random_range(-0.05..0.05), z.y, z.heading + rng.random_range(-0.02..0.02));
                    g.add_edge(edge(k - 1, k, noisy, EdgeKind::Odometry)).unwrap();
                }
            }
            g.add_edge(edge(0, 5, truth[0].between(&truth[5]), EdgeKind::Loop)).unwrap();
            let xf = Pose2::new(gx, gy, gt);
            let mut moved = g.clone();
            moved.nodes = g.nodes.iter().map(|p| xf.compose(p)).collect();
            let ra = g.optimize(0, &OptimizeOptions::default()).unwrap();
            let rb = moved.optimize(0, &OptimizeOptions::default()).unwrap();
            prop_assert!((ra.final_cost - rb.final_cost).abs() < 1e-9 * ra.initial_cost.max(1.0));
            for (a, b) in g.nodes.iter().zip(&moved.nodes) {
                let a2 = xf.compose(a);
                prop_assert!((a2.x - b.x).abs() < 1e-7 && (a2.y - b.y).abs() < 1e-7);
                prop_assert!(wrap_angle(a2.heading - b.heading).abs() < 1e-7);
            }
        }
    }
}
