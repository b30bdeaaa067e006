use std::collections::VecDeque;
use std::io::Write;

use log::{debug, warn};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::{edge_residual, Edge, EdgeKind, OptimizeOptions, PoseGraph};
use super::matching::{coarse_match_points, icp_refine, CoarseSearch, IcpOptions};
use super::submap::Submap;
use crate::error::{invalid, Error, Result};
use crate::geometry::Pose2;
use crate::pointcloud::{scan_to_points, Scan, WorldPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlamOptions {
    pub cell_size: f64,
    /// Scans per submap.
    pub submap_size: usize,
    pub loop_radius: f64,
    /// Most recent finished submaps skipped by loop search.
    pub recent_exclusion: usize,
    pub score_min: f64,
    /// Front-end matches scoring below this are treated as failures.
    pub min_match_score: f64,
    pub coarse: CoarseSearch,
    /// Search window for loop closures, wide enough to absorb drift.
    pub loop_search: CoarseSearch,
    pub icp: IcpOptions,
    pub sigma_xy: f64,
    pub sigma_theta: f64,
    /// Odometry drift per scan (standard deviations) assumed when checking a
    /// loop closure against the current estimate.
    pub drift_xy: f64,
    pub drift_theta: f64,
    /// Loop closures whose chi-square discrepancy with the current estimate
    /// exceeds this are rejected.
    pub loop_gate: f64,
    /// Information scale of an odometry edge kept after a failed match.
    pub failure_weight: f64,
    pub use_pgo: bool,
    pub optimizer: OptimizeOptions,
    pub initial_pose: Pose2,
}

impl Default for SlamOptions {
    fn default() -> Self {
        Self {
            cell_size: 0.25,
            submap_size: 5,
            loop_radius: 8.0,
            recent_exclusion: 4,
            score_min: 0.6,
            min_match_score: 0.3,
            coarse: CoarseSearch {
                prior_xy: 0.15,
                prior_theta: 2f64.to_radians(),
                ..CoarseSearch::default()
            },
            loop_search: CoarseSearch {
                half_x: 2.0,
                half_y: 2.0,
                half_theta: 30f64.to_radians(),
                prior_xy: 2.0,
                prior_theta: 30f64.to_radians(),
                ..CoarseSearch::default()
            },
            // matches start within one coarse step of the optimum
            icp: IcpOptions {
                kernel_width: 0.1,
                ..IcpOptions::default()
            },
            sigma_xy: 0.1,
            sigma_theta: 1f64.to_radians(),
            drift_xy: 0.1,
            drift_theta: 1f64.to_radians(),
            // 99% quantile of chi-square with 3 degrees of freedom
            loop_gate: 11.34,
            failure_weight: 0.01,
            use_pgo: true,
            optimizer: OptimizeOptions::default(),
            initial_pose: Pose2::identity(),
        }
    }
}

impl SlamOptions {
    fn base_information(&self) -> Matrix3<f64> {
        let a = 1.0 / (self.sigma_xy * self.sigma_xy);
        let b = 1.0 / (self.sigma_theta * self.sigma_theta);
        Matrix3::from_diagonal(&Vector3::new(a, a, b))
    }

    /// Information of an edge measured by a match with pose `z`, score
    /// `score` and point-to-surface constraint `constraint`. A perfectly
    /// conditioned match at score 1 carries `1/sigma_xy²` along each axis;
    /// `failure_weight` times the base information keeps it positive
    /// definite.
    fn match_information(&self, z: &Pose2, score: f64, constraint: &Matrix3<f64>) -> Matrix3<f64> {
        let (s, c) = z.heading.sin_cos();
        // residual translation is expressed in the measurement frame
        let m = Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
        let h = m * constraint * m.transpose() * (2.0 * score / (self.sigma_xy * self.sigma_xy));
        let h = (h + h.transpose()) * 0.5;
        h + self.base_information() * self.failure_weight
    }

    /// Chi-square distance between a loop measurement `z` and the current
    /// estimates of its end poses, allowing for `steps` scans of drift.
    fn loop_discrepancy(
        &self,
        from: &Pose2,
        to: &Pose2,
        z: &Pose2,
        information: &Matrix3<f64>,
        steps: f64,
    ) -> Option<f64> {
        let e = edge_residual(from, to, z);
        let drift = Matrix3::from_diagonal(&Vector3::new(
            self.drift_xy.powi(2),
            self.drift_xy.powi(2),
            self.drift_theta.powi(2),
        )) * steps;
        let cov = information.try_inverse()? + drift;
        let gate = cov.try_inverse()?;
        Some((e.transpose() * gate * e)[(0, 0)])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) || self.submap_size == 0 || !(self.loop_radius > 0.0) {
            return invalid("cell_size, submap_size and loop_radius must be positive");
        }
        if !(self.score_min > 0.0 && self.score_min <= 1.0) {
            return invalid(format!("score_min {} must lie in (0, 1]", self.score_min));
        }
        if !(self.sigma_xy > 0.0 && self.sigma_theta > 0.0 && self.failure_weight > 0.0) {
            return invalid("edge sigmas and failure weight must be positive");
        }
        if !(self.drift_xy >= 0.0 && self.drift_theta >= 0.0 && self.loop_gate > 0.0) {
            return invalid("drift must be non-negative and loop_gate positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopClosure {
    pub submap_id: usize,
    pub origin_node: usize,
    /// Scan pose in the submap frame.
    pub relative_pose: Pose2,
    pub score: f64,
    pub information: Matrix3<f64>,
}

/// Matches `points` against finished submaps near `current`, skipping the
/// `recent_exclusion` newest ones, and returns the best match scoring at
/// least `score_min` that agrees with the current estimate up to the drift
/// expected since the submap origin. `current` is the pose of the last node.
pub fn detect_loop(
    points: &[[f64; 2]],
    submaps: &[Submap],
    nodes: &[Pose2],
    current: &Pose2,
    opts: &SlamOptions,
) -> Result<Option<LoopClosure>> {
    if !(opts.score_min > 0.0 && opts.score_min <= 1.0) {
        return invalid(format!("score_min {} must lie in (0, 1]", opts.score_min));
    }
    let eligible = submaps.len().saturating_sub(opts.recent_exclusion);
    let found: Vec<Option<LoopClosure>> = submaps[..eligible]
        .par_iter()
        .map(|sm| {
            let origin = nodes[sm.origin_node];
            let d = (origin.x - current.x).hypot(origin.y - current.y);
            if d > opts.loop_radius || sm.points().len() < 3 {
                return None;
            }
            let initial = origin.between(current);
            let steps = (nodes.len() - 1).saturating_sub(sm.origin_node) as f64;
            let coarse = coarse_match_points(points, sm, &initial, &opts.loop_search).ok()?;
            if !coarse.converged {
                return None;
            }
            let icp = icp_refine(points, sm.points(), &coarse.relative_pose, &opts.icp).ok()?;
            if !icp.converged || icp.score < opts.score_min {
                return None;
            }
            let information = opts.match_information(&icp.relative_pose, icp.score, &icp.constraint);
            let chi2 = opts.loop_discrepancy(&origin, current, &icp.relative_pose, &information, steps)?;
            if chi2 > opts.loop_gate {
                debug!("loop to submap {} rejected: chi-square {chi2:.1}", sm.id);
                return None;
            }
            Some(LoopClosure {
                submap_id: sm.id,
                origin_node: sm.origin_node,
                relative_pose: icp.relative_pose,
                score: icp.score,
                information,
            })
        })
        .collect();
    Ok(found
        .into_iter()
        .flatten()
        .fold(None, |best: Option<LoopClosure>, c| match best {
            Some(b) if b.score >= c.score => Some(b),
            _ => Some(c),
        }))
}

#[derive(Debug, Clone)]
pub struct SlamResult {
    pub trajectory: Vec<Pose2>,
    pub map: Vec<WorldPoint>,
    pub graph: PoseGraph,
    pub loop_edges: usize,
    /// Scans whose front-end match failed.
    pub dropped: Vec<usize>,
}

impl SlamResult {
    pub fn write_trajectory<W: Write>(&self, w: W) -> Result<()> {
        write_trajectory_csv(&self.trajectory, w)
    }
}

pub fn write_trajectory_csv<W: Write>(poses: &[Pose2], mut w: W) -> Result<()> {
    writeln!(w, "id,x,y,heading")?;
    for (i, p) in poses.iter().enumerate() {
        writeln!(w, "{i},{:.9},{:.9},{:.9}", p.x, p.y, p.heading)?;
    }
    Ok(())
}

/// Sequential scan-matching SLAM with submaps, loop closure and pose graph
/// optimization.
pub fn run_slam(scans: &[Scan], opts: &SlamOptions) -> Result<SlamResult> {
    if scans.len() < 2 {
        return invalid(format!("SLAM needs at least 2 scans, got {}", scans.len()));
    }
    opts.validate()?;
    let base = opts.base_information();
    let mut graph = PoseGraph::new();
    let mut window: VecDeque<(usize, Vec<[f64; 2]>)> = VecDeque::new();
    let mut finished: Vec<Submap> = Vec::new();
    let mut building: Option<Submap> = None;
    let mut dropped = Vec::new();
    let mut loops = 0;

    for (t, scan) in scans.iter().enumerate() {
        let pts = scan.local_xy();
        let (pose, accepted) = if t == 0 {
            graph.add_node(opts.initial_pose);
            (opts.initial_pose, true)
        } else {
            let prev = graph.nodes[t - 1];
            // constant velocity prediction from the last two estimates
            let guess = if t >= 2 {
                prev.compose(&graph.nodes[t - 2].between(&prev))
            } else {
                prev
            };
            let matched = front_end(&pts, &window, &graph.nodes, &guess, opts);
            let (pose, info, ok) = match matched {
                Ok((pose, info)) => (pose, info, true),
                Err(e) => {
                    warn!("scan {t}: front-end match failed ({e}); keeping the previous pose");
                    dropped.push(t);
                    (prev, base * opts.failure_weight, false)
                }
            };
            graph.add_node(pose);
            graph.add_edge(Edge {
                from: t - 1,
                to: t,
                measurement: prev.between(&pose),
                information: info,
                kind: EdgeKind::Odometry,
            })?;
            (pose, ok)
        };
        if !accepted {
            continue;
        }

        window.push_back((t, pts.clone()));
        if window.len() > opts.submap_size {
            window.pop_front();
        }
        let sm = building.get_or_insert_with(|| Submap::new(finished.len(), t, opts.cell_size));
        let rel = graph.nodes[sm.origin_node].between(&pose);
        sm.insert(t, &pts, &rel);

        if t > 0 {
            if let Some(lc) = detect_loop(&pts, &finished, &graph.nodes, &pose, opts)? {
                debug!("scan {t}: loop to submap {} (score {:.2})", lc.submap_id, lc.score);
                graph.add_edge(Edge {
                    from: lc.origin_node,
                    to: t,
                    measurement: lc.relative_pose,
                    information: lc.information,
                    kind: EdgeKind::Loop,
                })?;
                loops += 1;
                if opts.use_pgo {
                    graph.optimize(0, &opts.optimizer)?;
                }
            }
        }
        if building.as_ref().is_some_and(|s| s.len() >= opts.submap_size) {
            finished.extend(building.take());
        }
    }
    if opts.use_pgo {
        graph.optimize(0, &opts.optimizer)?;
    }

    let mut map = Vec::new();
    for (t, scan) in scans.iter().enumerate() {
        if !dropped.contains(&t) {
            map.extend(scan_to_points(scan, &graph.nodes[t]));
        }
    }
    Ok(SlamResult {
        trajectory: graph.nodes.clone(),
        map,
        graph,
        loop_edges: loops,
        dropped,
    })
}

/// Matches a scan against the sliding window of recent scans, starting from
/// the predicted pose. Returns the world pose and the information of the
/// odometry edge leading to it.
fn front_end(
    pts: &[[f64; 2]],
    window: &VecDeque<(usize, Vec<[f64; 2]>)>,
    nodes: &[Pose2],
    guess: &Pose2,
    opts: &SlamOptions,
) -> Result<(Pose2, Matrix3<f64>)> {
    let reference: Vec<[f64; 2]> = window
        .iter()
        .flat_map(|(id, p)| p.iter().map(move |&q| nodes[*id].transform_point(q)))
        .collect();
    let local = Submap::from_points(0, 0, opts.cell_size, reference);
    let coarse = coarse_match_points(pts, &local, guess, &opts.coarse)?;
    if !coarse.converged {
        return Err(Error::NoMatch(format!("coarse score {:.2}", coarse.score)));
    }
    let icp = icp_refine(pts, local.points(), &coarse.relative_pose, &opts.icp)?;

    if !icp.converged {
        return Err(Error::NoMatch(format!(
            "ICP did not converge in {} iterations",
            icp.iterations
        )));
    }
    if icp.score < opts.min_match_score {
        return Err(Error::NoMatch(format!("ICP score {:.2}", icp.score)));
    }
    // the residual frame follows the matched heading whichever frame the
    // reference is in
    let info = opts.match_information(&icp.relative_pose, icp.score, &icp.constraint);
    Ok((icp.relative_pose, info))
}
