//! Scan-to-submap matching: exhaustive correlative search followed by
//! trimmed point-to-line ICP against the reference surface.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::submap::Submap;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose2};
use crate::pointcloud::Scan;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Pose of the scan in the reference frame.
    pub relative_pose: Pose2,
    pub score: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Trimmed mean Cauchy cost of the correspondence distances at the best
    /// pose found after each ICP iteration.
    pub cost_history: Vec<f64>,
    /// Mean of `JᵀJ` over inlier correspondences, `J` being the gradient of
    /// the point-to-surface distance with respect to `(x, y, heading)` of
    /// `relative_pose`. Nearly singular along directions the geometry leaves
    /// unconstrained; zero for coarse matches.
    pub constraint: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoarseSearch {
    pub half_x: f64,
    pub half_y: f64,
    pub half_theta: f64,
    pub step_xy: f64,
    pub step_theta: f64,
    /// Scores below this are reported as not converged.
    pub min_score: f64,
    /// Candidates are ranked by score times a Gaussian prior on their offset
    /// from the initial guess, with these standard deviations. Infinite
    /// values disable the prior.
    pub prior_xy: f64,
    pub prior_theta: f64,
}

impl Default for CoarseSearch {
    fn default() -> Self {
        Self {
            half_x: 1.0,
            half_y: 1.0,
            half_theta: 10f64.to_radians(),
            step_xy: 0.1,
            step_theta: 1f64.to_radians(),
            min_score: 0.3,
            prior_xy: f64::INFINITY,
            prior_theta: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpOptions {
    pub max_iter: usize,
    /// Stop once the pose update is below this (meters and radians).
    pub tol: f64,
    /// Fraction of correspondences kept, closest first.
    pub trim: f64,
    /// Correspondences closer than this count toward the score.
    pub inlier_distance: f64,
    /// Scale of the Cauchy kernel weighting correspondences by distance.
    pub kernel_width: f64,
    /// Reference points closer than this are treated as sampling the same
    /// surface.
    pub max_link: f64,
}

impl Default for IcpOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-4,
            trim: 0.8,
            inlier_distance: 0.2,
            kernel_width: 1.0,
            max_link: 0.6,
        }
    }
}

fn steps(half: f64, step: f64) -> Vec<f64> {
    let n = (half / step).round() as i64;
    (-n..=n).map(|k| k as f64 * step).collect()
}

pub fn coarse_match(scan: &Scan, reference: &Submap, initial: &Pose2, search: &CoarseSearch) -> Result<MatchResult> {
    coarse_match_points(&scan.local_xy(), reference, initial, search)
}

/// Exhaustive search over the window around `initial` maximizing the mean
/// occupancy score of the transformed points, weighted by the offset prior.
/// Ties go to the candidate closest to `initial`. The reported score is the
/// unweighted one.
pub fn coarse_match_points(
    points: &[[f64; 2]],
    reference: &Submap,
    initial: &Pose2,
    search: &CoarseSearch,
) -> Result<MatchResult> {
    if points.is_empty() {
        return Err(Error::NoMatch("empty scan".into()));
    }
    if reference.grid().is_empty() {
        return Err(Error::NoMatch("empty reference".into()));
    }
    if !(search.step_xy > 0.0
        && search.step_theta > 0.0
        && search.half_x >= 0.0
        && search.half_y >= 0.0
        && search.half_theta >= 0.0
        && search.prior_xy > 0.0
        && search.prior_theta > 0.0)
    {
        return Err(Error::InvalidArgument("search window must be positive".into()));
    }
    let grid = reference.grid();
    let xs = steps(search.half_x, search.step_xy);
    let ys = steps(search.half_y, search.step_xy);
    let ts = steps(search.half_theta, search.step_theta);
    let n = points.len() as f64;
    let (kxy, kt) = (0.5 / search.prior_xy.powi(2), 0.5 / search.prior_theta.powi(2));
    let mut best = (f64::NEG_INFINITY, f64::INFINITY, *initial, 0.0);
    let mut rotated = vec![[0.0; 2]; points.len()];
    for &dt in &ts {
        let theta = initial.heading + dt;
        let (s, c) = theta.sin_cos();
        for (r, p) in rotated.iter_mut().zip(points) {
            *r = [c * p[0] - s * p[1], s * p[0] + c * p[1]];
        }
        for &dx in &xs {
            for &dy in &ys {
                let (tx, ty) = (initial.x + dx, initial.y + dy);
                let score = rotated
                    .iter()
                    .map(|r| grid.interpolated([r[0] + tx, r[1] + ty]))
                    .sum::<f64>()
                    / n;
                let weighted = score * (-(dx * dx + dy * dy) * kxy - dt * dt * kt).exp();
                let dist =
                    (dx / search.step_xy).powi(2) + (dy / search.step_xy).powi(2) + (dt / search.step_theta).powi(2);
                if weighted > best.0 || (weighted == best.0 && dist < best.1) {
                    best = (weighted, dist, Pose2::new(tx, ty, theta), score);
                }
            }
        }
    }
    Ok(MatchResult {
        relative_pose: best.2,
        score: best.3.clamp(0.0, 1.0),
        converged: best.3 >= search.min_score,
        iterations: 1,
        cost_history: Vec::new(),
        constraint: Matrix3::zeros(),
    })
}

/// Reference points joined to nearby neighbours, approximating the surface
/// the points were sampled from.
struct Surface<'a> {
    points: &'a [[f64; 2]],
    links: Vec<Vec<usize>>,
}

const LINKS_PER_POINT: usize = 2;

impl<'a> Surface<'a> {
    fn new(points: &'a [[f64; 2]], max_link: f64) -> Self {
        let max2 = max_link * max_link;
        let links = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut near: Vec<(f64, usize)> = points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(j, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2), j))
                    .filter(|&(d, _)| d > 0.0 && d <= max2)
                    .collect();
                near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                near.into_iter().take(LINKS_PER_POINT).map(|(_, j)| j).collect()
            })
            .collect();
        Self { points, links }
    }

    /// Closest point on the links of the nearest few reference vertices,
    /// with the squared distance to it and whether `p` projects inside a
    /// link rather than past the end of the surface.
    fn closest(&self, p: [f64; 2]) -> Hit {
        let mut near = [(usize::MAX, f64::INFINITY); NEAREST_VERTICES];
        for (i, q) in self.points.iter().enumerate() {
            let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            if d < near[NEAREST_VERTICES - 1].1 {
                let mut k = NEAREST_VERTICES - 1;
                while k > 0 && near[k - 1].1 > d {
                    near[k] = near[k - 1];
                    k -= 1;
                }
                near[k] = (i, d);
            }
        }
        let mut out = Hit {
            point: self.points[near[0].0],
            dist2: near[0].1,
            inside: false,
            normal: None,
        };
        for &(i, _) in near.iter().take_while(|n| n.0 != usize::MAX) {
            let a = self.points[i];
            for &j in &self.links[i] {
                let b = self.points[j];
                let e = [b[0] - a[0], b[1] - a[1]];
                let len2 = e[0] * e[0] + e[1] * e[1];
                let t = ((p[0] - a[0]) * e[0] + (p[1] - a[1]) * e[1]) / len2;
                let tc = t.clamp(0.0, 1.0);
                let c = [a[0] + tc * e[0], a[1] + tc * e[1]];
                let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                if d < out.dist2 || (d == out.dist2 && !out.inside && t == tc) {
                    let len = len2.sqrt();
                    out = Hit {
                        point: c,
                        dist2: d,
                        inside: t == tc,
                        normal: Some([-e[1] / len, e[0] / len]),
                    };
                }
            }
        }
        out
    }
}

const NEAREST_VERTICES: usize = 4;

/// ICP stops once this many iterations pass without lowering the cost.
const STALL_ITERATIONS: usize = 5;

struct Hit {
    point: [f64; 2],
    dist2: f64,
    inside: bool,
    /// Unit normal of the link the point projects onto.
    normal: Option<[f64; 2]>,
}

/// Closed-form rigid transform minimizing `Σ |R p + t - q|²`.
pub fn rigid_align(pairs: &[([f64; 2], [f64; 2])]) -> Pose2 {
    let n = pairs.len() as f64;
    let (mut pc, mut qc) = ([0.0; 2], [0.0; 2]);
    for (p, q) in pairs {
        pc[0] += p[0] / n;
        pc[1] += p[1] / n;
        qc[0] += q[0] / n;
        qc[1] += q[1] / n;
    }
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (p, q) in pairs {
        let (a, b) = ([p[0] - pc[0], p[1] - pc[1]], [q[0] - qc[0], q[1] - qc[1]]);
        sxx += a[0] * b[0] + a[1] * b[1];
        sxy += a[0] * b[1] - a[1] * b[0];
    }
    let theta = sxy.atan2(sxx);
    let (s, c) = theta.sin_cos();
    Pose2::new(qc[0] - (c * pc[0] - s * pc[1]), qc[1] - (s * pc[0] + c * pc[1]), theta)
}

/// Ratio of the smaller to the larger principal spread of the points.
fn spread_ratio(points: &[[f64; 2]]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        a += dx * dx;
        b += dx * dy;
        c += dy * dy;
    }
    let tr = a + c;
    let disc = ((a - c).powi(2) + 4.0 * b * b).sqrt();
    let (l1, l2) = ((tr + disc) / 2.0, (tr - disc) / 2.0);
    if l1 <= 0.0 {
        0.0
    } else {
        (l2.max(0.0) / l1).sqrt()
    }
}

/// Collinear point sets leave rotation/translation along the line
/// unobservable.
const COLLINEAR_RATIO: f64 = 1e-3;

/// Gradient of `n·w` with respect to `(x, y, heading)` of `pose`, for a scan
/// point that `pose` maps to `w`.
fn line_jacobian(n: [f64; 2], w: [f64; 2], pose: &Pose2) -> Vector3<f64> {
    Vector3::new(n[0], n[1], n[1] * (w[0] - pose.x) - n[0] * (w[1] - pose.y))
}

/// Relative damping keeping the normal equations solvable along directions
/// the geometry does not constrain.
const DAMPING: f64 = 1e-6;

/// Trimmed point-to-line ICP aligning `scan` onto `reference` starting from
/// `initial`.
pub fn icp_refine(
    scan: &[[f64; 2]],
    reference: &[[f64; 2]],
    initial: &Pose2,
    opts: &IcpOptions,
) -> Result<MatchResult> {
    if scan.len() < 3 || reference.len() < 3 {
        return Err(Error::NoMatch(format!(
            "ICP needs at least 3 points per set, got {} and {}",
            scan.len(),
            reference.len()
        )));
    }
    if !(opts.trim > 0.0 && opts.trim <= 1.0) || opts.max_iter == 0 || !(opts.kernel_width > 0.0) {
        return Err(Error::InvalidArgument(
            "trim must lie in (0, 1], max_iter >= 1 and kernel_width > 0".into(),
        ));
    }
    let degenerate = spread_ratio(scan) < COLLINEAR_RATIO || spread_ratio(reference) < COLLINEAR_RATIO;
    let keep = ((scan.len() as f64 * opts.trim).ceil() as usize).clamp(3, scan.len());
    let surface = Surface::new(reference, opts.max_link);
    let c2 = opts.kernel_width * opts.kernel_width;
    let rho = |d2: f64| 0.5 * c2 * (d2 / c2).ln_1p();
    let mut pose = *initial;
    let mut best = (f64::INFINITY, pose);
    let mut stale = 0;
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        // Points past the end of a reference surface would drag the scan
        // along it; they count toward the cost but not the alignment.
        let mut corr: Vec<(f64, Option<([f64; 2], [f64; 2], [f64; 2])>)> = scan
            .iter()
            .map(|&p| {
                let w = pose.transform_point(p);
                let h = surface.closest(w);
                let pair = match h.normal {
                    Some(n) if h.inside => Some((w, h.point, n)),
                    _ => None,
                };
                (h.dist2, pair)
            })
            .collect();
        corr.sort_by(|a, b| a.0.total_cmp(&b.0));
        corr.truncate(keep);
        let cost = corr.iter().map(|c| rho(c.0)).sum::<f64>() / keep as f64;
        if cost < best.0 {
            best = (cost, pose);
            stale = 0;
        } else {
            stale += 1;
        }
        history.push(best.0);
        if stale >= STALL_ITERATIONS {
            // the correspondences keep cycling without improving
            converged = true;
            break;
        }
        let pairs: Vec<_> = corr.iter().filter_map(|c| c.1.map(|p| (c.0, p))).collect();
        if pairs.len() < 3 {
            break;
        }
        // reweighted Gauss-Newton on the point-to-line distances; the step
        // rotates the scan about its own origin
        let (mut h, mut g) = (Matrix3::zeros(), Vector3::zeros());
        for (d2, (w, q, n)) in &pairs {
            let weight = 1.0 / (1.0 + d2 / c2);
            let j = line_jacobian(*n, *w, &pose);
            let r = n[0] * (w[0] - q[0]) + n[1] * (w[1] - q[1]);
            h += j * j.transpose() * weight;
            g += j * (r * weight);
        }
        h += Matrix3::identity() * (DAMPING * h.trace() / 3.0).max(f64::MIN_POSITIVE);
        let Some(step) = h.cholesky().map(|c| -c.solve(&g)) else {
            break;
        };
        pose = Pose2::new(pose.x + step.x, pose.y + step.y, pose.heading + step.z);
        if step.x.hypot(step.y) < opts.tol && step.z.abs() < opts.tol {
            converged = true;
            break;
        }
    }
    let pose = best.1;
    let inlier2 = opts.inlier_distance * opts.inlier_distance;
    let mut inliers = 0;
    let mut constraint = Matrix3::zeros();
    for &p in scan {
        let w = pose.transform_point(p);
        let h = surface.closest(w);
        if h.dist2 > inlier2 {
            continue;
        }
        inliers += 1;
        if let (true, Some(n)) = (h.inside, h.normal) {
            let j = line_jacobian(n, w, &pose);
            constraint += j * j.transpose();
        }
    }
    if inliers > 0 {
        constraint /= inliers as f64;
    }
    Ok(MatchResult {
        relative_pose: Pose2::new(pose.x, pose.y, wrap_angle(pose.heading)),
        score: inliers as f64 / scan.len() as f64,
        converged: converged && !degenerate,
        iterations,
        cost_history: history,
        constraint,
    })
}
