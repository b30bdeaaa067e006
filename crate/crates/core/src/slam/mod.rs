//! Scan-matching SLAM: correlative search plus ICP against submaps, loop
//! closure and SE(2) pose graph optimization.

mod graph;
mod grid;
mod matching;
mod pipeline;
mod submap;

pub use graph::{edge_jacobians, edge_residual, Edge, EdgeKind, OptimizeOptions, OptimizeReport, PoseGraph};
pub use grid::OccupancyGrid;
pub use matching::{coarse_match, coarse_match_points, icp_refine, rigid_align, CoarseSearch, IcpOptions, MatchResult};
pub use pipeline::{detect_loop, run_slam, write_trajectory_csv, LoopClosure, SlamOptions, SlamResult};
pub use submap::Submap;
