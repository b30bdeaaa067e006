use crate::geometry::Pose2;

use super::grid::OccupancyGrid;

const GRID_MARGIN: f64 = 1.5;

/// Points of consecutive scans expressed in the frame of the first member.
#[derive(Debug, Clone)]
pub struct Submap {
    pub id: usize,
    /// Graph node whose pose anchors the submap frame.
    pub origin_node: usize,
    pub member_scan_ids: Vec<usize>,
    cell_size: f64,
    points: Vec<[f64; 2]>,
    grid: OccupancyGrid,
}

impl Submap {
    pub fn new(id: usize, origin_node: usize, cell_size: f64) -> Self {
        Self {
            id,
            origin_node,
            member_scan_ids: Vec::new(),
            cell_size,
            points: Vec::new(),
            grid: OccupancyGrid::from_points(&[], cell_size, GRID_MARGIN),
        }
    }

    /// Builds a submap directly from points already in its frame.
    pub fn from_points(id: usize, origin_node: usize, cell_size: f64, points: Vec<[f64; 2]>) -> Self {
        let grid = OccupancyGrid::from_points(&points, cell_size, GRID_MARGIN);
        Self {
            id,
            origin_node,
            member_scan_ids: Vec::new(),
            cell_size,
            points,
            grid,
        }
    }

    /// Adds a scan whose pose in the submap frame is `rel`.
    pub fn insert(&mut self, scan_id: usize, local_points: &[[f64; 2]], rel: &Pose2) {
        self.member_scan_ids.push(scan_id);
        self.points.extend(local_points.iter().map(|&p| rel.transform_point(p)));
        self.grid = OccupancyGrid::from_points(&self.points, self.cell_size, GRID_MARGIN);
    }

    pub fn len(&self) -> usize {
        self.member_scan_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_scan_ids.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }
}
