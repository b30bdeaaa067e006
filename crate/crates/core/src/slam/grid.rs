//! Occupancy grid used for correlative matching.

/// Each cell holds `exp(-d²/2σ²)` with `d` the distance from the cell centre
/// to the nearest point and `σ` one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    origin: [f64; 2],
    cell_size: f64,
    width: usize,
    height: usize,
    cells: Vec<f64>,
}

/// Cells farther than this many cells from every point stay zero.
const FIELD_REACH: f64 = 3.0;

impl OccupancyGrid {
    /// Grid covering `points` plus `margin` meters on every side.
    pub fn from_points(points: &[[f64; 2]], cell_size: f64, margin: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        if points.is_empty() {
            return Self {
                origin: [0.0, 0.0],
                cell_size,
                width: 0,
                height: 0,
                cells: Vec::new(),
            };
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let pad = margin + FIELD_REACH * cell_size;
        let origin = [lo[0] - pad, lo[1] - pad];
        let width = ((hi[0] - origin[0] + pad) / cell_size).ceil() as usize + 1;
        let height = ((hi[1] - origin[1] + pad) / cell_size).ceil() as usize + 1;
        let mut grid = Self {
            origin,
            cell_size,
            width,
            height,
            cells: vec![0.0; width * height],
        };
        let reach = FIELD_REACH.ceil() as i64;
        let inv = 1.0 / (2.0 * cell_size * cell_size);
        for p in points {
            let (cx, cy) = grid.cell_of(*p).expect("point inside its own grid");
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (x, y) = (cx as i64 + dx, cy as i64 + dy);
                    if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                        continue;
                    }
                    let c = grid.centre(x as usize, y as usize);
                    let d2 = (c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2);
                    let cell = &mut grid.cells[y as usize * width + x as usize];
                    *cell = cell.max((-d2 * inv).exp());
                }
            }
        }
        grid
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(|&c| c == 0.0)
    }

    fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let fx = ((p[0] - self.origin[0]) / self.cell_size).floor();
        let fy = ((p[1] - self.origin[1]) / self.cell_size).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    fn centre(&self, x: usize, y: usize) -> [f64; 2] {
        [
            self.origin[0] + (x as f64 + 0.5) * self.cell_size,
            self.origin[1] + (y as f64 + 0.5) * self.cell_size,
        ]
    }

    fn cell(&self, x: i64, y: i64) -> f64 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0.0
        } else {
            self.cells[y as usize * self.width + x as usize]
        }
    }

    /// Score of the cell containing `p`.
    pub fn value_at(&self, p: [f64; 2]) -> f64 {
        self.cell_of(p).map_or(0.0, |(x, y)| self.cells[y * self.width + x])
    }

    /// Bilinear interpolation between cell centres.
    pub fn interpolated(&self, p: [f64; 2]) -> f64 {
        let gx = (p[0] - self.origin[0]) / self.cell_size - 0.5;
        let gy = (p[1] - self.origin[1]) / self.cell_size - 0.5;
        let (x0, y0) = (gx.floor(), gy.floor());
        let (fx, fy) = (gx - x0, gy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let v00 = self.cell(x0, y0);
        let v10 = self.cell(x0 + 1, y0);
        let v01 = self.cell(x0, y0 + 1);
        let v11 = self.cell(x0 + 1, y0 + 1);
        (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_decays_with_distance() {
        let g = OccupancyGrid::from_points(&[[1.0, 1.0]], 0.25, 0.5);
        let (x, y) = g.cell_of([1.0, 1.0]).unwrap();
        let c = g.centre(x, y);
        let d2 = (c[0] - 1.0).powi(2) + (c[1] - 1.0).powi(2);
        assert!((g.value_at([1.0, 1.0]) - (-d2 / (2.0 * 0.0625)).exp()).abs() < 1e-12);
        assert!(g.value_at([1.26, 1.0]) < g.value_at([1.0, 1.0]));
        assert_eq!(g.value_at([2.5, 1.0]), 0.0);
        assert_eq!(g.value_at([100.0, 1.0]), 0.0);
        assert!(!g.is_empty());
        assert!(OccupancyGrid::from_points(&[], 0.25, 0.5).is_empty());
    }

    #[test]
    fn interpolation_hits_cell_centres() {
        let g = OccupancyGrid::from_points(&[[0.1, 0.1], [3.0, -2.0]], 0.25, 1.0);
        for p in [[0.1, 0.1], [3.0, -2.0], [1.7, 0.4]] {
            let (x, y) = g.cell_of(p).unwrap();
            let c = g.centre(x, y);
            assert!((g.interpolated(c) - g.value_at(p)).abs() < 1e-12);
        }
        let v = g.interpolated([0.2, 0.05]);
        assert!((0.0..=1.0).contains(&v));
    }
}
