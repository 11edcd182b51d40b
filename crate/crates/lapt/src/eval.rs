//! Ground-truth rasterization to BEV and intersection-over-union scoring.
//! Rasterization samples cell centers: a cell is set iff its center lies
//! inside a footprint, which keeps every raster exactly checkable against a
//! per-cell point-in-shape oracle.

use serde::{Deserialize, Serialize};

use crate::bev::{BevGrid, GridSpec};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// An oriented box annotation in the vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    pub center: Vec3,
    /// Footprint length along the box's local x before yaw rotation, meters.
    pub length: f64,
    /// Footprint width along the box's local y before yaw rotation, meters.
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
    pub class_id: u8,
}

impl Cuboid {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0 && self.height > 0.0) {
            return Err(Error::InvalidArgument("cuboid sizes must be positive".into()));
        }
        Ok(())
    }

    /// True when the vehicle-frame (x, y) lies inside the yaw-rotated
    /// footprint rectangle.
    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center.x;
        let dy = y - self.center.y;
        let (s, c) = self.yaw.sin_cos();
        // Rotate into the box frame.
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= self.length / 2.0 && ly.abs() <= self.width / 2.0
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.center.z - self.height / 2.0, self.center.z + self.height / 2.0)
    }
}

/// A simple (non-self-intersecting) polygon in the vehicle frame, at ground
/// level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon2D {
    pub vertices: Vec<(f64, f64)>,
    pub class_id: u8,
}

fn segments_properly_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let cross = |o: (f64, f64), p: (f64, f64), q: (f64, f64)| {
        (p.0 - o.0) * (q.1 - o.1) - (p.1 - o.1) * (q.0 - o.0)
    };
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

impl Polygon2D {
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if n < 3 {
            return Err(Error::InvalidArgument("polygon needs at least 3 vertices".into()));
        }
        // Reject self-intersection: check every non-adjacent edge pair.
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            for j in i + 1..n {
                // Skip edges sharing a vertex.
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                let c = self.vertices[j];
                let d = self.vertices[(j + 1) % n];
                if segments_properly_intersect(a, b, c, d) {
                    return Err(Error::InvalidArgument("polygon is self-intersecting".into()));
                }
            }
        }
        Ok(())
    }

    /// Even-odd rule point-in-polygon test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = self.vertices[i];
            let (xj, yj) = self.vertices[j];
            if (yi > y) != (yj > y) {
                let x_cross = (xj - xi) * (y - yi) / (yj - yi) + xi;
                if x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }
}

/// A single binary BEV channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryChannel {
    cells_x: u32,
    cells_y: u32,
    data: Vec<bool>,
}

impl BinaryChannel {
    pub fn zeros(cells_x: u32, cells_y: u32) -> Self {
        BinaryChannel {
            cells_x,
            cells_y,
            data: vec![false; (cells_x as usize) * (cells_y as usize)],
        }
    }

    pub fn cells_x(&self) -> u32 {
        self.cells_x
    }

    pub fn cells_y(&self) -> u32 {
        self.cells_y
    }

    pub fn get(&self, col: u32, row: u32) -> bool {
        self.data[(row as usize) * (self.cells_x as usize) + col as usize]
    }

    pub fn set(&mut self, col: u32, row: u32, value: bool) {
        self.data[(row as usize) * (self.cells_x as usize) + col as usize] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }
}

/// One binary channel per class over a shared grid geometry.
#[derive(Debug, Clone)]
pub struct SemanticGrid {
    pub spec: GridSpec,
    pub channels: Vec<BinaryChannel>,
}

impl SemanticGrid {
    pub fn num_classes(&self) -> usize {
        self.channels.len()
    }
}

/// Rasterize the footprints of all cuboids of `class_id`: a cell is set iff
/// its center lies inside any matching footprint.
pub fn rasterize_cuboids(boxes: &[Cuboid], spec: &GridSpec, class_id: u8) -> BinaryChannel {
    let mut out = BinaryChannel::zeros(spec.cells_x(), spec.cells_y());
    let matching: Vec<&Cuboid> = boxes.iter().filter(|b| b.class_id == class_id).collect();
    if matching.is_empty() {
        return out;
    }
    for row in 0..spec.cells_y() {
        for col in 0..spec.cells_x() {
            let (cx, cy) = spec.cell_center(col, row);
            if matching.iter().any(|b| b.footprint_contains(cx, cy)) {
                out.set(col, row, true);
            }
        }
    }
    out
}

/// Rasterize polygons of `class_id` by the even-odd rule on cell centers.
pub fn rasterize_polygons(
    polys: &[Polygon2D],
    spec: &GridSpec,
    class_id: u8,
) -> Result<BinaryChannel> {
    let mut out = BinaryChannel::zeros(spec.cells_x(), spec.cells_y());
    let matching: Vec<&Polygon2D> = polys.iter().filter(|p| p.class_id == class_id).collect();
    for p in &matching {
        p.validate()?;
    }
    if matching.is_empty() {
        return Ok(out);
    }
    for row in 0..spec.cells_y() {
        for col in 0..spec.cells_x() {
            let (cx, cy) = spec.cell_center(col, row);
            if matching.iter().any(|p| p.contains(cx, cy)) {
                out.set(col, row, true);
            }
        }
    }
    Ok(out)
}

/// Intersection over union of two binary channels. Both-empty returns 1.0 by
/// convention.
pub fn iou(pred: &BinaryChannel, gt: &BinaryChannel) -> Result<f64> {
    if pred.cells_x != gt.cells_x || pred.cells_y != gt.cells_y {
        return Err(Error::InvalidArgument(format!(
            "IoU shape mismatch: {}x{} vs {}x{}",
            pred.cells_x, pred.cells_y, gt.cells_x, gt.cells_y
        )));
    }
    let mut intersection = 0usize;
    let mut union = 0usize;
    for (p, g) in pred.data.iter().zip(&gt.data) {
        if *p && *g {
            intersection += 1;
        }
        if *p || *g {
            union += 1;
        }
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(intersection as f64 / union as f64)
    }
}

/// Threshold one channel of a BEV grid into a binary channel (≥ rule).
pub fn binarize(grid: &BevGrid, channel: usize, threshold: f64) -> BinaryChannel {
    let spec = grid.spec();
    let mut out = BinaryChannel::zeros(spec.cells_x(), spec.cells_y());
    for row in 0..spec.cells_y() {
        for col in 0..spec.cells_x() {
            if grid.get(channel, col, row) >= threshold {
                out.set(col, row, true);
            }
        }
    }
    out
}
