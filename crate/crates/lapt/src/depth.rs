//! Sparse depth images: z-buffered rasterization of projected LiDAR points
//! and block minimum pooling down to feature-map scales.

use crate::error::{Error, Result};
use crate::geometry::Projection;

/// A sparse per-pixel depth raster. Empty cells carry an explicit `None`
/// rather than a sentinel value; every present depth is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    cells: Vec<Option<f64>>,
    occupancy: usize,
}

impl DepthImage {
    pub fn empty(width: u32, height: u32) -> Self {
        DepthImage {
            width,
            height,
            cells: vec![None; (width as usize) * (height as usize)],
            occupancy: 0,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Number of non-empty cells.
    pub fn occupancy_count(&self) -> usize {
        self.occupancy
    }

    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        self.cells[(y as usize) * (self.width as usize) + x as usize]
    }

    /// Keep the minimum of the current value and `depth` at (x, y).
    pub fn merge_min(&mut self, x: u32, y: u32, depth: f64) -> Result<()> {
        if x >= self.width || y >= self.height {
            return Err(Error::InvalidArgument(format!(
                "cell ({x}, {y}) outside {}x{} raster",
                self.width, self.height
            )));
        }
        if depth <= 0.0 {
            return Err(Error::InvalidDepth(depth));
        }
        let idx = (y as usize) * (self.width as usize) + x as usize;
        match self.cells[idx] {
            None => {
                self.cells[idx] = Some(depth);
                self.occupancy += 1;
            }
            Some(d) if depth < d => self.cells[idx] = Some(depth),
            Some(_) => {}
        }
        Ok(())
    }

    pub fn iter_present(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.cells.iter().enumerate().filter_map(move |(i, c)| {
            c.map(|d| {
                let x = (i % self.width as usize) as u32;
                let y = (i / self.width as usize) as u32;
                (x, y, d)
            })
        })
    }
}

/// Rasterize projected points into a z-buffered depth image: each pixel keeps
/// the closest depth among all points that floor-bin into it.
pub fn rasterize_depth(projected: &[Projection], width: u32, height: u32) -> Result<DepthImage> {
    let mut img = DepthImage::empty(width, height);
    for p in projected {
        if p.u < 0.0 || p.v < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "negative pixel coordinate ({}, {})",
                p.u, p.v
            )));
        }
        let x = p.u.floor() as u32;
        let y = p.v.floor() as u32;
        img.merge_min(x, y, p.depth)?;
    }
    Ok(img)
}

/// Block minimum pooling with a square kernel of size `factor`. An output
/// cell is empty iff its whole source block is empty.
pub fn min_pool(depth: &DepthImage, factor: u32) -> Result<DepthImage> {
    if factor == 0 {
        return Err(Error::InvalidArgument("pooling factor must be positive".into()));
    }
    if !depth.width.is_multiple_of(factor) || !depth.height.is_multiple_of(factor) {
        return Err(Error::InvalidArgument(format!(
            "raster {}x{} not divisible by pooling factor {factor}",
            depth.width, depth.height
        )));
    }
    let ow = depth.width / factor;
    let oh = depth.height / factor;
    let mut out = DepthImage::empty(ow, oh);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut best: Option<f64> = None;
            for dy in 0..factor {
                for dx in 0..factor {
                    if let Some(d) = depth.get(ox * factor + dx, oy * factor + dy) {
                        best = Some(match best {
                            None => d,
                            Some(b) => b.min(d),
                        });
                    }
                }
            }
            if let Some(d) = best {
                out.merge_min(ox, oy, d)?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn proj(u: f64, v: f64, depth: f64) -> Projection {
        Projection {
            u,
            v,
            depth,
            source: 0,
        }
    }

    #[test]
    fn z_buffer_keeps_closest() {
        let img = rasterize_depth(&[proj(2.3, 4.7, 5.0), proj(2.9, 4.1, 3.0)], 8, 8).unwrap();
        assert_eq!(img.get(2, 4), Some(3.0));
        assert_eq!(img.occupancy_count(), 1);
    }

    #[test]
    fn empty_input_empty_raster() {
        let img = rasterize_depth(&[], 16, 16).unwrap();
        assert_eq!(img.occupancy_count(), 0);
        assert!(img.iter_present().next().is_none());
    }

    #[test]
    fn rasterize_matches_group_by_min_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let points: Vec<Projection> = (0..10_000)
            .map(|i| Projection {
                u: rng.gen_range(0.0..64.0),
                v: rng.gen_range(0.0..64.0),
                depth: rng.gen_range(0.1..80.0),
                source: i,
            })
            .collect();
        let img = rasterize_depth(&points, 64, 64).unwrap();

        // Brute-force group-by-pixel-then-min.
        let mut groups: HashMap<(u32, u32), f64> = HashMap::new();
        for p in &points {
            let key = (p.u.floor() as u32, p.v.floor() as u32);
            groups
                .entry(key)
                .and_modify(|d| *d = d.min(p.depth))
                .or_insert(p.depth);
        }
        assert_eq!(img.occupancy_count(), groups.len());
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(img.get(x, y), groups.get(&(x, y)).copied());
            }
        }
    }

    #[test]
    fn rasterize_rejects_out_of_bounds() {
        assert!(rasterize_depth(&[proj(8.0, 0.0, 1.0)], 8, 8).is_err());
        assert!(rasterize_depth(&[proj(-0.1, 0.0, 1.0)], 8, 8).is_err());
    }

    #[test]
    fn rasterize_is_idempotent_under_duplication() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let points: Vec<Projection> = (0..500)
            .map(|i| Projection {
                u: rng.gen_range(0.0..32.0),
                v: rng.gen_range(0.0..32.0),
                depth: rng.gen_range(0.5..50.0),
                source: i,
            })
            .collect();
        let once = rasterize_depth(&points, 32, 32).unwrap();
        let doubled: Vec<Projection> = points.iter().chain(points.iter()).copied().collect();
        let twice = rasterize_depth(&doubled, 32, 32).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn min_pool_block_examples() {
        let mut img = DepthImage::empty(2, 2);
        img.merge_min(0, 0, 4.0).unwrap();
        img.merge_min(0, 1, 7.0).unwrap();
        let pooled = min_pool(&img, 2).unwrap();
        assert_eq!(pooled.get(0, 0), Some(4.0));
        assert_eq!(pooled.occupancy_count(), 1);

        let empty = DepthImage::empty(2, 2);
        let pooled = min_pool(&empty, 2).unwrap();
        assert_eq!(pooled.get(0, 0), None);
        assert_eq!(pooled.occupancy_count(), 0);
    }

    #[test]
    fn min_pool_rejects_zero_factor_and_indivisible() {
        let img = DepthImage::empty(16, 16);
        assert!(min_pool(&img, 0).is_err());
        assert!(min_pool(&img, 5).is_err());
    }

    /// Nested-loop block-min oracle at the sizes the pipeline actually uses.
    #[test]
    fn min_pool_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (w, h) = (352u32, 128u32);
        let mut img = DepthImage::empty(w, h);
        for _ in 0..4000 {
            let x = rng.gen_range(0..w);
            let y = rng.gen_range(0..h);
            img.merge_min(x, y, rng.gen_range(0.2..90.0)).unwrap();
        }
        for factor in [8u32, 16] {
            let pooled = min_pool(&img, factor).unwrap();
            assert_eq!(pooled.width(), w / factor);
            assert_eq!(pooled.height(), h / factor);
            let mut expected_occupancy = 0;
            for oy in 0..h / factor {
                for ox in 0..w / factor {
                    let mut best = f64::INFINITY;
                    let mut any = false;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            if let Some(d) = img.get(ox * factor + dx, oy * factor + dy) {
                                any = true;
                                if d < best {
                                    best = d;
                                }
                            }
                        }
                    }
                    if any {
                        expected_occupancy += 1;
                        assert_eq!(pooled.get(ox, oy), Some(best));
                    } else {
                        assert_eq!(pooled.get(ox, oy), None);
                    }
                }
            }
            assert_eq!(pooled.occupancy_count(), expected_occupancy);
            assert!(pooled.occupancy_count() <= img.occupancy_count());
        }
    }
}
