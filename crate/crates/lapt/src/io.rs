//! File formats and the sample-directory layout.
//!
//! All binary formats are little-endian with an 8-byte magic. Values are
//! 32-bit on disk and 64-bit in memory; round trips are exact at 32-bit
//! precision. Readers reject malformed input instead of repairing it.
//!
//! Sample directory layout (one capture of the whole rig):
//!
//! ```text
//! calibration.json              camera rig (JSON, frame direction documented)
//! cloud.bin                     LiDAR point cloud, LiDAR frame
//! cam_00.ppm .. cam_NN.ppm      RGB images (binary PPM)
//! cam_00_sem.pgm .. (optional)  per-pixel class ids (binary PGM)
//! features/cam_00_s08.ftr ..    (optional) precomputed feature tensors
//! annotations.json              (optional) cuboids + polygons
//! gt/class_01.grd ..            (optional) ground-truth BEV channels
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::bev::{BevGrid, GridSpec};
use crate::depth::DepthImage;
use crate::error::{Error, Result};
use crate::eval::{BinaryChannel, Cuboid, Polygon2D};
use crate::features::{FeatureMap, Image, SemanticImage};
use crate::geometry::{Camera, CameraIntrinsics, CameraRig, RigidTransform, Vec3};

const CLOUD_MAGIC: &[u8; 8] = b"LAPTPCD\0";
const GRID_MAGIC: &[u8; 8] = b"LAPTGRD\0";
const DEPTH_MAGIC: &[u8; 8] = b"LAPTDEP\0";
const FEATURE_MAGIC: &[u8; 8] = b"LAPTFTR\0";

// ---------------------------------------------------------------------------
// Calibration (JSON)

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    /// Row-major 4x4 vehicle→camera matrix.
    extrinsics: [[f64; 4]; 4],
}

#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    /// Human-readable statement of the transform direction; informational.
    frame_convention: String,
    /// Row-major 4x4 vehicle→LiDAR matrix.
    lidar_extrinsics: [[f64; 4]; 4],
    cameras: Vec<CameraRecord>,
}

fn matrix_to_rows(t: &RigidTransform) -> [[f64; 4]; 4] {
    let m = t.matrix();
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn rows_to_transform(rows: &[[f64; 4]; 4]) -> Result<RigidTransform> {
    let m = Matrix4::from_fn(|i, j| rows[i][j]);
    RigidTransform::from_matrix(m)
}

pub fn write_calibration(path: &Path, rig: &CameraRig) -> Result<()> {
    let file = CalibrationFile {
        frame_convention: "extrinsics map vehicle coordinates into the sensor frame; \
                           lidar-to-camera chain = camera.extrinsics * inverse(lidar_extrinsics)"
            .to_string(),
        lidar_extrinsics: matrix_to_rows(&rig.lidar),
        cameras: rig
            .cameras
            .iter()
            .map(|c| CameraRecord {
                fx: c.intrinsics.fx,
                fy: c.intrinsics.fy,
                cx: c.intrinsics.cx,
                cy: c.intrinsics.cy,
                width: c.intrinsics.width,
                height: c.intrinsics.height,
                extrinsics: matrix_to_rows(&c.extrinsics),
            })
            .collect(),
    };
    let out = File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(out), &file)?;
    Ok(())
}

pub fn read_calibration(path: &Path) -> Result<CameraRig> {
    let file: CalibrationFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    let lidar = rows_to_transform(&file.lidar_extrinsics)?;
    let cameras = file
        .cameras
        .iter()
        .map(|c| {
            Ok(Camera {
                intrinsics: CameraIntrinsics::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height)?,
                extrinsics: rows_to_transform(&c.extrinsics)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CameraRig::new(cameras, lidar)
}

// ---------------------------------------------------------------------------
// Binary helpers

fn write_magic(w: &mut impl Write, magic: &[u8; 8]) -> Result<()> {
    w.write_all(magic)?;
    Ok(())
}

fn check_magic(r: &mut impl Read, magic: &[u8; 8]) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("file truncated before magic".into()))?;
    if &buf != magic {
        return Err(Error::Format(format!(
            "bad magic {:02x?}, expected {:02x?}",
            buf, magic
        )));
    }
    Ok(())
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("file truncated in header".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn write_f32(w: &mut impl Write, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_f32_payload(r: &mut impl Read, count: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("file truncated in payload".into()))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

// ---------------------------------------------------------------------------
// Point clouds

pub fn write_cloud(path: &Path, cloud: &[Vec3]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_magic(&mut w, CLOUD_MAGIC)?;
    write_u32(&mut w, cloud.len() as u32)?;
    for p in cloud {
        write_f32(&mut w, p.x as f32)?;
        write_f32(&mut w, p.y as f32)?;
        write_f32(&mut w, p.z as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cloud(path: &Path) -> Result<Vec<Vec3>> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, CLOUD_MAGIC)?;
    let count = read_u32(&mut r)? as usize;
    let values = read_f32_payload(&mut r, count * 3)?;
    Ok(values
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect())
}

// ---------------------------------------------------------------------------
// BEV grids

pub fn write_grid(path: &Path, grid: &BevGrid) -> Result<()> {
    let spec = grid.spec();
    let mut w = BufWriter::new(File::create(path)?);
    write_magic(&mut w, GRID_MAGIC)?;
    write_u32(&mut w, grid.channels() as u32)?;
    write_u32(&mut w, spec.cells_x())?;
    write_u32(&mut w, spec.cells_y())?;
    write_f32(&mut w, spec.resolution as f32)?;
    write_f32(&mut w, spec.x_extent as f32)?;
    write_f32(&mut w, spec.y_extent as f32)?;
    write_f32(&mut w, spec.z_min as f32)?;
    write_f32(&mut w, spec.z_max as f32)?;
    for &v in grid.data() {
        write_f32(&mut w, v as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<BevGrid> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, GRID_MAGIC)?;
    let channels = read_u32(&mut r)? as usize;
    let cells_x = read_u32(&mut r)?;
    let cells_y = read_u32(&mut r)?;
    let header = read_f32_header(&mut r, 5)?;
    let spec = GridSpec::new(
        header[1] as f64,
        header[2] as f64,
        header[0] as f64,
        header[3] as f64,
        header[4] as f64,
    )?;
    if spec.cells_x() != cells_x || spec.cells_y() != cells_y {
        return Err(Error::Format(format!(
            "grid header shape {}x{} inconsistent with extents/resolution",
            cells_x, cells_y
        )));
    }
    let values = read_f32_payload(&mut r, channels * (cells_x * cells_y) as usize)?;
    BevGrid::from_data(channels, spec, values.iter().map(|&v| v as f64).collect())
}

fn read_f32_header(r: &mut impl Read, count: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("file truncated in header".into()))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Store a binary channel as a one-channel grid of exact 0/1 values.
pub fn write_binary_channel(path: &Path, channel: &BinaryChannel, spec: &GridSpec) -> Result<()> {
    if channel.cells_x() != spec.cells_x() || channel.cells_y() != spec.cells_y() {
        return Err(Error::InvalidArgument("channel shape does not match grid spec".into()));
    }
    let data: Vec<f64> = channel.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    write_grid(path, &BevGrid::from_data(1, *spec, data)?)
}

pub fn read_binary_channel(path: &Path) -> Result<(BinaryChannel, GridSpec)> {
    let grid = read_grid(path)?;
    if grid.channels() != 1 {
        return Err(Error::Format(format!(
            "expected a 1-channel grid, found {} channels",
            grid.channels()
        )));
    }
    let spec = *grid.spec();
    let mut channel = BinaryChannel::zeros(spec.cells_x(), spec.cells_y());
    for row in 0..spec.cells_y() {
        for col in 0..spec.cells_x() {
            channel.set(col, row, grid.get(0, col, row) >= 0.5);
        }
    }
    Ok((channel, spec))
}

// ---------------------------------------------------------------------------
// Depth images (+inf sentinel for empty cells)

pub fn write_depth(path: &Path, depth: &DepthImage) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_magic(&mut w, DEPTH_MAGIC)?;
    write_u32(&mut w, depth.width())?;
    write_u32(&mut w, depth.height())?;
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            write_f32(&mut w, depth.get(x, y).map_or(f32::INFINITY, |d| d as f32))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_depth(path: &Path) -> Result<DepthImage> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, DEPTH_MAGIC)?;
    let width = read_u32(&mut r)?;
    let height = read_u32(&mut r)?;
    let values = read_f32_payload(&mut r, (width * height) as usize)?;
    let mut depth = DepthImage::empty(width, height);
    for (i, &v) in values.iter().enumerate() {
        if v.is_finite() {
            depth.merge_min(i as u32 % width, i as u32 / width, v as f64)?;
        }
    }
    Ok(depth)
}

// ---------------------------------------------------------------------------
// Feature tensors

pub fn write_features(path: &Path, map: &FeatureMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_magic(&mut w, FEATURE_MAGIC)?;
    write_u32(&mut w, map.channels() as u32)?;
    write_u32(&mut w, map.width())?;
    write_u32(&mut w, map.height())?;
    write_u32(&mut w, map.downsample())?;
    for &v in map.data() {
        write_f32(&mut w, v as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureMap> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, FEATURE_MAGIC)?;
    let channels = read_u32(&mut r)? as usize;
    let width = read_u32(&mut r)?;
    let height = read_u32(&mut r)?;
    let downsample = read_u32(&mut r)?;
    let values = read_f32_payload(&mut r, channels * (width * height) as usize)?;
    FeatureMap::from_data(
        channels,
        width,
        height,
        downsample,
        values.iter().map(|&v| v as f64).collect(),
    )
}

// ---------------------------------------------------------------------------
// Images (binary PPM / PGM)

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", image.width(), image.height())?;
    for y in 0..image.height() {
        for x in 0..image.width() {
            for c in 0..3 {
                let v = (image.get(c, x, y) * 255.0).round().clamp(0.0, 255.0) as u8;
                w.write_all(&[v])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_pnm_header(r: &mut impl Read, expected: &str) -> Result<(u32, u32)> {
    // Header: "P6\n{w} {h}\n255\n" (or P5); read token by token.
    let mut tokens = Vec::new();
    let mut current = Vec::new();
    while tokens.len() < 4 {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)
            .map_err(|_| Error::Format("truncated image header".into()))?;
        if byte[0].is_ascii_whitespace() {
            if !current.is_empty() {
                tokens.push(String::from_utf8_lossy(&current).to_string());
                current.clear();
            }
        } else {
            current.push(byte[0]);
        }
    }
    if tokens[0] != expected {
        return Err(Error::Format(format!(
            "unsupported image header '{}', expected {expected}",
            tokens[0]
        )));
    }
    if tokens[3] != "255" {
        return Err(Error::Format(format!("unsupported maxval '{}'", tokens[3])));
    }
    let w: u32 = tokens[1]
        .parse()
        .map_err(|_| Error::Format("bad width in image header".into()))?;
    let h: u32 = tokens[2]
        .parse()
        .map_err(|_| Error::Format("bad height in image header".into()))?;
    Ok((w, h))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let mut r = BufReader::new(File::open(path)?);
    let (w, h) = read_pnm_header(&mut r, "P6")?;
    let mut bytes = vec![0u8; (w * h * 3) as usize];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated image payload".into()))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after image payload".into()));
    }
    // Interleaved bytes -> planar floats.
    let plane = (w * h) as usize;
    let mut data = vec![0.0f64; 3 * plane];
    for (i, px) in bytes.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / 255.0;
        }
    }
    Image::new(w, h, data)
}

pub fn write_semantic_image(path: &Path, sem: &SemanticImage) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", sem.width(), sem.height())?;
    w.write_all(sem.data())?;
    w.flush()?;
    Ok(())
}

pub fn read_semantic_image(path: &Path) -> Result<SemanticImage> {
    let mut r = BufReader::new(File::open(path)?);
    let (w, h) = read_pnm_header(&mut r, "P5")?;
    let mut bytes = vec![0u8; (w * h) as usize];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated image payload".into()))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after image payload".into()));
    }
    SemanticImage::new(w, h, bytes)
}

// ---------------------------------------------------------------------------
// Annotations (JSON)

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Annotations {
    pub cuboids: Vec<Cuboid>,
    pub polygons: Vec<Polygon2D>,
}

pub fn write_annotations(path: &Path, annotations: &Annotations) -> Result<()> {
    let out = File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(out), annotations)?;
    Ok(())
}

pub fn read_annotations(path: &Path) -> Result<Annotations> {
    let annotations: Annotations =
        serde_json::from_reader(BufReader::new(File::open(path)?))?;
    for c in &annotations.cuboids {
        c.validate()?;
    }
    for p in &annotations.polygons {
        p.validate()?;
    }
    Ok(annotations)
}

// ---------------------------------------------------------------------------
// Sample directory

/// An in-memory sample: one synchronized capture of the rig.
#[derive(Debug, Clone)]
pub struct Sample {
    pub rig: CameraRig,
    pub cloud: Vec<Vec3>,
    pub images: Vec<Image>,
    /// Present when the sample carries oracle-mode semantic images.
    pub semantics: Option<Vec<SemanticImage>>,
    pub annotations: Option<Annotations>,
}

pub fn camera_image_name(index: usize) -> String {
    format!("cam_{index:02}.ppm")
}

pub fn camera_semantic_name(index: usize) -> String {
    format!("cam_{index:02}_sem.pgm")
}

pub fn gt_channel_name(class_id: u8) -> String {
    format!("class_{class_id:02}.grd")
}

pub fn write_sample(dir: &Path, sample: &Sample) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_calibration(&dir.join("calibration.json"), &sample.rig)?;
    write_cloud(&dir.join("cloud.bin"), &sample.cloud)?;
    if sample.images.len() != sample.rig.cameras.len() {
        return Err(Error::Validation(format!(
            "{} images for {} cameras",
            sample.images.len(),
            sample.rig.cameras.len()
        )));
    }
    for (i, img) in sample.images.iter().enumerate() {
        write_image(&dir.join(camera_image_name(i)), img)?;
    }
    if let Some(sems) = &sample.semantics {
        if sems.len() != sample.rig.cameras.len() {
            return Err(Error::Validation("semantic image count mismatch".into()));
        }
        for (i, sem) in sems.iter().enumerate() {
            write_semantic_image(&dir.join(camera_semantic_name(i)), sem)?;
        }
    }
    if let Some(ann) = &sample.annotations {
        write_annotations(&dir.join("annotations.json"), ann)?;
    }
    Ok(())
}

pub fn read_sample(dir: &Path) -> Result<Sample> {
    let rig = read_calibration(&dir.join("calibration.json"))?;
    let cloud = read_cloud(&dir.join("cloud.bin"))?;
    let mut images = Vec::with_capacity(rig.cameras.len());
    for (i, cam) in rig.cameras.iter().enumerate() {
        let img = read_image(&dir.join(camera_image_name(i)))?;
        if img.width() != cam.intrinsics.width || img.height() != cam.intrinsics.height {
            return Err(Error::Validation(format!(
                "camera {i}: image {}x{} does not match intrinsics {}x{}",
                img.width(),
                img.height(),
                cam.intrinsics.width,
                cam.intrinsics.height
            )));
        }
        images.push(img);
    }
    let semantics = if dir.join(camera_semantic_name(0)).exists() {
        let mut sems = Vec::with_capacity(rig.cameras.len());
        for i in 0..rig.cameras.len() {
            sems.push(read_semantic_image(&dir.join(camera_semantic_name(i)))?);
        }
        Some(sems)
    } else {
        None
    };
    let ann_path = dir.join("annotations.json");
    let annotations = if ann_path.exists() {
        Some(read_annotations(&ann_path)?)
    } else {
        None
    };
    Ok(Sample {
        rig,
        cloud,
        images,
        semantics,
        annotations,
    })
}

/// Per-class grid files (`class_NN.grd`) in `dir`, sorted by class id.
pub fn list_class_grids(dir: &Path) -> Result<Vec<(u8, PathBuf)>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        if let Some(id) = name
            .strip_prefix("class_")
            .and_then(|s| s.strip_suffix(".grd"))
            .and_then(|s| s.parse::<u8>().ok())
        {
            out.push((id, path));
        }
    }
    out.sort_by_key(|(id, _)| *id);
    Ok(out)
}
