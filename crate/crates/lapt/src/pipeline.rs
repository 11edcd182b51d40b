//! End-to-end per-sample pipeline: sparse depth from the cloud, feature
//! pyramids from the images, per-scale BEV splats, and fusion.
//!
//! Per-camera work runs in parallel, but every partial grid is merged in a
//! fixed (camera, scale) order, so outputs are bit-identical regardless of
//! the worker count.

use std::time::Instant;

use rayon::prelude::*;

use crate::bev::{
    fuse_modalities, fuse_scales, lidar_occupancy_bev, project_coarse_then_upsample,
    splat_features, BevGrid, FusionMethod, GridSpec,
};
use crate::depth::{min_pool, rasterize_depth, DepthImage};
use crate::error::{Error, Result};
use crate::eval::{binarize, BinaryChannel, SemanticGrid};
use crate::features::{onehot_semantic_pyramid, rgb_pyramid, FeaturePyramid};
use crate::geometry::{lidar_to_camera, project_to_pixels};
use crate::io::Sample;

/// Where per-camera feature pyramids come from.
///
/// `Rgb` pools the raw image (3 channels, structural stand-in for a learned
/// backbone). `Semantic` pools per-pixel class ids into one-hot channels and
/// is the oracle mode used for end-to-end verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureProvider {
    Rgb,
    Semantic,
}

impl std::str::FromStr for FeatureProvider {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(FeatureProvider::Rgb),
            "semantic" => Ok(FeatureProvider::Semantic),
            other => Err(Error::InvalidArgument(format!(
                "unknown feature provider '{other}' (expected rgb|semantic)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Pyramid downsample factors, strictly increasing (e.g. [8, 16]).
    pub scales: Vec<u32>,
    pub provider: FeatureProvider,
    /// Number of semantic classes C (ids 1..=C); ignored for RGB features.
    pub num_classes: usize,
    /// Splat into a half-cell-count grid and bilinearly upsample back.
    pub coarse: bool,
    /// When set, build the LiDAR occupancy BEV and fuse it with the camera BEV.
    pub lidar_fusion: Option<FusionMethod>,
    /// Binarization threshold for semantic predictions.
    pub threshold: f64,
    pub spec: GridSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scales: crate::features::DEFAULT_FACTORS.to_vec(),
            provider: FeatureProvider::Semantic,
            num_classes: 2,
            coarse: false,
            lidar_fusion: None,
            threshold: 0.5,
            spec: GridSpec::default(),
        }
    }
}

/// Wall-clock time per pipeline stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub depth_ms: f64,
    pub features_ms: f64,
    pub splat_ms: f64,
    pub fuse_ms: f64,
    pub total_ms: f64,
}

impl StageTimings {
    pub fn stages(&self) -> [(&'static str, f64); 4] {
        [
            ("depth", self.depth_ms),
            ("features", self.features_ms),
            ("splat", self.splat_ms),
            ("fuse", self.fuse_ms),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Camera-branch BEV after summing all scales and cameras.
    pub camera_bev: BevGrid,
    /// LiDAR occupancy BEV, present when modality fusion was requested.
    pub lidar_bev: Option<BevGrid>,
    /// Camera/LiDAR fused grid, present when modality fusion was requested.
    pub fused: Option<BevGrid>,
    /// Thresholded per-class channels (channel j ↔ class id j+1); present in
    /// semantic mode only, taken from the camera branch.
    pub predictions: Option<SemanticGrid>,
    pub timings: StageTimings,
}

fn build_pyramid(sample: &Sample, index: usize, cfg: &PipelineConfig) -> Result<FeaturePyramid> {
    match cfg.provider {
        FeatureProvider::Rgb => rgb_pyramid(&sample.images[index], &cfg.scales),
        FeatureProvider::Semantic => {
            let sems = sample.semantics.as_ref().ok_or_else(|| {
                Error::Validation("semantic features requested but sample has no semantic images".into())
            })?;
            onehot_semantic_pyramid(&sems[index], cfg.num_classes, &cfg.scales)
        }
    }
}

pub fn run_pipeline(sample: &Sample, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    if cfg.scales.is_empty() {
        return Err(Error::InvalidArgument("at least one scale is required".into()));
    }
    let start = Instant::now();
    let mut timings = StageTimings::default();

    // Sparse depth per camera: LiDAR -> camera frame -> pixel z-buffer.
    let t = Instant::now();
    let depths: Vec<DepthImage> = sample
        .rig
        .cameras
        .par_iter()
        .map(|cam| {
            let in_cam = lidar_to_camera(&sample.cloud, &sample.rig.lidar, &cam.extrinsics);
            let projections = project_to_pixels(&in_cam, &cam.intrinsics);
            rasterize_depth(&projections, cam.intrinsics.width, cam.intrinsics.height)
        })
        .collect::<Result<_>>()?;
    timings.depth_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let pyramids: Vec<FeaturePyramid> = (0..sample.rig.cameras.len())
        .into_par_iter()
        .map(|i| build_pyramid(sample, i, cfg))
        .collect::<Result<_>>()?;
    timings.features_ms = t.elapsed().as_secs_f64() * 1e3;

    // One partial grid per (camera, scale), computed in parallel but merged
    // in rig order so the floating-point accumulation order is fixed.
    let t = Instant::now();
    let partials: Vec<Vec<BevGrid>> = sample
        .rig
        .cameras
        .par_iter()
        .zip(&depths)
        .zip(&pyramids)
        .map(|((cam, depth), pyramid)| {
            pyramid
                .levels()
                .iter()
                .map(|features| {
                    let pooled = min_pool(depth, features.downsample())?;
                    if cfg.coarse {
                        project_coarse_then_upsample(
                            features,
                            &pooled,
                            &cam.intrinsics,
                            &cam.extrinsics,
                            &cfg.spec,
                        )
                    } else {
                        splat_features(features, &pooled, &cam.intrinsics, &cam.extrinsics, &cfg.spec)
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    timings.splat_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let flat: Vec<BevGrid> = partials.into_iter().flatten().collect();
    let camera_bev = fuse_scales(&flat)?;

    let (lidar_bev, fused) = match cfg.lidar_fusion {
        Some(method) => {
            let lidar = lidar_occupancy_bev(&sample.cloud, &sample.rig.lidar, &cfg.spec);
            let fused = fuse_modalities(&camera_bev, &lidar, method)?;
            (Some(lidar), Some(fused))
        }
        None => (None, None),
    };

    let predictions = match cfg.provider {
        FeatureProvider::Semantic => {
            let channels: Vec<BinaryChannel> = (0..cfg.num_classes)
                .map(|c| binarize(&camera_bev, c, cfg.threshold))
                .collect();
            Some(SemanticGrid {
                spec: cfg.spec,
                channels,
            })
        }
        FeatureProvider::Rgb => None,
    };
    timings.fuse_ms = t.elapsed().as_secs_f64() * 1e3;
    timings.total_ms = start.elapsed().as_secs_f64() * 1e3;

    Ok(PipelineOutput {
        camera_bev,
        lidar_bev,
        fused,
        predictions,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::Sample;
    use crate::sim::{
        generate_scene, render_views, sample_lidar, surround_rig, LidarPattern, SceneParams,
    };

    fn oracle_sample(seed: u64) -> Sample {
        let scene = generate_scene(seed, &SceneParams::default());
        let rig = surround_rig();
        let views = render_views(&scene, &rig).unwrap();
        let cloud = sample_lidar(&scene, &LidarPattern::shallow(), &rig.lidar).unwrap();
        Sample {
            cloud,
            images: views.iter().map(|v| v.image.clone()).collect(),
            semantics: Some(views.iter().map(|v| v.semantic.clone()).collect()),
            annotations: None,
            rig,
        }
    }

    #[test]
    fn semantic_mode_produces_predictions_and_nonzero_grid() {
        let sample = oracle_sample(7);
        let cfg = PipelineConfig::default();
        let out = run_pipeline(&sample, &cfg).unwrap();
        assert_eq!(out.camera_bev.channels(), 2);
        assert!(out.camera_bev.nonzero_cells() > 0);
        let preds = out.predictions.unwrap();
        assert_eq!(preds.num_classes(), 2);
        assert!(preds.channels.iter().any(|c| c.count_ones() > 0));
        assert!(out.fused.is_none() && out.lidar_bev.is_none());
    }

    #[test]
    fn rgb_mode_has_three_channels_and_no_predictions() {
        let sample = oracle_sample(7);
        let cfg = PipelineConfig {
            provider: FeatureProvider::Rgb,
            ..PipelineConfig::default()
        };
        let out = run_pipeline(&sample, &cfg).unwrap();
        assert_eq!(out.camera_bev.channels(), 3);
        assert!(out.predictions.is_none());
    }

    #[test]
    fn more_scales_never_reduce_occupancy() {
        let sample = oracle_sample(11);
        let single = PipelineConfig {
            scales: vec![16],
            ..PipelineConfig::default()
        };
        let both = PipelineConfig::default();
        let n_single = run_pipeline(&sample, &single).unwrap().camera_bev.nonzero_cells();
        let n_both = run_pipeline(&sample, &both).unwrap().camera_bev.nonzero_cells();
        assert!(n_both >= n_single, "{n_both} < {n_single}");
    }

    #[test]
    fn output_is_bit_identical_across_worker_counts() {
        let sample = oracle_sample(3);
        let cfg = PipelineConfig {
            lidar_fusion: Some(FusionMethod::Concat),
            ..PipelineConfig::default()
        };
        let run_with = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_pipeline(&sample, &cfg).unwrap())
        };
        let a = run_with(1);
        let b = run_with(4);
        let bits = |g: &BevGrid| g.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.camera_bev), bits(&b.camera_bev));
        assert_eq!(bits(a.fused.as_ref().unwrap()), bits(b.fused.as_ref().unwrap()));
    }

    #[test]
    fn modality_fusion_concat_adds_three_lidar_channels() {
        let sample = oracle_sample(5);
        let cfg = PipelineConfig {
            lidar_fusion: Some(FusionMethod::Concat),
            ..PipelineConfig::default()
        };
        let out = run_pipeline(&sample, &cfg).unwrap();
        assert_eq!(out.lidar_bev.as_ref().unwrap().channels(), 3);
        assert_eq!(out.fused.as_ref().unwrap().channels(), 5);
    }

    #[test]
    fn semantic_mode_without_semantic_images_is_a_validation_error() {
        let mut sample = oracle_sample(2);
        sample.semantics = None;
        let err = run_pipeline(&sample, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn coarse_variant_runs_and_differs_from_direct_splat() {
        let sample = oracle_sample(9);
        let direct = run_pipeline(&sample, &PipelineConfig::default()).unwrap();
        let coarse = run_pipeline(
            &sample,
            &PipelineConfig {
                coarse: true,
                ..PipelineConfig::default()
            },
        )
        .unwrap();
        assert_eq!(coarse.camera_bev.channels(), direct.camera_bev.channels());
        assert_ne!(coarse.camera_bev.data(), direct.camera_bev.data());
    }
}
