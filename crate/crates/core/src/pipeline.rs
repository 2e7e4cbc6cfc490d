//! Detections + vanishing point + calibration → BEV token streams.
//!
//! This is the one composition shared by the CLI and the service, so both
//! produce byte-identical output for the same inputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bev::{georeference, to_bev, BevError, BevObject, CalibrationParams, TokenStream};
use crate::box3d::{build_box3d, track_orientations, Box3dConfig, OrientationConfig};
use crate::geometry::{build_perspective_grid, GeometryError, GridParams, PerspectiveGrid};
use crate::ingest::{
    assemble_tracks, parse_detections_str, repair_ids, smooth_anchors, smooth_trajectory, stationary_flags, Detection,
    IngestError, RepairConfig, StationaryConfig, TrackerConfig,
};
use crate::vp::{load_vp_sidecar, VanishingPoint, VpError};

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const VP_FILE: &str = "vp.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const SCENE_FILE: &str = "scene.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Bev(#[from] BevError),
    #[error("detection at frame {frame} has no timestamp and no frame rate was given")]
    MissingTimebase { frame: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub grid: GridParams,
    pub tracker: TrackerConfig,
    pub repair: RepairConfig,
    pub repair_enabled: bool,
    /// Moving-average window over anchors, samples.
    pub smoothing_window: usize,
    pub stationary: StationaryConfig,
    pub orientation: OrientationConfig,
    pub box3d: Box3dConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            grid: GridParams::default(),
            tracker: TrackerConfig::default(),
            repair: RepairConfig::default(),
            repair_enabled: true,
            smoothing_window: 5,
            stationary: StationaryConfig::default(),
            orientation: OrientationConfig::default(),
            box3d: Box3dConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

/// Image and timing metadata of a scene directory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMeta {
    pub image_width: u32,
    pub image_height: u32,
    pub fps: f64,
}

impl SceneMeta {
    pub fn image_size(&self) -> ImageSize {
        ImageSize {
            width: self.image_width as f64,
            height: self.image_height as f64,
        }
    }
}

#[derive(Debug, Error)]
pub enum SceneLoadError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Detections {
        path: PathBuf,
        #[source]
        source: IngestError,
    },
    #[error(transparent)]
    Vp(#[from] VpError),
    #[error("{}: {message}", path.display())]
    Schema { path: PathBuf, message: String },
}

fn read(path: &Path) -> Result<String, SceneLoadError> {
    fs::read_to_string(path).map_err(|source| SceneLoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a detections file; a file without records yields no detections.
pub fn load_detections(path: &Path) -> Result<Vec<Detection>, SceneLoadError> {
    match parse_detections_str(&read(path)?) {
        Ok(d) => Ok(d),
        Err(IngestError::EmptyInput) => Ok(Vec::new()),
        Err(source) => Err(SceneLoadError::Detections {
            path: path.to_path_buf(),
            source,
        }),
    }
}

/// Reads and validates a calibration file.
pub fn load_calibration(path: &Path) -> Result<CalibrationParams, SceneLoadError> {
    let schema = |message: String| SceneLoadError::Schema {
        path: path.to_path_buf(),
        message,
    };
    let cal = CalibrationParams::from_json(&read(path)?).map_err(|e| schema(e.to_string()))?;
    cal.validate().map_err(|e| schema(e.to_string()))?;
    Ok(cal)
}

pub fn load_scene_meta(path: &Path) -> Result<SceneMeta, SceneLoadError> {
    let meta: SceneMeta = serde_json::from_str(&read(path)?).map_err(|e| SceneLoadError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if meta.image_width == 0 || meta.image_height == 0 || !(meta.fps > 0.0) {
        return Err(SceneLoadError::Schema {
            path: path.to_path_buf(),
            message: "image size and fps must be positive".into(),
        });
    }
    Ok(meta)
}

/// Everything a scene directory provides.
#[derive(Debug, Clone)]
pub struct SceneInputs {
    pub detections: Vec<Detection>,
    pub vp: VanishingPoint,
    pub meta: SceneMeta,
    pub calibration: Option<CalibrationParams>,
}

/// Loads `detections.jsonl`, `vp.json`, `scene.json` and, if present,
/// `calibration.json` from `dir`.
pub fn load_scene_dir(dir: &Path) -> Result<SceneInputs, SceneLoadError> {
    let cal_path = dir.join(CALIBRATION_FILE);
    Ok(SceneInputs {
        detections: load_detections(&dir.join(DETECTIONS_FILE))?,
        vp: load_vp_sidecar(dir.join(VP_FILE))?,
        meta: load_scene_meta(&dir.join(SCENE_FILE))?,
        calibration: if cal_path.exists() {
            Some(load_calibration(&cal_path)?)
        } else {
            None
        },
    })
}

#[derive(Debug, Clone)]
pub struct SceneOutput {
    pub grid: PerspectiveGrid,
    pub streams: Vec<TokenStream>,
    /// Samples dropped because their anchor sat on or above the horizon.
    pub above_horizon: usize,
}

/// Runs the full per-scene pipeline. `fps` supplies timestamps for
/// detections that carry none.
pub fn run_pipeline(
    detections: &[Detection],
    vp: &VanishingPoint,
    image: ImageSize,
    cal: &CalibrationParams,
    fps: Option<f64>,
    cfg: &PipelineConfig,
) -> Result<SceneOutput, PipelineError> {
    cal.validate()?;
    let grid = build_perspective_grid(vp.point(), image.width, image.height, &cfg.grid)?;
    let mut tracks = assemble_tracks(detections, &cfg.tracker);
    if cfg.repair_enabled {
        tracks = repair_ids(tracks, &cfg.repair);
    }
    tracks.sort_by_key(|t| t.id);

    let mut above_horizon = 0;
    let mut streams = Vec::with_capacity(tracks.len());
    for track in &tracks {
        let smoothed = smooth_anchors(&track.anchors(), cfg.smoothing_window);
        let traj = smooth_trajectory(track, cfg.smoothing_window);
        let flags = stationary_flags(track, &cfg.stationary);
        let bboxes: Vec<_> = track.samples.iter().map(|s| s.bbox).collect();
        let labels = track_orientations(&traj, &bboxes, &flags, vp, image.width, &cfg.orientation);

        let mut states = Vec::with_capacity(track.samples.len());
        for (i, s) in track.samples.iter().enumerate() {
            let t = match (s.t, fps) {
                (Some(t), _) => t,
                (None, Some(f)) => s.frame as f64 / f,
                (None, None) => return Err(PipelineError::MissingTimebase { frame: s.frame }),
            };
            let position = match to_bev(smoothed[i], &grid, cal) {
                Ok(p) => p,
                Err(BevError::AboveHorizon { .. }) | Err(BevError::Geometry(GeometryError::PointAtInfinity(_))) => {
                    above_horizon += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let geo = match cal.geo_anchor() {
                Some(_) => Some(georeference(position, cal, grid.bev_width)?),
                None => None,
            };
            states.push(BevObject {
                track_id: track.id,
                class: track.class,
                position,
                geo,
                stationary: flags[i],
                orientation: labels[i],
                frame: s.frame,
                t,
                box3d: build_box3d(&s.bbox, labels[i], vp, &cfg.box3d).corner_array(),
            });
        }
        if !states.is_empty() {
            streams.push(TokenStream {
                track_id: track.id,
                class: track.class,
                states,
            });
        }
    }
    if above_horizon > 0 {
        log::warn!("dropped {above_horizon} samples at or above the horizon");
    }
    Ok(SceneOutput {
        grid,
        streams,
        above_horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{BBox, ObjectClass};

    fn det(frame: u64, x: f64, y2: f64, id: Option<u64>) -> Detection {
        Detection {
            frame,
            t: None,
            class: ObjectClass::Person,
            bbox: BBox::new(x, y2 - 60.0, x + 20.0, y2).unwrap(),
            confidence: 0.9,
            track_id: id,
        }
    }

    const IMG: ImageSize = ImageSize {
        width: 640.0,
        height: 480.0,
    };

    #[test]
    fn drops_samples_above_horizon() {
        let mut dets: Vec<_> = (0..3).map(|f| det(f, 300.0, 400.0, Some(1))).collect();
        dets.extend((0..3).map(|f| det(f, 500.0, 90.0, Some(2))));
        let vp = VanishingPoint::new(320.0, 100.0);
        let out = run_pipeline(&dets, &vp, IMG, &CalibrationParams::default(), Some(10.0), &PipelineConfig::default())
            .unwrap();
        assert_eq!(out.above_horizon, 3);
        assert_eq!(out.streams.len(), 1);
        assert_eq!(out.streams[0].states[0].t, 0.0);
    }

    #[test]
    fn requires_a_timebase() {
        let dets: Vec<_> = (3..6).map(|f| det(f, 300.0, 400.0, Some(1))).collect();
        let vp = VanishingPoint::new(320.0, 100.0);
        let err = run_pipeline(&dets, &vp, IMG, &CalibrationParams::default(), None, &PipelineConfig::default());
        assert!(matches!(err, Err(PipelineError::MissingTimebase { frame: 3 })));
    }

    #[test]
    fn geo_present_only_with_anchor() {
        let dets: Vec<_> = (0..5).map(|f| det(f, 300.0, 400.0 - f as f64, Some(1))).collect();
        let vp = VanishingPoint::new(320.0, 100.0);
        let cfg = PipelineConfig::default();
        let plain = run_pipeline(&dets, &vp, IMG, &CalibrationParams::default(), Some(10.0), &cfg).unwrap();
        assert!(plain.streams[0].states.iter().all(|s| s.geo.is_none()));
        let cal = CalibrationParams {
            camera_lat: Some(48.0),
            camera_lon: Some(11.0),
            ..CalibrationParams::default()
        };
        let geo = run_pipeline(&dets, &vp, IMG, &cal, Some(10.0), &cfg).unwrap();
        assert!(geo.streams[0].states.iter().all(|s| s.geo.is_some()));
    }
}
