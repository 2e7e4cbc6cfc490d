//! Synthetic pinhole-camera scenes with known ground truth.
//!
//! World frame: `z = 0` is the ground, `x` points east, `y` north, `z` up.
//! Camera frame: `x` right, `y` down, `z` forward. A world point `p` maps to
//! camera coordinates `R·p + T` and to pixels through `K`.

use std::fs;
use std::io;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bev::{calibrate_from_references, CalibrationParams, GroundReference, GroundReferences, METERS_PER_DEGREE};
use crate::geometry::{build_perspective_grid, GridParams, ImagePoint};
use crate::ingest::{BBox, Detection, ObjectClass};
use crate::pipeline::{SceneMeta, CALIBRATION_FILE, DETECTIONS_FILE, SCENE_FILE, VP_FILE};
use crate::vp::{segments_json, vp_sidecar_json, LineSegment, VanishingPoint};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("point is behind the camera (depth {0:e})")]
    BehindCamera(f64),
    #[error("direction is parallel to the image plane")]
    DirectionAtInfinity,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("calibration of synthetic scene failed: {0}")]
    Calibration(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// World-to-camera rotation for a camera with the given heading (clockwise
/// from north), downward pitch and roll about the optical axis, radians.
pub fn rotation_from_ypr(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    // Level camera facing north: camera x = east, y = down, z = north.
    let level = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
    rot_z(roll) * rot_x(pitch) * level * rot_z(yaw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal_px: f64,
    #[serde(default = "unit")]
    pub m_x: f64,
    #[serde(default = "unit")]
    pub m_y: f64,
    #[serde(default)]
    pub skew: f64,
    pub cx: f64,
    pub cy: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(SynthError::InvalidCamera("rotation is not orthonormal with det +1".into()));
        }
        let ax = intrinsics.focal_px * intrinsics.m_x;
        let ay = intrinsics.focal_px * intrinsics.m_y;
        if !(ax > 0.0 && ay > 0.0) {
            return Err(SynthError::InvalidCamera("focal scale factors must be positive".into()));
        }
        Ok(Self {
            intrinsics,
            rotation,
            translation,
        })
    }

    /// Camera at world `position` with heading/pitch/roll in degrees.
    pub fn from_pose(intrinsics: Intrinsics, position: Vector3<f64>, yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Result<Self> {
        let r = rotation_from_ypr(yaw_deg.to_radians(), pitch_deg.to_radians(), roll_deg.to_radians());
        Self::new(intrinsics, r, -(r * position))
    }

    pub fn k(&self) -> Matrix3<f64> {
        let i = &self.intrinsics;
        Matrix3::new(
            i.focal_px * i.m_x,
            i.skew,
            i.cx,
            0.0,
            i.focal_px * i.m_y,
            i.cy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Camera centre in world coordinates.
    pub fn position(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Unit viewing direction in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.transpose() * Vector3::z()
    }

    pub fn project_world(&self, p: Vector3<f64>) -> Result<ImagePoint> {
        let pc = self.rotation * p + self.translation;
        if pc.z <= 1e-9 {
            return Err(SynthError::BehindCamera(pc.z));
        }
        let h = self.k() * pc;
        Ok(ImagePoint::new(h.x / h.z, h.y / h.z))
    }

    /// Image of the point at infinity in world direction `d`.
    pub fn true_vp(&self, d: Vector3<f64>) -> Result<ImagePoint> {
        let n = d.norm();
        if n == 0.0 {
            return Err(SynthError::DirectionAtInfinity);
        }
        let dc = self.rotation * (d / n);
        if dc.z.abs() <= 1e-9 {
            return Err(SynthError::DirectionAtInfinity);
        }
        let h = self.k() * dc;
        Ok(ImagePoint::new(h.x / h.z, h.y / h.z))
    }

    /// Ground-plane point seen at pixel `p`, if the ray hits the ground ahead.
    pub fn ground_point(&self, p: ImagePoint) -> Option<Vector3<f64>> {
        let k_inv = self.k().try_inverse()?;
        let ray_c = k_inv * Vector3::new(p.x, p.y, 1.0);
        let ray_w = self.rotation.transpose() * ray_c;
        let c = self.position();
        if ray_w.z >= 0.0 {
            return None;
        }
        let s = -c.z / ray_w.z;
        Some(c + s * ray_w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
    #[serde(default)]
    pub pitch_deg: f64,
    #[serde(default)]
    pub roll_deg: f64,
    #[serde(flatten)]
    pub intrinsics: Intrinsics,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedSegment {
    pub frames: u64,
    /// Metres per second.
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub class: ObjectClass,
    /// Length along the heading, width across it, height; metres.
    pub footprint: [f64; 3],
    /// Ground-plane waypoints `[x, y]`.
    pub path: Vec<[f64; 2]>,
    /// Piecewise-constant speed; the last speed holds once it runs out.
    pub speed_profile: Vec<SpeedSegment>,
    #[serde(default)]
    pub start_frame: u64,
    #[serde(default)]
    pub end_frame: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Standard deviation of per-coordinate bbox jitter, pixels.
    pub bbox_sigma: f64,
    /// Probability of dropping each detection.
    pub dropout: f64,
    /// Emit detections without track ids.
    pub remove_ids: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoOrigin {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub camera: CameraSpec,
    pub fps: f64,
    pub duration_frames: u64,
    /// Road direction, degrees clockwise from north.
    #[serde(default)]
    pub road_heading_deg: f64,
    /// Lateral offsets (metres, right positive) of road-edge lines.
    #[serde(default = "default_edges")]
    pub road_edges: Vec<f64>,
    #[serde(default)]
    pub geo_origin: Option<GeoOrigin>,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
}

fn default_edges() -> Vec<f64> {
    vec![-7.0, -3.5, 0.0, 3.5, 7.0]
}

impl Scenario {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn camera_model(&self) -> Result<CameraModel> {
        let c = &self.camera;
        CameraModel::from_pose(
            c.intrinsics,
            Vector3::from(c.position),
            c.yaw_deg,
            c.pitch_deg,
            c.roll_deg,
        )
    }

    pub fn road_axis(&self) -> Vector3<f64> {
        let h = self.road_heading_deg.to_radians();
        Vector3::new(h.sin(), h.cos(), 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::InvalidScenario(m.into()));
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be positive");
        }
        if self.camera.width == 0 || self.camera.height == 0 {
            return bad("image size must be positive");
        }
        if self.camera.position[2] <= 0.0 {
            return bad("camera must be above the ground plane");
        }
        if !(0.0..1.0).contains(&self.noise.dropout) || self.noise.bbox_sigma < 0.0 {
            return bad("noise parameters out of range");
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.path.is_empty() {
                return Err(SynthError::InvalidScenario(format!("agent {i} has an empty path")));
            }
            if a.footprint.iter().any(|v| !(*v > 0.0)) {
                return Err(SynthError::InvalidScenario(format!("agent {i} footprint must be positive")));
            }
            if a.speed_profile.iter().any(|s| s.speed < 0.0) {
                return Err(SynthError::InvalidScenario(format!("agent {i} has negative speed")));
            }
        }
        self.camera_model()?;
        Ok(())
    }
}

/// Distance travelled by frame `k` frames after the agent's start.
fn travelled(profile: &[SpeedSegment], k: u64, fps: f64) -> f64 {
    let mut left = k;
    let mut dist = 0.0;
    let mut last = 0.0;
    for seg in profile {
        let n = left.min(seg.frames);
        dist += seg.speed * n as f64 / fps;
        left -= n;
        last = seg.speed;
        if left == 0 {
            return dist;
        }
    }
    dist + last * left as f64 / fps
}

/// Position and unit heading at arc length `s` along a polyline.
fn along_path(path: &[[f64; 2]], s: f64) -> ([f64; 2], [f64; 2]) {
    let mut heading = [0.0, 1.0];
    let mut remaining = s;
    for w in path.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        if len == 0.0 {
            continue;
        }
        heading = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        if remaining <= len {
            return ([a[0] + heading[0] * remaining, a[1] + heading[1] * remaining], heading);
        }
        remaining -= len;
    }
    (path[path.len() - 1], heading)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSample {
    pub agent_id: u64,
    pub frame: u64,
    pub t: f64,
    pub class: ObjectClass,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub detections: Vec<Detection>,
    pub vp: VanishingPoint,
    pub ground_truth: Vec<GroundTruthSample>,
    pub segments: Vec<LineSegment>,
    pub references: GroundReferences,
    /// Calibration fitted from `references` on the default grid.
    pub calibration: CalibrationParams,
    pub image_width: u32,
    pub image_height: u32,
    pub fps: f64,
}

fn footprint_corners(center: [f64; 2], heading: [f64; 2], dims: [f64; 3]) -> [Vector3<f64>; 8] {
    let (hl, hw) = (dims[0] / 2.0, dims[1] / 2.0);
    let side = [heading[1], -heading[0]];
    let mut out = [Vector3::zeros(); 8];
    let mut k = 0;
    for z in [0.0, dims[2]] {
        for (a, b) in [(-hl, -hw), (-hl, hw), (hl, hw), (hl, -hw)] {
            out[k] = Vector3::new(
                center[0] + a * heading[0] + b * side[0],
                center[1] + a * heading[1] + b * side[1],
                z,
            );
            k += 1;
        }
    }
    out
}

/// Axis-aligned hull of the agent's projected corners, if it is in front of
/// the camera and overlaps the image.
fn agent_bbox(cam: &CameraModel, corners: &[Vector3<f64>; 8], w: f64, h: f64) -> Option<BBox> {
    let mut pts = Vec::with_capacity(8);
    for c in corners {
        pts.push(cam.project_world(*c).ok()?);
    }
    let x1 = pts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let x2 = pts.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let y1 = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let y2 = pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    if x2 <= 0.0 || x1 >= w || y2 <= 0.0 || y1 >= h {
        return None;
    }
    BBox::new(x1, y1, x2, y2)
}

fn world_to_geo(origin: GeoOrigin, x: f64, y: f64) -> (f64, f64) {
    (
        origin.lat + y / METERS_PER_DEGREE,
        origin.lon + x / (METERS_PER_DEGREE * origin.lat.to_radians().cos()),
    )
}

fn road_point(cam_ground: Vector3<f64>, axis: Vector3<f64>, ahead: f64, lateral: f64) -> Vector3<f64> {
    let right = Vector3::new(axis.y, -axis.x, 0.0);
    cam_ground + ahead * axis + lateral * right
}

fn project_segment(cam: &CameraModel, a: Vector3<f64>, b: Vector3<f64>) -> Option<LineSegment> {
    let p = cam.project_world(a).ok()?;
    let q = cam.project_world(b).ok()?;
    (p.distance(&q) > 1e-6).then(|| LineSegment::new(p, q))
}

/// Generates every synthetic artefact for a scenario.
///
/// Ground truth and the noiseless geometry depend only on the scenario;
/// `seed` drives bbox jitter and dropout.
pub fn emit_scenario(s: &Scenario, seed: u64) -> Result<SynthOutput> {
    s.validate()?;
    let cam = s.camera_model()?;
    let (w, h) = (s.camera.width as f64, s.camera.height as f64);
    let axis = s.road_axis();
    let vp_pt = cam.true_vp(axis)?;
    let vp = VanishingPoint::new(vp_pt.x, vp_pt.y);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, s.noise.bbox_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| SynthError::InvalidScenario(e.to_string()))?;

    let mut detections = Vec::new();
    let mut ground_truth = Vec::new();
    for frame in 0..s.duration_frames {
        let t = frame as f64 / s.fps;
        for (i, agent) in s.agents.iter().enumerate() {
            let id = i as u64 + 1;
            if frame < agent.start_frame || agent.end_frame.is_some_and(|e| frame > e) {
                continue;
            }
            let dist = travelled(&agent.speed_profile, frame - agent.start_frame, s.fps);
            let (center, heading) = along_path(&agent.path, dist);
            let corners = footprint_corners(center, heading, agent.footprint);
            let Some(bbox) = agent_bbox(&cam, &corners, w, h) else {
                continue;
            };
            ground_truth.push(GroundTruthSample {
                agent_id: id,
                frame,
                t,
                class: agent.class,
                x: center[0],
                y: center[1],
            });
            // Noise draws happen in a fixed order whether or not they are used.
            let drop = rng.gen::<f64>() < s.noise.dropout;
            let d: [f64; 4] = std::array::from_fn(|_| {
                if s.noise.bbox_sigma > 0.0 {
                    jitter.sample(&mut rng)
                } else {
                    0.0
                }
            });
            if drop {
                continue;
            }
            let mut c = [bbox.x1 + d[0], bbox.y1 + d[1], bbox.x2 + d[2], bbox.y2 + d[3]];
            if c[2] - c[0] < 1.0 {
                c[2] = c[0] + 1.0;
            }
            if c[3] - c[1] < 1.0 {
                c[3] = c[1] + 1.0;
            }
            detections.push(Detection {
                frame,
                t: Some(t),
                class: agent.class,
                bbox: BBox::new(c[0], c[1], c[2], c[3]).expect("widened box is valid"),
                confidence: 1.0,
                track_id: (!s.noise.remove_ids).then_some(id),
            });
        }
    }

    let pos = cam.position();
    let cam_ground = Vector3::new(pos.x, pos.y, 0.0);
    let mut segments = Vec::new();
    for &lat in &s.road_edges {
        for k in 0..6 {
            let a = road_point(cam_ground, axis, 8.0 + 10.0 * k as f64, lat);
            let b = road_point(cam_ground, axis, 14.0 + 10.0 * k as f64, lat);
            segments.extend(project_segment(&cam, a, b));
        }
    }
    // Crosswalk stripes: not road-parallel, so they act as outliers.
    for ahead in [15.0, 22.0] {
        let a = road_point(cam_ground, axis, ahead, -4.0);
        let b = road_point(cam_ground, axis, ahead, 4.0);
        segments.extend(project_segment(&cam, a, b));
    }

    let img = |p: Vector3<f64>| -> Result<[f64; 2]> {
        let q = cam.project_world(p)?;
        Ok([q.x, q.y])
    };
    let references = GroundReferences {
        lateral: GroundReference {
            a: img(road_point(cam_ground, axis, 15.0, -3.0))?,
            b: img(road_point(cam_ground, axis, 15.0, 3.0))?,
            meters: 6.0,
        },
        depth: GroundReference {
            a: img(road_point(cam_ground, axis, 12.0, 0.0))?,
            b: img(road_point(cam_ground, axis, 30.0, 0.0))?,
            meters: 18.0,
        },
    };

    let grid = build_perspective_grid(vp_pt, w, h, &GridParams::default())
        .map_err(|e| SynthError::Calibration(e.to_string()))?;
    let mut base = CalibrationParams {
        heading: s.road_heading_deg.rem_euclid(360.0),
        ..CalibrationParams::default()
    };
    if let Some(origin) = s.geo_origin {
        let g = cam
            .ground_point(ImagePoint::new(w / 2.0, h))
            .ok_or_else(|| SynthError::Calibration("bottom image edge does not see the ground".into()))?;
        let (lat, lon) = world_to_geo(origin, g.x, g.y);
        base.camera_lat = Some(lat);
        base.camera_lon = Some(lon);
    }
    let calibration = calibrate_from_references(&grid, &references, &base)
        .map_err(|e| SynthError::Calibration(e.to_string()))?;

    Ok(SynthOutput {
        detections,
        vp,
        ground_truth,
        segments,
        references,
        calibration,
        image_width: s.camera.width,
        image_height: s.camera.height,
        fps: s.fps,
    })
}

pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";
pub const SEGMENTS_FILE: &str = "segments.json";
pub const REFERENCES_FILE: &str = "references.json";

impl SynthOutput {
    pub fn detections_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.detections {
            out.push_str(&d.to_json_line());
            out.push('\n');
        }
        out
    }

    pub fn ground_truth_jsonl(&self) -> String {
        let mut out = String::new();
        for g in &self.ground_truth {
            out.push_str(&serde_json::to_string(g).expect("ground truth serializes"));
            out.push('\n');
        }
        out
    }

    pub fn meta(&self) -> SceneMeta {
        SceneMeta {
            image_width: self.image_width,
            image_height: self.image_height,
            fps: self.fps,
        }
    }

    /// Writes all artefacts into `dir`, creating it if needed.
    pub fn write_to_dir(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(DETECTIONS_FILE), self.detections_jsonl())?;
        fs::write(dir.join(VP_FILE), vp_sidecar_json(&self.vp) + "\n")?;
        fs::write(dir.join(GROUND_TRUTH_FILE), self.ground_truth_jsonl())?;
        fs::write(dir.join(SEGMENTS_FILE), segments_json(&self.segments) + "\n")?;
        fs::write(
            dir.join(REFERENCES_FILE),
            serde_json::to_string_pretty(&self.references).expect("references serialize") + "\n",
        )?;
        fs::write(dir.join(CALIBRATION_FILE), self.calibration.to_json() + "\n")?;
        fs::write(
            dir.join(SCENE_FILE),
            serde_json::to_string_pretty(&self.meta()).expect("meta serializes") + "\n",
        )?;
        Ok(())
    }
}
