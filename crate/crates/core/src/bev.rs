//! Vector bird's-eye-view: calibrated projection of anchors, georeferencing
//! and the token / GeoJSON exports.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::box3d::Orientation;
use crate::geometry::{BevPoint, GeometryError, ImagePoint, PerspectiveGrid};
use crate::ingest::ObjectClass;

/// Metres per degree of latitude in the local tangent-plane approximation.
pub const METERS_PER_DEGREE: f64 = 111_320.0;

/// Pixels an anchor must sit below the horizon to be projected.
pub const HORIZON_MARGIN: f64 = 1.0;

#[derive(Debug, Error)]
pub enum BevError {
    #[error("anchor ({x:.2}, {y:.2}) is at or above the horizon y = {horizon:.2}")]
    AboveHorizon { x: f64, y: f64, horizon: f64 },
    #[error("calibration has no camera latitude/longitude")]
    MissingGeoAnchor,
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("line {line}: {message}")]
    TokenParse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, BevError>;

/// Manual calibration of the BEV map plus its geographic anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationParams {
    /// Depth-scale multiplier applied to `v`.
    pub z_value: f64,
    /// Lateral offset added to `u`, BEV units.
    pub x_value: f64,
    pub meters_per_unit: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub camera_lat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub camera_lon: Option<f64>,
    /// Degrees clockwise from true north of the BEV +v axis.
    pub heading: f64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self {
            z_value: 1.0,
            x_value: 0.0,
            meters_per_unit: 1.0,
            camera_lat: None,
            camera_lon: None,
            heading: 0.0,
        }
    }
}

impl CalibrationParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BevError::InvalidCalibration(m));
        if !(self.z_value.is_finite() && self.z_value > 0.0) {
            return bad(format!("z_value must be > 0, got {}", self.z_value));
        }
        if !self.x_value.is_finite() {
            return bad("x_value must be finite".into());
        }
        if !(self.meters_per_unit.is_finite() && self.meters_per_unit > 0.0) {
            return bad(format!(
                "meters_per_unit must be > 0, got {}",
                self.meters_per_unit
            ));
        }
        if let Some(lat) = self.camera_lat {
            if !(-90.0..=90.0).contains(&lat) {
                return bad(format!("camera_lat {lat} outside [-90, 90]"));
            }
        }
        if let Some(lon) = self.camera_lon {
            if !(-180.0..=180.0).contains(&lon) {
                return bad(format!("camera_lon {lon} outside [-180, 180]"));
            }
        }
        if self.camera_lat.is_some() != self.camera_lon.is_some() {
            return bad("camera_lat and camera_lon must be given together".into());
        }
        if !(0.0..360.0).contains(&self.heading) {
            return bad(format!("heading {} outside [0, 360)", self.heading));
        }
        Ok(())
    }

    pub fn geo_anchor(&self) -> Option<(f64, f64)> {
        Some((self.camera_lat?, self.camera_lon?))
    }

    /// Applies the z/x adjustment to an uncalibrated BEV point.
    pub fn apply(&self, p: BevPoint) -> BevPoint {
        BevPoint::new(p.u + self.x_value, p.v * self.z_value)
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }
}

/// Projects a ground-contact anchor into calibrated BEV coordinates.
pub fn to_bev(anchor: ImagePoint, grid: &PerspectiveGrid, cal: &CalibrationParams) -> Result<BevPoint> {
    let horizon = grid.horizon();
    if !horizon.is_below(anchor, HORIZON_MARGIN) {
        return Err(BevError::AboveHorizon {
            x: anchor.x,
            y: anchor.y,
            horizon: horizon.y,
        });
    }
    let p = grid.homography.project(anchor)?;
    Ok(cal.apply(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

/// Local east/north offsets in metres of a calibrated BEV point from the
/// camera's geographic anchor, which sits at `(bev_width / 2, 0)`.
pub fn east_north(p: BevPoint, cal: &CalibrationParams, bev_width: f64) -> (f64, f64) {
    let m = cal.meters_per_unit;
    let (s, c) = cal.heading.to_radians().sin_cos();
    let lateral = p.u - bev_width / 2.0;
    let north = m * p.v * c - m * lateral * s;
    let east = m * p.v * s + m * lateral * c;
    (east, north)
}

pub fn georeference(p: BevPoint, cal: &CalibrationParams, bev_width: f64) -> Result<GeoPoint> {
    let (lat0, lon0) = cal.geo_anchor().ok_or(BevError::MissingGeoAnchor)?;
    let (east, north) = east_north(p, cal, bev_width);
    Ok(GeoPoint {
        lat: lat0 + north / METERS_PER_DEGREE,
        lon: lon0 + east / (METERS_PER_DEGREE * lat0.to_radians().cos()),
    })
}

/// Inverse of [`georeference`].
pub fn bev_from_geo(g: GeoPoint, cal: &CalibrationParams, bev_width: f64) -> Result<BevPoint> {
    let (lat0, lon0) = cal.geo_anchor().ok_or(BevError::MissingGeoAnchor)?;
    let north = (g.lat - lat0) * METERS_PER_DEGREE;
    let east = (g.lon - lon0) * METERS_PER_DEGREE * lat0.to_radians().cos();
    let m = cal.meters_per_unit;
    let (s, c) = cal.heading.to_radians().sin_cos();
    Ok(BevPoint::new(
        bev_width / 2.0 + (east * c - north * s) / m,
        (east * s + north * c) / m,
    ))
}

/// Two image points with a known ground distance between them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundReference {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub meters: f64,
}

/// Reference measurements used to fit `meters_per_unit` and `z_value`.
///
/// `lateral` should run mostly across the image and `depth` mostly along
/// the road so the two equations are independent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundReferences {
    pub lateral: GroundReference,
    pub depth: GroundReference,
}

/// Fits `meters_per_unit` and `z_value` so both reference distances are
/// reproduced exactly. Other fields are copied from `base`.
///
/// With `Δ` the uncalibrated BEV difference of a pair, each reference gives
/// `m²·Δu² + (m·z)²·Δv² = d²`, linear in `m²` and `(m·z)²`.
pub fn calibrate_from_references(
    grid: &PerspectiveGrid,
    refs: &GroundReferences,
    base: &CalibrationParams,
) -> Result<CalibrationParams> {
    let delta = |r: &GroundReference| -> Result<(f64, f64)> {
        let identity = CalibrationParams::default();
        let a = to_bev(ImagePoint::new(r.a[0], r.a[1]), grid, &identity)?;
        let b = to_bev(ImagePoint::new(r.b[0], r.b[1]), grid, &identity)?;
        Ok(((a.u - b.u).powi(2), (a.v - b.v).powi(2)))
    };
    let (u1, v1) = delta(&refs.lateral)?;
    let (u2, v2) = delta(&refs.depth)?;
    let (d1, d2) = (refs.lateral.meters.powi(2), refs.depth.meters.powi(2));
    let det = u1 * v2 - u2 * v1;
    let scale = (u1 + v1) * (u2 + v2);
    if det.abs() <= 1e-12 * scale {
        return Err(BevError::InvalidCalibration(
            "reference pairs are parallel in the BEV plane".into(),
        ));
    }
    let m2 = (d1 * v2 - d2 * v1) / det;
    let mz2 = (u1 * d2 - u2 * d1) / det;
    if !(m2 > 0.0 && mz2 > 0.0) {
        return Err(BevError::InvalidCalibration(
            "references are inconsistent with an axis-aligned scale".into(),
        ));
    }
    let m = m2.sqrt();
    let cal = CalibrationParams {
        meters_per_unit: m,
        z_value: mz2.sqrt() / m,
        ..*base
    };
    cal.validate()?;
    Ok(cal)
}

/// One road user in one frame of the BEV scene.
#[derive(Debug, Clone, PartialEq)]
pub struct BevObject {
    pub track_id: u64,
    pub class: ObjectClass,
    pub position: BevPoint,
    pub geo: Option<GeoPoint>,
    pub stationary: bool,
    pub orientation: Orientation,
    pub frame: u64,
    pub t: f64,
    /// Image-space 3D box corners.
    pub box3d: [[f64; 2]; 8],
}

/// All states of one track over the video interval, frames strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStream {
    pub track_id: u64,
    pub class: ObjectClass,
    pub states: Vec<BevObject>,
}

/// Wire form of a token line; field order is the file's key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenRecord {
    track_id: u64,
    frame: u64,
    t: f64,
    class: ObjectClass,
    u: f64,
    v: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    lat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    lon: Option<f64>,
    stationary: bool,
    orientation: Orientation,
    box3d: [[f64; 2]; 8],
}

impl From<&BevObject> for TokenRecord {
    fn from(o: &BevObject) -> Self {
        TokenRecord {
            track_id: o.track_id,
            frame: o.frame,
            t: o.t,
            class: o.class,
            u: o.position.u,
            v: o.position.v,
            lat: o.geo.map(|g| g.lat),
            lon: o.geo.map(|g| g.lon),
            stationary: o.stationary,
            orientation: o.orientation,
            box3d: o.box3d,
        }
    }
}

impl TokenRecord {
    fn into_object(self) -> std::result::Result<BevObject, String> {
        let geo = match (self.lat, self.lon) {
            (Some(lat), Some(lon)) => Some(GeoPoint { lat, lon }),
            (None, None) => None,
            _ => return Err("lat and lon must appear together".into()),
        };
        Ok(BevObject {
            track_id: self.track_id,
            class: self.class,
            position: BevPoint::new(self.u, self.v),
            geo,
            stationary: self.stationary,
            orientation: self.orientation,
            frame: self.frame,
            t: self.t,
            box3d: self.box3d,
        })
    }
}

/// One token record as JSON, in the token file's key order.
pub fn token_json(o: &BevObject) -> Value {
    serde_json::to_value(TokenRecord::from(o)).expect("token serializes")
}

/// Newline-delimited token records ordered by `(track_id, frame)`.
pub fn export_tokens(streams: &[TokenStream]) -> String {
    let mut records: Vec<TokenRecord> = streams
        .iter()
        .flat_map(|s| s.states.iter().map(TokenRecord::from))
        .collect();
    records.sort_by_key(|r| (r.track_id, r.frame));
    let mut out = String::new();
    for r in &records {
        out.push_str(&serde_json::to_string(r).expect("token serializes"));
        out.push('\n');
    }
    out
}

/// Parses a token file back into per-track streams ordered by track id.
pub fn parse_tokens<R: BufRead>(reader: R) -> Result<Vec<TokenStream>> {
    let mut by_id: BTreeMap<u64, TokenStream> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| BevError::TokenParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TokenRecord = serde_json::from_str(&line).map_err(|e| BevError::TokenParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let obj = rec.into_object().map_err(|message| BevError::TokenParse {
            line: i + 1,
            message,
        })?;
        let stream = by_id.entry(obj.track_id).or_insert_with(|| TokenStream {
            track_id: obj.track_id,
            class: obj.class,
            states: Vec::new(),
        });
        if stream.class != obj.class {
            return Err(BevError::TokenParse {
                line: i + 1,
                message: format!("track {} changes class", obj.track_id),
            });
        }
        stream.states.push(obj);
    }
    for s in by_id.values_mut() {
        s.states.sort_by_key(|o| o.frame);
        if s.states.windows(2).any(|w| w[0].frame == w[1].frame) {
            return Err(BevError::TokenParse {
                line: 0,
                message: format!("track {} repeats a frame", s.track_id),
            });
        }
    }
    Ok(by_id.into_values().collect())
}

pub fn parse_tokens_str(text: &str) -> Result<Vec<TokenStream>> {
    parse_tokens(text.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeoJsonMode {
    Points,
    LineStrings,
}

fn position(o: &BevObject) -> Result<Value> {
    let g = o.geo.ok_or(BevError::MissingGeoAnchor)?;
    Ok(json!([g.lon, g.lat]))
}

/// GeoJSON FeatureCollection of the scene, positions in `[lon, lat]` order.
///
/// Only track id, class, frame, time, stationary flag and orientation are
/// emitted as properties.
pub fn export_geojson(streams: &[TokenStream], mode: GeoJsonMode) -> Result<Value> {
    let mut sorted: Vec<&TokenStream> = streams.iter().collect();
    sorted.sort_by_key(|s| s.track_id);
    let mut features = Vec::new();
    for s in sorted {
        match mode {
            GeoJsonMode::Points => {
                for o in &s.states {
                    features.push(json!({
                        "type": "Feature",
                        "geometry": {"type": "Point", "coordinates": position(o)?},
                        "properties": {
                            "track_id": o.track_id,
                            "class": o.class,
                            "frame": o.frame,
                            "t": o.t,
                            "stationary": o.stationary,
                            "orientation": o.orientation,
                        }
                    }));
                }
            }
            GeoJsonMode::LineStrings => {
                if s.states.is_empty() {
                    continue;
                }
                let coords = s.states.iter().map(position).collect::<Result<Vec<_>>>()?;
                // A LineString needs two positions; single-state tokens become points.
                let geometry = if coords.len() == 1 {
                    json!({"type": "Point", "coordinates": coords[0]})
                } else {
                    json!({"type": "LineString", "coordinates": coords})
                };
                let mut props = Map::new();
                props.insert("track_id".into(), json!(s.track_id));
                props.insert("class".into(), json!(s.class));
                props.insert("frames".into(), json!(s.states.iter().map(|o| o.frame).collect::<Vec<_>>()));
                props.insert("timestamps".into(), json!(s.states.iter().map(|o| o.t).collect::<Vec<_>>()));
                props.insert(
                    "stationary".into(),
                    json!(s.states.iter().map(|o| o.stationary).collect::<Vec<_>>()),
                );
                props.insert(
                    "orientation".into(),
                    json!(s.states.iter().map(|o| o.orientation).collect::<Vec<_>>()),
                );
                features.push(json!({"type": "Feature", "geometry": geometry, "properties": props}));
            }
        }
    }
    Ok(json!({"type": "FeatureCollection", "features": features}))
}
