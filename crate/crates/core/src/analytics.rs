//! Distance analytics over calibrated BEV token streams.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bev::{CalibrationParams, TokenStream};
use crate::geometry::BevPoint;
use crate::ingest::ObjectClass;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("objects carry different calibrations")]
    MixedCalibration,
    #[error("unknown camera `{0}`")]
    UnknownCamera(String),
    #[error("camera registry: {0}")]
    Registry(String),
    #[error("cell size must be positive, got {0}")]
    InvalidCellSize(f64),
}

pub type Result<T> = std::result::Result<T, AnalyticsError>;

/// Metric position (metres) of a calibrated BEV point.
pub fn metric(p: BevPoint, cal: &CalibrationParams) -> (f64, f64) {
    (cal.meters_per_unit * p.u, cal.meters_per_unit * p.v)
}

/// Symmetric matrix of metric distances, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Distances in metres between positions that must share one calibration.
pub fn pairwise_distances(
    positions: &[(BevPoint, &CalibrationParams)],
) -> Result<DistanceMatrix> {
    let n = positions.len();
    if let Some((_, first)) = positions.first() {
        if positions.iter().any(|(_, c)| c != first) {
            return Err(AnalyticsError::MixedCalibration);
        }
    }
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let (a, cal) = positions[i];
            let b = positions[j].0;
            let d = cal.meters_per_unit * a.distance(&b);
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViolationConfig {
    pub threshold_m: f64,
    /// Minimum run length in consecutive scene frames.
    pub min_duration: usize,
    /// Bucket width for per-interval counts; `None` reports a single bucket.
    pub interval_frames: Option<u64>,
}

impl Default for ViolationConfig {
    fn default() -> Self {
        Self {
            threshold_m: 2.0,
            min_duration: 1,
            interval_frames: None,
        }
    }
}

/// A contiguous run of two pedestrians closer than the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationEvent {
    pub frame: u64,
    pub end_frame: u64,
    pub t: f64,
    pub pair: (u64, u64),
    /// Minimum distance over the run, metres.
    pub distance: f64,
    pub duration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalCount {
    pub start_frame: u64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub events: Vec<ViolationEvent>,
    pub count: usize,
    pub per_interval: Vec<IntervalCount>,
}

struct Run {
    start: u64,
    last_index: usize,
    last_frame: u64,
    t: f64,
    min: f64,
    len: usize,
}

/// Finds person-person contacts below the distance threshold.
///
/// A run continues while the pair stays within the threshold at each next
/// frame of the scene; a missing frame for either person ends it.
pub fn detect_violations(
    streams: &[TokenStream],
    cal: &CalibrationParams,
    cfg: &ViolationConfig,
) -> ViolationReport {
    let mut frames: BTreeMap<u64, Vec<(u64, f64, (f64, f64))>> = BTreeMap::new();
    let mut all_frames = BTreeSet::new();
    for s in streams {
        for o in &s.states {
            all_frames.insert(o.frame);
            if s.class == ObjectClass::Person {
                frames
                    .entry(o.frame)
                    .or_default()
                    .push((s.track_id, o.t, metric(o.position, cal)));
            }
        }
    }
    let frame_index: HashMap<u64, usize> = all_frames.iter().enumerate().map(|(i, &f)| (f, i)).collect();

    let mut open: BTreeMap<(u64, u64), Run> = BTreeMap::new();
    let mut events = Vec::new();
    let close = |run: Run, pair: (u64, u64), events: &mut Vec<ViolationEvent>| {
        if run.len >= cfg.min_duration {
            events.push(ViolationEvent {
                frame: run.start,
                end_frame: run.last_frame,
                t: run.t,
                pair,
                distance: run.min,
                duration: run.len,
            });
        }
    };

    for (&frame, objs) in &frames {
        let idx = frame_index[&frame];
        let mut objs = objs.clone();
        objs.sort_by_key(|o| o.0);
        for i in 0..objs.len() {
            for j in i + 1..objs.len() {
                let (a, ta, pa) = objs[i];
                let (b, _, pb) = objs[j];
                if a == b {
                    continue;
                }
                let d = (pa.0 - pb.0).hypot(pa.1 - pb.1);
                if d >= cfg.threshold_m {
                    continue;
                }
                let pair = (a.min(b), a.max(b));
                match open.get_mut(&pair) {
                    Some(run) if run.last_index + 1 == idx => {
                        run.last_index = idx;
                        run.last_frame = frame;
                        run.min = run.min.min(d);
                        run.len += 1;
                    }
                    _ => {
                        if let Some(old) = open.remove(&pair) {
                            close(old, pair, &mut events);
                        }
                        open.insert(
                            pair,
                            Run {
                                start: frame,
                                last_index: idx,
                                last_frame: frame,
                                t: ta,
                                min: d,
                                len: 1,
                            },
                        );
                    }
                }
            }
        }
    }
    for (pair, run) in open {
        close(run, pair, &mut events);
    }
    events.sort_by(|x, y| (x.frame, x.pair).cmp(&(y.frame, y.pair)));

    let mut buckets: BTreeMap<u64, usize> = BTreeMap::new();
    for e in &events {
        let key = match cfg.interval_frames {
            Some(w) if w > 0 => e.frame / w * w,
            _ => 0,
        };
        *buckets.entry(key).or_default() += 1;
    }
    ViolationReport {
        count: events.len(),
        per_interval: buckets
            .into_iter()
            .map(|(start_frame, count)| IntervalCount { start_frame, count })
            .collect(),
        events,
    }
}

/// Per-class visit counts on a regular metric grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub cell_size: f64,
    /// Metric position of the grid's lower corner.
    pub origin: BevPoint,
    pub cols: usize,
    pub rows: usize,
    /// Row-major counts per class, `rows × cols` each.
    pub layers: BTreeMap<ObjectClass, Vec<u64>>,
}

impl OccupancyGrid {
    pub fn total(&self) -> u64 {
        self.layers.values().flat_map(|l| l.iter()).sum()
    }

    pub fn count(&self, class: ObjectClass, col: usize, row: usize) -> u64 {
        self.layers
            .get(&class)
            .map_or(0, |l| l[row * self.cols + col])
    }

    /// Cell containing a metric position, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.origin.u) / self.cell_size).floor();
        let r = ((y - self.origin.v) / self.cell_size).floor();
        if c < 0.0 || r < 0.0 || c as usize >= self.cols || r as usize >= self.rows {
            return None;
        }
        Some((c as usize, r as usize))
    }
}

/// Counts every object-state into the cell holding its metric position.
/// Bounds are the data bounding box padded by one cell on every side.
pub fn occupancy(streams: &[TokenStream], cal: &CalibrationParams, cell_size: f64) -> Result<OccupancyGrid> {
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(AnalyticsError::InvalidCellSize(cell_size));
    }
    let points: Vec<(ObjectClass, (f64, f64))> = streams
        .iter()
        .flat_map(|s| s.states.iter().map(move |o| (s.class, metric(o.position, cal))))
        .filter(|(_, p)| p.0.is_finite() && p.1.is_finite())
        .collect();
    if points.is_empty() {
        return Ok(OccupancyGrid {
            cell_size,
            origin: BevPoint::new(0.0, 0.0),
            cols: 0,
            rows: 0,
            layers: BTreeMap::new(),
        });
    }
    let min_x = points.iter().map(|p| p.1 .0).fold(f64::INFINITY, f64::min);
    let min_y = points.iter().map(|p| p.1 .1).fold(f64::INFINITY, f64::min);
    let max_x = points.iter().map(|p| p.1 .0).fold(f64::NEG_INFINITY, f64::max);
    let max_y = points.iter().map(|p| p.1 .1).fold(f64::NEG_INFINITY, f64::max);
    let origin = BevPoint::new(min_x - cell_size, min_y - cell_size);
    let cols = ((max_x - origin.u) / cell_size).floor() as usize + 2;
    let rows = ((max_y - origin.v) / cell_size).floor() as usize + 2;
    let mut grid = OccupancyGrid {
        cell_size,
        origin,
        cols,
        rows,
        layers: BTreeMap::new(),
    };
    for (class, (x, y)) in points {
        let (c, r) = grid.cell_of(x, y).expect("padded bounds contain every point");
        let cols = grid.cols;
        let layer = grid
            .layers
            .entry(class)
            .or_insert_with(|| vec![0; rows * cols]);
        layer[r * cols + c] += 1;
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub camera_id: String,
    pub lat: f64,
    pub lon: f64,
    pub heading: f64,
}

/// Camera id to location lookup, loaded from `camera_id,lat,lon,heading` CSV.
#[derive(Debug, Clone, Default)]
pub struct CameraRegistry {
    entries: BTreeMap<String, CameraEntry>,
}

impl CameraRegistry {
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| AnalyticsError::Registry(e.to_string()))?
            .clone();
        let expected = ["camera_id", "lat", "lon", "heading"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(AnalyticsError::Registry(format!(
                "expected header `{}`, got `{}`",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = BTreeMap::new();
        for rec in rdr.deserialize::<CameraEntry>() {
            let e = rec.map_err(|e| AnalyticsError::Registry(e.to_string()))?;
            if entries.insert(e.camera_id.clone(), e.clone()).is_some() {
                return Err(AnalyticsError::Registry(format!(
                    "duplicate camera `{}`",
                    e.camera_id
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, id: &str) -> Option<&CameraEntry> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraResult {
    pub camera_id: String,
    pub violation_count: usize,
}

/// Joins per-camera violation counts to camera locations as a GeoJSON
/// point layer, in input order.
pub fn aggregate_scenes(results: &[CameraResult], registry: &CameraRegistry) -> Result<Value> {
    let features = results
        .iter()
        .map(|r| {
            let cam = registry
                .get(&r.camera_id)
                .ok_or_else(|| AnalyticsError::UnknownCamera(r.camera_id.clone()))?;
            Ok(json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [cam.lon, cam.lat]},
                "properties": {"camera_id": r.camera_id, "count": r.violation_count},
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({"type": "FeatureCollection", "features": features}))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev::BevObject;
    use crate::box3d::Orientation;

    fn stream(id: u64, class: ObjectClass, pts: &[(u64, f64, f64)]) -> TokenStream {
        TokenStream {
            track_id: id,
            class,
            states: pts
                .iter()
                .map(|&(frame, u, v)| BevObject {
                    track_id: id,
                    class,
                    position: BevPoint::new(u, v),
                    geo: None,
                    stationary: false,
                    orientation: Orientation::SideView,
                    frame,
                    t: frame as f64 / 10.0,
                    box3d: [[0.0; 2]; 8],
                })
                .collect(),
        }
    }

    #[test]
    fn three_four_five() {
        let cal = CalibrationParams::default();
        let m = pairwise_distances(&[(BevPoint::new(0.0, 0.0), &cal), (BevPoint::new(3.0, 4.0), &cal)]).unwrap();
        assert_eq!(m.get(0, 1), 5.0);
        assert_eq!(m.get(1, 0), 5.0);
        assert_eq!(m.get(0, 0), 0.0);
        let one = pairwise_distances(&[(BevPoint::new(7.0, 1.0), &cal)]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.get(0, 0), 0.0);
    }

    #[test]
    fn mixed_calibration_rejected() {
        let a = CalibrationParams::default();
        let b = CalibrationParams { meters_per_unit: 2.0, ..a };
        assert!(matches!(
            pairwise_distances(&[(BevPoint::new(0.0, 0.0), &a), (BevPoint::new(1.0, 0.0), &b)]),
            Err(AnalyticsError::MixedCalibration)
        ));
    }

    #[test]
    fn two_walkers_one_event() {
        let a: Vec<_> = (0..10).map(|f| (f, 0.0, f as f64)).collect();
        let b: Vec<_> = (0..10).map(|f| (f, 1.5, f as f64)).collect();
        let r = detect_violations(
            &[stream(1, ObjectClass::Person, &a), stream(2, ObjectClass::Person, &b)],
            &CalibrationParams::default(),
            &ViolationConfig::default(),
        );
        assert_eq!(r.count, 1);
        assert_eq!(r.events[0].pair, (1, 2));
        assert_eq!(r.events[0].distance, 1.5);
        assert_eq!(r.events[0].duration, 10);
        assert_eq!((r.events[0].frame, r.events[0].end_frame), (0, 9));
    }

    #[test]
    fn person_and_car_ignored() {
        let a: Vec<_> = (0..5).map(|f| (f, 0.0, 0.0)).collect();
        let b: Vec<_> = (0..5).map(|f| (f, 0.5, 0.0)).collect();
        let r = detect_violations(
            &[stream(1, ObjectClass::Person, &a), stream(2, ObjectClass::Car, &b)],
            &CalibrationParams::default(),
            &ViolationConfig::default(),
        );
        assert_eq!(r.count, 0);
    }

    #[test]
    fn min_duration_and_run_breaks() {
        // Close for frames 0-2, apart at 3, close again 4-5.
        let a: Vec<_> = (0..6).map(|f| (f, 0.0, 0.0)).collect();
        let b: Vec<_> = (0..6).map(|f| (f, if f == 3 { 9.0 } else { 1.0 }, 0.0)).collect();
        let streams = [stream(1, ObjectClass::Person, &a), stream(2, ObjectClass::Person, &b)];
        let cal = CalibrationParams::default();
        let r = detect_violations(&streams, &cal, &ViolationConfig::default());
        assert_eq!(r.count, 2);
        let r = detect_violations(&streams, &cal, &ViolationConfig { min_duration: 3, ..Default::default() });
        assert_eq!(r.count, 1);
        assert_eq!(r.events[0].frame, 0);
        let r = detect_violations(
            &streams,
            &cal,
            &ViolationConfig { interval_frames: Some(4), ..Default::default() },
        );
        assert_eq!(
            r.per_interval,
            vec![IntervalCount { start_frame: 0, count: 1 }, IntervalCount { start_frame: 4, count: 1 }]
        );
    }

    #[test]
    fn occupancy_static_and_empty() {
        let s: Vec<_> = (0..100).map(|f| (f, 3.3, 4.4)).collect();
        let g = occupancy(&[stream(1, ObjectClass::Car, &s)], &CalibrationParams::default(), 1.0).unwrap();
        assert_eq!(g.total(), 100);
        let (c, r) = g.cell_of(3.3, 4.4).unwrap();
        assert_eq!(g.count(ObjectClass::Car, c, r), 100);
        assert_eq!((g.cols, g.rows), (3, 3));

        let e = occupancy(&[], &CalibrationParams::default(), 1.0).unwrap();
        assert_eq!(e.total(), 0);
        assert!(e.layers.is_empty());
        assert!(occupancy(&[], &CalibrationParams::default(), 0.0).is_err());
    }

    #[test]
    fn scripted_path_crosses_five_cells() {
        // One state per cell centre along a row: x = 0.5 .. 4.5 at cell size 1.
        let s: Vec<_> = (0..5).map(|k| (k as u64, 0.5 + k as f64, 0.5)).collect();
        let g = occupancy(&[stream(1, ObjectClass::Person, &s)], &CalibrationParams::default(), 1.0).unwrap();
        let layer = &g.layers[&ObjectClass::Person];
        assert_eq!(layer.iter().filter(|&&c| c == 1).count(), 5);
        assert_eq!(g.total(), 5);
        for k in 0..5 {
            let (c, r) = g.cell_of(0.5 + k as f64, 0.5).unwrap();
            assert_eq!(g.count(ObjectClass::Person, c, r), 1);
        }
    }

    #[test]
    fn registry_and_aggregation() {
        let csv = "camera_id,lat,lon,heading\ncam-a,51.5,-0.1,90\ncam-b,51.6,-0.2,0\n";
        let reg = CameraRegistry::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(reg.len(), 2);
        let results = vec![
            CameraResult { camera_id: "cam-a".into(), violation_count: 3 },
            CameraResult { camera_id: "cam-b".into(), violation_count: 0 },
        ];
        let doc = aggregate_scenes(&results, &reg).unwrap();
        let f = doc["features"].as_array().unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0]["properties"]["count"], 3);
        assert_eq!(f[1]["properties"]["count"], 0);
        assert_eq!(f[0]["geometry"]["coordinates"], json!([-0.1, 51.5]));

        let bad = vec![CameraResult { camera_id: "cam-z".into(), violation_count: 1 }];
        assert!(matches!(aggregate_scenes(&bad, &reg), Err(AnalyticsError::UnknownCamera(id)) if id == "cam-z"));
        assert!(CameraRegistry::from_csv("id,lat\n".as_bytes()).is_err());
    }
}
