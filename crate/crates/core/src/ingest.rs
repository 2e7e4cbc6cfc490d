//! Detection streams to temporal tracks: parsing, greedy IoU association,
//! id repair, trajectory smoothing and stationary status.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ImagePoint;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: invalid field `{field}`: {message}")]
    SchemaError {
        line: usize,
        field: String,
        message: String,
    },
    #[error("detection stream is empty")]
    EmptyInput,
    #[error("read error at line {line}: {source}")]
    Io {
        line: usize,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// Road-user classes produced by the upstream detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Person,
    Car,
    Bus,
    Truck,
    Bicycle,
    Motorbike,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 6] = [
        ObjectClass::Person,
        ObjectClass::Car,
        ObjectClass::Bus,
        ObjectClass::Truck,
        ObjectClass::Bicycle,
        ObjectClass::Motorbike,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectClass::Person => "person",
            ObjectClass::Car => "car",
            ObjectClass::Bus => "bus",
            ObjectClass::Truck => "truck",
            ObjectClass::Bicycle => "bicycle",
            ObjectClass::Motorbike => "motorbike",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ObjectClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown class `{s}`"))
    }
}

/// Axis-aligned pixel box `(x1, y1, x2, y2)` with `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Option<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        (finite && x1 < x2 && y1 < y2).then_some(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Bottom-centre of the box, the ground-contact proxy.
    pub fn anchor(&self) -> ImagePoint {
        ImagePoint::new((self.x1 + self.x2) / 2.0, self.y2)
    }

    pub fn contains(&self, p: ImagePoint) -> bool {
        p.x >= self.x1 && p.x <= self.x2 && p.y >= self.y1 && p.y <= self.y2
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let iy = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: u64,
    pub t: Option<f64>,
    pub class: ObjectClass,
    pub bbox: BBox,
    pub confidence: f64,
    pub track_id: Option<u64>,
}

/// Wire form of one detection line.
#[derive(Debug, Serialize, Deserialize)]
struct DetectionRecord {
    frame: u64,
    class: String,
    bbox: [f64; 4],
    confidence: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    track_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    t: Option<f64>,
}

impl Detection {
    /// Serializes this detection as one line of the detections file.
    pub fn to_json_line(&self) -> String {
        let rec = DetectionRecord {
            frame: self.frame,
            class: self.class.as_str().to_string(),
            bbox: self.bbox.to_array(),
            confidence: self.confidence,
            track_id: self.track_id,
            t: self.t,
        };
        serde_json::to_string(&rec).expect("detection serializes")
    }
}

fn schema(line: usize, field: &str, message: impl Into<String>) -> IngestError {
    IngestError::SchemaError {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

/// Extracts the offending field name from a serde message such as
/// "missing field `bbox`" or "invalid type ... at line 1 column 20".
fn serde_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    if let Some(start) = msg.find('`') {
        if let Some(len) = msg[start + 1..].find('`') {
            return msg[start + 1..start + 1 + len].to_string();
        }
    }
    "record".to_string()
}

fn parse_line(text: &str, line: usize) -> Result<Detection> {
    let rec: DetectionRecord =
        serde_json::from_str(text).map_err(|e| schema(line, &serde_field(&e), e.to_string()))?;
    let class: ObjectClass = rec.class.parse().map_err(|m: String| schema(line, "class", m))?;
    let [x1, y1, x2, y2] = rec.bbox;
    let bbox = BBox::new(x1, y1, x2, y2)
        .ok_or_else(|| schema(line, "bbox", format!("expected x1 < x2 and y1 < y2, got {:?}", rec.bbox)))?;
    if !(0.0..=1.0).contains(&rec.confidence) {
        return Err(schema(
            line,
            "confidence",
            format!("{} outside [0, 1]", rec.confidence),
        ));
    }
    if let Some(t) = rec.t {
        if !t.is_finite() {
            return Err(schema(line, "t", "must be finite"));
        }
    }
    Ok(Detection {
        frame: rec.frame,
        t: rec.t,
        class,
        bbox,
        confidence: rec.confidence,
        track_id: rec.track_id,
    })
}

/// Parses newline-delimited detection records. Blank lines are skipped; the
/// result is stably sorted by frame.
pub fn parse_detections<R: BufRead>(reader: R) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| IngestError::Io {
            line: lineno,
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        out.push(parse_line(trimmed, lineno)?);
    }
    if out.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    out.sort_by_key(|d| d.frame);
    Ok(out)
}

pub fn parse_detections_str(text: &str) -> Result<Vec<Detection>> {
    parse_detections(text.as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSample {
    pub frame: u64,
    pub t: Option<f64>,
    pub bbox: BBox,
    pub confidence: f64,
}

impl TrackSample {
    fn from_detection(d: &Detection) -> Self {
        Self {
            frame: d.frame,
            t: d.t,
            bbox: d.bbox,
            confidence: d.confidence,
        }
    }

    pub fn anchor(&self) -> ImagePoint {
        self.bbox.anchor()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub class: ObjectClass,
    /// Samples in strictly increasing frame order.
    pub samples: Vec<TrackSample>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first_frame(&self) -> u64 {
        self.samples[0].frame
    }

    pub fn last_frame(&self) -> u64 {
        self.samples[self.samples.len() - 1].frame
    }

    pub fn anchors(&self) -> Vec<ImagePoint> {
        self.samples.iter().map(TrackSample::anchor).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub iou_min: f64,
    /// Frames a track may go unmatched before it is closed.
    pub max_age: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_min: 0.3,
            max_age: 10,
        }
    }
}

/// Groups detections into tracks.
///
/// When every detection carries a `track_id` the ids are used as-is;
/// otherwise tracks are built by greedy per-frame IoU matching within each
/// class. Returned tracks are ordered by id.
pub fn assemble_tracks(dets: &[Detection], cfg: &TrackerConfig) -> Vec<Track> {
    if dets.is_empty() {
        return Vec::new();
    }
    if dets.iter().all(|d| d.track_id.is_some()) {
        pass_through(dets)
    } else {
        greedy_iou(dets, cfg)
    }
}

fn pass_through(dets: &[Detection]) -> Vec<Track> {
    let mut by_id: BTreeMap<u64, Track> = BTreeMap::new();
    for d in dets {
        let id = d.track_id.expect("pass-through requires ids");
        let track = by_id.entry(id).or_insert_with(|| Track {
            id,
            class: d.class,
            samples: Vec::new(),
        });
        track.samples.push(TrackSample::from_detection(d));
    }
    for track in by_id.values_mut() {
        track.samples.sort_by_key(|s| s.frame);
        // An id seen twice in one frame keeps the more confident box.
        let before = track.samples.len();
        track.samples.dedup_by(|later, kept| {
            if later.frame == kept.frame {
                if later.confidence > kept.confidence {
                    std::mem::swap(later, kept);
                }
                true
            } else {
                false
            }
        });
        if track.samples.len() != before {
            log::warn!(
                "track {}: dropped {} duplicate-frame detections",
                track.id,
                before - track.samples.len()
            );
        }
    }
    by_id.into_values().collect()
}

fn greedy_iou(dets: &[Detection], cfg: &TrackerConfig) -> Vec<Track> {
    // Canonical order makes the result independent of input order.
    let mut dets: Vec<&Detection> = dets.iter().collect();
    dets.sort_by(|a, b| {
        a.frame
            .cmp(&b.frame)
            .then(a.class.cmp(&b.class))
            .then_with(|| {
                a.bbox
                    .to_array()
                    .iter()
                    .zip(b.bbox.to_array())
                    .map(|(x, y)| x.total_cmp(&y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then(b.confidence.total_cmp(&a.confidence))
    });
    let mut tracks: Vec<Track> = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    let mut next_id = 1u64;

    let mut start = 0;
    while start < dets.len() {
        let frame = dets[start].frame;
        let end = start + dets[start..].iter().take_while(|d| d.frame == frame).count();
        let batch = &dets[start..end];
        start = end;

        active.retain(|&ti| frame - tracks[ti].last_frame() - 1 <= cfg.max_age);

        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ai, &ti) in active.iter().enumerate() {
            let track = &tracks[ti];
            let last = &track.samples[track.samples.len() - 1].bbox;
            for (di, d) in batch.iter().enumerate() {
                if d.class != track.class {
                    continue;
                }
                let iou = last.iou(&d.bbox);
                if iou >= cfg.iou_min && iou > 0.0 {
                    pairs.push((iou, ai, di));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut track_used = vec![false; active.len()];
        let mut det_used = vec![false; batch.len()];
        for (_, ai, di) in pairs {
            if track_used[ai] || det_used[di] {
                continue;
            }
            track_used[ai] = true;
            det_used[di] = true;
            tracks[active[ai]]
                .samples
                .push(TrackSample::from_detection(batch[di]));
        }
        for (di, d) in batch.iter().enumerate() {
            if det_used[di] {
                continue;
            }
            tracks.push(Track {
                id: next_id,
                class: d.class,
                samples: vec![TrackSample::from_detection(d)],
            });
            next_id += 1;
            active.push(tracks.len() - 1);
        }
    }
    tracks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepairConfig {
    /// Largest frame gap between the end of one track and the start of the next.
    pub gap_max: u64,
    /// Fractional allowance on the distance the first track could have covered.
    pub slack: f64,
    pub max_heading_deg: f64,
    /// Tracks with fewer samples are removed as noise.
    pub min_len: usize,
    /// Samples used to estimate terminal/initial velocity.
    pub velocity_samples: usize,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self {
            gap_max: 15,
            slack: 0.5,
            max_heading_deg: 45.0,
            min_len: 3,
            velocity_samples: 5,
        }
    }
}

/// Velocity in px/frame over the last (or first) `k` samples.
fn velocity(samples: &[TrackSample], k: usize, at_end: bool) -> Option<(f64, f64)> {
    if samples.len() < 2 {
        return None;
    }
    let k = k.clamp(2, samples.len());
    let window = if at_end {
        &samples[samples.len() - k..]
    } else {
        &samples[..k]
    };
    let a = window[0].anchor();
    let b = window[window.len() - 1].anchor();
    let frames = (window[window.len() - 1].frame - window[0].frame) as f64;
    Some(((b.x - a.x) / frames, (b.y - a.y) / frames))
}

fn heading_diff_deg(a: (f64, f64), b: (f64, f64)) -> f64 {
    let d = (a.1.atan2(a.0) - b.1.atan2(b.0)).abs();
    let d = d.rem_euclid(2.0 * std::f64::consts::PI);
    d.min(2.0 * std::f64::consts::PI - d).to_degrees()
}

fn can_link(a: &Track, b: &Track, cfg: &RepairConfig) -> Option<f64> {
    if a.class != b.class || b.first_frame() <= a.last_frame() {
        return None;
    }
    let gap = b.first_frame() - a.last_frame();
    if gap > cfg.gap_max {
        return None;
    }
    let va = velocity(&a.samples, cfg.velocity_samples, true)?;
    let speed = va.0.hypot(va.1);
    let end = a.samples[a.samples.len() - 1].anchor();
    let start = b.samples[0].anchor();
    let spatial = end.distance(&start);
    if spatial > speed * gap as f64 * (1.0 + cfg.slack) {
        return None;
    }
    // Heading is only compared when both ends are actually moving.
    if let Some(vb) = velocity(&b.samples, cfg.velocity_samples, false) {
        if speed > 1e-9 && vb.0.hypot(vb.1) > 1e-9 && heading_diff_deg(va, vb) > cfg.max_heading_deg {
            return None;
        }
    }
    Some(gap as f64 + spatial / (speed + 1e-12))
}

/// Merges track fragments split by occlusion or id switches, then drops
/// tracks shorter than `min_len`.
///
/// Candidate links (A ends, B starts) are accepted greedily by increasing
/// cost; each track end and each track start is used at most once, and the
/// merged track keeps A's id.
pub fn repair_ids(tracks: Vec<Track>, cfg: &RepairConfig) -> Vec<Track> {
    let mut tracks = tracks;
    tracks.sort_by_key(|t| t.id);
    let mut links: Vec<(f64, usize, usize)> = Vec::new();
    for (i, a) in tracks.iter().enumerate() {
        for (j, b) in tracks.iter().enumerate() {
            if i != j {
                if let Some(cost) = can_link(a, b, cfg) {
                    links.push((cost, i, j));
                }
            }
        }
    }
    links.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let n = tracks.len();
    let mut next: Vec<Option<usize>> = vec![None; n];
    let mut has_prev = vec![false; n];
    for (_, i, j) in links {
        if next[i].is_some() || has_prev[j] {
            continue;
        }
        next[i] = Some(j);
        has_prev[j] = true;
    }

    let mut slots: Vec<Option<Track>> = tracks.into_iter().map(Some).collect();
    let mut out = Vec::new();
    for head in 0..n {
        if has_prev[head] {
            continue;
        }
        let mut merged = slots[head].take().expect("each track visited once");
        let mut cur = head;
        while let Some(j) = next[cur] {
            let tail = slots[j].take().expect("each track visited once");
            merged.samples.extend(tail.samples);
            cur = j;
        }
        out.push(merged);
    }
    out.retain(|t| t.samples.len() >= cfg.min_len);
    out.sort_by_key(|t| t.id);
    out
}

/// Ordered, de-duplicated image-space path of one track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLine {
    pub points: Vec<ImagePoint>,
    pub source_track: u64,
}

/// Centered moving average of the anchors; one output point per sample.
///
/// Windows shrink symmetrically at the ends, so a window of `window` points
/// never straddles an edge unevenly. Even windows are widened by one.
pub fn smooth_anchors(anchors: &[ImagePoint], window: usize) -> Vec<ImagePoint> {
    let half = window.max(1) / 2;
    let n = anchors.len();
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let slice = &anchors[i - h..=i + h];
            let k = slice.len() as f64;
            ImagePoint::new(
                slice.iter().map(|p| p.x).sum::<f64>() / k,
                slice.iter().map(|p| p.y).sum::<f64>() / k,
            )
        })
        .collect()
}

pub fn smooth_trajectory(track: &Track, window: usize) -> TrajectoryLine {
    let mut points = smooth_anchors(&track.anchors(), window);
    points.dedup_by(|b, a| a.distance(b) <= 1e-9);
    TrajectoryLine {
        points,
        source_track: track.id,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StationaryConfig {
    /// Trailing window length in frames.
    pub window: u64,
    /// Threshold as a fraction of the current bbox diagonal.
    pub eps_ratio: f64,
}

impl Default for StationaryConfig {
    fn default() -> Self {
        Self {
            window: 25,
            eps_ratio: 0.05,
        }
    }
}

fn diameter(points: &[ImagePoint]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max(a.distance(b));
        }
    }
    best
}

/// Flags each sample whose anchors barely moved over the trailing window.
///
/// Samples in the first `window` frames of a track share the warm-up window
/// covering those frames.
pub fn stationary_flags(track: &Track, cfg: &StationaryConfig) -> Vec<bool> {
    let anchors = track.anchors();
    let frames: Vec<u64> = track.samples.iter().map(|s| s.frame).collect();
    let first = frames.first().copied().unwrap_or(0);
    let w = cfg.window.max(1);
    let warm_end = frames.partition_point(|&f| f < first + w);
    let warm_diameter = diameter(&anchors[..warm_end]);

    (0..anchors.len())
        .map(|i| {
            let disp = if i < warm_end {
                warm_diameter
            } else {
                let lo = frames.partition_point(|&f| f + w <= frames[i]);
                diameter(&anchors[lo..=i])
            };
            disp < cfg.eps_ratio * track.samples[i].bbox.diagonal()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn det(frame: u64, x: f64, y: f64, id: Option<u64>) -> Detection {
        Detection {
            frame,
            t: None,
            class: ObjectClass::Car,
            bbox: BBox::new(x, y, x + 40.0, y + 30.0).unwrap(),
            confidence: 0.9,
            track_id: id,
        }
    }

    fn track_from(points: &[(u64, f64, f64)], id: u64, class: ObjectClass) -> Track {
        Track {
            id,
            class,
            samples: points
                .iter()
                .map(|&(f, x, y)| TrackSample {
                    frame: f,
                    t: None,
                    bbox: BBox::new(x - 10.0, y - 20.0, x + 10.0, y).unwrap(),
                    confidence: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn parse_one_line() {
        let d = parse_detections_str(
            r#"{"frame":3,"class":"person","bbox":[1,2,3,4],"confidence":0.5,"track_id":7}"#,
        )
        .unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].class, ObjectClass::Person);
        assert_eq!(d[0].track_id, Some(7));
        assert_eq!(d[0].bbox.anchor(), ImagePoint::new(2.0, 4.0));
    }

    #[test]
    fn parse_rejects_bad_records() {
        let err = parse_detections_str(
            "\n{\"frame\":0,\"class\":\"car\",\"bbox\":[5,0,3,4],\"confidence\":0.5}",
        )
        .unwrap_err();
        match err {
            IngestError::SchemaError { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "bbox");
            }
            e => panic!("{e}"),
        }
        let err = parse_detections_str(r#"{"frame":0,"class":"tram","bbox":[0,0,3,4],"confidence":0.5}"#)
            .unwrap_err();
        assert!(matches!(err, IngestError::SchemaError { ref field, .. } if field == "class"));
        let err = parse_detections_str(r#"{"frame":0,"class":"car","confidence":0.5}"#).unwrap_err();
        assert!(matches!(err, IngestError::SchemaError { ref field, .. } if field == "bbox"));
        let err = parse_detections_str(r#"{"frame":0,"class":"car","bbox":[0,0,3,4],"confidence":1.5}"#)
            .unwrap_err();
        assert!(matches!(err, IngestError::SchemaError { ref field, .. } if field == "confidence"));
        assert!(matches!(parse_detections_str("\n \n"), Err(IngestError::EmptyInput)));
    }

    #[test]
    fn parse_sorts_stably_by_frame() {
        let text = [det(2, 0.0, 0.0, Some(1)), det(1, 5.0, 0.0, Some(2)), det(1, 9.0, 0.0, Some(3))]
            .iter()
            .map(Detection::to_json_line)
            .collect::<Vec<_>>()
            .join("\n");
        let d = parse_detections_str(&text).unwrap();
        let ids: Vec<_> = d.iter().map(|d| d.track_id.unwrap()).collect();
        assert_eq!(ids, vec![2, 3, 1]);
    }

    #[test]
    fn pass_through_groups_by_id() {
        let dets = vec![det(0, 0.0, 0.0, Some(1)), det(0, 100.0, 0.0, Some(2)), det(1, 2.0, 0.0, Some(1))];
        let tracks = assemble_tracks(&dets, &TrackerConfig::default());
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].id, 1);
        assert_eq!(tracks[0].len(), 2);
        assert_eq!(tracks[1].len(), 1);
    }

    #[test]
    fn greedy_tracks_two_separating_boxes() {
        let mut dets = Vec::new();
        for f in 0..50u64 {
            dets.push(det(f, 200.0 - 2.0 * f as f64, 100.0, None));
            dets.push(det(f, 260.0 + 2.0 * f as f64, 100.0, None));
        }
        let tracks = assemble_tracks(&dets, &TrackerConfig::default());
        assert_eq!(tracks.len(), 2);
        for t in &tracks {
            assert_eq!(t.len(), 50);
            let xs: Vec<f64> = t.samples.iter().map(|s| s.bbox.x1).collect();
            let moving_left = xs[1] < xs[0];
            assert!(xs.windows(2).all(|w| (w[1] < w[0]) == moving_left));
        }
    }

    #[test]
    fn track_expires_after_max_age() {
        let cfg = TrackerConfig::default();
        let gap_ok: Vec<Detection> = vec![det(0, 0.0, 0.0, None), det(cfg.max_age + 1, 0.0, 0.0, None)];
        assert_eq!(assemble_tracks(&gap_ok, &cfg).len(), 1);
        let gap_long: Vec<Detection> = vec![det(0, 0.0, 0.0, None), det(cfg.max_age + 2, 0.0, 0.0, None)];
        assert_eq!(assemble_tracks(&gap_long, &cfg).len(), 2);
        assert!(assemble_tracks(&[], &cfg).is_empty());
    }

    #[test]
    fn repair_merges_occluded_fragments() {
        let a: Vec<_> = (0..20).map(|f| (f, 100.0 + 3.0 * f as f64, 300.0)).collect();
        let b: Vec<_> = (25..50).map(|f| (f, 100.0 + 3.0 * f as f64, 300.0)).collect();
        let tracks = vec![
            track_from(&a, 4, ObjectClass::Car),
            track_from(&b, 9, ObjectClass::Car),
        ];
        let out = repair_ids(tracks, &RepairConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, 4);
        assert_eq!(out[0].len(), 45);
        assert!(out[0].samples.windows(2).all(|w| w[0].frame < w[1].frame));
    }

    #[test]
    fn repair_respects_class_heading_and_length() {
        let a: Vec<_> = (0..20).map(|f| (f, 100.0 + 3.0 * f as f64, 300.0)).collect();
        let b: Vec<_> = (25..50).map(|f| (f, 100.0 + 3.0 * f as f64, 300.0)).collect();
        let out = repair_ids(
            vec![track_from(&a, 1, ObjectClass::Car), track_from(&b, 2, ObjectClass::Person)],
            &RepairConfig::default(),
        );
        assert_eq!(out.len(), 2);

        // B continues from where A would be but heads back the other way.
        let back: Vec<_> = (25..50).map(|f| (f, 175.0 - 3.0 * (f - 25) as f64, 300.0)).collect();
        let out = repair_ids(
            vec![track_from(&a, 1, ObjectClass::Car), track_from(&back, 2, ObjectClass::Car)],
            &RepairConfig::default(),
        );
        assert_eq!(out.len(), 2);

        let jitter = vec![(0, 5.0, 5.0), (1, 6.0, 5.0)];
        let out = repair_ids(vec![track_from(&jitter, 1, ObjectClass::Car)], &RepairConfig::default());
        assert!(out.is_empty());
    }

    #[test]
    fn repair_never_merges_overlapping_tracks() {
        let a: Vec<_> = (0..20).map(|f| (f, 100.0 + 3.0 * f as f64, 300.0)).collect();
        let b: Vec<_> = (19..40).map(|f| (f, 100.0 + 3.0 * f as f64, 300.0)).collect();
        let out = repair_ids(
            vec![track_from(&a, 1, ObjectClass::Car), track_from(&b, 2, ObjectClass::Car)],
            &RepairConfig::default(),
        );
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn smoothing_constant_and_linear() {
        let still = track_from(&[(0, 5.0, 9.0), (1, 5.0, 9.0), (2, 5.0, 9.0)], 1, ObjectClass::Person);
        let line = smooth_trajectory(&still, 5);
        assert_eq!(line.points, vec![ImagePoint::new(5.0, 9.0)]);

        let pts: Vec<_> = (0..30)
            .map(|f| {
                let x = (f * f) as f64 * 0.37 + 1.0;
                (f, x, 2.0 * x)
            })
            .collect();
        let tr = track_from(&pts, 1, ObjectClass::Person);
        let sm = smooth_anchors(&tr.anchors(), 5);
        assert_eq!(sm.len(), 30);
        for p in sm {
            assert_abs_diff_eq!(p.y, 2.0 * p.x, epsilon = 1e-9);
        }
    }

    #[test]
    fn stationary_fixed_and_moving() {
        let fixed: Vec<_> = (0..100).map(|f| (f, 50.0, 80.0)).collect();
        let flags = stationary_flags(&track_from(&fixed, 1, ObjectClass::Car), &StationaryConfig::default());
        assert!(flags.iter().all(|&f| f));

        let moving: Vec<_> = (0..100).map(|f| (f, 50.0 + 5.0 * f as f64, 80.0)).collect();
        let flags = stationary_flags(&track_from(&moving, 1, ObjectClass::Car), &StationaryConfig::default());
        assert!(flags.iter().all(|&f| !f));
    }

    #[test]
    fn iou_basics() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = BBox::new(1.0, 0.0, 3.0, 2.0).unwrap();
        assert_abs_diff_eq!(a.iou(&b), 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(a.iou(&BBox::new(5.0, 5.0, 6.0, 6.0).unwrap()), 0.0);
        assert!(BBox::new(1.0, 0.0, 1.0, 2.0).is_none());
    }
}
