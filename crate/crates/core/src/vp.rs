//! Vanishing points: sidecar loading, classical RANSAC estimation from line
//! segments, and the logcosh evaluation metric.

use std::cmp::Ordering;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ImagePoint, Line};

#[derive(Debug, Error)]
pub enum VpError {
    #[error("need at least two non-parallel segments, got {0} usable")]
    InsufficientSegments(usize),
    #[error("no consensus: best inlier ratio {ratio:.3} below {min:.3}")]
    NoConsensus { ratio: f64, min: f64 },
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    ParseError {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}: file not found")]
    MissingFile(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid segment {index}: {reason}")]
    InvalidSegment { index: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, VpError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VanishingPoint {
    pub x: f64,
    pub y: f64,
    #[serde(default = "one")]
    pub confidence: f64,
}

fn one() -> f64 {
    1.0
}

impl VanishingPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            confidence: 1.0,
        }
    }

    pub fn point(&self) -> ImagePoint {
        ImagePoint::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSegment {
    pub p1: ImagePoint,
    pub p2: ImagePoint,
    pub weight: f64,
}

impl LineSegment {
    pub fn new(p1: ImagePoint, p2: ImagePoint) -> Self {
        Self { p1, p2, weight: 1.0 }
    }

    pub fn length(&self) -> f64 {
        self.p1.distance(&self.p2)
    }

    pub fn line(&self) -> Option<Line> {
        Line::through(self.p1, self.p2)
    }

    fn validate(&self, index: usize) -> Result<()> {
        let finite = self.p1.is_finite() && self.p2.is_finite() && self.weight.is_finite();
        if !finite {
            return Err(VpError::InvalidSegment {
                index,
                reason: "non-finite coordinate".into(),
            });
        }
        if self.length() <= 1e-6 {
            return Err(VpError::InvalidSegment {
                index,
                reason: "endpoints coincide".into(),
            });
        }
        if self.weight < 0.0 {
            return Err(VpError::InvalidSegment {
                index,
                reason: "negative weight".into(),
            });
        }
        Ok(())
    }

    fn sort_key(&self) -> [f64; 5] {
        [self.p1.x, self.p1.y, self.p2.x, self.p2.y, self.weight]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VpEstimate {
    pub vp: VanishingPoint,
    pub inlier_count: usize,
    /// Mean perpendicular distance from the VP to the inlier lines, pixels.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier distance threshold in pixels.
    pub threshold: f64,
    pub min_inlier_ratio: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            threshold: 2.0,
            min_inlier_ratio: 0.3,
            seed: 0,
        }
    }
}

const MIN_ANGLE: f64 = 1e-4;

fn angle_between(a: &Line, b: &Line) -> f64 {
    let d = (a.angle() - b.angle()).abs();
    d.min(std::f64::consts::PI - d)
}

/// Candidate ranking: more inliers first, then lower residual, then earlier round.
#[derive(Debug, Clone)]
struct Candidate {
    round: usize,
    inliers: Vec<usize>,
    residual: f64,
}

impl Candidate {
    fn better_than(&self, other: &Candidate) -> bool {
        match self.inliers.len().cmp(&other.inliers.len()) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => match self.residual.total_cmp(&other.residual) {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => self.round < other.round,
            },
        }
    }
}

fn inliers_of(lines: &[Line], p: ImagePoint, threshold: f64) -> (Vec<usize>, f64) {
    let mut idx = Vec::new();
    let mut sum = 0.0;
    for (i, l) in lines.iter().enumerate() {
        let d = l.distance(p);
        if d < threshold {
            idx.push(i);
            sum += d;
        }
    }
    let mean = if idx.is_empty() {
        f64::INFINITY
    } else {
        sum / idx.len() as f64
    };
    (idx, mean)
}

/// Weighted least-squares point minimizing Σ wᵢ·dist(p, lineᵢ)².
fn refine(lines: &[Line], weights: &[f64], inliers: &[usize]) -> Option<ImagePoint> {
    let mut a = Matrix2::<f64>::zeros();
    let mut b = Vector2::<f64>::zeros();
    for &i in inliers {
        let l = &lines[i];
        let w = weights[i];
        let n = Vector2::new(l.a, l.b);
        a += w * n * n.transpose();
        b -= w * l.c * n;
    }
    let sol = a.lu().solve(&b)?;
    let p = ImagePoint::new(sol.x, sol.y);
    p.is_finite().then_some(p)
}

/// Estimates the vanishing point as the consensus intersection of the
/// segments' supporting lines.
///
/// Segments are put in a canonical order first so the result does not depend
/// on input order for a fixed seed.
pub fn estimate_vp_ransac(segments: &[LineSegment], config: &RansacConfig) -> Result<VpEstimate> {
    for (i, s) in segments.iter().enumerate() {
        s.validate(i)?;
    }
    let mut segs: Vec<LineSegment> = segments.to_vec();
    segs.sort_by(|a, b| {
        a.sort_key()
            .iter()
            .zip(b.sort_key().iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });
    let lines: Vec<Line> = segs.iter().filter_map(LineSegment::line).collect();
    let weights: Vec<f64> = segs.iter().map(|s| s.weight).collect();
    let n = lines.len();

    let has_pair = (0..n).any(|i| (i + 1..n).any(|j| angle_between(&lines[i], &lines[j]) > MIN_ANGLE));
    if n < 2 || !has_pair {
        return Err(VpError::InsufficientSegments(n));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<Candidate> = None;
    for round in 0..config.iterations.max(1) {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        if angle_between(&lines[i], &lines[j]) <= MIN_ANGLE {
            continue;
        }
        let Some(p) = lines[i].intersect(&lines[j]) else {
            continue;
        };
        if !p.is_finite() {
            continue;
        }
        let (inliers, residual) = inliers_of(&lines, p, config.threshold);
        let cand = Candidate {
            round,
            inliers,
            residual,
        };
        if best.as_ref().map_or(true, |b| cand.better_than(b)) {
            best = Some(cand);
        }
    }

    let Some(best) = best else {
        return Err(VpError::NoConsensus {
            ratio: 0.0,
            min: config.min_inlier_ratio,
        });
    };
    let ratio = best.inliers.len() as f64 / n as f64;
    if ratio < config.min_inlier_ratio {
        return Err(VpError::NoConsensus {
            ratio,
            min: config.min_inlier_ratio,
        });
    }

    // Refine, then re-select inliers around the refined point once.
    let mut inliers = best.inliers;
    let mut point = refine(&lines, &weights, &inliers).ok_or(VpError::InsufficientSegments(inliers.len()))?;
    let (again, _) = inliers_of(&lines, point, config.threshold);
    if again.len() >= inliers.len() && again != inliers {
        if let Some(p) = refine(&lines, &weights, &again) {
            point = p;
            inliers = again;
        }
    }
    let residual = inliers.iter().map(|&i| lines[i].distance(point)).sum::<f64>() / inliers.len() as f64;
    Ok(VpEstimate {
        vp: VanishingPoint {
            x: point.x,
            y: point.y,
            confidence: inliers.len() as f64 / n as f64,
        },
        inlier_count: inliers.len(),
        residual,
    })
}

/// `log(cosh(d))` in the overflow-free form `|d| + log1p(e^{-2|d|}) − log 2`.
pub fn logcosh(d: f64) -> f64 {
    let a = d.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogCoshLoss {
    pub x: f64,
    pub y: f64,
    pub total: f64,
}

/// Per-coordinate logcosh loss on coordinates already normalized to `[0, 1]`.
pub fn logcosh_error(pred: &VanishingPoint, truth: &VanishingPoint) -> LogCoshLoss {
    let x = logcosh(pred.x - truth.x);
    let y = logcosh(pred.y - truth.y);
    LogCoshLoss { x, y, total: x + y }
}

/// Normalizes both points by the image size, then applies [`logcosh_error`].
pub fn logcosh_error_pixels(
    pred: &VanishingPoint,
    truth: &VanishingPoint,
    image_w: f64,
    image_h: f64,
) -> LogCoshLoss {
    let n = |p: &VanishingPoint| VanishingPoint {
        x: p.x / image_w,
        y: p.y / image_h,
        confidence: p.confidence,
    };
    logcosh_error(&n(pred), &n(truth))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            VpError::MissingFile(path.display().to_string())
        } else {
            VpError::Io {
                path: path.display().to_string(),
                source: e,
            }
        }
    })
}

fn parse_error(path: &str, e: serde_json::Error) -> VpError {
    VpError::ParseError {
        path: path.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses a sidecar document `{"x": .., "y": .., "confidence"?: ..}`.
pub fn parse_vp_sidecar(text: &str, origin: &str) -> Result<VanishingPoint> {
    let vp: VanishingPoint = serde_json::from_str(text).map_err(|e| parse_error(origin, e))?;
    if !(vp.x.is_finite() && vp.y.is_finite()) {
        return Err(VpError::ParseError {
            path: origin.into(),
            line: 1,
            column: 1,
            message: "coordinates must be finite".into(),
        });
    }
    if !(0.0..=1.0).contains(&vp.confidence) {
        return Err(VpError::ParseError {
            path: origin.into(),
            line: 1,
            column: 1,
            message: format!("confidence {} outside [0, 1]", vp.confidence),
        });
    }
    Ok(vp)
}

pub fn load_vp_sidecar(path: impl AsRef<Path>) -> Result<VanishingPoint> {
    let path = path.as_ref();
    parse_vp_sidecar(&read_file(path)?, &path.display().to_string())
}

pub fn vp_sidecar_json(vp: &VanishingPoint) -> String {
    serde_json::to_string(vp).expect("vanishing point serializes")
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct SegmentRecord {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    weight: f64,
}

fn is_one(w: &f64) -> bool {
    *w == 1.0
}

/// Parses a JSON array of `{"x1","y1","x2","y2","weight"?}` records.
pub fn parse_segments(text: &str, origin: &str) -> Result<Vec<LineSegment>> {
    let records: Vec<SegmentRecord> =
        serde_json::from_str(text).map_err(|e| parse_error(origin, e))?;
    let segs: Vec<LineSegment> = records
        .into_iter()
        .map(|r| LineSegment {
            p1: ImagePoint::new(r.x1, r.y1),
            p2: ImagePoint::new(r.x2, r.y2),
            weight: r.weight,
        })
        .collect();
    for (i, s) in segs.iter().enumerate() {
        s.validate(i)?;
    }
    Ok(segs)
}

pub fn load_segments(path: impl AsRef<Path>) -> Result<Vec<LineSegment>> {
    let path = path.as_ref();
    parse_segments(&read_file(path)?, &path.display().to_string())
}

pub fn segments_json(segments: &[LineSegment]) -> String {
    let recs: Vec<SegmentRecord> = segments
        .iter()
        .map(|s| SegmentRecord {
            x1: s.p1.x,
            y1: s.p1.y,
            x2: s.p2.x,
            y2: s.p2.y,
            weight: s.weight,
        })
        .collect();
    serde_json::to_string_pretty(&recs).expect("segments serialize")
}
