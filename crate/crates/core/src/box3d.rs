//! Road-user orientation from trajectory lines and the image-space 3D box
//! confined to the 2D detection box.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::ImagePoint;
use crate::ingest::{BBox, TrajectoryLine};
use crate::vp::VanishingPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    TurningLeft,
    TurningRight,
    MovingStraight,
    SideView,
}

impl Orientation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Orientation::TurningLeft => "turning_left",
            Orientation::TurningRight => "turning_right",
            Orientation::MovingStraight => "moving_straight",
            Orientation::SideView => "side_view",
        }
    }

    pub fn mirrored(self) -> Orientation {
        match self {
            Orientation::TurningLeft => Orientation::TurningRight,
            Orientation::TurningRight => Orientation::TurningLeft,
            o => o,
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Orientation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Orientation::TurningLeft,
            Orientation::TurningRight,
            Orientation::MovingStraight,
            Orientation::SideView,
        ]
        .into_iter()
        .find(|o| o.as_str() == s)
        .ok_or_else(|| format!("unknown orientation `{s}`"))
    }
}

/// How the VP's horizontal offset from the image centre shifts the
/// reference point on the top edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceShift {
    /// `M − (vp_x − w/2)`: identical to the literal rule for a VP right of
    /// centre and its mirror image for a VP left of centre.
    #[default]
    Signed,
    /// `M − |vp_x − w/2|` on both sides.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrientationConfig {
    /// Tie tolerance in pixels for the "VP centred" and "on the reference" tests.
    pub tie_tolerance: f64,
    pub reference_shift: ReferenceShift,
}

impl Default for OrientationConfig {
    fn default() -> Self {
        Self {
            tie_tolerance: 1.0,
            reference_shift: ReferenceShift::Signed,
        }
    }
}

/// Latest point where the trajectory meets the top edge of `bbox`, if any.
pub fn top_edge_intersection(traj: &TrajectoryLine, bbox: &BBox) -> Option<ImagePoint> {
    let y = bbox.y1;
    let on_edge = |x: f64| x >= bbox.x1 && x <= bbox.x2;
    let pts = &traj.points;
    if pts.len() == 1 {
        let q = pts[0];
        return (q.y == y && on_edge(q.x)).then_some(q);
    }
    let mut hit = None;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (da, db) = (a.y - y, b.y - y);
        if da == 0.0 && db == 0.0 {
            // Segment lies on the edge line: keep the latest covered point.
            let lo = a.x.min(b.x).max(bbox.x1);
            let hi = a.x.max(b.x).min(bbox.x2);
            if lo <= hi {
                hit = Some(ImagePoint::new(b.x.clamp(lo, hi), y));
            }
            continue;
        }
        if da * db > 0.0 {
            continue;
        }
        let t = da / (da - db);
        let x = a.x + t * (b.x - a.x);
        if on_edge(x) {
            hit = Some(ImagePoint::new(x, y));
        }
    }
    hit
}

/// Decides the orientation label from where the trajectory crosses the top
/// edge of the box relative to its midpoint, shifted by the VP offset.
pub fn classify_orientation(
    traj: &TrajectoryLine,
    vp: &VanishingPoint,
    image_w: f64,
    bbox: &BBox,
    cfg: &OrientationConfig,
) -> Orientation {
    let Some(q) = top_edge_intersection(traj, bbox) else {
        return Orientation::SideView;
    };
    let tau = cfg.tie_tolerance;
    let mid = (bbox.x1 + bbox.x2) / 2.0;
    let offset = vp.x - image_w / 2.0;
    let reference = if offset.abs() <= tau {
        mid
    } else {
        match cfg.reference_shift {
            ReferenceShift::Signed => mid - offset,
            ReferenceShift::Absolute => mid - offset.abs(),
        }
    };
    if q.x < reference - tau {
        Orientation::TurningLeft
    } else if q.x > reference + tau {
        Orientation::TurningRight
    } else {
        Orientation::MovingStraight
    }
}

/// Per-sample labels for one track: moving samples are classified, stationary
/// samples repeat the last moving label (side view before any).
pub fn track_orientations(
    traj: &TrajectoryLine,
    bboxes: &[BBox],
    stationary: &[bool],
    vp: &VanishingPoint,
    image_w: f64,
    cfg: &OrientationConfig,
) -> Vec<Orientation> {
    let mut last: Option<Orientation> = None;
    bboxes
        .iter()
        .zip(stationary)
        .map(|(bbox, &still)| {
            if still {
                last.unwrap_or(Orientation::SideView)
            } else {
                let o = classify_orientation(traj, vp, image_w, bbox, cfg);
                last = Some(o);
                o
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Box3dConfig {
    /// Box depth as a fraction of the 2D box height.
    pub depth_ratio: f64,
    /// Vertical foreshortening of the far face.
    pub foreshortening: f64,
    /// Skew applied to the receding direction for turning labels, degrees.
    pub turn_skew_deg: f64,
}

impl Default for Box3dConfig {
    fn default() -> Self {
        Self {
            depth_ratio: 0.4,
            foreshortening: 0.3,
            turn_skew_deg: 15.0,
        }
    }
}

/// Image-space cuboid. Corners are the bottom face then the top face, each
/// ordered rear-left, rear-right, front-right, front-left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub corners: [ImagePoint; 8],
    pub orientation: Orientation,
    pub source_bbox: BBox,
}

impl Box3D {
    pub fn bottom(&self) -> &[ImagePoint] {
        &self.corners[..4]
    }

    pub fn top(&self) -> &[ImagePoint] {
        &self.corners[4..]
    }

    pub fn corner_array(&self) -> [[f64; 2]; 8] {
        self.corners.map(|p| [p.x, p.y])
    }
}

fn clamp_into(p: ImagePoint, b: &BBox) -> ImagePoint {
    ImagePoint::new(p.x.clamp(b.x1, b.x2), p.y.clamp(b.y1, b.y2))
}

pub fn build_box3d(bbox: &BBox, orientation: Orientation, vp: &VanishingPoint, cfg: &Box3dConfig) -> Box3D {
    let (wb, hb) = (bbox.width(), bbox.height());
    let rho = cfg.depth_ratio;
    let sigma = cfg.foreshortening;
    let lift = (1.0 - sigma * rho) * hb;

    // Bottom face: rear-left, rear-right, front-right, front-left.
    let bottom: [ImagePoint; 4] = match orientation {
        Orientation::SideView => {
            let dy = sigma * rho * hb;
            let inset = rho * wb * sigma / 2.0;
            [
                ImagePoint::new(bbox.x1, bbox.y2),
                ImagePoint::new(bbox.x2, bbox.y2),
                ImagePoint::new(bbox.x2 - inset, bbox.y2 - dy),
                ImagePoint::new(bbox.x1 + inset, bbox.y2 - dy),
            ]
        }
        _ => {
            let base = bbox.anchor();
            let (dx, dy) = (vp.x - base.x, vp.y - base.y);
            let n = dx.hypot(dy);
            let (mut ux, mut uy) = if n > 1e-12 { (dx / n, dy / n) } else { (0.0, -1.0) };
            let skew = match orientation {
                Orientation::TurningLeft => -cfg.turn_skew_deg,
                Orientation::TurningRight => cfg.turn_skew_deg,
                _ => 0.0,
            };
            if skew != 0.0 {
                // y points down, so a negative angle turns the vector towards -x
                // when it points up the image.
                let (s, c) = skew.to_radians().sin_cos();
                (ux, uy) = (ux * c - uy * s, ux * s + uy * c);
            }
            let step = rho * hb;
            let front_left = ImagePoint::new(bbox.x1, bbox.y2);
            let front_right = ImagePoint::new(bbox.x2, bbox.y2);
            let recede = |p: ImagePoint| clamp_into(ImagePoint::new(p.x + step * ux, p.y + step * uy), bbox);
            [recede(front_left), recede(front_right), front_right, front_left]
        }
    };
    let top = bottom.map(|p| clamp_into(ImagePoint::new(p.x, p.y - lift), bbox));
    let mut corners = [ImagePoint::default(); 8];
    corners[..4].copy_from_slice(&bottom);
    corners[4..].copy_from_slice(&top);
    Box3D {
        corners: corners.map(|p| clamp_into(p, bbox)),
        orientation,
        source_bbox: *bbox,
    }
}
