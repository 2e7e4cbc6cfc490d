//! Planar projective geometry: points, lines, homographies and the
//! vanishing-point perspective grid that defines the image-to-BEV map.
//!
//! Image coordinates are pixels with the origin at the top-left corner and
//! `y` growing downwards. BEV coordinates are abstract units with `u`
//! lateral and `v` growing away from the camera.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tolerance::Tolerances;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("point lies on the projective horizon (w = {0:e})")]
    PointAtInfinity(f64),
    #[error("vanishing point y = {vp_y} is not above the bottom image edge y = {image_h}")]
    VanishingPointBelowScene { vp_y: f64, image_h: f64 },
    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),
    #[error("homography is singular")]
    Singular,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
}

impl ImagePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &ImagePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BevPoint {
    pub u: f64,
    pub v: f64,
}

impl BevPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &BevPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// An image line `a·x + b·y + c = 0` with `a² + b² = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Line {
    /// Line through two distinct points; `None` when they coincide.
    pub fn through(p: ImagePoint, q: ImagePoint) -> Option<Line> {
        let a = p.y - q.y;
        let b = q.x - p.x;
        let n = a.hypot(b);
        if n <= f64::EPSILON * p.x.abs().max(p.y.abs()).max(1.0) {
            return None;
        }
        let (a, b) = (a / n, b / n);
        Some(Line {
            a,
            b,
            c: -(a * p.x + b * p.y),
        })
    }

    pub fn horizontal(y: f64) -> Line {
        Line {
            a: 0.0,
            b: 1.0,
            c: -y,
        }
    }

    /// Unsigned perpendicular distance.
    pub fn distance(&self, p: ImagePoint) -> f64 {
        (self.a * p.x + self.b * p.y + self.c).abs()
    }

    /// Intersection of two lines, `None` if they are parallel.
    pub fn intersect(&self, other: &Line) -> Option<ImagePoint> {
        let det = self.a * other.b - self.b * other.a;
        if det.abs() < 1e-15 {
            return None;
        }
        Some(ImagePoint::new(
            (self.b * other.c - self.c * other.b) / det,
            (self.c * other.a - self.a * other.c) / det,
        ))
    }

    /// Direction angle of the line in `[0, π)`.
    pub fn angle(&self) -> f64 {
        let theta = (-self.a).atan2(self.b);
        theta.rem_euclid(std::f64::consts::PI)
    }
}

/// 3×3 projective map from the image plane to the BEV plane.
///
/// Stored normalized: `h22 = 1` when `|h22| > 1e-12`, unit Frobenius norm
/// otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    #[serde(with = "matrix_rows")]
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    /// Normalizes `m` and rejects singular matrices.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::Singular);
        }
        let m = normalize_matrix(m).ok_or(GeometryError::Singular)?;
        if m.determinant().abs() <= Tolerances::DEFAULT.singular {
            return Err(GeometryError::Singular);
        }
        Ok(Self { m })
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.m;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = self.m.try_inverse().ok_or(GeometryError::Singular)?;
        Homography::from_matrix(inv)
    }

    /// Maps `(x, y)` through the homography, dehomogenizing the result.
    pub fn apply(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let m = &self.m;
        let w = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
        if w.abs() <= Tolerances::DEFAULT.at_infinity {
            return Err(GeometryError::PointAtInfinity(w));
        }
        Ok((
            (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) / w,
            (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) / w,
        ))
    }

    pub fn project(&self, p: ImagePoint) -> Result<BevPoint> {
        let (u, v) = self.apply(p.x, p.y)?;
        Ok(BevPoint::new(u, v))
    }

    /// Maps a BEV point back into the image; `self` must be the image-to-BEV map.
    pub fn unproject(&self, p: BevPoint) -> Result<ImagePoint> {
        let (x, y) = self.inverse()?.apply(p.u, p.v)?;
        Ok(ImagePoint::new(x, y))
    }
}

/// Free-function form of [`Homography::project`].
pub fn project(h: &Homography, p: ImagePoint) -> Result<BevPoint> {
    h.project(p)
}

fn normalize_matrix(m: Matrix3<f64>) -> Option<Matrix3<f64>> {
    let h22 = m[(2, 2)];
    if h22.abs() > 1e-12 {
        Some(m / h22)
    } else {
        let n = m.norm();
        (n > 0.0).then(|| m / n)
    }
}

mod matrix_rows {
    use nalgebra::Matrix3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix3<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: [[f64; 3]; 3] = std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]));
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix3<f64>, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Ok(Matrix3::from_fn(|r, c| rows[r][c]))
    }
}

/// Four image points ordered top-left, top-right, bottom-right, bottom-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrangle {
    corners: [ImagePoint; 4],
}

impl Quadrangle {
    /// Validates non-degeneracy and convexity.
    pub fn new(corners: [ImagePoint; 4]) -> Result<Self> {
        let tol = Tolerances::DEFAULT.collinear;
        if corners.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::DegenerateConfiguration(
                "non-finite corner".into(),
            ));
        }
        let pts: Vec<(f64, f64)> = corners.iter().map(|p| (p.x, p.y)).collect();
        check_no_three_collinear(&pts)?;
        let mut sign = 0.0;
        for i in 0..4 {
            let cross = normalized_cross(pts[i], pts[(i + 1) % 4], pts[(i + 2) % 4]);
            if cross.abs() <= tol {
                return Err(GeometryError::DegenerateConfiguration(
                    "quadrangle has collinear consecutive corners".into(),
                ));
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return Err(GeometryError::DegenerateConfiguration(
                    "quadrangle is not convex".into(),
                ));
            }
        }
        Ok(Self { corners })
    }

    pub fn corners(&self) -> &[ImagePoint; 4] {
        &self.corners
    }

    pub fn top_left(&self) -> ImagePoint {
        self.corners[0]
    }
    pub fn top_right(&self) -> ImagePoint {
        self.corners[1]
    }
    pub fn bottom_right(&self) -> ImagePoint {
        self.corners[2]
    }
    pub fn bottom_left(&self) -> ImagePoint {
        self.corners[3]
    }
}

/// Cross product of `(b − a) × (c − a)` divided by both edge lengths.
fn normalized_cross(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let (ux, uy) = (b.0 - a.0, b.1 - a.1);
    let (vx, vy) = (c.0 - a.0, c.1 - a.1);
    let nu = ux.hypot(uy);
    let nv = vx.hypot(vy);
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (ux * vy - uy * vx) / (nu * nv)
}

fn check_no_three_collinear(pts: &[(f64, f64)]) -> Result<()> {
    let tol = Tolerances::DEFAULT.collinear;
    for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        let cross = normalized_cross(pts[i], pts[j], pts[k]);
        if cross.abs() <= tol {
            return Err(GeometryError::DegenerateConfiguration(format!(
                "points {i}, {j}, {k} are collinear"
            )));
        }
    }
    Ok(())
}

/// Similarity that moves the centroid to the origin and scales the mean
/// distance from it to √2.
fn hartley_transform(pts: &[(f64, f64); 4]) -> Matrix3<f64> {
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let mean = pts
        .iter()
        .map(|p| (p.0 - cx).hypot(p.1 - cy))
        .sum::<f64>()
        / 4.0;
    let s = if mean > 0.0 {
        std::f64::consts::SQRT_2 / mean
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn transform_point(t: &Matrix3<f64>, p: (f64, f64)) -> (f64, f64) {
    let v = t * Vector3::new(p.0, p.1, 1.0);
    (v.x / v.z, v.y / v.z)
}

/// Solves the homography mapping each `src[i]` onto `dst[i]`.
///
/// Both point sets are Hartley-normalized before the 8×8 linear system is
/// solved with `h22 = 1`.
pub fn solve_homography(src: &[ImagePoint; 4], dst: &[BevPoint; 4]) -> Result<Homography> {
    let s: [(f64, f64); 4] = std::array::from_fn(|i| (src[i].x, src[i].y));
    let d: [(f64, f64); 4] = std::array::from_fn(|i| (dst[i].u, dst[i].v));
    if s.iter().chain(d.iter()).any(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(GeometryError::DegenerateConfiguration(
            "non-finite correspondence".into(),
        ));
    }
    check_no_three_collinear(&s)?;
    check_no_three_collinear(&d)?;

    let ts = hartley_transform(&s);
    let td = hartley_transform(&d);
    let sn: [(f64, f64); 4] = std::array::from_fn(|i| transform_point(&ts, s[i]));
    let dn: [(f64, f64); 4] = std::array::from_fn(|i| transform_point(&td, d[i]));

    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = sn[i];
        let (u, v) = dn[i];
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        b[r] = u;
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r + 1] = v;
    }

    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 0.0 || smax / smin > Tolerances::DEFAULT.max_condition {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "DLT system is rank-deficient (condition number {:e})",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }
    let h = svd
        .solve(&b, 0.0)
        .map_err(|e| GeometryError::DegenerateConfiguration(e.to_string()))?;
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    let td_inv = td.try_inverse().ok_or(GeometryError::Singular)?;
    Homography::from_matrix(td_inv * hn * ts)
}

/// The horizon of the ground plane: the horizontal image line through the
/// vanishing point (zero camera roll).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonLine {
    pub y: f64,
}

impl HorizonLine {
    /// True when `p` is strictly below the horizon by more than `margin` pixels.
    pub fn is_below(&self, p: ImagePoint, margin: f64) -> bool {
        p.y > self.y + margin
    }
}

pub fn horizon_line(vp: ImagePoint) -> HorizonLine {
    HorizonLine { y: vp.y }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridParams {
    /// Position of the upper horizontal line as a fraction of the distance
    /// from the vanishing point down to the bottom edge.
    pub alpha: f64,
    /// Number of equal intervals on the bottom line.
    pub subdivisions: usize,
    pub bev_width: f64,
    pub bev_depth: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            subdivisions: 8,
            bev_width: 20.0,
            bev_depth: 40.0,
        }
    }
}

/// Image quadrangle built from radial lines through the vanishing point,
/// paired with the BEV rectangle `[0, W] × [0, D]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveGrid {
    pub src: Quadrangle,
    pub bev_width: f64,
    pub bev_depth: f64,
    pub vp: ImagePoint,
    pub subdivisions: usize,
    pub alpha: f64,
    pub image_width: f64,
    pub image_height: f64,
    pub homography: Homography,
}

impl PerspectiveGrid {
    /// BEV corners matching `src` (TL, TR, BR, BL). The bottom image edge is `v = 0`.
    pub fn dst(&self) -> [BevPoint; 4] {
        grid_dst(self.bev_width, self.bev_depth)
    }

    pub fn horizon(&self) -> HorizonLine {
        horizon_line(self.vp)
    }

    /// Y coordinate of the upper horizontal line.
    pub fn upper_y(&self) -> f64 {
        self.vp.y + self.alpha * (self.image_height - self.vp.y)
    }

    /// Points subdividing the bottom image edge.
    pub fn bottom_points(&self) -> Vec<ImagePoint> {
        bottom_points(self.image_width, self.image_height, self.subdivisions)
    }

    /// Each radial line from the VP to a bottom point, clipped between the
    /// upper and lower horizontal lines.
    pub fn radial_segments(&self) -> Vec<(ImagePoint, ImagePoint)> {
        self.bottom_points()
            .into_iter()
            .map(|b| (lerp(self.vp, b, self.alpha), b))
            .collect()
    }
}

fn grid_dst(w: f64, d: f64) -> [BevPoint; 4] {
    [
        BevPoint::new(0.0, d),
        BevPoint::new(w, d),
        BevPoint::new(w, 0.0),
        BevPoint::new(0.0, 0.0),
    ]
}

fn bottom_points(w: f64, h: f64, n: usize) -> Vec<ImagePoint> {
    (0..=n)
        .map(|i| ImagePoint::new(w * i as f64 / n as f64, h))
        .collect()
}

fn lerp(a: ImagePoint, b: ImagePoint, t: f64) -> ImagePoint {
    ImagePoint::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
}

pub fn build_perspective_grid(
    vp: ImagePoint,
    image_w: f64,
    image_h: f64,
    params: &GridParams,
) -> Result<PerspectiveGrid> {
    if !(image_w > 0.0 && image_h > 0.0) {
        return Err(GeometryError::DegenerateGrid(format!(
            "image size {image_w}x{image_h} must be positive"
        )));
    }
    if !vp.is_finite() {
        return Err(GeometryError::DegenerateGrid(
            "vanishing point is not finite".into(),
        ));
    }
    if vp.y >= image_h {
        return Err(GeometryError::VanishingPointBelowScene {
            vp_y: vp.y,
            image_h,
        });
    }
    if !(params.alpha > 0.0 && params.alpha < 1.0) {
        return Err(GeometryError::DegenerateGrid(format!(
            "alpha = {} must lie in (0, 1)",
            params.alpha
        )));
    }
    if params.subdivisions == 0 {
        return Err(GeometryError::DegenerateGrid(
            "at least one subdivision is required".into(),
        ));
    }
    if !(params.bev_width > 0.0 && params.bev_depth > 0.0) {
        return Err(GeometryError::DegenerateGrid(
            "BEV rectangle must have positive width and depth".into(),
        ));
    }

    let bottom = bottom_points(image_w, image_h, params.subdivisions);
    let bl = bottom[0];
    let br = bottom[params.subdivisions];
    // The upper line sits a fraction alpha of the way from the VP down to
    // the bottom line, so each radial is cut at the same parameter.
    let tl = lerp(vp, bl, params.alpha);
    let tr = lerp(vp, br, params.alpha);
    let src = Quadrangle::new([tl, tr, br, bl])
        .map_err(|e| GeometryError::DegenerateGrid(e.to_string()))?;
    let dst = grid_dst(params.bev_width, params.bev_depth);
    let homography = solve_homography(src.corners(), &dst)?;
    Ok(PerspectiveGrid {
        src,
        bev_width: params.bev_width,
        bev_depth: params.bev_depth,
        vp,
        subdivisions: params.subdivisions,
        alpha: params.alpha,
        image_width: image_w,
        image_height: image_h,
        homography,
    })
}
