use proptest::prelude::*;

use topview_core::analytics::{detect_violations, occupancy, ViolationConfig};
use topview_core::bev::{bev_from_geo, export_tokens, georeference, parse_tokens_str, to_bev, BevObject, TokenStream};
use topview_core::box3d::{build_box3d, classify_orientation, Box3dConfig, Orientation, OrientationConfig};
use topview_core::geometry::{build_perspective_grid, solve_homography, BevPoint, GridParams, ImagePoint, Quadrangle};
use topview_core::ingest::{assemble_tracks, smooth_anchors, BBox, Detection, ObjectClass, TrackerConfig, TrajectoryLine};
use topview_core::vp::{estimate_vp_ransac, LineSegment, RansacConfig, VanishingPoint};
use topview_core::CalibrationParams;

fn quad() -> impl Strategy<Value = [ImagePoint; 4]> {
    (200.0..800.0f64, 200.0..600.0f64, prop::array::uniform4((0.15..0.85f64, 80.0..300.0f64))).prop_map(
        |(cx, cy, parts)| {
            std::array::from_fn(|k| {
                let a = (k as f64 + parts[k].0) * std::f64::consts::FRAC_PI_2;
                ImagePoint::new(cx + parts[k].1 * a.cos(), cy + parts[k].1 * a.sin())
            })
        },
    )
}

fn cross_ratio(p: [f64; 4]) -> f64 {
    ((p[2] - p[0]) * (p[3] - p[1])) / ((p[2] - p[1]) * (p[3] - p[0]))
}

fn obj(id: u64, class: ObjectClass, frame: u64, u: f64, v: f64) -> BevObject {
    BevObject {
        track_id: id,
        class,
        position: BevPoint::new(u, v),
        geo: None,
        stationary: false,
        orientation: Orientation::SideView,
        frame,
        t: frame as f64 * 0.1,
        box3d: [[0.0; 2]; 8],
    }
}

/// A handful of persons on random straight paths over 30 frames.
fn walkers() -> impl Strategy<Value = Vec<TokenStream>> {
    prop::collection::vec(
        (0.0..10.0f64, 0.0..10.0f64, 0.0..10.0f64, 0.0..10.0f64, 0..10u64, 5..30u64),
        2..6,
    )
    .prop_map(|ws| {
        ws.into_iter()
            .enumerate()
            .map(|(i, (x0, y0, x1, y1, first, len))| {
                let id = i as u64 + 1;
                let states = (0..len)
                    .map(|k| {
                        let s = k as f64 / len as f64;
                        obj(id, ObjectClass::Person, first + k, x0 + s * (x1 - x0), y0 + s * (y1 - y0))
                    })
                    .collect();
                TokenStream {
                    track_id: id,
                    class: ObjectClass::Person,
                    states,
                }
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn homography_round_trip(src in quad(), p in (0.0..1000.0f64, 0.0..800.0f64)) {
        let dst = [BevPoint::new(0.0, 40.0), BevPoint::new(20.0, 40.0), BevPoint::new(20.0, 0.0), BevPoint::new(0.0, 0.0)];
        let h = solve_homography(&src, &dst).unwrap();
        let img = ImagePoint::new(p.0, p.1);
        if let Ok(b) = h.project(img) {
            let back = h.unproject(b).unwrap();
            prop_assert!(back.distance(&img) < 1e-6 * (1.0 + b.u.abs().max(b.v.abs())));
        }
        for (s, d) in src.iter().zip(&dst) {
            let q = h.project(*s).unwrap();
            prop_assert!(q.distance(d) < 1e-9);
        }
    }

    #[test]
    fn homography_preserves_cross_ratio(src in quad(), t in prop::array::uniform4(-2.0..3.0f64)) {
        let dst = [BevPoint::new(0.0, 40.0), BevPoint::new(20.0, 40.0), BevPoint::new(20.0, 0.0), BevPoint::new(0.0, 0.0)];
        let h = solve_homography(&src, &dst).unwrap();
        let mut t = t;
        t.sort_by(f64::total_cmp);
        prop_assume!(t.windows(2).all(|w| w[1] - w[0] > 0.05));
        let (a, b) = (src[0], src[2]);
        let pts: Vec<ImagePoint> = t.iter().map(|s| ImagePoint::new(a.x + s * (b.x - a.x), a.y + s * (b.y - a.y))).collect();
        let mapped: Option<Vec<BevPoint>> = pts.iter().map(|p| h.project(*p).ok()).collect();
        let Some(m) = mapped else { return Ok(()) };
        prop_assume!(m.iter().all(|q| q.u.abs() < 1e6 && q.v.abs() < 1e6));
        // Parametrize the image of the line by its dominant coordinate.
        let (du, dv) = (m[3].u - m[0].u, m[3].v - m[0].v);
        let coord: [f64; 4] = std::array::from_fn(|i| if du.abs() > dv.abs() { m[i].u } else { m[i].v });
        let before = cross_ratio(t);
        let after = cross_ratio(coord);
        prop_assert!((before - after).abs() <= 1e-6 * before.abs().max(1.0), "{before} vs {after}");
    }

    #[test]
    fn grid_is_convex_below_vp(vx in -500.0..2000.0f64, vy in -2000.0..600.0f64, alpha in 0.05..0.95f64) {
        let params = GridParams { alpha, ..GridParams::default() };
        let grid = build_perspective_grid(ImagePoint::new(vx, vy), 1280.0, 720.0, &params).unwrap();
        prop_assert!(Quadrangle::new(*grid.src.corners()).is_ok());
        prop_assert!(grid.upper_y() > vy && grid.upper_y() < 720.0);
    }

    #[test]
    fn vp_scale_equivariant_and_order_invariant(
        vx in 0.0..640.0f64, vy in 0.0..200.0f64,
        lines in prop::collection::vec((0.2..2.9f64, 50.0..200.0f64, 50.0..300.0f64), 4..12),
        scale in 0.1..10.0f64,
        seed in any::<u64>(),
    ) {
        let segs: Vec<LineSegment> = lines.iter().map(|&(a, r1, dr)| {
            let p = |r: f64| ImagePoint::new(vx + r * a.cos(), vy + r * a.sin());
            LineSegment::new(p(r1), p(r1 + dr))
        }).collect();
        prop_assume!(lines.iter().any(|l| (l.0 - lines[0].0).abs() > 0.05));
        let cfg = RansacConfig { seed, ..RansacConfig::default() };
        let base = estimate_vp_ransac(&segs, &cfg).unwrap();
        let scaled: Vec<LineSegment> = segs.iter().map(|s| LineSegment::new(
            ImagePoint::new(s.p1.x * scale, s.p1.y * scale),
            ImagePoint::new(s.p2.x * scale, s.p2.y * scale),
        )).collect();
        let big = estimate_vp_ransac(&scaled, &cfg).unwrap();
        let tol = 1e-6 * (base.vp.x.abs() + base.vp.y.abs()).max(1.0) * scale;
        prop_assert!((big.vp.x - scale * base.vp.x).abs() <= tol);
        prop_assert!((big.vp.y - scale * base.vp.y).abs() <= tol);
        let mut rev = segs.clone();
        rev.reverse();
        rev.rotate_left(segs.len() / 2);
        prop_assert_eq!(estimate_vp_ransac(&rev, &cfg).unwrap(), base);
    }

    #[test]
    fn smoothing_commutes_with_translation(
        pts in prop::collection::vec((0.0..1000.0f64, 0.0..1000.0f64), 1..40),
        window in 1usize..12, dx in -500.0..500.0f64, dy in -500.0..500.0f64,
    ) {
        let a: Vec<ImagePoint> = pts.iter().map(|p| ImagePoint::new(p.0, p.1)).collect();
        let b: Vec<ImagePoint> = a.iter().map(|p| ImagePoint::new(p.x + dx, p.y + dy)).collect();
        let (sa, sb) = (smooth_anchors(&a, window), smooth_anchors(&b, window));
        prop_assert_eq!(sa.len(), a.len());
        for (p, q) in sa.iter().zip(&sb) {
            prop_assert!((q.x - p.x - dx).abs() < 1e-9 && (q.y - p.y - dy).abs() < 1e-9);
        }
    }

    #[test]
    fn classification_scale_invariant_and_mirrored(
        x1 in 0.0..500.0f64, bw in 10.0..200.0f64, y1 in 100.0..400.0f64, bh in 10.0..200.0f64,
        vpx in 0.0..640.0f64, vpy in 0.0..100.0f64,
        pts in prop::collection::vec((-60.0..260.0f64, -100.0..250.0f64), 2..6),
        s in 0.1..8.0f64,
    ) {
        let w = 640.0;
        let b = BBox::new(x1, y1, x1 + bw, y1 + bh).unwrap();
        let traj = TrajectoryLine { points: pts.iter().map(|p| ImagePoint::new(x1 + p.0, y1 + p.1)).collect(), source_track: 1 };
        let vp = VanishingPoint::new(vpx, vpy);
        // Tolerances are in pixels, so they scale along with the scene.
        let cfg = OrientationConfig::default();
        let label = classify_orientation(&traj, &vp, w, &b, &cfg);

        let ts = TrajectoryLine { points: traj.points.iter().map(|p| ImagePoint::new(p.x * s, p.y * s)).collect(), source_track: 1 };
        let bs = BBox::new(b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s).unwrap();
        let cs = OrientationConfig { tie_tolerance: cfg.tie_tolerance * s, ..cfg };
        prop_assert_eq!(classify_orientation(&ts, &VanishingPoint::new(vpx * s, vpy * s), w * s, &bs, &cs), label);

        let tm = TrajectoryLine { points: traj.points.iter().map(|p| ImagePoint::new(w - p.x, p.y)).collect(), source_track: 1 };
        let bm = BBox::new(w - b.x2, b.y1, w - b.x1, b.y2).unwrap();
        prop_assert_eq!(classify_orientation(&tm, &VanishingPoint::new(w - vpx, vpy), w, &bm, &cfg), label.mirrored());
    }

    #[test]
    fn box_corners_stay_in_bbox(
        x1 in -1e4..1e4f64, y1 in -1e4..1e4f64, bw in 1e-3..1e3f64, bh in 1e-3..1e3f64,
        vx in -1e5..1e5f64, vy in -1e5..1e5f64, which in 0usize..4,
        rho in 0.0..3.0f64, sigma in 0.0..1.0f64,
    ) {
        let b = BBox::new(x1, y1, x1 + bw, y1 + bh).unwrap();
        let o = [Orientation::TurningLeft, Orientation::TurningRight, Orientation::MovingStraight, Orientation::SideView][which];
        let cfg = Box3dConfig { depth_ratio: rho, foreshortening: sigma, ..Box3dConfig::default() };
        let bx = build_box3d(&b, o, &VanishingPoint::new(vx, vy), &cfg);
        prop_assert_eq!(bx.orientation, o);
        for p in bx.corners {
            prop_assert!(p.x >= b.x1 && p.x <= b.x2 && p.y >= b.y1 && p.y <= b.y2);
        }
        prop_assert_eq!(build_box3d(&b, o, &VanishingPoint::new(vx, vy), &cfg), bx);
    }

    #[test]
    fn calibration_is_affine(x in -20.0..20.0f64, z in 0.1..5.0f64, px in 0.0..1280.0f64, py in 200.0..720.0f64) {
        let grid = build_perspective_grid(ImagePoint::new(640.0, 100.0), 1280.0, 720.0, &GridParams::default()).unwrap();
        let p = ImagePoint::new(px, py);
        let raw = to_bev(p, &grid, &CalibrationParams::default()).unwrap();
        let cal = CalibrationParams { x_value: x, z_value: z, ..CalibrationParams::default() };
        let got = to_bev(p, &grid, &cal).unwrap();
        prop_assert!((got.u - (raw.u + x)).abs() < 1e-9 && (got.v - raw.v * z).abs() < 1e-9 * (1.0 + raw.v.abs()));
    }

    #[test]
    fn georeference_inverts(
        u in -100.0..100.0f64, v in 0.0..200.0f64, lat in -70.0..70.0f64, lon in -179.0..179.0f64,
        heading in 0.0..360.0f64, m in 0.1..5.0f64,
    ) {
        let cal = CalibrationParams { camera_lat: Some(lat), camera_lon: Some(lon), heading, meters_per_unit: m, ..CalibrationParams::default() };
        let p = BevPoint::new(u, v);
        let g = georeference(p, &cal, 20.0).unwrap();
        let back = bev_from_geo(g, &cal, 20.0).unwrap();
        prop_assert!(back.distance(&p) < 1e-6);
    }

    #[test]
    fn violations_symmetric_and_contacts_monotone(streams in walkers(), th in 0.2..3.0f64, extra in 0.0..3.0f64) {
        let cal = CalibrationParams::default();
        let cfg = ViolationConfig { threshold_m: th, ..ViolationConfig::default() };
        let a = detect_violations(&streams, &cal, &cfg);
        let mut rev = streams.clone();
        rev.reverse();
        prop_assert_eq!(&detect_violations(&rev, &cal, &cfg), &a);
        for e in &a.events {
            prop_assert!(e.pair.0 < e.pair.1 && e.distance < th);
        }
        let wider = detect_violations(&streams, &cal, &ViolationConfig { threshold_m: th + extra, ..cfg });
        let frames = |r: &topview_core::ViolationReport| r.events.iter().map(|e| e.duration).sum::<usize>();
        prop_assert!(frames(&wider) >= frames(&a));
        // Rigid motions of the BEV frame leave every event unchanged.
        let (s, c) = 0.7f64.sin_cos();
        let moved: Vec<TokenStream> = streams.iter().map(|t| TokenStream {
            states: t.states.iter().map(|o| {
                let mut o = o.clone();
                let (u, v) = (o.position.u, o.position.v);
                o.position = BevPoint::new(c * u - s * v + 13.0, s * u + c * v - 4.0);
                o
            }).collect(),
            ..t.clone()
        }).collect();
        let m = detect_violations(&moved, &cal, &cfg);
        prop_assert_eq!(m.count, a.count);
        for (x, y) in m.events.iter().zip(&a.events) {
            prop_assert_eq!((x.frame, x.pair, x.duration), (y.frame, y.pair, y.duration));
            prop_assert!((x.distance - y.distance).abs() < 1e-9);
        }
    }

    #[test]
    fn occupancy_conserves_states(streams in walkers(), cell in 0.1..5.0f64) {
        let g = occupancy(&streams, &CalibrationParams::default(), cell).unwrap();
        let n: usize = streams.iter().map(|s| s.states.len()).sum();
        prop_assert_eq!(g.total() as usize, n);
    }

    #[test]
    fn tokens_round_trip(streams in walkers()) {
        let text = export_tokens(&streams);
        let back = parse_tokens_str(&text).unwrap();
        prop_assert_eq!(back, streams);
    }

    #[test]
    fn tracker_conserves_detections(
        boxes in prop::collection::vec((0..30u64, 0.0..600.0f64, 0.0..400.0f64, 5.0..80.0f64), 0..60),
    ) {
        let mut seen = std::collections::BTreeSet::new();
        let dets: Vec<Detection> = boxes.iter()
            .filter(|b| seen.insert((b.0, (b.1 as i64), (b.2 as i64))))
            .map(|&(f, x, y, s)| Detection {
                frame: f, t: None, class: ObjectClass::Person,
                bbox: BBox::new(x, y, x + s, y + 2.0 * s).unwrap(), confidence: 0.5, track_id: None,
            })
            .collect();
        let tracks = assemble_tracks(&dets, &TrackerConfig::default());
        let total: usize = tracks.iter().map(|t| t.samples.len()).sum();
        prop_assert_eq!(total, dets.len());
        for t in &tracks {
            prop_assert!(t.samples.windows(2).all(|w| w[0].frame < w[1].frame));
        }
    }
}
