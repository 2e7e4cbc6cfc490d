//! Monocular traffic-video to bird's-eye-view reconstruction.
//!
//! The pipeline runs detections through tracking and ID repair, estimates or
//! loads a vanishing point, builds a perspective grid and its homography,
//! labels each track's orientation, and emits metric BEV token streams that
//! the analytics module turns into distance violations and occupancy maps.

pub mod analytics;
pub mod bev;
pub mod box3d;
pub mod geometry;
pub mod ingest;
pub mod pipeline;
pub mod synth;
pub mod tolerance;
pub mod vp;

pub use analytics::{
    aggregate_scenes, detect_violations, occupancy, pairwise_distances, AnalyticsError, CameraRegistry,
    OccupancyGrid, ViolationConfig, ViolationEvent, ViolationReport,
};
pub use bev::{
    export_geojson, export_tokens, georeference, parse_tokens, to_bev, BevError, BevObject, CalibrationParams,
    GeoJsonMode, GeoPoint, TokenStream,
};
pub use box3d::{build_box3d, classify_orientation, Box3D, Box3dConfig, Orientation, OrientationConfig};
pub use geometry::{
    build_perspective_grid, horizon_line, project, solve_homography, BevPoint, GeometryError, GridParams,
    Homography, HorizonLine, ImagePoint, PerspectiveGrid, Quadrangle,
};
pub use ingest::{
    assemble_tracks, parse_detections, repair_ids, BBox, Detection, IngestError, ObjectClass, Track,
    TrajectoryLine,
};
pub use pipeline::{
    load_scene_dir, run_pipeline, ImageSize, PipelineConfig, PipelineError, SceneInputs, SceneLoadError, SceneMeta,
    SceneOutput,
};
pub use tolerance::Tolerances;
pub use vp::{estimate_vp_ransac, logcosh_error, LineSegment, RansacConfig, VanishingPoint, VpError};
