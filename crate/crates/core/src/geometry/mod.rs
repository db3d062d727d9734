//! Point-cloud primitives: neighbour search, inverse-distance feature
//! propagation, segment pooling and a small orthographic view renderer.

mod cloud;
mod neighbors;
mod pool;
mod propagate;
mod render;

pub use cloud::{
    format_point_cloud, parse_point_cloud, read_point_cloud, write_point_cloud, PointCloud, NUM_SEGMENT_CLASSES,
};
pub use neighbors::{farthest_point_sampling, knn, knn_positions};
pub use pool::{group_pool, segment_groups, DEFAULT_MIN_FRACTION};
pub use propagate::{propagate_features, propagation_weights, DEFAULT_K, DEFAULT_POWER, SNAP_DISTANCE};
pub use render::{render_views, CameraPose, MultiViewSet, ELEVATION_DEG};

pub type Point = [f64; 3];

pub(crate) fn dist(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

pub(crate) fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize(a: &Point) -> Point {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}
