//! Deterministic orthographic point-splat renderer.
//!
//! Cameras sit on a ring around the bounding-sphere centre at equal azimuth
//! steps and a fixed 30 degree elevation, looking at the centre. The view
//! window spans the bounding sphere. Each point lights its pixel and the four
//! edge neighbours with intensity `1 - normalised depth`; the nearest point
//! wins. The y axis is up.

use super::{cross, dot, normalize, sub, Point, PointCloud};
use crate::error::{Error, Result};

pub const ELEVATION_DEG: f64 = 30.0;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose {
    pub origin: Point,
    pub forward: Point,
    pub up: Point,
    pub right: Point,
}

impl CameraPose {
    pub fn new(origin: Point, forward: Point, up: Point, right: Point) -> Result<Self> {
        let basis = [forward, up, right];
        for (i, a) in basis.iter().enumerate() {
            for (j, b) in basis.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot(a, b) - want).abs() > ORTHONORMAL_TOL {
                    return Err(Error::InvalidArgument("camera basis is not orthonormal".into()));
                }
            }
        }
        Ok(CameraPose {
            origin,
            forward,
            up,
            right,
        })
    }

    /// Azimuth of the camera position around the vertical axis, in degrees in [0, 360).
    pub fn azimuth_deg(&self) -> f64 {
        let a = (-self.forward[0]).atan2(-self.forward[2]).to_degrees();
        if a < 0.0 {
            a + 360.0
        } else {
            a
        }
    }
}

/// Rendered views with their poses and per-pixel ray directions.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewSet {
    height: usize,
    width: usize,
    /// One row-major `height x width` image per view, values in [0, 1].
    images: Vec<Vec<f64>>,
    poses: Vec<CameraPose>,
    /// One `height * width` list of unit directions per view.
    rays: Vec<Vec<Point>>,
}

impl MultiViewSet {
    pub fn new(
        height: usize,
        width: usize,
        images: Vec<Vec<f64>>,
        poses: Vec<CameraPose>,
        rays: Vec<Vec<Point>>,
    ) -> Result<Self> {
        let v = images.len();
        if v == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument("empty view set".into()));
        }
        if poses.len() != v || rays.len() != v {
            return Err(Error::shape(
                "multi_view_set",
                format!("{v} images, {} poses, {} ray maps", poses.len(), rays.len()),
            ));
        }
        let px = height * width;
        for (img, r) in images.iter().zip(&rays) {
            if img.len() != px || r.len() != px {
                return Err(Error::shape("multi_view_set", format!("expected {px} pixels per view")));
            }
            if img.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::InvalidArgument("intensity outside [0, 1]".into()));
            }
            if r.iter().any(|d| (dot(d, d).sqrt() - 1.0).abs() > ORTHONORMAL_TOL) {
                return Err(Error::InvalidArgument("ray direction is not unit length".into()));
            }
        }
        Ok(MultiViewSet {
            height,
            width,
            images,
            poses,
            rays,
        })
    }

    pub fn num_views(&self) -> usize {
        self.images.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn image(&self, v: usize) -> &[f64] {
        &self.images[v]
    }

    pub fn pose(&self, v: usize) -> &CameraPose {
        &self.poses[v]
    }

    pub fn rays(&self, v: usize) -> &[Point] {
        &self.rays[v]
    }
}

pub fn render_views(cloud: &PointCloud, views: usize, height: usize, width: usize) -> Result<MultiViewSet> {
    if views == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "need at least one view and pixel, got V={views} H={height} W={width}"
        )));
    }
    let (center, radius) = cloud.bounding_sphere();
    let degenerate = radius < 1e-12;
    let extent = if degenerate { 1.0 } else { radius };
    let el = ELEVATION_DEG.to_radians();
    let world_up = [0.0, 1.0, 0.0];

    let mut images = Vec::with_capacity(views);
    let mut poses = Vec::with_capacity(views);
    let mut rays = Vec::with_capacity(views);
    for k in 0..views {
        let az = std::f64::consts::TAU * k as f64 / views as f64;
        let outward = [el.cos() * az.sin(), el.sin(), el.cos() * az.cos()];
        let origin = [
            center[0] + 2.0 * extent * outward[0],
            center[1] + 2.0 * extent * outward[1],
            center[2] + 2.0 * extent * outward[2],
        ];
        let forward = [-outward[0], -outward[1], -outward[2]];
        let right = normalize(&cross(&forward, &world_up));
        let up = cross(&right, &forward);
        let pose = CameraPose::new(origin, forward, up, right)?;

        let mut img = vec![0.0; height * width];
        for p in cloud.positions() {
            let d = sub(p, &center);
            let (u, v, intensity) = if degenerate {
                (0.0, 0.0, 1.0)
            } else {
                let u = dot(&d, &right) / extent;
                let v = dot(&d, &up) / extent;
                let depth = (dot(&d, &forward) + extent) / (2.0 * extent);
                (u, v, (1.0 - depth).clamp(0.0, 1.0))
            };
            let col = pixel_index((u + 1.0) / 2.0, width);
            let row = pixel_index((1.0 - v) / 2.0, height);
            splat(&mut img, height, width, row, col, intensity);
        }
        images.push(img);
        rays.push(vec![forward; height * width]);
        poses.push(pose);
    }
    MultiViewSet::new(height, width, images, poses, rays)
}

fn pixel_index(t: f64, n: usize) -> usize {
    ((t * n as f64).floor().max(0.0) as usize).min(n - 1)
}

fn splat(img: &mut [f64], h: usize, w: usize, row: usize, col: usize, intensity: f64) {
    let (row, col) = (row as isize, col as isize);
    for (dr, dc) in [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)] {
        let (r, c) = (row + dr, col + dc);
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            continue;
        }
        let px = &mut img[r as usize * w + c as usize];
        if intensity > *px {
            *px = intensity;
        }
    }
}
