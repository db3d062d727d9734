use std::fmt::Write as _;
use std::path::Path;

use super::Point;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Segment ids live in `[0, NUM_SEGMENT_CLASSES)`.
pub const NUM_SEGMENT_CLASSES: usize = 17;

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    positions: Vec<Point>,
    features: Option<Tensor>,
    segment_labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Point>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("point cloud has no points".into()));
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("point {i}")));
        }
        Ok(PointCloud {
            positions,
            features: None,
            segment_labels: None,
        })
    }

    pub fn with_features(mut self, features: Tensor) -> Result<Self> {
        if features.rows() != self.len() || !features.is_matrix() {
            return Err(Error::shape(
                "point_cloud",
                format!("{} points but features {:?}", self.len(), features.shape()),
            ));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::shape(
                "point_cloud",
                format!("{} points but {} labels", self.len(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_SEGMENT_CLASSES) {
            return Err(Error::InvalidArgument(format!(
                "segment id {bad} outside [0, {NUM_SEGMENT_CLASSES})"
            )));
        }
        self.segment_labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn features(&self) -> Option<&Tensor> {
        self.features.as_ref()
    }

    pub fn segment_labels(&self) -> Option<&[usize]> {
        self.segment_labels.as_deref()
    }

    /// Reorders points (and labels/features) by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let positions = order.iter().map(|&i| self.positions[i]).collect();
        let mut out = PointCloud::new(positions)?;
        if let Some(l) = &self.segment_labels {
            out = out.with_labels(order.iter().map(|&i| l[i]).collect())?;
        }
        if let Some(f) = &self.features {
            let data = order.iter().flat_map(|&i| f.row_slice(i).to_vec()).collect();
            out = out.with_features(Tensor::matrix(order.len(), f.cols(), data)?)?;
        }
        Ok(out)
    }

    /// Axis-aligned bounding box centre and the largest distance from it.
    pub fn bounding_sphere(&self) -> (Point, f64) {
        let mut lo = self.positions[0];
        let mut hi = self.positions[0];
        for p in &self.positions {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let c = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
        let r = self
            .positions
            .iter()
            .fold(0.0_f64, |m, p| m.max(super::dist(p, &c)));
        (c, r)
    }
}

/// Parses `x y z [segment_id]` records, one per line. Blank lines are skipped.
/// Either every record carries a segment id or none does.
pub fn parse_point_cloud(text: &str, expected: Option<usize>) -> Result<PointCloud> {
    let mut positions = Vec::new();
    let mut labels = Vec::new();
    let mut with_labels = None;
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Data(format!("line {}: {msg}", lineno + 1));
        let labelled = match fields.len() {
            3 => false,
            4 => true,
            n => return Err(bad(&format!("expected 3 or 4 fields, got {n}"))),
        };
        if *with_labels.get_or_insert(labelled) != labelled {
            return Err(bad("inconsistent segment column"));
        }
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = fields[a]
                .parse::<f64>()
                .map_err(|e| bad(&format!("coordinate `{}`: {e}", fields[a])))?;
            if !p[a].is_finite() {
                return Err(bad("non-finite coordinate"));
            }
        }
        positions.push(p);
        if labelled {
            labels.push(
                fields[3]
                    .parse::<usize>()
                    .map_err(|e| bad(&format!("segment id `{}`: {e}", fields[3])))?,
            );
        }
    }
    if let Some(n) = expected {
        if positions.len() != n {
            return Err(Error::Data(format!("expected {n} points, found {}", positions.len())));
        }
    }
    let cloud = PointCloud::new(positions).map_err(|e| Error::Data(e.to_string()))?;
    if with_labels == Some(true) {
        cloud.with_labels(labels).map_err(|e| Error::Data(e.to_string()))
    } else {
        Ok(cloud)
    }
}

pub fn read_point_cloud(path: &Path, expected: Option<usize>) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_point_cloud(&text, expected).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn format_point_cloud(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 32);
    for (i, p) in cloud.positions().iter().enumerate() {
        let _ = write!(s, "{:.6} {:.6} {:.6}", p[0], p[1], p[2]);
        if let Some(l) = cloud.segment_labels() {
            let _ = write!(s, " {}", l[i]);
        }
        s.push('\n');
    }
    s
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, format_point_cloud(cloud)).map_err(|e| Error::io(path, e))
}
