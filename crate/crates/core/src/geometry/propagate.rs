use super::{knn_positions, Point, PointCloud};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 3;
pub const DEFAULT_POWER: f64 = 2.0;
/// Below this distance the nearest source feature is returned as is.
pub const SNAP_DISTANCE: f64 = 1e-8;

/// Normalised inverse-distance weights `w_j = d_j^-p / sum_l d_l^-p` over the
/// `k` nearest sources of every query.
pub fn propagation_weights(
    sources: &[Point],
    queries: &[Point],
    k: usize,
    power: f64,
) -> Result<Vec<Vec<(usize, f64)>>> {
    if power <= 0.0 || !power.is_finite() {
        return Err(Error::InvalidArgument(format!("power must be positive, got {power}")));
    }
    queries
        .iter()
        .map(|q| {
            let nn = knn_positions(sources, q, k)?;
            if nn[0].1 < SNAP_DISTANCE {
                return Ok(vec![(nn[0].0, 1.0)]);
            }
            let raw: Vec<f64> = nn.iter().map(|&(_, d)| 1.0 / d.powf(power)).collect();
            let total = raw.iter().fold(0.0, |s, &w| s + w);
            Ok(nn.iter().zip(raw).map(|(&(i, _), w)| (i, w / total)).collect())
        })
        .collect()
}

/// Interpolates the source cloud's features onto `queries`.
pub fn propagate_features(source: &PointCloud, queries: &[Point], k: usize, power: f64) -> Result<Tensor> {
    let feats = source
        .features()
        .ok_or_else(|| Error::InvalidArgument("source cloud has no features".into()))?;
    let weights = propagation_weights(source.positions(), queries, k, power)?;
    let d = feats.cols();
    let mut out = vec![0.0; queries.len() * d];
    for (row, w) in out.chunks_mut(d).zip(&weights) {
        if let [(i, _)] = w[..] {
            row.copy_from_slice(feats.row_slice(i));
            continue;
        }
        for &(i, wi) in w {
            for (o, &f) in row.iter_mut().zip(feats.row_slice(i)) {
                *o += wi * f;
            }
        }
    }
    Tensor::matrix(queries.len(), d, out)
}
