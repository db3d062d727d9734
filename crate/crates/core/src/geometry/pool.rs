use std::collections::BTreeMap;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Segments holding fewer than this fraction of the points are ignored.
pub const DEFAULT_MIN_FRACTION: f64 = 0.01;

/// Point indices of every segment that survives the size threshold, ordered
/// by segment id.
pub fn segment_groups(labels: &[usize], min_fraction: f64) -> Result<Vec<(usize, Vec<usize>)>> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no points to pool".into()));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let kept: Vec<(usize, Vec<usize>)> = groups
        .into_iter()
        .filter(|(_, members)| members.len() as f64 / n as f64 >= min_fraction)
        .collect();
    if kept.is_empty() {
        return Err(Error::Data(format!(
            "every segment is below {}% of the points",
            min_fraction * 100.0
        )));
    }
    Ok(kept)
}

/// Per-segment mean of `features` (N x d). Returns the S x d pooled matrix and
/// the kept segment ids.
pub fn group_pool(features: &Tensor, labels: &[usize], min_fraction: f64) -> Result<(Tensor, Vec<usize>)> {
    if features.rows() != labels.len() {
        return Err(Error::shape(
            "group_pool",
            format!("{} feature rows vs {} labels", features.rows(), labels.len()),
        ));
    }
    let groups = segment_groups(labels, min_fraction)?;
    let d = features.cols();
    let mut out = Vec::with_capacity(groups.len() * d);
    let mut ids = Vec::with_capacity(groups.len());
    for (id, members) in &groups {
        let mut acc = vec![0.0; d];
        for &i in members {
            for (a, &f) in acc.iter_mut().zip(features.row_slice(i)) {
                *a += f;
            }
        }
        let inv = members.len() as f64;
        out.extend(acc.into_iter().map(|v| v / inv));
        ids.push(*id);
    }
    Ok((Tensor::matrix(ids.len(), d, out)?, ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_segment_is_global_mean() {
        let f = Tensor::from_rows(&[vec![1.0, 0.0], vec![3.0, 2.0], vec![5.0, 4.0]]).unwrap();
        let (p, ids) = group_pool(&f, &[4, 4, 4], 0.01).unwrap();
        assert_eq!(ids, vec![4]);
        assert_eq!(p.data(), &[3.0, 2.0]);
    }

    #[test]
    fn absent_segment_not_reported() {
        let f = Tensor::zeros(&[100, 2]);
        let labels: Vec<usize> = (0..100).map(|i| if i < 50 { 0 } else { 2 }).collect();
        let (_, ids) = group_pool(&f, &labels, 0.01).unwrap();
        assert_eq!(ids, vec![0, 2]);
    }

    #[test]
    fn one_percent_threshold() {
        // 2500 points: 20 (0.8%) dropped, 30 (1.2%) kept.
        let mut labels = vec![0usize; 2450];
        labels.extend(vec![5; 20]);
        labels.extend(vec![9; 30]);
        let f = Tensor::zeros(&[2500, 1]);
        let (p, ids) = group_pool(&f, &labels, 0.01).unwrap();
        // brute-force grouping
        let mut oracle = Vec::new();
        for id in 0..17 {
            let count = labels.iter().filter(|&&l| l == id).count();
            if count > 0 && count * 100 >= 2500 {
                oracle.push(id);
            }
        }
        assert_eq!(ids, oracle);
        assert_eq!(ids, vec![0, 9]);
        assert_eq!(p.rows(), 2);
    }

    #[test]
    fn all_dropped_is_an_error() {
        let labels: Vec<usize> = (0..200).map(|i| i % 17).collect();
        let f = Tensor::zeros(&[200, 1]);
        assert!(group_pool(&f, &labels, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn weighted_mean_of_means(
            rows in prop::collection::vec((0usize..5, -10.0f64..10.0, -10.0f64..10.0), 1..80),
        ) {
            let labels: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let f = Tensor::from_rows(&rows.iter().map(|r| vec![r.1, r.2]).collect::<Vec<_>>()).unwrap();
            let groups = segment_groups(&labels, 0.01).unwrap();
            let (p, _) = group_pool(&f, &labels, 0.01).unwrap();
            let kept: usize = groups.iter().map(|g| g.1.len()).sum();
            for c in 0..2 {
                let mut weighted = 0.0;
                for (s, (_, members)) in groups.iter().enumerate() {
                    weighted += p.at(s, c) * members.len() as f64;
                }
                let direct: f64 = groups.iter().flat_map(|g| g.1.iter()).map(|&i| f.at(i, c)).sum();
                prop_assert!((weighted / kept as f64 - direct / kept as f64).abs() < 1e-12);
            }
        }
    }
}
