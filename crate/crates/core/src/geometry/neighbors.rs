use super::{dist, Point, PointCloud};
use crate::error::{Error, Result};

/// Exact Euclidean k-nearest neighbours of `query`, ascending by distance with
/// ties broken by lower index.
pub fn knn(cloud: &PointCloud, query: &Point, k: usize) -> Result<Vec<(usize, f64)>> {
    knn_positions(cloud.positions(), query, k)
}

pub fn knn_positions(points: &[Point], query: &Point, k: usize) -> Result<Vec<(usize, f64)>> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in [1, {}]",
            points.len()
        )));
    }
    let mut all: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, dist(p, query))).collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_by(cmp);
    Ok(all)
}

/// Indices of `m` points chosen greedily to be mutually far apart.
///
/// The first pick is the point farthest from the centroid; each later pick
/// maximises the distance to the already chosen set. Ties go to the lower
/// index. If `m >= points.len()` every index is returned in pick order.
pub fn farthest_point_sampling(points: &[Point], m: usize) -> Vec<usize> {
    let n = points.len();
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let m = m.min(n);
    let mut centroid = [0.0; 3];
    for p in points {
        for a in 0..3 {
            centroid[a] += p[a];
        }
    }
    for c in &mut centroid {
        *c /= n as f64;
    }
    let argmax = |d: &[f64]| {
        let mut best = 0;
        for (i, &v) in d.iter().enumerate() {
            if v > d[best] {
                best = i;
            }
        }
        best
    };
    let from_centroid: Vec<f64> = points.iter().map(|p| dist(p, &centroid)).collect();
    let mut chosen = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    let mut next = argmax(&from_centroid);
    loop {
        chosen.push(next);
        taken[next] = true;
        if chosen.len() == m {
            break;
        }
        let c = points[next];
        for (i, p) in points.iter().enumerate() {
            let d = dist(p, &c);
            if d < nearest[i] {
                nearest[i] = d;
            }
        }
        let mut best = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) if nearest[i] > nearest[b] => best = Some(i),
                _ => {}
            }
        }
        next = best.expect("untaken point exists while chosen < n");
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
    }

    #[test]
    fn single_point() {
        let c = PointCloud::new(vec![[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(knn(&c, &[0.0, 0.0, 0.0], 1).unwrap()[0].0, 0);
    }

    #[test]
    fn coincident_query_first() {
        let pts = random_points(20, 1);
        let c = PointCloud::new(pts.clone()).unwrap();
        let r = knn(&c, &pts[7], 3).unwrap();
        assert_eq!(r[0], (7, 0.0));
    }

    #[test]
    fn k_out_of_range() {
        let c = PointCloud::new(random_points(4, 2)).unwrap();
        assert!(knn(&c, &[0.0; 3], 5).is_err());
        assert!(knn(&c, &[0.0; 3], 0).is_err());
    }

    #[test]
    fn matches_full_sort() {
        for seed in 0..10 {
            let pts = random_points(50, seed);
            let c = PointCloud::new(pts.clone()).unwrap();
            let q = [0.3, 0.6, 0.1];
            let mut oracle: Vec<(usize, f64)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                    (i, d)
                })
                .collect();
            oracle.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            oracle.truncate(5);
            assert_eq!(knn(&c, &q, 5).unwrap(), oracle);
        }
    }

    #[test]
    fn ties_by_index() {
        let pts = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 0.0, 0.0]];
        let r = knn_positions(&pts, &[0.0; 3], 3).unwrap();
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn fps_picks_distinct_spread_points() {
        let pts = random_points(200, 3);
        let idx = farthest_point_sampling(&pts, 16);
        assert_eq!(idx.len(), 16);
        let mut s = idx.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 16);
        // Covering radius shrinks (weakly) as more centres are added.
        let cover = |k: usize| {
            pts.iter()
                .map(|p| idx[..k].iter().map(|&c| dist(p, &pts[c])).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        assert!(cover(16) <= cover(4));
        assert_eq!(farthest_point_sampling(&pts[..5], 10).len(), 5);
    }
}
