//! Interpolates per-point features from a sparse set of centers back onto a
//! dense cloud, then pools them by segment.
//!
//! ```bash
//! cargo run --release --example feature_propagation
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shapetext::diffcore::Tensor;
use shapetext::geometry::{
    farthest_point_sampling, group_pool, propagate_features, PointCloud, DEFAULT_K, DEFAULT_MIN_FRACTION,
    DEFAULT_POWER,
};
use shapetext::pipeline::ShapeSpec;

fn main() -> shapetext::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = ShapeSpec::random(&mut rng);
    let cloud = spec.sample(1024, &mut rng)?;
    println!("{}: {} points", spec.caption(&mut rng), cloud.len());

    // Height above the floor as a one-channel feature on 64 centers.
    let centers: Vec<_> = farthest_point_sampling(cloud.positions(), 64)
        .into_iter()
        .map(|i| cloud.positions()[i])
        .collect();
    let heights = Tensor::matrix(centers.len(), 1, centers.iter().map(|p| p[1]).collect())?;
    let sparse = PointCloud::new(centers)?.with_features(heights)?;

    let dense = propagate_features(&sparse, cloud.positions(), DEFAULT_K, DEFAULT_POWER)?;
    let err = cloud
        .positions()
        .iter()
        .enumerate()
        .map(|(i, p)| (dense.at(i, 0) - p[1]).abs())
        .fold(0.0, f64::max);
    println!("max height interpolation error: {err:.4}");

    let labels = cloud.segment_labels().expect("synthetic clouds are labelled");
    let (pooled, ids) = group_pool(&dense, labels, DEFAULT_MIN_FRACTION)?;
    for (row, id) in ids.iter().enumerate() {
        println!("segment {id}: mean height {:.3}", pooled.at(row, 0));
    }
    Ok(())
}
