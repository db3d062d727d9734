//! Encodes a shape from its point cloud and its rendered views, then fuses
//! the two into per-part features.
//!
//! ```bash
//! cargo run --release --example view_encoder
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shapetext::encoders::{encode_shape, encode_views, fuse, Model};
use shapetext::geometry::render_views;
use shapetext::pipeline::{ExperimentConfig, ShapeSpec};

fn main() -> shapetext::Result<()> {
    let cfg = ExperimentConfig::desk();
    let model = Model::init(&cfg.model_dims(16), cfg.seed)?;
    let d = &model.dims;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = ShapeSpec::random(&mut rng);
    let cloud = spec.sample(cfg.points, &mut rng)?;
    println!("{}", spec.caption(&mut rng));

    let parts = encode_shape(&cloud, &model)?;
    println!("parts: {:?} for segments {:?}", parts.part_features.shape(), parts.part_ids);

    let views = render_views(&cloud, d.views, d.height, d.width)?;
    let scene = encode_views(&views, &model)?;
    println!(
        "scene: {} views -> {} tokens of width {} ({} per view)",
        scene.views,
        scene.tokens.rows(),
        scene.tokens.cols(),
        d.tokens_per_view()
    );

    let fused = fuse(&parts, &scene, &model)?.fused_features;
    for (row, id) in parts.part_ids.iter().enumerate() {
        let norm = fused.row_slice(row).iter().map(|x| x * x).sum::<f64>().sqrt();
        println!("segment {id}: fused norm {norm:.4}");
    }
    Ok(())
}
