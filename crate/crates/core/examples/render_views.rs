//! Renders a synthetic chair from posed orthographic cameras and prints the
//! views as ASCII.
//!
//! ```bash
//! cargo run --release --example render_views -- [views]
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shapetext::geometry::render_views;
use shapetext::pipeline::ShapeSpec;

fn main() -> shapetext::Result<()> {
    let views = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = ShapeSpec::random(&mut rng);
    let cloud = spec.sample(2048, &mut rng)?;
    println!("{}", spec.caption(&mut rng));

    let set = render_views(&cloud, views, 24, 32)?;
    let ramp = [' ', '.', ':', '+', '#', '@'];
    for v in 0..set.num_views() {
        let pose = set.pose(v);
        println!("view {v}: azimuth {:.0} deg", pose.azimuth_deg());
        for row in set.image(v).chunks(set.width()) {
            let line: String = row
                .iter()
                .map(|&x| ramp[((x * (ramp.len() - 1) as f64).round() as usize).min(ramp.len() - 1)])
                .collect();
            println!("  |{line}|");
        }
    }
    Ok(())
}
