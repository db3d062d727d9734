//! Negative selection on a small score matrix, semi-hard against hardest.
//!
//! ```bash
//! cargo run --release --example semi_hard_mining
//! ```

use shapetext::diffcore::Tensor;
use shapetext::mining::{batch_mining_loss, Direction, MiningConfig, MiningStrategy, ScoreMatrix};

fn main() -> shapetext::Result<()> {
    // Rows are shapes, columns captions; the diagonal holds the true pairs.
    let scores = ScoreMatrix::new(Tensor::from_rows(&[
        vec![0.90, 0.80, 0.20, 0.95],
        vec![0.10, 0.60, 0.50, 0.30],
        vec![0.30, 0.20, 0.70, 0.65],
        vec![0.85, 0.40, 0.10, 0.50],
    ])?)?;
    for strategy in [MiningStrategy::SemiHard, MiningStrategy::Hardest] {
        let cfg = MiningConfig { margin: 0.2, strategy };
        let (loss, triplets) = batch_mining_loss(&scores, &cfg)?;
        println!("{strategy:?}: mean loss {loss:.4}");
        for t in triplets {
            let dir = match t.direction {
                Direction::ShapeToText => "shape",
                Direction::TextToShape => "caption",
            };
            println!("  {dir} {} -> negative {}  loss {:.3}", t.anchor, t.negative, t.loss);
        }
    }
    Ok(())
}
