//! Entropic transport between three parts and two words, at a few
//! regularisation strengths.
//!
//! ```bash
//! cargo run --release --example sinkhorn_transport
//! ```

use shapetext::diffcore::Tensor;
use shapetext::matching::{matching_score, sinkhorn_plan, uniform, CostMatrix, MatchConfig};

fn main() -> shapetext::Result<()> {
    let parts = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.9, 0.1, 0.0], vec![0.0, 0.0, 1.0]])?;
    let words = Tensor::from_rows(&[vec![1.0, 0.05, 0.0], vec![0.0, 0.1, 1.0]])?;
    let sim = shapetext::matching::cosine_matrix(&parts, &words)?;
    let cost = CostMatrix::from_similarity(&sim)?;

    for eps in [0.5, 0.05, 0.01] {
        let cfg = MatchConfig {
            epsilon: eps,
            max_iters: 2000,
            ..MatchConfig::default()
        };
        let plan = sinkhorn_plan(&cost, &uniform(3), &uniform(2), &cfg)?;
        println!(
            "epsilon {eps}: {} iterations, violation {:.1e}, cost {:.4}",
            plan.iterations,
            plan.violation,
            plan.inner(cost.values())
        );
        for i in 0..3 {
            println!("  {:.4} {:.4}", plan.plan.at(i, 0), plan.plan.at(i, 1));
        }
    }

    let m = matching_score(&parts, &words, &MatchConfig::default())?;
    println!("emd {:.4}  sim term {:.4}  score {:.4}", m.emd, m.sim_term, m.score);
    Ok(())
}
