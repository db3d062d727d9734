//! Recall and NDCG in both retrieval directions from a score matrix.
//!
//! ```bash
//! cargo run --release --example ranking_metrics
//! ```

use shapetext::diffcore::Tensor;
use shapetext::evaluation::{ndcg_at_k, rank, recall_at_k, MetricsReport, RankingResult, RelevanceMap};

fn main() -> shapetext::Result<()> {
    // Three shapes by five captions; caption j describes shape owner[j].
    let owner = [0, 0, 1, 2, 2];
    let scores = Tensor::from_rows(&[
        vec![0.9, 0.2, 0.1, 0.3, 0.0],
        vec![0.4, 0.8, 0.7, 0.1, 0.2],
        vec![0.1, 0.3, 0.2, 0.6, 0.9],
    ])?;

    let t2s = RankingResult::from_scores(&scores.transpose());
    let rel = RelevanceMap::single(&owner)?;
    for q in 0..owner.len() {
        println!("caption {q}: ranking {:?}", t2s.ranking(q));
    }
    println!(
        "T2S RR@1 {:.1}  NDCG@2 {:.3}",
        recall_at_k(&t2s, &rel, 1)?,
        ndcg_at_k(&t2s, &rel, 2)?
    );
    println!("ties break toward the lower index: {:?}", rank(&[0.5, 0.7, 0.5]));

    print!("{}", MetricsReport::from_scores(&scores, &owner)?.to_table());
    Ok(())
}
