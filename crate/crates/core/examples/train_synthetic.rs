//! Generates a synthetic furniture set, trains with the `desk` preset and
//! reports held-out retrieval metrics.
//!
//! ```bash
//! cargo run --release --example train_synthetic -- [shapes] [epochs] [hardest]
//! ```

use std::time::Instant;

use shapetext::mining::MiningStrategy;
use shapetext::pipeline::{gen_synthetic, train, ExperimentConfig, Split, TrainOptions};

fn main() -> shapetext::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let shapes = args.first().copied().unwrap_or(200);
    let mut cfg = ExperimentConfig::desk();
    cfg.epochs = args.get(1).copied().unwrap_or(cfg.epochs);
    if std::env::args().any(|a| a == "hardest") {
        cfg.mining = MiningStrategy::Hardest;
    }

    let dir = std::env::temp_dir().join(format!("shapetext-synth-{shapes}"));
    let data = gen_synthetic(&dir, 0, shapes, 5, cfg.points)?;
    println!("dataset: {} shapes, {} captions in {}", data.num_shapes(), data.captions.len(), dir.display());

    let start = Instant::now();
    let outcome = train(&cfg, &data, &TrainOptions::default())?;
    for (e, l) in outcome.epoch_losses.iter().enumerate() {
        println!("epoch {:>3}  loss {l:.4}", e + 1);
    }
    for (e, rr) in &outcome.val_rr1 {
        println!("epoch {e:>3}  test T2S RR@1 {rr:.2}");
    }
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());

    let loaded = shapetext::pipeline::LoadedModel {
        config: cfg,
        model: outcome.model,
        vocab: outcome.vocab,
        data_dir: Some(dir.clone()),
    };
    let report = loaded.evaluate(&data, Split::Test)?;
    print!("{}", report.to_table());
    Ok(())
}
