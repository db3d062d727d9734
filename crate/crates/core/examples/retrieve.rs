//! Trains briefly on a small synthetic set, saves a checkpoint, reloads it
//! and ranks the held-out shapes for a few free-text queries.
//!
//! ```bash
//! cargo run --release --example retrieve -- "a tall chair with a back"
//! ```

use shapetext::pipeline::{gen_synthetic, train_model, ExperimentConfig, LoadedModel, Split, TrainOptions};

fn main() -> shapetext::Result<()> {
    let root = std::env::temp_dir().join("shapetext-retrieve");
    let data_dir = root.join("data");
    let cfg = ExperimentConfig {
        epochs: 10,
        val_every: 0,
        ..ExperimentConfig::desk()
    };
    let data = gen_synthetic(&data_dir, 1, 60, 3, cfg.points)?;
    let (trained, _) = train_model(&cfg, &data_dir, &TrainOptions::default())?;
    let ckpt = root.join("model.ckpt");
    trained.save(&ckpt)?;

    let model = LoadedModel::load(&ckpt)?;
    let mut queries: Vec<String> = std::env::args().skip(1).collect();
    if queries.is_empty() {
        queries = vec!["a tall narrow shelf".into(), "a stool".into(), "a thick table with a pedestal".into()];
    }
    let truth = |id: &str| {
        let s = data.shape_ids.iter().position(|x| x == id).expect("gallery shape");
        data.captions[data.captions_of(s)[0]].text.clone()
    };
    for q in &queries {
        println!("{q}");
        for (rank, (id, score)) in model.retrieve(&data, Split::Test, q, 3)?.iter().enumerate() {
            println!("  {}. {id} ({score:.4}): {}", rank + 1, truth(id));
        }
    }
    Ok(())
}
