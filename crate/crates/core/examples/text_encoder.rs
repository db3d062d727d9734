//! Tokenises captions against a small vocabulary and encodes them into
//! per-word vectors with an untrained model.
//!
//! ```bash
//! cargo run --release --example text_encoder
//! ```

use shapetext::encoders::{encode_text, tokenize, Model, ModelDims, Vocabulary};

fn main() -> shapetext::Result<()> {
    let corpus = ["A tall wooden table with four legs.", "a short stool", "a wide shelf with three boards"];
    let vocab = Vocabulary::build(corpus);
    println!("vocabulary of {}: {:?}", vocab.len(), (0..vocab.len()).filter_map(|i| vocab.token(i)).collect::<Vec<_>>());

    let dims = ModelDims {
        vocab_size: vocab.len(),
        ..ModelDims::toy()
    };
    let model = Model::init(&dims, 0)?;
    for caption in ["a tall table", "a glass table on four legs"] {
        let (tokens, unknown) = vocab.encode(caption, dims.max_len)?;
        let words = encode_text(&tokens, &model)?.word_vectors;
        println!("{:?} -> ids {:?} ({unknown} unknown)", tokenize(caption), tokens.ids());
        for (w, row) in (0..words.rows()).map(|r| words.row_slice(r)).enumerate() {
            let shown: Vec<String> = row.iter().take(4).map(|x| format!("{x:+.3}")).collect();
            println!("  word {w}: [{} ...]", shown.join(", "));
        }
    }
    Ok(())
}
