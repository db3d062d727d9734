//! Checks tape gradients of the full batch loss against central finite
//! differences on a toy-sized model.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapetext::diffcore::{gradcheck, ParamStore, Tape};
use shapetext::encoders::{encode_fused_on_tape, encode_text_on_tape, Model, ModelDims, ShapeInputs, TokenSequence};
use shapetext::geometry::PointCloud;
use shapetext::matching::MatchConfig;
use shapetext::mining::MiningConfig;
use shapetext::pipeline::{batch_loss_on_tape, FrozenSelection};

fn main() -> shapetext::Result<()> {
    let dims = ModelDims::toy();
    let model = Model::init(&dims, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut inputs = Vec::new();
    let mut tokens = Vec::new();
    for _ in 0..3 {
        let pts = (0..50).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        let cloud = PointCloud::new(pts.collect())?;
        let labels = cloud.positions().iter().map(|p| usize::from(p[1] > 0.0)).collect();
        inputs.push(ShapeInputs::prepare(&cloud.with_labels(labels)?, &model)?);
        let ids = (0..4).map(|_| rng.gen_range(1..dims.vocab_size)).collect();
        tokens.push(TokenSequence::new(ids, dims.vocab_size, dims.max_len)?);
    }
    let (matching, mining) = (MatchConfig::default(), MiningConfig::default());

    let loss = |tape: &mut Tape, params: &ParamStore, frozen: Option<&FrozenSelection>| {
        let m = Model::from_params(&dims, params.clone())?;
        let mut fused = Vec::new();
        let mut texts = Vec::new();
        for (i, t) in inputs.iter().zip(&tokens) {
            fused.push(encode_fused_on_tape(tape, &m, i)?);
            texts.push(encode_text_on_tape(tape, params, t)?);
        }
        batch_loss_on_tape(tape, &fused, &texts, &matching, &mining, frozen)
    };

    let mut tape = Tape::new();
    let out = loss(&mut tape, &model.params, None)?;
    println!("loss {:.6}", tape.value(out.total).item());
    let grads = tape.gradients(out.total)?.params(&tape);
    let report = gradcheck::check(&model.params, &grads, 1, |p| {
        let mut t = Tape::new();
        let v = loss(&mut t, p, Some(&out.selection))?.total;
        Ok(t.value(v).item())
    })?;
    println!(
        "{} entries compared over {} tensors, max relative error {:.2e} at {:?}",
        report.compared,
        model.params.len(),
        report.max_rel_err,
        report.worst
    );
    Ok(())
}
