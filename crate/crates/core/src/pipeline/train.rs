//! Minibatch training with Adam.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::dataset::{Dataset, Split};
use super::run::{evaluate_prepared, Prepared};
use crate::diffcore::{AdamState, Tape, Tensor, Var};
use crate::encoders::{encode_fused_on_tape, encode_text_on_tape, Model, Vocabulary};
use crate::error::{Error, Result};
use crate::matching::{pooled_cosine_on_tape, score_matrix_on_tape, MatchConfig, PlanTable};
use crate::mining::{mining_loss_on_tape, triplet_loss_on_tape, Direction, MiningConfig, Triplet};

/// Transport plans and triplets to reuse instead of recomputing them.
#[derive(Clone, Debug)]
pub struct FrozenSelection {
    pub plans: PlanTable,
    pub emd_triplets: Vec<Triplet>,
    pub cos_triplets: Vec<Triplet>,
}

#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub total: Var,
    pub emd: Var,
    pub cos: Var,
    pub selection: FrozenSelection,
}

/// `alpha * L_emd + (1 - alpha) * L_cos` over one batch of paired shapes and captions.
pub fn batch_loss_on_tape(
    tape: &mut Tape,
    fused: &[Var],
    texts: &[Var],
    matching: &MatchConfig,
    mining: &MiningConfig,
    frozen: Option<&FrozenSelection>,
) -> Result<BatchLoss> {
    let (scores, plans) = score_matrix_on_tape(tape, fused, texts, matching, frozen.map(|f| &f.plans))?;
    let cos_scores = pooled_cosine_on_tape(tape, fused, texts)?;
    let ((emd, emd_triplets), (cos, cos_triplets)) = match frozen {
        Some(f) => (
            (
                triplet_loss_on_tape(tape, scores, &f.emd_triplets, mining.margin)?,
                f.emd_triplets.clone(),
            ),
            (
                triplet_loss_on_tape(tape, cos_scores, &f.cos_triplets, mining.margin)?,
                f.cos_triplets.clone(),
            ),
        ),
        None => (
            mining_loss_on_tape(tape, scores, mining)?,
            mining_loss_on_tape(tape, cos_scores, mining)?,
        ),
    };
    let a = tape.scale(emd, matching.alpha);
    let b = tape.scale(cos, 1.0 - matching.alpha);
    let total = tape.add(a, b)?;
    Ok(BatchLoss {
        total,
        emd,
        cos,
        selection: FrozenSelection {
            plans,
            emd_triplets,
            cos_triplets,
        },
    })
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Write every mined triplet as CSV.
    pub dump_triplets: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub vocab: Vocabulary,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// `(epoch, test T2S RR@1)` at the logging interval.
    pub val_rr1: Vec<(usize, f64)>,
}

/// Training-split vocabulary.
pub fn build_vocabulary(data: &Dataset) -> Vocabulary {
    Vocabulary::build(
        data.captions
            .iter()
            .filter(|c| data.splits[c.shape] == Split::Train)
            .map(|c| c.text.as_str()),
    )
}

fn batches(pairs: Vec<(usize, usize)>, size: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out: Vec<Vec<(usize, usize)>> = pairs.chunks(size).map(<[_]>::to_vec).collect();
    if out.len() > 1 && out.last().map_or(false, |b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

fn check_finite(grads: &std::collections::BTreeMap<String, Tensor>) -> Option<&str> {
    grads
        .iter()
        .find(|(_, g)| g.data().iter().any(|v| !v.is_finite()))
        .map(|(n, _)| n.as_str())
}

pub fn train(cfg: &ExperimentConfig, data: &Dataset, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.manifest.points != cfg.points {
        return Err(Error::Data(format!(
            "dataset has {} points per shape, config expects {}",
            data.manifest.points, cfg.points
        )));
    }
    let train_shapes = data.shapes_in(Split::Train);
    if train_shapes.len() < 2 {
        return Err(Error::Data(format!("need at least 2 training shapes, found {}", train_shapes.len())));
    }
    let vocab = build_vocabulary(data);
    let mut model = Model::init(&cfg.model_dims(vocab.len()), cfg.seed)?;
    let prepared = Prepared::new(data, &model, &vocab)?;
    let matching = cfg.match_config();
    let mining = cfg.mining_config();
    let mut adam = AdamState::new(cfg.learning_rate);
    // Separate stream from parameter initialisation.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut dump = opts.dump_triplets.as_ref().map(|_| {
        String::from("epoch,batch,matrix,direction,anchor,positive,negative,loss\n")
    });
    let caption_id = |j: usize| format!("caption_{j}");

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut val_rr1 = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut order = train_shapes.clone();
        order.shuffle(&mut rng);
        let pairs: Vec<(usize, usize)> = order
            .iter()
            .map(|&s| (s, *data.captions_of(s).choose(&mut rng).expect("every shape has a caption")))
            .collect();
        let mut total = 0.0;
        let batch_list = batches(pairs, cfg.batch_size);
        for (b, batch) in batch_list.iter().enumerate() {
            let mut tape = Tape::new();
            let mut fused = Vec::with_capacity(batch.len());
            let mut texts = Vec::with_capacity(batch.len());
            for &(s, c) in batch {
                fused.push(encode_fused_on_tape(&mut tape, &model, &prepared.inputs[s])?);
                texts.push(encode_text_on_tape(&mut tape, &model.params, &prepared.tokens[c])?);
            }
            let loss = batch_loss_on_tape(&mut tape, &fused, &texts, &matching, &mining, None)?;
            let value = tape.value(loss.total).item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss {value} at epoch {epoch}, batch {b}")));
            }
            let grads = tape.gradients(loss.total)?.params(&tape);
            if let Some(name) = check_finite(&grads) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for `{name}` at epoch {epoch}, batch {b}"
                )));
            }
            adam.step(&mut model.params, &grads.into_iter().collect())?;
            total += value;

            if let Some(out) = dump.as_mut() {
                for (matrix, trips) in [("emd", &loss.selection.emd_triplets), ("cos", &loss.selection.cos_triplets)] {
                    for t in trips {
                        let (dir, anchor, pos, neg) = match t.direction {
                            Direction::ShapeToText => (
                                "s2t",
                                data.shape_ids[batch[t.anchor].0].clone(),
                                caption_id(batch[t.positive].1),
                                caption_id(batch[t.negative].1),
                            ),
                            Direction::TextToShape => (
                                "t2s",
                                caption_id(batch[t.anchor].1),
                                data.shape_ids[batch[t.positive].0].clone(),
                                data.shape_ids[batch[t.negative].0].clone(),
                            ),
                        };
                        let _ = writeln!(out, "{epoch},{b},{matrix},{dir},{anchor},{pos},{neg},{:.9}", t.loss);
                    }
                }
            }
        }
        let mean = total / batch_list.len() as f64;
        epoch_losses.push(mean);
        log::info!("epoch {epoch}: loss {mean:.6}");
        if cfg.val_every > 0 && epoch % cfg.val_every == 0 && !data.shapes_in(Split::Test).is_empty() {
            let report = evaluate_prepared(&model, cfg, data, &prepared, Split::Test)?;
            let rr1 = report.get("T2S").map_or(0.0, |m| m.rr1);
            log::info!("epoch {epoch}: test T2S RR@1 {rr1:.2}");
            val_rr1.push((epoch, rr1));
        }
    }

    if let (Some(path), Some(body)) = (&opts.dump_triplets, dump) {
        std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(TrainOutcome {
        model,
        vocab,
        epoch_losses,
        val_rr1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_tail_is_merged() {
        let pairs: Vec<(usize, usize)> = (0..9).map(|i| (i, i)).collect();
        let b = batches(pairs.clone(), 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        assert_eq!(batches(pairs, 3).len(), 3);
    }
}
