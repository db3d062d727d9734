//! Negative selection and the margin ranking loss.
//!
//! Scores are similarities: larger means a better match. Entry `(i, j)` of a
//! batch score matrix compares shape `i` with caption `j`, and the diagonal
//! holds the true pairs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiningStrategy {
    /// Hardest negative strictly inside `(s_pos - margin, s_pos)`, with fallbacks.
    SemiHard,
    /// Highest-scoring negative, regardless of the positive.
    Hardest,
}

impl std::str::FromStr for MiningStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semi-hard" => Ok(MiningStrategy::SemiHard),
            "hardest" => Ok(MiningStrategy::Hardest),
            other => Err(Error::Config(format!("unknown mining strategy `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub margin: f64,
    pub strategy: MiningStrategy,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            margin: 0.2,
            strategy: MiningStrategy::SemiHard,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        Ok(())
    }
}

/// Which side of the score matrix the anchor comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Anchor is a shape (row); negatives are captions.
    ShapeToText,
    /// Anchor is a caption (column); negatives are shapes.
    TextToShape,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub direction: Direction,
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub loss: f64,
}

/// Square batch score matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    scores: Tensor,
}

impl ScoreMatrix {
    pub fn new(scores: Tensor) -> Result<Self> {
        if !scores.is_matrix() || scores.rows() != scores.cols() {
            return Err(Error::shape("score_matrix", format!("{:?} is not square", scores.shape())));
        }
        Ok(ScoreMatrix { scores })
    }

    pub fn size(&self) -> usize {
        self.scores.rows()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.scores
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.scores.row_slice(i).to_vec()
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.size()).map(|i| self.scores.at(i, j)).collect()
    }
}

/// `max(0, margin + score_neg - score_pos)`.
pub fn triplet_loss(score_pos: f64, score_neg: f64, margin: f64) -> f64 {
    (margin + score_neg - score_pos).max(0.0)
}

fn argmax_where(scores: &[f64], keep: impl Fn(usize, f64) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &s) in scores.iter().enumerate() {
        if keep(j, s) && best.map_or(true, |b| s > scores[b]) {
            best = Some(j);
        }
    }
    best
}

/// Picks the negative for one anchor.
///
/// The semi-hard band is `{ j != pos : s_pos - margin < s_j < s_pos }`; the
/// highest-scoring member wins. If the band is empty the highest negative
/// below `s_pos` is used, and failing that the lowest-scoring negative. Ties go
/// to the lower index.
pub fn select_semi_hard(scores: &[f64], pos: usize, margin: f64) -> Result<usize> {
    if scores.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two candidates, got {}",
            scores.len()
        )));
    }
    if pos >= scores.len() {
        return Err(Error::InvalidArgument(format!("positive index {pos} out of range")));
    }
    let sp = scores[pos];
    if let Some(j) = argmax_where(scores, |j, s| j != pos && s > sp - margin && s < sp) {
        return Ok(j);
    }
    if let Some(j) = argmax_where(scores, |j, s| j != pos && s < sp) {
        return Ok(j);
    }
    let mut worst: Option<usize> = None;
    for (j, &s) in scores.iter().enumerate() {
        if j != pos && worst.map_or(true, |w| s < scores[w]) {
            worst = Some(j);
        }
    }
    Ok(worst.expect("at least one negative"))
}

/// Highest-scoring negative.
pub fn select_hardest(scores: &[f64], pos: usize) -> Result<usize> {
    if scores.len() < 2 || pos >= scores.len() {
        return Err(Error::InvalidArgument("need a positive and at least one negative".into()));
    }
    Ok(argmax_where(scores, |j, _| j != pos).expect("at least one negative"))
}

pub fn select_negative(scores: &[f64], pos: usize, cfg: &MiningConfig) -> Result<usize> {
    match cfg.strategy {
        MiningStrategy::SemiHard => select_semi_hard(scores, pos, cfg.margin),
        MiningStrategy::Hardest => select_hardest(scores, pos),
    }
}

/// Mines one negative per shape anchor (over its row) and per caption anchor
/// (over its column). Returns the mean of the `2B` triplet losses and the
/// triplets, shape anchors first.
pub fn batch_mining_loss(scores: &ScoreMatrix, cfg: &MiningConfig) -> Result<(f64, Vec<Triplet>)> {
    let b = scores.size();
    let mut triplets = Vec::with_capacity(2 * b);
    for i in 0..b {
        let row = scores.row(i);
        let neg = select_negative(&row, i, cfg)?;
        triplets.push(Triplet {
            direction: Direction::ShapeToText,
            anchor: i,
            positive: i,
            negative: neg,
            loss: triplet_loss(row[i], row[neg], cfg.margin),
        });
    }
    for j in 0..b {
        let col = scores.col(j);
        let neg = select_negative(&col, j, cfg)?;
        triplets.push(Triplet {
            direction: Direction::TextToShape,
            anchor: j,
            positive: j,
            negative: neg,
            loss: triplet_loss(col[j], col[neg], cfg.margin),
        });
    }
    let total = triplets.iter().fold(0.0, |s, t| s + t.loss);
    Ok((total / triplets.len() as f64, triplets))
}

/// Records the mean triplet loss on `tape` for already-selected triplets.
pub fn triplet_loss_on_tape(tape: &mut Tape, scores: Var, triplets: &[Triplet], margin: f64) -> Result<Var> {
    let b = tape.value(scores).rows();
    if triplets.is_empty() || tape.value(scores).cols() != b {
        return Err(Error::shape("triplet_loss", "square scores and at least one triplet required"));
    }
    let flat = |t: &Triplet, other: usize| match t.direction {
        Direction::ShapeToText => t.anchor * b + other,
        Direction::TextToShape => other * b + t.anchor,
    };
    let pos: Vec<Option<usize>> = triplets.iter().map(|t| Some(flat(t, t.positive))).collect();
    let neg: Vec<Option<usize>> = triplets.iter().map(|t| Some(flat(t, t.negative))).collect();
    let n = triplets.len();
    let sp = tape.gather(scores, Arc::new(pos), vec![1, n])?;
    let sn = tape.gather(scores, Arc::new(neg), vec![1, n])?;
    let diff = tape.sub(sn, sp)?;
    let shifted = tape.affine(diff, 1.0, margin);
    let hinge = tape.relu(shifted);
    Ok(tape.mean(hinge))
}

/// Selects triplets from the current score values and records their loss.
pub fn mining_loss_on_tape(tape: &mut Tape, scores: Var, cfg: &MiningConfig) -> Result<(Var, Vec<Triplet>)> {
    let sm = ScoreMatrix::new(tape.value(scores).clone())?;
    let (_, triplets) = batch_mining_loss(&sm, cfg)?;
    let loss = triplet_loss_on_tape(tape, scores, &triplets, cfg.margin)?;
    Ok((loss, triplets))
}
