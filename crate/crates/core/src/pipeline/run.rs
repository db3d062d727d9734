//! Checkpoint persistence, evaluation and retrieval.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::dataset::{Dataset, Split};
use crate::diffcore::{Checkpoint, Tensor};
use crate::encoders::{encode_fused, encode_text, Model, ShapeInputs, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluation::{rank, MetricsReport};
use crate::matching::{cosine_matrix, match_from_similarity, MatchConfig};

/// Parameter-independent encoder inputs for every shape and caption of a dataset.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub inputs: Vec<ShapeInputs>,
    pub tokens: Vec<TokenSequence>,
}

impl Prepared {
    pub fn new(data: &Dataset, model: &Model, vocab: &Vocabulary) -> Result<Self> {
        let mut inputs = Vec::with_capacity(data.num_shapes());
        for s in 0..data.num_shapes() {
            inputs.push(ShapeInputs::prepare(&data.load_cloud(s)?, model)?);
        }
        let tokens = data
            .captions
            .iter()
            .enumerate()
            .map(|(j, c)| {
                vocab
                    .encode(&c.text, model.dims.max_len)
                    .map(|(t, _)| t)
                    .map_err(|e| Error::Data(format!("caption {j}: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(Prepared { inputs, tokens })
    }
}

/// Matching scores of every listed shape against every caption embedding.
pub fn score_gallery(fused: &[Tensor], texts: &[Tensor], cfg: &MatchConfig) -> Result<Tensor> {
    let mut out = Vec::with_capacity(fused.len() * texts.len());
    for f in fused {
        for t in texts {
            let sim = cosine_matrix(f, t)?;
            out.push(match_from_similarity(&sim, cfg)?.score);
        }
    }
    Tensor::matrix(fused.len(), texts.len(), out)
}

pub(crate) fn evaluate_prepared(
    model: &Model,
    cfg: &ExperimentConfig,
    data: &Dataset,
    prepared: &Prepared,
    split: Split,
) -> Result<MetricsReport> {
    let shapes = data.shapes_in(split);
    if shapes.is_empty() {
        return Err(Error::Data(format!("split `{}` is empty", split.as_str())));
    }
    let mut captions = Vec::new();
    let mut owner = Vec::new();
    for (g, &s) in shapes.iter().enumerate() {
        for c in data.captions_of(s) {
            captions.push(c);
            owner.push(g);
        }
    }
    let fused = shapes
        .iter()
        .map(|&s| encode_fused(&prepared.inputs[s], model))
        .collect::<Result<Vec<_>>>()?;
    let texts = captions
        .iter()
        .map(|&c| encode_text(&prepared.tokens[c], model).map(|e| e.word_vectors))
        .collect::<Result<Vec<_>>>()?;
    let scores = score_gallery(&fused, &texts, &cfg.match_config())?;
    MetricsReport::from_scores(&scores, &owner)
}

/// A trained model with everything needed to use it.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub config: ExperimentConfig,
    pub model: Model,
    pub vocab: Vocabulary,
    pub data_dir: Option<PathBuf>,
}

impl LoadedModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut metadata = BTreeMap::new();
        metadata.insert("config".to_string(), self.config.to_toml());
        metadata.insert("vocab".to_string(), self.vocab.to_text());
        if let Some(d) = &self.data_dir {
            metadata.insert("data_dir".to_string(), d.display().to_string());
        }
        Checkpoint {
            config_hash: self.config.hash(),
            seed: self.config.seed,
            metadata,
            params: self.model.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let text = ckpt
            .metadata
            .get("config")
            .ok_or_else(|| Error::Checkpoint("no embedded config".into()))?;
        let config = ExperimentConfig::from_toml(text)?;
        if config.hash() != ckpt.config_hash {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: header {:016x}, embedded config {:016x}",
                ckpt.config_hash,
                config.hash()
            )));
        }
        let vocab = Vocabulary::parse(
            ckpt.metadata
                .get("vocab")
                .ok_or_else(|| Error::Checkpoint("no embedded vocabulary".into()))?,
        )?;
        let model = Model::from_params(&config.model_dims(vocab.len()), ckpt.params)?;
        Ok(LoadedModel {
            config,
            model,
            vocab,
            data_dir: ckpt.metadata.get("data_dir").map(PathBuf::from),
        })
    }

    /// Writes the checkpoint and the vocabulary next to it as `<path>.vocab.txt`.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)?;
        self.vocab.save(&vocab_path(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.manifest.points != self.config.points {
            return Err(Error::Data(format!(
                "dataset has {} points per shape, checkpoint expects {}",
                data.manifest.points, self.config.points
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, data: &Dataset, split: Split) -> Result<MetricsReport> {
        self.check_dataset(data)?;
        let prepared = Prepared::new(data, &self.model, &self.vocab)?;
        evaluate_prepared(&self.model, &self.config, data, &prepared, split)
    }

    /// Gallery shapes of `split` ranked for `text`, with the number of
    /// caption words outside the vocabulary.
    pub fn rank_shapes(&self, data: &Dataset, split: Split, text: &str) -> Result<(Vec<(String, f64)>, usize)> {
        self.check_dataset(data)?;
        if text.trim().is_empty() {
            return Err(Error::InvalidArgument("empty caption".into()));
        }
        let (tokens, unknown) = self.vocab.encode(text, self.model.dims.max_len)?;
        let words = encode_text(&tokens, &self.model)?.word_vectors;
        let shapes = data.shapes_in(split);
        if shapes.is_empty() {
            return Err(Error::Data(format!("split `{}` is empty", split.as_str())));
        }
        let fused = shapes
            .iter()
            .map(|&s| ShapeInputs::prepare(&data.load_cloud(s)?, &self.model).and_then(|i| encode_fused(&i, &self.model)))
            .collect::<Result<Vec<_>>>()?;
        let scores = score_gallery(&fused, std::slice::from_ref(&words), &self.config.match_config())?;
        let column: Vec<f64> = (0..shapes.len()).map(|i| scores.at(i, 0)).collect();
        let ranked = rank(&column)
            .into_iter()
            .map(|g| (data.shape_ids[shapes[g]].clone(), column[g]))
            .collect();
        Ok((ranked, unknown))
    }

    pub fn retrieve(&self, data: &Dataset, split: Split, text: &str, k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let (mut ranked, unknown) = self.rank_shapes(data, split, text)?;
        if unknown > 0 {
            log::warn!("{unknown} caption word(s) not in the vocabulary were mapped to {}", crate::encoders::UNK_TOKEN);
        }
        ranked.truncate(k);
        Ok(ranked)
    }

    /// Human-readable summary: config, seed and parameter shapes.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed: {}", self.config.seed);
        let _ = writeln!(s, "config hash: {:016x}", self.config.hash());
        let _ = writeln!(s, "vocabulary: {} tokens", self.vocab.len());
        if let Some(d) = &self.data_dir {
            let _ = writeln!(s, "data: {}", d.display());
        }
        let _ = writeln!(s, "\n[config]\n{}", self.config.to_toml());
        let _ = writeln!(s, "[parameters] {} tensors, {} values", self.model.params.len(), self.model.params.num_values());
        for (name, t) in self.model.params.iter() {
            let _ = writeln!(s, "{name:<28} {:?}", t.shape());
        }
        s
    }
}

pub fn vocab_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.as_os_str().to_owned();
    name.push(".vocab.txt");
    PathBuf::from(name)
}
