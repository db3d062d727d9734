//! Shape, caption and multi-view encoders plus the part/scene fusion layer.
//!
//! Every encoder has a `*_on_tape` form that records onto a [`Tape`] for
//! training, and a value form that runs on a throwaway tape.

mod fuse;
mod shape;
mod text;
mod views;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use fuse::fuse_on_tape;
pub use shape::{
    encode_shape_on_tape, ShapeGeometry, STAGE1_CENTERS, STAGE1_GROUP, STAGE2_CENTERS, STAGE2_GROUP,
};
pub use text::{
    encode_text_on_tape, gru_states_on_tape, tokenize, TokenSequence, Vocabulary, PAD_ID, PAD_TOKEN, UNK_ID,
    UNK_TOKEN,
};
pub use views::{conv_out, encode_views_on_tape, ray_encode, ViewInput, ViewLayout};

use crate::diffcore::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{render_views, MultiViewSet, PointCloud};

/// Architecture extents shared by all encoders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Joint embedding width D.
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub word_dim: usize,
    /// GRU state width.
    pub hidden_dim: usize,
    pub max_len: usize,
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub start_octave: i32,
    pub num_octaves: usize,
    /// Channels after the first convolution; the second doubles them.
    pub conv_channels: usize,
    pub patch: usize,
    pub depth: usize,
    pub heads: usize,
}

impl ModelDims {
    /// Tiny extents for tests and gradient checks.
    pub fn toy() -> Self {
        ModelDims {
            embed_dim: 8,
            vocab_size: 12,
            word_dim: 6,
            hidden_dim: 5,
            max_len: 8,
            views: 2,
            height: 8,
            width: 8,
            start_octave: 0,
            num_octaves: 1,
            conv_channels: 2,
            patch: 2,
            depth: 1,
            heads: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("embed_dim", self.embed_dim),
            ("word_dim", self.word_dim),
            ("hidden_dim", self.hidden_dim),
            ("max_len", self.max_len),
            ("views", self.views),
            ("height", self.height),
            ("width", self.width),
            ("conv_channels", self.conv_channels),
            ("patch", self.patch),
            ("heads", self.heads),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocabulary needs at least the two reserved tokens".into()));
        }
        let (h2, w2) = self.conv_extent();
        if h2 % self.patch != 0 || w2 % self.patch != 0 {
            return Err(Error::Config(format!(
                "patch {} does not divide the {h2}x{w2} feature map",
                self.patch
            )));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn conv_extent(&self) -> (usize, usize) {
        (conv_out(conv_out(self.height)), conv_out(conv_out(self.width)))
    }

    pub fn view_in_channels(&self) -> usize {
        1 + 6 * self.num_octaves
    }

    pub fn tokens_per_view(&self) -> usize {
        let (h2, w2) = self.conv_extent();
        (h2 / self.patch) * (w2 / self.patch)
    }
}

pub(crate) fn init_linear(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    fan_in: usize,
    out: usize,
) -> Result<()> {
    store.init_uniform(&format!("{name}.w"), &[fan_in, out], fan_in, rng)?;
    store.init_const(&format!("{name}.b"), &[1, out], 0.0)
}

/// Parameters together with the extents they were built for.
#[derive(Clone, Debug)]
pub struct Model {
    pub dims: ModelDims,
    pub params: ParamStore,
    layout: ViewLayout,
}

impl Model {
    pub fn init(dims: &ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        shape::init_params(&mut params, dims, &mut rng)?;
        text::init_params(&mut params, dims, &mut rng)?;
        views::init_params(&mut params, dims, &mut rng)?;
        fuse::init_params(&mut params, dims, &mut rng)?;
        Self::from_params(dims, params)
    }

    /// Wraps loaded parameters, checking names and shapes against a fresh init.
    pub fn from_params(dims: &ModelDims, params: ParamStore) -> Result<Self> {
        dims.validate()?;
        let mut reference = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        shape::init_params(&mut reference, dims, &mut rng)?;
        text::init_params(&mut reference, dims, &mut rng)?;
        views::init_params(&mut reference, dims, &mut rng)?;
        fuse::init_params(&mut reference, dims, &mut rng)?;
        for (name, t) in reference.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{name}` has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter `{name}`"))),
            }
        }
        if params.len() != reference.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters, expected {}",
                params.len(),
                reference.len()
            )));
        }
        Ok(Model {
            dims: dims.clone(),
            params,
            layout: ViewLayout::new(dims)?,
        })
    }

    pub fn layout(&self) -> &ViewLayout {
        &self.layout
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeEmbedding {
    pub part_features: Tensor,
    pub part_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbedding {
    pub word_vectors: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneRepresentation {
    pub tokens: Tensor,
    pub views: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedShapeEmbedding {
    pub fused_features: Tensor,
}

pub fn encode_shape(cloud: &PointCloud, model: &Model) -> Result<ShapeEmbedding> {
    let geom = ShapeGeometry::new(cloud)?;
    let mut tape = Tape::new();
    let v = encode_shape_on_tape(&mut tape, &model.params, &geom)?;
    Ok(ShapeEmbedding {
        part_features: tape.value(v).clone(),
        part_ids: geom.part_ids,
    })
}

pub fn encode_text(tokens: &TokenSequence, model: &Model) -> Result<TextEmbedding> {
    let mut tape = Tape::new();
    let v = encode_text_on_tape(&mut tape, &model.params, tokens)?;
    Ok(TextEmbedding {
        word_vectors: tape.value(v).clone(),
    })
}

pub fn encode_views(views: &MultiViewSet, model: &Model) -> Result<SceneRepresentation> {
    let input = ViewInput::new(views, &model.layout, &model.dims)?;
    let mut tape = Tape::new();
    let v = encode_views_on_tape(&mut tape, &model.params, &model.dims, &model.layout, &input)?;
    Ok(SceneRepresentation {
        tokens: tape.value(v).clone(),
        views: views.num_views(),
    })
}

pub fn fuse(shape: &ShapeEmbedding, scene: &SceneRepresentation, model: &Model) -> Result<FusedShapeEmbedding> {
    let mut tape = Tape::new();
    let p = tape.constant(shape.part_features.clone());
    let s = tape.constant(scene.tokens.clone());
    let v = fuse_on_tape(&mut tape, &model.params, p, s)?;
    Ok(FusedShapeEmbedding {
        fused_features: tape.value(v).clone(),
    })
}

/// Everything about one shape that does not depend on the parameters.
#[derive(Clone, Debug)]
pub struct ShapeInputs {
    pub geometry: ShapeGeometry,
    pub views: ViewInput,
}

impl ShapeInputs {
    /// Renders the cloud and precomputes the encoder constants.
    pub fn prepare(cloud: &PointCloud, model: &Model) -> Result<Self> {
        let d = &model.dims;
        let mv = render_views(cloud, d.views, d.height, d.width)?;
        Ok(ShapeInputs {
            geometry: ShapeGeometry::new(cloud)?,
            views: ViewInput::new(&mv, &model.layout, d)?,
        })
    }
}

/// Fused part features of one shape (S x D).
pub fn encode_fused_on_tape(tape: &mut Tape, model: &Model, inputs: &ShapeInputs) -> Result<Var> {
    let parts = encode_shape_on_tape(tape, &model.params, &inputs.geometry)?;
    let scene = encode_views_on_tape(tape, &model.params, &model.dims, &model.layout, &inputs.views)?;
    fuse_on_tape(tape, &model.params, parts, scene)
}

pub fn encode_fused(inputs: &ShapeInputs, model: &Model) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = encode_fused_on_tape(&mut tape, model, inputs)?;
    Ok(tape.value(v).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_and_tape_paths_agree() {
        let dims = ModelDims::toy();
        let model = Model::init(&dims, 11).unwrap();
        let pts: Vec<[f64; 3]> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.21;
                [t.cos(), t.sin() * 0.4, (t * 2.0).sin()]
            })
            .collect();
        let labels = (0..50).map(|i| i % 3).collect();
        let cloud = PointCloud::new(pts).unwrap().with_labels(labels).unwrap();
        let inputs = ShapeInputs::prepare(&cloud, &model).unwrap();
        let direct = encode_fused(&inputs, &model).unwrap();
        let mv = render_views(&cloud, dims.views, dims.height, dims.width).unwrap();
        let staged = fuse(
            &encode_shape(&cloud, &model).unwrap(),
            &encode_views(&mv, &model).unwrap(),
            &model,
        )
        .unwrap();
        assert_eq!(direct, staged.fused_features);
        assert_eq!(direct.rows(), 3);
    }

    #[test]
    fn init_is_deterministic_and_checked() {
        let dims = ModelDims::toy();
        let a = Model::init(&dims, 5).unwrap();
        assert_eq!(a.params, Model::init(&dims, 5).unwrap().params);
        assert_ne!(a.params, Model::init(&dims, 6).unwrap().params);
        let other = ModelDims { embed_dim: 4, ..dims.clone() };
        assert!(Model::from_params(&other, a.params.clone()).is_err());
    }

    #[test]
    fn heads_must_divide_width() {
        let dims = ModelDims { heads: 3, ..ModelDims::toy() };
        assert!(matches!(dims.validate(), Err(Error::Config(_))));
    }
}
