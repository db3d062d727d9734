//! Multi-view scene encoder: per-pixel intensity and ray features, two
//! stride-2 convolutions, patch tokens with positional and camera embeddings,
//! then a pre-norm transformer.

use std::sync::Arc;

use super::{init_linear, ModelDims};
use crate::diffcore::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::MultiViewSet;

/// Octave features of every ray: for each component `u` and octave `o` in
/// `start..start + count`, `sin(2^o pi u)` then `cos(2^o pi u)`.
///
/// Returns one row of `6 * count` values per ray.
pub fn ray_encode(rays: &[[f64; 3]], start_octave: i32, num_octaves: usize) -> Tensor {
    let width = 6 * num_octaves;
    let mut data = Vec::with_capacity(rays.len() * width);
    for r in rays {
        for &u in r {
            for o in 0..num_octaves {
                let f = 2f64.powi(start_octave + o as i32) * std::f64::consts::PI * u;
                data.push(f.sin());
                data.push(f.cos());
            }
        }
    }
    Tensor::from_parts(vec![rays.len(), width], data)
}

/// Output extent of a kernel-3, stride-2, padding-1 convolution.
pub fn conv_out(n: usize) -> usize {
    (n + 1) / 2
}

/// Flat-index gather for a 3x3 stride-2 convolution over `views` maps of
/// `h x w x c`, padding with zeros.
fn conv_index(views: usize, h: usize, w: usize, c: usize) -> Vec<Option<usize>> {
    let (oh, ow) = (conv_out(h), conv_out(w));
    let mut idx = Vec::with_capacity(views * oh * ow * 9 * c);
    for v in 0..views {
        for oy in 0..oh {
            for ox in 0..ow {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (2 * oy + ky) as isize - 1;
                        let ix = (2 * ox + kx) as isize - 1;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                        for ch in 0..c {
                            idx.push(inside.then(|| ((v * h + iy as usize) * w + ix as usize) * c + ch));
                        }
                    }
                }
            }
        }
    }
    idx
}

fn patch_index(views: usize, h: usize, w: usize, c: usize, p: usize) -> Vec<Option<usize>> {
    let (ph, pw) = (h / p, w / p);
    let mut idx = Vec::with_capacity(views * h * w * c);
    for v in 0..views {
        for py in 0..ph {
            for px in 0..pw {
                for dy in 0..p {
                    for dx in 0..p {
                        let (y, x) = (py * p + dy, px * p + dx);
                        for ch in 0..c {
                            idx.push(Some(((v * h + y) * w + x) * c + ch));
                        }
                    }
                }
            }
        }
    }
    idx
}

/// Gather tables that depend only on the model extents.
#[derive(Clone, Debug)]
pub struct ViewLayout {
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    conv1: Arc<Vec<Option<usize>>>,
    conv2: Arc<Vec<Option<usize>>>,
    patches: Arc<Vec<Option<usize>>>,
    tokens_per_view: usize,
}

impl ViewLayout {
    pub fn new(dims: &ModelDims) -> Result<Self> {
        dims.validate()?;
        let (h1, w1) = (conv_out(dims.height), conv_out(dims.width));
        let (h2, w2) = (conv_out(h1), conv_out(w1));
        let c1 = dims.conv_channels;
        let p = dims.patch;
        Ok(ViewLayout {
            views: dims.views,
            height: dims.height,
            width: dims.width,
            in_channels: dims.view_in_channels(),
            conv1: Arc::new(conv_index(dims.views, dims.height, dims.width, dims.view_in_channels())),
            conv2: Arc::new(conv_index(dims.views, h1, w1, c1)),
            patches: Arc::new(patch_index(dims.views, h2, w2, 2 * c1, p)),
            tokens_per_view: (h2 / p) * (w2 / p),
        })
    }

    pub fn tokens_per_view(&self) -> usize {
        self.tokens_per_view
    }

    pub fn num_tokens(&self) -> usize {
        self.views * self.tokens_per_view
    }
}

/// Constant encoder inputs derived from a rendered view set.
#[derive(Clone, Debug)]
pub struct ViewInput {
    /// im2col matrix of the first convolution.
    pub columns: Tensor,
    /// `[origin | forward]` per view.
    pub cameras: Tensor,
}

impl ViewInput {
    pub fn new(views: &MultiViewSet, layout: &ViewLayout, dims: &ModelDims) -> Result<Self> {
        if views.num_views() != layout.views || views.height() != layout.height || views.width() != layout.width {
            return Err(Error::shape(
                "encode_views",
                format!(
                    "view set {}x{}x{} vs configured {}x{}x{}",
                    views.num_views(),
                    views.height(),
                    views.width(),
                    layout.views,
                    layout.height,
                    layout.width
                ),
            ));
        }
        let c = layout.in_channels;
        let mut pixels = Vec::with_capacity(layout.views * layout.height * layout.width * c);
        let mut cams = Vec::with_capacity(layout.views * 6);
        for v in 0..layout.views {
            let enc = ray_encode(views.rays(v), dims.start_octave, dims.num_octaves);
            for (i, &intensity) in views.image(v).iter().enumerate() {
                pixels.push(intensity);
                pixels.extend_from_slice(enc.row_slice(i));
            }
            let pose = views.pose(v);
            cams.extend_from_slice(&pose.origin);
            cams.extend_from_slice(&pose.forward);
        }
        let rows = layout.views * conv_out(layout.height) * conv_out(layout.width);
        let columns = layout
            .conv1
            .iter()
            .map(|i| i.map_or(0.0, |i| pixels[i]))
            .collect();
        Ok(ViewInput {
            columns: Tensor::matrix(rows, 9 * c, columns)?,
            cameras: Tensor::matrix(layout.views, 6, cams)?,
        })
    }
}

fn lin(tape: &mut Tape, params: &ParamStore, x: Var, prefix: &str) -> Result<Var> {
    let w = tape.param(params, &format!("{prefix}.w"))?;
    let b = tape.param(params, &format!("{prefix}.b"))?;
    tape.linear(x, w, b)
}

fn attention(tape: &mut Tape, params: &ParamStore, x: Var, prefix: &str, heads: usize) -> Result<Var> {
    let d = tape.value(x).cols();
    let dh = d / heads;
    let q = lin(tape, params, x, &format!("{prefix}.q"))?;
    let k = lin(tape, params, x, &format!("{prefix}.k"))?;
    let v = lin(tape, params, x, &format!("{prefix}.v"))?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let logits = tape.matmul(qh, kt)?;
        let logits = tape.scale(logits, 1.0 / (dh as f64).sqrt());
        let att = tape.softmax_rows(logits)?;
        outs.push(tape.matmul(att, vh)?);
    }
    let cat = tape.concat_cols(&outs)?;
    lin(tape, params, cat, &format!("{prefix}.o"))
}

fn block(tape: &mut Tape, params: &ParamStore, x: Var, l: usize, heads: usize) -> Result<Var> {
    let n1 = tape.layer_norm_rows(x)?;
    let a = attention(tape, params, n1, &format!("views.block{l}.attn"), heads)?;
    let x = tape.add(x, a)?;
    let n2 = tape.layer_norm_rows(x)?;
    let h = lin(tape, params, n2, &format!("views.block{l}.ff1"))?;
    let h = tape.relu(h);
    let f = lin(tape, params, h, &format!("views.block{l}.ff2"))?;
    tape.add(x, f)
}

/// Scene tokens (`views * tokens_per_view` x D), view-major.
pub fn encode_views_on_tape(
    tape: &mut Tape,
    params: &ParamStore,
    dims: &ModelDims,
    layout: &ViewLayout,
    input: &ViewInput,
) -> Result<Var> {
    let c1 = dims.conv_channels;
    let (h1, w1) = (conv_out(layout.height), conv_out(layout.width));
    let (h2, w2) = (conv_out(h1), conv_out(w1));

    let cols1 = tape.constant(input.columns.clone());
    let f1 = lin(tape, params, cols1, "views.conv1")?;
    let f1 = tape.relu(f1);
    let cols2 = tape.gather(f1, layout.conv2.clone(), vec![layout.views * h2 * w2, 9 * c1])?;
    let f2 = lin(tape, params, cols2, "views.conv2")?;
    let f2 = tape.relu(f2);
    let p = dims.patch;
    let n_tok = layout.num_tokens();
    let flat = tape.gather(f2, layout.patches.clone(), vec![n_tok, p * p * 2 * c1])?;
    let tokens = lin(tape, params, flat, "views.patch")?;

    let pos = tape.param(params, "views.pos")?;
    let tiled: Vec<usize> = (0..n_tok).map(|t| t % layout.tokens_per_view).collect();
    let pos = tape.gather_rows(pos, &tiled)?;
    let cams = tape.constant(input.cameras.clone());
    let cam = lin(tape, params, cams, "views.cam")?;
    let owner: Vec<usize> = (0..n_tok).map(|t| t / layout.tokens_per_view).collect();
    let cam = tape.gather_rows(cam, &owner)?;
    let x = tape.add(tokens, pos)?;
    let mut x = tape.add(x, cam)?;

    for l in 0..dims.depth {
        x = block(tape, params, x, l, dims.heads)?;
    }
    tape.layer_norm_rows(x)
}

pub(crate) fn init_params(store: &mut ParamStore, dims: &ModelDims, rng: &mut rand_chacha::ChaCha8Rng) -> Result<()> {
    let d = dims.embed_dim;
    let c1 = dims.conv_channels;
    let cin = dims.view_in_channels();
    let layout_tokens = dims.tokens_per_view();
    let p = dims.patch;
    init_linear(store, rng, "views.conv1", 9 * cin, c1)?;
    init_linear(store, rng, "views.conv2", 9 * c1, 2 * c1)?;
    init_linear(store, rng, "views.patch", p * p * 2 * c1, d)?;
    init_linear(store, rng, "views.cam", 6, d)?;
    store.init_uniform("views.pos", &[layout_tokens, d], d, rng)?;
    for l in 0..dims.depth {
        for part in ["q", "k", "v", "o"] {
            init_linear(store, rng, &format!("views.block{l}.attn.{part}"), d, d)?;
        }
        init_linear(store, rng, &format!("views.block{l}.ff1"), d, 2 * d)?;
        init_linear(store, rng, &format!("views.block{l}.ff2"), 2 * d, d)?;
    }
    Ok(())
}
