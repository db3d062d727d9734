use super::{init_linear, ModelDims};
use crate::diffcore::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `relu([parts | mean(scene)] W + b)`: every part row (S x D) is joined with
/// the mean scene token before the shared linear layer.
pub fn fuse_on_tape(tape: &mut Tape, params: &ParamStore, parts: Var, scene: Var) -> Result<Var> {
    let (tp, ts) = (tape.value(parts), tape.value(scene));
    if tp.cols() != ts.cols() {
        return Err(Error::shape(
            "fuse",
            format!("part width {} vs scene width {}", tp.cols(), ts.cols()),
        ));
    }
    let (s, t) = (tp.rows(), ts.rows());
    let avg = tape.constant(Tensor::matrix(1, t, vec![1.0 / t as f64; t])?);
    let pooled = tape.matmul(avg, scene)?;
    let tiled = tape.gather_rows(pooled, &vec![0; s])?;
    let joined = tape.concat_cols(&[parts, tiled])?;
    let w = tape.param(params, "fuse.w")?;
    let b = tape.param(params, "fuse.b")?;
    let out = tape.linear(joined, w, b)?;
    Ok(tape.relu(out))
}

pub(crate) fn init_params(store: &mut ParamStore, dims: &ModelDims, rng: &mut rand_chacha::ChaCha8Rng) -> Result<()> {
    init_linear(store, rng, "fuse", 2 * dims.embed_dim, dims.embed_dim)
}
