//! Caption tokenisation and the bidirectional GRU word encoder.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{init_linear, ModelDims};
use crate::diffcore::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Closed vocabulary; ids 0 and 1 are padding and unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Sorted distinct tokens of `texts` after the two reserved entries.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts.into_iter().flat_map(tokenize).collect();
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(words.into_iter().filter(|w| w != PAD_TOKEN && w != UNK_TOKEN));
        Self::from_tokens(tokens)
    }

    /// One token per line; the line index is the id.
    pub fn parse(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[UNK_ID] != UNK_TOKEN {
            return Err(Error::Data("vocabulary must start with <pad> and <unk>".into()));
        }
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().skip(2).map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Token ids of `text`, truncated to `max_len`, plus the number of words
    /// that fell back to UNK.
    pub fn encode(&self, text: &str, max_len: usize) -> Result<(TokenSequence, usize)> {
        let mut unknown = 0;
        let ids: Vec<usize> = tokenize(text)
            .iter()
            .take(max_len)
            .map(|w| {
                self.id(w).unwrap_or_else(|| {
                    unknown += 1;
                    UNK_ID
                })
            })
            .collect();
        Ok((TokenSequence::new(ids, self.len(), max_len)?, unknown))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>, vocab_size: usize, max_len: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        if ids.len() > max_len {
            return Err(Error::InvalidArgument(format!("{} tokens exceed max_len {max_len}", ids.len())));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab_size) {
            return Err(Error::InvalidArgument(format!("token id {bad} outside vocabulary of {vocab_size}")));
        }
        Ok(TokenSequence { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Hidden states of one GRU direction over `x` (m x E), in processing order.
fn gru(tape: &mut Tape, params: &ParamStore, x: Var, steps: &[usize], prefix: &str) -> Result<Vec<Var>> {
    let wx = tape.param(params, &format!("{prefix}.wx"))?;
    let bx = tape.param(params, &format!("{prefix}.bx"))?;
    let u_zr = tape.param(params, &format!("{prefix}.u_zr"))?;
    let u_n = tape.param(params, &format!("{prefix}.u_n"))?;
    let hd = tape.value(u_n).rows();
    let xw = tape.linear(x, wx, bx)?;
    let mut h = tape.constant(Tensor::zeros(&[1, hd]));
    let mut states = Vec::with_capacity(steps.len());
    for &t in steps {
        let a = tape.slice_rows(xw, t, 1)?;
        let a_zr = tape.slice_cols(a, 0, 2 * hd)?;
        let a_n = tape.slice_cols(a, 2 * hd, hd)?;
        let hu = tape.matmul(h, u_zr)?;
        let pre = tape.add(a_zr, hu)?;
        let zr = tape.sigmoid(pre);
        let z = tape.slice_cols(zr, 0, hd)?;
        let r = tape.slice_cols(zr, hd, hd)?;
        let rh = tape.mul(r, h)?;
        let rec = tape.matmul(rh, u_n)?;
        let pre_n = tape.add(a_n, rec)?;
        let n = tape.tanh(pre_n);
        // h' = (1 - z) * n + z * h = n + z * (h - n)
        let diff = tape.sub(h, n)?;
        let gated = tape.mul(z, diff)?;
        h = tape.add(n, gated)?;
        states.push(h);
    }
    Ok(states)
}

/// Averaged bidirectional states before projection (m x H).
pub fn gru_states_on_tape(tape: &mut Tape, params: &ParamStore, tokens: &TokenSequence) -> Result<Var> {
    let embed = tape.param(params, "text.embed")?;
    let vocab = tape.value(embed).rows();
    if let Some(&bad) = tokens.ids().iter().find(|&&i| i >= vocab) {
        return Err(Error::InvalidArgument(format!("token id {bad} outside vocabulary of {vocab}")));
    }
    let x = tape.gather_rows(embed, tokens.ids())?;
    let m = tokens.len();
    let fwd_steps: Vec<usize> = (0..m).collect();
    let rev_steps: Vec<usize> = (0..m).rev().collect();
    let fwd = gru(tape, params, x, &fwd_steps, "text.fwd")?;
    let mut rev = gru(tape, params, x, &rev_steps, "text.rev")?;
    rev.reverse();
    let f = tape.concat_rows(&fwd)?;
    let r = tape.concat_rows(&rev)?;
    let s = tape.add(f, r)?;
    Ok(tape.scale(s, 0.5))
}

/// Word vectors (m x D).
pub fn encode_text_on_tape(tape: &mut Tape, params: &ParamStore, tokens: &TokenSequence) -> Result<Var> {
    let w = gru_states_on_tape(tape, params, tokens)?;
    let pw = tape.param(params, "text.proj.w")?;
    let pb = tape.param(params, "text.proj.b")?;
    tape.linear(w, pw, pb)
}

pub(crate) fn init_params(store: &mut ParamStore, dims: &ModelDims, rng: &mut rand_chacha::ChaCha8Rng) -> Result<()> {
    let (e, h) = (dims.word_dim, dims.hidden_dim);
    store.init_uniform("text.embed", &[dims.vocab_size, e], e, rng)?;
    for dir in ["fwd", "rev"] {
        store.init_uniform(&format!("text.{dir}.wx"), &[e, 3 * h], h, rng)?;
        store.init_const(&format!("text.{dir}.bx"), &[1, 3 * h], 0.0)?;
        store.init_uniform(&format!("text.{dir}.u_zr"), &[h, 2 * h], h, rng)?;
        store.init_uniform(&format!("text.{dir}.u_n"), &[h, h], h, rng)?;
    }
    init_linear(store, rng, "text.proj", h, dims.embed_dim)
}
