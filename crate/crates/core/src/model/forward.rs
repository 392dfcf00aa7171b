//! Inference path: causal forward with a key/value cache, continuation
//! scoring and greedy decoding.

use super::kernels::{gelu, layer_norm, log_softmax_at, matmul, softmax_row, Real};
use super::state::{index, slot, ModelState};
use crate::error::{Error, Result};

/// Row-major scores, `positions × vocab`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub vocab: usize,
    pub data: Vec<f32>,
}

impl Logits {
    pub fn positions(&self) -> usize {
        self.data.len().checked_div(self.vocab).unwrap_or(0)
    }

    pub fn row(&self, pos: usize) -> &[f32] {
        &self.data[pos * self.vocab..(pos + 1) * self.vocab]
    }

    pub fn last(&self) -> Option<&[f32]> {
        self.positions().checked_sub(1).map(|p| self.row(p))
    }
}

/// First index of the maximum; NaN never wins.
pub fn argmax(row: &[f32]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Causal multi-head attention for `n_q` query rows at absolute positions
/// `offset..offset + n_q` against `offset + n_q` key/value rows.
///
/// `q` is `[n_q, d]`, `k` and `v` are `[n_kv, d]`, `out` is `[n_q, d]`.
/// When `probs` is given it receives `[heads, n_q, n_kv]` attention weights.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    n_q: usize,
    offset: usize,
    d: usize,
    heads: usize,
    out: &mut [T],
    mut probs: Option<&mut [T]>,
) {
    let n_kv = offset + n_q;
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut scores = vec![T::zero(); n_q * n_kv];
    for h in 0..heads {
        let c = h * dh;
        T::gemm_raw(
            n_q, dh, n_kv, scale,
            &q[c..], d as isize, 1,
            &k[c..], 1, d as isize,
            T::zero(), &mut scores, n_kv as isize, 1,
        );
        for i in 0..n_q {
            let row = &mut scores[i * n_kv..(i + 1) * n_kv];
            for s in &mut row[offset + i + 1..] {
                *s = T::neg_infinity();
            }
            softmax_row(row);
        }
        T::gemm_raw(
            n_q, n_kv, dh, T::one(),
            &scores, n_kv as isize, 1,
            &v[c..], d as isize, 1,
            T::zero(), &mut out[c..], d as isize, 1,
        );
        if let Some(p) = probs.as_deref_mut() {
            p[h * n_q * n_kv..(h + 1) * n_q * n_kv].copy_from_slice(&scores);
        }
    }
}

/// Per-layer keys and values for the positions seen so far.
#[derive(Debug, Clone)]
pub struct KvCache {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
}

impl KvCache {
    pub fn new(n_layers: usize) -> Self {
        KvCache {
            keys: vec![Vec::new(); n_layers],
            values: vec![Vec::new(); n_layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn check_tokens(state: &ModelState, tokens: &[u32], start: usize) -> Result<()> {
    let c = &state.config;
    if start + tokens.len() > c.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: start + tokens.len(),
            max: c.max_seq_len,
        });
    }
    if let Some(&id) = tokens.iter().find(|&&t| t as usize >= c.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            size: c.vocab_size,
        });
    }
    Ok(())
}

/// Feeds `tokens` after the cached prefix and returns their logits.
pub fn forward_cached(state: &ModelState, cache: &mut KvCache, tokens: &[u32]) -> Result<Logits> {
    let c = &state.config;
    let start = cache.len;
    check_tokens(state, tokens, start)?;
    let (n, d, f, vsz) = (tokens.len(), c.d_model, c.d_ff, c.vocab_size);
    if n == 0 {
        return Ok(Logits { vocab: vsz, data: Vec::new() });
    }

    let tok = state.at(index::TOK);
    let pos = state.at(index::POS);
    let mut x = vec![0f32; n * d];
    for (i, &t) in tokens.iter().enumerate() {
        let row = &mut x[i * d..(i + 1) * d];
        let te = &tok[t as usize * d..(t as usize + 1) * d];
        let pe = &pos[(start + i) * d..(start + i + 1) * d];
        for j in 0..d {
            row[j] = te[j] + pe[j];
        }
    }

    let mut h = vec![0f32; n * d];
    let mut xhat = vec![0f32; n * d];
    let mut rstd = vec![0f32; n];
    let mut q = vec![0f32; n * d];
    let mut a = vec![0f32; n * d];
    let mut u = vec![0f32; n * f];
    for l in 0..c.n_layers {
        let w = |s| state.at(index::layer(l, s));
        layer_norm(&x, w(slot::N1_SCALE), w(slot::N1_BIAS), d, &mut h, &mut xhat, &mut rstd);
        matmul(&h, w(slot::Q), &mut q, n, d, d, false);
        let kc = &mut cache.keys[l];
        kc.resize((start + n) * d, 0.0);
        matmul(&h, w(slot::K), &mut kc[start * d..], n, d, d, false);
        let vc = &mut cache.values[l];
        vc.resize((start + n) * d, 0.0);
        matmul(&h, w(slot::V), &mut vc[start * d..], n, d, d, false);
        attend(&q, &cache.keys[l], &cache.values[l], n, start, d, c.n_heads, &mut a, None);
        matmul(&a, w(slot::O), &mut x, n, d, d, true);

        layer_norm(&x, w(slot::N2_SCALE), w(slot::N2_BIAS), d, &mut h, &mut xhat, &mut rstd);
        matmul(&h, w(slot::FFN_IN), &mut u, n, d, f, false);
        for e in &mut u {
            *e = gelu(*e);
        }
        matmul(&u, w(slot::FFN_OUT), &mut x, n, f, d, true);
    }
    cache.len = start + n;

    let l = c.n_layers;
    layer_norm(
        &x,
        state.at(index::final_scale(l)),
        state.at(index::final_bias(l)),
        d,
        &mut h,
        &mut xhat,
        &mut rstd,
    );
    let mut logits = vec![0f32; n * vsz];
    matmul(&h, state.at(index::unembed(l)), &mut logits, n, d, vsz, false);
    Ok(Logits { vocab: vsz, data: logits })
}

/// Anything that can score and decode token sequences.
///
/// Evaluation and probing only need this surface, so tests can substitute
/// hand-built models.
pub trait LanguageModel: Sync {
    fn vocab_size(&self) -> usize;

    fn max_seq_len(&self) -> usize;

    /// Identifies the weights in reports, when known.
    fn model_id(&self) -> Option<String> {
        None
    }

    fn forward_logits(&self, tokens: &[u32]) -> Result<Logits>;

    /// Natural-log probability of `continuation` given `prompt`.
    fn sequence_logprob(&self, prompt: &[u32], continuation: &[u32]) -> Result<f64> {
        if prompt.is_empty() {
            return Err(Error::Empty("prompt"));
        }
        let total = prompt.len() + continuation.len();
        if total > self.max_seq_len() {
            return Err(Error::SequenceTooLong {
                len: total,
                max: self.max_seq_len(),
            });
        }
        if continuation.is_empty() {
            return Ok(0.0);
        }
        let mut input = prompt.to_vec();
        input.extend_from_slice(&continuation[..continuation.len() - 1]);
        let logits = self.forward_logits(&input)?;
        let p = prompt.len();
        let mut sum = 0.0;
        for (j, &t) in continuation.iter().enumerate() {
            if t as usize >= self.vocab_size() {
                return Err(Error::TokenOutOfRange {
                    id: t,
                    size: self.vocab_size(),
                });
            }
            sum += log_softmax_at(logits.row(p - 1 + j), t as usize);
        }
        Ok(sum)
    }

    /// Argmax decoding. Stops on a stop token (not emitted), after
    /// `max_new` tokens, or when the context window is full.
    fn greedy_generate(&self, prompt: &[u32], stop: &[u32], max_new: usize) -> Result<Vec<u32>> {
        if prompt.is_empty() {
            return Err(Error::Empty("prompt"));
        }
        let mut seq = prompt.to_vec();
        let mut out = Vec::new();
        while out.len() < max_new && seq.len() < self.max_seq_len() {
            let logits = self.forward_logits(&seq)?;
            let next = argmax(logits.last().expect("non-empty"));
            if stop.contains(&next) {
                break;
            }
            out.push(next);
            seq.push(next);
        }
        if seq.len() > self.max_seq_len() {
            return Err(Error::SequenceTooLong {
                len: seq.len(),
                max: self.max_seq_len(),
            });
        }
        Ok(out)
    }
}

impl LanguageModel for ModelState {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn max_seq_len(&self) -> usize {
        self.config.max_seq_len
    }

    fn model_id(&self) -> Option<String> {
        Some(self.content_hash())
    }

    fn forward_logits(&self, tokens: &[u32]) -> Result<Logits> {
        forward_cached(self, &mut KvCache::new(self.config.n_layers), tokens)
    }

    fn greedy_generate(&self, prompt: &[u32], stop: &[u32], max_new: usize) -> Result<Vec<u32>> {
        if prompt.is_empty() {
            return Err(Error::Empty("prompt"));
        }
        let mut cache = KvCache::new(self.config.n_layers);
        let mut logits = forward_cached(self, &mut cache, prompt)?;
        let mut out = Vec::new();
        while out.len() < max_new && cache.len() < self.config.max_seq_len {
            let next = argmax(logits.last().expect("non-empty"));
            if stop.contains(&next) {
                break;
            }
            out.push(next);
            logits = forward_cached(self, &mut cache, &[next])?;
        }
        Ok(out)
    }
}

pub fn forward_logits(state: &ModelState, tokens: &[u32]) -> Result<Logits> {
    state.forward_logits(tokens)
}

pub fn sequence_logprob(state: &ModelState, prompt: &[u32], continuation: &[u32]) -> Result<f64> {
    state.sequence_logprob(prompt, continuation)
}

pub fn greedy_generate(
    state: &ModelState,
    prompt: &[u32],
    stop: &[u32],
    max_new: usize,
) -> Result<Vec<u32>> {
    state.greedy_generate(prompt, stop, max_new)
}
