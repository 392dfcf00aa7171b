//! Training path: batched forward that keeps activations, and the exact
//! backward pass for mean next-token cross-entropy.
//!
//! Rows of all sequences are stacked so every linear layer is one matrix
//! product; attention runs per sequence. Reduction order is fixed, so the
//! result does not depend on the thread count.

use super::forward::attend;
use super::kernels::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, matmul, matmul_nt, matmul_tn, Real,
};
use super::state::{index, slot, ModelState};
use crate::error::{Error, Result};
use crate::parallel;

struct LayerActs<T> {
    xhat1: Vec<T>,
    rstd1: Vec<T>,
    h1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<Vec<T>>,
    att: Vec<T>,
    xhat2: Vec<T>,
    rstd2: Vec<T>,
    h2: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
}

struct Batch {
    tokens: Vec<u32>,
    /// `(offset, len)` of each sequence in the stacked rows.
    spans: Vec<(usize, usize)>,
    n_predicted: usize,
}

fn stack(state_vocab: usize, max_len: usize, batch: &[Vec<u32>]) -> Result<Batch> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut tokens = Vec::new();
    let mut spans = Vec::with_capacity(batch.len());
    let mut n_predicted = 0;
    for seq in batch {
        if seq.len() > max_len {
            return Err(Error::SequenceTooLong {
                len: seq.len(),
                max: max_len,
            });
        }
        if let Some(&id) = seq.iter().find(|&&t| t as usize >= state_vocab) {
            return Err(Error::TokenOutOfRange {
                id,
                size: state_vocab,
            });
        }
        spans.push((tokens.len(), seq.len()));
        tokens.extend_from_slice(seq);
        n_predicted += seq.len().saturating_sub(1);
    }
    if n_predicted == 0 {
        return Err(Error::Empty("predicted positions"));
    }
    Ok(Batch {
        tokens,
        spans,
        n_predicted,
    })
}

/// Which tensors need gradients. Skipping frozen weight gradients is only a
/// speed-up; the returned gradient for a skipped tensor is zero.
pub type GradMask<'a> = Option<&'a [bool]>;

/// Mean next-token cross-entropy (nats) over all predicted positions of the
/// batch, and its gradient with respect to every tensor.
pub fn loss_and_grads<T: Real>(
    state: &ModelState<T>,
    batch: &[Vec<u32>],
) -> Result<(f64, ModelState<T>)> {
    loss_and_grads_masked(state, batch, None)
}

pub fn loss_and_grads_masked<T: Real>(
    state: &ModelState<T>,
    batch: &[Vec<u32>],
    mask: GradMask<'_>,
) -> Result<(f64, ModelState<T>)> {
    let c = &state.config;
    let b = stack(c.vocab_size, c.max_seq_len, batch)?;
    let (n, d, f, vsz, heads) = (b.tokens.len(), c.d_model, c.d_ff, c.vocab_size, c.n_heads);
    let want = |i: usize| mask.is_none_or(|m| m[i]);

    // Forward.
    let mut x = vec![T::zero(); n * d];
    {
        let tok = state.at(index::TOK);
        let pos = state.at(index::POS);
        for &(o, len) in &b.spans {
            for t in 0..len {
                let id = b.tokens[o + t] as usize;
                let row = &mut x[(o + t) * d..(o + t + 1) * d];
                for j in 0..d {
                    row[j] = tok[id * d + j] + pos[t * d + j];
                }
            }
        }
    }
    let mut acts: Vec<LayerActs<T>> = Vec::with_capacity(c.n_layers);
    for l in 0..c.n_layers {
        let w = |s| state.at(index::layer(l, s));
        let mut h1 = vec![T::zero(); n * d];
        let mut xhat1 = vec![T::zero(); n * d];
        let mut rstd1 = vec![T::zero(); n];
        layer_norm(&x, w(slot::N1_SCALE), w(slot::N1_BIAS), d, &mut h1, &mut xhat1, &mut rstd1);
        let mut q = vec![T::zero(); n * d];
        let mut k = vec![T::zero(); n * d];
        let mut v = vec![T::zero(); n * d];
        matmul(&h1, w(slot::Q), &mut q, n, d, d, false);
        matmul(&h1, w(slot::K), &mut k, n, d, d, false);
        matmul(&h1, w(slot::V), &mut v, n, d, d, false);

        let per_seq = parallel::map(&b.spans, |&(o, len)| {
            let r = o * d..(o + len) * d;
            let mut out = vec![T::zero(); len * d];
            let mut p = vec![T::zero(); heads * len * len];
            attend(&q[r.clone()], &k[r.clone()], &v[r], len, 0, d, heads, &mut out, Some(&mut p));
            (out, p)
        });
        let mut att = vec![T::zero(); n * d];
        let mut probs = Vec::with_capacity(b.spans.len());
        for (&(o, len), (out, p)) in b.spans.iter().zip(per_seq) {
            att[o * d..(o + len) * d].copy_from_slice(&out);
            probs.push(p);
        }
        matmul(&att, w(slot::O), &mut x, n, d, d, true);

        let mut h2 = vec![T::zero(); n * d];
        let mut xhat2 = vec![T::zero(); n * d];
        let mut rstd2 = vec![T::zero(); n];
        layer_norm(&x, w(slot::N2_SCALE), w(slot::N2_BIAS), d, &mut h2, &mut xhat2, &mut rstd2);
        let mut u = vec![T::zero(); n * f];
        matmul(&h2, w(slot::FFN_IN), &mut u, n, d, f, false);
        let g: Vec<T> = u.iter().map(|&e| gelu(e)).collect();
        matmul(&g, w(slot::FFN_OUT), &mut x, n, f, d, true);
        acts.push(LayerActs {
            xhat1, rstd1, h1, q, k, v, probs, att, xhat2, rstd2, h2, u, g,
        });
    }
    let nl = c.n_layers;
    let mut hf = vec![T::zero(); n * d];
    let mut xhatf = vec![T::zero(); n * d];
    let mut rstdf = vec![T::zero(); n];
    layer_norm(
        &x,
        state.at(index::final_scale(nl)),
        state.at(index::final_bias(nl)),
        d,
        &mut hf,
        &mut xhatf,
        &mut rstdf,
    );
    let mut logits = vec![T::zero(); n * vsz];
    matmul(&hf, state.at(index::unembed(nl)), &mut logits, n, d, vsz, false);

    // Loss and its gradient with respect to the logits.
    let inv = 1.0 / b.n_predicted as f64;
    let mut loss = 0.0f64;
    for &(o, len) in &b.spans {
        for t in 0..len {
            let row = &mut logits[(o + t) * vsz..(o + t + 1) * vsz];
            if t + 1 == len {
                row.fill(T::zero());
                continue;
            }
            let target = b.tokens[o + t + 1] as usize;
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            loss -= row[target].as_f64() - max - sum.ln();
            for (j, e) in exps.into_iter().enumerate() {
                let p = e / sum - if j == target { 1.0 } else { 0.0 };
                row[j] = T::of(p * inv);
            }
        }
    }
    loss *= inv;
    let dlogits = logits;

    // Backward.
    let mut grads = state.zeros_like();
    let ui = index::unembed(nl);
    if want(ui) {
        matmul_tn(&hf, &dlogits, grads.at_mut(ui), d, n, vsz, false);
    }
    let mut dh = vec![T::zero(); n * d];
    matmul_nt(&dlogits, state.at(ui), &mut dh, n, vsz, d, false);
    drop(dlogits);
    let mut dx = vec![T::zero(); n * d];
    {
        let (fs, fb) = (index::final_scale(nl), index::final_bias(nl));
        let mut ds = vec![T::zero(); d];
        let mut db = vec![T::zero(); d];
        layer_norm_backward(&dh, &xhatf, &rstdf, state.at(fs), d, &mut dx, &mut ds, &mut db);
        if want(fs) {
            grads.at_mut(fs).copy_from_slice(&ds);
        }
        if want(fb) {
            grads.at_mut(fb).copy_from_slice(&db);
        }
    }

    for l in (0..nl).rev() {
        let a = &acts[l];
        let wi = |s| index::layer(l, s);
        let w = |s| state.at(wi(s));

        // Feed-forward block.
        if want(wi(slot::FFN_OUT)) {
            matmul_tn(&a.g, &dx, grads.at_mut(wi(slot::FFN_OUT)), f, n, d, false);
        }
        let mut du = vec![T::zero(); n * f];
        matmul_nt(&dx, w(slot::FFN_OUT), &mut du, n, d, f, false);
        for (e, &pre) in du.iter_mut().zip(&a.u) {
            *e = *e * gelu_grad(pre);
        }
        if want(wi(slot::FFN_IN)) {
            matmul_tn(&a.h2, &du, grads.at_mut(wi(slot::FFN_IN)), d, n, f, false);
        }
        let mut dh2 = vec![T::zero(); n * d];
        matmul_nt(&du, w(slot::FFN_IN), &mut dh2, n, f, d, false);
        drop(du);
        {
            let mut ds = vec![T::zero(); d];
            let mut db = vec![T::zero(); d];
            layer_norm_backward(&dh2, &a.xhat2, &a.rstd2, w(slot::N2_SCALE), d, &mut dx, &mut ds, &mut db);
            if want(wi(slot::N2_SCALE)) {
                grads.at_mut(wi(slot::N2_SCALE)).copy_from_slice(&ds);
            }
            if want(wi(slot::N2_BIAS)) {
                grads.at_mut(wi(slot::N2_BIAS)).copy_from_slice(&db);
            }
        }

        // Attention block.
        if want(wi(slot::O)) {
            matmul_tn(&a.att, &dx, grads.at_mut(wi(slot::O)), d, n, d, false);
        }
        let mut datt = vec![T::zero(); n * d];
        matmul_nt(&dx, w(slot::O), &mut datt, n, d, d, false);
        let per_seq = parallel::map_range(b.spans.len(), |s| {
            let (o, len) = b.spans[s];
            let r = o * d..(o + len) * d;
            attend_backward(
                &datt[r.clone()],
                &a.q[r.clone()],
                &a.k[r.clone()],
                &a.v[r],
                &a.probs[s],
                len,
                d,
                heads,
            )
        });
        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        for (&(o, len), (sq, sk, sv)) in b.spans.iter().zip(per_seq) {
            let r = o * d..(o + len) * d;
            dq[r.clone()].copy_from_slice(&sq);
            dk[r.clone()].copy_from_slice(&sk);
            dv[r].copy_from_slice(&sv);
        }
        drop(datt);
        for (s, dm) in [(slot::Q, &dq), (slot::K, &dk), (slot::V, &dv)] {
            if want(wi(s)) {
                matmul_tn(&a.h1, dm, grads.at_mut(wi(s)), d, n, d, false);
            }
        }
        let mut dh1 = vec![T::zero(); n * d];
        matmul_nt(&dq, w(slot::Q), &mut dh1, n, d, d, true);
        matmul_nt(&dk, w(slot::K), &mut dh1, n, d, d, true);
        matmul_nt(&dv, w(slot::V), &mut dh1, n, d, d, true);
        {
            let mut ds = vec![T::zero(); d];
            let mut db = vec![T::zero(); d];
            layer_norm_backward(&dh1, &a.xhat1, &a.rstd1, w(slot::N1_SCALE), d, &mut dx, &mut ds, &mut db);
            if want(wi(slot::N1_SCALE)) {
                grads.at_mut(wi(slot::N1_SCALE)).copy_from_slice(&ds);
            }
            if want(wi(slot::N1_BIAS)) {
                grads.at_mut(wi(slot::N1_BIAS)).copy_from_slice(&db);
            }
        }
    }

    // Embeddings, accumulated in row order.
    for &(o, len) in &b.spans {
        for t in 0..len {
            let id = b.tokens[o + t] as usize;
            let g = &dx[(o + t) * d..(o + t + 1) * d];
            if want(index::TOK) {
                let tg = &mut grads.at_mut(index::TOK)[id * d..(id + 1) * d];
                for j in 0..d {
                    tg[j] += g[j];
                }
            }
            if want(index::POS) {
                let pg = &mut grads.at_mut(index::POS)[t * d..(t + 1) * d];
                for j in 0..d {
                    pg[j] += g[j];
                }
            }
        }
    }
    Ok((loss, grads))
}

/// Backward of causal attention for one sequence of `n` rows; returns
/// `(dq, dk, dv)`, each `[n, d]`.
#[allow(clippy::too_many_arguments)]
fn attend_backward<T: Real>(
    datt: &[T],
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    n: usize,
    d: usize,
    heads: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); n * d];
    let mut dv = vec![T::zero(); n * d];
    let mut ds = vec![T::zero(); n * n];
    for h in 0..heads {
        let c = h * dh;
        let p = &probs[h * n * n..(h + 1) * n * n];
        // dP = dA V^T
        T::gemm_raw(
            n, dh, n, T::one(),
            &datt[c..], d as isize, 1,
            &v[c..], 1, d as isize,
            T::zero(), &mut ds, n as isize, 1,
        );
        // dV = P^T dA
        T::gemm_raw(
            n, n, dh, T::one(),
            p, 1, n as isize,
            &datt[c..], d as isize, 1,
            T::zero(), &mut dv[c..], d as isize, 1,
        );
        // dS = P * (dP - rowsum(dP * P))
        for i in 0..n {
            let pr = &p[i * n..(i + 1) * n];
            let dr = &mut ds[i * n..(i + 1) * n];
            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
            for j in 0..n {
                dr[j] = T::of(pr[j].as_f64() * (dr[j].as_f64() - dot));
            }
        }
        // dQ = scale * dS K, dK = scale * dS^T Q
        T::gemm_raw(
            n, n, dh, scale,
            &ds, n as isize, 1,
            &k[c..], d as isize, 1,
            T::zero(), &mut dq[c..], d as isize, 1,
        );
        T::gemm_raw(
            n, n, dh, scale,
            &ds, 1, n as isize,
            &q[c..], d as isize, 1,
            T::zero(), &mut dk[c..], d as isize, 1,
        );
    }
    (dq, dk, dv)
}

/// Mean cross-entropy without gradients, via the inference path.
pub fn batch_loss(state: &ModelState, batch: &[Vec<u32>]) -> Result<f64> {
    use super::forward::LanguageModel;
    let b = stack(state.config.vocab_size, state.config.max_seq_len, batch)?;
    let per_seq = parallel::try_map(batch, |seq| -> Result<f64> {
        if seq.len() < 2 {
            return Ok(0.0);
        }
        state.sequence_logprob(&seq[..1], &seq[1..])
    })?;
    Ok(-per_seq.iter().sum::<f64>() / b.n_predicted as f64)
}

