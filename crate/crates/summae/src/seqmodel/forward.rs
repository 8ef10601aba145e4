//! Gradient-free forward passes for encoding and greedy decoding.
//!
//! These mirror the graph builders in `graph.rs` operation for
//! operation so inference matches the training-time math; the
//! consistency tests in `mod.rs` pin the two paths together.

use ndarray::{concatenate, Array2, Axis};

use crate::subword::{CLS, TokenId};

use super::graph::{causal_mask, position_table};
use super::params::{ArchKind, DecoderParams, EncoderParams, GruParams, ModelConfig, Params, TrfLayerParams};
use super::DecodePrompt;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gru_step(g: &GruParams, x: &Array2<f64>, h: &Array2<f64>) -> Array2<f64> {
    let r = (x.dot(&g.w_xr) + h.dot(&g.w_hr) + &g.b_r).mapv(sigmoid);
    let u = (x.dot(&g.w_xu) + h.dot(&g.w_hu) + &g.b_u).mapv(sigmoid);
    let rh = &r * h;
    let c = (x.dot(&g.w_xc) + rh.dot(&g.w_hc) + &g.b_c).mapv(f64::tanh);
    let keep = u.mapv(|v| 1.0 - v);
    keep * h + u * c
}

fn layer_norm(x: &Array2<f64>, gain: &Array2<f64>, bias: &Array2<f64>) -> Array2<f64> {
    const EPS: f64 = 1e-5;
    let n = x.ncols() as f64;
    let mut out = Array2::zeros(x.raw_dim());
    for (r, row) in x.rows().into_iter().enumerate() {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + EPS).sqrt();
        for (c, &v) in row.iter().enumerate() {
            out[[r, c]] = (v - mean) * inv_std * gain[[0, c]] + bias[[0, c]];
        }
    }
    out
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (r, row) in x.rows().into_iter().enumerate() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in row.iter() {
            denom += (v - m).exp();
        }
        for (c, &v) in row.iter().enumerate() {
            out[[r, c]] = (v - m).exp() / denom;
        }
    }
    out
}

fn trf_layer(
    l: &TrfLayerParams,
    x: &Array2<f64>,
    heads: usize,
    mask: Option<&Array2<f64>>,
) -> Array2<f64> {
    let d = x.ncols();
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();

    let q = x.dot(&l.wq) + &l.bq;
    let k = x.dot(&l.wk) + &l.bk;
    let v = x.dot(&l.wv) + &l.bv;

    let mut heads_out = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dk, (h + 1) * dk);
        let qh = q.slice(ndarray::s![.., lo..hi]);
        let kh = k.slice(ndarray::s![.., lo..hi]);
        let vh = v.slice(ndarray::s![.., lo..hi]);
        let mut scores = qh.dot(&kh.t()).mapv(|s| s * scale);
        if let Some(m) = mask {
            scores += m;
        }
        let attn = softmax_rows(&scores);
        heads_out.push(attn.dot(&vh));
    }
    let views: Vec<_> = heads_out.iter().map(|h| h.view()).collect();
    let ctx = concatenate(Axis(1), &views).expect("head widths match");
    let proj = ctx.dot(&l.wo) + &l.bo;
    let x = layer_norm(&(x + &proj), &l.ln1_g, &l.ln1_b);

    let ff = (x.dot(&l.ff_w1) + &l.ff_b1).mapv(|v| v.max(0.0));
    let ff = ff.dot(&l.ff_w2) + &l.ff_b2;
    layer_norm(&(&x + &ff), &l.ln2_g, &l.ln2_b)
}

fn gather(table: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), table.ncols()));
    for (r, &ix) in indices.iter().enumerate() {
        out.row_mut(r).assign(&table.row(ix));
    }
    out
}

/// Encoder feature fed to the affine head, then the (1, z_dim) latent.
pub(crate) fn encode_plain(params: &Params, config: &ModelConfig, input: &[TokenId]) -> Array2<f64> {
    let feature = match (&params.encoder, config.encoder_kind) {
        (EncoderParams::Rnn { fwd, bwd }, ArchKind::Rnn) => {
            let indices: Vec<usize> = input.iter().map(|&t| t as usize).collect();
            let x = gather(&params.embedding, &indices);
            let mut hf = Array2::zeros((1, config.h_dim));
            for t in 0..indices.len() {
                let xt = x.slice(ndarray::s![t..t + 1, ..]).to_owned();
                hf = gru_step(fwd, &xt, &hf);
            }
            let mut hb = Array2::zeros((1, config.h_dim));
            for t in (0..indices.len()).rev() {
                let xt = x.slice(ndarray::s![t..t + 1, ..]).to_owned();
                hb = gru_step(bwd, &xt, &hb);
            }
            concatenate(Axis(1), &[hf.view(), hb.view()]).expect("single rows")
        }
        (EncoderParams::Trf { layers }, ArchKind::Trf) => {
            let mut indices = Vec::with_capacity(input.len() + 1);
            indices.push(CLS as usize);
            indices.extend(input.iter().map(|&t| t as usize));
            let x = gather(&params.embedding, &indices);
            let scale = (config.emb_dim as f64).sqrt();
            let x = x.mapv(|v| v * scale);
            let pe = position_table(indices.len(), config.emb_dim);
            let mut x = x + &pe;
            for layer in layers {
                x = trf_layer(layer, &x, config.trf_heads, None);
            }
            x.slice(ndarray::s![0..1, ..]).to_owned()
        }
        _ => panic!("params do not match config encoder kind"),
    };
    feature.dot(&params.head_w) + &params.head_b
}

fn argmax(row: &Array2<f64>) -> TokenId {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.row(0).iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best as TokenId
}

/// Greedy arg-max decoding from a latent. Emits tokens until the end
/// token or the prompt-specific length cap; the end token, when reached,
/// is included as the final element.
pub(crate) fn decode_greedy_plain(
    params: &Params,
    config: &ModelConfig,
    z: &Array2<f64>,
    prompt: DecodePrompt,
) -> Vec<TokenId> {
    let max_len = prompt.max_len(config);
    let eos = crate::subword::EOS;
    let mut out: Vec<TokenId> = Vec::new();

    match (&params.decoder, config.decoder_kind) {
        (DecoderParams::Rnn { gru, out_w, out_b }, ArchKind::Rnn) => {
            let mut h = Array2::zeros((1, config.h_dim));
            let mut prev = prompt.bos();
            while out.len() < max_len {
                let xt = gather(&params.embedding, &[prev as usize]);
                let xin = concatenate(Axis(1), &[xt.view(), z.view()]).expect("single rows");
                h = gru_step(gru, &xin, &h);
                let u = h.dot(out_w) + out_b;
                let logits = u.dot(&params.embedding.t());
                let tok = argmax(&logits);
                out.push(tok);
                if tok == eos {
                    break;
                }
                prev = tok;
            }
        }
        (DecoderParams::Trf { z_w, z_b, layers }, ArchKind::Trf) => {
            let zr = z.dot(z_w) + z_b;
            let mut prefix: Vec<usize> = vec![prompt.bos() as usize];
            while out.len() < max_len {
                let x = gather(&params.embedding, &prefix);
                let scale = (config.emb_dim as f64).sqrt();
                let x = x.mapv(|v| v * scale);
                let pe = position_table(prefix.len(), config.emb_dim);
                let mut x = x + &pe;
                x += &zr;
                let mask = causal_mask(prefix.len());
                for layer in layers {
                    x = trf_layer(layer, &x, config.trf_heads, Some(&mask));
                }
                let last = x.slice(ndarray::s![x.nrows() - 1..x.nrows(), ..]).to_owned();
                let logits = last.dot(&params.embedding.t());
                let tok = argmax(&logits);
                out.push(tok);
                if tok == eos {
                    break;
                }
                prefix.push(tok as usize);
            }
        }
        _ => panic!("params do not match config decoder kind"),
    }
    out
}
