//! Tape-side graph construction for the encoders, decoders, and the
//! reconstruction objective. The plain (gradient-free) twins of these
//! routines live in `forward.rs` and must mirror the op order exactly.

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;

use crate::noising::NoisedExample;
use crate::subword::{CLS, TokenId};

use super::params::{ModelConfig, Params};
use super::tape::{Gradients, NodeId, Tape};
use super::{DecodePrompt, NamedGrads};

/// Parameter tensors bound onto a tape as leaves, keyed by their
/// visitor names.
pub(crate) struct Binder {
    index: HashMap<String, NodeId>,
}

impl Binder {
    pub fn bind(tape: &mut Tape, params: &Params) -> Binder {
        let mut index = HashMap::new();
        params.visit(&mut |name, tensor| {
            let id = tape.leaf(tensor.clone());
            index.insert(name, id);
        });
        Binder { index }
    }

    pub fn node(&self, name: &str) -> NodeId {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter `{name}`"))
    }

    /// Drain leaf gradients into a name-keyed map. Leaves that never
    /// received gradient are omitted; callers treat them as zero.
    pub fn collect(&self, grads: &mut Gradients) -> NamedGrads {
        let mut out = BTreeMap::new();
        for (name, &id) in &self.index {
            if let Some(g) = grads.take(id) {
                out.insert(name.clone(), g);
            }
        }
        out
    }
}

struct GruNodes {
    w_xr: NodeId,
    w_hr: NodeId,
    b_r: NodeId,
    w_xu: NodeId,
    w_hu: NodeId,
    b_u: NodeId,
    w_xc: NodeId,
    w_hc: NodeId,
    b_c: NodeId,
}

impl GruNodes {
    fn resolve(b: &Binder, prefix: &str) -> GruNodes {
        GruNodes {
            w_xr: b.node(&format!("{prefix}.w_xr")),
            w_hr: b.node(&format!("{prefix}.w_hr")),
            b_r: b.node(&format!("{prefix}.b_r")),
            w_xu: b.node(&format!("{prefix}.w_xu")),
            w_hu: b.node(&format!("{prefix}.w_hu")),
            b_u: b.node(&format!("{prefix}.b_u")),
            w_xc: b.node(&format!("{prefix}.w_xc")),
            w_hc: b.node(&format!("{prefix}.w_hc")),
            b_c: b.node(&format!("{prefix}.b_c")),
        }
    }
}

/// One gated recurrent step: reset gate applies to the previous state
/// before the candidate, new state interpolates via the update gate.
fn gru_step(tape: &mut Tape, g: &GruNodes, x: NodeId, h: NodeId) -> NodeId {
    let xr = tape.matmul(x, g.w_xr);
    let hr = tape.matmul(h, g.w_hr);
    let r_pre = tape.add(xr, hr);
    let r_pre = tape.add_row(r_pre, g.b_r);
    let r = tape.sigmoid(r_pre);

    let xu = tape.matmul(x, g.w_xu);
    let hu = tape.matmul(h, g.w_hu);
    let u_pre = tape.add(xu, hu);
    let u_pre = tape.add_row(u_pre, g.b_u);
    let u = tape.sigmoid(u_pre);

    let rh = tape.mul(r, h);
    let xc = tape.matmul(x, g.w_xc);
    let hc = tape.matmul(rh, g.w_hc);
    let c_pre = tape.add(xc, hc);
    let c_pre = tape.add_row(c_pre, g.b_c);
    let c = tape.tanh(c_pre);

    let keep = tape.affine(u, -1.0, 1.0);
    let kept = tape.mul(keep, h);
    let new = tape.mul(u, c);
    tape.add(kept, new)
}

struct TrfLayerNodes {
    wq: NodeId,
    bq: NodeId,
    wk: NodeId,
    bk: NodeId,
    wv: NodeId,
    bv: NodeId,
    wo: NodeId,
    bo: NodeId,
    ln1_g: NodeId,
    ln1_b: NodeId,
    ff_w1: NodeId,
    ff_b1: NodeId,
    ff_w2: NodeId,
    ff_b2: NodeId,
    ln2_g: NodeId,
    ln2_b: NodeId,
}

impl TrfLayerNodes {
    fn resolve(b: &Binder, prefix: &str) -> TrfLayerNodes {
        TrfLayerNodes {
            wq: b.node(&format!("{prefix}.wq")),
            bq: b.node(&format!("{prefix}.bq")),
            wk: b.node(&format!("{prefix}.wk")),
            bk: b.node(&format!("{prefix}.bk")),
            wv: b.node(&format!("{prefix}.wv")),
            bv: b.node(&format!("{prefix}.bv")),
            wo: b.node(&format!("{prefix}.wo")),
            bo: b.node(&format!("{prefix}.bo")),
            ln1_g: b.node(&format!("{prefix}.ln1_g")),
            ln1_b: b.node(&format!("{prefix}.ln1_b")),
            ff_w1: b.node(&format!("{prefix}.ff_w1")),
            ff_b1: b.node(&format!("{prefix}.ff_b1")),
            ff_w2: b.node(&format!("{prefix}.ff_w2")),
            ff_b2: b.node(&format!("{prefix}.ff_b2")),
            ln2_g: b.node(&format!("{prefix}.ln2_g")),
            ln2_b: b.node(&format!("{prefix}.ln2_b")),
        }
    }
}

/// Sinusoidal position table, added to scaled embeddings.
pub(crate) fn position_table(len: usize, dim: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((len, dim));
    for pos in 0..len {
        for i in 0..dim {
            let exponent = (2 * (i / 2)) as f64 / dim as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            pe[[pos, i]] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

pub(crate) fn causal_mask(len: usize) -> Array2<f64> {
    let mut mask = Array2::zeros((len, len));
    for r in 0..len {
        for c in (r + 1)..len {
            mask[[r, c]] = -1e30;
        }
    }
    mask
}

/// Post-norm transformer block: self-attention then feed-forward, each
/// followed by residual add and layer norm.
fn trf_layer(
    tape: &mut Tape,
    l: &TrfLayerNodes,
    x: NodeId,
    heads: usize,
    mask: Option<&Array2<f64>>,
) -> NodeId {
    let d = tape.value(x).ncols();
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();

    let q = tape.matmul(x, l.wq);
    let q = tape.add_row(q, l.bq);
    let k = tape.matmul(x, l.wk);
    let k = tape.add_row(k, l.bk);
    let v = tape.matmul(x, l.wv);
    let v = tape.add_row(v, l.bv);

    let mut ctx: Option<NodeId> = None;
    for h in 0..heads {
        let (lo, hi) = (h * dk, (h + 1) * dk);
        let qh = tape.cols(q, lo, hi);
        let kh = tape.cols(k, lo, hi);
        let vh = tape.cols(v, lo, hi);
        let scores = tape.matmul_nt(qh, kh);
        let mut scores = tape.affine(scores, scale, 0.0);
        if let Some(m) = mask {
            scores = tape.add_const(scores, m);
        }
        let attn = tape.softmax_rows(scores);
        let head_ctx = tape.matmul(attn, vh);
        ctx = Some(match ctx {
            Some(prev) => tape.concat_cols(prev, head_ctx),
            None => head_ctx,
        });
    }
    let ctx = ctx.expect("at least one attention head");
    let proj = tape.matmul(ctx, l.wo);
    let proj = tape.add_row(proj, l.bo);
    let res = tape.add(x, proj);
    let x = tape.layer_norm(res, l.ln1_g, l.ln1_b);

    let ff = tape.matmul(x, l.ff_w1);
    let ff = tape.add_row(ff, l.ff_b1);
    let ff = tape.relu(ff);
    let ff = tape.matmul(ff, l.ff_w2);
    let ff = tape.add_row(ff, l.ff_b2);
    let res = tape.add(x, ff);
    tape.layer_norm(res, l.ln2_g, l.ln2_b)
}

/// Encode a token sequence to a (1, z_dim) latent node.
pub(crate) fn encode_graph(
    tape: &mut Tape,
    b: &Binder,
    config: &ModelConfig,
    input: &[TokenId],
) -> NodeId {
    let emb = b.node("embedding");
    let feature = match config.encoder_kind {
        super::ArchKind::Rnn => {
            let indices: Vec<usize> = input.iter().map(|&t| t as usize).collect();
            let x = tape.gather(emb, &indices);
            let fwd = GruNodes::resolve(b, "enc.fwd");
            let bwd = GruNodes::resolve(b, "enc.bwd");
            let h0 = tape.leaf(Array2::zeros((1, config.h_dim)));
            let mut hf = h0;
            for t in 0..indices.len() {
                let xt = tape.row(x, t);
                hf = gru_step(tape, &fwd, xt, hf);
            }
            let h0 = tape.leaf(Array2::zeros((1, config.h_dim)));
            let mut hb = h0;
            for t in (0..indices.len()).rev() {
                let xt = tape.row(x, t);
                hb = gru_step(tape, &bwd, xt, hb);
            }
            tape.concat_cols(hf, hb)
        }
        super::ArchKind::Trf => {
            // A dedicated leading token gives the pooled position an
            // input-independent anchor.
            let mut indices = Vec::with_capacity(input.len() + 1);
            indices.push(CLS as usize);
            indices.extend(input.iter().map(|&t| t as usize));
            let x = tape.gather(emb, &indices);
            let scale = (config.emb_dim as f64).sqrt();
            let x = tape.affine(x, scale, 0.0);
            let pe = position_table(indices.len(), config.emb_dim);
            let mut x = tape.add_const(x, &pe);
            for i in 0..config.trf_layers {
                let layer = TrfLayerNodes::resolve(b, &format!("enc.l{i}"));
                x = trf_layer(tape, &layer, x, config.trf_heads, None);
            }
            tape.row(x, 0)
        }
    };
    let head_w = b.node("head.w");
    let head_b = b.node("head.b");
    let z = tape.matmul(feature, head_w);
    tape.add_row(z, head_b)
}

/// Teacher-forced decoder logits, one row per target position.
pub(crate) fn decode_logits_graph(
    tape: &mut Tape,
    b: &Binder,
    config: &ModelConfig,
    z: NodeId,
    prompt: DecodePrompt,
    target: &[TokenId],
) -> NodeId {
    let emb = b.node("embedding");
    let mut in_indices = Vec::with_capacity(target.len());
    in_indices.push(prompt.bos() as usize);
    in_indices.extend(target[..target.len() - 1].iter().map(|&t| t as usize));

    let pre = match config.decoder_kind {
        super::ArchKind::Rnn => {
            let x = tape.gather(emb, &in_indices);
            let gru = GruNodes::resolve(b, "dec.gru");
            let h0 = tape.leaf(Array2::zeros((1, config.h_dim)));
            let mut h = h0;
            let mut states = Vec::with_capacity(in_indices.len());
            for t in 0..in_indices.len() {
                let xt = tape.row(x, t);
                let xt = tape.concat_cols(xt, z);
                h = gru_step(tape, &gru, xt, h);
                states.push(h);
            }
            let hs = tape.concat_rows(states);
            let out_w = b.node("dec.out_w");
            let out_b = b.node("dec.out_b");
            let u = tape.matmul(hs, out_w);
            tape.add_row(u, out_b)
        }
        super::ArchKind::Trf => {
            let x = tape.gather(emb, &in_indices);
            let scale = (config.emb_dim as f64).sqrt();
            let x = tape.affine(x, scale, 0.0);
            let pe = position_table(in_indices.len(), config.emb_dim);
            let x = tape.add_const(x, &pe);
            let z_w = b.node("dec.z_w");
            let z_b = b.node("dec.z_b");
            let zr = tape.matmul(z, z_w);
            let zr = tape.add_row(zr, z_b);
            let mut x = tape.add_row(x, zr);
            let mask = causal_mask(in_indices.len());
            for i in 0..config.trf_layers {
                let layer = TrfLayerNodes::resolve(b, &format!("dec.l{i}"));
                x = trf_layer(tape, &layer, x, config.trf_heads, Some(&mask));
            }
            x
        }
    };
    // Tied output projection onto the embedding.
    tape.matmul_nt(pre, emb)
}

/// Mean per-token negative log-likelihood of `target` given `z`.
pub(crate) fn nll_graph(
    tape: &mut Tape,
    b: &Binder,
    config: &ModelConfig,
    z: NodeId,
    prompt: DecodePrompt,
    target: &[TokenId],
) -> NodeId {
    let logits = decode_logits_graph(tape, b, config, z, prompt, target);
    let targets: Vec<usize> = target.iter().map(|&t| t as usize).collect();
    tape.cross_entropy_mean(logits, &targets)
}

pub(crate) struct ReconGraph {
    pub loss: NodeId,
    /// Latent of the noised paragraph, when the paragraph term was built.
    pub paragraph_z: Option<NodeId>,
}

/// Two-term denoising objective: lambda_s times the mean of per-sentence
/// reconstruction costs plus lambda_p times the paragraph reconstruction
/// cost. Zero-weight terms are skipped entirely.
pub(crate) fn reconstruction_graph(
    tape: &mut Tape,
    b: &Binder,
    config: &ModelConfig,
    sentences: &[NoisedExample],
    paragraph: &NoisedExample,
) -> ReconGraph {
    let mut total: Option<NodeId> = None;
    if config.lambda_s > 0.0 {
        let mut sum: Option<NodeId> = None;
        for ex in sentences {
            let z = encode_graph(tape, b, config, &ex.encoder_input);
            let nll = nll_graph(tape, b, config, z, DecodePrompt::Sentence, &ex.clean_target);
            sum = Some(match sum {
                Some(prev) => tape.add(prev, nll),
                None => nll,
            });
        }
        if let Some(sum) = sum {
            let mean = tape.affine(sum, 1.0 / sentences.len() as f64, 0.0);
            total = Some(tape.affine(mean, config.lambda_s, 0.0));
        }
    }
    let mut paragraph_z = None;
    if config.lambda_p > 0.0 {
        let z = encode_graph(tape, b, config, &paragraph.encoder_input);
        paragraph_z = Some(z);
        let nll = nll_graph(tape, b, config, z, DecodePrompt::Paragraph, &paragraph.clean_target);
        let weighted = tape.affine(nll, config.lambda_p, 0.0);
        total = Some(match total {
            Some(prev) => tape.add(prev, weighted),
            None => weighted,
        });
    }
    ReconGraph {
        loss: total.expect("lambda_s and lambda_p are not both zero"),
        paragraph_z,
    }
}
