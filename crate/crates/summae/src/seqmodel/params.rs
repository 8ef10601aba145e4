//! Model configuration and learnable tensors.
//!
//! All tensors are 2-D f64 arrays (biases and gains are (1, n) rows) and
//! carry stable dotted names through the visitors, which the optimizer,
//! checkpoints, and gradient maps key on.

use ndarray::Array2;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Rnn,
    Trf,
}

impl ArchKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "rnn" => Ok(ArchKind::Rnn),
            "trf" => Ok(ArchKind::Trf),
            other => Err(Error::Config(format!("unknown architecture `{other}` (rnn or trf)"))),
        }
    }
}

/// Architecture selection and dimensions for the sequence auto-encoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder_kind: ArchKind,
    pub decoder_kind: ArchKind,
    pub emb_dim: usize,
    pub h_dim: usize,
    pub trf_layers: usize,
    pub trf_heads: usize,
    pub trf_ff: usize,
    pub z_dim: usize,
    pub lambda_s: f64,
    pub lambda_p: f64,
    pub max_len_sentence: usize,
    pub max_len_paragraph: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            encoder_kind: ArchKind::Rnn,
            decoder_kind: ArchKind::Rnn,
            emb_dim: 128,
            h_dim: 512,
            trf_layers: 2,
            trf_heads: 8,
            trf_ff: 512,
            z_dim: 256,
            lambda_s: 1.0,
            lambda_p: 1.0,
            max_len_sentence: 32,
            max_len_paragraph: 128,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("emb_dim", self.emb_dim),
            ("h_dim", self.h_dim),
            ("trf_layers", self.trf_layers),
            ("trf_heads", self.trf_heads),
            ("trf_ff", self.trf_ff),
            ("z_dim", self.z_dim),
            ("max_len_sentence", self.max_len_sentence),
            ("max_len_paragraph", self.max_len_paragraph),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.lambda_s < 0.0 || self.lambda_p < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.lambda_s == 0.0 && self.lambda_p == 0.0 {
            return Err(Error::Config("lambda_s and lambda_p cannot both be zero".into()));
        }
        let uses_trf = self.encoder_kind == ArchKind::Trf || self.decoder_kind == ArchKind::Trf;
        if uses_trf && self.emb_dim % self.trf_heads != 0 {
            return Err(Error::Config(format!(
                "emb_dim {} must divide evenly into {} attention heads",
                self.emb_dim, self.trf_heads
            )));
        }
        Ok(())
    }

    /// Width of the encoder feature the affine head maps to z.
    pub fn encoder_out_dim(&self) -> usize {
        match self.encoder_kind {
            ArchKind::Rnn => 2 * self.h_dim,
            ArchKind::Trf => self.emb_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_xr: Array2<f64>,
    pub w_hr: Array2<f64>,
    pub b_r: Array2<f64>,
    pub w_xu: Array2<f64>,
    pub w_hu: Array2<f64>,
    pub b_u: Array2<f64>,
    pub w_xc: Array2<f64>,
    pub w_hc: Array2<f64>,
    pub b_c: Array2<f64>,
}

impl GruParams {
    fn init(rng: &mut ChaCha8Rng, in_dim: usize, h_dim: usize) -> GruParams {
        GruParams {
            w_xr: glorot(rng, in_dim, h_dim),
            w_hr: glorot(rng, h_dim, h_dim),
            b_r: Array2::zeros((1, h_dim)),
            w_xu: glorot(rng, in_dim, h_dim),
            w_hu: glorot(rng, h_dim, h_dim),
            b_u: Array2::zeros((1, h_dim)),
            w_xc: glorot(rng, in_dim, h_dim),
            w_hc: glorot(rng, h_dim, h_dim),
            b_c: Array2::zeros((1, h_dim)),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Array2<f64>)) {
        f(format!("{prefix}.w_xr"), &self.w_xr);
        f(format!("{prefix}.w_hr"), &self.w_hr);
        f(format!("{prefix}.b_r"), &self.b_r);
        f(format!("{prefix}.w_xu"), &self.w_xu);
        f(format!("{prefix}.w_hu"), &self.w_hu);
        f(format!("{prefix}.b_u"), &self.b_u);
        f(format!("{prefix}.w_xc"), &self.w_xc);
        f(format!("{prefix}.b_c"), &self.b_c);
        f(format!("{prefix}.w_hc"), &self.w_hc);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
        f(format!("{prefix}.w_xr"), &mut self.w_xr);
        f(format!("{prefix}.w_hr"), &mut self.w_hr);
        f(format!("{prefix}.b_r"), &mut self.b_r);
        f(format!("{prefix}.w_xu"), &mut self.w_xu);
        f(format!("{prefix}.w_hu"), &mut self.w_hu);
        f(format!("{prefix}.b_u"), &mut self.b_u);
        f(format!("{prefix}.w_xc"), &mut self.w_xc);
        f(format!("{prefix}.b_c"), &mut self.b_c);
        f(format!("{prefix}.w_hc"), &mut self.w_hc);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrfLayerParams {
    pub wq: Array2<f64>,
    pub bq: Array2<f64>,
    pub wk: Array2<f64>,
    pub bk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
    pub ln1_g: Array2<f64>,
    pub ln1_b: Array2<f64>,
    pub ff_w1: Array2<f64>,
    pub ff_b1: Array2<f64>,
    pub ff_w2: Array2<f64>,
    pub ff_b2: Array2<f64>,
    pub ln2_g: Array2<f64>,
    pub ln2_b: Array2<f64>,
}

impl TrfLayerParams {
    fn init(rng: &mut ChaCha8Rng, d: usize, ff: usize) -> TrfLayerParams {
        TrfLayerParams {
            wq: glorot(rng, d, d),
            bq: Array2::zeros((1, d)),
            wk: glorot(rng, d, d),
            bk: Array2::zeros((1, d)),
            wv: glorot(rng, d, d),
            bv: Array2::zeros((1, d)),
            wo: glorot(rng, d, d),
            bo: Array2::zeros((1, d)),
            ln1_g: Array2::ones((1, d)),
            ln1_b: Array2::zeros((1, d)),
            ff_w1: glorot(rng, d, ff),
            ff_b1: Array2::zeros((1, ff)),
            ff_w2: glorot(rng, ff, d),
            ff_b2: Array2::zeros((1, d)),
            ln2_g: Array2::ones((1, d)),
            ln2_b: Array2::zeros((1, d)),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Array2<f64>)) {
        for (name, t) in self.fields() {
            f(format!("{prefix}.{name}"), t);
        }
    }

    fn fields(&self) -> [(&'static str, &Array2<f64>); 16] {
        [
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("ff_w1", &self.ff_w1),
            ("ff_b1", &self.ff_b1),
            ("ff_w2", &self.ff_w2),
            ("ff_b2", &self.ff_b2),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
        ]
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
        f(format!("{prefix}.wq"), &mut self.wq);
        f(format!("{prefix}.bq"), &mut self.bq);
        f(format!("{prefix}.wk"), &mut self.wk);
        f(format!("{prefix}.bk"), &mut self.bk);
        f(format!("{prefix}.wv"), &mut self.wv);
        f(format!("{prefix}.bv"), &mut self.bv);
        f(format!("{prefix}.wo"), &mut self.wo);
        f(format!("{prefix}.bo"), &mut self.bo);
        f(format!("{prefix}.ln1_g"), &mut self.ln1_g);
        f(format!("{prefix}.ln1_b"), &mut self.ln1_b);
        f(format!("{prefix}.ff_w1"), &mut self.ff_w1);
        f(format!("{prefix}.ff_b1"), &mut self.ff_b1);
        f(format!("{prefix}.ff_w2"), &mut self.ff_w2);
        f(format!("{prefix}.ff_b2"), &mut self.ff_b2);
        f(format!("{prefix}.ln2_g"), &mut self.ln2_g);
        f(format!("{prefix}.ln2_b"), &mut self.ln2_b);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderParams {
    Rnn { fwd: GruParams, bwd: GruParams },
    Trf { layers: Vec<TrfLayerParams> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecoderParams {
    Rnn {
        gru: GruParams,
        out_w: Array2<f64>,
        out_b: Array2<f64>,
    },
    Trf {
        z_w: Array2<f64>,
        z_b: Array2<f64>,
        layers: Vec<TrfLayerParams>,
    },
}

/// All learnable tensors. The embedding matrix is shared storage for the
/// input lookup and the output projection (weight tying).
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub embedding: Array2<f64>,
    pub encoder: EncoderParams,
    pub head_w: Array2<f64>,
    pub head_b: Array2<f64>,
    pub decoder: DecoderParams,
}

impl Params {
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Array2<f64>)) {
        f("embedding".into(), &self.embedding);
        match &self.encoder {
            EncoderParams::Rnn { fwd, bwd } => {
                fwd.visit("enc.fwd", f);
                bwd.visit("enc.bwd", f);
            }
            EncoderParams::Trf { layers } => {
                for (i, layer) in layers.iter().enumerate() {
                    layer.visit(&format!("enc.l{i}"), f);
                }
            }
        }
        f("head.w".into(), &self.head_w);
        f("head.b".into(), &self.head_b);
        match &self.decoder {
            DecoderParams::Rnn { gru, out_w, out_b } => {
                gru.visit("dec.gru", f);
                f("dec.out_w".into(), out_w);
                f("dec.out_b".into(), out_b);
            }
            DecoderParams::Trf { z_w, z_b, layers } => {
                f("dec.z_w".into(), z_w);
                f("dec.z_b".into(), z_b);
                for (i, layer) in layers.iter().enumerate() {
                    layer.visit(&format!("dec.l{i}"), f);
                }
            }
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
        f("embedding".into(), &mut self.embedding);
        match &mut self.encoder {
            EncoderParams::Rnn { fwd, bwd } => {
                fwd.visit_mut("enc.fwd", f);
                bwd.visit_mut("enc.bwd", f);
            }
            EncoderParams::Trf { layers } => {
                for (i, layer) in layers.iter_mut().enumerate() {
                    layer.visit_mut(&format!("enc.l{i}"), f);
                }
            }
        }
        f("head.w".into(), &mut self.head_w);
        f("head.b".into(), &mut self.head_b);
        match &mut self.decoder {
            DecoderParams::Rnn { gru, out_w, out_b } => {
                gru.visit_mut("dec.gru", f);
                f("dec.out_w".into(), out_w);
                f("dec.out_b".into(), out_b);
            }
            DecoderParams::Trf { z_w, z_b, layers } => {
                f("dec.z_w".into(), z_w);
                f("dec.z_b".into(), z_b);
                for (i, layer) in layers.iter_mut().enumerate() {
                    layer.visit_mut(&format!("dec.l{i}"), f);
                }
            }
        }
    }

    pub fn named(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name, t)));
        out
    }

    pub fn tensor_count(&self) -> usize {
        self.named().len()
    }

    pub fn assert_finite(&self) -> Result<()> {
        let mut bad = None;
        self.visit(&mut |name, t| {
            if bad.is_none() && !t.iter().all(|v| v.is_finite()) {
                bad = Some(name);
            }
        });
        match bad {
            Some(group) => Err(Error::NonFinite {
                what: "parameter",
                group,
                step: 0,
            }),
            None => Ok(()),
        }
    }
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Seed-deterministic random initialization. Weight scales keep initial
/// logits near zero, so the starting per-token cost sits near ln(V).
pub fn init_params(config: &ModelConfig, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embedding = glorot(&mut rng, config.vocab_size, config.emb_dim);
    let encoder = match config.encoder_kind {
        ArchKind::Rnn => EncoderParams::Rnn {
            fwd: GruParams::init(&mut rng, config.emb_dim, config.h_dim),
            bwd: GruParams::init(&mut rng, config.emb_dim, config.h_dim),
        },
        ArchKind::Trf => EncoderParams::Trf {
            layers: (0..config.trf_layers)
                .map(|_| TrfLayerParams::init(&mut rng, config.emb_dim, config.trf_ff))
                .collect(),
        },
    };
    let head_w = glorot(&mut rng, config.encoder_out_dim(), config.z_dim);
    let head_b = Array2::zeros((1, config.z_dim));
    let decoder = match config.decoder_kind {
        ArchKind::Rnn => DecoderParams::Rnn {
            gru: GruParams::init(&mut rng, config.emb_dim + config.z_dim, config.h_dim),
            out_w: glorot(&mut rng, config.h_dim, config.emb_dim),
            out_b: Array2::zeros((1, config.emb_dim)),
        },
        ArchKind::Trf => DecoderParams::Trf {
            z_w: glorot(&mut rng, config.z_dim, config.emb_dim),
            z_b: Array2::zeros((1, config.emb_dim)),
            layers: (0..config.trf_layers)
                .map(|_| TrfLayerParams::init(&mut rng, config.emb_dim, config.trf_ff))
                .collect(),
        },
    };
    Params {
        embedding,
        encoder,
        head_w,
        head_b,
        decoder,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config(enc: ArchKind, dec: ArchKind) -> ModelConfig {
        let mut c = ModelConfig::new(16);
        c.encoder_kind = enc;
        c.decoder_kind = dec;
        c.emb_dim = 8;
        c.h_dim = 6;
        c.trf_layers = 1;
        c.trf_heads = 2;
        c.trf_ff = 8;
        c.z_dim = 4;
        c
    }

    #[test]
    fn init_is_seed_deterministic() {
        for (enc, dec) in [(ArchKind::Rnn, ArchKind::Rnn), (ArchKind::Trf, ArchKind::Trf)] {
            let config = toy_config(enc, dec);
            let a = init_params(&config, 11);
            let b = init_params(&config, 11);
            assert_eq!(a, b);
            let c = init_params(&config, 12);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn visitor_names_are_unique_and_stable() {
        let config = toy_config(ArchKind::Trf, ArchKind::Rnn);
        let params = init_params(&config, 0);
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len(), "duplicate tensor names");
        assert!(names.contains(&"embedding".to_string()));
        assert!(names.contains(&"enc.l0.wq".to_string()));
        assert!(names.contains(&"dec.gru.w_xc".to_string()));

        // visit and visit_mut agree on the name set
        let mut params = params;
        let mut mut_names = Vec::new();
        params.visit_mut(&mut |n, _| mut_names.push(n));
        let mut mut_sorted = mut_names.clone();
        mut_sorted.sort();
        assert_eq!(sorted, mut_sorted);
    }

    #[test]
    fn config_validation_catches_bad_dims() {
        let mut c = toy_config(ArchKind::Rnn, ArchKind::Rnn);
        c.validate().unwrap();
        c.z_dim = 0;
        assert!(c.validate().is_err());

        let mut c = toy_config(ArchKind::Trf, ArchKind::Trf);
        c.trf_heads = 3; // does not divide emb_dim = 8
        assert!(c.validate().is_err());

        let mut c = toy_config(ArchKind::Rnn, ArchKind::Rnn);
        c.lambda_s = 0.0;
        c.lambda_p = 0.0;
        assert!(c.validate().is_err());
    }
}
