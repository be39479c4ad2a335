//! Parameter layout and forward pass of the ranker network.
//!
//! Pre-norm transformer blocks. Parameter names, relative to a model
//! prefix (empty, or `m1.` / `m2.` for two-model training):
//!
//! - `enc.tok_emb`, `enc.pos_emb`, `enc.layer{i}.*`, `enc.ln_f.*`:
//!   the encoder, token embeddings included. The decoder reuses
//!   `enc.tok_emb`.
//! - `cls.fc1.*`, `cls.fc2.*`: the classification head.
//! - `dec.pos_emb`, `dec.layer{i}.*`, `dec.ln_f.*`, `dec.out.*`: the
//!   decoder and its vocabulary projection.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::dataset::PAD_ID;
use crate::nn::{Init, NnError, ParamId, ParamStore, Reduction, Tape, Var};
use crate::scalar::Scalar;

use super::{ModelConfig, ModelError};

pub const ENCODER_SCOPE: &str = "enc.";
pub const CLS_SCOPE: &str = "cls.";
pub const DECODER_SCOPE: &str = "dec.";

const EMB_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

/// Bias-free projections; a key bias would only shift every score in a
/// row and has no effect.
#[derive(Debug, Clone, Copy)]
struct Attn {
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Ffn {
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
struct EncLayer {
    ln1: Norm,
    attn: Attn,
    ln2: Norm,
    ffn: Ffn,
}

#[derive(Debug, Clone)]
struct DecLayer {
    ln1: Norm,
    self_attn: Attn,
    ln2: Norm,
    cross_attn: Attn,
    ln3: Norm,
    ffn: Ffn,
}

/// Parameter handles of one model inside a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct RankerModel {
    pub config: ModelConfig,
    pub prefix: String,
    tok_emb: ParamId,
    enc_pos: ParamId,
    enc_layers: Vec<EncLayer>,
    enc_ln: Norm,
    cls_fc1: Linear,
    cls_fc2: Linear,
    dec_pos: ParamId,
    dec_layers: Vec<DecLayer>,
    dec_ln: Norm,
    out: Linear,
}

/// The model that owns the classification head and the one that owns the
/// decoder. Both are the same model except under two-model training.
#[derive(Debug, Clone)]
pub struct Models {
    pub cls: RankerModel,
    pub gen: RankerModel,
}

impl Models {
    pub fn shared(model: RankerModel) -> Self {
        Models {
            cls: model.clone(),
            gen: model,
        }
    }

    pub fn is_shared(&self) -> bool {
        self.cls.prefix == self.gen.prefix
    }
}

enum Builder<'s, T: Scalar> {
    Init(&'s mut ParamStore<T>, SplitMix64),
    Bind(&'s ParamStore<T>),
}

impl<T: Scalar> Builder<'_, T> {
    fn param(&mut self, name: String, shape: Vec<usize>, init: Init) -> Result<ParamId, ModelError> {
        match self {
            Builder::Init(store, rng) => Ok(store.insert_init(&name, shape, init, rng)?),
            Builder::Bind(store) => {
                let id = store.id(&name)?;
                if store.get(id).shape() != shape.as_slice() {
                    return Err(NnError::ShapeMismatch {
                        op: "bind",
                        lhs: store.get(id).shape().to_vec(),
                        rhs: shape,
                    }
                    .into());
                }
                Ok(id)
            }
        }
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear, ModelError> {
        Ok(Linear {
            w: self.param(format!("{name}.w"), vec![fan_in, fan_out], Init::XavierUniform)?,
            b: self.param(format!("{name}.b"), vec![fan_out], Init::Zeros)?,
        })
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<Norm, ModelError> {
        Ok(Norm {
            g: self.param(format!("{name}.g"), vec![d], Init::Ones)?,
            b: self.param(format!("{name}.b"), vec![d], Init::Zeros)?,
        })
    }

    fn attn(&mut self, name: &str, d: usize) -> Result<Attn, ModelError> {
        let mut w = |s: &str| self.param(format!("{name}.{s}"), vec![d, d], Init::XavierUniform);
        Ok(Attn {
            q: w("q")?,
            k: w("k")?,
            v: w("v")?,
            o: w("o")?,
        })
    }

    fn ffn(&mut self, name: &str, d: usize, hidden: usize) -> Result<Ffn, ModelError> {
        Ok(Ffn {
            fc1: self.linear(&format!("{name}.fc1"), d, hidden)?,
            fc2: self.linear(&format!("{name}.fc2"), hidden, d)?,
        })
    }

    fn model(&mut self, cfg: &ModelConfig, prefix: &str) -> Result<RankerModel, ModelError> {
        cfg.validate()?;
        let d = cfg.d_model;
        let p = |s: &str| format!("{prefix}{s}");
        let tok_emb = self.param(p("enc.tok_emb"), vec![cfg.vocab_size, d], Init::Normal(EMB_STD))?;
        let enc_pos = self.param(p("enc.pos_emb"), vec![cfg.max_seq_len, d], Init::Normal(EMB_STD))?;
        let mut enc_layers = Vec::with_capacity(cfg.n_encoder_layers);
        for i in 0..cfg.n_encoder_layers {
            let l = p(&format!("enc.layer{i}"));
            enc_layers.push(EncLayer {
                ln1: self.norm(&format!("{l}.ln1"), d)?,
                attn: self.attn(&format!("{l}.attn"), d)?,
                ln2: self.norm(&format!("{l}.ln2"), d)?,
                ffn: self.ffn(&format!("{l}.ffn"), d, cfg.ffn_dim)?,
            });
        }
        let enc_ln = self.norm(&p("enc.ln_f"), d)?;
        let cls_fc1 = self.linear(&p("cls.fc1"), d, d)?;
        let cls_fc2 = self.linear(&p("cls.fc2"), d, cfg.n_classes)?;
        let dec_pos = self.param(p("dec.pos_emb"), vec![cfg.max_target_len, d], Init::Normal(EMB_STD))?;
        let mut dec_layers = Vec::with_capacity(cfg.n_decoder_layers);
        for i in 0..cfg.n_decoder_layers {
            let l = p(&format!("dec.layer{i}"));
            dec_layers.push(DecLayer {
                ln1: self.norm(&format!("{l}.ln1"), d)?,
                self_attn: self.attn(&format!("{l}.self_attn"), d)?,
                ln2: self.norm(&format!("{l}.ln2"), d)?,
                cross_attn: self.attn(&format!("{l}.cross_attn"), d)?,
                ln3: self.norm(&format!("{l}.ln3"), d)?,
                ffn: self.ffn(&format!("{l}.ffn"), d, cfg.ffn_dim)?,
            });
        }
        let dec_ln = self.norm(&p("dec.ln_f"), d)?;
        let out = self.linear(&p("dec.out"), d, cfg.vocab_size)?;
        Ok(RankerModel {
            config: cfg.clone(),
            prefix: prefix.to_string(),
            tok_emb,
            enc_pos,
            enc_layers,
            enc_ln,
            cls_fc1,
            cls_fc2,
            dec_pos,
            dec_layers,
            dec_ln,
            out,
        })
    }
}

impl RankerModel {
    /// Adds freshly initialized parameters under `prefix`, drawing from a
    /// SplitMix64 stream seeded with `seed`.
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        cfg: &ModelConfig,
        prefix: &str,
        seed: u64,
    ) -> Result<Self, ModelError> {
        Builder::Init(store, SplitMix64::seed_from_u64(seed)).model(cfg, prefix)
    }

    /// Looks up existing parameters under `prefix`, checking shapes.
    pub fn bind<T: Scalar>(store: &ParamStore<T>, cfg: &ModelConfig, prefix: &str) -> Result<Self, ModelError> {
        Builder::Bind(store).model(cfg, prefix)
    }

    pub fn encoder_prefix(&self) -> String {
        format!("{}{ENCODER_SCOPE}", self.prefix)
    }

    pub fn cls_prefix(&self) -> String {
        format!("{}{CLS_SCOPE}", self.prefix)
    }
}

/// One forward computation over a tape, with optional inverted dropout.
pub(crate) struct Forward<'a, T: Scalar> {
    pub tape: Tape<'a, T>,
    store: &'a ParamStore<T>,
    dropout: Option<(f64, SplitMix64)>,
}

impl<'a, T: Scalar> Forward<'a, T> {
    pub fn new(store: &'a ParamStore<T>, dropout: Option<(f64, u64)>) -> Self {
        Forward {
            tape: Tape::new(),
            store,
            dropout: dropout
                .filter(|(p, _)| *p > 0.0)
                .map(|(p, seed)| (p, SplitMix64::seed_from_u64(seed))),
        }
    }

    fn p(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    fn matmul(&mut self, x: Var, w: ParamId) -> Result<Var, NnError> {
        let w = self.p(w);
        self.tape.matmul(x, w)
    }

    fn linear(&mut self, x: Var, l: Linear) -> Result<Var, NnError> {
        let w = self.p(l.w);
        let b = self.p(l.b);
        let y = self.tape.matmul(x, w)?;
        self.tape.add_row(y, b)
    }

    fn norm(&mut self, x: Var, n: Norm) -> Result<Var, NnError> {
        let g = self.p(n.g);
        let b = self.p(n.b);
        self.tape.layer_norm(x, g, b)
    }

    fn drop(&mut self, x: Var) -> Result<Var, NnError> {
        let Some((p, rng)) = self.dropout.as_mut() else {
            return Ok(x);
        };
        let (r, c) = self.tape.shape(x);
        let keep = T::lit(1.0 / (1.0 - *p));
        let mask = (0..r * c)
            .map(|_| if rng.random::<f64>() < *p { T::zero() } else { keep })
            .collect();
        let m = self.tape.constant(r, c, mask)?;
        self.tape.mul(x, m)
    }

    fn attn(&mut self, x: Var, mem: Var, a: Attn, heads: usize, causal: bool) -> Result<Var, NnError> {
        let q = self.matmul(x, a.q)?;
        let k = self.matmul(mem, a.k)?;
        let v = self.matmul(mem, a.v)?;
        let h = self.tape.attention(q, k, v, heads, causal)?;
        self.matmul(h, a.o)
    }

    fn ffn(&mut self, x: Var, f: Ffn) -> Result<Var, NnError> {
        let h = self.linear(x, f.fc1)?;
        let h = self.tape.relu(h);
        self.linear(h, f.fc2)
    }

    fn residual(&mut self, x: Var, y: Var) -> Result<Var, NnError> {
        let y = self.drop(y)?;
        self.tape.add(x, y)
    }

    fn embed(&mut self, ids: &[u32], pos_table: ParamId, tok: ParamId) -> Result<Var, NnError> {
        let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..ids.len()).collect();
        let tok = self.p(tok);
        let pos = self.p(pos_table);
        let e = self.tape.embedding(tok, &ids)?;
        let p = self.tape.embedding(pos, &positions)?;
        let x = self.tape.add(e, p)?;
        self.drop(x)
    }

    /// Final encoder states, one row per input position.
    pub fn encode(&mut self, m: &RankerModel, ids: &[u32]) -> Result<Var, NnError> {
        let heads = m.config.n_heads;
        let mut x = self.embed(ids, m.enc_pos, m.tok_emb)?;
        for l in &m.enc_layers {
            let h = self.norm(x, l.ln1)?;
            let h = self.attn(h, h, l.attn, heads, false)?;
            x = self.residual(x, h)?;
            let h = self.norm(x, l.ln2)?;
            let h = self.ffn(h, l.ffn)?;
            x = self.residual(x, h)?;
        }
        self.norm(x, m.enc_ln)
    }

    /// Class logits (1 x n_classes) read from the position-0 state.
    pub fn cls_logits(&mut self, m: &RankerModel, enc: Var) -> Result<Var, NnError> {
        let h0 = self.tape.row(enc, 0)?;
        let h = self.linear(h0, m.cls_fc1)?;
        let h = self.tape.relu(h);
        self.linear(h, m.cls_fc2)
    }

    /// Next-token logits (len(ids) x vocab) under causal self-attention and
    /// cross-attention over `mem`.
    pub fn decode(&mut self, m: &RankerModel, mem: Var, ids: &[u32]) -> Result<Var, NnError> {
        let heads = m.config.n_heads;
        let mut x = self.embed(ids, m.dec_pos, m.tok_emb)?;
        for l in &m.dec_layers {
            let h = self.norm(x, l.ln1)?;
            let h = self.attn(h, h, l.self_attn, heads, true)?;
            x = self.residual(x, h)?;
            let h = self.norm(x, l.ln2)?;
            let h = self.attn(h, mem, l.cross_attn, heads, false)?;
            x = self.residual(x, h)?;
            let h = self.norm(x, l.ln3)?;
            let h = self.ffn(h, l.ffn)?;
            x = self.residual(x, h)?;
        }
        let x = self.norm(x, m.dec_ln)?;
        self.linear(x, m.out)
    }

    /// Summed cross-entropy of `label` under the classification head.
    pub fn cls_ce(&mut self, m: &RankerModel, input_ids: &[u32], label: usize) -> Result<Var, NnError> {
        let enc = self.encode(m, input_ids)?;
        let logits = self.cls_logits(m, enc)?;
        self.tape.cross_entropy(logits, &[label], None, Reduction::Sum)
    }

    /// Teacher-forced summed token cross-entropy of `target`
    /// (`[BOS] .. [EOS]`), ignoring padding.
    pub fn gen_ce(&mut self, m: &RankerModel, input_ids: &[u32], target: &[u32]) -> Result<Var, NnError> {
        let enc = self.encode(m, input_ids)?;
        let n = target.len();
        let logits = self.decode(m, enc, &target[..n - 1])?;
        let next: Vec<usize> = target[1..].iter().map(|&t| t as usize).collect();
        self.tape
            .cross_entropy(logits, &next, Some(PAD_ID as usize), Reduction::Sum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            ffn_dim: 16,
            max_seq_len: 12,
            max_target_len: 6,
            vocab_size: 14,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn init_then_bind_agree() {
        let mut s = ParamStore::<f64>::new();
        let m = RankerModel::init(&mut s, &toy(), "m1.", 3).unwrap();
        let b = RankerModel::bind(&s, &toy(), "m1.").unwrap();
        assert_eq!(format!("{m:?}"), format!("{b:?}"));
        assert!(s.by_name("m1.enc.tok_emb").is_some());
        assert!(s.by_name("m1.cls.fc2.w").is_some());
        assert!(RankerModel::bind(&s, &toy(), "m2.").is_err());
        let wrong = ModelConfig { d_model: 4, ..toy() };
        assert!(RankerModel::bind(&s, &wrong, "m1.").is_err());
    }

    #[test]
    fn init_is_seeded() {
        let mut a = ParamStore::<f64>::new();
        let mut b = ParamStore::<f64>::new();
        RankerModel::init(&mut a, &toy(), "", 5).unwrap();
        RankerModel::init(&mut b, &toy(), "", 5).unwrap();
        assert_eq!(a, b);
        let mut c = ParamStore::<f64>::new();
        RankerModel::init(&mut c, &toy(), "", 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_through_the_network() {
        let mut s = ParamStore::<f64>::new();
        let m = RankerModel::init(&mut s, &toy(), "", 1).unwrap();
        let mut f = Forward::new(&s, None);
        let enc = f.encode(&m, &[4, 6, 9, 7, 10, 3]).unwrap();
        assert_eq!(f.tape.shape(enc), (6, 8));
        let logits = f.cls_logits(&m, enc).unwrap();
        assert_eq!(f.tape.shape(logits), (1, 3));
        let dec = f.decode(&m, enc, &[2, 11, 12]).unwrap();
        assert_eq!(f.tape.shape(dec), (3, 14));
    }

    #[test]
    fn decoder_is_causal() {
        let mut s = ParamStore::<f64>::new();
        let m = RankerModel::init(&mut s, &toy(), "", 2).unwrap();
        let run = |ids: &[u32]| {
            let mut f = Forward::new(&s, None);
            let enc = f.encode(&m, &[4, 6, 9, 3]).unwrap();
            let d = f.decode(&m, enc, ids).unwrap();
            f.tape.value(d)[..14].to_vec()
        };
        assert_eq!(run(&[2, 11, 12]), run(&[2, 13, 8]));
    }

    #[test]
    fn dropout_is_seeded_and_off_by_default() {
        let mut s = ParamStore::<f64>::new();
        let cfg = ModelConfig { dropout: 0.5, ..toy() };
        let m = RankerModel::init(&mut s, &cfg, "", 2).unwrap();
        let run = |d: Option<(f64, u64)>| {
            let mut f = Forward::new(&s, d);
            let enc = f.encode(&m, &[4, 6, 9, 3]).unwrap();
            f.tape.value(enc).to_vec()
        };
        assert_eq!(run(Some((0.5, 1))), run(Some((0.5, 1))));
        assert_ne!(run(Some((0.5, 1))), run(None));
        assert_eq!(run(Some((0.0, 1))), run(None));
    }
}
