//! Encoder–decoder transformer with a tanh-gated visual fusion layer on the
//! encoder output.
//!
//! Fusion (one text sequence of n tokens, one image):
//!
//! ```text
//! h_img   = A·feature + a                      (1 × img_dim, broadcast to n rows)
//! H_fused = [H_text ; h_img]                   (n × (d_model + img_dim))
//! Λ       = tanh(W_gate·[H_text ; H_fused] + b) (n × d_model)
//! H_out   = H_text + 1(img) · Λ ⊙ (H_fused·W_proj)
//! ```
//!
//! With no image the indicator is 0 and `H_out` is `H_text` itself.

mod checkpoint;
mod config;
mod decode;
mod params;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::rng::Rng;
use crate::tokenizer::{BOS, EOS, PAD, SEP};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{Mode, ModelConfig};
pub use decode::Translation;
pub use params::ParamStore;

const LN_EPS: f64 = 1e-5;
const MASKED: f64 = -1e9;

#[derive(Clone, Debug)]
struct LnIdx {
    g: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct AttnIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Clone, Debug)]
struct FfIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug)]
struct EncLayer {
    attn_ln: LnIdx,
    attn: AttnIdx,
    ff_ln: LnIdx,
    ff: FfIdx,
}

#[derive(Clone, Debug)]
struct DecLayer {
    self_ln: LnIdx,
    self_attn: AttnIdx,
    cross_ln: LnIdx,
    cross_attn: AttnIdx,
    ff_ln: LnIdx,
    ff: FfIdx,
}

#[derive(Clone, Debug)]
struct FusionIdx {
    adapter_w: usize,
    adapter_b: usize,
    proj_w: usize,
    gate_w: usize,
    gate_b: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    embed: usize,
    enc: Vec<EncLayer>,
    enc_ln: LnIdx,
    dec: Vec<DecLayer>,
    dec_ln: LnIdx,
    out_w: usize,
    out_b: usize,
    fusion: Option<FusionIdx>,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: Rng,
}

impl Init<'_> {
    fn xavier(&mut self, name: &str, rows: usize, cols: usize) -> usize {
        let mut r = self.rng.stream(&format!("init/{name}"));
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| (2.0 * r.uniform() - 1.0) * bound).collect();
        self.store.add(name, Tensor::matrix(rows, cols, data).expect("positive dims"))
    }

    fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> usize {
        let mut r = self.rng.stream(&format!("init/{name}"));
        let data = (0..rows * cols).map(|_| r.normal() * std).collect();
        self.store.add(name, Tensor::matrix(rows, cols, data).expect("positive dims"))
    }

    fn constant(&mut self, name: &str, cols: usize, value: f64) -> usize {
        self.store.add(name, Tensor::full(&[1, cols], value))
    }

    fn ln(&mut self, name: &str, d: usize) -> LnIdx {
        LnIdx {
            g: self.constant(&format!("{name}.g"), d, 1.0),
            b: self.constant(&format!("{name}.b"), d, 0.0),
        }
    }

    fn attn(&mut self, name: &str, d: usize) -> AttnIdx {
        AttnIdx {
            wq: self.xavier(&format!("{name}.wq"), d, d),
            bq: self.constant(&format!("{name}.bq"), d, 0.0),
            wk: self.xavier(&format!("{name}.wk"), d, d),
            bk: self.constant(&format!("{name}.bk"), d, 0.0),
            wv: self.xavier(&format!("{name}.wv"), d, d),
            bv: self.constant(&format!("{name}.bv"), d, 0.0),
            wo: self.xavier(&format!("{name}.wo"), d, d),
            bo: self.constant(&format!("{name}.bo"), d, 0.0),
        }
    }

    fn ff(&mut self, name: &str, d: usize, d_ff: usize) -> FfIdx {
        FfIdx {
            w1: self.xavier(&format!("{name}.w1"), d, d_ff),
            b1: self.constant(&format!("{name}.b1"), d_ff, 0.0),
            w2: self.xavier(&format!("{name}.w2"), d_ff, d),
            b2: self.constant(&format!("{name}.b2"), d, 0.0),
        }
    }
}

/// Intermediate values of one encoder pass, as tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub h_text: Tensor,
    /// `[H_text ; h_img]`, present only when an image was fused.
    pub h_fused: Option<Tensor>,
    /// Gate `Λ`, present only when an image was fused.
    pub lambda: Option<Tensor>,
    /// `Λ ⊙ (H_fused·W_proj)`, the term added to `H_text`.
    pub gated: Option<Tensor>,
    pub h_out: Tensor,
    pub indicator: u8,
}

/// Graph nodes of one encoder pass.
#[derive(Clone, Copy, Debug)]
pub struct EncoderNodes {
    pub h_text: Var,
    pub h_fused: Option<Var>,
    pub lambda: Option<Var>,
    pub gated: Option<Var>,
    pub h_out: Var,
}

/// One source/target pair as the network consumes it.
#[derive(Clone, Copy, Debug)]
pub struct Seq2Seq<'a> {
    pub source: &'a [u32],
    pub target: &'a [u32],
    pub image: Option<&'a [f64]>,
}

/// Attention probabilities recorded during a forward pass, `[layer][head]`.
#[derive(Clone, Debug, Default)]
pub struct AttentionMaps {
    pub encoder_self: Vec<Vec<Tensor>>,
    pub decoder_self: Vec<Vec<Tensor>>,
    pub decoder_cross: Vec<Vec<Tensor>>,
}

#[derive(Default)]
struct AttnRecord {
    encoder_self: Vec<Vec<Var>>,
    decoder_self: Vec<Vec<Var>>,
    decoder_cross: Vec<Vec<Var>>,
}

/// Padded batch of examples (PAD = 0 fills the tail of shorter rows).
#[derive(Clone, Debug)]
pub struct Batch {
    pub sources: Vec<Vec<u32>>,
    pub targets: Vec<Vec<u32>>,
    pub images: Vec<Option<Vec<f64>>>,
}

impl Batch {
    /// Pads ragged rows with PAD.
    pub fn pad(
        sources: Vec<Vec<u32>>,
        targets: Vec<Vec<u32>>,
        images: Vec<Option<Vec<f64>>>,
    ) -> Result<Self> {
        let pad_to = |rows: Vec<Vec<u32>>| {
            let n = rows.iter().map(Vec::len).max().unwrap_or(0);
            rows.into_iter()
                .map(|mut r| {
                    r.resize(n, PAD);
                    r
                })
                .collect::<Vec<_>>()
        };
        Self::new(pad_to(sources), pad_to(targets), images)
    }

    /// Rows must already be padded to equal length.
    pub fn new(
        sources: Vec<Vec<u32>>,
        targets: Vec<Vec<u32>>,
        images: Vec<Option<Vec<f64>>>,
    ) -> Result<Self> {
        let n = sources.len();
        if targets.len() != n || images.len() != n {
            return Err(Error::input("batch columns have different row counts"));
        }
        for rows in [&sources, &targets] {
            if let Some(first) = rows.first() {
                if rows.iter().any(|r| r.len() != first.len()) {
                    return Err(Error::input("ragged batch; pad rows with PAD first"));
                }
            }
        }
        Ok(Self {
            sources,
            targets,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

fn strip_pad(tokens: &[u32]) -> &[u32] {
    let end = tokens.iter().rposition(|&t| t != PAD).map_or(0, |i| i + 1);
    &tokens[..end]
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
    positions: Tensor,
}

fn sinusoids(max_positions: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; max_positions * d];
    for pos in 0..max_positions {
        for i in 0..d {
            let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * rate;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(max_positions, d, data).expect("positive dims")
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut store = ParamStore::default();
        let mut init = Init {
            store: &mut store,
            rng: Rng::new(config.seed),
        };
        let embed = init.normal("embed", config.vocab_size, d, (d as f64).powf(-0.5));
        let enc = (0..config.enc_layers)
            .map(|i| EncLayer {
                attn_ln: init.ln(&format!("enc.{i}.attn_ln"), d),
                attn: init.attn(&format!("enc.{i}.attn"), d),
                ff_ln: init.ln(&format!("enc.{i}.ff_ln"), d),
                ff: init.ff(&format!("enc.{i}.ff"), d, config.d_ff),
            })
            .collect();
        let enc_ln = init.ln("enc.ln", d);
        let dec = (0..config.dec_layers)
            .map(|i| DecLayer {
                self_ln: init.ln(&format!("dec.{i}.self_ln"), d),
                self_attn: init.attn(&format!("dec.{i}.self_attn"), d),
                cross_ln: init.ln(&format!("dec.{i}.cross_ln"), d),
                cross_attn: init.attn(&format!("dec.{i}.cross_attn"), d),
                ff_ln: init.ln(&format!("dec.{i}.ff_ln"), d),
                ff: init.ff(&format!("dec.{i}.ff"), d, config.d_ff),
            })
            .collect();
        let dec_ln = init.ln("dec.ln", d);
        let out_w = init.xavier("out.w", d, config.vocab_size);
        let out_b = init.constant("out.b", config.vocab_size, 0.0);
        let fusion = config.mode.uses_fusion().then(|| {
            let img = config.img_dim;
            FusionIdx {
                adapter_w: init.xavier("fusion.adapter.w", config.feature_dim, img),
                adapter_b: init.constant("fusion.adapter.b", img, 0.0),
                proj_w: init.xavier("fusion.proj.w", d + img, d),
                gate_w: init.xavier("fusion.gate.w", 2 * d + img, d),
                gate_b: init.constant("fusion.gate.b", d, 0.0),
            }
        });
        let layout = Layout {
            embed,
            enc,
            enc_ln,
            dec,
            dec_ln,
            out_w,
            out_b,
            fusion,
        };
        Ok(Self {
            positions: sinusoids(config.max_positions, d),
            config,
            params: store,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn has_fusion(&self) -> bool {
        self.layout.fusion.is_some()
    }

    /// Places all parameters on `g`.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var> {
        self.params.bind(g, requires_grad)
    }

    fn linear(&self, g: &mut Graph, p: &[Var], x: Var, w: usize, b: usize) -> Result<Var> {
        let y = g.matmul(x, p[w])?;
        g.add_row(y, p[b])
    }

    fn layer_norm(&self, g: &mut Graph, p: &[Var], x: Var, ln: &LnIdx) -> Result<Var> {
        let y = g.layer_norm(x, LN_EPS)?;
        let y = g.mul_row(y, p[ln.g])?;
        g.add_row(y, p[ln.b])
    }

    fn dropout(&self, g: &mut Graph, x: Var, rng: &mut Option<&mut Rng>) -> Result<Var> {
        let p = self.config.dropout;
        let Some(rng) = rng.as_deref_mut() else {
            return Ok(x);
        };
        if p <= 0.0 {
            return Ok(x);
        }
        let shape = g.value(x).shape().to_vec();
        let n: usize = shape.iter().product();
        let keep = 1.0 / (1.0 - p);
        let mask = (0..n)
            .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
            .collect();
        let m = g.input(Tensor::new(shape, mask)?);
        g.mul(x, m)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        g: &mut Graph,
        p: &[Var],
        query: Var,
        memory: Var,
        a: &AttnIdx,
        causal: bool,
        record: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let q = self.linear(g, p, query, a.wq, a.bq)?;
        let k = self.linear(g, p, memory, a.wk, a.bk)?;
        let v = self.linear(g, p, memory, a.wv, a.bv)?;
        let (nq, nk) = (g.value(q).rows(), g.value(k).rows());
        let mask = if causal {
            let mut m = vec![0.0; nq * nk];
            for i in 0..nq {
                for j in (i + 1)..nk {
                    m[i * nk + j] = MASKED;
                }
            }
            Some(g.input(Tensor::matrix(nq, nk, m)?))
        } else {
            None
        };
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        let mut probs_per_head = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let mut scores = g.scale(scores, scale)?;
            if let Some(m) = mask {
                scores = g.add(scores, m)?;
            }
            let probs = g.softmax(scores)?;
            probs_per_head.push(probs);
            outs.push(g.matmul(probs, vh)?);
        }
        if let Some(rec) = record {
            rec.extend(probs_per_head);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        self.linear(g, p, cat, a.wo, a.bo)
    }

    fn feed_forward(&self, g: &mut Graph, p: &[Var], x: Var, ff: &FfIdx) -> Result<Var> {
        let h = self.linear(g, p, x, ff.w1, ff.b1)?;
        let h = g.gelu(h)?;
        self.linear(g, p, h, ff.w2, ff.b2)
    }

    fn embed(&self, g: &mut Graph, p: &[Var], tokens: &[u32]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::input("empty token sequence"));
        }
        if tokens.len() > self.config.max_positions {
            return Err(Error::input(format!(
                "sequence of {} tokens exceeds max_positions {}",
                tokens.len(),
                self.config.max_positions
            )));
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let e = g.gather(p[self.layout.embed], &ids)?;
        let e = g.scale(e, (self.config.d_model as f64).sqrt())?;
        let d = self.config.d_model;
        let pos = Tensor::matrix(
            tokens.len(),
            d,
            self.positions.data()[..tokens.len() * d].to_vec(),
        )?;
        let pos = g.input(pos);
        g.add(e, pos)
    }

    fn encode_text_nodes(
        &self,
        g: &mut Graph,
        p: &[Var],
        tokens: &[u32],
        rng: &mut Option<&mut Rng>,
        mut record: Option<&mut AttnRecord>,
    ) -> Result<Var> {
        let mut x = self.embed(g, p, tokens)?;
        x = self.dropout(g, x, rng)?;
        for layer in &self.layout.enc {
            let h = self.layer_norm(g, p, x, &layer.attn_ln)?;
            let mut rec = Vec::new();
            let h = self.attention(g, p, h, h, &layer.attn, false, Some(&mut rec))?;
            if let Some(r) = record.as_deref_mut() {
                r.encoder_self.push(rec);
            }
            let h = self.dropout(g, h, rng)?;
            x = g.add(x, h)?;
            let h = self.layer_norm(g, p, x, &layer.ff_ln)?;
            let h = self.feed_forward(g, p, h, &layer.ff)?;
            let h = self.dropout(g, h, rng)?;
            x = g.add(x, h)?;
        }
        self.layer_norm(g, p, x, &self.layout.enc_ln)
    }

    /// Fuses an image node (1 × feature_dim) into `h_text`.
    ///
    /// Without an image, or for a model without a fusion layer, `h_out` is
    /// the very node `h_text`.
    pub fn fuse_nodes(
        &self,
        g: &mut Graph,
        p: &[Var],
        h_text: Var,
        image: Option<Var>,
    ) -> Result<EncoderNodes> {
        let passthrough = EncoderNodes {
            h_text,
            h_fused: None,
            lambda: None,
            gated: None,
            h_out: h_text,
        };
        let (Some(f), Some(img)) = (&self.layout.fusion, image) else {
            return Ok(passthrough);
        };
        if g.value(img).dims2() != (1, self.config.feature_dim) {
            return Err(Error::Dimension {
                op: "fuse",
                left: g.value(img).shape().to_vec(),
                right: vec![1, self.config.feature_dim],
            });
        }
        let n = g.value(h_text).rows();
        let h_img = self.linear(g, p, img, f.adapter_w, f.adapter_b)?;
        let h_img = g.broadcast_rows(h_img, n)?;
        let h_fused = g.concat_cols(&[h_text, h_img])?;
        let gate_in = g.concat_cols(&[h_text, h_fused])?;
        let lambda = self.linear(g, p, gate_in, f.gate_w, f.gate_b)?;
        let lambda = g.tanh(lambda)?;
        let projected = g.matmul(h_fused, p[f.proj_w])?;
        let gated = g.mul(lambda, projected)?;
        let h_out = g.add(h_text, gated)?;
        Ok(EncoderNodes {
            h_text,
            h_fused: Some(h_fused),
            lambda: Some(lambda),
            gated: Some(gated),
            h_out,
        })
    }

    fn image_node(&self, g: &mut Graph, image: Option<&[f64]>) -> Result<Option<Var>> {
        if self.layout.fusion.is_none() {
            return Ok(None);
        }
        image
            .map(|v| {
                if v.len() != self.config.feature_dim {
                    return Err(Error::Dimension {
                        op: "fuse",
                        left: vec![1, v.len()],
                        right: vec![1, self.config.feature_dim],
                    });
                }
                Ok(g.input(Tensor::row_vector(v.to_vec())?))
            })
            .transpose()
    }

    /// Encoder plus fusion on a caller-supplied graph.
    pub fn encode_nodes(
        &self,
        g: &mut Graph,
        p: &[Var],
        tokens: &[u32],
        image: Option<&[f64]>,
    ) -> Result<EncoderNodes> {
        let h_text = self.encode_text_nodes(g, p, tokens, &mut None, None)?;
        let img = self.image_node(g, image)?;
        self.fuse_nodes(g, p, h_text, img)
    }

    /// Text encoder output `H_text` (tokens × d_model).
    pub fn encode_text(&self, tokens: &[u32]) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let h = self.encode_text_nodes(&mut g, &p, tokens, &mut None, None)?;
        Ok(g.value(h).clone())
    }

    /// Applies the fusion layer to a given `H_text`.
    pub fn fuse(&self, h_text: &Tensor, image: Option<&[f64]>) -> Result<EncoderState> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let h = g.input(h_text.clone());
        let img = self.image_node(&mut g, image)?;
        let nodes = self.fuse_nodes(&mut g, &p, h, img)?;
        Ok(self.state_from_nodes(&g, &nodes))
    }

    /// `encode_text` followed by `fuse`.
    pub fn encoder_state(&self, tokens: &[u32], image: Option<&[f64]>) -> Result<EncoderState> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let nodes = self.encode_nodes(&mut g, &p, tokens, image)?;
        Ok(self.state_from_nodes(&g, &nodes))
    }

    fn state_from_nodes(&self, g: &Graph, n: &EncoderNodes) -> EncoderState {
        EncoderState {
            h_text: g.value(n.h_text).clone(),
            h_fused: n.h_fused.map(|v| g.value(v).clone()),
            lambda: n.lambda.map(|v| g.value(v).clone()),
            gated: n.gated.map(|v| g.value(v).clone()),
            h_out: g.value(n.h_out).clone(),
            indicator: u8::from(n.gated.is_some()),
        }
    }

    fn decode_nodes(
        &self,
        g: &mut Graph,
        p: &[Var],
        dec_in: &[u32],
        memory: Var,
        rng: &mut Option<&mut Rng>,
        mut record: Option<&mut AttnRecord>,
    ) -> Result<Var> {
        let mut x = self.embed(g, p, dec_in)?;
        x = self.dropout(g, x, rng)?;
        for layer in &self.layout.dec {
            let h = self.layer_norm(g, p, x, &layer.self_ln)?;
            let mut rec_self = Vec::new();
            let h = self.attention(g, p, h, h, &layer.self_attn, true, Some(&mut rec_self))?;
            let h = self.dropout(g, h, rng)?;
            x = g.add(x, h)?;
            let h = self.layer_norm(g, p, x, &layer.cross_ln)?;
            let mut rec_cross = Vec::new();
            let h = self.attention(g, p, h, memory, &layer.cross_attn, false, Some(&mut rec_cross))?;
            if let Some(r) = record.as_deref_mut() {
                r.decoder_self.push(rec_self);
                r.decoder_cross.push(rec_cross);
            }
            let h = self.dropout(g, h, rng)?;
            x = g.add(x, h)?;
            let h = self.layer_norm(g, p, x, &layer.ff_ln)?;
            let h = self.feed_forward(g, p, h, &layer.ff)?;
            let h = self.dropout(g, h, rng)?;
            x = g.add(x, h)?;
        }
        let x = self.layer_norm(g, p, x, &self.layout.dec_ln)?;
        self.linear(g, p, x, self.layout.out_w, self.layout.out_b)
    }

    /// Decoder input `[BOS] ++ target` and output `target ++ [EOS]`.
    pub fn shift_target(target: &[u32]) -> (Vec<u32>, Vec<u32>) {
        let mut dec_in = Vec::with_capacity(target.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(target);
        let mut dec_out = target.to_vec();
        dec_out.push(EOS);
        (dec_in, dec_out)
    }

    /// Logits (|target| + 1 rows) for one example, on a caller-supplied graph.
    /// `rng` enables dropout.
    pub fn logits_nodes(
        &self,
        g: &mut Graph,
        p: &[Var],
        ex: Seq2Seq<'_>,
        image: Option<Var>,
        mut rng: Option<&mut Rng>,
    ) -> Result<(Var, EncoderNodes)> {
        let h_text = self.encode_text_nodes(g, p, ex.source, &mut rng, None)?;
        let img = match image {
            Some(v) => Some(v),
            None => self.image_node(g, ex.image)?,
        };
        let enc = self.fuse_nodes(g, p, h_text, img)?;
        let (dec_in, _) = Self::shift_target(ex.target);
        let logits = self.decode_nodes(g, p, &dec_in, enc.h_out, &mut rng, None)?;
        Ok((logits, enc))
    }

    /// Summed label-smoothed cross-entropy of one example and the number of
    /// predicted tokens (|target| + 1, counting EOS).
    pub fn loss_nodes(
        &self,
        g: &mut Graph,
        p: &[Var],
        ex: Seq2Seq<'_>,
        rng: Option<&mut Rng>,
    ) -> Result<(Var, usize)> {
        let (logits, _) = self.logits_nodes(g, p, ex, None, rng)?;
        let (_, dec_out) = Self::shift_target(ex.target);
        let targets: Vec<Option<usize>> = dec_out.iter().map(|&t| Some(t as usize)).collect();
        let loss = g.cross_entropy(logits, &targets, self.config.label_smoothing)?;
        Ok((loss, dec_out.len()))
    }

    /// Logits for every row of a padded batch (rows follow the padded target
    /// length plus one for EOS).
    pub fn forward(&self, batch: &Batch) -> Result<Vec<Tensor>> {
        (0..batch.len())
            .map(|i| {
                let mut g = Graph::new();
                let p = self.bind(&mut g, false);
                let source = strip_pad(&batch.sources[i]);
                let ex = Seq2Seq {
                    source,
                    target: &batch.targets[i],
                    image: batch.images[i].as_deref(),
                };
                let (logits, _) = self.logits_nodes(&mut g, &p, ex, None, None)?;
                Ok(g.value(logits).clone())
            })
            .collect()
    }

    /// Mean label-smoothed cross-entropy over the non-PAD target tokens of a
    /// batch (EOS included).
    pub fn batch_loss(&self, batch: &Batch) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..batch.len() {
            let target = strip_pad(&batch.targets[i]);
            let mut g = Graph::new();
            let p = self.bind(&mut g, false);
            let ex = Seq2Seq {
                source: strip_pad(&batch.sources[i]),
                target,
                image: batch.images[i].as_deref(),
            };
            let (loss, n) = self.loss_nodes(&mut g, &p, ex, None)?;
            total += g.value(loss).item();
            count += n;
        }
        if count == 0 {
            return Err(Error::input("batch has no target tokens"));
        }
        Ok(total / count as f64)
    }

    /// Per-layer, per-head attention probabilities for a (possibly prompted)
    /// source and a target prefix.
    pub fn attention_weights(
        &self,
        source: &[u32],
        target: &[u32],
        image: Option<&[f64]>,
    ) -> Result<AttentionMaps> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let mut rec = AttnRecord::default();
        let h_text = self.encode_text_nodes(&mut g, &p, source, &mut None, Some(&mut rec))?;
        let img = self.image_node(&mut g, image)?;
        let enc = self.fuse_nodes(&mut g, &p, h_text, img)?;
        let (dec_in, _) = Self::shift_target(target);
        self.decode_nodes(&mut g, &p, &dec_in, enc.h_out, &mut None, Some(&mut rec))?;
        let grab = |layers: Vec<Vec<Var>>| -> Vec<Vec<Tensor>> {
            layers
                .into_iter()
                .map(|heads| heads.into_iter().map(|v| g.value(v).clone()).collect())
                .collect()
        };
        Ok(AttentionMaps {
            encoder_self: grab(rec.encoder_self),
            decoder_self: grab(rec.decoder_self),
            decoder_cross: grab(rec.decoder_cross),
        })
    }

    /// `source ++ [SEP] ++ prompt`, or `source` when the prompt is empty.
    pub fn prompted(source: &[u32], prompt: Option<&[u32]>) -> Vec<u32> {
        let mut s = source.to_vec();
        if let Some(p) = prompt.filter(|p| !p.is_empty()) {
            s.push(SEP);
            s.extend_from_slice(p);
        }
        s
    }
}
