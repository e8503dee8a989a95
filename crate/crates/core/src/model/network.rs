use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops::{
    cross_entropy, gemm, layer_norm, layer_norm_backward, linear, linear_backward, softmax_rows,
    softmax_rows_backward, View,
};
use super::params::{ParamStore, Tensor};
use super::posenc::{sinusoidal_1d, sinusoidal_2d};
use super::{ConvSpec, ModelConfig, ModelError};
use crate::codec::TokenId;
use crate::imaging::PageImage;

/// Encoder output: `height × width` cells of `dim` values, row-major by
/// cell, positional encoding included.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn cell(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }
}

#[derive(Debug, Clone)]
struct AttnIx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone)]
struct LayerIx {
    norm1: (usize, usize),
    self_attn: AttnIx,
    norm2: (usize, usize),
    cross: AttnIx,
    norm3: (usize, usize),
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct Indices {
    conv: Vec<usize>,
    start: usize,
    embedding: usize,
    layers: Vec<LayerIx>,
    norm: (usize, usize),
    pred_w: usize,
    pred_b: usize,
}

pub const EMBEDDING: &str = "dec.embedding";
pub const PREDICTION_WEIGHT: &str = "dec.prediction.weight";
pub const PREDICTION_BIAS: &str = "dec.prediction.bias";

/// Tensors whose rows/columns are indexed by token id.
pub fn is_token_indexed(name: &str) -> bool {
    matches!(name, EMBEDDING | PREDICTION_WEIGHT | PREDICTION_BIAS)
}

/// (name, shape, init bound) of every tensor, in storage order. A bound of
/// `None` marks layer-norm gains (ones) and offsets (zeros).
fn layout(cfg: &ModelConfig, vocab: usize) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.model_dim;
    let mut out = Vec::new();
    let mut cin = 1;
    for (i, c) in cfg.conv.iter().enumerate() {
        let fan_in = cin * c.kernel * c.kernel;
        let b = 1.0 / (fan_in as f64).sqrt();
        // no bias: a constant offset on blank paper swamps the attention scores
        out.push((
            format!("enc.conv{i}.weight"),
            vec![c.channels, cin, c.kernel, c.kernel],
            Init::Uniform(b),
        ));
        cin = c.channels;
    }
    let bd = 1.0 / (d as f64).sqrt();
    out.push(("dec.start".into(), vec![d], Init::Uniform(bd)));
    out.push((EMBEDDING.into(), vec![vocab, d], Init::Uniform(bd)));
    let norm = |out: &mut Vec<(String, Vec<usize>, Init)>, name: String| {
        out.push((format!("{name}.gamma"), vec![d], Init::Ones));
        out.push((format!("{name}.beta"), vec![d], Init::Zeros));
    };
    let dense =
        |out: &mut Vec<(String, Vec<usize>, Init)>, name: String, fin: usize, fout: usize| {
            let b = 1.0 / (fin as f64).sqrt();
            out.push((format!("{name}.weight"), vec![fin, fout], Init::Uniform(b)));
            out.push((format!("{name}.bias"), vec![fout], Init::Uniform(b)));
        };
    for l in 0..cfg.decoder_layers {
        let p = format!("dec.layer{l}");
        norm(&mut out, format!("{p}.norm1"));
        for m in ["q", "k", "v", "o"] {
            dense(&mut out, format!("{p}.self.{m}"), d, d);
        }
        norm(&mut out, format!("{p}.norm2"));
        for m in ["q", "k", "v", "o"] {
            dense(&mut out, format!("{p}.cross.{m}"), d, d);
        }
        norm(&mut out, format!("{p}.norm3"));
        dense(&mut out, format!("{p}.ffn1"), d, cfg.ffn_dim);
        dense(&mut out, format!("{p}.ffn2"), cfg.ffn_dim, d);
    }
    norm(&mut out, "dec.norm".into());
    dense(&mut out, "dec.prediction".into(), d, vocab);
    out
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform(f64),
    Ones,
    Zeros,
}

/// The encoder-decoder with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    cfg: ModelConfig,
    vocab: usize,
    params: ParamStore,
    ix: Indices,
}

impl PartialEq for Indices {
    fn eq(&self, _: &Self) -> bool {
        // derived from the parameter names, which are compared separately
        true
    }
}

fn resolve(cfg: &ModelConfig, vocab: usize, params: &ParamStore) -> Result<Indices, ModelError> {
    let mut idx = std::collections::HashMap::new();
    for (name, shape, _) in layout(cfg, vocab) {
        let i = params.expect(&name, &shape)?;
        idx.insert(name, i);
    }
    let g = |n: &str| idx[n];
    let attn = |p: &str| AttnIx {
        wq: g(&format!("{p}.q.weight")),
        bq: g(&format!("{p}.q.bias")),
        wk: g(&format!("{p}.k.weight")),
        bk: g(&format!("{p}.k.bias")),
        wv: g(&format!("{p}.v.weight")),
        bv: g(&format!("{p}.v.bias")),
        wo: g(&format!("{p}.o.weight")),
        bo: g(&format!("{p}.o.bias")),
    };
    let norm = |p: &str| (g(&format!("{p}.gamma")), g(&format!("{p}.beta")));
    Ok(Indices {
        conv: (0..cfg.conv.len())
            .map(|i| g(&format!("enc.conv{i}.weight")))
            .collect(),
        start: g("dec.start"),
        embedding: g(EMBEDDING),
        layers: (0..cfg.decoder_layers)
            .map(|l| {
                let p = format!("dec.layer{l}");
                LayerIx {
                    norm1: norm(&format!("{p}.norm1")),
                    self_attn: attn(&format!("{p}.self")),
                    norm2: norm(&format!("{p}.norm2")),
                    cross: attn(&format!("{p}.cross")),
                    norm3: norm(&format!("{p}.norm3")),
                    w1: g(&format!("{p}.ffn1.weight")),
                    b1: g(&format!("{p}.ffn1.bias")),
                    w2: g(&format!("{p}.ffn2.weight")),
                    b2: g(&format!("{p}.ffn2.bias")),
                }
            })
            .collect(),
        norm: norm("dec.norm"),
        pred_w: g(PREDICTION_WEIGHT),
        pred_b: g(PREDICTION_BIAS),
    })
}

struct ConvCache {
    col: Vec<f64>,
    in_shape: (usize, usize, usize),
    out_shape: (usize, usize, usize),
    /// Activated output, used for the ReLU derivative.
    out: Vec<f64>,
    relu: bool,
}

pub(crate) struct EncoderCache {
    convs: Vec<ConvCache>,
}

struct AttnCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
}

struct LayerCache {
    norm1: (Vec<f64>, Vec<f64>),
    y1: Vec<f64>,
    sa: AttnCache,
    drop1: Option<Vec<f64>>,
    norm2: (Vec<f64>, Vec<f64>),
    y2: Vec<f64>,
    ca: AttnCache,
    drop2: Option<Vec<f64>>,
    norm3: (Vec<f64>, Vec<f64>),
    y3: Vec<f64>,
    h: Vec<f64>,
    hdrop: Option<Vec<f64>>,
    hd: Vec<f64>,
    drop3: Option<Vec<f64>>,
}

pub(crate) struct DecoderCache {
    inputs: Vec<TokenId>,
    rows: usize,
    drop0: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
    norm: (Vec<f64>, Vec<f64>),
    z: Vec<f64>,
}

fn im2col(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    spec: &ConvSpec,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let k = spec.kernel;
    let pad = k / 2;
    let n = ho * wo;
    let mut col = vec![0.0; c * k * k * n];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ci * k + ki) * k + kj) * n;
                for oy in 0..ho {
                    let iy = (oy * spec.stride_y + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    let dst = &mut col[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * spec.stride_x + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(
    dcol: &[f64],
    (c, h, w): (usize, usize, usize),
    spec: &ConvSpec,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let k = spec.kernel;
    let pad = k / 2;
    let n = ho * wo;
    let mut dx = vec![0.0; c * h * w];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ci * k + ki) * k + kj) * n;
                for oy in 0..ho {
                    let iy = (oy * spec.stride_y + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * spec.stride_x + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[base + ix as usize] += dcol[row + oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn dropout_mask(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.gen_bool(p) { 0.0 } else { keep })
        .collect()
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Multi-head scaled dot-product attention of `t` queries over `s` keys.
/// Returns the concatenated head outputs and the attention weights
/// (`heads × t × s`).
fn attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    t: usize,
    s: usize,
    d: usize,
    heads: usize,
    causal: bool,
) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; heads * t * s];
    let mut ctx = vec![0.0; t * d];
    for h in 0..heads {
        let p = &mut probs[h * t * s..(h + 1) * t * s];
        let vq = View::cols(t, d, h * dh, dh);
        let vk = View::cols(s, d, h * dh, dh);
        gemm(scale, q, vq, k, vk.t(), 0.0, p, View::full(t, s));
        if causal {
            // query i sits at key position i + (s - t)
            for i in 0..t {
                for j in (i + s - t + 1)..s {
                    p[i * s + j] = f64::NEG_INFINITY;
                }
            }
        }
        softmax_rows(p, s);
        gemm(
            1.0,
            p,
            View::full(t, s),
            v,
            vk,
            0.0,
            &mut ctx,
            View::cols(t, d, h * dh, dh),
        );
    }
    (ctx, probs)
}

/// Returns (dq, dk, dv).
fn attention_backward(
    cache: &AttnCache,
    dctx: &[f64],
    t: usize,
    s: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; s * d];
    let mut dv = vec![0.0; s * d];
    let mut dp = vec![0.0; t * s];
    for h in 0..heads {
        let p = &cache.probs[h * t * s..(h + 1) * t * s];
        let vt = View::cols(t, d, h * dh, dh);
        let vs = View::cols(s, d, h * dh, dh);
        gemm(
            1.0,
            dctx,
            vt,
            &cache.v,
            vs.t(),
            0.0,
            &mut dp,
            View::full(t, s),
        );
        gemm(1.0, p, View::full(t, s).t(), dctx, vt, 0.0, &mut dv, vs);
        softmax_rows_backward(p, &mut dp, s);
        gemm(scale, &dp, View::full(t, s), &cache.k, vs, 0.0, &mut dq, vt);
        gemm(
            scale,
            &dp,
            View::full(t, s).t(),
            &cache.q,
            vt,
            0.0,
            &mut dk,
            vs,
        );
    }
    (dq, dk, dv)
}

impl Network {
    /// Fresh parameters: uniform ±1/√fan_in for weights and biases,
    /// ±1/√model_dim for the embedding and start vector, unit layer-norm gains.
    pub fn new<R: Rng + ?Sized>(
        cfg: &ModelConfig,
        vocab: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        if vocab == 0 {
            return Err(ModelError::Config("empty dictionary".into()));
        }
        let mut params = ParamStore::new();
        for (name, shape, init) in layout(cfg, vocab) {
            params.push(match init {
                Init::Uniform(b) => Tensor::uniform(name, shape, b, rng),
                Init::Ones => Tensor::filled(name, shape, 1.0),
                Init::Zeros => Tensor::zeros(name, shape),
            });
        }
        Self::from_params(cfg.clone(), vocab, params)
    }

    /// Wraps existing parameters, checking every expected tensor's shape.
    pub fn from_params(
        cfg: ModelConfig,
        vocab: usize,
        params: ParamStore,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let ix = resolve(&cfg, vocab, &params)?;
        let expected = layout(&cfg, vocab).len();
        if params.len() != expected {
            return Err(ModelError::Config(format!(
                "{} tensors present, {} expected",
                params.len(),
                expected
            )));
        }
        Ok(Self {
            cfg,
            vocab,
            params,
            ix,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    fn p(&self, i: usize) -> &[f64] {
        &self.params[i]
    }

    fn check_image(&self, img: &PageImage) -> Result<(), ModelError> {
        let (sy, sx) = self.cfg.total_stride();
        if img.height < sy || img.width < sx {
            return Err(ModelError::ImageTooSmall {
                height: img.height,
                width: img.width,
                stride_y: sy,
                stride_x: sx,
            });
        }
        Ok(())
    }

    pub(crate) fn encode_cached(
        &self,
        img: &PageImage,
    ) -> Result<(FeatureMap, EncoderCache), ModelError> {
        self.check_image(img)?;
        let mut x: Vec<f64> = img
            .pixels
            .iter()
            .map(|&p| if p < 128 { 1.0 } else { 0.0 })
            .collect();
        let mut shape = (1, img.height, img.width);
        let mut caches = Vec::with_capacity(self.cfg.conv.len());
        let last = self.cfg.conv.len() - 1;
        for (i, spec) in self.cfg.conv.iter().enumerate() {
            let (c, h, w) = shape;
            let ho = (h - 1) / spec.stride_y + 1;
            let wo = (w - 1) / spec.stride_x + 1;
            let col = im2col(&x, shape, spec, ho, wo);
            let wi = self.ix.conv[i];
            let kk = c * spec.kernel * spec.kernel;
            let n = ho * wo;
            let mut out = vec![0.0; spec.channels * n];
            gemm(
                1.0,
                self.p(wi),
                View::full(spec.channels, kk),
                &col,
                View::full(kk, n),
                0.0,
                &mut out,
                View::full(spec.channels, n),
            );
            let relu = i < last;
            if relu {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let out_shape = (spec.channels, ho, wo);
            caches.push(ConvCache {
                col,
                in_shape: shape,
                out_shape,
                out: if relu { out.clone() } else { Vec::new() },
                relu,
            });
            x = out;
            shape = out_shape;
        }
        let (d, gh, gw) = shape;
        let n = gh * gw;
        let mut data = sinusoidal_2d(gh, gw, d);
        for c in 0..d {
            for j in 0..n {
                data[j * d + c] += x[c * n + j];
            }
        }
        Ok((
            FeatureMap {
                height: gh,
                width: gw,
                dim: d,
                data,
            },
            EncoderCache { convs: caches },
        ))
    }

    /// Runs the encoder on a page as given (no resizing).
    pub fn encode_image(&self, img: &PageImage) -> Result<FeatureMap, ModelError> {
        self.encode_cached(img).map(|(f, _)| f)
    }

    pub(crate) fn encode_backward(
        &self,
        cache: &EncoderCache,
        dmem: &[f64],
        grads: &mut [Vec<f64>],
    ) {
        let (d, gh, gw) = cache.convs.last().expect("at least one conv").out_shape;
        let n = gh * gw;
        let mut dy = vec![0.0; d * n];
        for j in 0..n {
            for c in 0..d {
                dy[c * n + j] = dmem[j * d + c];
            }
        }
        for i in (0..cache.convs.len()).rev() {
            let cc = &cache.convs[i];
            let spec = &self.cfg.conv[i];
            if cc.relu {
                for (g, &o) in dy.iter_mut().zip(&cc.out) {
                    if o <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let (cout, ho, wo) = cc.out_shape;
            let n = ho * wo;
            let kk = cc.in_shape.0 * spec.kernel * spec.kernel;
            let wi = self.ix.conv[i];
            gemm(
                1.0,
                &dy,
                View::full(cout, n),
                &cc.col,
                View::full(kk, n).t(),
                1.0,
                &mut grads[wi],
                View::full(cout, kk),
            );
            if i > 0 {
                let mut dcol = vec![0.0; kk * n];
                gemm(
                    1.0,
                    self.p(wi),
                    View::full(cout, kk).t(),
                    &dy,
                    View::full(cout, n),
                    0.0,
                    &mut dcol,
                    View::full(kk, n),
                );
                dy = col2im(&dcol, cc.in_shape, spec, ho, wo);
            }
        }
    }

    fn embed(&self, inputs: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        let d = self.cfg.model_dim;
        let rows = inputs.len() + 1;
        let mut x = sinusoidal_1d(rows, d);
        add_into(&mut x[..d], self.p(self.ix.start));
        let scale = (d as f64).sqrt();
        let e = self.p(self.ix.embedding);
        for (r, &tok) in inputs.iter().enumerate() {
            if tok as usize >= self.vocab {
                return Err(ModelError::UnknownToken(tok));
            }
            let src = &e[tok as usize * d..(tok as usize + 1) * d];
            for (x, &v) in x[(r + 1) * d..(r + 2) * d].iter_mut().zip(src) {
                *x += v * scale;
            }
        }
        Ok(x)
    }

    fn attn_project(
        &self,
        a: &AttnIx,
        y: &[f64],
        rows: usize,
        kv: Option<(&[f64], usize)>,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.cfg.model_dim;
        let q = linear(y, rows, d, self.p(a.wq), self.p(a.bq));
        let (src, s) = kv.unwrap_or((y, rows));
        let k = linear(src, s, d, self.p(a.wk), self.p(a.bk));
        let v = linear(src, s, d, self.p(a.wv), self.p(a.bv));
        (q, k, v)
    }

    /// Teacher-forced decoder pass over `[start] + inputs`. With `rng`, dropout is active.
    pub(crate) fn decode_cached(
        &self,
        mem: &FeatureMap,
        inputs: &[TokenId],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<f64>, DecoderCache), ModelError> {
        let d = self.cfg.model_dim;
        let heads = self.cfg.attention_heads;
        let rows = inputs.len() + 1;
        let n = mem.cells();
        let p = self.cfg.dropout;
        let mut mask = |len: usize| -> Option<Vec<f64>> {
            match rng.as_deref_mut() {
                Some(r) if p > 0.0 => Some(dropout_mask(len, p, r)),
                _ => None,
            }
        };
        let mut x = self.embed(inputs)?;
        let drop0 = mask(x.len());
        apply_mask(&mut x, &drop0);
        let mut layers = Vec::with_capacity(self.ix.layers.len());
        for li in &self.ix.layers {
            let (y1, xh1, rs1) = layer_norm(&x, d, self.p(li.norm1.0), self.p(li.norm1.1));
            let (q, k, v) = self.attn_project(&li.self_attn, &y1, rows, None);
            let (ctx, probs) = attention(&q, &k, &v, rows, rows, d, heads, true);
            let mut o = linear(
                &ctx,
                rows,
                d,
                self.p(li.self_attn.wo),
                self.p(li.self_attn.bo),
            );
            let drop1 = mask(o.len());
            apply_mask(&mut o, &drop1);
            add_into(&mut x, &o);
            let sa = AttnCache {
                q,
                k,
                v,
                probs,
                ctx,
            };

            let (y2, xh2, rs2) = layer_norm(&x, d, self.p(li.norm2.0), self.p(li.norm2.1));
            let (q, k, v) = self.attn_project(&li.cross, &y2, rows, Some((&mem.data, n)));
            let (ctx, probs) = attention(&q, &k, &v, rows, n, d, heads, false);
            let mut o = linear(&ctx, rows, d, self.p(li.cross.wo), self.p(li.cross.bo));
            let drop2 = mask(o.len());
            apply_mask(&mut o, &drop2);
            add_into(&mut x, &o);
            let ca = AttnCache {
                q,
                k,
                v,
                probs,
                ctx,
            };

            let (y3, xh3, rs3) = layer_norm(&x, d, self.p(li.norm3.0), self.p(li.norm3.1));
            let f = self.cfg.ffn_dim;
            let mut h = linear(&y3, rows, d, self.p(li.w1), self.p(li.b1));
            h.iter_mut().for_each(|v| *v = v.max(0.0));
            let hdrop = mask(h.len());
            let mut hd = h.clone();
            apply_mask(&mut hd, &hdrop);
            let mut o = linear(&hd, rows, f, self.p(li.w2), self.p(li.b2));
            let drop3 = mask(o.len());
            apply_mask(&mut o, &drop3);
            add_into(&mut x, &o);
            layers.push(LayerCache {
                norm1: (xh1, rs1),
                y1,
                sa,
                drop1,
                norm2: (xh2, rs2),
                y2,
                ca,
                drop2,
                norm3: (xh3, rs3),
                y3,
                h,
                hdrop,
                hd,
                drop3,
            });
        }
        let (z, xhf, rsf) = layer_norm(&x, d, self.p(self.ix.norm.0), self.p(self.ix.norm.1));
        let logits = linear(&z, rows, d, self.p(self.ix.pred_w), self.p(self.ix.pred_b));
        Ok((
            logits,
            DecoderCache {
                inputs: inputs.to_vec(),
                rows,
                drop0,
                layers,
                norm: (xhf, rsf),
                z,
            },
        ))
    }

    /// Accumulates parameter gradients and returns d loss / d features.
    pub(crate) fn decode_backward(
        &self,
        mem: &FeatureMap,
        cache: &DecoderCache,
        dlogits: &[f64],
        grads: &mut [Vec<f64>],
    ) -> Vec<f64> {
        let d = self.cfg.model_dim;
        let f = self.cfg.ffn_dim;
        let heads = self.cfg.attention_heads;
        let rows = cache.rows;
        let n = mem.cells();
        let mut dmem = vec![0.0; n * d];

        let dz = linear_backward_split(
            grads,
            self.ix.pred_w,
            self.ix.pred_b,
            &cache.z,
            rows,
            d,
            self.p(self.ix.pred_w),
            dlogits,
        );
        let mut dx = {
            let (g, b) = two_mut(grads, self.ix.norm.0, self.ix.norm.1);
            layer_norm_backward(
                &cache.norm.0,
                &cache.norm.1,
                self.p(self.ix.norm.0),
                &dz,
                g,
                b,
            )
        };

        for (li, lc) in self.ix.layers.iter().zip(&cache.layers).rev() {
            // feed-forward
            let mut dout = dx.clone();
            apply_mask(&mut dout, &lc.drop3);
            let mut dh =
                linear_backward_split(grads, li.w2, li.b2, &lc.hd, rows, f, self.p(li.w2), &dout);
            apply_mask(&mut dh, &lc.hdrop);
            for (g, &h) in dh.iter_mut().zip(&lc.h) {
                if h <= 0.0 {
                    *g = 0.0;
                }
            }
            let dy3 =
                linear_backward_split(grads, li.w1, li.b1, &lc.y3, rows, d, self.p(li.w1), &dh);
            let dn = {
                let (g, b) = two_mut(grads, li.norm3.0, li.norm3.1);
                layer_norm_backward(&lc.norm3.0, &lc.norm3.1, self.p(li.norm3.0), &dy3, g, b)
            };
            add_into(&mut dx, &dn);

            // cross-attention
            let mut dout = dx.clone();
            apply_mask(&mut dout, &lc.drop2);
            let a = &li.cross;
            let dctx =
                linear_backward_split(grads, a.wo, a.bo, &lc.ca.ctx, rows, d, self.p(a.wo), &dout);
            let (dq, dk, dv) = attention_backward(&lc.ca, &dctx, rows, n, d, heads);
            let dy2 = linear_backward_split(grads, a.wq, a.bq, &lc.y2, rows, d, self.p(a.wq), &dq);
            let dm_k = linear_backward_split(grads, a.wk, a.bk, &mem.data, n, d, self.p(a.wk), &dk);
            let dm_v = linear_backward_split(grads, a.wv, a.bv, &mem.data, n, d, self.p(a.wv), &dv);
            add_into(&mut dmem, &dm_k);
            add_into(&mut dmem, &dm_v);
            let dn = {
                let (g, b) = two_mut(grads, li.norm2.0, li.norm2.1);
                layer_norm_backward(&lc.norm2.0, &lc.norm2.1, self.p(li.norm2.0), &dy2, g, b)
            };
            add_into(&mut dx, &dn);

            // self-attention
            let mut dout = dx.clone();
            apply_mask(&mut dout, &lc.drop1);
            let a = &li.self_attn;
            let dctx =
                linear_backward_split(grads, a.wo, a.bo, &lc.sa.ctx, rows, d, self.p(a.wo), &dout);
            let (dq, dk, dv) = attention_backward(&lc.sa, &dctx, rows, rows, d, heads);
            let mut dy1 =
                linear_backward_split(grads, a.wq, a.bq, &lc.y1, rows, d, self.p(a.wq), &dq);
            add_into(
                &mut dy1,
                &linear_backward_split(grads, a.wk, a.bk, &lc.y1, rows, d, self.p(a.wk), &dk),
            );
            add_into(
                &mut dy1,
                &linear_backward_split(grads, a.wv, a.bv, &lc.y1, rows, d, self.p(a.wv), &dv),
            );
            let dn = {
                let (g, b) = two_mut(grads, li.norm1.0, li.norm1.1);
                layer_norm_backward(&lc.norm1.0, &lc.norm1.1, self.p(li.norm1.0), &dy1, g, b)
            };
            add_into(&mut dx, &dn);
        }

        apply_mask(&mut dx, &cache.drop0);
        add_into(&mut grads[self.ix.start], &dx[..d]);
        let scale = (d as f64).sqrt();
        let de = &mut grads[self.ix.embedding];
        for (r, &tok) in cache.inputs.iter().enumerate() {
            let dst = &mut de[tok as usize * d..(tok as usize + 1) * d];
            for (g, &v) in dst.iter_mut().zip(&dx[(r + 1) * d..(r + 2) * d]) {
                *g += v * scale;
            }
        }
        dmem
    }

    /// Logits (`(prefix.len() + 1) × vocab`, row-major) for every position of
    /// the start state followed by `prefix`; row i predicts token i.
    pub fn decode_logits(
        &self,
        features: &FeatureMap,
        prefix: &[TokenId],
    ) -> Result<Vec<f64>, ModelError> {
        if prefix.len() >= self.cfg.max_sequence_length {
            return Err(ModelError::PrefixTooLong {
                len: prefix.len(),
                max: self.cfg.max_sequence_length,
            });
        }
        self.decode_cached(features, prefix, None).map(|(l, _)| l)
    }

    /// Loss of one sample and its gradients, accumulated into `grads`.
    ///
    /// `target` ends with EOT; `inputs` are the teacher-forced decoder inputs
    /// (`target` without its last token, possibly with label noise). The loss
    /// is the summed token cross-entropy divided by `norm`.
    pub fn loss_and_grads(
        &self,
        img: &PageImage,
        inputs: &[TokenId],
        target: &[TokenId],
        norm: f64,
        rng: Option<&mut ChaCha8Rng>,
        grads: &mut [Vec<f64>],
    ) -> Result<f64, ModelError> {
        assert_eq!(
            inputs.len() + 1,
            target.len(),
            "inputs must be the target shifted by one"
        );
        if let Some(&bad) = target.iter().find(|&&t| t as usize >= self.vocab) {
            return Err(ModelError::UnknownToken(bad));
        }
        let (mem, enc) = self.encode_cached(img)?;
        let (logits, dec) = self.decode_cached(&mem, inputs, rng)?;
        let (loss, dlogits) = cross_entropy(&logits, self.vocab, target, norm);
        let dmem = self.decode_backward(&mem, &dec, &dlogits, grads);
        self.encode_backward(&enc, &dmem, grads);
        Ok(loss)
    }

    /// Greedy decoding with cached keys and values. Stops after EOT or
    /// `max_len` tokens; ties go to the lowest token id.
    pub fn greedy(&self, features: &FeatureMap, eot: TokenId, max_len: usize) -> Vec<TokenId> {
        let d = self.cfg.model_dim;
        let heads = self.cfg.attention_heads;
        let n = features.cells();
        let pe = sinusoidal_1d(max_len.max(1), d);
        let cross: Vec<(Vec<f64>, Vec<f64>)> = self
            .ix
            .layers
            .iter()
            .map(|li| {
                let a = &li.cross;
                (
                    linear(&features.data, n, d, self.p(a.wk), self.p(a.bk)),
                    linear(&features.data, n, d, self.p(a.wv), self.p(a.bv)),
                )
            })
            .collect();
        let mut keys: Vec<Vec<f64>> = vec![Vec::new(); self.ix.layers.len()];
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); self.ix.layers.len()];
        let mut out = Vec::new();
        let scale = (d as f64).sqrt();
        while out.len() < max_len {
            let t = out.len();
            let mut x: Vec<f64> = pe[t * d..(t + 1) * d].to_vec();
            match out.last() {
                None => add_into(&mut x, self.p(self.ix.start)),
                Some(&tok) => {
                    let e = &self.p(self.ix.embedding)[tok as usize * d..(tok as usize + 1) * d];
                    for (x, &v) in x.iter_mut().zip(e) {
                        *x += v * scale;
                    }
                }
            }
            for (l, li) in self.ix.layers.iter().enumerate() {
                let (y, _, _) = layer_norm(&x, d, self.p(li.norm1.0), self.p(li.norm1.1));
                let a = &li.self_attn;
                let q = linear(&y, 1, d, self.p(a.wq), self.p(a.bq));
                keys[l].extend(linear(&y, 1, d, self.p(a.wk), self.p(a.bk)));
                values[l].extend(linear(&y, 1, d, self.p(a.wv), self.p(a.bv)));
                let (ctx, _) = attention(&q, &keys[l], &values[l], 1, t + 1, d, heads, false);
                add_into(&mut x, &linear(&ctx, 1, d, self.p(a.wo), self.p(a.bo)));

                let (y, _, _) = layer_norm(&x, d, self.p(li.norm2.0), self.p(li.norm2.1));
                let a = &li.cross;
                let q = linear(&y, 1, d, self.p(a.wq), self.p(a.bq));
                let (ctx, _) = attention(&q, &cross[l].0, &cross[l].1, 1, n, d, heads, false);
                add_into(&mut x, &linear(&ctx, 1, d, self.p(a.wo), self.p(a.bo)));

                let (y, _, _) = layer_norm(&x, d, self.p(li.norm3.0), self.p(li.norm3.1));
                let mut h = linear(&y, 1, d, self.p(li.w1), self.p(li.b1));
                h.iter_mut().for_each(|v| *v = v.max(0.0));
                add_into(
                    &mut x,
                    &linear(&h, 1, self.cfg.ffn_dim, self.p(li.w2), self.p(li.b2)),
                );
            }
            let (z, _, _) = layer_norm(&x, d, self.p(self.ix.norm.0), self.p(self.ix.norm.1));
            let logits = linear(&z, 1, d, self.p(self.ix.pred_w), self.p(self.ix.pred_b));
            let mut best = 0;
            for (i, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = i;
                }
            }
            out.push(best as TokenId);
            if best as TokenId == eot {
                break;
            }
        }
        out
    }
}

/// Two distinct mutable gradient buffers.
fn two_mut(grads: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = grads.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = grads.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

fn linear_backward_split(
    grads: &mut [Vec<f64>],
    wi: usize,
    bi: usize,
    x: &[f64],
    m: usize,
    k: usize,
    w: &[f64],
    dy: &[f64],
) -> Vec<f64> {
    let (dw, db) = two_mut(grads, wi, bi);
    linear_backward(x, m, k, w, dy, dw, db, true).expect("dx requested")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            conv: vec![
                ConvSpec {
                    channels: 4,
                    kernel: 3,
                    stride_y: 2,
                    stride_x: 2,
                },
                ConvSpec {
                    channels: 8,
                    kernel: 3,
                    stride_y: 2,
                    stride_x: 1,
                },
            ],
            decoder_layers: 2,
            model_dim: 8,
            attention_heads: 2,
            ffn_dim: 16,
            dropout: 0.0,
            max_sequence_length: 12,
            label_noise_prob: 0.0,
            input_height: 16,
        }
    }

    fn page(w: usize, h: usize, seed: u64) -> PageImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = PageImage::blank(w, h, 200);
        for p in &mut img.pixels {
            if rng.gen_bool(0.2) {
                *p = 0;
            }
        }
        img
    }

    #[test]
    fn blank_page_features_are_finite() {
        let net =
            Network::new(&ModelConfig::desk(), 30, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let f = net.encode_image(&PageImage::blank(96, 64, 200)).unwrap();
        assert_eq!((f.height, f.width, f.dim), (4, 16, 64));
        assert!(f.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn grid_doubles_with_width_and_small_images_fail() {
        let net = Network::new(&tiny(), 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let a = net.encode_image(&page(16, 16, 0)).unwrap();
        let b = net.encode_image(&page(32, 16, 0)).unwrap();
        assert_eq!((a.height, a.width), (4, 8));
        assert_eq!((b.height, b.width), (4, 16));
        assert!(matches!(
            net.encode_image(&page(1, 16, 0)),
            Err(ModelError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn causal_logits() {
        let net = Network::new(&tiny(), 10, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let f = net.encode_image(&page(24, 16, 1)).unwrap();
        let a = net.decode_logits(&f, &[1, 2, 3, 4, 5]).unwrap();
        for j in 0..5 {
            let mut prefix = vec![1, 2, 3, 4, 5];
            prefix[j] = 9;
            let b = net.decode_logits(&f, &prefix).unwrap();
            // row i depends on prefix[..i]; changing prefix[j] leaves rows ..=j intact
            assert_eq!(a[..(j + 1) * 10], b[..(j + 1) * 10]);
            assert_ne!(a[(j + 1) * 10..], b[(j + 1) * 10..]);
        }
        assert_eq!(net.decode_logits(&f, &[]).unwrap().len(), 10);
        assert!(matches!(
            net.decode_logits(&f, &[0; 12]),
            Err(ModelError::PrefixTooLong { .. })
        ));
    }

    #[test]
    fn greedy_matches_full_forward() {
        let net = Network::new(&tiny(), 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let f = net.encode_image(&page(24, 16, 4)).unwrap();
        let out = net.greedy(&f, 9, 8);
        assert!(out.len() == 8 || out.last() == Some(&9));
        for t in 0..out.len() {
            let logits = net.decode_logits(&f, &out[..t]).unwrap();
            let row = &logits[t * 10..(t + 1) * 10];
            let best = (0..10).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            assert_eq!(best as TokenId, out[t]);
        }
    }

    #[test]
    fn translation_by_one_stride_shifts_features() {
        let net = Network::new(&tiny(), 10, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let (sy, sx) = net.config().total_stride();
        let (w, h) = (40, 32);
        let mut a = PageImage::blank(w, h, 200);
        let mut b = PageImage::blank(w, h, 200);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for y in 8..20 {
            for x in 8..24 {
                if rng.gen_bool(0.5) {
                    a.set_ink(x, y);
                    b.set_ink(x + sx as i64, y + sy as i64);
                }
            }
        }
        let fa = net.encode_image(&a).unwrap();
        let fb = net.encode_image(&b).unwrap();
        let pe = sinusoidal_2d(fa.height, fa.width, fa.dim);
        for gy in 1..fa.height - 2 {
            for gx in 1..fa.width - 2 {
                for c in 0..fa.dim {
                    let va = fa.cell(gy, gx)[c] - pe[(gy * fa.width + gx) * fa.dim + c];
                    let i = ((gy + 1) * fa.width + gx + 1) * fa.dim + c;
                    let vb = fb.data[i] - pe[i];
                    assert!((va - vb).abs() < 1e-12, "cell ({gy},{gx}) channel {c}");
                }
            }
        }
    }
}
